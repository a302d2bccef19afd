"""Confusion matrices, threshold metrics, ROC/AUC, and report emission.

Metrics with a zero denominator are reported as None in code and as the
string "undefined" in emitted JSON, never silently zero. Classification
thresholds confusion counts at argmax of the two probabilities, i.e. 0.5
on the positive score. All emitted bytes are deterministic for a fixed
input: fixed float formatting, no timestamps, static SVG.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

METRIC_NAMES = ("sensitivity", "specificity", "precision", "f1", "accuracy")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError(f"confusion counts must be nonnegative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp, self.fn + other.fn, self.fp + other.fp, self.tn + other.tn
        )

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn}


@dataclass(frozen=True)
class ScoredPrediction:
    subject_id: str
    score: float  # positive-class probability
    label: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0,1], got {self.score}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


def confusion_from_predictions(preds) -> ConfusionMatrix:
    tp = fn = fp = tn = 0
    for p in preds:
        positive = p.score >= 0.5
        if p.label == 1:
            tp, fn = (tp + 1, fn) if positive else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if positive else (fp, tn + 1)
    return ConfusionMatrix(tp, fn, fp, tn)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def metrics(cm: ConfusionMatrix) -> dict[str, float | None]:
    """Threshold metrics as fractions in [0,1]; None where undefined."""
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    prec = _ratio(cm.tp, cm.tp + cm.fp)
    if sens is None or prec is None or (sens + prec) == 0:
        f1 = None
    else:
        f1 = 2 * sens * prec / (sens + prec)
    acc = _ratio(cm.tp + cm.tn, cm.total)
    return {"sensitivity": sens, "specificity": spec, "precision": prec, "f1": f1, "accuracy": acc}


def cumulative_confusion(cms) -> ConfusionMatrix:
    cms = list(cms)
    if not cms:
        raise ValueError("cumulative_confusion needs at least one fold")
    total = cms[0]
    for cm in cms[1:]:
        total = total + cm
    return total


def roc_curve(preds) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) points swept over the distinct scores, descending.

    Starts at (0,0) with an unreachable threshold; ties share one point.
    """
    preds = list(preds)
    n_pos = sum(1 for p in preds if p.label == 1)
    n_neg = len(preds) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs predictions from both classes")
    ordered = sorted(preds, key=lambda p: -p.score)
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    while i < len(ordered):
        thr = ordered[i].score
        while i < len(ordered) and ordered[i].score == thr:
            if ordered[i].label == 1:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_neg, tp / n_pos, thr))
    return points


def roc_auc(preds) -> tuple[float, list[tuple[float, float, float]]]:
    """Trapezoidal area under the ROC sweep, plus the curve points."""
    points = roc_curve(preds)
    auc = 0.0
    for (fpr0, tpr0, _), (fpr1, tpr1, _) in zip(points, points[1:]):
        auc += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0
    return auc, points


# ---------------------------------------------------------------------------
# report emission


def format_fraction(x: float | None) -> float | str:
    """Fraction -> percentage with two decimals, or the undefined token."""
    if x is None:
        return "undefined"
    return round(x * 100.0, 2)


def metrics_json_payload(cm: ConfusionMatrix, auc: float | None) -> dict:
    payload = {k: format_fraction(v) for k, v in metrics(cm).items()}
    payload["auc"] = format_fraction(auc)
    payload["counts"] = cm.as_dict()
    return payload


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_roc_csv(path, points) -> None:
    lines = ["fpr,tpr,threshold"]
    for fpr, tpr, thr in points:
        thr_txt = "inf" if thr == float("inf") else f"{thr:.6f}"
        lines.append(f"{fpr:.6f},{tpr:.6f},{thr_txt}")
    Path(path).write_text("\n".join(lines) + "\n")


_SVG_W, _SVG_H = 1000, 800
_MARGIN = 80


def _svg_header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{_SVG_W // 2}" y="40" text-anchor="middle" font-size="24">{title}</text>',
    ]


def _svg_axes(xlabel: str, ylabel: str) -> list[str]:
    x0, y0 = _MARGIN, _SVG_H - _MARGIN
    x1, y1 = _SVG_W - _MARGIN, _MARGIN
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) // 2}" y="{_SVG_H - 30}" text-anchor="middle" font-size="18">{xlabel}</text>',
        f'<text x="30" y="{(y0 + y1) // 2}" text-anchor="middle" font-size="18" '
        f'transform="rotate(-90 30 {(y0 + y1) // 2})">{ylabel}</text>',
    ]


def _polyline(xy, color: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in xy)
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'


def render_roc_svg(points, auc: float) -> str:
    x0, y0 = _MARGIN, _SVG_H - _MARGIN
    span_x, span_y = _SVG_W - 2 * _MARGIN, _SVG_H - 2 * _MARGIN
    xy = [(x0 + fpr * span_x, y0 - tpr * span_y) for fpr, tpr, _ in points]
    parts = _svg_header("ROC curve")
    parts += _svg_axes("False positive rate", "True positive rate")
    parts.append(_polyline([(x0, y0), (x0 + span_x, y0 - span_y)], "#bbbbbb"))
    parts.append(_polyline(xy, "#c0392b"))
    parts.append(
        f'<text x="{x0 + 40}" y="{_MARGIN + 30}" font-size="20">AUC = {auc * 100:.2f}%</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_loss_svg(train_loss, val_loss) -> str:
    n = len(train_loss)
    hi = max(max(train_loss), max(val_loss)) if n else 1.0
    hi = hi if hi > 0 else 1.0
    x0, y0 = _MARGIN, _SVG_H - _MARGIN
    span_x, span_y = _SVG_W - 2 * _MARGIN, _SVG_H - 2 * _MARGIN

    def curve(vals):
        if len(vals) == 1:
            return [(x0, y0 - vals[0] / hi * span_y), (x0 + span_x, y0 - vals[0] / hi * span_y)]
        return [
            (x0 + i / (len(vals) - 1) * span_x, y0 - v / hi * span_y) for i, v in enumerate(vals)
        ]

    parts = _svg_header("Training and validation loss")
    parts += _svg_axes("Epoch", "Loss")
    parts.append(_polyline(curve(train_loss), "#2980b9"))
    parts.append(_polyline(curve(val_loss), "#e67e22"))
    parts.append(f'<text x="{x0 + 40}" y="{_MARGIN + 30}" font-size="18" fill="#2980b9">train</text>')
    parts.append(f'<text x="{x0 + 40}" y="{_MARGIN + 55}" font-size="18" fill="#e67e22">validation</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(out_dir, cm: ConfusionMatrix, preds, extra: dict | None = None) -> dict[str, Path]:
    """Write metrics JSON, ROC CSV, and ROC SVG; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    auc, points = roc_auc(preds)
    payload = metrics_json_payload(cm, auc)
    if extra:
        payload.update(extra)
    paths = {
        "metrics": out_dir / "metrics.json",
        "roc_csv": out_dir / "roc.csv",
        "roc_svg": out_dir / "roc.svg",
    }
    write_json(paths["metrics"], payload)
    write_roc_csv(paths["roc_csv"], points)
    paths["roc_svg"].write_text(render_roc_svg(points, auc))
    return paths

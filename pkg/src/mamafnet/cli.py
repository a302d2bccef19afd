"""Command-line entry point.

Subcommands: ``synth`` (generate a synthetic cohort), ``cv`` (full k-fold
cross-validation with report emission), ``eval`` (score a saved
checkpoint on a fold split), ``gradcheck`` (finite-difference gradient
verification).

All state lives in flags plus an optional JSON config file; the
effective config is echoed into the run directory for replay. Exit
codes: 0 success, 1 usage/config, 2 data/io, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as datamod
from . import evaluation as ev
from . import model as modelmod
from . import nn
from . import training as trainmod
from .autodiff import NumericalError
from .errors import ConfigError, DataError
from .model import CheckpointError, ModelConfig
from .training import TrainConfig

DEFAULT_CONFIG = {
    # model (desk-scale defaults; full-resolution runs override these)
    "seq_len": 25,
    "input_hw": 32,
    "head_hidden": 64,
    "gate_mode": "motion",
    # training
    "epochs": 60,
    "lr": 1e-3,
    "batch_size": 2,
    "seed": 0,
    "augment": False,
    "target_per_class": 100,
    # protocol
    "k": 5,
    "val_fraction": 0.2,
    "threads": 1,
}


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def load_run_config(path: str | None, overrides: dict) -> dict:
    config = dict(DEFAULT_CONFIG)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        unknown = sorted(set(loaded) - set(DEFAULT_CONFIG))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        config.update(loaded)
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    return config


def split_config(config: dict) -> tuple[ModelConfig, TrainConfig]:
    model_cfg = ModelConfig(
        seq_len=int(config["seq_len"]),
        input_hw=int(config["input_hw"]),
        head_hidden=int(config["head_hidden"]),
        init_seed=int(config["seed"]),
        gate_mode=str(config["gate_mode"]),
    )
    train_cfg = TrainConfig(
        epochs=int(config["epochs"]),
        lr=float(config["lr"]),
        batch_size=int(config["batch_size"]),
        seed=int(config["seed"]),
        augment=bool(config["augment"]),
        target_per_class=int(config["target_per_class"]),
    )
    return model_cfg, train_cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    if args.pos < 1 or args.neg < 1:
        raise ConfigError(f"--pos and --neg must be >= 1, got {args.pos} and {args.neg}")
    manifest = datamod.generate_synthetic_cohort(
        args.out, n_pos=args.pos, n_neg=args.neg, n_frames=args.frames, hw=args.hw, seed=args.seed
    )
    pos, neg = manifest.class_counts()
    print(f"wrote {len(manifest.samples)} subjects ({pos} positive, {neg} negative) to {args.out}")
    return 0


def _fold_dir(out_dir: Path, fold: int) -> Path:
    return out_dir / f"fold{fold}"


def cmd_cv(args) -> int:
    overrides = {key: getattr(args, key, None) for key in DEFAULT_CONFIG}
    config = load_run_config(args.config, overrides)
    model_cfg, train_cfg = split_config(config)
    manifest = datamod.load_manifest(args.data)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ev.write_json(out_dir / "config.json", config)

    result = trainmod.run_cross_validation(
        manifest, model_cfg, train_cfg,
        k=int(config["k"]), val_fraction=float(config["val_fraction"]),
        threads=int(config["threads"]),
    )
    ev.write_json(out_dir / "folds.json", result.plan.to_json())

    fold_rows = []
    for fr in result.folds:
        fdir = _fold_dir(out_dir, fr.fold)
        fdir.mkdir(exist_ok=True)
        modelmod.save_checkpoint(fr.weights, fdir / "checkpoint.mamf")
        fr.log.write_csv(fdir / "train_log.csv")
        (fdir / "loss_curve.svg").write_text(ev.render_loss_svg(fr.log.train_loss, fr.log.val_loss))
        payload = ev.metrics_json_payload(fr.confusion, fr.auc)
        payload["fold"] = fr.fold
        payload["best_epoch"] = fr.log.best_epoch
        ev.write_json(fdir / "metrics.json", payload)
        fold_rows.append(payload)

    report = ev.metrics_json_payload(result.cumulative, result.pooled_auc)
    report["auc_per_fold"] = [ev.format_fraction(fr.auc) for fr in result.folds]
    report["auc_fold_mean"] = ev.format_fraction(
        float(np.mean([fr.auc for fr in result.folds]))
    )
    report["folds"] = fold_rows
    ev.write_json(out_dir / "report.json", report)
    ev.write_roc_csv(out_dir / "roc.csv", result.pooled_points)
    (out_dir / "roc.svg").write_text(ev.render_roc_svg(result.pooled_points, result.pooled_auc))

    printable = {k: v for k, v in report.items() if k not in ("folds",)}
    print(json.dumps(printable, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    weights = modelmod.load_checkpoint(args.checkpoint)
    manifest = datamod.load_manifest(args.data)

    folds_path = Path(args.folds) if args.folds else Path(args.checkpoint).parent.parent / "folds.json"
    try:
        plan = datamod.FoldPlan.from_json(json.loads(folds_path.read_text()))
    except OSError as exc:
        raise DataError(f"cannot read fold plan {folds_path}: {exc}") from exc

    known = {f"fold{i}" for i in range(plan.k)}
    if args.split not in known:
        raise ConfigError(f"unknown fold id {args.split!r} (expected one of {sorted(known)})")
    fold = plan.folds[int(args.split.removeprefix("fold"))]

    cfg = weights.config
    samples = datamod.load_samples(manifest, fold.test, cfg.seq_len, cfg.input_hw)
    preds = trainmod.predict(weights, samples)
    auc, _ = ev.roc_auc(preds)
    payload = ev.metrics_json_payload(ev.confusion_from_predictions(preds), auc)
    payload["fold"] = int(args.split.removeprefix("fold"))
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        ev.write_json(args.out, payload)
    return 0


def _gradcheck_layer(seed: int, grad_hook, sample_from=None) -> list[ad.GradCheckReport]:
    rng = np.random.default_rng(seed)
    reports = []

    def attention_loss(t, p):
        return ad.sum_all(t, nn.attention(t, p["tokens"]))

    reports.append(
        ad.gradcheck(
            attention_loss,
            {"tokens": rng.normal(size=(4, 3)).astype(np.float32)},
            eps=1e-4, tol=1e-3, n_samples=12, seed=seed, grad_hook=grad_hook,
        )
    )

    motion_params = nn.init_motion_aware(rng, "m", c=2)
    x = rng.normal(size=(5, 6, 6, 2)).astype(np.float32) * 0.5

    def motion_loss(t, p):
        data = t.leaf(x, name="input", needs_grad=False)
        return ad.sum_all(t, nn.motion_aware(t, p, "m", data))

    # eps small enough that the +-eps window rarely straddles a ReLU kink
    focus = sample_from if sample_from and sample_from[0] in motion_params else None
    reports.append(
        ad.gradcheck(motion_loss, motion_params, eps=1e-4, tol=1e-2, n_samples=16,
                     seed=seed, grad_hook=grad_hook, sample_from=focus)
    )
    return reports


def _gradcheck_model(seed: int, grad_hook, sample_from=None) -> list[ad.GradCheckReport]:
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(seq_len=25, input_hw=32, init_seed=seed)
    weights = modelmod.init_weights(cfg)
    views = [rng.random(size=(25, 32, 32, 3), dtype=np.float64).astype(np.float32) for _ in range(4)]
    target = np.array([[1.0, 0.0]], dtype=np.float32)

    def model_loss(t, p):
        probs = modelmod.forward_from_params(t, p, cfg, views)
        return nn.cross_entropy(t, ad.reshape(t, probs, (1, 2)), target)

    return [
        ad.gradcheck(model_loss, weights.values, eps=1e-3, tol=1e-2, n_samples=12,
                     seed=seed, grad_hook=grad_hook, sample_from=sample_from)
    ]


def cmd_gradcheck(args) -> int:
    grad_hook = None
    applied = []
    sample_from = None
    if args.inject_grad_fault:
        fault = args.inject_grad_fault
        sample_from = [fault]

        def grad_hook(analytic: dict) -> dict:
            if fault in analytic:
                analytic = dict(analytic)
                analytic[fault] = -analytic[fault]
                applied.append(fault)
            return analytic

    if args.scope == "layer":
        reports = _gradcheck_layer(args.seed, grad_hook, sample_from)
    else:
        reports = _gradcheck_model(args.seed, grad_hook, sample_from)
    if args.inject_grad_fault and not applied:
        raise ConfigError(f"--inject-grad-fault: no parameter named {args.inject_grad_fault!r}")
    ok = True
    for report in reports:
        print(report)
        ok = ok and report.passed
    if not ok:
        raise NumericalError("gradient check failed")
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mamafnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic cohort")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--pos", type=int, required=True, help="positive subjects")
    p.add_argument("--neg", type=int, required=True, help="negative subjects")
    p.add_argument("--frames", type=int, default=40, help="frames per view recording")
    p.add_argument("--hw", type=int, default=32, help="stored frame resolution")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cv", help="run k-fold cross-validation and emit reports")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--input-hw", dest="input_hw", type=int)
    p.add_argument("--head-hidden", dest="head_hidden", type=int)
    p.add_argument("--gate-mode", dest="gate_mode", choices=("motion", "identity"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--augment", action="store_const", const=True, default=None)
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False)
    p.add_argument("--target-per-class", dest="target_per_class", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a fold's test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--split", required=True, help="fold id, e.g. fold0")
    p.add_argument("--folds", help="fold plan JSON (default: next to the run's checkpoints)")
    p.add_argument("--out", help="also write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--scope", choices=("layer", "model"), default="layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-grad-fault", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

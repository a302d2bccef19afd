"""Dataset representation, synthetic cohort generation, and fold planning.

On-disk layout: one ``MVID`` file per view (magic, version, N/H/W/C as
little-endian u32, then raw 8-bit RGB frames) plus a JSON-lines manifest
whose first line is a header object (dataset name, resolution, creation
seed) followed by one object per subject.

A subject is four view recordings and a binary label. Positive subjects
(stroke and TIA, indistinguishable in label space) carry an optional
subtype tag in the manifest that nothing downstream reads.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

FRAME_MAGIC = b"MVID"
FRAME_VERSION = 1
N_VIEWS = 4

# rotation quarter-turns x flip, identity excluded: the draw pool for
# balancing augmentation (includes the pure flips)
NONIDENTITY_TRANSFORMS = tuple(
    (rot, flip) for rot in (0, 1, 2, 3) for flip in ("none", "h", "v") if (rot, flip) != (0, "none")
)

AUGMENT_OPS = ("rot90", "rot180", "rot270", "flip_h", "flip_v", "composition")


# ---------------------------------------------------------------------------
# frame files and manifests


def write_view_file(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3 or frames.dtype != np.uint8:
        raise DataError(f"view frames must be uint8 [T,H,W,3], got {frames.dtype} {frames.shape}")
    t, h, w, c = frames.shape
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<5I", FRAME_VERSION, t, h, w, c))
        fh.write(np.ascontiguousarray(frames).tobytes())


def read_view_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(24)
        if len(head) != 24 or head[:4] != FRAME_MAGIC:
            raise DataError(f"{path}: not a view file (bad or truncated header)")
        version, t, h, w, c = struct.unpack("<5I", head[4:])
        if version != FRAME_VERSION:
            raise DataError(f"{path}: view file version {version}, expected {FRAME_VERSION}")
        raw = fh.read(t * h * w * c)
        if len(raw) != t * h * w * c:
            raise DataError(f"{path}: truncated frame data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(t, h, w, c)


@dataclass(frozen=True)
class VideoSample:
    subject_id: str
    label: int
    views: tuple[str, ...]
    frame_counts: tuple[int, ...]
    subtype: str | None = None


@dataclass
class Manifest:
    name: str
    hw: int
    seed: int
    samples: list[VideoSample] = field(default_factory=list)
    root: Path = Path(".")

    def validate(self) -> None:
        ids = [s.subject_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("manifest contains duplicate subject ids")
        labels = {s.label for s in self.samples}
        for s in self.samples:
            if s.label not in (0, 1):
                raise DataError(f"subject {s.subject_id}: label must be 0 or 1, got {s.label}")
            if len(s.views) != N_VIEWS:
                raise DataError(f"subject {s.subject_id}: expected {N_VIEWS} views, got {len(s.views)}")
        if labels != {0, 1}:
            raise DataError("manifest must contain at least one subject of each class")

    def by_id(self) -> dict[str, VideoSample]:
        return {s.subject_id: s for s in self.samples}

    def class_counts(self) -> tuple[int, int]:
        pos = sum(1 for s in self.samples if s.label == 1)
        return pos, len(self.samples) - pos


def save_manifest(manifest: Manifest, path) -> None:
    with open(path, "w") as fh:
        header = {"dataset": manifest.name, "hw": manifest.hw, "seed": manifest.seed}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in manifest.samples:
            row = {
                "subject_id": s.subject_id,
                "label": s.label,
                "views": list(s.views),
                "frame_counts": list(s.frame_counts),
            }
            if s.subtype is not None:
                row["subtype"] = s.subtype
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        samples = []
        for line in lines[1:]:
            if not line.strip():
                continue
            row = json.loads(line)
            samples.append(
                VideoSample(
                    subject_id=row["subject_id"],
                    label=int(row["label"]),
                    views=tuple(row["views"]),
                    frame_counts=tuple(int(n) for n in row["frame_counts"]),
                    subtype=row.get("subtype"),
                )
            )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed manifest: {exc}") from exc
    manifest = Manifest(
        name=header.get("dataset", "unnamed"),
        hw=int(header.get("hw", 0)),
        seed=int(header.get("seed", 0)),
        samples=samples,
        root=path.parent,
    )
    manifest.validate()
    return manifest


# ---------------------------------------------------------------------------
# frame sampling, resizing, augmentation


def sample_frames(frames: np.ndarray, n: int) -> np.ndarray:
    """Pick n equally spaced frames: index i maps to floor(i*T/n).

    Sequences shorter than n are oversampled by the same formula.
    """
    t = frames.shape[0]
    if t < 1:
        raise DataError("cannot sample frames from an empty video")
    if n < 1:
        raise DataError(f"target frame count must be >= 1, got {n}")
    idx = (np.arange(n) * t) // n
    return frames[idx]


def resize_bilinear(frame: np.ndarray, out_hw: int | tuple[int, int]) -> np.ndarray:
    """Bilinear resize of one [H,W,C] frame (half-pixel centers convention)."""
    if isinstance(out_hw, int):
        out_hw = (out_hw, out_hw)
    oh, ow = out_hw
    frame = np.asarray(frame, dtype=np.float32)
    h, w = frame.shape[0], frame.shape[1]
    if h == oh and w == ow:
        return frame.copy()

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(np.float32)
        return lo, hi, frac

    ylo, yhi, yf = axis_coords(h, oh)
    xlo, xhi, xf = axis_coords(w, ow)
    yf = yf[:, None, None]
    xf = xf[None, :, None]
    top = frame[ylo][:, xlo] * (1 - xf) + frame[ylo][:, xhi] * xf
    bot = frame[yhi][:, xlo] * (1 - xf) + frame[yhi][:, xhi] * xf
    return top * (1 - yf) + bot * yf


def resize_sequence(frames: np.ndarray, out_hw: int) -> np.ndarray:
    if frames.shape[1] == out_hw and frames.shape[2] == out_hw:
        return np.asarray(frames, dtype=np.float32)
    return np.stack([resize_bilinear(f, out_hw) for f in frames])


def apply_transform(seq: np.ndarray, rot: int, flip: str) -> np.ndarray:
    """Apply a quarter-turn rotation then an optional flip to every frame.

    The rot90 convention is fixed so that [[a,b],[c,d]] becomes
    [[c,a],[d,b]]; rot is the number of quarter turns in that direction.
    Odd quarter turns transpose H and W, so they require square frames.
    """
    if rot % 2 and seq.shape[1] != seq.shape[2]:
        raise DataError(f"quarter-turn rotations need square frames, got {seq.shape[1]}x{seq.shape[2]}")
    out = seq
    if rot % 4:
        out = np.rot90(out, k=-(rot % 4), axes=(1, 2))
    if flip == "h":
        out = out[:, :, ::-1]
    elif flip == "v":
        out = out[:, ::-1, :]
    elif flip != "none":
        raise DataError(f"unknown flip {flip!r}")
    return np.ascontiguousarray(out)


def augment(seq: np.ndarray, op: str, seed: int = 0) -> np.ndarray:
    """One named spatial transform applied to a whole sequence.

    ``composition`` draws uniformly from the 11 non-identity
    rotation/flip combinations, deterministically from the seed.
    """
    if op == "composition":
        rng = np.random.default_rng(seed)
        rot, flip = NONIDENTITY_TRANSFORMS[rng.integers(len(NONIDENTITY_TRANSFORMS))]
        return apply_transform(seq, rot, flip)
    table = {"rot90": (1, "none"), "rot180": (2, "none"), "rot270": (3, "none"),
             "flip_h": (0, "h"), "flip_v": (0, "v")}
    if op not in table:
        raise DataError(f"unknown augmentation {op!r} (expected one of {AUGMENT_OPS})")
    return apply_transform(seq, *table[op])


@dataclass
class LoadedSample:
    """A subject's views loaded to float32 [0,1] at model resolution."""

    subject_id: str
    label: int
    views: list[np.ndarray]


def balance_augment(train: list[LoadedSample], target_per_class: int = 100, seed: int = 0) -> list[LoadedSample]:
    """Append augmented copies until each class reaches target_per_class.

    Classes at or above the target are left untouched. Each copy applies
    one transform, drawn uniformly from the 11 non-identity combinations,
    to all four views of a source subject. Copies get '#augN' ids so
    leakage scans can trace them to their source subject.
    """
    by_class = {0: [s for s in train if s.label == 0], 1: [s for s in train if s.label == 1]}
    if not by_class[0] or not by_class[1]:
        raise DataError("balance_augment needs at least one subject of each class")
    rng = np.random.default_rng(seed)
    out = list(train)
    for label in (0, 1):
        pool = by_class[label]
        needed = target_per_class - len(pool)
        for i in range(max(needed, 0)):
            src = pool[int(rng.integers(len(pool)))]
            rot, flip = NONIDENTITY_TRANSFORMS[int(rng.integers(len(NONIDENTITY_TRANSFORMS)))]
            out.append(
                LoadedSample(
                    subject_id=f"{src.subject_id}#aug{i}",
                    label=label,
                    views=[apply_transform(v, rot, flip) for v in src.views],
                )
            )
    return out


# ---------------------------------------------------------------------------
# fold planning


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: tuple[Fold, ...]

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "folds": [
                {"train": list(f.train), "val": list(f.val), "test": list(f.test)}
                for f in self.folds
            ],
        }

    @staticmethod
    def from_json(obj: dict) -> "FoldPlan":
        return FoldPlan(
            k=int(obj["k"]),
            seed=int(obj["seed"]),
            folds=tuple(
                Fold(tuple(f["train"]), tuple(f["val"]), tuple(f["test"]))
                for f in obj["folds"]
            ),
        )


def plan_folds(manifest: Manifest, k: int = 5, val_fraction: float = 0.2, seed: int = 0) -> FoldPlan:
    """Patient-wise stratified k-fold split with an inner train/val split.

    Test folds partition the cohort with per-class sizes within one
    subject of each other; the remaining subjects are split per class
    into train and validation at val_fraction.
    """
    manifest.validate()
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for s in manifest.samples:
        by_class[s.label].append(s.subject_id)
    for label, ids in by_class.items():
        if len(ids) < k:
            raise DataError(f"class {label} has {len(ids)} subjects, fewer than k={k}")

    # round-robin per class with a rotating start so the leftover subjects
    # of different classes land on different folds, keeping fold totals
    # within one of each other as well as the per-class counts
    test_sets: list[list[str]] = [[] for _ in range(k)]
    start = 0
    for label in (1, 0):
        ids = sorted(by_class[label])
        rng.shuffle(ids)
        for i, sid in enumerate(ids):
            test_sets[(start + i) % k].append(sid)
        start += len(ids) % k

    folds = []
    for f in range(k):
        test = set(test_sets[f])
        train, val = [], []
        for label in (1, 0):
            rest = sorted(sid for sid in by_class[label] if sid not in test)
            rng.shuffle(rest)
            n_val = min(len(rest) - 1, max(1, int(len(rest) * val_fraction + 0.5))) if len(rest) > 1 else 0
            val.extend(rest[:n_val])
            train.extend(rest[n_val:])
        folds.append(Fold(train=tuple(sorted(train)), val=tuple(sorted(val)), test=tuple(sorted(test))))
    return FoldPlan(k=k, seed=seed, folds=tuple(folds))


# ---------------------------------------------------------------------------
# synthetic cohort generation


def _render_blob_frame(h, w, cy_l, cy_r, cx_l, cx_r, radius, intensity_l, intensity_r, background):
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    left = intensity_l * np.exp(-(((yy - cy_l) ** 2) + (xx - cx_l) ** 2) / (2 * radius**2))
    right = intensity_r * np.exp(-(((yy - cy_r) ** 2) + (xx - cx_r) ** 2) / (2 * radius**2))
    return background + left + right


def _render_view(rng, hw, n_frames, deficit_side, amp_scale, phase_lag):
    """One view: two blobs oscillating vertically in mirror phase.

    A deficit attenuates and lags one side's motion; the blob itself stays
    visible so the classes differ in motion, not appearance. Per-subject
    jitter (phase, brightness, blob size) is kept narrow relative to the
    deficit attenuation so the class signal dominates nuisance variation.
    """
    h = w = hw
    base_y = h * rng.uniform(0.46, 0.54)
    amp = h * rng.uniform(0.19, 0.22)
    radius = h * rng.uniform(0.11, 0.13)
    cycles = rng.uniform(2.0, 3.0)
    phase = rng.uniform(0, 2 * math.pi)
    brightness = rng.uniform(0.80, 0.92)
    background = rng.uniform(0.07, 0.10)
    cx_l, cx_r = w * 0.27, w * 0.73
    noise_sigma = 0.01

    frames = np.empty((n_frames, h, w, 3), dtype=np.uint8)
    for i in range(n_frames):
        theta = 2 * math.pi * cycles * i / n_frames + phase
        off_l = amp * math.sin(theta)
        off_r = amp * math.sin(theta)
        if deficit_side == "left":
            off_l = amp_scale * amp * math.sin(theta - phase_lag)
        elif deficit_side == "right":
            off_r = amp_scale * amp * math.sin(theta - phase_lag)
        img = _render_blob_frame(
            h, w, base_y + off_l, base_y + off_r, cx_l, cx_r, radius, brightness, brightness, background
        )
        img = img[..., None] * np.array([1.0, 0.92, 0.85])
        img = img + rng.normal(0, noise_sigma, size=img.shape)
        frames[i] = np.clip(img * 255.0, 0, 255).astype(np.uint8)
    return frames


def generate_synthetic_cohort(out_dir, n_pos: int, n_neg: int, n_frames: int, hw: int, seed: int = 0) -> Manifest:
    """Write a deterministic synthetic cohort and its manifest to out_dir.

    Negative subjects move both blobs in mirror phase; positive subjects
    attenuate and lag one (seeded) side, so inter-side temporal-difference
    energy is strictly lower on the deficit side.
    """
    if n_pos < 1 or n_neg < 1:
        raise DataError(f"need at least one subject per class, got pos={n_pos}, neg={n_neg}")
    if hw < 8 or n_frames < 2:
        raise DataError(f"invalid dimensions: hw={hw}, frames={n_frames}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "views").mkdir(exist_ok=True)

    samples = []
    labels = [1] * n_pos + [0] * n_neg
    for idx, label in enumerate(labels):
        rng = np.random.default_rng(np.random.SeedSequence((seed, idx)))
        sid = f"subj{idx:04d}"
        if label == 1:
            deficit_side = "left" if rng.random() < 0.5 else "right"
            amp_scale = rng.uniform(0.0, 0.2)
            phase_lag = rng.uniform(0.3, 1.2)
            subtype = "tia" if rng.random() < 0.12 else "stroke"
        else:
            deficit_side, amp_scale, phase_lag, subtype = "none", 1.0, 0.0, None
        paths = []
        counts = []
        for view in range(N_VIEWS):
            frames = _render_view(rng, hw, n_frames, deficit_side, amp_scale, phase_lag)
            rel = f"views/{sid}_view{view}.mvid"
            write_view_file(out_dir / rel, frames)
            paths.append(rel)
            counts.append(n_frames)
        samples.append(
            VideoSample(subject_id=sid, label=label, views=tuple(paths),
                        frame_counts=tuple(counts), subtype=subtype)
        )

    manifest = Manifest(name="synthetic-bilateral-motion", hw=hw, seed=seed, samples=samples, root=out_dir)
    manifest.validate()
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def load_subject_views(manifest: Manifest, sample: VideoSample, seq_len: int, hw: int) -> list[np.ndarray]:
    """Read, subsample, resize, and scale one subject's views to [0,1] float32."""
    views = []
    for rel in sample.views:
        frames = read_view_file(manifest.root / rel)
        frames = sample_frames(frames, seq_len)
        seq = frames.astype(np.float32) / 255.0
        views.append(resize_sequence(seq, hw))
    return views


def load_samples(manifest: Manifest, subject_ids, seq_len: int, hw: int) -> list[LoadedSample]:
    index = manifest.by_id()
    loaded = []
    for sid in subject_ids:
        if sid not in index:
            raise DataError(f"unknown subject id {sid!r}")
        s = index[sid]
        loaded.append(LoadedSample(subject_id=sid, label=s.label,
                                   views=load_subject_views(manifest, s, seq_len, hw)))
    return loaded

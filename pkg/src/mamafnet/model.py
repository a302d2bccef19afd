"""Model assembly: four view branches, fusion, temporal block, and head.

Weights are a flat ``{name: float32 array}`` dict plus the config that
shaped them. Checkpoints are a single binary container: magic ``MAMF``,
format version, canonical-JSON config, then length-prefixed named
parameter records (little-endian float32), so a save/load round trip is
bit exact.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tape
from .errors import ConfigError

CHECKPOINT_MAGIC = b"MAMF"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 25
    input_hw: int = 32
    channels: int = 3
    n_views: int = 4
    head_hidden: int = 64
    init_seed: int = 0
    gate_mode: str = "motion"

    def __post_init__(self):
        if self.seq_len < 25 or self.seq_len % 25 != 0:
            raise ConfigError(f"seq_len must be a positive multiple of 25, got {self.seq_len}")
        if self.input_hw < 16 or self.input_hw % 16 != 0:
            raise ConfigError(f"input_hw must be a positive multiple of 16, got {self.input_hw}")
        if self.n_views != 4:
            raise ConfigError(f"the model takes exactly 4 views, got {self.n_views}")
        if self.gate_mode not in ("motion", "identity"):
            raise ConfigError(f"gate_mode must be 'motion' or 'identity', got {self.gate_mode!r}")

    @property
    def branch_hw(self) -> int:
        return self.input_hw // 16

    @property
    def feature_shape(self) -> tuple[int, int, int, int]:
        s = math.ceil(self.branch_hw / 2)
        return (self.seq_len // 25, s, s, nn.CONV3D_FILTERS)

    @property
    def flat_features(self) -> int:
        return math.prod(self.feature_shape)


def init_weights(config: ModelConfig) -> "ModelWeights":
    rng = np.random.default_rng(config.init_seed)
    values: dict[str, np.ndarray] = {}
    for i in range(config.n_views):
        values.update(nn.init_conv2d_block(rng, f"branch{i}", config.channels))
        values.update(nn.init_motion_aware(rng, f"branch{i}.motion"))
    values.update(nn.init_conv3d_block(rng, "temporal"))
    values.update(nn.init_dense_head(rng, "head", config.flat_features, config.head_hidden))
    return ModelWeights(values=values, config=config)


def parameter_count(config: ModelConfig) -> int:
    return sum(v.size for v in init_weights(config).values.values())


@dataclass
class ModelWeights:
    values: dict[str, np.ndarray]
    config: ModelConfig

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: v.copy() for k, v in self.values.items()}, self.config)

    def as_nodes(self, tape: Tape) -> dict[str, ad.Node]:
        return {k: tape.leaf(v, name=k) for k, v in self.values.items()}


def _check_views(config: ModelConfig, views) -> list[np.ndarray]:
    views = list(views)
    if len(views) != config.n_views:
        raise ValueError(f"expected {config.n_views} views, got {len(views)}")
    expect = (config.seq_len, config.input_hw, config.input_hw, config.channels)
    arrays = []
    for i, v in enumerate(views):
        v = np.asarray(v, dtype=np.float32)
        if v.shape != expect:
            raise ValueError(f"view {i} has shape {v.shape}, expected {expect}")
        arrays.append(v)
    return arrays


def forward_nodes(tape: Tape, weights: ModelWeights, views) -> ad.Node:
    """Tape-recorded forward pass for one subject; returns the (2,) probabilities."""
    arrays = _check_views(weights.config, views)
    return forward_from_params(tape, weights.as_nodes(tape), weights.config, arrays)


def forward_from_params(tape: Tape, params: dict[str, ad.Node], cfg: ModelConfig, arrays) -> ad.Node:
    branches = []
    for i, arr in enumerate(arrays):
        x = tape.leaf(arr, name=f"view{i}", needs_grad=False)
        feat = nn.conv2d_block(tape, params, f"branch{i}", x)
        feat = nn.motion_aware(tape, params, f"branch{i}.motion", feat, cfg.gate_mode)
        branches.append(feat)
    fused = nn.multi_attention_fusion(tape, branches)
    vol = nn.conv3d_block(tape, params, "temporal", fused)
    return nn.dense_head(tape, params, "head", ad.flatten(tape, vol))


def forward(weights: ModelWeights, views) -> np.ndarray:
    """Inference-only forward pass; returns class probabilities of shape (2,)."""
    return forward_nodes(Tape(record=False), weights, views).value


def forward_batch(weights: ModelWeights, subjects) -> np.ndarray:
    """Stack per-subject forward passes into shape (B, 2)."""
    return np.stack([forward(weights, views) for views in subjects])


# ---------------------------------------------------------------------------
# checkpoint io


def _config_json(config: ModelConfig) -> str:
    return json.dumps(asdict(config), sort_keys=True, separators=(",", ":"))


def save_checkpoint(weights: ModelWeights, path) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg = _config_json(weights.config).encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(weights.values)))
    for name in sorted(weights.values):
        arr = np.ascontiguousarray(weights.values[name], dtype="<f4")
        encoded = name.encode()
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CorruptCheckpointError(f"checkpoint truncated while reading {what}")
    return data


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> ModelWeights:
    """Load a checkpoint; optionally require that it matches a run config."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise CorruptCheckpointError(f"{path}: not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}"
            )
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            cfg_fields = json.loads(_read_exact(fh, cfg_len, "config"))
            config = ModelConfig(**cfg_fields)
        except (ValueError, TypeError) as exc:
            raise CorruptCheckpointError(f"{path}: unreadable embedded config: {exc}") from exc
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        values: dict[str, np.ndarray] = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode()
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
            count = math.prod(shape)
            raw = _read_exact(fh, 4 * count, f"data of {name!r}")
            values[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise CorruptCheckpointError(f"{path}: trailing bytes after parameter records")

    reference = init_weights(config)
    expected_shapes = {k: v.shape for k, v in reference.values.items()}
    actual_shapes = {k: v.shape for k, v in values.items()}
    if expected_shapes != actual_shapes:
        missing = sorted(set(expected_shapes) - set(actual_shapes))
        extra = sorted(set(actual_shapes) - set(expected_shapes))
        wrong = sorted(
            k for k in set(expected_shapes) & set(actual_shapes)
            if expected_shapes[k] != actual_shapes[k]
        )
        raise CheckpointConfigError(
            f"{path}: parameters do not match the embedded config "
            f"(missing={missing}, unexpected={extra}, wrong-shape={wrong})"
        )
    if expect_config is not None and config != expect_config:
        raise CheckpointConfigError(
            f"{path}: checkpoint config {config} does not match the requested config {expect_config}"
        )
    return ModelWeights(values=values, config=config)

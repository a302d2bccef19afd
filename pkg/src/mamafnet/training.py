"""Training loop and the cross-validation driver.

Per epoch: seeded shuffle, minibatch forward + cross-entropy + backward +
Adam, then a validation pass; the returned weights are the snapshot at
the global minimum of validation loss (earliest epoch on ties). The CV
driver trains one model per fold, optionally balancing the training set
with augmented copies (validation and test stay untouched), evaluates
each best model on its test fold, and pools folds into a cumulative
confusion matrix and a pooled ROC.

Folds are independent (seeded as seed + fold index) and can run in
worker processes when ``threads > 1``; the default of 1 keeps a run
bit-reproducible on one box.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import data as datamod
from . import evaluation as ev
from . import model as modelmod
from . import nn
from .autodiff import NumericalError, Tape
from .data import FoldPlan, LoadedSample, Manifest
from .errors import ConfigError
from .evaluation import ConfusionMatrix, ScoredPrediction
from .model import ModelConfig, ModelWeights


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-5
    batch_size: int = 2
    seed: int = 0
    augment: bool = False
    target_per_class: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        # argmin with earliest-epoch tie break
        return int(np.argmin(self.val_loss))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
                writer.writerow([i, f"{tr:.6f}", f"{va:.6f}"])


def _one_hot(label: int) -> np.ndarray:
    target = np.zeros((1, 2), dtype=np.float32)
    target[0, 1 if label == 1 else 0] = 1.0
    return target


def _batch_loss(tape: Tape, params, cfg: ModelConfig, batch: list[LoadedSample]):
    losses = []
    for sample in batch:
        probs = modelmod.forward_from_params(tape, params, cfg, sample.views)
        pred = ad.reshape(tape, probs, (1, 2))
        losses.append(nn.cross_entropy(tape, pred, _one_hot(sample.label)))
    total = losses[0]
    for extra in losses[1:]:
        total = ad.add(tape, total, extra)
    return ad.scale(tape, total, 1.0 / len(batch))


def mean_loss(weights: ModelWeights, samples: list[LoadedSample]) -> float:
    """Mean cross-entropy over samples, no recording."""
    tape = Tape(record=False)
    params = weights.as_nodes(tape)
    total = 0.0
    for sample in samples:
        probs = modelmod.forward_from_params(tape, params, weights.config, sample.views)
        pred = probs.value.reshape(1, 2)
        total += float(-(_one_hot(sample.label) * np.log(pred + nn.EPS_LOG)).sum())
    return total / len(samples)


def train_fold(
    model_cfg: ModelConfig,
    train_set: list[LoadedSample],
    val_set: list[LoadedSample],
    train_cfg: TrainConfig,
) -> tuple[ModelWeights, TrainLog]:
    """Train on train_set, select the checkpoint minimizing val loss."""
    train_ids = {s.subject_id.split("#", 1)[0] for s in train_set}
    val_ids = {s.subject_id for s in val_set}
    if train_ids & val_ids:
        raise ConfigError(f"train and validation subjects overlap: {sorted(train_ids & val_ids)}")
    if not train_set or not val_set:
        raise ConfigError("train and validation sets must both be nonempty")

    weights = modelmod.init_weights(model_cfg)
    state = nn.adam_init(weights.values, lr=train_cfg.lr)
    rng = np.random.default_rng(train_cfg.seed)
    log = TrainLog()
    best_val = np.inf
    best = weights.copy()

    n = len(train_set)
    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, train_cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + train_cfg.batch_size]]
            tape = Tape()
            params = weights.as_nodes(tape)
            loss = _batch_loss(tape, params, model_cfg, batch)
            loss_value = float(loss.value[0])
            if not np.isfinite(loss_value):
                raise NumericalError(
                    f"training loss is not finite at epoch {epoch}, batch {start // train_cfg.batch_size}"
                )
            tape.backward(loss)
            grads = {name: node.grad for name, node in params.items() if node.grad is not None}
            nn.adam_step(state, weights.values, grads)
            epoch_loss += loss_value * len(batch)
        log.train_loss.append(epoch_loss / n)

        val = mean_loss(weights, val_set)
        if not np.isfinite(val):
            raise NumericalError(f"validation loss is not finite at epoch {epoch}")
        log.val_loss.append(val)
        if val < best_val:
            best_val = val
            best = weights.copy()
        log.epoch_seconds.append(time.perf_counter() - started)

    return best, log


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldResult:
    fold: int
    confusion: ConfusionMatrix
    predictions: list[ScoredPrediction]
    auc: float
    log: TrainLog
    weights: ModelWeights


@dataclass
class CVResult:
    plan: FoldPlan
    folds: list[FoldResult]
    cumulative: ConfusionMatrix
    pooled_auc: float
    pooled_points: list


def predict(weights: ModelWeights, samples: list[LoadedSample]) -> list[ScoredPrediction]:
    preds = []
    for sample in samples:
        probs = modelmod.forward(weights, sample.views)
        preds.append(
            ScoredPrediction(subject_id=sample.subject_id, score=float(probs[1]), label=sample.label)
        )
    return preds


def _run_fold(args) -> FoldResult:
    manifest, plan, fold_idx, model_cfg, train_cfg = args
    try:
        fold = plan.folds[fold_idx]
        seq, hw = model_cfg.seq_len, model_cfg.input_hw
        train_set = datamod.load_samples(manifest, fold.train, seq, hw)
        val_set = datamod.load_samples(manifest, fold.val, seq, hw)
        test_set = datamod.load_samples(manifest, fold.test, seq, hw)

        fold_train_cfg = replace(train_cfg, seed=train_cfg.seed + fold_idx)
        fold_model_cfg = replace(model_cfg, init_seed=model_cfg.init_seed + fold_idx)
        if train_cfg.augment:
            train_set = datamod.balance_augment(
                train_set, target_per_class=train_cfg.target_per_class, seed=fold_train_cfg.seed
            )

        best, log = train_fold(fold_model_cfg, train_set, val_set, fold_train_cfg)
        preds = predict(best, test_set)
        auc, _ = ev.roc_auc(preds)
    except Exception as exc:
        exc.args = (f"fold {fold_idx}: {exc}",)
        raise
    return FoldResult(
        fold=fold_idx,
        confusion=ev.confusion_from_predictions(preds),
        predictions=preds,
        auc=auc,
        log=log,
        weights=best,
    )


def run_cross_validation(
    manifest: Manifest,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    k: int = 5,
    val_fraction: float = 0.2,
    threads: int = 1,
) -> CVResult:
    plan = datamod.plan_folds(manifest, k=k, val_fraction=val_fraction, seed=train_cfg.seed)
    all_ids = {s.subject_id for s in manifest.samples}
    covered = set()
    for fold in plan.folds:
        assert not covered & set(fold.test), "fold plan test sets overlap"
        covered |= set(fold.test)
    assert covered == all_ids, "fold plan test sets do not partition the cohort"

    jobs = [(manifest, plan, i, model_cfg, train_cfg) for i in range(k)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(job) for job in jobs]

    cumulative = ev.cumulative_confusion([r.confusion for r in results])
    pooled = [p for r in results for p in r.predictions]
    pooled_auc, pooled_points = ev.roc_auc(pooled)
    return CVResult(
        plan=plan, folds=results, cumulative=cumulative, pooled_auc=pooled_auc, pooled_points=pooled_points
    )

"""Coordinate normalization, losses and the accumulate-then-step training loop."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import AdamState, Tensor
from .data import ExperimentSpec, Scan, Splits
from .models import Localizer, Prediction

logger = logging.getLogger(__name__)


class DegenerateAxisError(ValueError):
    pass


@dataclass(frozen=True)
class NormStats:
    mu_x: float
    sigma_x: float
    mu_y: float
    sigma_y: float

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise DegenerateAxisError(f"standard deviations must be positive: {self}")

    @property
    def mu(self) -> np.ndarray:
        return np.array([self.mu_x, self.mu_y])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([self.sigma_x, self.sigma_y])

    def normalize(self, xy) -> np.ndarray:
        return (np.asarray(xy, dtype=float) - self.mu) / self.sigma

    def denormalize(self, xy_norm) -> np.ndarray:
        return np.asarray(xy_norm, dtype=float) * self.sigma + self.mu

    def to_dict(self) -> dict:
        return asdict(self)


def fit_norm_stats(train: Sequence[Scan]) -> NormStats:
    """Population mean and standard deviation of training positions."""
    if len(train) < 2:
        raise DegenerateAxisError("need at least two training scans to fit coordinate statistics")
    pos = np.array([s.position for s in train], dtype=float)
    mu = pos.mean(axis=0)
    sigma = pos.std(axis=0)
    for axis, s in zip("xy", sigma):
        if not s > 0:
            raise DegenerateAxisError(f"all training positions share the same {axis} coordinate")
    return NormStats(float(mu[0]), float(sigma[0]), float(mu[1]), float(sigma[1]))


def regression_loss(pred: Prediction, target_norm) -> Tensor:
    """Squared Euclidean distance in normalized coordinates."""
    if not np.all(np.isfinite(pred.position_norm.data)):
        raise FloatingPointError(f"non-finite prediction {pred.position_norm.data}")
    diff = ag.sub(pred.position_norm, np.asarray(target_norm, dtype=float))
    return ag.reduce_sum(ag.mul(diff, diff))


@dataclass
class LossParts:
    total: Tensor
    reg: float
    cls: float


def total_loss(pred: Prediction, target_norm, class_label: int | None = None,
               lam: float = 1.0) -> LossParts:
    reg = regression_loss(pred, target_norm)
    if pred.class_logits is None:
        if class_label is not None:
            raise ValueError("class label given but the model has no classification head")
        return LossParts(reg, reg.item(), 0.0)
    if class_label is None:
        raise ValueError("multi-task model needs a class label")
    cls = ag.cross_entropy(pred.class_logits, class_label)
    return LossParts(ag.add(reg, ag.mul(cls, lam)), reg.item(), cls.item())


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 50
    accumulation_window: int = 32
    early_stop_patience: int = 10
    lam: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.accumulation_window < 1:
            raise ValueError("accumulation window must be at least 1")
        if self.early_stop_patience < 0:
            raise ValueError("patience must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepLog:
    step: int
    total: float
    reg: float
    cls: float


@dataclass
class TrainResult:
    model: Localizer
    stats: NormStats
    history: list[dict]
    steps: list[StepLog]
    best_epoch: int
    best_val_error: float
    initial_val_error: float
    classes: list = field(default_factory=list)


def predict_xy(model: Localizer, scan: Scan, stats: NormStats) -> np.ndarray:
    return stats.denormalize(model(scan).xy)


def mean_error(model: Localizer, scans: Sequence[Scan], stats: NormStats) -> float:
    errs = [float(np.hypot(*(predict_xy(model, s, stats) - np.asarray(s.position)))) for s in scans]
    return float(np.mean(errs))


def train(model: Localizer, splits: Splits, spec: ExperimentSpec, config: TrainConfig) -> TrainResult:
    """Per-scan forward/backward with gradients averaged over a window of
    ``accumulation_window`` scans before each Adam step.

    Validation mean error (meters) is measured before training and after each
    epoch; the best weights are kept. Training stops after ``epochs`` or once
    validation has not improved for more than ``early_stop_patience`` epochs.
    """
    if not splits.train or not splits.val:
        raise ValueError("train and validation splits must be non-empty")
    stats = fit_norm_stats(splits.train)
    targets = [stats.normalize(s.position) for s in splits.train]
    labels: list[int | None] = [None] * len(splits.train)
    if model.config.multi_task:
        if spec.class_field == "none":
            raise ValueError("multi-task model needs an experiment with a class field")
        labels = [splits.class_index(s, spec.class_field) for s in splits.train]
    params = [p for p in model.parameters() if p.requires_grad]
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)

    best_val = mean_error(model, splits.val, stats)
    initial_val = best_val
    best_state = model.state_dict()
    best_epoch, wait = 0, 0
    history, steps = [], []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(splits.train))
        epoch_loss, pending = 0.0, 0
        window_total = window_reg = window_cls = 0.0
        model.zero_grad()
        for k, i in enumerate(order):
            parts = total_loss(model(splits.train[i]), targets[i], labels[i], config.lam)
            if parts.total.requires_grad:
                parts.total.backward()
            epoch_loss += parts.total.item()
            window_total += parts.total.item()
            window_reg += parts.reg
            window_cls += parts.cls
            pending += 1
            if pending == config.accumulation_window or k == len(order) - 1:
                if params:
                    for p in params:
                        if p.grad is None:
                            p.grad = np.zeros_like(p.data)
                        else:
                            p.grad /= pending
                    ag.adam_step(params, state)
                    model.zero_grad()
                steps.append(StepLog(len(steps) + 1, window_total / pending,
                                     window_reg / pending, window_cls / pending))
                pending = 0
                window_total = window_reg = window_cls = 0.0
        val = mean_error(model, splits.val, stats)
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(order), "val_error_m": val})
        logger.info("epoch %d loss %.5f val %.3f m", epoch, epoch_loss / len(order), val)
        if val < best_val:
            best_val, best_epoch, wait = val, epoch, 0
            best_state = model.state_dict()
        else:
            wait += 1
            if wait > config.early_stop_patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(model, stats, history, steps, best_epoch, best_val, initial_val,
                       list(splits.classes))


def write_history(history: Sequence[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_error_m"])
        for row in history:
            writer.writerow([row["epoch"], repr(float(row["train_loss"])), repr(float(row["val_error_m"]))])


def read_history(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                 "val_error_m": float(r["val_error_m"])} for r in csv.DictReader(fh)]


def clone_model(model: Localizer) -> Localizer:
    return copy.deepcopy(model)

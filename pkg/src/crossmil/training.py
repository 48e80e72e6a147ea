"""Optimization loop, split protocol, and validation-based selection.

Training follows a fixed recipe: per epoch, one cluster-balanced bag per
training patient, NLL loss per bag, one adaptive-moment gradient step
per bag, then a validation pass; the returned parameters are the ones
with the lowest validation loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .clustering import Bag, ClusterModel, assemble_bag, patient_rng
from .data import Dataset
from .errors import ContractError, DomainError, TrainingError
from .models import ModelConfig, ModelParams, forward_bag, init_params

_VAL_BAG_TAG = 0x56414C  # keeps validation bag streams apart from train streams


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bag_size: int = 8
    n_splits: int = 10
    seed: int = 0
    bag_resample: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.n_splits < 1:
            raise ContractError(f"n_splits must be >= 1, got {self.n_splits}")
        if self.bag_size < 1:
            raise ContractError(f"bag_size must be >= 1, got {self.bag_size}")


@dataclass(frozen=True)
class Split:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    splits: tuple[Split, ...]
    test_ids: tuple[str, ...] = ()  # test patients live in a separate dataset


@dataclass
class TrainedModel:
    params: ModelParams
    split_id: int
    selection_epoch: int
    train_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)


def nll_loss(log_probs: Tensor, label: int) -> Tensor:
    """Negative log-likelihood of the true class; stays on the graph."""
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label}")
    lp = log_probs.data.reshape(-1)
    if lp.shape[0] != 2:
        raise ContractError(f"log_probs must have 2 entries, got shape {log_probs.shape}")
    if lp.max() > 1e-9 or abs(np.logaddexp(lp[0], lp[1])) > 1e-6:
        raise ContractError("log_probs are not log-probabilities (logsumexp != 0)")
    onehot = np.zeros_like(log_probs.data)
    onehot.reshape(-1)[label] = 1.0
    return -(log_probs * Tensor(onehot)).sum()


class Adam:
    """First-order adaptive-moment updates over a named parameter dict."""

    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.params = params
        self.lr = cfg.learning_rate
        self.beta1, self.beta2, self.eps = cfg.beta1, cfg.beta2, cfg.eps
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name in self.params.names():
            p = self.params.tensors[name]
            if p.grad is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * p.grad
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * p.grad**2
            p.data = p.data - self.lr * (self.m[name] / b1t) / (
                np.sqrt(self.v[name] / b2t) + self.eps
            )

    def zero_grad(self) -> None:
        for t in self.params.tensors.values():
            t.grad = None


def make_splits(dataset: Dataset, n_splits: int, seed: int = 0) -> SplitPlan:
    """Class-stratified holdout splits over the training patients.

    Split i validates on the i-th 1/n_splits slice of each class (so the
    validation slices partition the patients) and trains on the rest.
    """
    if n_splits < 1:
        raise ContractError(f"n_splits must be >= 1, got {n_splits}")
    all_ids = [p.patient_id for p in dataset]
    if n_splits == 1:
        warnings.warn("n_splits=1: validation set equals the training set", stacklevel=2)
        return SplitPlan((Split(tuple(all_ids), tuple(all_ids)),))
    if len(all_ids) < n_splits:
        raise ContractError(f"{len(all_ids)} patients cannot fill {n_splits} validation sets")

    rng = np.random.default_rng(seed)
    slices: list[list[str]] = [[] for _ in range(n_splits)]
    offset = 0
    for label in (0, 1):
        ids = [p.patient_id for p in dataset if p.label == label]
        order = rng.permutation(len(ids))
        for pos, idx in enumerate(order):
            slices[(offset + pos) % n_splits].append(ids[idx])
        offset += len(ids)
    splits = []
    for i in range(n_splits):
        val = set(slices[i])
        splits.append(
            Split(
                tuple(pid for pid in all_ids if pid not in val),
                tuple(pid for pid in all_ids if pid in val),
            )
        )
    return SplitPlan(tuple(splits))


def _epoch_loss(
    dataset: Dataset,
    ids: tuple[str, ...],
    params: ModelParams,
    cfg: ModelConfig,
    bags: dict[str, Bag],
) -> float:
    total = 0.0
    for pid in ids:
        log_probs, _ = forward_bag(bags[pid], params, cfg)
        total += nll_loss(log_probs, dataset.patient(pid).label).item()
    return total / len(ids)


def train_one_split(
    dataset: Dataset,
    split: Split,
    cluster_model: ClusterModel,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    split_id: int = 0,
) -> TrainedModel:
    """Train on one split and return the lowest-validation-loss parameters."""
    params = init_params(model_cfg, seed=int(np.random.default_rng([cfg.seed, split_id]).integers(2**31)))
    opt = Adam(params, cfg)
    train_set = set(split.train_ids)

    def bag_for(pid: str, epoch_key: int) -> Bag:
        rng = patient_rng((cfg.seed, split_id, epoch_key), pid)
        return assemble_bag(dataset.patient(pid), cluster_model, cfg.bag_size, rng)

    val_bags = {pid: bag_for(pid, _VAL_BAG_TAG) for pid in split.val_ids}
    fixed_bags = None
    if not cfg.bag_resample:
        fixed_bags = {pid: bag_for(pid, 0) for pid in split.train_ids}

    best_val = np.inf
    best_epoch = 0
    best_values = params.copy_values()
    train_curve: list[float] = []
    val_curve: list[float] = []
    for epoch in range(cfg.epochs):
        if cfg.bag_resample:
            epoch_bags = {pid: bag_for(pid, epoch + 1) for pid in split.train_ids}
        else:
            epoch_bags = fixed_bags
        order_rng = np.random.default_rng([cfg.seed, split_id, epoch, 0x4F52])
        order = [split.train_ids[i] for i in order_rng.permutation(len(split.train_ids))]
        running = 0.0
        try:
            for pid in order:
                bag = epoch_bags[pid]
                assert bag.patient_id in train_set  # validation data must never reach a gradient
                log_probs, _ = forward_bag(bag, params, model_cfg)
                loss = nll_loss(log_probs, dataset.patient(pid).label)
                running += loss.item()
                opt.zero_grad()
                ad.backward(loss)
                opt.step()
        except DomainError as e:
            raise TrainingError(f"training diverged: {e}", epoch) from e
        train_loss = running / len(order)
        if not np.isfinite(train_loss):
            raise TrainingError("training loss is not finite", epoch)
        val_loss = _epoch_loss(dataset, split.val_ids, params, model_cfg, val_bags)
        train_curve.append(train_loss)
        val_curve.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_values = params.copy_values()

    best = init_params(model_cfg, seed=0)
    best.load_values(best_values)
    return TrainedModel(best, split_id, best_epoch, train_curve, val_curve)


def train_all(
    dataset: Dataset,
    cluster_model: ClusterModel,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
) -> list[TrainedModel]:
    plan = make_splits(dataset, cfg.n_splits, cfg.seed)
    return [
        train_one_split(dataset, split, cluster_model, cfg, model_cfg, split_id=i)
        for i, split in enumerate(plan.splits)
    ]


def write_loss_curves(model: TrainedModel, path: str | Path) -> Path:
    path = Path(path)
    lines = ["epoch,train_loss,val_loss"]
    for i, (tr, va) in enumerate(zip(model.train_curve, model.val_curve)):
        lines.append(f"{i},{tr!r},{va!r}")
    path.write_text("\n".join(lines) + "\n")
    return path

"""Shared domain types, the label-skew metric and the weighted aggregation rule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation, DomainError


@dataclass(frozen=True)
class LabelHistogram:
    """Per-class sample counts of one vehicle's local dataset."""

    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) < 2:
            raise DomainError("a label histogram needs at least 2 classes")
        if any(c < 0 for c in counts):
            raise DomainError("class counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, labels: np.ndarray, n_classes: int) -> "LabelHistogram":
        return cls(tuple(np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)[:n_classes]))

    @property
    def n_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def proportions(self) -> np.ndarray:
        if self.total == 0:
            raise DomainError("empty dataset")
        return np.asarray(self.counts, dtype=float) / self.total


@dataclass(frozen=True)
class DataQuality:
    emd: float


@dataclass(frozen=True)
class WeightPolicy:
    kappa1: float
    kappa2: float


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector of the toy learner."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1:
            raise ContractViolation("model parameters must be a flat vector")
        if not np.all(np.isfinite(theta)):
            raise ContractViolation("model parameters must be finite")
        theta = theta.copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]


def compute_emd(hist: LabelHistogram, reference: Sequence[float] | None = None) -> DataQuality:
    """L1 distance between the histogram's label distribution and ``reference``.

    ``reference`` defaults to the uniform distribution over classes.
    """
    total = hist.total
    if total == 0:
        raise DomainError("empty dataset")
    n = hist.n_classes
    if reference is None:
        ref = [1.0 / n] * n
    else:
        ref = [float(r) for r in reference]
        if len(ref) != n:
            raise ContractViolation(f"reference has {len(ref)} classes, histogram has {n}")
    return DataQuality(math.fsum(abs(c / total - r) for c, r in zip(hist.counts, ref)))


def compute_kappa(emds: Sequence[DataQuality | float]) -> WeightPolicy:
    """Mixing weights from the mean EMD of the participants: kappa2 = (mean/2)**2."""
    values = [e.emd if isinstance(e, DataQuality) else float(e) for e in emds]
    if not values:
        raise DomainError("kappa needs at least one participant")
    if any(not (0.0 <= v <= 2.0) for v in values):
        raise DomainError("EMD values must lie in [0, 2]")
    mean = math.fsum(values) / len(values)
    kappa2 = (mean / 2.0) ** 2
    return WeightPolicy(kappa1=1.0 - kappa2, kappa2=kappa2)


def data_weights(sizes: Sequence[int]) -> np.ndarray:
    """rho_n = |D_n| / sum |D_m|."""
    sizes = np.asarray(sizes, dtype=float)
    total = sizes.sum()
    if total <= 0:
        raise DomainError("participants hold no data")
    return sizes / total


def aggregate(
    local_models: Sequence[tuple[ModelParams, float]],
    augmented: ModelParams,
    policy: WeightPolicy,
) -> ModelParams:
    """kappa1 * sum(rho_n * theta_n) + kappa2 * theta_a."""
    dim = augmented.dim
    rho_total = 0.0
    fed = np.zeros(dim)
    for params, rho in local_models:
        if params.dim != dim:
            raise ContractViolation(f"dimension mismatch: {params.dim} != {dim}")
        if not math.isfinite(rho) or rho < 0:
            raise ContractViolation("weights must be finite and nonnegative")
        fed += rho * params.theta
        rho_total += rho
    if local_models and abs(rho_total - 1.0) > 1e-9:
        raise ContractViolation(f"local weights sum to {rho_total}, expected 1")
    if not local_models and policy.kappa1 != 0.0:
        raise ContractViolation("no local models but kappa1 > 0")
    out = policy.kappa1 * fed + policy.kappa2 * augmented.theta
    return ModelParams(out)

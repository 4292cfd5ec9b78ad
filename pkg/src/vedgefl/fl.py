"""Toy-scale federated training with a synthetic stand-in for the image generator."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocator import distribute_images
from .core import LabelHistogram, ModelParams, WeightPolicy, aggregate, compute_kappa, data_weights
from .errors import DomainError, TrainingDivergedError
from .rng import substream


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return self.y.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])

    @staticmethod
    def empty(n_features: int) -> "Dataset":
        return Dataset(np.zeros((0, n_features)), np.zeros(0, dtype=np.int64))

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.concatenate([self.X, other.X]), np.concatenate([self.y, other.y]))


@dataclass(frozen=True)
class SyntheticTask:
    """Gaussian class-conditional features with a shared isotropic covariance.

    The generator draws class ``y`` around ``mu_y + shift * (mu_{y+1} - mu_y)``,
    so ``shift`` moves synthetic samples toward the neighbouring class.
    """

    n_classes: int = 10
    n_features: int = 20
    class_sep: float = 1.0
    noise_std: float = 1.0
    shift: float = 0.0
    n_train: int = 4000
    n_test: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.n_features < 2:
            raise DomainError("need at least 2 classes and 2 features")
        if not (0.0 <= self.shift <= 1.0):
            raise DomainError("shift must lie in [0, 1]")

    @property
    def means(self) -> np.ndarray:
        rng = substream(self.seed, "task-means")
        return rng.normal(0.0, self.class_sep, size=(self.n_classes, self.n_features))

    def generator_means(self, shift: float | None = None) -> np.ndarray:
        shift = self.shift if shift is None else shift
        mu = self.means
        return mu + shift * (np.roll(mu, -1, axis=0) - mu)

    def _draw(self, labels: np.ndarray, means: np.ndarray, rng: np.random.Generator) -> Dataset:
        labels = np.asarray(labels, dtype=np.int64)
        X = means[labels] + self.noise_std * rng.standard_normal((labels.shape[0], self.n_features))
        return Dataset(X, labels)

    def split(self) -> tuple[Dataset, Dataset]:
        """Class-balanced train and test sets."""
        out = []
        for name, n in (("train", self.n_train), ("test", self.n_test)):
            rng = substream(self.seed, "task", name)
            labels = np.resize(np.arange(self.n_classes), n)
            labels = labels[rng.permutation(n)]
            out.append(self._draw(labels, self.means, rng))
        return out[0], out[1]


class SoftmaxRegression:
    """Multinomial logistic regression with optional L2 penalty; theta = [W.ravel(), b]."""

    def __init__(self, n_features: int, n_classes: int, l2: float = 0.0):
        self.n_features = n_features
        self.n_classes = n_classes
        self.l2 = l2

    @property
    def dim(self) -> int:
        return self.n_classes * (self.n_features + 1)

    def init(self, rng: np.random.Generator | None = None) -> ModelParams:
        return ModelParams(np.zeros(self.dim))

    def _unpack(self, theta):
        k = self.n_classes * self.n_features
        return theta[:k].reshape(self.n_classes, self.n_features), theta[k:]

    def logits(self, theta, X):
        W, b = self._unpack(theta)
        return X @ W.T + b

    def loss_grad(self, theta, X, y):
        W, _ = self._unpack(theta)
        z = self.logits(theta, X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        n = y.shape[0]
        loss = -np.mean(np.log(p[np.arange(n), y])) + 0.5 * self.l2 * np.sum(W * W)
        p[np.arange(n), y] -= 1.0
        p /= n
        gW = p.T @ X + self.l2 * W
        gb = p.sum(axis=0)
        return float(loss), np.concatenate([gW.ravel(), gb])

    def predict(self, theta, X):
        return np.argmax(self.logits(theta, X), axis=1)


class MLP:
    """One tanh hidden layer; for qualitative runs."""

    def __init__(self, n_features: int, n_classes: int, hidden: int = 32, l2: float = 0.0):
        self.n_features = n_features
        self.n_classes = n_classes
        self.hidden = hidden
        self.l2 = l2
        self._shapes = [(hidden, n_features), (hidden,), (n_classes, hidden), (n_classes,)]

    @property
    def dim(self) -> int:
        return sum(int(np.prod(s)) for s in self._shapes)

    def init(self, rng: np.random.Generator | None = None) -> ModelParams:
        rng = rng or np.random.default_rng(0)
        W1 = rng.normal(0, 1 / math.sqrt(self.n_features), self._shapes[0])
        W2 = rng.normal(0, 1 / math.sqrt(self.hidden), self._shapes[2])
        return ModelParams(np.concatenate([W1.ravel(), np.zeros(self.hidden), W2.ravel(), np.zeros(self.n_classes)]))

    def _unpack(self, theta):
        out, i = [], 0
        for s in self._shapes:
            k = int(np.prod(s))
            out.append(theta[i:i + k].reshape(s))
            i += k
        return out

    def logits(self, theta, X):
        W1, b1, W2, b2 = self._unpack(theta)
        return np.tanh(X @ W1.T + b1) @ W2.T + b2

    def loss_grad(self, theta, X, y):
        W1, b1, W2, b2 = self._unpack(theta)
        H = np.tanh(X @ W1.T + b1)
        z = H @ W2.T + b2
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        n = y.shape[0]
        loss = -np.mean(np.log(p[np.arange(n), y])) + 0.5 * self.l2 * (np.sum(W1 * W1) + np.sum(W2 * W2))
        p[np.arange(n), y] -= 1.0
        p /= n
        gW2 = p.T @ H + self.l2 * W2
        gb2 = p.sum(axis=0)
        dH = (p @ W2) * (1 - H * H)
        gW1 = dH.T @ X + self.l2 * W1
        gb1 = dH.sum(axis=0)
        return float(loss), np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])

    def predict(self, theta, X):
        return np.argmax(self.logits(theta, X), axis=1)


@dataclass(frozen=True)
class TrainerConfig:
    eta: float = 0.1
    local_steps: int = 10       # h
    batch_size: int | None = 32  # None: full local dataset per step
    rounds: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0 or self.local_steps < 1 or self.rounds < 1:
            raise DomainError("need eta >= 0, local_steps >= 1, rounds >= 1")


def dirichlet_partition(labels: np.ndarray, n_vehicles: int, alpha: float, n_classes: int,
                        rng: np.random.Generator) -> tuple[list[np.ndarray], list[LabelHistogram]]:
    """Split sample indices across vehicles with per-class Dirichlet(alpha) proportions."""
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    if n_vehicles < 1:
        raise DomainError("need at least one vehicle")
    labels = np.asarray(labels, dtype=np.int64)
    parts: list[list[np.ndarray]] = [[] for _ in range(n_vehicles)]
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.shape[0])]
        p = rng.dirichlet(np.full(n_vehicles, alpha))
        cuts = (np.cumsum(p)[:-1] * idx.shape[0]).astype(np.int64)
        for v, chunk in enumerate(np.split(idx, cuts)):
            parts[v].append(chunk)
    indices = [np.sort(np.concatenate(p)) for p in parts]
    hists = [LabelHistogram.from_labels(labels[i], n_classes) for i in indices]
    return indices, hists


def _sgd(learner, params: ModelParams, data: Dataset, cfg: TrainerConfig, rng: np.random.Generator,
         tag: str) -> ModelParams:
    n = len(data)
    if n == 0 or cfg.eta == 0:
        return params
    theta = params.theta.copy()
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)
    for step in range(cfg.local_steps):
        if batch < n:
            idx = rng.choice(n, size=batch, replace=False)
            X, y = data.X[idx], data.y[idx]
        else:
            X, y = data.X, data.y
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            loss, grad = learner.loss_grad(theta, X, y)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDivergedError(
                f"{tag}: non-finite gradient at step {step} (loss={loss}, |theta|={np.linalg.norm(theta):.3g})")
        theta -= cfg.eta * grad
    return ModelParams(theta)


def local_train(learner, params: ModelParams, data: Dataset, cfg: TrainerConfig,
                rng: np.random.Generator) -> ModelParams:
    """h mini-batch SGD steps on a vehicle's local data."""
    return _sgd(learner, params, data, cfg, rng, "local")


def train_augmented(learner, params: ModelParams, data: Dataset, cfg: TrainerConfig,
                    rng: np.random.Generator) -> ModelParams:
    """Same procedure as ``local_train`` on the generated set held by the RSU."""
    return _sgd(learner, params, data, cfg, rng, "augmented")


def generate_synthetic(task: SyntheticTask, labels: Sequence[int], b_images: int, shift: float,
                       rng: np.random.Generator) -> Dataset:
    counts = distribute_images(b_images, labels)
    y = np.concatenate([np.full(k, c, dtype=np.int64) for c, k in counts.items()]) if counts else \
        np.zeros(0, dtype=np.int64)
    if y.shape[0] == 0:
        return Dataset.empty(task.n_features)
    return task._draw(y, task.generator_means(shift), rng)


def accuracy(learner, params: ModelParams, data: Dataset) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(learner.predict(params.theta, data.X) == data.y))


def estimate_quality_bound(learner, params: ModelParams, data: Dataset, emd: float) -> float:
    """lambda_n ~ EMD_n * max_i ||E_{x|y=i} grad loss||, using ``data`` for the class means."""
    g = 0.0
    for c in np.unique(data.y):
        mask = data.y == c
        _, grad = learner.loss_grad(params.theta, data.X[mask], data.y[mask])
        g = max(g, float(np.linalg.norm(grad)))
    return emd * g


@dataclass
class Participant:
    vehicle_id: int
    data: Dataset
    emd: float


@dataclass
class FLState:
    learner: object
    params: ModelParams
    generated: Dataset
    round: int = 0


@dataclass
class RoundOutcome:
    accuracy: float
    policy: WeightPolicy
    emd_mean: float
    rho: list[float]
    n_generated: int
    cum_generated: int
    flags: list[str] = field(default_factory=list)


SCHEMES = ("genfv", "fedavg", "aigc_only")


def run_round(state: FLState, task: SyntheticTask, participants: Sequence[Participant], b_images: int,
              gen_labels: Sequence[int], cfg: TrainerConfig, test: Dataset, seed: int,
              scheme: str = "genfv", workers: int = 1) -> RoundOutcome:
    """One aggregation round; mutates ``state`` and returns its metrics.

    Each vehicle trains on its own substream keyed by (round, vehicle id), so
    results do not depend on ``workers``.
    """
    if scheme not in SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}")
    t = state.round
    learner = state.learner
    flags: list[str] = []
    if scheme == "aigc_only":
        participants = []
    if scheme == "fedavg":
        b_images = 0

    def train_one(p: Participant) -> ModelParams:
        return local_train(learner, state.params, p.data, cfg, substream(seed, "train", t, p.vehicle_id))

    if workers > 1 and len(participants) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            locals_ = list(pool.map(train_one, participants))
    else:
        locals_ = [train_one(p) for p in participants]

    new = generate_synthetic(task, gen_labels, b_images, task.shift, substream(seed, "generate", t))
    if len(new):
        state.generated = state.generated.concat(new)
    augmented = train_augmented(learner, state.params, state.generated, cfg, substream(seed, "augment", t))

    rho: list[float] = []
    emd_mean = float("nan")
    if participants:
        rho_arr = data_weights([len(p.data) for p in participants])
        rho = [float(r) for r in rho_arr]
        emds = [p.emd for p in participants]
        emd_mean = math.fsum(emds) / len(emds)
        if scheme == "genfv" and len(state.generated):
            policy = compute_kappa(emds)
        else:
            # no generated data yet: the augmented model carries nothing new
            policy = WeightPolicy(1.0, 0.0)
        state.params = aggregate(list(zip(locals_, rho)), augmented, policy)
    elif len(state.generated):
        policy = WeightPolicy(0.0, 1.0)
        state.params = augmented
        flags.append("augmented-only")
    else:
        policy = WeightPolicy(1.0, 0.0)
        flags.append("idle-round")

    state.round += 1
    return RoundOutcome(accuracy(learner, state.params, test), policy, emd_mean, rho, len(new),
                        len(state.generated), flags)

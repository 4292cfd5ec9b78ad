"""Arithmetic of the convergence upper bound for the weighted aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import DomainError


@dataclass(frozen=True)
class BoundParams:
    beta: float             # Lipschitz constant of the loss
    varrho: float           # smoothness
    mu: float               # strong convexity
    eta: float              # learning rate
    h: int                  # local steps per round
    T: int                  # rounds
    sigma: Sequence[float]  # per-vehicle gradient-variance bounds
    lam: Sequence[float]    # per-vehicle data-quality bounds
    rho: Sequence[float]    # per-vehicle data weights
    lambda_a: float         # augmented-data quality bound
    kappa1: float
    kappa2: float

    def __post_init__(self):
        if min(self.beta, self.varrho, self.mu) <= 0:
            raise DomainError("beta, varrho and mu must be positive")
        if not (len(self.sigma) == len(self.lam) == len(self.rho)):
            raise DomainError("sigma, lam and rho must have equal length")
        if self.h < 0 or self.T < 0:
            raise DomainError("h and T must be nonnegative")


def chi(p: BoundParams) -> float:
    return 1.0 - 2.0 * p.mu * p.eta + 2.0 * p.mu * p.varrho * p.eta ** 2


def psi(p: BoundParams) -> float:
    c = chi(p)
    return (p.beta * (p.eta * p.varrho + 1.0) ** p.h - 1.0) / (p.varrho * (1.0 + c ** p.h))


def heterogeneity(p: BoundParams) -> float:
    """kappa1 * sum rho_n (sigma_n + lambda_n) + kappa2 * lambda_a."""
    fed = math.fsum(r * (s + l) for r, s, l in zip(p.rho, p.sigma, p.lam))
    return p.kappa1 * fed + p.kappa2 * p.lambda_a


def evaluate_bound(p: BoundParams, theta0_gap: float) -> float:
    """chi^(hT) * gap + (1 - chi^(hT)) * psi * Lambda."""
    if p.eta >= 1.0 / p.varrho:
        raise DomainError("theorem premise violated: eta must be below 1/varrho")
    decay = chi(p) ** (p.h * p.T)
    return decay * theta0_gap + (1.0 - decay) * psi(p) * heterogeneity(p)


def bound_table(p: BoundParams, theta0_gap: float, rounds: Sequence[int]) -> list[dict]:
    rows = []
    for T in rounds:
        q = BoundParams(**{**p.__dict__, "T": int(T)})
        rows.append({"T": int(T), "chi": chi(q), "psi": psi(q), "Lambda": heterogeneity(q),
                     "bound": evaluate_bound(q, theta0_gap)})
    return rows

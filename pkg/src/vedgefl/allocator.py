"""Small-scale resource allocation: bandwidth (dual ascent), power (SCA) and
generation budget (closed form), cycled by block coordinate descent.

Bandwidth shares ``l`` are continuous expected subcarrier shares in
``[l_min, 1]`` with ``sum(l) <= M``; ``subcarrier_assignment`` rounds them to
a per-slot 0/1 map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DomainError, InfeasibleError
from .phy import (RsuProfile, augmented_train_time, upload_energy, upload_energy_derivative,
                  upload_time, upload_time_derivative)


@dataclass(frozen=True)
class AllocatorConfig:
    eps1: float = 1e-4          # bandwidth, L-inf
    eps2: float = 1e-4          # power, W
    eps3: float = 1.0           # images
    max_dual_iters: int = 200
    max_sca_iters: int = 50
    max_bcd_sweeps: int = 30
    dual_step: float = 1.0
    gap_tol: float = 1e-4
    lambda_init: tuple[float, float] = (1.0, 1.0)   # (lambda1 per vehicle, lambda2)
    constraint_tol: float = 1e-6


@dataclass
class AllocationProblem:
    compute_time: np.ndarray            # A_n, s
    compute_energy: np.ndarray          # C_n (= G_n), J
    gain: np.ndarray                    # h0 d^-gamma / N0, 1/W
    s_omega: float                      # bits
    bandwidth: float                    # W per subcarrier, Hz
    n_subcarriers: int                  # M
    energy_cap: float | np.ndarray      # per-vehicle cap, J
    phi_min: float
    phi_max: float
    rsu: RsuProfile = field(default_factory=RsuProfile)
    l_min: float = 0.05
    deadlines: np.ndarray | None = None
    prev_batches: int = 0
    idle_window: float = 3.0
    ids: list[int] | None = None

    def __post_init__(self):
        self.compute_time = np.atleast_1d(np.asarray(self.compute_time, float))
        self.compute_energy = np.atleast_1d(np.asarray(self.compute_energy, float))
        self.gain = np.atleast_1d(np.asarray(self.gain, float))
        n = self.compute_time.shape[0]
        if self.compute_energy.shape[0] != n or self.gain.shape[0] != n:
            raise DomainError("per-vehicle arrays must have equal length")
        if np.any(self.compute_time < 0) or np.any(self.compute_energy < 0):
            raise DomainError("compute time and energy must be nonnegative")
        if n and np.any(self.gain <= 0):
            raise DomainError("channel gains must be positive")
        if self.n_subcarriers < 1:
            raise DomainError("need at least one subcarrier")
        if not (0 < self.phi_min < self.phi_max):
            raise DomainError("need 0 < phi_min < phi_max")
        cap = np.broadcast_to(np.asarray(self.energy_cap, float), (n,)).copy()
        if np.any(cap <= 0):
            raise DomainError("energy cap must be positive")
        self.energy_cap = cap
        if self.deadlines is not None:
            self.deadlines = np.asarray(self.deadlines, float)
        if self.ids is None:
            self.ids = list(range(n))

    @property
    def n(self) -> int:
        return self.compute_time.shape[0]

    @property
    def share_floor(self) -> float:
        """Effective minimum share, capped at 1/N."""
        return min(self.l_min, 1.0 / max(self.n, 1))

    def upload_coef(self, phi) -> np.ndarray:
        """B_n = s / (W log2(1 + gain phi)), the upload time at a full subcarrier."""
        return upload_time(np.asarray(phi, float), self.s_omega / self.bandwidth, self.gain)

    def latencies(self, l, phi) -> np.ndarray:
        return self.compute_time + self.upload_coef(phi) / np.asarray(l, float)

    def energies(self, l, phi) -> np.ndarray:
        return self.compute_energy + np.asarray(phi, float) * self.upload_coef(phi) / np.asarray(l, float)

    def objective(self, l, phi) -> float:
        return float(self.latencies(l, phi).max()) if self.n else 0.0

    def violation(self, l, phi) -> dict[str, float]:
        """Relative violation of every original constraint (0 when satisfied)."""
        l = np.asarray(l, float)
        phi = np.asarray(phi, float)
        e = self.energies(l, phi)
        return {
            "energy": float(np.max((e - self.energy_cap) / self.energy_cap, initial=0.0)),
            "bandwidth": max(float(l.sum() - self.n_subcarriers) / self.n_subcarriers, 0.0),
            "share_upper": float(np.max(l - 1.0, initial=0.0)),
            "share_lower": float(np.max((self.share_floor - l) / self.share_floor, initial=0.0)),
            "power_lower": float(np.max((self.phi_min - phi) / self.phi_min, initial=0.0)),
            "power_upper": float(np.max((phi - self.phi_max) / self.phi_max, initial=0.0)),
        }


@dataclass
class BandwidthResult:
    l: np.ndarray
    lambda1: np.ndarray
    lambda2: float
    lambda3: float
    lower: np.ndarray
    upper: np.ndarray
    iterations: int
    converged: bool
    gap: float

    @property
    def flags(self) -> list[str]:
        return [] if self.converged else ["dual-not-converged"]


@dataclass
class PowerResult:
    phi: np.ndarray
    iterations: int
    flags: list[str]


@dataclass
class AllocationDecision:
    ids: list[int]
    l: np.ndarray
    phi: np.ndarray
    b_images: int
    T_bar: float
    feasible: bool
    latency: np.ndarray
    energy: np.ndarray
    trace: list[float] = field(default_factory=list)
    dual_iters: int = 0
    sca_iters: int = 0
    sweeps: int = 0
    converged: bool = True
    kkt_residual: float = 0.0
    flags: list[str] = field(default_factory=list)
    binding: str | None = None

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "l": [float(x) for x in self.l],
            "phi_W": [float(x) for x in self.phi],
            "latency_s": [float(x) for x in self.latency],
            "energy_J": [float(x) for x in self.energy],
            "b_images": int(self.b_images),
            "T_bar_s": float(self.T_bar),
            "feasible": self.feasible,
            "binding_constraint": self.binding,
            "trace_T_bar_s": [float(x) for x in self.trace],
            "dual_iters": self.dual_iters,
            "sca_iters": self.sca_iters,
            "bcd_sweeps": self.sweeps,
            "converged": self.converged,
            "kkt_residual": float(self.kkt_residual),
            "flags": list(self.flags),
        }


def closed_form_share(lambda1, B, lambda2, D, lambda3):
    """Stationary point of the Lagrangian in l: sqrt((lambda1 B + lambda2 D) / lambda3)."""
    return np.sqrt((np.asarray(lambda1) * B + lambda2 * np.asarray(D)) / lambda3)


def share_bounds(prob: AllocationProblem, phi) -> tuple[np.ndarray, np.ndarray]:
    """Per-vehicle box for l: the share floor and the energy-cap floor D/(E - C)."""
    B = prob.upload_coef(phi)
    D = np.asarray(phi, float) * B
    slack = prob.energy_cap - prob.compute_energy
    bad = np.flatnonzero(slack <= 0)
    if bad.size:
        raise InfeasibleError(f"vehicle {prob.ids[bad[0]]}: compute energy exceeds the cap", "energy")
    lo = np.maximum(prob.share_floor, D / slack)
    if np.any(lo > 1.0):
        i = int(np.argmax(lo))
        raise InfeasibleError(f"vehicle {prob.ids[i]}: energy cap unreachable with a full subcarrier", "energy")
    if lo.sum() > prob.n_subcarriers:
        raise InfeasibleError("minimum shares exceed the subcarrier budget", "bandwidth")
    return lo, np.ones(prob.n)


def bandwidth_allocate(prob: AllocationProblem, phi, cfg: AllocatorConfig = AllocatorConfig()) -> BandwidthResult:
    phi = np.broadcast_to(np.asarray(phi, float), (prob.n,))
    lo, hi = share_bounds(prob, phi)
    B = prob.upload_coef(phi)
    D = phi * B
    lam1_0 = np.full(prob.n, cfg.lambda_init[0])
    l, lam1, lam2, lam3, iters, converged, gap = kernels.dual_ascent(
        prob.compute_time, B, prob.compute_energy, D, lo, hi, float(prob.n_subcarriers),
        prob.energy_cap, lam1_0, float(cfg.lambda_init[1]), cfg.dual_step, cfg.eps1,
        cfg.gap_tol, cfg.max_dual_iters)
    return BandwidthResult(np.asarray(l), np.asarray(lam1), float(lam2), float(lam3), lo, hi,
                           int(iters), bool(converged), float(gap))


def kkt_residuals(res: BandwidthResult, B, D) -> np.ndarray:
    """Relative stationarity residual per vehicle; NaN where l sits on its box."""
    l = res.l
    interior = (l > res.lower * (1 + 1e-12)) & (l < res.upper * (1 - 1e-12))
    out = np.full(l.shape, np.nan)
    if res.lambda3 > 0:
        lhs = (res.lambda1 * B + res.lambda2 * D) / l ** 2
        out[interior] = np.abs(lhs[interior] - res.lambda3) / res.lambda3
    return out


def surrogate_time(phi, phi_i, a, b):
    """First-order expansion of the upload time around ``phi_i``."""
    return upload_time(phi_i, a, b) + upload_time_derivative(phi_i, a, b) * (phi - phi_i)


def surrogate_energy(phi, phi_i, a, b):
    return upload_energy(phi_i, a, b) + upload_energy_derivative(phi_i, a, b) * (phi - phi_i)


def power_assign(prob: AllocationProblem, l, cfg: AllocatorConfig = AllocatorConfig(),
                 phi0=None) -> PowerResult:
    l = np.broadcast_to(np.asarray(l, float), (prob.n,))
    if phi0 is None:
        phi0 = 0.5 * (prob.phi_min + prob.phi_max)
    phi0 = np.broadcast_to(np.asarray(phi0, float), (prob.n,))
    a = prob.s_omega / (l * prob.bandwidth)
    cap = prob.energy_cap - prob.compute_energy
    phi, iters, status = kernels.sca_power(a, prob.gain, cap, phi0, prob.phi_min, prob.phi_max,
                                           cfg.eps2, cfg.max_sca_iters)
    phi = np.asarray(phi)
    bad = np.flatnonzero(status == kernels.SCA_INFEASIBLE)
    if bad.size:
        raise InfeasibleError(f"power infeasible: vehicle {prob.ids[bad[0]]} exceeds the energy cap "
                              f"at minimum power", "energy")
    flags = []
    if np.any(status == kernels.SCA_GAP):
        flags.append("sca-surrogate-gap")
    if np.any(status == kernels.SCA_MAXITER):
        flags.append("sca-not-converged")
    return PowerResult(phi, int(np.max(iters, initial=0)), flags)


def images_budget(T_bar: float, t_aug_prev: float, t0_img: float) -> int:
    """floor((T_bar - T_aug(prev)) / t0_img), clamped at zero."""
    if t0_img <= 0:
        raise DomainError("t0_img must be positive")
    return max(math.floor((T_bar - t_aug_prev) / t0_img), 0)


def generation_budget(prob: AllocationProblem, T_bar: float) -> int:
    t_prev = augmented_train_time(prob.rsu, prob.prev_batches)
    return images_budget(T_bar, t_prev, prob.rsu.t0_img)


def distribute_images(b_images: int, labels: Sequence[int]) -> dict[int, int]:
    """Equal split over the shared labels; the remainder goes to the lowest labels."""
    labels = sorted(set(int(y) for y in labels))
    if b_images and not labels:
        raise DomainError("no labels to generate for")
    if not labels:
        return {}
    q, r = divmod(int(b_images), len(labels))
    return {y: q + (1 if i < r else 0) for i, y in enumerate(labels)}


def subcarrier_assignment(l, n_subcarriers: int) -> np.ndarray:
    """Round continuous shares to a 0/1 subcarrier map by largest remainder.

    ``min(M, N)`` subcarriers are apportioned in proportion to ``l``; quotas
    are capped at one per vehicle and ties go to the lower index.
    """
    l = np.asarray(l, float)
    n = l.shape[0]
    seats = min(n_subcarriers, n)
    out = np.zeros(n, dtype=np.int64)
    if seats == 0 or l.sum() <= 0:
        return out
    quota = np.minimum(l / l.sum() * seats, 1.0)
    out[:] = np.floor(quota).astype(np.int64)
    remainder = quota - out
    order = sorted(range(n), key=lambda i: (-remainder[i], i))
    for i in order[: seats - int(out.sum())]:
        if out[i] == 0:
            out[i] = 1
    return out


def _empty_decision(prob: AllocationProblem) -> AllocationDecision:
    b = generation_budget(prob, prob.idle_window)
    z = np.zeros(0)
    return AllocationDecision([], z, z, b, 0.0, True, z, z, trace=[0.0], flags=["empty-selection"])


def bcd_solve(prob: AllocationProblem, cfg: AllocatorConfig = AllocatorConfig()) -> AllocationDecision:
    """Cycle bandwidth, power and generation-budget updates until all three settle."""
    if prob.n == 0:
        return _empty_decision(prob)
    n = prob.n
    phi = np.full(n, 0.5 * (prob.phi_min + prob.phi_max))
    l = np.clip(np.full(n, min(1.0, prob.n_subcarriers / n)), prob.share_floor, 1.0)
    b = 0
    trace: list[float] = []
    flags: list[str] = []
    dual_iters = sca_iters = 0
    converged = False
    kkt = 0.0
    sweep = 0
    have_feasible = False

    for sweep in range(1, cfg.max_bcd_sweeps + 1):
        try:
            bw = bandwidth_allocate(prob, phi, cfg)
        except InfeasibleError:
            if have_feasible:
                raise
            # lowest power minimizes upload energy; retry once from there
            phi = np.full(n, prob.phi_min)
            try:
                bw = bandwidth_allocate(prob, phi, cfg)
            except InfeasibleError as exc2:
                return _infeasible(prob, exc2)
        dual_iters += bw.iterations
        flags.extend(f for f in bw.flags if f not in flags)
        l_new = bw.l
        if have_feasible and prob.objective(l_new, phi) > prob.objective(l, phi):
            l_new = l
        else:
            B = prob.upload_coef(phi)
            res = kkt_residuals(bw, B, phi * B)
            kkt = float(np.nanmax(res)) if np.any(np.isfinite(res)) else 0.0

        try:
            pw = power_assign(prob, l_new, cfg, phi0=phi)
        except InfeasibleError as exc:
            return _infeasible(prob, exc)
        sca_iters += pw.iterations
        flags.extend(f for f in pw.flags if f not in flags)
        phi_new = pw.phi
        if prob.objective(l_new, phi_new) > prob.objective(l_new, phi):
            phi_new = phi

        T_bar = prob.objective(l_new, phi_new)
        b_new = generation_budget(prob, T_bar)
        trace.append(T_bar)
        done = (have_feasible
                and float(np.max(np.abs(l_new - l))) < cfg.eps1
                and float(np.max(np.abs(phi_new - phi))) < cfg.eps2
                and abs(b_new - b) < cfg.eps3)
        l, phi, b = l_new, phi_new, b_new
        have_feasible = True
        if done:
            converged = True
            break

    if not converged:
        flags.append("bcd-max-sweeps")
    viol = prob.violation(l, phi)
    worst = max(viol, key=viol.get)
    feasible = viol[worst] <= cfg.constraint_tol
    lat = prob.latencies(l, phi)
    if prob.deadlines is not None and np.any(lat > prob.deadlines * (1 + cfg.constraint_tol)):
        flags.append("deadline-miss")
    return AllocationDecision(
        ids=list(prob.ids), l=l, phi=phi, b_images=int(b), T_bar=float(lat.max()),
        feasible=feasible, latency=lat, energy=prob.energies(l, phi), trace=trace,
        dual_iters=dual_iters, sca_iters=sca_iters, sweeps=sweep, converged=converged,
        kkt_residual=kkt, flags=flags, binding=None if feasible else worst)


def _infeasible(prob: AllocationProblem, exc: InfeasibleError) -> AllocationDecision:
    z = np.zeros(prob.n)
    return AllocationDecision(list(prob.ids), z, z, 0, math.inf, False, z, z,
                              flags=[f"infeasible:{exc.constraint}"], binding=exc.constraint)

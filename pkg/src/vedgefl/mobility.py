"""Vehicle arrivals, speeds, positions and V2R holding times on a single RSU segment.

All internal quantities are SI (m, s); ``RoadConfig`` takes speeds in km/h.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

KMH = 1000.0 / 3600.0


@dataclass(frozen=True)
class RoadConfig:
    r: float = 500.0            # coverage radius, m
    e: float = 50.0             # RSU-to-road distance, m
    v_max: float = 120.0        # km/h
    v_min: float = 40.0         # km/h
    m_max: int = 40
    k: float = 0.1              # speed std / mean
    arrival_rate: float = 4.0   # vehicles per round
    t_max: float = 3.0          # s

    def __post_init__(self):
        if not (0 <= self.e < self.r):
            raise DomainError("need 0 <= e < r")
        if not (0 < self.v_min <= self.v_max):
            raise DomainError("need 0 < v_min <= v_max")
        if self.m_max < 1 or self.k <= 0 or self.t_max <= 0 or self.arrival_rate < 0:
            raise DomainError("invalid road configuration")

    @property
    def half_length(self) -> float:
        """Half of the covered road length, sqrt(r^2 - e^2)."""
        return math.sqrt(self.r ** 2 - self.e ** 2)


@dataclass
class VehicleKinematics:
    x: float    # signed position from the RSU foot point, m
    v: float    # signed speed, m/s

    @property
    def direction(self) -> int:
        return 1 if self.v > 0 else -1


def mean_speed(cfg: RoadConfig, m_current: int) -> float:
    """Congestion-dependent mean speed in km/h."""
    return max(cfg.v_max * (1.0 - m_current / cfg.m_max), cfg.v_min)


def sample_speed(cfg: RoadConfig, mean: float, rng: np.random.Generator) -> float:
    """Normal(mean, (k*mean)^2) km/h truncated to [v_min, v_max], returned in m/s."""
    if mean <= 0:
        raise DomainError("mean speed must be positive")
    v = rng.normal(mean, cfg.k * mean)
    return min(max(v, cfg.v_min), cfg.v_max) * KMH


def holding_time(cfg: RoadConfig, kin: VehicleKinematics) -> float:
    if kin.v == 0:
        raise DomainError("zero speed")
    remaining = cfg.half_length - math.copysign(1.0, kin.v) * kin.x
    return max(remaining, 0.0) / abs(kin.v)


def round_deadline(cfg: RoadConfig, t_hold: float) -> float:
    return min(t_hold, cfg.t_max)


def distance_to_rsu(cfg: RoadConfig, x: float) -> float:
    return math.hypot(x, cfg.e)


@dataclass
class Traffic:
    """Fleet presence on the road segment across rounds.

    Vehicles from a fixed fleet enter with Poisson arrivals, move at constant
    speed and leave when they pass the coverage edge.
    """

    cfg: RoadConfig
    fleet_size: int
    rng: np.random.Generator
    active: dict[int, VehicleKinematics] = field(default_factory=dict)

    def arrive(self, count: int | None = None) -> list[int]:
        if count is None:
            count = int(self.rng.poisson(self.cfg.arrival_rate))
        pool = [i for i in range(self.fleet_size) if i not in self.active]
        room = self.cfg.m_max - len(self.active)
        count = max(0, min(count, len(pool), room))
        if count == 0:
            return []
        chosen = sorted(int(i) for i in self.rng.choice(pool, size=count, replace=False))
        mean = mean_speed(self.cfg, len(self.active))
        half = self.cfg.half_length
        for vid in chosen:
            x = float(self.rng.uniform(-half, half))
            sign = 1.0 if self.rng.random() < 0.5 else -1.0
            self.active[vid] = VehicleKinematics(x=x, v=sign * sample_speed(self.cfg, mean, self.rng))
        return chosen

    def advance(self, dt: float) -> list[int]:
        """Move every vehicle by ``dt`` seconds; return the ids that left coverage."""
        half = self.cfg.half_length
        left = []
        for vid in sorted(self.active):
            kin = self.active[vid]
            kin.x += kin.v * dt
            if abs(kin.x) > half:
                left.append(vid)
        for vid in left:
            del self.active[vid]
        return left

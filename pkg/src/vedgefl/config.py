"""Run configuration: a versioned, strictly validated JSON schema."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import DomainError

SCHEMA_VERSION = 1


class ConfigError(DomainError):
    """Invalid configuration; ``details`` lists one message per offending field."""

    def __init__(self, message: str, details: list[str] | None = None):
        super().__init__(message)
        self.details = details or []


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RoadSection(_Section):
    r_m: float = Field(500.0, gt=0)
    e_m: float = Field(50.0, ge=0)
    v_max_kmh: float = Field(120.0, gt=0)
    v_min_kmh: float = Field(40.0, gt=0)
    m_max: int = Field(40, ge=1)
    k: float = Field(0.1, gt=0)
    arrival_rate: float = Field(2.0, ge=0, description="mean arrivals per round")
    t_max_s: float = Field(3.0, gt=0)
    initial_vehicles: Optional[int] = Field(None, ge=0, description="first-round arrivals; default all of the fleet")

    @model_validator(mode="after")
    def _check(self):
        if self.e_m >= self.r_m:
            raise ValueError("e_m must be below r_m")
        if self.v_min_kmh > self.v_max_kmh:
            raise ValueError("v_min_kmh must not exceed v_max_kmh")
        return self


class FleetSection(_Section):
    size: int = Field(20, ge=1)
    f_mem_hz: tuple[float, float] = (1.25e9, 1.75e9)
    f_core_hz: tuple[float, float] = (1.0e9, 1.6e9)
    t0_s: float = Field(0.1, ge=0)
    c1: float = Field(1.0, ge=0)
    c2: float = Field(1.0, ge=0)
    theta_mem_cycles: float = Field(5e7, ge=0)
    theta_core_cycles: float = Field(1e8, ge=0)
    p_g0_w: float = Field(2.0, ge=0)
    zeta_mem_w_per_hz: float = Field(1e-9, ge=0)
    zeta_core_w_per_v2hz: float = Field(2e-9, ge=0)
    v_core_v: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _check(self):
        for name in ("f_mem_hz", "f_core_hz"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must be an increasing pair of positive frequencies")
        return self


class RadioSection(_Section):
    n_subcarriers: int = Field(20, ge=1)
    subcarrier_bw_hz: float = Field(1e7, gt=0)
    noise_dbm_per_hz: float = -174.0
    h0: float = Field(1e-3, gt=0)
    gamma: float = Field(3.0, gt=0)
    phi_min_w: float = Field(0.1, gt=0)
    phi_max_w: float = Field(1.0, gt=0)
    model_bits: float = Field(4e7, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.phi_min_w >= self.phi_max_w:
            raise ValueError("phi_min_w must be below phi_max_w")
        return self


class RsuSection(_Section):
    f_rsu_hz: float = Field(1e12, gt=0)
    cycles_per_step: float = Field(8e8, gt=0)
    steps_per_image: int = Field(50, ge=1)
    t_s0_s: float = Field(0.05, ge=0)
    theta_s_mem_cycles: float = Field(5e7, ge=0)
    theta_s_core_cycles: float = Field(1e8, ge=0)
    f_s_mem_hz: float = Field(5e9, gt=0)
    f_s_core_hz: float = Field(2e9, gt=0)
    batch_size: int = Field(64, ge=1)


class SelectionSection(_Section):
    dataset: Literal["cifar10", "cifar100", "gtsrb"] = "cifar10"
    emd_threshold: Optional[float] = Field(None, gt=0, le=2, description="default: table lookup by dataset and alpha")
    min_selected: int = Field(0, ge=0)
    provisional_power: Literal["min", "mid", "max"] = "min"


class AllocatorSection(_Section):
    energy_cap_j: float = Field(12.0, gt=0)
    energy_cap_overrides: dict[int, float] = Field(default_factory=dict)
    l_min: float = Field(0.05, gt=0, le=1)
    eps1: float = Field(1e-4, gt=0)
    eps2_w: float = Field(1e-4, gt=0)
    eps3_images: float = Field(1.0, gt=0)
    max_dual_iters: int = Field(200, ge=1)
    max_sca_iters: int = Field(50, ge=1)
    max_bcd_sweeps: int = Field(30, ge=1)
    dual_step: float = Field(1.0, gt=0)
    gap_tol: float = Field(1e-4, gt=0)
    lambda_init: tuple[float, float] = (1.0, 1.0)


class TaskSection(_Section):
    classes: int = Field(10, ge=2)
    features: int = Field(20, ge=2)
    class_sep: float = Field(0.4, gt=0)
    noise_std: float = Field(1.0, gt=0)
    train_samples: int = Field(4000, ge=1)
    test_samples: int = Field(2000, ge=1)
    shift: float = Field(0.1, ge=0, le=1)


class TrainerSection(_Section):
    eta: float = Field(0.5, ge=0)
    local_steps: int = Field(10, ge=1)
    batch_size: Optional[int] = Field(32, ge=1)
    l2: float = Field(1e-3, ge=0)
    model: Literal["logreg", "mlp"] = "logreg"
    hidden: int = Field(32, ge=1)


class PartitionSection(_Section):
    alpha: float = Field(0.1, gt=0)


class BoundSection(_Section):
    enabled: bool = True
    beta: float = Field(1.0, gt=0)
    varrho: float = Field(1.0, gt=0)
    mu: float = Field(1e-3, gt=0)
    sigma: float = Field(0.1, ge=0)
    grad_scale: float = Field(1.0, ge=0, description="lambda_n = EMD_n * grad_scale")
    lambda_a: float = Field(0.1, ge=0)
    theta0_gap: Optional[float] = Field(None, ge=0, description="default: ln(classes)")


class RunConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = Field(0, ge=0)
    rounds: int = Field(50, ge=1)
    scheme: Literal["genfv", "fedavg", "aigc_only"] = "genfv"
    workers: int = Field(1, ge=1)
    round_interval_s: float = Field(5.0, gt=0, description="wall time between round starts")
    out_dir: Optional[str] = None
    road: RoadSection = RoadSection()
    fleet: FleetSection = FleetSection()
    radio: RadioSection = RadioSection()
    rsu: RsuSection = RsuSection()
    selection: SelectionSection = SelectionSection()
    allocator: AllocatorSection = AllocatorSection()
    task: TaskSection = TaskSection()
    trainer: TrainerSection = TrainerSection()
    partition: PartitionSection = PartitionSection()
    bound: BoundSection = BoundSection()

    @model_validator(mode="after")
    def _check(self):
        if self.bound.enabled and self.trainer.eta >= 1.0 / self.bound.varrho:
            raise ValueError("trainer.eta must be below 1/bound.varrho (or disable the bound)")
        return self

    def theta0_gap(self) -> float:
        g = self.bound.theta0_gap
        return math.log(self.task.classes) if g is None else g


def _diagnostics(exc: ValidationError) -> list[str]:
    return [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        details = _diagnostics(exc)
        raise ConfigError(f"invalid configuration ({len(details)} problem(s))", details) from None


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config(data)


def dump_config(cfg: RunConfig, path: str | Path | None = None) -> str:
    text = json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def with_overrides(cfg: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Apply dotted-path overrides such as ``{"radio.phi_max_w": 0.4}`` and revalidate."""
    data = cfg.model_dump(mode="json")
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config section in {key!r}", [f"{key}: unknown section"])
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}", [f"{key}: unknown key"])
        node[parts[-1]] = value
    return parse_config(data)

"""Command-line entry point: simulate, allocate, partition, bound, sweep."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import kernels
from .allocator import AllocationProblem, AllocatorConfig, bcd_solve, bandwidth_allocate, kkt_residuals
from .bound import BoundParams, bound_table
from .config import (AllocatorSection, ConfigError, RsuSection, RunConfig, TaskSection, dump_config,
                     load_config, with_overrides)
from .core import compute_emd
from .errors import DomainError
from .fl import SyntheticTask, dirichlet_partition
from .phy import RsuProfile, noise_power
from .rng import substream
from .simulate import Simulation, parse_axis, run_sweep, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3
log = logging.getLogger("vedgefl")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class VehicleInstance(_Strict):
    id: int
    compute_time_s: float = Field(ge=0)
    compute_energy_j: float = Field(ge=0)
    gain_per_w: Optional[float] = Field(None, gt=0, description="h0 d^-gamma / N0")
    distance_m: Optional[float] = Field(None, gt=0)
    energy_cap_j: Optional[float] = Field(None, gt=0)
    deadline_s: Optional[float] = Field(None, gt=0)


class AllocationInstance(_Strict):
    """Standalone one-round allocation problem."""
    vehicles: list[VehicleInstance]
    model_bits: float = Field(4e7, ge=0)
    subcarrier_bw_hz: float = Field(1e7, gt=0)
    n_subcarriers: int = Field(20, ge=1)
    noise_dbm_per_hz: float = -174.0
    h0: float = Field(1e-3, gt=0)
    gamma: float = Field(3.0, gt=0)
    phi_min_w: float = Field(0.1, gt=0)
    phi_max_w: float = Field(1.0, gt=0)
    energy_cap_j: float = Field(12.0, gt=0)
    l_min: float = Field(0.05, gt=0, le=1)
    prev_batches: int = Field(0, ge=0)
    idle_window_s: float = Field(3.0, ge=0)
    rsu: RsuSection = RsuSection()
    allocator: AllocatorSection = AllocatorSection()

    def problem(self) -> AllocationProblem:
        noise = noise_power(self.noise_dbm_per_hz, self.subcarrier_bw_hz)
        gains = []
        for v in self.vehicles:
            if v.gain_per_w is not None:
                gains.append(v.gain_per_w)
            elif v.distance_m is not None:
                gains.append(self.h0 * v.distance_m ** (-self.gamma) / noise)
            else:
                raise DomainError(f"vehicle {v.id}: give gain_per_w or distance_m")
        deadlines = None
        if any(v.deadline_s is not None for v in self.vehicles):
            deadlines = np.array([math.inf if v.deadline_s is None else v.deadline_s for v in self.vehicles])
        rs = self.rsu
        return AllocationProblem(
            compute_time=np.array([v.compute_time_s for v in self.vehicles]),
            compute_energy=np.array([v.compute_energy_j for v in self.vehicles]),
            gain=np.array(gains), s_omega=self.model_bits, bandwidth=self.subcarrier_bw_hz,
            n_subcarriers=self.n_subcarriers,
            energy_cap=np.array([v.energy_cap_j or self.energy_cap_j for v in self.vehicles]),
            phi_min=self.phi_min_w, phi_max=self.phi_max_w,
            rsu=RsuProfile(f_rsu=rs.f_rsu_hz, d_step=rs.cycles_per_step, steps=rs.steps_per_image,
                           t_s0=rs.t_s0_s, theta_s_mem=rs.theta_s_mem_cycles, theta_s_core=rs.theta_s_core_cycles,
                           f_s_mem=rs.f_s_mem_hz, f_s_core=rs.f_s_core_hz, batch_size=rs.batch_size),
            l_min=self.l_min, deadlines=deadlines, prev_batches=self.prev_batches,
            idle_window=self.idle_window_s, ids=[v.id for v in self.vehicles])

    def allocator_config(self) -> AllocatorConfig:
        a = self.allocator
        return AllocatorConfig(a.eps1, a.eps2_w, a.eps3_images, a.max_dual_iters, a.max_sca_iters,
                               a.max_bcd_sweeps, a.dual_step, a.gap_tol, tuple(a.lambda_init))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _emit(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, default=_json_default) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "max_rounds", None) is not None:
        over["rounds"] = min(args.max_rounds, cfg.rounds)
    return with_overrides(cfg, over) if over else cfg


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    out = args.out or cfg.out_dir or "run"
    sim = Simulation(cfg)

    def progress(rec):
        log.info("round %d: selected=%d T_bar=%.4f s b=%d acc=%.4f", rec.round, rec.n_selected, rec.T_bar_s,
                 rec.b_images, rec.accuracy)

    records = sim.run(progress=progress)
    summary = write_outputs(cfg, records, out)
    dump_config(cfg, Path(out) / "config.json")
    log.info("wrote %s (final accuracy %.4f, backend %s)", out, summary["final_accuracy"], kernels.BACKEND)
    return EXIT_OK


def cmd_allocate(args) -> int:
    try:
        inst = AllocationInstance.model_validate(json.loads(Path(args.instance).read_text()))
        prob = inst.problem()
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read instance: {exc}") from None
    except ValidationError as exc:
        raise ConfigError("invalid instance", [f"{'.'.join(map(str, e['loc']))}: {e['msg']}"
                                               for e in exc.errors()]) from None
    cfg = inst.allocator_config()
    dec = bcd_solve(prob, cfg)
    report = {"decision": dec.to_dict(), "objective_s": dec.T_bar, "backend": kernels.BACKEND}
    if math.isfinite(dec.T_bar) and prob.n:
        bw = bandwidth_allocate(prob, dec.phi, cfg)
        B = prob.upload_coef(dec.phi)
        res = kkt_residuals(bw, B, dec.phi * B)
        report["kkt"] = {"lambda1": bw.lambda1, "lambda2": bw.lambda2, "lambda3": bw.lambda3,
                         "relative_residual": [None if np.isnan(r) else float(r) for r in res]}
        report["violation"] = prob.violation(dec.l, dec.phi)
    _emit(report, args.out)
    if not dec.feasible:
        log.error("infeasible instance: binding constraint %s", dec.binding)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_partition(args) -> int:
    if args.alpha <= 0:
        raise ConfigError("invalid arguments", ["alpha: must be > 0"])
    if args.vehicles < 1:
        raise ConfigError("invalid arguments", ["vehicles: must be >= 1"])
    base = load_config(args.config).task if args.config else TaskSection()
    seed = 0 if args.seed is None else args.seed
    task = SyntheticTask(base.classes, base.features, base.class_sep, base.noise_std, base.shift,
                         base.train_samples, base.test_samples, seed)
    train, _ = task.split()
    _, hists = dirichlet_partition(train.y, args.vehicles, args.alpha, base.classes, substream(seed, "partition"))
    rows = []
    emds = []
    for vid, h in enumerate(hists):
        emd = compute_emd(h).emd if h.total else None
        if emd is not None:
            emds.append(emd)
        rows.append({"vehicle": vid, "samples": h.total, "emd": emd, "counts": [int(c) for c in h.counts]})
    summary = {"alpha": args.alpha, "vehicles": args.vehicles, "seed": seed,
               "emd_min": min(emds, default=None), "emd_mean": float(np.mean(emds)) if emds else None,
               "emd_max": max(emds, default=None)}
    _emit({"summary": summary, "vehicles": rows}, args.out)
    return EXIT_OK


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_bound(args) -> int:
    sigma, lam, rho = _floats(args.sigma), _floats(args.lam), _floats(args.rho)
    try:
        p = BoundParams(args.beta, args.varrho, args.mu, args.eta, args.h, 0, sigma, lam, rho, args.lambda_a,
                        args.kappa1, args.kappa2)
        rows = bound_table(p, args.theta0_gap, range(0, args.rounds + 1, args.every))
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    _emit(rows, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    try:
        axes = [parse_axis(a) for a in args.axis]
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"invalid axis: {exc}") from None
    rows = run_sweep(cfg, axes, jobs=args.jobs)
    out = Path(args.out or "sweep")
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(rows, indent=2) + "\n")
    log.info("wrote %d sweep rows to %s", len(rows), out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vedgefl", description=__doc__)
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="run configuration (JSON)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    s = sub.add_parser("simulate", help="run the round loop and write rounds.csv and summary.json")
    common(s)
    s.add_argument("--max-rounds", type=int, help="stop after at most this many rounds")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("allocate", help="solve one allocation instance")
    s.add_argument("instance", help="instance file (JSON)")
    s.add_argument("--out", help="write the decision here instead of stdout")
    s.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    s.set_defaults(func=cmd_allocate)

    s = sub.add_parser("partition", help="Dirichlet partition report")
    common(s)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--vehicles", type=int, default=20)
    s.set_defaults(func=cmd_partition)

    s = sub.add_parser("bound", help="convergence bound over rounds")
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--varrho", type=float, default=1.0)
    s.add_argument("--mu", type=float, default=1e-3)
    s.add_argument("--eta", type=float, default=0.5)
    s.add_argument("--h", type=int, default=10)
    s.add_argument("--rounds", type=int, default=50)
    s.add_argument("--every", type=int, default=1)
    s.add_argument("--sigma", default="0.1", help="comma-separated per-vehicle values")
    s.add_argument("--lam", default="1.0")
    s.add_argument("--rho", default="1.0")
    s.add_argument("--lambda-a", type=float, default=0.1)
    s.add_argument("--kappa1", type=float, default=1.0)
    s.add_argument("--kappa2", type=float, default=0.0)
    s.add_argument("--theta0-gap", type=float, default=math.log(10))
    s.add_argument("--out")
    s.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("sweep", help="cross-product of config overrides, one summary row per point")
    common(s)
    s.add_argument("--axis", action="append", required=True, metavar="KEY=V1,V2",
                   help="dotted config key and comma-separated JSON values; repeatable")
    s.add_argument("--jobs", type=int, default=1, help="parallel processes across points")
    s.add_argument("--max-rounds", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        for d in exc.details:
            log.error("  %s", d)
        return EXIT_CONFIG
    except DomainError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

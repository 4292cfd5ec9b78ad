"""Round loop: mobility, label sharing, selection, allocation and training."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .allocator import AllocationDecision, AllocationProblem, AllocatorConfig, bcd_solve
from .bound import BoundParams, evaluate_bound
from .config import RunConfig, with_overrides
from .fl import (MLP, Dataset, FLState, Participant, SoftmaxRegression, SyntheticTask, TrainerConfig,
                 dirichlet_partition, run_round)
from .mobility import RoadConfig, Traffic, distance_to_rsu, holding_time, round_deadline
from .phy import GpuProfile, RsuProfile, local_train_energy, local_train_time, noise_power, upload_time
from .rng import substream
from .selection import Candidate, SelectionConfig, default_emd_threshold, select_vehicles, share_labels

RECORD_COLUMNS = (
    "round", "n_in_coverage", "n_selected", "selected_ids", "T_bar_s", "b_images", "cum_images",
    "kappa1", "kappa2", "emd_mean", "accuracy", "bound", "energy_total_J", "l", "phi_W",
    "latency_s", "energy_J", "dual_iters", "sca_iters", "bcd_sweeps", "kkt_residual", "flags",
)


@dataclass
class RoundRecord:
    round: int
    n_in_coverage: int
    selected_ids: list[int]
    T_bar_s: float
    b_images: int
    cum_images: int
    kappa1: float
    kappa2: float
    emd_mean: float
    accuracy: float
    bound: float
    l: list[float]
    phi_W: list[float]
    latency_s: list[float]
    energy_J: list[float]
    dual_iters: int
    sca_iters: int
    bcd_sweeps: int
    kkt_residual: float
    flags: list[str] = field(default_factory=list)

    @property
    def n_selected(self) -> int:
        return len(self.selected_ids)

    @property
    def energy_total_J(self) -> float:
        return math.fsum(self.energy_J)

    def row(self) -> list[str]:
        def f(x):
            return repr(float(x))

        def fl(xs):
            return ";".join(f(x) for x in xs)

        return [str(self.round), str(self.n_in_coverage), str(self.n_selected),
                ";".join(str(i) for i in self.selected_ids), f(self.T_bar_s), str(self.b_images),
                str(self.cum_images), f(self.kappa1), f(self.kappa2), f(self.emd_mean), f(self.accuracy),
                f(self.bound), f(self.energy_total_J), fl(self.l), fl(self.phi_W), fl(self.latency_s),
                fl(self.energy_J), str(self.dual_iters), str(self.sca_iters), str(self.bcd_sweeps),
                f(self.kkt_residual), ";".join(self.flags)]


def records_csv(records: Sequence[RoundRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def summarize(cfg: RunConfig, records: Sequence[RoundRecord]) -> dict:
    finite = [r.T_bar_s for r in records if math.isfinite(r.T_bar_s)]
    return {
        "schema_version": cfg.schema_version,
        "seed": cfg.seed,
        "scheme": cfg.scheme,
        "rounds": len(records),
        "final_accuracy": records[-1].accuracy if records else float("nan"),
        "mean_T_bar_s": math.fsum(finite) / len(finite) if finite else float("nan"),
        "total_energy_J": math.fsum(r.energy_total_J for r in records),
        "total_generated_images": records[-1].cum_images if records else 0,
        "mean_selected": sum(r.n_selected for r in records) / len(records) if records else 0.0,
        "infeasible_rounds": sum(1 for r in records if not math.isfinite(r.T_bar_s)),
        "bcd_unconverged_rounds": sum(1 for r in records if "bcd-max-sweeps" in r.flags),
        "max_bcd_sweeps": max((r.bcd_sweeps for r in records), default=0),
    }


class Simulation:
    """One seeded run of the two-scale loop; every random draw comes from a named substream."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        seed = cfg.seed
        t = cfg.task
        self.task = SyntheticTask(t.classes, t.features, t.class_sep, t.noise_std, t.shift,
                                  t.train_samples, t.test_samples, seed)
        self.train, self.test = self.task.split()
        self.indices, self.hists = dirichlet_partition(self.train.y, cfg.fleet.size, cfg.partition.alpha,
                                                       t.classes, substream(seed, "partition"))
        self.trainer = TrainerConfig(cfg.trainer.eta, cfg.trainer.local_steps, cfg.trainer.batch_size,
                                     cfg.rounds, seed)
        fl = cfg.fleet
        rng = substream(seed, "fleet")
        f_mem = rng.uniform(*fl.f_mem_hz, size=fl.size)
        f_core = rng.uniform(*fl.f_core_hz, size=fl.size)
        self.gpus = [GpuProfile(t0=fl.t0_s, c1=fl.c1, c2=fl.c2, theta_mem=fl.theta_mem_cycles,
                                theta_core=fl.theta_core_cycles, f_mem=float(fm), f_core=float(fc),
                                p_g0=fl.p_g0_w, zeta_mem=fl.zeta_mem_w_per_hz, zeta_core=fl.zeta_core_w_per_v2hz,
                                v_core=fl.v_core_v, batches=cfg.trainer.local_steps)
                     for fm, fc in zip(f_mem, f_core)]
        rd = cfg.road
        self.road = RoadConfig(rd.r_m, rd.e_m, rd.v_max_kmh, rd.v_min_kmh, rd.m_max, rd.k, rd.arrival_rate,
                               rd.t_max_s)
        self.traffic = Traffic(self.road, fl.size, substream(seed, "mobility"))
        rs = cfg.rsu
        self.rsu = RsuProfile(f_rsu=rs.f_rsu_hz, d_step=rs.cycles_per_step, steps=rs.steps_per_image,
                              t_s0=rs.t_s0_s, theta_s_mem=rs.theta_s_mem_cycles,
                              theta_s_core=rs.theta_s_core_cycles, f_s_mem=rs.f_s_mem_hz,
                              f_s_core=rs.f_s_core_hz, batch_size=rs.batch_size)
        al = cfg.allocator
        self.alloc_cfg = AllocatorConfig(al.eps1, al.eps2_w, al.eps3_images, al.max_dual_iters,
                                         al.max_sca_iters, al.max_bcd_sweeps, al.dual_step, al.gap_tol,
                                         tuple(al.lambda_init))
        thr = cfg.selection.emd_threshold
        if thr is None:
            thr = default_emd_threshold(cfg.selection.dataset, cfg.partition.alpha)
        self.sel_cfg = SelectionConfig(thr, cfg.selection.min_selected)
        self.noise = noise_power(cfg.radio.noise_dbm_per_hz, cfg.radio.subcarrier_bw_hz)
        tr = cfg.trainer
        if tr.model == "logreg":
            learner = SoftmaxRegression(t.features, t.classes, tr.l2)
        else:
            learner = MLP(t.features, t.classes, tr.hidden, tr.l2)
        self.state = FLState(learner, learner.init(substream(seed, "init")), Dataset.empty(t.features))
        self.records: list[RoundRecord] = []
        self.last_reports: list = []
        self.last_decision: AllocationDecision | None = None

    # per-vehicle physical quantities ------------------------------------------------
    def gain(self, vid: int) -> float:
        d = distance_to_rsu(self.road, self.traffic.active[vid].x)
        return self.cfg.radio.h0 * d ** (-self.cfg.radio.gamma) / self.noise

    def energy_cap(self, vid: int) -> float:
        return self.cfg.allocator.energy_cap_overrides.get(vid, self.cfg.allocator.energy_cap_j)

    def provisional_power(self) -> float:
        r = self.cfg.radio
        return {"min": r.phi_min_w, "max": r.phi_max_w,
                "mid": 0.5 * (r.phi_min_w + r.phi_max_w)}[self.cfg.selection.provisional_power]

    def estimate_latency(self, vid: int) -> float:
        """Compute time plus upload time on one full subcarrier at the provisional power."""
        r = self.cfg.radio
        up = float(upload_time(self.provisional_power(), r.model_bits / r.subcarrier_bw_hz, self.gain(vid)))
        return local_train_time(self.gpus[vid]) + up

    def min_energy(self, vid: int) -> float:
        """Energy at a full subcarrier and minimum power, the least any allocation can reach."""
        r = self.cfg.radio
        up = float(upload_time(r.phi_min_w, r.model_bits / r.subcarrier_bw_hz, self.gain(vid)))
        return local_train_energy(self.gpus[vid]) + r.phi_min_w * up

    def build_problem(self, ids: Sequence[int]) -> AllocationProblem:
        r = self.cfg.radio
        cum = len(self.state.generated)
        return AllocationProblem(
            compute_time=np.array([local_train_time(self.gpus[i]) for i in ids]),
            compute_energy=np.array([local_train_energy(self.gpus[i]) for i in ids]),
            gain=np.array([self.gain(i) for i in ids]),
            s_omega=r.model_bits, bandwidth=r.subcarrier_bw_hz, n_subcarriers=r.n_subcarriers,
            energy_cap=np.array([self.energy_cap(i) for i in ids]), phi_min=r.phi_min_w,
            phi_max=r.phi_max_w, rsu=self.rsu, l_min=self.cfg.allocator.l_min,
            deadlines=np.array([round_deadline(self.road, holding_time(self.road, self.traffic.active[i]))
                                for i in ids]),
            prev_batches=-(-cum // self.rsu.batch_size), idle_window=self.road.t_max, ids=list(ids))

    # round --------------------------------------------------------------------------
    def step(self) -> RoundRecord:
        cfg = self.cfg
        t = len(self.records)
        self.last_reports = []
        if t == 0:
            first = cfg.road.initial_vehicles
            self.traffic.arrive(cfg.fleet.size if first is None else first)
        else:
            self.traffic.arrive()
        active = sorted(self.traffic.active)
        shared = share_labels((vid, self.hists[vid], {"x_m": self.traffic.active[vid].x}) for vid in active)
        emd = {s.vehicle_id: (s.quality.emd if s.quality is not None else None) for s in shared}
        flags: list[str] = []

        if cfg.scheme == "aigc_only":
            selected: list[int] = []
        elif cfg.scheme == "fedavg":
            pool = [v for v in active if emd[v] is not None]
            k = min(cfg.radio.n_subcarriers, len(pool))
            rng = substream(cfg.seed, "fedavg-select", t)
            selected = sorted(int(i) for i in rng.choice(pool, size=k, replace=False)) if k else []
        else:
            cands = []
            for vid in active:
                th = holding_time(self.road, self.traffic.active[vid])
                cands.append(Candidate(vid, emd[vid], th, round_deadline(self.road, th)))
            selected, self.last_reports, below = select_vehicles(cands, self.sel_cfg, self.estimate_latency)
            if below:
                flags.append("below-min-selected")

        unreachable = [v for v in selected if self.min_energy(v) > self.energy_cap(v)]
        if unreachable:
            # these vehicles cannot meet the energy cap at any share or power
            flags.append("energy-excluded:" + "/".join(str(v) for v in unreachable))
            selected = [v for v in selected if v not in unreachable]
        decision: AllocationDecision = bcd_solve(self.build_problem(selected), self.alloc_cfg)
        flags.extend(decision.flags)
        self.last_decision = decision
        participants = []
        if decision.feasible or math.isfinite(decision.T_bar):
            participants = [Participant(v, self.train.subset(self.indices[v]), emd[v]) for v in selected]
        gen_labels = sorted({c for s in shared for c in np.flatnonzero(s.histogram.counts)})
        b = decision.b_images if gen_labels else 0
        outcome = run_round(self.state, self.task, participants, b, gen_labels, self.trainer, self.test,
                            cfg.seed, cfg.scheme, cfg.workers)
        flags.extend(outcome.flags)

        bound = float("nan")
        if cfg.bound.enabled and participants:
            bp = cfg.bound
            n = len(participants)
            params = BoundParams(bp.beta, bp.varrho, bp.mu, cfg.trainer.eta, cfg.trainer.local_steps, t + 1,
                                 [bp.sigma] * n, [p.emd * bp.grad_scale for p in participants], outcome.rho,
                                 bp.lambda_a, outcome.policy.kappa1, outcome.policy.kappa2)
            bound = evaluate_bound(params, cfg.theta0_gap())

        rec = RoundRecord(
            round=t, n_in_coverage=len(active), selected_ids=list(decision.ids), T_bar_s=decision.T_bar,
            b_images=outcome.n_generated, cum_images=outcome.cum_generated, kappa1=outcome.policy.kappa1,
            kappa2=outcome.policy.kappa2, emd_mean=outcome.emd_mean, accuracy=outcome.accuracy, bound=bound,
            l=[float(x) for x in decision.l], phi_W=[float(x) for x in decision.phi],
            latency_s=[float(x) for x in decision.latency], energy_J=[float(x) for x in decision.energy],
            dual_iters=decision.dual_iters, sca_iters=decision.sca_iters, bcd_sweeps=decision.sweeps,
            kkt_residual=decision.kkt_residual, flags=flags)
        self.records.append(rec)
        self.traffic.advance(cfg.round_interval_s)
        return rec

    def run(self, rounds: int | None = None, progress: Callable[[RoundRecord], None] | None = None
            ) -> list[RoundRecord]:
        for _ in range(self.cfg.rounds if rounds is None else rounds):
            rec = self.step()
            if progress is not None:
                progress(rec)
        return self.records


def write_outputs(cfg: RunConfig, records: Sequence[RoundRecord], out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rounds.csv").write_text(records_csv(records))
    summary = summarize(cfg, records)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def run_config(cfg: RunConfig, rounds: int | None = None) -> tuple[list[RoundRecord], dict]:
    sim = Simulation(cfg)
    records = sim.run(rounds)
    return records, summarize(cfg, records)


def parse_axis(spec: str) -> tuple[str, list]:
    """``section.key=v1,v2,...`` with JSON-parsed values."""
    if "=" not in spec:
        raise ValueError(f"axis {spec!r} must look like section.key=v1,v2")
    key, values = spec.split("=", 1)
    vals = [json.loads(v) for v in values.split(",") if v.strip()]
    if not key.strip() or not vals:
        raise ValueError(f"axis {spec!r} has no key or no values")
    return key.strip(), vals


def sweep_points(cfg: RunConfig, axes: Sequence[tuple[str, list]]) -> list[tuple[dict, RunConfig]]:
    """Cross-product of axis values, validated up front."""
    points = []
    keys = [k for k, _ in axes]
    for combo in itertools.product(*(v for _, v in axes)):
        over = dict(zip(keys, combo))
        points.append((over, with_overrides(cfg, over)))
    return points


def _run_point(args):
    over, cfg, rounds = args
    _, summary = run_config(cfg, rounds)
    return {**over, **summary}


def run_sweep(cfg: RunConfig, axes: Sequence[tuple[str, list]], jobs: int = 1,
              rounds: int | None = None) -> list[dict]:
    points = sweep_points(cfg, axes)
    work = [(over, c, rounds) for over, c in points]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_point, work))
    return [_run_point(w) for w in work]

"""Acceptance checks, one test per criterion; each prints a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` (the lines are printed even
without ``-s``).
"""
import contextlib
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from instances import BW, S_OMEGA, energy_floor, random_problem
from oracles import (bound_exact, central_diff, e_up, emd_float_terms_exact_sum, exhaustive_selection,
                     makespan_grid, power_grid, t_up)
from vedgefl.allocator import (AllocationProblem, bandwidth_allocate, bcd_solve, images_budget, kkt_residuals,
                               power_assign)
from vedgefl.bound import BoundParams, chi, evaluate_bound, heterogeneity, psi
from vedgefl.cli import main as cli_main
from vedgefl.config import RunConfig, dump_config, with_overrides
from vedgefl.core import LabelHistogram, ModelParams, aggregate, compute_emd, compute_kappa, data_weights
from vedgefl.errors import DomainError, InfeasibleError
from vedgefl.mobility import RoadConfig, round_deadline
from vedgefl.phy import (augmented_train_time, generation_latency, upload_energy_derivative,
                         upload_time_derivative)
from vedgefl.selection import Candidate, SelectionConfig, select_vehicles
from vedgefl.simulate import Simulation, run_sweep


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def run(number, limit_s):
        notes = []
        start = time.perf_counter()
        ok = False
        try:
            yield notes
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            within = elapsed < limit_s
            status = "PASS" if ok and within else "FAIL"
            extra = "; ".join(notes)
            if not within:
                extra = f"runtime {elapsed:.2f} s exceeds {limit_s} s; " + extra
            with capsys.disabled():
                print(f"\nCRITERION {number}: {status} ({elapsed:.2f} s) {extra}".rstrip())
        assert elapsed < limit_s, f"criterion {number} took {elapsed:.2f} s (limit {limit_s} s)"
    return run


def test_criterion_01_emd_oracle(criterion):
    with criterion(1, 1.0) as notes:
        rng = np.random.default_rng(1)
        for i in range(1000):
            y = (2, 10, 43, 100)[i % 4]
            kind = i % 5
            if kind == 0:
                counts = [0] * y
                counts[int(rng.integers(y))] = int(rng.integers(1, 500))
            elif kind == 1:
                counts = [int(rng.integers(1, 50))] * y
            else:
                counts = rng.integers(0, 1000, y).tolist()
                if sum(counts) == 0:
                    counts[0] = 1
            emd = compute_emd(LabelHistogram(counts)).emd
            assert emd == emd_float_terms_exact_sum(counts), (counts, emd)
            assert 0.0 <= emd <= 2.0 * (1.0 - 1.0 / y)
        notes.append("1000 histograms exact")


def test_criterion_02_kappa_policy(criterion):
    with criterion(2, 1.0) as notes:
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            emds = rng.uniform(0.0, 2.0, int(rng.integers(1, 20))).tolist()
            pol = compute_kappa(emds)
            assert pol.kappa1 + pol.kappa2 == 1.0
        for trial in range(50):
            y = int(rng.integers(2, 50))
            hists = [LabelHistogram([int(c)] * y) for c in rng.integers(1, 40, int(rng.integers(1, 8)))]
            pol = compute_kappa([compute_emd(h) for h in hists])
            assert pol.kappa2 == 0.0
            locs = [ModelParams(rng.normal(size=30)) for _ in hists]
            rho = data_weights([h.total for h in hists])
            out = aggregate(list(zip(locs, rho)), ModelParams(rng.normal(size=30)), pol).theta
            fed = sum(r * p.theta for p, r in zip(locs, rho))
            np.testing.assert_allclose(out, fed, rtol=1e-12, atol=0)
        notes.append("10000 sums exact, uniform case equals FedAvg")


def test_criterion_03_kkt_stationarity(criterion):
    with criterion(3, 30.0) as notes:
        rng = np.random.default_rng(3)
        solved = infeasible = interior = 0
        worst_kkt = worst_grid = 0.0
        while solved + infeasible < 100:
            n = int(rng.integers(2, 6))
            prob = random_problem(rng, n, M=int(rng.integers(1, n)))
            phi = rng.uniform(0.1, 1.0, n)
            lo, full = energy_floor(prob, phi)
            if lo.sum() > prob.n_subcarriers:
                with pytest.raises(InfeasibleError):
                    bandwidth_allocate(prob, phi)
                infeasible += 1
                continue
            res = bandwidth_allocate(prob, phi)
            assert res.converged
            r = kkt_residuals(res, full, phi * full)
            interior += int(np.sum(~np.isnan(r)))
            worst_kkt = max(worst_kkt, float(np.nanmax(r, initial=0.0)))
            grid = makespan_grid(prob.compute_time, full, lo, prob.n_subcarriers)
            worst_grid = max(worst_grid, prob.objective(res.l, phi) / grid - 1.0)
            solved += 1
        assert worst_kkt <= 1e-4
        assert worst_grid <= 0.02
        notes.append(f"{solved} solved, {infeasible} infeasible, {interior} interior shares, "
                     f"max KKT residual {worst_kkt:.1e}, max excess over grid {worst_grid:+.2%}")


def test_criterion_04_sca(criterion):
    with criterion(4, 30.0) as notes:
        rng = np.random.default_rng(4)
        for _ in range(100):
            a = rng.uniform(0.5, 8.0)
            b = 10 ** rng.uniform(1, 5)
            phi = rng.uniform(0.1, 1.0)
            h = 1e-6 * phi
            fd_t = central_diff(lambda p: t_up(p, a, b), phi, h)
            fd_e = central_diff(lambda p: e_up(p, a, b), phi, h)
            assert abs(upload_time_derivative(phi, a, b) - fd_t) <= 1e-5 * abs(fd_t)
            assert abs(upload_energy_derivative(phi, a, b) - fd_e) <= 1e-5 * abs(fd_e)
        worst = 0.0
        checked = 0
        for _ in range(100):
            gain = 10 ** rng.uniform(2, 5)
            l = rng.uniform(0.1, 1.0)
            a = S_OMEGA / (l * BW)
            cap_up = e_up(rng.uniform(0.1, 1.0), a, gain) * rng.uniform(0.9, 1.3)
            prob = AllocationProblem(compute_time=[1.0], compute_energy=[6.0], gain=[gain], s_omega=S_OMEGA,
                                     bandwidth=BW, n_subcarriers=1, energy_cap=6.0 + cap_up, phi_min=0.1,
                                     phi_max=1.0)
            ref = power_grid(a, gain, cap_up, 0.1, 1.0)
            if ref is None:
                with pytest.raises(InfeasibleError):
                    power_assign(prob, [l])
                continue
            phi = power_assign(prob, [l], phi0=rng.uniform(0.1, 1.0)).phi
            worst = max(worst, abs(float(phi[0]) - ref))
            v = prob.violation([l], phi)
            assert max(v["energy"], v["power_lower"], v["power_upper"]) <= 1e-6
            checked += 1
        assert worst <= 1e-3
        notes.append(f"derivatives at 100 points; {checked} power instances, max |phi - grid| {worst:.1e} W")


def test_criterion_05_generation_budget(criterion):
    with criterion(5, 1.0) as notes:
        rng = np.random.default_rng(5)
        clamped = 0
        for i in range(1000):
            T = float(rng.uniform(0, 5))
            Ts = float(rng.uniform(0, 5))
            t0 = float(rng.uniform(1e-3, 0.5))
            if i % 4 == 0:
                Ts = T + float(rng.uniform(0, 1))   # augmented training outlasts the round
            b = images_budget(T, Ts, t0)
            assert b == max(math.floor((T - Ts) / t0), 0)
            # the float quotient may round across an integer only within one ulp of it
            exact = max(math.floor((Fraction(T) - Fraction(Ts)) / Fraction(t0)), 0)
            assert b == exact or abs((T - Ts) / t0 - round((T - Ts) / t0)) < 1e-12
            clamped += b == 0
        for _ in range(60):
            n = int(rng.integers(1, 6))
            prob = random_problem(rng, n, prev_batches=int(rng.integers(0, 40)))
            dec = bcd_solve(prob)
            if not math.isfinite(dec.T_bar):
                continue
            t_gen = generation_latency(prob.rsu, dec.b_images)
            t_aug = augmented_train_time(prob.rsu, prob.prev_batches)
            if dec.b_images > 0:
                assert t_gen + t_aug <= dec.T_bar + prob.rsu.t0_img
            else:
                assert dec.T_bar - t_aug < prob.rsu.t0_img
        assert clamped > 0
        notes.append(f"1000 triples ({clamped} clamped to zero), decisions within one image of the window")


def test_criterion_06_bcd_monotone(criterion):
    with criterion(6, 60.0) as notes:
        rng = np.random.default_rng(6)
        done = 0
        worst_sweeps = 0
        while done < 100:
            n = int(rng.integers(2, 9))
            prob = random_problem(rng, n, prev_batches=int(rng.integers(0, 20)))
            dec = bcd_solve(prob)
            if not math.isfinite(dec.T_bar):
                continue
            tr = dec.trace
            assert all(b <= a + 1e-9 for a, b in zip(tr, tr[1:]))
            assert dec.sweeps <= 30
            worst_sweeps = max(worst_sweeps, dec.sweeps)
            done += 1
        notes.append(f"100 instances, at most {worst_sweeps} sweeps")


def test_criterion_07_selection(criterion):
    with criterion(7, 10.0) as notes:
        rng = np.random.default_rng(7)
        for _ in range(400):
            n = int(rng.integers(0, 13))
            est = rng.uniform(0, 4, n).tolist()
            dl = rng.uniform(0, 4, n).tolist()
            emd = [None if rng.random() < 0.1 else float(rng.uniform(0, 2)) for _ in range(n)]
            thr = float(rng.uniform(0, 2))
            cands = [Candidate(i, emd[i], dl[i], dl[i]) for i in range(n)]
            sel, _, _ = select_vehicles(cands, SelectionConfig(thr), lambda v: est[v])
            assert sel == exhaustive_selection(est, dl, emd, thr)
        for _ in range(1000):
            n = int(rng.integers(1, 20))
            est = rng.uniform(0, 4, n)
            hold = rng.uniform(0, 6, n)
            emd = rng.uniform(0, 2, n)
            th1, th2 = sorted(rng.uniform(0, 2, 2))
            tm1, tm2 = sorted(rng.uniform(0.5, 5, 2))

            def pick(thr, t_max):
                road = RoadConfig(t_max=t_max)
                cands = [Candidate(i, float(emd[i]), float(hold[i]), round_deadline(road, float(hold[i])))
                         for i in range(n)]
                return set(select_vehicles(cands, SelectionConfig(float(thr)), lambda v: est[v])[0])

            assert pick(th1, tm1) <= pick(th2, tm1)
            assert pick(th1, tm1) <= pick(th1, tm2)
        notes.append("400 exhaustive comparisons (N <= 12), 1000 monotonicity trials")


BOUND_SETS = [dict(beta=1.0, varrho=2.0, mu=1.0, eta=0.25, h=2, T=3)]


def _bound_sets():
    rng = np.random.default_rng(8)
    sets = list(BOUND_SETS)
    while len(sets) < 20:
        varrho = float(rng.choice([0.5, 1.0, 2.0, 4.0]))
        sets.append(dict(beta=float(rng.choice([0.5, 1.0, 2.0])), varrho=varrho,
                         mu=float(rng.choice([1e-3, 0.01, 0.1, 0.25])), eta=float(rng.choice([0.1, 0.3, 0.6, 0.9])) / varrho,
                         h=int(rng.integers(1, 11)), T=int(rng.integers(0, 60))))
    return sets


def test_criterion_08_bound_arithmetic(criterion):
    with criterion(8, 1.0) as notes:
        sigma, lam, rho = [0.1, 0.2, 0.05], [0.3, 0.5, 1.2], [0.2, 0.5, 0.3]
        for s in _bound_sets():
            p = BoundParams(sigma=sigma, lam=lam, rho=rho, lambda_a=0.1, kappa1=0.8, kappa2=0.2, **s)
            c, ps, lm, b = bound_exact(s["beta"], s["varrho"], s["mu"], s["eta"], s["h"], s["T"], sigma, lam, rho,
                                       0.1, 0.8, 0.2, 2.0)
            for got, want in ((chi(p), c), (psi(p), ps), (heterogeneity(p), lm), (evaluate_bound(p, 2.0), b)):
                assert abs(got - want) <= 1e-12 * abs(want)
        assert chi(BoundParams(sigma=sigma, lam=lam, rho=rho, lambda_a=0.1, kappa1=0.8, kappa2=0.2,
                               **BOUND_SETS[0])) == 0.75
        for varrho in (0.5, 1.0, 3.0):
            edge = 1.0 / varrho
            for eta, raises in ((edge, True), (edge * 1.5, True), (math.nextafter(edge, 0.0), False)):
                p = BoundParams(1.0, varrho, 1e-3, eta, 2, 5, sigma, lam, rho, 0.1, 0.8, 0.2)
                if raises:
                    with pytest.raises(DomainError):
                        evaluate_bound(p, 1.0)
                else:
                    assert math.isfinite(evaluate_bound(p, 1.0))
        notes.append("20 parameter sets within 1e-12, premise edge exact")


def _final_accuracies(**over):
    accs = []
    for seed in range(5):
        cfg = with_overrides(RunConfig(), {"seed": seed, "fleet.size": 20, "rounds": 50, **over})
        accs.append([r.accuracy for r in Simulation(cfg).run()])
    return np.array(accs)


def test_criterion_09_learning_trends(criterion):
    with criterion(9, 600.0) as notes:
        iid = _final_accuracies(scheme="fedavg", **{"partition.alpha": 1.0})[:, -1].mean()
        skew = _final_accuracies(scheme="fedavg", **{"partition.alpha": 0.1})[:, -1].mean()
        genfv = _final_accuracies(scheme="genfv", **{"partition.alpha": 0.1, "task.shift": 0.1})[:, -1].mean()
        far_genfv = _final_accuracies(scheme="genfv", **{"task.shift": 0.4})
        far_gen_only = _final_accuracies(scheme="aigc_only", **{"task.shift": 0.4})
        notes.append(f"(a) FedAvg a=1.0 {iid:.4f} vs a=0.1 {skew:.4f}")
        notes.append(f"(b) GenFV {genfv:.4f} vs FedAvg {skew:.4f}")
        curve = far_gen_only.mean(axis=0)
        late_gain = curve[40:].mean() - curve[30:40].mean()
        notes.append(f"(c) generator-only {curve[-1]:.4f} (last-decade change {late_gain:+.4f}) "
                     f"vs GenFV {far_genfv[:, -1].mean():.4f}")
        assert iid >= skew
        assert genfv - skew > 0
        assert abs(late_gain) <= 0.01
        assert far_gen_only[:, -1].mean() < far_genfv[:, -1].mean()


def test_criterion_10_system_trends(criterion):
    with criterion(10, 120.0) as notes:
        phis = [0.2, 0.4, 0.6, 0.8, 1.0]
        tmaxes = [2.0, 2.5, 3.0]
        rows = run_sweep(RunConfig(), [("road.t_max_s", tmaxes), ("radio.phi_max_w", phis)])
        obj = {(r["road.t_max_s"], r["radio.phi_max_w"]): r["mean_T_bar_s"] for r in rows}
        for t in tmaxes:
            series = [obj[t, p] for p in phis]
            assert all(b <= a + 1e-12 for a, b in zip(series, series[1:])), (t, series)
        for p in phis:
            col = [obj[t, p] for t in tmaxes]
            assert all(a <= b + 1e-12 for a, b in zip(col, col[1:])), (p, col)
        notes.append("mean makespan at phi_max=0.2/1.0: " +
                     ", ".join(f"t_max {t}: {obj[t, 0.2]:.3f}/{obj[t, 1.0]:.3f} s" for t in tmaxes))


def test_criterion_11_reproducibility(criterion, tmp_path):
    with criterion(11, 120.0) as notes:
        outs = []
        for i, workers in enumerate((1, 1, 4)):
            cfg_path = tmp_path / f"cfg{i}.json"
            dump_config(with_overrides(RunConfig(), {"seed": 42, "workers": workers}), cfg_path)
            out = tmp_path / f"run{i}"
            assert cli_main(["--quiet", "simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
            outs.append((out / "rounds.csv").read_bytes())
        assert outs[0] == outs[1] == outs[2]
        notes.append(f"3 runs (workers 1, 1, 4), {len(outs[0])} identical bytes")

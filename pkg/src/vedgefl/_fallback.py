"""Numpy implementations of the allocator's inner loops.

Same signatures and semantics as the compiled ``_kernels`` module; selected
automatically when the extension is unavailable.
"""
from __future__ import annotations

import math

import numpy as np

LN2 = math.log(2.0)

SCA_OK = 0
SCA_INFEASIBLE = 1
SCA_GAP = 2
SCA_MAXITER = 3

# relative makespan window used to pick the binding set for the dual probe
KKT_TOL = 1e-3


def _share(coef, lo, hi, lam3):
    if lam3 == 0.0:
        return hi.copy()
    with np.errstate(divide="ignore"):
        return np.clip(np.sqrt(coef / lam3), lo, hi)


def solve_price(coef, lo, hi, M):
    """Smallest lam3 >= 0 whose box-clipped closed-form shares sum to at most M."""
    if hi.sum() <= M:
        return 0.0
    pos = coef > 0
    if not pos.any():
        return 1.0
    c, l_, h_ = coef[pos], lo[pos], hi[pos]
    bps = np.sort(np.concatenate([c / h_ ** 2, c / l_ ** 2]))
    if _share(coef, lo, hi, bps[0]).sum() <= M:
        return float(bps[0])
    # first breakpoint where the total drops to M or below
    lo_i, hi_i = 0, bps.shape[0] - 1
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if _share(coef, lo, hi, bps[mid]).sum() <= M:
            hi_i = mid
        else:
            lo_i = mid
    left, right = float(bps[lo_i]), float(bps[hi_i])
    probe = math.sqrt(left * right) if left > 0 else right / 2
    root = np.sqrt(coef / probe)
    # shares clipped at a box edge stay fixed inside the bracket
    inner = pos & (root > lo) & (root < hi)
    s = float(np.sqrt(coef[inner]).sum())
    fixed = float(lo[~inner & (root <= lo)].sum() + hi[~inner & (root >= hi)].sum())
    if s <= 0 or M - fixed <= 0:
        return right
    lam3 = min(max((s / (M - fixed)) ** 2, left), right)
    while _share(coef, lo, hi, lam3).sum() > M:
        lam3 = math.nextafter(lam3, math.inf) * (1 + 1e-15)
    return lam3


def _dual_value(lam1, lam2, A, B, C, D, lo, hi, M, e_cap):
    coef = lam1 * B + lam2 * D
    lam3 = solve_price(coef, lo, hi, M)
    l = _share(coef, lo, hi, lam3)
    dual = float((lam1 * A).sum() + lam2 * (C - e_cap).sum() - lam3 * M + (coef / l + lam3 * l).sum())
    return dual, lam3, l


def dual_ascent(A, B, C, D, lo, hi, M, e_cap, lam1, lam2, eta, eps, gap_tol, max_iter):
    """Dual ascent for min max_n (A_n + B_n/l_n) s.t. sum l <= M, lo <= l <= hi.

    lam1 lives on the simplex and moves by exponentiated subgradient steps,
    lam3 (bandwidth price) is set to its exact maximizer each iteration and
    lam2 (summed energy) to its coordinate maximizer: per-vehicle energy caps
    are already folded into lo, so lam2 is only pushed up when the summed
    constraint is violated.  A step that lowers the dual is rejected and the
    step size halved.

    Every simplex point gives a valid lower bound, so besides the iterate the
    dual is also probed at the multipliers implied by the current shares
    (weight l_n^2/B_n on vehicles within KKT_TOL of the makespan).  This
    closes the certificate when the EG weights of non-binding vehicles are
    still decaying.

    Returns (l, lam1, lam2, lam3, iterations, converged, gap).
    """
    A = np.asarray(A, float); B = np.asarray(B, float)
    C = np.asarray(C, float); D = np.asarray(D, float)
    lo = np.asarray(lo, float); hi = np.asarray(hi, float)
    e_cap = np.broadcast_to(np.asarray(e_cap, float), A.shape)
    e_scale = float(np.mean(e_cap))
    lam1 = np.asarray(lam1, float).copy()
    lam1 /= lam1.sum()
    lam2 = float(lam2)
    zero2 = np.zeros_like(A)

    best_p = math.inf
    # vertex of the simplex with every vehicle at its widest share
    best_d = float(np.max(A + B / hi))
    best = None
    prev = None
    acc = None
    converged = False
    k = 0
    gap = math.inf
    for k in range(1, max_iter + 1):
        dual, lam3, l = _dual_value(lam1, lam2, A, B, C, D, lo, hi, M, e_cap)
        up = B / l
        T = A + up
        P = float(T.max())
        if P < best_p:
            best_p = P
            best = (l, lam1.copy(), lam2, lam3)
        best_d = max(best_d, dual)
        w = np.where(T >= P * (1.0 - KKT_TOL), l * l / B, 0.0)
        if w.sum() > 0:
            w /= w.sum()
            best_d = max(best_d, _dual_value(w, 0.0, A, B, zero2, zero2, lo, hi, M, zero2)[0])
        gap = (best_p - best_d) / best_p if best_p > 0 else 0.0
        if prev is not None and float(np.abs(l - prev).max()) < eps and gap <= gap_tol:
            converged = True
            break
        prev = l

        if acc is None or dual >= acc[0]:
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(up > 0, (T - P) / up, np.where(T < P, -1.0, 0.0))
            g = np.maximum(g, -1.0)
            g2 = float((C + D / l - e_cap).sum()) / e_scale
            acc = (dual, lam1.copy(), lam2, g, g2)
        else:
            eta *= 0.5
        _, base1, base2, g, g2 = acc
        lam1 = base1 * np.exp(eta * g)
        lam1 /= lam1.sum()
        lam2 = max(base2 + eta * g2, 0.0) if g2 > 0 else 0.0

    l, lam1, lam2, lam3 = best
    return l, lam1, lam2, lam3, k, converged, max(gap, 0.0)


def _e(phi, a, b):
    return phi * a * LN2 / math.log1p(b * phi)


def _de(phi, a, b):
    u = 1.0 + b * phi
    lg = math.log1p(b * phi) / LN2
    return a / lg - a * b * phi / (LN2 * u * lg * lg)


def _sca_one(a, b, cap, phi0, phi_min, phi_max, eps, max_iter):
    if a == 0.0 or math.isinf(cap):
        return phi_max, 0, SCA_OK
    if _e(phi_min, a, b) > cap:
        return phi_min, 0, SCA_INFEASIBLE
    phi = min(max(phi0, phi_min), phi_max)
    feasible = phi if _e(phi, a, b) <= cap else phi_min
    status = SCA_MAXITER
    it = 0
    for it in range(1, max_iter + 1):
        ei = _e(phi, a, b)
        di = _de(phi, a, b)
        cand = phi + (cap - ei) / di if di > 0 else phi_max
        cand = min(max(cand, phi_min), phi_max)
        step = abs(cand - phi)
        phi = cand
        if _e(phi, a, b) <= cap:
            feasible = phi
        if step <= eps:
            status = SCA_OK
            break
    if _e(phi, a, b) > cap * (1.0 + 1e-9):
        lo_, hi_ = feasible, phi
        for _ in range(100):
            mid = 0.5 * (lo_ + hi_)
            if _e(mid, a, b) <= cap:
                lo_ = mid
            else:
                hi_ = mid
        phi = lo_
        status = SCA_GAP
    return phi, it, status


def sca_power(a, b, cap, phi0, phi_min, phi_max, eps, max_iter):
    """Per-vehicle SCA: maximize phi subject to the linearized upload-energy cap.

    ``a = s/(l W)``, ``b`` is the SNR gain per watt and ``cap`` the upload
    energy budget. Returns arrays (phi, iterations, status).
    """
    a = np.asarray(a, float); b = np.asarray(b, float)
    cap = np.asarray(cap, float); phi0 = np.asarray(phi0, float)
    n = a.shape[0]
    phi = np.empty(n); iters = np.zeros(n, dtype=np.int64); status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        phi[i], iters[i], status[i] = _sca_one(float(a[i]), float(b[i]), float(cap[i]), float(phi0[i]),
                                               phi_min, phi_max, eps, max_iter)
    return phi, iters, status

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled allocator inner loops; mirrors vedgefl._fallback."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, log1p, fabs, INFINITY, nextafter, isinf
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()

cdef double LN2 = log(2.0)

cdef int SCA_OK = 0
cdef int SCA_INFEASIBLE = 1
cdef int SCA_GAP = 2
cdef int SCA_MAXITER = 3

cdef double KKT_TOL = 1e-3


cdef inline double _clip(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef double _share_sum(const double[:] coef, const double[:] lo, const double[:] hi,
                       double lam3, Py_ssize_t n) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    if lam3 == 0.0:
        for i in range(n):
            s += hi[i]
        return s
    for i in range(n):
        s += _clip(sqrt(coef[i] / lam3), lo[i], hi[i])
    return s


cdef int _cmp(const void* a, const void* b) noexcept nogil:
    cdef double x = (<double*>a)[0]
    cdef double y = (<double*>b)[0]
    return (x > y) - (x < y)


cdef double _solve_price(const double[:] coef, const double[:] lo, const double[:] hi,
                         double M, Py_ssize_t n) nogil:
    cdef Py_ssize_t i, m = 0, lo_i, hi_i, mid
    cdef double hsum = 0.0, left, right, probe, root, s, fixed, lam3
    cdef double* bps
    for i in range(n):
        hsum += hi[i]
    if hsum <= M:
        return 0.0
    for i in range(n):
        if coef[i] > 0:
            m += 1
    if m == 0:
        return 1.0
    bps = <double*>malloc(2 * m * sizeof(double))
    m = 0
    for i in range(n):
        if coef[i] > 0:
            bps[m] = coef[i] / (hi[i] * hi[i])
            bps[m + 1] = coef[i] / (lo[i] * lo[i])
            m += 2
    qsort(bps, m, sizeof(double), _cmp)
    if _share_sum(coef, lo, hi, bps[0], n) <= M:
        left = bps[0]
        free(bps)
        return left
    lo_i = 0
    hi_i = m - 1
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if _share_sum(coef, lo, hi, bps[mid], n) <= M:
            hi_i = mid
        else:
            lo_i = mid
    left = bps[lo_i]
    right = bps[hi_i]
    free(bps)
    probe = sqrt(left * right) if left > 0 else right / 2
    s = 0.0
    fixed = 0.0
    for i in range(n):
        root = sqrt(coef[i] / probe)
        if coef[i] > 0 and root > lo[i] and root < hi[i]:
            s += sqrt(coef[i])
        elif root <= lo[i]:
            fixed += lo[i]
        else:
            fixed += hi[i]
    if s <= 0 or M - fixed <= 0:
        return right
    lam3 = (s / (M - fixed)) ** 2
    lam3 = _clip(lam3, left, right)
    while _share_sum(coef, lo, hi, lam3, n) > M:
        lam3 = nextafter(lam3, INFINITY) * (1 + 1e-15)
    return lam3


def solve_price(coef, lo, hi, double M):
    cdef const double[:] c = np.ascontiguousarray(coef, dtype=np.float64)
    cdef const double[:] l_ = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[:] h_ = np.ascontiguousarray(hi, dtype=np.float64)
    return _solve_price(c, l_, h_, M, c.shape[0])


cdef double _dual_value(const double[:] l1, double lam2, const double[:] a, const double[:] b,
                        const double[:] c, const double[:] d, const double[:] lo_,
                        const double[:] hi_, double M, const double[:] ecap, double[:] coef,
                        double[:] l, double* out_lam3, Py_ssize_t n, bint energy) nogil:
    cdef double lam3, dual
    cdef Py_ssize_t i
    for i in range(n):
        coef[i] = l1[i] * b[i]
        if energy:
            coef[i] += lam2 * d[i]
    lam3 = _solve_price(coef, lo_, hi_, M, n)
    dual = -lam3 * M
    for i in range(n):
        if lam3 == 0.0:
            l[i] = hi_[i]
        else:
            l[i] = _clip(sqrt(coef[i] / lam3), lo_[i], hi_[i])
        dual += l1[i] * a[i] + coef[i] / l[i] + lam3 * l[i]
        if energy:
            dual += lam2 * (c[i] - ecap[i])
    out_lam3[0] = lam3
    return dual


def dual_ascent(A, B, C, D, lo, hi, double M, e_cap, lam1, double lam2, double eta,
                double eps, double gap_tol, int max_iter):
    cdef const double[:] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef const double[:] b = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[:] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef const double[:] lo_ = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[:] hi_ = np.ascontiguousarray(hi, dtype=np.float64)
    cdef const double[:] ecap = np.ascontiguousarray(np.broadcast_to(np.asarray(e_cap, dtype=np.float64), (n,)))
    cdef double[:] l1 = np.array(lam1, dtype=np.float64)
    cdef double[:] coef = np.empty(n)
    cdef double[:] l = np.empty(n)
    cdef double[:] prev = np.empty(n)
    cdef double[:] T = np.empty(n)
    cdef double[:] up = np.empty(n)
    cdef double[:] w = np.empty(n)
    cdef double[:] l_probe = np.empty(n)
    cdef double[:] acc_l1 = np.empty(n)
    cdef double[:] acc_g = np.empty(n)
    best_l = np.empty(n)
    best_l1 = np.empty(n)
    cdef double[:] bl = best_l
    cdef double[:] bl1 = best_l1
    cdef double best_l2 = lam2, best_l3 = 0.0
    cdef double best_p = INFINITY, best_d = -INFINITY, gap = INFINITY
    cdef double e_scale = 0.0, tot, lam3, m3, P, dual, probe, g, diff, esum, wsum
    cdef double acc_dual = 0.0, acc_l2 = 0.0, acc_g2 = 0.0
    cdef int k = 0, converged = 0, have_prev = 0, have_acc = 0
    cdef Py_ssize_t i

    for i in range(n):
        e_scale += ecap[i]
    e_scale /= n
    tot = 0.0
    for i in range(n):
        tot += l1[i]
    for i in range(n):
        l1[i] /= tot
    # vertex of the simplex with every vehicle at its widest share
    for i in range(n):
        if a[i] + b[i] / hi_[i] > best_d:
            best_d = a[i] + b[i] / hi_[i]

    with nogil:
        for k in range(1, max_iter + 1):
            dual = _dual_value(l1, lam2, a, b, c, d, lo_, hi_, M, ecap, coef, l, &lam3, n, True)
            P = -INFINITY
            for i in range(n):
                up[i] = b[i] / l[i]
                T[i] = a[i] + up[i]
                if T[i] > P:
                    P = T[i]
            if P < best_p:
                best_p = P
                for i in range(n):
                    bl[i] = l[i]
                    bl1[i] = l1[i]
                best_l2 = lam2
                best_l3 = lam3
            if dual > best_d:
                best_d = dual
            wsum = 0.0
            for i in range(n):
                if T[i] >= P * (1.0 - KKT_TOL):
                    w[i] = l[i] * l[i] / b[i]
                else:
                    w[i] = 0.0
                wsum += w[i]
            if wsum > 0:
                for i in range(n):
                    w[i] /= wsum
                probe = _dual_value(w, 0.0, a, b, c, d, lo_, hi_, M, ecap, coef, l_probe, &m3, n, False)
                if probe > best_d:
                    best_d = probe
            gap = (best_p - best_d) / best_p if best_p > 0 else 0.0
            if have_prev:
                diff = 0.0
                for i in range(n):
                    if fabs(l[i] - prev[i]) > diff:
                        diff = fabs(l[i] - prev[i])
                if diff < eps and gap <= gap_tol:
                    converged = 1
                    break
            for i in range(n):
                prev[i] = l[i]
            have_prev = 1

            if not have_acc or dual >= acc_dual:
                esum = 0.0
                for i in range(n):
                    if up[i] > 0:
                        g = (T[i] - P) / up[i]
                    elif T[i] < P:
                        g = -1.0
                    else:
                        g = 0.0
                    if g < -1.0:
                        g = -1.0
                    acc_g[i] = g
                    acc_l1[i] = l1[i]
                    esum += c[i] + d[i] / l[i] - ecap[i]
                acc_dual = dual
                acc_l2 = lam2
                acc_g2 = esum / e_scale
                have_acc = 1
            else:
                eta *= 0.5
            tot = 0.0
            for i in range(n):
                l1[i] = acc_l1[i] * exp(eta * acc_g[i])
                tot += l1[i]
            for i in range(n):
                l1[i] /= tot
            if acc_g2 > 0:
                lam2 = acc_l2 + eta * acc_g2
            else:
                lam2 = 0.0

    if gap < 0:
        gap = 0.0
    return best_l, best_l1, best_l2, best_l3, k, bool(converged), gap


cdef inline double _e(double phi, double a, double b) nogil:
    return phi * a * LN2 / log1p(b * phi)


cdef inline double _de(double phi, double a, double b) nogil:
    cdef double u = 1.0 + b * phi
    cdef double lg = log1p(b * phi) / LN2
    return a / lg - a * b * phi / (LN2 * u * lg * lg)


cdef int _sca_one(double a, double b, double cap, double phi0, double phi_min, double phi_max,
                  double eps, int max_iter, double* out_phi, int* out_it) nogil:
    cdef double phi, feasible, ei, di, cand, step, lo_, hi_, mid
    cdef int it = 0, status = SCA_MAXITER, j
    if a == 0.0 or isinf(cap):
        out_phi[0] = phi_max
        out_it[0] = 0
        return SCA_OK
    if _e(phi_min, a, b) > cap:
        out_phi[0] = phi_min
        out_it[0] = 0
        return SCA_INFEASIBLE
    phi = _clip(phi0, phi_min, phi_max)
    feasible = phi if _e(phi, a, b) <= cap else phi_min
    for it in range(1, max_iter + 1):
        ei = _e(phi, a, b)
        di = _de(phi, a, b)
        if di > 0:
            cand = phi + (cap - ei) / di
        else:
            cand = phi_max
        cand = _clip(cand, phi_min, phi_max)
        step = fabs(cand - phi)
        phi = cand
        if _e(phi, a, b) <= cap:
            feasible = phi
        if step <= eps:
            status = SCA_OK
            break
    if _e(phi, a, b) > cap * (1.0 + 1e-9):
        lo_ = feasible
        hi_ = phi
        for j in range(100):
            mid = 0.5 * (lo_ + hi_)
            if _e(mid, a, b) <= cap:
                lo_ = mid
            else:
                hi_ = mid
        phi = lo_
        status = SCA_GAP
    out_phi[0] = phi
    out_it[0] = it
    return status


def sca_power(a, b, cap, phi0, double phi_min, double phi_max, double eps, int max_iter):
    cdef const double[:] a_ = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:] b_ = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:] cap_ = np.ascontiguousarray(cap, dtype=np.float64)
    cdef const double[:] p0 = np.ascontiguousarray(phi0, dtype=np.float64)
    cdef Py_ssize_t n = a_.shape[0], i
    phi = np.empty(n)
    iters = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    cdef double[:] phi_v = phi
    cdef long long[:] it_v = iters
    cdef long long[:] st_v = status
    cdef double p
    cdef int it
    for i in range(n):
        st_v[i] = _sca_one(a_[i], b_[i], cap_[i], p0[i], phi_min, phi_max, eps, max_iter, &p, &it)
        phi_v[i] = p
        it_v[i] = it
    return phi, iters, status

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled scan hot loops; see ``_kernels.py`` for the reference version."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt
from libc.stdlib cimport malloc, free
from libc.string cimport memset

cnp.import_array()

cdef double ALPHA_EPS = 1e-6
cdef double LOG_FLOOR = 1e-300
cdef double PLATEAU_TOL = 1e-12


cdef inline double _score(int kind, double na, double n, double alpha, bint one_sided) noexcept nogil:
    cdef double a, p, kl, s, d
    if n <= 0:
        return 0.0
    if one_sided and not (na > alpha * n):
        return 0.0
    a = alpha
    if a < ALPHA_EPS:
        a = ALPHA_EPS
    elif a > 1.0 - ALPHA_EPS:
        a = 1.0 - ALPHA_EPS
    if kind == 0:
        p = na / n
        if p < 0.0:
            p = 0.0
        elif p > 1.0:
            p = 1.0
        kl = 0.0
        if p > 0:
            d = p / a
            kl = p * log(d if d > LOG_FLOOR else LOG_FLOOR)
        if p < 1:
            d = (1 - p) / (1 - a)
            kl = kl + (1 - p) * log(d if d > LOG_FLOOR else LOG_FLOOR)
        return n * kl
    d = na - n * a
    s = d * d / (2.0 * n * a * (1.0 - a))
    if kind == 1:
        return s
    if kind == 2:
        return sqrt(2.0 * a * (1.0 - a) * s)
    if kind == 3:
        return 2.0 * a * (1.0 - a) * s
    if kind == 4:
        return sqrt(2.0 * s)
    return 2.0 * s


cdef struct Work:
    double* agg
    double* nv
    double* prio
    Py_ssize_t* active
    Py_ssize_t* order


cdef double _optimize(
    const cnp.int32_t[:, ::1] profiles,
    const cnp.int64_t[::1] arities,
    const double[:, ::1] mass,
    const double[::1] counts,
    const double[::1] alphas,
    int kind,
    bint one_sided,
    const cnp.uint8_t[:, ::1] member,
    Py_ssize_t j,
    Work* w,
    cnp.uint8_t* out_mask,
    Py_ssize_t* out_k,
) noexcept nogil:
    cdef Py_ssize_t M = profiles.shape[0]
    cdef Py_ssize_t d = profiles.shape[1]
    cdef Py_ssize_t K = alphas.shape[0]
    cdef Py_ssize_t V = arities[j]
    cdef Py_ssize_t m, i, k, v, t, s, A, cur, direction
    cdef bint ok
    cdef double cm, cn, sc, best = -1.0
    cdef Py_ssize_t best_k = 0
    cdef double pc

    memset(w.agg, 0, V * K * sizeof(double))
    memset(w.nv, 0, V * sizeof(double))
    for m in range(M):
        ok = True
        for i in range(d):
            if i != j and not member[i, profiles[m, i]]:
                ok = False
                break
        if not ok:
            continue
        v = profiles[m, j]
        for k in range(K):
            w.agg[v * K + k] += mass[m, k]
        w.nv[v] += counts[m]

    A = 0
    for v in range(V):
        out_mask[v] = 0
        if w.nv[v] > 0:
            w.active[A] = v
            A += 1
    if A == 0:
        out_mask[0] = 1
        out_k[0] = 0
        return 0.0

    for k in range(K):
        for t in range(A):
            w.prio[t] = w.agg[w.active[t] * K + k] / w.nv[w.active[t]]
        for direction in range(2 if not one_sided else 1):
            # stable insertion sort of active positions by priority
            for t in range(A):
                cur = t
                pc = w.prio[t]
                s = t
                if direction == 0:
                    while s > 0 and w.prio[w.order[s - 1]] < pc:
                        w.order[s] = w.order[s - 1]
                        s -= 1
                else:
                    while s > 0 and w.prio[w.order[s - 1]] > pc:
                        w.order[s] = w.order[s - 1]
                        s -= 1
                w.order[s] = cur
            cm = 0.0
            cn = 0.0
            for t in range(A):
                v = w.active[w.order[t]]
                cm = cm + w.agg[v * K + k]
                cn = cn + w.nv[v]
                sc = _score(kind, cm, cn, alphas[k], one_sided)
                if sc > best:
                    best = sc
                    best_k = k
                    for v in range(V):
                        out_mask[v] = 0
                    for s in range(t + 1):
                        out_mask[w.active[w.order[s]]] = 1
    out_k[0] = best_k
    return best


cdef int _alloc(Work* w, Py_ssize_t vmax, Py_ssize_t K) noexcept nogil:
    w.agg = <double*> malloc(vmax * K * sizeof(double) + sizeof(double))
    w.nv = <double*> malloc(vmax * sizeof(double))
    w.prio = <double*> malloc(vmax * sizeof(double))
    w.active = <Py_ssize_t*> malloc(vmax * sizeof(Py_ssize_t))
    w.order = <Py_ssize_t*> malloc(vmax * sizeof(Py_ssize_t))
    if w.agg == NULL or w.nv == NULL or w.prio == NULL or w.active == NULL or w.order == NULL:
        return -1
    return 0


cdef void _release(Work* w) noexcept nogil:
    free(w.agg)
    free(w.nv)
    free(w.prio)
    free(w.active)
    free(w.order)


def optimize_mode(profiles, arities, mass, counts, alphas, int kind, bint one_sided, member, Py_ssize_t j):
    """Best value subset of mode ``j`` with the other modes held fixed."""
    cdef const cnp.int32_t[:, ::1] P = np.ascontiguousarray(profiles, dtype=np.int32)
    cdef const cnp.int64_t[::1] ar = np.ascontiguousarray(arities, dtype=np.int64)
    cdef const double[:, ::1] ms = np.ascontiguousarray(mass, dtype=np.float64)
    cdef const double[::1] ct = np.ascontiguousarray(counts, dtype=np.float64)
    cdef const double[::1] al = np.ascontiguousarray(alphas, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] mb = np.ascontiguousarray(member, dtype=np.uint8)
    cdef Py_ssize_t V = ar[j]
    cdef Py_ssize_t K = al.shape[0]
    cdef Py_ssize_t k_best = 0
    cdef double best
    cdef Work w
    out = np.zeros(V, dtype=np.uint8)
    cdef cnp.uint8_t[::1] om = out
    if _alloc(&w, V, K) != 0:
        _release(&w)
        raise MemoryError()
    with nogil:
        best = _optimize(P, ar, ms, ct, al, kind, one_sided, mb, j, &w, &om[0], &k_best)
    _release(&w)
    return out, best, int(k_best)


def ascent(profiles, arities, mass, counts, alphas, int kind, bint one_sided, member, int max_cycles):
    """Cyclic coordinate ascent over modes; ``member`` is updated in place."""
    cdef const cnp.int32_t[:, ::1] P = np.ascontiguousarray(profiles, dtype=np.int32)
    cdef const cnp.int64_t[::1] ar = np.ascontiguousarray(arities, dtype=np.int64)
    cdef const double[:, ::1] ms = np.ascontiguousarray(mass, dtype=np.float64)
    cdef const double[::1] ct = np.ascontiguousarray(counts, dtype=np.float64)
    cdef const double[::1] al = np.ascontiguousarray(alphas, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] mb = member
    cdef Py_ssize_t d = P.shape[1]
    cdef Py_ssize_t K = al.shape[0]
    cdef Py_ssize_t vmax = mb.shape[1]
    cdef Py_ssize_t j, v, k_best = 0, V
    cdef int cycle, cycles = 0
    cdef bint changed, converged = False
    cdef double score = 0.0, prev = -1.0e300
    cdef Work w
    tr = np.zeros(max(max_cycles, 1) * d, dtype=np.float64)
    cdef double[::1] trace = tr
    cdef Py_ssize_t nt = 0
    cdef cnp.uint8_t* mask = <cnp.uint8_t*> malloc(vmax * sizeof(cnp.uint8_t))
    if mask == NULL or _alloc(&w, vmax, K) != 0:
        free(mask)
        _release(&w)
        raise MemoryError()
    with nogil:
        for cycle in range(1, max_cycles + 1):
            cycles = cycle
            changed = False
            for j in range(d):
                V = ar[j]
                score = _optimize(P, ar, ms, ct, al, kind, one_sided, mb, j, &w, mask, &k_best)
                for v in range(V):
                    if mb[j, v] != mask[v]:
                        changed = True
                        mb[j, v] = mask[v]
                trace[nt] = score
                nt += 1
            if not changed or score - prev < PLATEAU_TOL:
                converged = True
                break
            prev = score
    free(mask)
    _release(&w)
    return score, int(k_best), cycles, tr[:nt].tolist(), bool(converged)

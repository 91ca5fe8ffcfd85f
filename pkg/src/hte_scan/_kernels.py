"""Pure numpy implementation of the scan hot loops.

This mirrors ``_ckernels.pyx`` operation for operation (same summation
order, same tie-breaking) and is used when the compiled extension is not
available or ``HTE_SCAN_PURE_PYTHON=1`` is set.

Shared conventions
------------------
profiles : int32 (M, d)      cell profiles
arities  : int64 (d,)
mass     : float64 (M, K)    per-cell significance mass at each threshold
counts   : float64 (M,)      treated units per cell
alphas   : float64 (K,)
member   : uint8 (d, Vmax)   current value subsets, updated in place by ``ascent``
"""

from __future__ import annotations

import numpy as np

from .score import score_array

PLATEAU_TOL = 1e-12


def _rest_mask(profiles, member, j):
    keep = np.ones(profiles.shape[0], dtype=bool)
    for i in range(profiles.shape[1]):
        if i != j:
            keep &= member[i, profiles[:, i]].astype(bool)
    return keep


def optimize_mode(profiles, arities, mass, counts, alphas, kind, one_sided, member, j):
    """Best value subset of mode ``j`` with the other modes held fixed.

    Returns
    -------
    mask : uint8 ndarray, shape (arities[j],)
    score : float
    alpha_index : int
    """
    V = int(arities[j])
    K = alphas.shape[0]
    keep = _rest_mask(profiles, member, j)
    vals = profiles[keep, j]
    agg = np.zeros((V, K))
    np.add.at(agg, vals, mass[keep])
    n = np.zeros(V)
    np.add.at(n, vals, counts[keep])
    active = np.flatnonzero(n > 0)
    mask = np.zeros(V, dtype=np.uint8)
    if active.size == 0:
        mask[0] = 1
        return mask, 0.0, 0

    a_mass = agg[active]
    a_n = n[active]
    prio = a_mass / a_n[:, None]
    orders = [np.argsort(-prio, axis=0, kind="stable")]
    if not one_sided:
        orders.append(np.argsort(prio, axis=0, kind="stable"))
    blocks = []
    for order in orders:
        cm = np.cumsum(np.take_along_axis(a_mass, order, axis=0), axis=0)
        cn = np.cumsum(a_n[order], axis=0)
        blocks.append(score_array(kind, cm, cn, alphas[None, :], one_sided).T)
    # (K, n_orders * A): thresholds outer, then direction, then prefix length
    scores = np.concatenate(blocks, axis=1)
    flat = int(np.argmax(scores))
    best = float(scores.flat[flat])
    k, rest = divmod(flat, scores.shape[1])
    direction, length = divmod(rest, active.size)
    chosen = active[orders[direction][: length + 1, k]]
    mask[chosen] = 1
    return mask, best, k


def ascent(profiles, arities, mass, counts, alphas, kind, one_sided, member, max_cycles):
    """Cyclic coordinate ascent over modes from the subsets in ``member``.

    Stops after a cycle that changes no subset, a cycle whose score gain is
    below ``PLATEAU_TOL``, or ``max_cycles`` cycles.

    Returns
    -------
    score : float
    alpha_index : int
    cycles : int
    trace : list of float
        Score after each mode update.
    converged : bool
    """
    d = profiles.shape[1]
    score, k_best = 0.0, 0
    prev = -np.inf
    trace = []
    for cycle in range(1, max_cycles + 1):
        changed = False
        for j in range(d):
            V = int(arities[j])
            mask, score, k_best = optimize_mode(profiles, arities, mass, counts, alphas, kind, one_sided, member, j)
            if not np.array_equal(mask, member[j, :V]):
                changed = True
                member[j, :V] = mask
            trace.append(score)
        if not changed or score - prev < PLATEAU_TOL:
            return score, k_best, cycle, trace, True
        prev = score
    return score, k_best, max_cycles, trace, False

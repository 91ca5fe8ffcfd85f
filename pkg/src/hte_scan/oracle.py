"""Brute-force maximization used to check the scan on small tables."""

from __future__ import annotations

from typing import NamedTuple, Tuple

import numpy as np

from .data_model import CellTable, DataError, Subpopulation
from .score import ScoredAlpha, ScoreKind, max_over_alpha, score_array

DEFAULT_CAP = 10**6
MODE_CAP = 2**20
NEAR_TIE = 1e-9
_CHUNK_ELEMS = 4_000_000


class OracleResult(NamedTuple):
    best: Subpopulation
    score: float
    alpha: float
    n_evaluated: int


def n_rectangles(arities) -> int:
    """Number of rectangular subpopulations, ``prod(2^V - 1)``."""
    total = 1
    for a in arities:
        total *= 2 ** int(a) - 1
    return total


def _canonical_pick(table, kind, window, one_sided, candidates, build):
    """Recompute near-optimal candidates canonically; first maximum wins."""
    best_i, best = candidates[0], None
    for i in candidates:
        S = build(i)
        sc = max_over_alpha(S, table, kind, window[0], window[1], one_sided)
        if best is None or sc.score > best[1].score:
            best_i, best = i, (S, sc)
    return best_i, best


def exhaustive_scan(
    table: CellTable,
    kind=ScoreKind.BJ,
    alpha_min: float = 0.01,
    alpha_max: float = 0.5,
    one_sided: bool = True,
    cap: int = DEFAULT_CAP,
) -> OracleResult:
    """Score every rectangular subpopulation at every candidate threshold.

    Subsets are enumerated lexicographically over per-mode bitmasks (mode 0
    most significant) and ties go to the earliest one.
    """
    kind = ScoreKind.parse(kind)
    arities = table.schema.arities
    total = n_rectangles(arities)
    if total > cap:
        raise DataError(f"{total} rectangular subsets exceed the oracle cap of {cap}")
    if table.M == 0:
        raise DataError("no treatment cells to scan")
    alphas, mass = table.mass_matrix(alpha_min, alpha_max)
    shape = tuple(2**a - 1 for a in arities)
    prof = table.profiles.astype(np.int64)
    best_per = np.empty(total)
    chunk = max(1, _CHUNK_ELEMS // max(table.M, alphas.size))
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        digits = np.unravel_index(idx, shape)
        memb = np.ones((idx.size, table.M), dtype=bool)
        for j, dj in enumerate(digits):
            memb &= ((dj[:, None] + 1) >> prof[None, :, j]) & 1 == 1
        mf = memb.astype(float)
        n_alpha = mf @ mass
        n_tot = mf @ table.counts
        s = score_array(kind, n_alpha, n_tot[:, None], alphas[None, :], one_sided)
        best_per[idx] = s.max(axis=1)

    def build(i):
        digits = np.unravel_index(i, shape)
        return Subpopulation(
            tuple(frozenset(v for v in range(a) if ((int(dj) + 1) >> v) & 1) for dj, a in zip(digits, arities))
        )

    smax = float(best_per.max())
    if smax <= 0:
        cands = [0]
    else:
        cands = np.flatnonzero(best_per >= smax - NEAR_TIE * max(1.0, smax)).tolist()
    _, (S, sc) = _canonical_pick(table, kind, (alpha_min, alpha_max), one_sided, cands, build)
    return OracleResult(S, sc.score, sc.alpha, total)


def exhaustive_mode(
    j: int,
    v_rest: Subpopulation,
    table: CellTable,
    kind=ScoreKind.BJ,
    alpha_min: float = 0.01,
    alpha_max: float = 0.5,
    one_sided: bool = True,
) -> Tuple[frozenset, ScoredAlpha]:
    """Best value subset of mode ``j`` by enumerating all non-empty subsets."""
    kind = ScoreKind.parse(kind)
    V = table.schema.arity(j)
    n_sub = 2**V - 1
    if n_sub > MODE_CAP:
        raise DataError(f"mode {j} has {n_sub} value subsets, above the cap of {MODE_CAP}")
    alphas, mass = table.mass_matrix(alpha_min, alpha_max)
    keep = np.ones(table.M, dtype=bool)
    for i, vs in enumerate(v_rest.values):
        if i != j:
            keep &= np.isin(table.profiles[:, i], list(vs))
    vals = table.profiles[keep, j]
    agg = np.zeros((V, alphas.size))
    np.add.at(agg, vals, mass[keep])
    n = np.zeros(V)
    np.add.at(n, vals, table.counts[keep])

    masks = np.arange(1, n_sub + 1, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(V)[None, :]) & 1).astype(float)
    s = score_array(kind, bits @ agg, (bits @ n)[:, None], alphas[None, :], one_sided).max(axis=1)

    def build(i):
        values = list(v_rest.values)
        values[j] = frozenset(v for v in range(V) if (int(masks[i]) >> v) & 1)
        return Subpopulation(tuple(values))

    smax = float(s.max())
    cands = [0] if smax <= 0 else np.flatnonzero(s >= smax - NEAR_TIE * max(1.0, smax)).tolist()
    _, (S, sc) = _canonical_pick(table, kind, (alpha_min, alpha_max), one_sided, cands, build)
    return S.values[j], sc

"""Calibration and diagnostics for scan results.

Permutation testing is the operative finite-sample test. The asymptotic
null constant and critical value are exposed as diagnostics, together with
the cell-level conditions under which the highest-scoring subset equals a
planted affected subpopulation.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .data_model import CellTable, CovariateSchema, DataError, ProfileIndex, Record, Subpopulation, records_to_arrays
from .reference import masses
from .scan import ScanConfig, ScanResult, subpopulation_scan


@dataclass
class PermutationReport:
    observed: float
    null_scores: List[float]
    p_value: float
    gamma: float
    reject: bool
    one_arm_profiles: int
    scan: Optional[ScanResult] = None

    def to_dict(self) -> dict:
        return {
            "observed": self.observed,
            "null_scores": list(self.null_scores),
            "p_value": self.p_value,
            "gamma": self.gamma,
            "reject": self.reject,
            "one_arm_profiles": self.one_arm_profiles,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PermutationReport":
        return cls(**{k: data[k] for k in ("observed", "null_scores", "p_value", "gamma", "reject", "one_arm_profiles")})


def rank_p_value(observed: float, null_scores) -> float:
    """``(1 + #{null >= observed}) / (n + 1)``."""
    null = np.asarray(null_scores, dtype=float)
    return float((1 + np.count_nonzero(null >= observed)) / (null.size + 1))


def permute_within(groups: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shuffle ``labels`` independently inside each group."""
    base = np.argsort(groups, kind="stable")
    shuffled = np.lexsort((rng.random(groups.size), groups))
    out = np.empty_like(labels)
    out[shuffled] = labels[base]
    return out


def permutation_test_arrays(
    y,
    w,
    X,
    schema: CovariateSchema,
    cfg: ScanConfig,
    n_perm: int = 199,
    gamma: float = 0.05,
    seed: int = 0,
    sidedness: str = "two",
    include_orphans: bool = False,
) -> PermutationReport:
    """Permutation test on column arrays; see :func:`permutation_test`."""
    if n_perm < 19:
        raise DataError("n_perm must be at least 19")
    if not (0.0 < gamma < 1.0):
        raise DataError("gamma must lie in (0, 1)")
    w = np.asarray(w).astype(bool)
    table = CellTable.from_arrays(y, w, X, schema, sidedness, include_orphans)
    obs = subpopulation_scan(table, cfg)
    index = ProfileIndex(y, X)
    n_treat = np.bincount(index.pid, weights=w.astype(float), minlength=index.n_profiles)
    n_all = np.bincount(index.pid, minlength=index.n_profiles)
    one_arm = int(np.count_nonzero((n_treat == 0) | (n_treat == n_all)))
    inner = replace(cfg, threads=1)

    def replicate(i: int) -> float:
        rng = np.random.default_rng([int(seed), 1, i])
        w_perm = permute_within(index.pid, w, rng)
        t = CellTable.from_arrays(None, w_perm, None, schema, sidedness, include_orphans, index=index)
        return subpopulation_scan(t, inner).score if t.M else 0.0

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            null = list(pool.map(replicate, range(n_perm)))
    else:
        null = [replicate(i) for i in range(n_perm)]
    p = rank_p_value(obs.score, null)
    return PermutationReport(obs.score, null, p, gamma, p <= gamma, one_arm, obs)


def permutation_test(
    records: Sequence[Record],
    schema: CovariateSchema,
    cfg: ScanConfig,
    n_perm: int = 199,
    gamma: float = 0.05,
    seed: int = 0,
    sidedness: str = "two",
    include_orphans: bool = False,
) -> PermutationReport:
    """Randomization test of the maximal scan score.

    Null replicates shuffle treatment labels within each covariate profile,
    which keeps every profile's arm sizes, then rebuild the p-value ranges
    and rescan. Profiles with a single arm carry no permutation variation;
    their number is reported.
    """
    y, w, X = records_to_arrays(records, schema)
    return permutation_test_arrays(y, w, X, schema, cfg, n_perm, gamma, seed, sidedness, include_orphans)


class TheoryConstants(NamedTuple):
    C: float
    argmax_Z: float


def null_slope(z):
    """``phi(z)^2 / (2 (1 - Phi(z)))``."""
    return stats.norm.pdf(z) ** 2 / (2.0 * stats.norm.sf(z))


def theory_constant(lo: float = -3.0, hi: float = 5.0, n_grid: int = 80_001) -> TheoryConstants:
    """Maximum over ``z`` of :func:`null_slope`, by grid search and local refinement."""
    z = np.linspace(lo, hi, n_grid)
    g = null_slope(z)
    i = int(np.argmax(g))
    a, b = z[max(i - 1, 0)], z[min(i + 1, n_grid - 1)]
    res = optimize.minimize_scalar(lambda t: -null_slope(t), bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    zs = float(res.x) if -res.fun >= g[i] else float(z[i])
    return TheoryConstants(float(null_slope(zs)), zs)


def critical_value(M: int, epsilon: float) -> float:
    """Asymptotic null critical value ``C M + epsilon``."""
    if M < 1:
        raise DataError("M must be at least 1")
    if epsilon <= 0:
        raise DataError("epsilon must be positive")
    return theory_constant().C * M + epsilon


@dataclass
class FoldEstimate:
    fold: int
    subpopulation: Optional[Subpopulation]
    estimate: Optional[float]
    n_treated: int
    n_control: int

    @property
    def estimable(self) -> bool:
        return self.estimate is not None

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "subpopulation": None if self.subpopulation is None else self.subpopulation.to_lists(),
            "estimate": self.estimate,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "estimable": self.estimable,
        }


@dataclass
class HoldoutReport:
    folds: List[FoldEstimate]
    agreement: List[float]
    modal_subpopulation: Optional[Subpopulation]

    @property
    def mean_estimate(self) -> Optional[float]:
        est = [f.estimate for f in self.folds if f.estimate is not None]
        return float(np.mean(est)) if est else None

    def to_dict(self) -> dict:
        return {
            "folds": [f.to_dict() for f in self.folds],
            "agreement": list(self.agreement),
            "modal_subpopulation": None if self.modal_subpopulation is None else self.modal_subpopulation.to_lists(),
            "mean_estimate": self.mean_estimate,
        }


def holdout_ate_arrays(
    y, w, X, schema: CovariateSchema, cfg: ScanConfig, folds: int = 10, seed: int = 0,
    sidedness: str = "two", include_orphans: bool = False,
) -> HoldoutReport:
    """Cross-validated effect estimate of the detected subpopulation.

    Each fold is held out in turn; the scan runs on the remaining records and
    the treated-minus-control mean outcome is computed among held-out records
    inside the detected subpopulation. Agreement is the share of all records
    whose in/out status under a fold's subpopulation matches the majority
    status across folds.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w).astype(bool)
    X = np.asarray(X, dtype=np.int64)
    n = y.size
    if folds < 2 or folds > n:
        raise DataError(f"folds must lie in [2, {n}]")
    rng = np.random.default_rng([int(seed), 2])
    parts = np.array_split(rng.permutation(n), folds)
    out, status = [], []
    for f, hold in enumerate(parts):
        train = np.ones(n, dtype=bool)
        train[hold] = False
        table = CellTable.from_arrays(y[train], w[train], X[train], schema, sidedness, include_orphans)
        if table.M == 0:
            out.append(FoldEstimate(f, None, None, 0, 0))
            continue
        S = subpopulation_scan(table, cfg).best
        inside = S.mask(X[hold])
        yt, yc = y[hold][inside & w[hold]], y[hold][inside & ~w[hold]]
        est = float(yt.mean() - yc.mean()) if yt.size and yc.size else None
        out.append(FoldEstimate(f, S, est, int(yt.size), int(yc.size)))
        status.append(S.mask(X))
    agreement: List[float] = []
    modal = None
    if status:
        st = np.array(status)
        majority = st.mean(axis=0) >= 0.5
        agreement = [float(np.mean(s == majority)) for s in st]
        counts = Counter(f.subpopulation for f in out if f.subpopulation is not None)
        top = max(counts.values())
        modal = next(f.subpopulation for f in out if f.subpopulation is not None and counts[f.subpopulation] == top)
    return HoldoutReport(out, agreement, modal)


def holdout_ate(
    records: Sequence[Record], schema: CovariateSchema, cfg: ScanConfig, folds: int = 10, seed: int = 0,
    sidedness: str = "two", include_orphans: bool = False,
) -> HoldoutReport:
    y, w, X = records_to_arrays(records, schema)
    return holdout_ate_arrays(y, w, X, schema, cfg, folds, seed, sidedness, include_orphans)


@dataclass
class RecoveryReport:
    """Cell-level signal summary for a candidate true subpopulation.

    ``r_mle`` is ``N_alpha(x) / N(x) - alpha`` per cell. The homogeneity
    ratio ``nu`` compares the strongest to the weakest affected cell, the
    strength ratio ``delta`` the weakest affected cell to the strongest
    unaffected one, and ``eta`` is the affected share of treated units.
    """

    alpha: float
    r_mle: np.ndarray
    affected: np.ndarray
    r_aff_h: float
    r_aff_l: float
    r_unaff_h: Optional[float]
    nu: float
    delta: float
    eta: float
    homogeneous_ok: bool
    strong_ok: bool
    bj_caveat: bool

    @property
    def both_ok(self) -> bool:
        return self.homogeneous_ok and self.strong_ok


def recovery_ratios(r_aff: np.ndarray, r_unaff: np.ndarray, eta: float):
    """``(nu, delta, homogeneous_ok, strong_ok)`` from affected and unaffected ``r_mle``."""
    r_h, r_l = float(r_aff.max()), float(r_aff.min())
    u_h = float(r_unaff.max()) if r_unaff.size else None
    if r_l <= 0:
        nu, delta = math.inf, 0.0
    else:
        nu = r_h / r_l
        delta = math.inf if (u_h is None or u_h <= 0) else r_l / u_h
    return nu, delta, nu < 2.0, delta > 2.0 / eta


def recovery_conditions(truth: Subpopulation, table: CellTable, alpha: float) -> RecoveryReport:
    """Check the homogeneity and strength conditions at threshold ``alpha``.

    Both flags use the normal-approximation constants (2 and ``2 / eta``).
    ``bj_caveat`` is true when every affected cell has ``N_alpha / N >= 1/2``,
    the regime where the same flags are also meaningful for Berk-Jones.
    """
    if not (0.0 < alpha < 1.0):
        raise DataError("alpha must lie in (0, 1)")
    aff = table.cell_mask(truth)
    if not aff.any():
        raise DataError("the true subpopulation matches no treatment cell")
    m = masses(table.lo, table.hi, [alpha])[:, 0]
    n_alpha = np.bincount(table.range_cell, weights=m, minlength=table.M)
    beta = n_alpha / table.counts
    r = beta - alpha
    eta = float(table.counts[aff].sum() / table.counts.sum())
    nu, delta, h_ok, s_ok = recovery_ratios(r[aff], r[~aff], eta)
    u = r[~aff]
    return RecoveryReport(
        alpha=float(alpha),
        r_mle=r,
        affected=aff,
        r_aff_h=float(r[aff].max()),
        r_aff_l=float(r[aff].min()),
        r_unaff_h=float(u.max()) if u.size else None,
        nu=nu,
        delta=delta,
        eta=eta,
        homogeneous_ok=h_ok,
        strong_ok=s_ok,
        bj_caveat=bool(np.all(beta[aff] >= 0.5)),
    )

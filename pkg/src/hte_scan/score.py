"""Nonparametric scan statistics and their additive decomposition.

Scores compare the observed significance mass ``N_alpha`` of a subset with
the ``alpha * N`` expected under the null. The Berk-Jones score is the
subset size times a Kullback-Leibler divergence; the normal approximation
replaces it with a scaled chi-square divergence. The remaining statistics
are transforms of the normal-approximation score at fixed ``alpha``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .data_model import CellTable, Subpopulation

ALPHA_EPS = 1e-6
LOG_FLOOR = 1e-300


class ScoreKind(enum.IntEnum):
    BJ = 0
    NA = 1
    KS = 2
    CVM = 3
    HC = 4
    AD = 5

    @classmethod
    def parse(cls, value) -> "ScoreKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return cls(int(value))
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown score {value!r}; choose from {[k.name.lower() for k in cls]}") from None


class ScoredAlpha(NamedTuple):
    alpha: float
    score: float
    mu_nate: float


@dataclass(frozen=True)
class OmegaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


def _clamp_alpha(alpha):
    return np.clip(alpha, ALPHA_EPS, 1.0 - ALPHA_EPS)


def na_divergence(n_alpha, n_total, alpha):
    """Scaled chi-square divergence ``(p - alpha)^2 / (2 alpha (1 - alpha))``."""
    a = _clamp_alpha(alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.asarray(n_alpha, float) / np.asarray(n_total, float)
    return (p - a) ** 2 / (2.0 * a * (1.0 - a))


def kl_divergence(p, alpha):
    """Bernoulli KL divergence ``KL(p || alpha)`` with ``0 log 0 = 0``."""
    a = _clamp_alpha(alpha)
    p = np.clip(p, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(p > 0, p * np.log(np.maximum(p / a, LOG_FLOOR)), 0.0)
        t2 = np.where(p < 1, (1 - p) * np.log(np.maximum((1 - p) / (1 - a), LOG_FLOOR)), 0.0)
    return t1 + t2


def score_array(kind, n_alpha, n_total, alpha, one_sided: bool = True) -> np.ndarray:
    """Vectorized score over broadcastable count and threshold arrays.

    Entries with ``n_total <= 0`` score 0. With ``one_sided`` (the default)
    subsets whose significance mass does not exceed ``alpha * n_total``
    also score 0.
    """
    kind = ScoreKind.parse(kind)
    n_alpha = np.asarray(n_alpha, dtype=float)
    n_total = np.asarray(n_total, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    a = _clamp_alpha(alpha)
    valid = n_total > 0
    safe_n = np.where(valid, n_total, 1.0)
    if one_sided:
        valid = valid & (n_alpha > alpha * n_total)
    if kind == ScoreKind.BJ:
        out = safe_n * kl_divergence(n_alpha / safe_n, a)
    else:
        na = (n_alpha - safe_n * a) ** 2 / (2.0 * safe_n * a * (1.0 - a))
        out = score_transform(kind, na, a)
    return np.where(valid, out, 0.0)


def score_na(n_alpha: float, n_total: float, alpha: float, one_sided: bool = True) -> float:
    """Normal-approximation score ``(N_a - N a)^2 / (2 N a (1 - a))``.

    Examples
    --------
    >>> round(score_na(5, 10, 0.1), 4)
    8.8889
    """
    return float(score_array(ScoreKind.NA, n_alpha, n_total, alpha, one_sided))


def score_bj(n_alpha: float, n_total: float, alpha: float, one_sided: bool = True) -> float:
    """Berk-Jones score ``N KL(N_a / N || a)``.

    Examples
    --------
    >>> round(score_bj(5, 10, 0.1), 4)
    5.1083
    """
    return float(score_array(ScoreKind.BJ, n_alpha, n_total, alpha, one_sided))


def score_transform(kind, na_score, alpha):
    """Express KS, CVM, HC or AD through the normal-approximation score."""
    kind = ScoreKind.parse(kind)
    na = np.asarray(na_score, dtype=float)
    a = np.asarray(alpha, dtype=float)
    if kind == ScoreKind.NA:
        out = na
    elif kind == ScoreKind.KS:
        out = np.sqrt(2.0 * a * (1.0 - a) * na)
    elif kind == ScoreKind.CVM:
        out = 2.0 * a * (1.0 - a) * na
    elif kind == ScoreKind.HC:
        out = np.sqrt(2.0 * na)
    elif kind == ScoreKind.AD:
        out = 2.0 * na
    else:
        raise ValueError(f"{kind.name} is not a transform of the NA score")
    return float(out) if out.ndim == 0 else out


def mu_nate(kind, n_alpha: float, n_total: float, alpha: float) -> float:
    """Per-unit divergence so that ``score = n_total * mu_nate`` for BJ and NA.

    The transforms have no such factorization; for them the NA divergence
    is reported.
    """
    if n_total <= 0:
        return 0.0
    kind = ScoreKind.parse(kind)
    if kind == ScoreKind.BJ:
        return float(kl_divergence(n_alpha / n_total, alpha))
    return float(na_divergence(n_alpha, n_total, alpha))


def max_over_alpha(
    S: Subpopulation,
    table: CellTable,
    kind,
    alpha_min: float,
    alpha_max: float,
    one_sided: bool = True,
    cell_mask: Optional[np.ndarray] = None,
) -> ScoredAlpha:
    """Maximize ``F_alpha(S)`` over the candidate thresholds of the table.

    This is the canonical evaluation used everywhere a final score is
    reported: the per-cell masses are summed in cell order, so any two
    subpopulations covering the same cells get bitwise equal scores.
    """
    kind = ScoreKind.parse(kind)
    alphas, mass = table.mass_matrix(alpha_min, alpha_max)
    keep = table.cell_mask(S) if cell_mask is None else cell_mask
    n_total = float(table.counts[keep].sum()) if table.M else 0.0
    if n_total <= 0:
        return ScoredAlpha(float(alpha_min), 0.0, 0.0)
    n_alpha = mass[keep].sum(axis=0)
    scores = score_array(kind, n_alpha, n_total, alphas, one_sided)
    k = int(np.argmax(scores))
    if scores[k] <= 0:
        return ScoredAlpha(float(alpha_min), 0.0, 0.0)
    return ScoredAlpha(float(alphas[k]), float(scores[k]), mu_nate(kind, n_alpha[k], n_total, alphas[k]))


def omega_coefficients(kind, p: OmegaParams):
    """Coefficients ``(C1, C2)`` with ``omega = C1 N_alpha + C2 N``."""
    kind = ScoreKind.parse(kind)
    a, b = p.alpha, p.beta
    if kind == ScoreKind.NA:
        den = a * (1 - a)
        return (b - a) / den, (a * a - b * b) / (2 * den)
    if kind == ScoreKind.BJ:
        return np.log(b * (1 - a) / (a * (1 - b))), np.log1p(-b) - np.log1p(-a)
    raise ValueError("omega is defined for BJ and NA only")


def omega(kind, p: OmegaParams, n_alpha, n_total):
    """Additive per-cell contribution at a fixed alternative proportion ``beta``.

    Maximizing the sum over cells with respect to ``beta`` recovers the score
    of the union, with the maximum at ``beta = N_alpha / N``.
    """
    c1, c2 = omega_coefficients(kind, p)
    return c1 * np.asarray(n_alpha, float) + c2 * np.asarray(n_total, float)


def na_beta_roots(alpha: float, beta_mle: float):
    """Roots in ``beta`` of the NA omega: ``(alpha, 2 beta_mle - alpha)``."""
    if beta_mle < alpha:
        raise ValueError("beta_mle must be at least alpha")
    return float(alpha), float(2.0 * beta_mle - alpha)


def bj_beta_max(alpha: float, beta_mle: float) -> float:
    """Upper root in ``beta`` of the BJ omega, found numerically."""
    from scipy.optimize import brentq

    if beta_mle <= alpha:
        return float(alpha)

    def f(b):
        c1, c2 = omega_coefficients(ScoreKind.BJ, OmegaParams(alpha, b))
        return c1 * beta_mle + c2

    hi = 1.0 - 1e-15
    if f(hi) >= 0:
        return hi
    return float(brentq(f, beta_mle, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))

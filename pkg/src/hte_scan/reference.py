"""Empirical reference distributions and p-value ranges.

Each covariate profile's control outcomes define a reference law for the
treated units that share the profile. A treated outcome is mapped to a
half-open interval ``(p_min, p_max]`` of p-values rather than a single
point so that ties with control outcomes are handled exactly: drawing a
point uniformly inside the range gives a Uniform(0, 1) variable when the
treated outcome comes from the same law as the controls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SIDEDNESS = ("upper", "lower", "two")


@dataclass(frozen=True)
class ReferenceDistribution:
    """Sorted control outcomes for one covariate profile."""

    outcomes: np.ndarray

    def __post_init__(self):
        arr = np.sort(np.asarray(self.outcomes, dtype=float))
        if arr.size == 0:
            raise ValueError("a reference distribution needs at least one control outcome")
        object.__setattr__(self, "outcomes", arr)

    @property
    def size(self) -> int:
        return int(self.outcomes.size)

    def cdf(self, y: float) -> float:
        """Empirical CDF ``#{controls <= y} / n_c``."""
        return np.searchsorted(self.outcomes, y, side="right") / self.size


@dataclass(frozen=True)
class PValueRange:
    """Half-open p-value interval ``(p_min, p_max]``."""

    p_min: float
    p_max: float

    def __post_init__(self):
        if not (0.0 <= self.p_min < self.p_max <= 1.0):
            raise ValueError(f"invalid p-value range ({self.p_min}, {self.p_max}]")

    def mass(self, alpha: float) -> float:
        return significance_mass(self, alpha)

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.p_min, self.p_max))


def _check_sidedness(sidedness: str) -> str:
    if sidedness not in SIDEDNESS:
        raise ValueError(f"sidedness must be one of {SIDEDNESS}, got {sidedness!r}")
    return sidedness


def fold_two_sided(lo, hi):
    """Map upper-tail ranges to two-sided ranges.

    The two-sided p-value of an upper p-value ``u`` is ``2 min(u, 1 - u)``.
    Ranges on one side of 1/2 map linearly; a range straddling 1/2 maps to
    ``(2 min(lo, 1 - hi), 1]``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    below = hi <= 0.5
    above = lo >= 0.5
    new_lo = np.where(below, 2 * lo, np.where(above, 2 * (1 - hi), 2 * np.minimum(lo, 1 - hi)))
    new_hi = np.where(below, 2 * hi, np.where(above, 2 * (1 - lo), 1.0))
    return new_lo, new_hi


def ranges_from_counts(n_less, n_equal, n_controls, sidedness: str = "two"):
    """Vectorized range endpoints from control tie counts.

    Parameters
    ----------
    n_less, n_equal : array_like of int
        Number of controls strictly below and equal to each treated outcome.
    n_controls : array_like of int
        Control count of the matching profile (at least one).
    sidedness : {"upper", "lower", "two"}

    Returns
    -------
    lo, hi : ndarray
    """
    _check_sidedness(sidedness)
    n_less = np.asarray(n_less, dtype=float)
    n_equal = np.asarray(n_equal, dtype=float)
    denom = np.asarray(n_controls, dtype=float) + 1.0
    if sidedness == "lower":
        return n_less / denom, (n_less + n_equal + 1.0) / denom
    n_greater = denom - 1.0 - n_less - n_equal
    lo = n_greater / denom
    hi = (n_greater + n_equal + 1.0) / denom
    if sidedness == "two":
        lo, hi = fold_two_sided(lo, hi)
    return lo, hi


def p_value_range(ref: ReferenceDistribution, y: float, sidedness: str = "two") -> PValueRange:
    """P-value range of outcome ``y`` against a reference distribution.

    Examples
    --------
    >>> ref = ReferenceDistribution(np.array([1.0, 2.0, 3.0, 4.0]))
    >>> p_value_range(ref, 3.5, "upper")
    PValueRange(p_min=0.2, p_max=0.4)
    """
    c = ref.outcomes
    n_less = np.searchsorted(c, y, side="left")
    n_equal = np.searchsorted(c, y, side="right") - n_less
    lo, hi = ranges_from_counts(n_less, n_equal, c.size, sidedness)
    return PValueRange(float(lo), float(hi))


def significance_mass(r: PValueRange, alpha: float) -> float:
    """Fraction of the range lying at or below ``alpha``."""
    return float(np.clip((alpha - r.p_min) / (r.p_max - r.p_min), 0.0, 1.0))


def masses(lo, hi, alphas) -> np.ndarray:
    """Significance masses of many ranges at many thresholds, shape ``(R, K)``."""
    lo = np.asarray(lo, dtype=float)[:, None]
    hi = np.asarray(hi, dtype=float)[:, None]
    a = np.asarray(alphas, dtype=float)[None, :]
    return np.clip((a - lo) / (hi - lo), 0.0, 1.0)


def endpoint_alphas(lo, hi, alpha_min: float, alpha_max: float) -> np.ndarray:
    """Distinct endpoints inside the window plus the window bounds."""
    if not (0.0 < alpha_min < alpha_max < 1.0):
        raise ValueError(f"need 0 < alpha_min < alpha_max < 1, got ({alpha_min}, {alpha_max})")
    pts = np.concatenate([np.asarray(lo, float).ravel(), np.asarray(hi, float).ravel()])
    pts = pts[(pts >= alpha_min) & (pts <= alpha_max)]
    return np.unique(np.concatenate([pts, [alpha_min, alpha_max]]))


def candidate_alphas(
    ranges: Iterable[PValueRange], alpha_min: float, alpha_max: float
) -> np.ndarray:
    """Thresholds at which the scan statistic can attain its maximum over alpha.

    The significance mass of a fixed set of ranges is piecewise linear in
    alpha with breaks at range endpoints, and every score in the family is
    quasi-convex along each linear piece, so the window bounds together with
    the endpoints inside the window suffice.
    """
    ranges: Sequence[PValueRange] = list(ranges)
    lo = [r.p_min for r in ranges]
    hi = [r.p_max for r in ranges]
    return endpoint_alphas(lo, hi, alpha_min, alpha_max)

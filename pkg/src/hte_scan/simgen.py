"""Semi-synthetic experiments with a planted affected subpopulation.

A base dataset fixes covariate profiles and treatment assignment. Outcomes
are redrawn: treated records whose profile lies in the affected
subpopulation follow the alternative ``f1``, every other record follows
``f0 = N(0, 1)``. Detection power is the rejection rate of a rank test of
the observed statistic against statistics of datasets drawn entirely from
``f0`` on the same base.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import IO, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .data_model import CellTable, CovariateSchema, DataError, Subpopulation
from .inference import rank_p_value
from .scan import ScanConfig, subpopulation_scan

ALTERNATIVES = ("mean_shift", "symmetric_mixture")
STATISTICS = ("scan", "mean_diff")
DEFAULT_ARITIES = (2, 4, 4, 3, 2, 4, 3, 5, 7, 2)


class Dataset(NamedTuple):
    """Column arrays of one experiment."""

    y: np.ndarray
    w: np.ndarray
    X: np.ndarray
    schema: CovariateSchema


@dataclass(frozen=True)
class SimSpec:
    """Injection and protocol parameters.

    Attributes
    ----------
    effect_magnitude : float
        Shift of the alternative: ``N(delta, 1)`` or ``N(+-delta, 1)`` halves.
    num_covs : int
        Covariates restricted in the affected subpopulation.
    value_prob : float
        Probability each value of a restricted covariate is kept.
    alternative : {"mean_shift", "symmetric_mixture"}
    arities : tuple of int
        Covariate arities of the synthetic base.
    n_profiles : int
        Distinct profiles in the synthetic base.
    records_per_profile : int
    replicates, null_copies : int
    gamma : float
    sidedness : {"upper", "lower", "two"}
    statistic : {"scan", "mean_diff"}
    min_affected : int
        Affected subpopulations holding fewer treated base records are
        redrawn, so every replicate carries an effect.
    seed : int
    """

    effect_magnitude: float = 1.5
    num_covs: int = 5
    value_prob: float = 0.5
    alternative: str = "mean_shift"
    arities: Tuple[int, ...] = DEFAULT_ARITIES
    n_profiles: int = 150
    records_per_profile: int = 40
    replicates: int = 50
    null_copies: int = 200
    gamma: float = 0.05
    sidedness: str = "two"
    statistic: str = "scan"
    min_affected: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "arities", tuple(int(a) for a in self.arities))
        if self.alternative not in ALTERNATIVES:
            raise DataError(f"alternative must be one of {ALTERNATIVES}")
        if self.statistic not in STATISTICS:
            raise DataError(f"statistic must be one of {STATISTICS}")
        if not (0 <= self.num_covs <= len(self.arities)):
            raise DataError("num_covs must lie in [0, d]")
        if not (0.0 < self.value_prob <= 1.0):
            raise DataError("value_prob must lie in (0, 1]")
        if self.replicates < 1 or self.null_copies < 19:
            raise DataError("need replicates >= 1 and null_copies >= 19")
        if self.n_profiles < 1 or self.records_per_profile < 2:
            raise DataError("need n_profiles >= 1 and records_per_profile >= 2")
        if self.min_affected < 0:
            raise DataError("min_affected must be non-negative")
        if self.n_profiles > int(np.prod([float(a) for a in self.arities])):
            raise DataError("n_profiles exceeds the number of possible profiles")


def synthetic_base(
    arities: Sequence[int], n_profiles: int, records_per_profile: int, rng: np.random.Generator
) -> Dataset:
    """Distinct uniformly drawn profiles, each repeated, with fair-coin treatment.

    Outcomes are zero placeholders; :func:`inject` fills them in.
    """
    arities = np.asarray(arities, dtype=np.int64)
    seen, rows = set(), []
    while len(rows) < n_profiles:
        p = tuple(int(v) for v in (rng.random(arities.size) * arities).astype(np.int64))
        if p not in seen:
            seen.add(p)
            rows.append(p)
    X = np.repeat(np.array(rows, dtype=np.int64), records_per_profile, axis=0)
    w = rng.random(X.shape[0]) < 0.5
    return Dataset(np.zeros(X.shape[0]), w, X, CovariateSchema.from_arities(arities))


def generate_affected_subpopulation(
    schema: CovariateSchema, num_covs: int, value_prob: float, seed
) -> Subpopulation:
    """Restrict ``num_covs`` random covariates to random non-empty value subsets."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if not (0 <= num_covs <= schema.d):
        raise DataError("num_covs must lie in [0, d]")
    chosen = set(rng.choice(schema.d, size=num_covs, replace=False).tolist())
    values = []
    for j, a in enumerate(schema.arities):
        if j in chosen:
            keep = rng.random(a) < value_prob
            if not keep.any():
                keep[rng.integers(a)] = True
            values.append(frozenset(np.flatnonzero(keep).tolist()))
        else:
            values.append(frozenset(range(a)))
    return Subpopulation(tuple(values))


def draw_affected(base: Dataset, spec: SimSpec, rng: np.random.Generator, max_tries: int = 10_000) -> Subpopulation:
    """Affected subpopulation holding at least ``spec.min_affected`` treated base records."""
    treated = base.X[base.w]
    for _ in range(max_tries):
        truth = generate_affected_subpopulation(base.schema, spec.num_covs, spec.value_prob, rng)
        if np.count_nonzero(truth.mask(treated)) >= spec.min_affected:
            return truth
    raise DataError(f"no affected subpopulation with {spec.min_affected} treated records in {max_tries} draws")


def inject(
    base: Dataset, affected: Subpopulation, effect_magnitude: float, alternative: str, rng: np.random.Generator
) -> Dataset:
    """Redraw outcomes: ``f1`` on affected treated records, ``f0`` elsewhere.

    Profiles and treatment assignment are kept exactly.
    """
    if alternative not in ALTERNATIVES:
        raise DataError(f"alternative must be one of {ALTERNATIVES}")
    y = rng.standard_normal(base.y.size)
    hit = base.w & affected.mask(base.X)
    if alternative == "mean_shift":
        y[hit] += effect_magnitude
    else:
        signs = np.where(rng.random(int(hit.sum())) < 0.5, -1.0, 1.0)
        y[hit] += signs * effect_magnitude
    return Dataset(y, base.w.copy(), base.X.copy(), base.schema)


def mean_difference(ds: Dataset) -> float:
    """Absolute treated-minus-control difference of mean outcomes."""
    return float(abs(ds.y[ds.w].mean() - ds.y[~ds.w].mean()))


def statistic_value(ds: Dataset, spec: SimSpec, cfg: ScanConfig) -> float:
    if spec.statistic == "mean_diff":
        return mean_difference(ds)
    table = CellTable.from_arrays(ds.y, ds.w, ds.X, ds.schema, spec.sidedness)
    return subpopulation_scan(table, cfg).score if table.M else 0.0


def accuracy(
    detected: Optional[Subpopulation], truth: Subpopulation, treated_profiles: np.ndarray, report_vacuous: bool = False
):
    """Jaccard overlap of treated records in ``detected`` and in ``truth``.

    When both sets are empty the overlap is defined as 1; with
    ``report_vacuous`` the function returns ``(value, vacuous)``.
    """
    X = np.asarray(treated_profiles)
    a = np.zeros(X.shape[0], dtype=bool) if detected is None else detected.mask(X)
    b = truth.mask(X)
    union = int(np.count_nonzero(a | b))
    vacuous = union == 0
    value = 1.0 if vacuous else np.count_nonzero(a & b) / union
    return (float(value), vacuous) if report_vacuous else float(value)


def binomial_ci(k: int, n: int, level: float = 0.95) -> Tuple[float, float]:
    """Clopper-Pearson interval."""
    res = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="exact")
    return float(res.low), float(res.high)


def null_acceptance_interval(n: int, gamma: float, level: float = 0.95) -> Tuple[float, float]:
    """Central ``level`` range of the rejection rate over ``n`` replicates at size ``gamma``."""
    lo = stats.binom.ppf((1 - level) / 2, n, gamma)
    hi = stats.binom.ppf(1 - (1 - level) / 2, n, gamma)
    return float(lo / n), float(hi / n)


@dataclass
class ReplicateRecord:
    replicate: int
    observed: float
    p_value: float
    reject: bool
    affected: List[List[int]]
    detected: Optional[List[List[int]]]
    accuracy: Optional[float]


@dataclass
class PowerReport:
    p_values: List[float]
    power: float
    ci: Tuple[float, float]
    null_scores: List[float]
    replicates: List[ReplicateRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "p_values": list(self.p_values),
            "power": self.power,
            "ci": list(self.ci),
            "null_scores": list(self.null_scores),
            "replicates": [asdict(r) for r in self.replicates],
        }

    def write_jsonl(self, fh: IO[str]) -> None:
        for r in self.replicates:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def detection_power_experiment(
    spec: SimSpec, cfg: ScanConfig, base: Optional[Dataset] = None, null_scores: Optional[Sequence[float]] = None
) -> PowerReport:
    """Estimate detection power on a fixed base.

    The null distribution comes from ``spec.null_copies`` datasets with all
    outcomes drawn from ``f0``; it depends only on the base, so it is
    computed once and shared by all replicates (or passed in). Each replicate
    draws a fresh affected subpopulation (see :func:`draw_affected`) and
    injected outcomes. Random
    streams are derived from ``spec.seed`` by counter.
    """
    if base is None:
        base = synthetic_base(spec.arities, spec.n_profiles, spec.records_per_profile, np.random.default_rng([spec.seed, 0]))
    inner = replace(cfg, threads=1)
    full = Subpopulation.full(base.schema)
    if null_scores is None:
        null_scores = [
            statistic_value(inject(base, full, 0.0, "mean_shift", np.random.default_rng([spec.seed, 1, i])), spec, inner)
            for i in range(spec.null_copies)
        ]
    null_scores = [float(s) for s in null_scores]
    records, pvals = [], []
    for r in range(spec.replicates):
        rng = np.random.default_rng([spec.seed, 2, r])
        truth = draw_affected(base, spec, rng)
        ds = inject(base, truth, spec.effect_magnitude, spec.alternative, rng)
        detected, acc = None, None
        if spec.statistic == "scan":
            table = CellTable.from_arrays(ds.y, ds.w, ds.X, ds.schema, spec.sidedness)
            res = subpopulation_scan(table, inner)
            obs, detected = res.score, res.best
            acc = accuracy(detected, truth, ds.X[ds.w])
        else:
            obs = mean_difference(ds)
        p = rank_p_value(obs, null_scores)
        pvals.append(p)
        records.append(
            ReplicateRecord(r, float(obs), p, p <= spec.gamma, truth.to_lists(),
                            None if detected is None else detected.to_lists(), acc)
        )
    k = sum(rec.reject for rec in records)
    return PowerReport(pvals, k / spec.replicates, binomial_ci(k, spec.replicates), null_scores, records)

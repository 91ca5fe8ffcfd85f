"""Sparse covariate-profile tensor and rectangular subpopulations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .reference import ReferenceDistribution, _check_sidedness, endpoint_alphas, masses, ranges_from_counts

THIN_CONTROL_THRESHOLD = 5


class DataError(ValueError):
    """Input data or configuration failed validation."""


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariates, each with an ordered tuple of value labels."""

    names: Tuple[str, ...]
    values: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        values = tuple(tuple(str(v) for v in vs) for vs in self.values)
        if len(names) < 1:
            raise DataError("schema needs at least one covariate")
        if len(names) != len(values):
            raise DataError("names and values differ in length")
        if len(set(names)) != len(names):
            raise DataError("covariate names must be unique")
        for name, vs in zip(names, values):
            if len(vs) < 1:
                raise DataError(f"covariate {name!r} has no values")
            if len(set(vs)) != len(vs):
                raise DataError(f"covariate {name!r} has duplicate value labels")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_arities(cls, arities: Sequence[int], prefix: str = "x") -> "CovariateSchema":
        names = tuple(f"{prefix}{j}" for j in range(len(arities)))
        values = tuple(tuple(str(v) for v in range(a)) for a in arities)
        return cls(names, values)

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def arities(self) -> Tuple[int, ...]:
        return tuple(len(v) for v in self.values)

    def arity(self, j: int) -> int:
        return len(self.values[j])


def member_cell_mask(member: np.ndarray, profiles: np.ndarray) -> np.ndarray:
    """Cells whose profile passes every row of a ``(d, max arity)`` membership matrix."""
    keep = np.ones(profiles.shape[0], dtype=bool)
    for j in range(member.shape[0]):
        keep &= member[j, profiles[:, j]].astype(bool)
    return keep


class Record(NamedTuple):
    outcome: float
    treatment: int
    profile: Tuple[int, ...]


class SubsetCounts(NamedTuple):
    n_alpha: float
    n_total: float


@dataclass(frozen=True)
class Subpopulation:
    """Rectangular subset: one non-empty value-index set per covariate."""

    values: Tuple[frozenset, ...]

    def __post_init__(self):
        vals = tuple(frozenset(int(v) for v in vs) for vs in self.values)
        for j, vs in enumerate(vals):
            if not vs:
                raise DataError(f"mode {j} has an empty value subset")
        object.__setattr__(self, "values", vals)

    @classmethod
    def full(cls, schema: CovariateSchema) -> "Subpopulation":
        return cls(tuple(frozenset(range(a)) for a in schema.arities))

    @classmethod
    def from_member(cls, member: np.ndarray, arities: Sequence[int]) -> "Subpopulation":
        return cls(tuple(frozenset(np.flatnonzero(member[j, :a]).tolist()) for j, a in enumerate(arities)))

    @property
    def d(self) -> int:
        return len(self.values)

    def validate(self, schema: CovariateSchema) -> None:
        if self.d != schema.d:
            raise DataError(f"subpopulation has {self.d} modes, schema has {schema.d}")
        for j, vs in enumerate(self.values):
            if max(vs) >= schema.arity(j) or min(vs) < 0:
                raise DataError(f"mode {j} value index out of range")

    def member_matrix(self, arities: Sequence[int]) -> np.ndarray:
        """Boolean ``(d, max arity)`` matrix of kept values."""
        out = np.zeros((len(arities), max(arities)), dtype=np.uint8)
        for j, vs in enumerate(self.values):
            out[j, sorted(vs)] = 1
        return out

    def contains(self, profile: Sequence[int]) -> bool:
        return all(int(x) in vs for x, vs in zip(profile, self.values))

    def mask(self, profiles: np.ndarray) -> np.ndarray:
        """Membership of each row of an ``(n, d)`` profile array."""
        profiles = np.asarray(profiles)
        keep = np.ones(profiles.shape[0], dtype=bool)
        if profiles.shape[0] == 0:
            return keep
        for j, vs in enumerate(self.values):
            col = profiles[:, j]
            lut = np.zeros(max(max(vs), int(col.max())) + 1, dtype=bool)
            lut[list(vs)] = True
            keep &= lut[col]
        return keep

    def describe(self, schema: CovariateSchema) -> Dict[str, list]:
        """Kept value labels per restricted covariate."""
        return {
            name: [labels[v] for v in sorted(vs)]
            for name, labels, vs in zip(schema.names, schema.values, self.values)
            if len(vs) < len(labels)
        }

    def to_lists(self) -> list:
        return [sorted(vs) for vs in self.values]


@dataclass
class Cell:
    """Materialized view of one tensor cell."""

    profile: Tuple[int, ...]
    reference: Optional[ReferenceDistribution]
    treated_outcomes: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray

    @property
    def n_control(self) -> int:
        return 0 if self.reference is None else self.reference.size

    @property
    def n_treated(self) -> int:
        return int(self.treated_outcomes.size)


class ProfileIndex:
    """Reusable grouping of records by profile and outcome rank.

    Permutation replicates only reshuffle treatment labels, so the unique
    profiles and dense outcome ranks are computed once and reused.
    """

    def __init__(self, outcomes: np.ndarray, profiles: np.ndarray):
        self.outcomes = np.asarray(outcomes, dtype=float)
        self.profiles = np.asarray(profiles, dtype=np.int64)
        self.unique, inv = np.unique(self.profiles, axis=0, return_inverse=True)
        self.pid = inv.ravel().astype(np.int64)
        _, rank = np.unique(self.outcomes, return_inverse=True)
        self.rank = rank.ravel().astype(np.int64)
        self.n_ranks = int(self.rank.max()) + 1 if self.rank.size else 1

    @property
    def n_profiles(self) -> int:
        return int(self.unique.shape[0])


@dataclass(frozen=True)
class Diagnostics:
    orphan_treated: int
    thin_control_cells: int
    n_records: int
    n_treated: int
    n_control: int

    def to_dict(self) -> dict:
        return {
            "orphan_treated": self.orphan_treated,
            "thin_control_cells": self.thin_control_cells,
            "n_records": self.n_records,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
        }


@dataclass
class CellTable:
    """Sparse tensor of treatment cells.

    Cells are the distinct profiles holding at least one treated unit with
    a defined reference (or any treated unit when orphans are included),
    ordered lexicographically by profile. P-value ranges are stored flat and
    grouped by cell.

    Attributes
    ----------
    profiles : ndarray, shape (M, d)
    counts : ndarray, shape (M,)
        Treated units per cell.
    lo, hi : ndarray, shape (R,)
        P-value range endpoints, grouped by cell.
    range_cell : ndarray, shape (R,)
        Cell index of each range.
    treated_index : ndarray, shape (R,)
        Record index of each range's treated unit.
    """

    schema: CovariateSchema
    sidedness: str
    profiles: np.ndarray
    counts: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    range_cell: np.ndarray
    treated_index: np.ndarray
    treated_outcomes: np.ndarray
    n_controls: np.ndarray
    control_outcomes: np.ndarray
    control_offsets: np.ndarray
    diagnostics: Diagnostics
    _mass_cache: dict = field(default_factory=dict, repr=False)
    _cells: Optional[dict] = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return int(self.profiles.shape[0])

    @property
    def d(self) -> int:
        return self.schema.d

    @property
    def n(self) -> int:
        """Smallest control count over cells with a reference."""
        nc = self.n_controls[self.n_controls > 0]
        return int(nc.min()) if nc.size else 0

    @property
    def n_treated(self) -> int:
        return int(self.lo.size)

    @classmethod
    def from_arrays(
        cls,
        outcomes,
        treatment,
        profiles,
        schema: CovariateSchema,
        sidedness: str = "two",
        include_orphans: bool = False,
        index: Optional[ProfileIndex] = None,
    ) -> "CellTable":
        """Build the table from column arrays.

        ``index`` may carry a precomputed grouping of the same outcomes and
        profiles, which makes rebuilding under relabelled treatment cheap.
        """
        try:
            _check_sidedness(sidedness)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        w = np.asarray(treatment).astype(bool)
        if index is None:
            y = np.asarray(outcomes, dtype=float)
            X = np.asarray(profiles, dtype=np.int64)
            if y.ndim != 1 or y.size == 0:
                raise DataError("no records")
            if X.shape != (y.size, schema.d):
                raise DataError(f"profiles must have shape ({y.size}, {schema.d}), got {X.shape}")
            if w.shape != y.shape:
                raise DataError("treatment and outcome lengths differ")
            bad = (X < 0) | (X >= np.asarray(schema.arities)[None, :])
            if bad.any():
                i = int(np.flatnonzero(bad.any(axis=1))[0])
                raise DataError(f"record {i}: profile {X[i].tolist()} outside schema arities {schema.arities}")
            index = ProfileIndex(y, X)
        y = index.outcomes
        pid, rank, R = index.pid, index.rank, index.n_ranks
        P = index.n_profiles

        ctrl = ~w
        nc_profile = np.bincount(pid[ctrl], minlength=P)
        ckeys = np.sort(pid[ctrl] * R + rank[ctrl])

        t_idx = np.flatnonzero(w)
        t_pid = pid[t_idx]
        has_ref = nc_profile[t_pid] > 0
        orphans = int((~has_ref).sum())
        if not include_orphans:
            t_idx, t_pid = t_idx[has_ref], t_pid[has_ref]
            has_ref = has_ref[has_ref]

        base = np.searchsorted(ckeys, t_pid * R, side="left")
        keys = t_pid * R + rank[t_idx]
        n_le = np.searchsorted(ckeys, keys, side="right") - base
        n_less = np.searchsorted(ckeys, keys, side="left") - base
        nc = nc_profile[t_pid]
        lo = np.zeros(t_idx.size)
        hi = np.ones(t_idx.size)
        if has_ref.any():
            lo_r, hi_r = ranges_from_counts(n_less[has_ref], (n_le - n_less)[has_ref], nc[has_ref], sidedness)
            lo[has_ref], hi[has_ref] = lo_r, hi_r

        # group ranges by cell; profiles are already lexicographically ordered by pid
        order = np.argsort(t_pid, kind="stable")
        t_idx, t_pid, lo, hi = t_idx[order], t_pid[order], lo[order], hi[order]
        cell_pids, range_cell, counts = np.unique(t_pid, return_inverse=True, return_counts=True)

        # control outcomes per cell, sorted
        c_idx = np.flatnonzero(ctrl)
        c_in = np.isin(pid[c_idx], cell_pids)
        c_idx = c_idx[c_in]
        c_order = np.lexsort((y[c_idx], pid[c_idx]))
        c_idx = c_idx[c_order]
        n_controls = nc_profile[cell_pids]
        offsets = np.concatenate([[0], np.cumsum(n_controls)])

        thin = int(((n_controls > 0) & (n_controls < THIN_CONTROL_THRESHOLD)).sum())
        diag = Diagnostics(
            orphan_treated=orphans,
            thin_control_cells=thin,
            n_records=int(y.size),
            n_treated=int(w.sum()),
            n_control=int(ctrl.sum()),
        )
        return cls(
            schema=schema,
            sidedness=sidedness,
            profiles=np.ascontiguousarray(index.unique[cell_pids].astype(np.int32)),
            counts=counts.astype(float),
            lo=lo,
            hi=hi,
            range_cell=range_cell.ravel().astype(np.int64),
            treated_index=t_idx,
            treated_outcomes=y[t_idx],
            n_controls=n_controls.astype(np.int64),
            control_outcomes=y[c_idx],
            control_offsets=offsets.astype(np.int64),
            diagnostics=diag,
        )

    @classmethod
    def from_ranges(
        cls,
        schema: CovariateSchema,
        cell_profiles: Sequence[Sequence[int]],
        cell_ranges: Sequence[Sequence[Tuple[float, float]]],
        sidedness: str = "upper",
    ) -> "CellTable":
        """Table from precomputed p-value ranges, one list of ``(p_min, p_max)`` per cell.

        Useful when p-values come from elsewhere; cells hold no control outcomes.
        """
        prof = np.asarray(cell_profiles, dtype=np.int64).reshape(len(cell_ranges), schema.d)
        if len({tuple(p) for p in prof.tolist()}) != len(prof):
            raise DataError("duplicate cell profiles")
        if any(len(r) == 0 for r in cell_ranges):
            raise DataError("every cell needs at least one range")
        order = np.lexsort(prof.T[::-1]) if len(prof) else np.zeros(0, dtype=np.int64)
        lo, hi, rc = [], [], []
        for m, i in enumerate(order):
            for a, b in cell_ranges[i]:
                if not (0.0 <= a < b <= 1.0):
                    raise DataError(f"invalid p-value range ({a}, {b}]")
                lo.append(a)
                hi.append(b)
                rc.append(m)
        counts = np.array([len(cell_ranges[i]) for i in order], dtype=float)
        R = len(lo)
        return cls(
            schema=schema,
            sidedness=sidedness,
            profiles=np.ascontiguousarray(prof[order].astype(np.int32)),
            counts=counts,
            lo=np.array(lo, dtype=float),
            hi=np.array(hi, dtype=float),
            range_cell=np.array(rc, dtype=np.int64),
            treated_index=np.arange(R),
            treated_outcomes=np.full(R, np.nan),
            n_controls=np.zeros(len(order), dtype=np.int64),
            control_outcomes=np.zeros(0),
            control_offsets=np.zeros(len(order) + 1, dtype=np.int64),
            diagnostics=Diagnostics(0, 0, R, R, 0),
        )

    @property
    def cells(self) -> Dict[Tuple[int, ...], Cell]:
        """Mapping from profile tuple to a materialized :class:`Cell`."""
        if self._cells is None:
            starts = np.concatenate([[0], np.cumsum(self.counts).astype(np.int64)])
            out = {}
            for m in range(self.M):
                a, b = starts[m], starts[m + 1]
                ctrl = self.control_outcomes[self.control_offsets[m]:self.control_offsets[m + 1]]
                ref = ReferenceDistribution(ctrl) if ctrl.size else None
                key = tuple(int(v) for v in self.profiles[m])
                out[key] = Cell(key, ref, self.treated_outcomes[a:b], self.lo[a:b], self.hi[a:b])
            self._cells = out
        return self._cells

    def candidate_alphas(self, alpha_min: float, alpha_max: float) -> np.ndarray:
        return self.mass_matrix(alpha_min, alpha_max)[0]

    def mass_matrix(self, alpha_min: float, alpha_max: float) -> Tuple[np.ndarray, np.ndarray]:
        """Candidate thresholds and per-cell significance mass at each.

        Returns
        -------
        alphas : ndarray, shape (K,)
        mass : ndarray, shape (M, K)
        """
        key = (float(alpha_min), float(alpha_max))
        if key not in self._mass_cache:
            alphas = endpoint_alphas(self.lo, self.hi, alpha_min, alpha_max)
            if self.M:
                starts = np.concatenate([[0], np.cumsum(self.counts[:-1]).astype(np.int64)])
                mass = np.add.reduceat(masses(self.lo, self.hi, alphas), starts, axis=0)
            else:
                mass = np.zeros((0, alphas.size))
            self._mass_cache[key] = (alphas, np.ascontiguousarray(mass))
        return self._mass_cache[key]

    def cell_mask(self, S: Subpopulation) -> np.ndarray:
        return S.mask(self.profiles)

    def range_mask(self, S: Subpopulation) -> np.ndarray:
        """Membership of each treated range in ``S``."""
        return self.cell_mask(S)[self.range_cell]


def records_to_arrays(records: Sequence[Record], schema: CovariateSchema):
    """Validate records and split them into column arrays."""
    if len(records) == 0:
        raise DataError("no records")
    y = np.empty(len(records))
    w = np.empty(len(records), dtype=bool)
    X = np.empty((len(records), schema.d), dtype=np.int64)
    arities = schema.arities
    for i, rec in enumerate(records):
        prof = tuple(rec.profile)
        if len(prof) != schema.d:
            raise DataError(f"record {i}: profile has {len(prof)} entries, schema has {schema.d}")
        for j, (v, a) in enumerate(zip(prof, arities)):
            if not (0 <= int(v) < a):
                raise DataError(f"record {i}: value {v} of covariate {schema.names[j]!r} outside 0..{a - 1}")
        if rec.treatment not in (0, 1, True, False):
            raise DataError(f"record {i}: treatment must be 0 or 1, got {rec.treatment!r}")
        y[i] = float(rec.outcome)
        w[i] = bool(rec.treatment)
        X[i] = prof
    if not np.all(np.isfinite(y)):
        raise DataError(f"record {int(np.flatnonzero(~np.isfinite(y))[0])}: outcome is not finite")
    return y, w, X


def build_cell_table(
    records: Sequence[Record],
    schema: CovariateSchema,
    sidedness: str = "two",
    include_orphans: bool = False,
) -> CellTable:
    """Build a :class:`CellTable` from records.

    Treated units in profiles without controls are dropped and tallied in
    ``diagnostics.orphan_treated`` unless ``include_orphans`` is set, in
    which case they carry the uninformative range ``(0, 1]``.
    """
    y, w, X = records_to_arrays(records, schema)
    return CellTable.from_arrays(y, w, X, schema, sidedness, include_orphans)


def subset_counts(S: Subpopulation, table: CellTable, alpha: float) -> SubsetCounts:
    """Significance mass and treated count of ``S`` at threshold ``alpha``."""
    keep = table.range_mask(S)
    if not keep.any():
        return SubsetCounts(0.0, 0.0)
    m = masses(table.lo[keep], table.hi[keep], [alpha])[:, 0]
    return SubsetCounts(float(m.sum()), float(keep.sum()))


def iter_records(y: Iterable[float], w: Iterable[int], X: np.ndarray):
    for yi, wi, xi in zip(y, w, X):
        yield Record(float(yi), int(wi), tuple(int(v) for v in xi))

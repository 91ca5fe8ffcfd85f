"""Ordinal-ascent scan over rectangular subpopulations.

At a fixed threshold every score in the family has the linear-time subset
scanning property along one covariate mode: the optimal value subset is a
prefix of the values sorted by ``N_alpha / N``. The scan alternates this
exact per-mode step over all modes until nothing changes, from many random
starting subsets.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .data_model import CellTable, DataError, Subpopulation, member_cell_mask
from .score import ScoredAlpha, ScoreKind, max_over_alpha

INIT_ATTEMPTS = 100


@dataclass(frozen=True)
class ScanConfig:
    """Scan settings.

    Attributes
    ----------
    score : ScoreKind
    alpha_min, alpha_max : float
        Window of significance thresholds searched.
    restarts : int
        Number of random restarts.
    max_cycles : int
        Safety cap on full passes over the modes per restart.
    seed : int
    inclusion_prob : float
        Probability each value is kept in a random starting subset.
    one_sided : bool
        Score only excess significance (the default).
    threads : int
        Worker threads for running restarts concurrently.
    """

    score: ScoreKind = ScoreKind.BJ
    alpha_min: float = 0.01
    alpha_max: float = 0.5
    restarts: int = 50
    max_cycles: int = 100
    seed: int = 0
    inclusion_prob: float = 0.5
    one_sided: bool = True
    threads: int = 1
    full_start: bool = True

    def __post_init__(self):
        object.__setattr__(self, "score", ScoreKind.parse(self.score))
        if not (0.0 < self.alpha_min < self.alpha_max < 1.0):
            raise DataError(f"need 0 < alpha_min < alpha_max < 1, got ({self.alpha_min}, {self.alpha_max})")
        if self.restarts < 1:
            raise DataError("restarts must be positive")
        if self.max_cycles < 1:
            raise DataError("max_cycles must be positive")
        if not (0.0 < self.inclusion_prob < 1.0):
            raise DataError("inclusion_prob must lie in (0, 1)")
        if self.threads < 1:
            raise DataError("threads must be positive")

    def to_dict(self) -> dict:
        return {
            "score": self.score.name.lower(),
            "alpha_min": self.alpha_min,
            "alpha_max": self.alpha_max,
            "restarts": self.restarts,
            "max_cycles": self.max_cycles,
            "seed": self.seed,
            "inclusion_prob": self.inclusion_prob,
            "one_sided": self.one_sided,
        }


class RestartResult(NamedTuple):
    best: Subpopulation
    scored: ScoredAlpha
    cycles: int
    trace: List[float]
    converged: bool


@dataclass
class ScanResult:
    """Best subpopulation over all restarts."""

    best: Subpopulation
    score: float
    alpha: float
    mu_nate: float
    restart_scores: List[float]
    cycles_per_restart: List[int]
    converged: List[bool]
    n_treated: int
    n_cells: int
    wall_time: float = field(default=0.0, compare=False)

    @property
    def best_restart(self) -> int:
        return int(np.argmax(self.restart_scores))

    def to_dict(self, schema=None) -> dict:
        """Serializable form; wall time is left out so reports are reproducible."""
        out = {
            "subpopulation": self.best.to_lists(),
            "score": self.score,
            "alpha": self.alpha,
            "mu_nate": self.mu_nate,
            "restart_scores": list(self.restart_scores),
            "cycles_per_restart": list(self.cycles_per_restart),
            "converged": list(self.converged),
            "n_treated": self.n_treated,
            "n_cells": self.n_cells,
        }
        if schema is not None:
            out["description"] = self.best.describe(schema)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScanResult":
        return cls(
            best=Subpopulation(tuple(frozenset(v) for v in data["subpopulation"])),
            score=data["score"],
            alpha=data["alpha"],
            mu_nate=data["mu_nate"],
            restart_scores=list(data["restart_scores"]),
            cycles_per_restart=list(data["cycles_per_restart"]),
            converged=list(data["converged"]),
            n_treated=data["n_treated"],
            n_cells=data["n_cells"],
        )


def priority(cell_n_alpha: float, cell_n: float) -> Optional[float]:
    """Ordering key ``N_alpha / N`` of a value; ``None`` when it has no treated units."""
    if cell_n <= 0:
        return None
    return cell_n_alpha / cell_n


def _arrays(table: CellTable, cfg: ScanConfig):
    alphas, mass = table.mass_matrix(cfg.alpha_min, cfg.alpha_max)
    arities = np.asarray(table.schema.arities, dtype=np.int64)
    return alphas, mass, arities


def optimize_mode(
    j: int, v_rest: Subpopulation, table: CellTable, cfg: ScanConfig
) -> Tuple[frozenset, ScoredAlpha]:
    """Optimal value subset of mode ``j`` given the other modes of ``v_rest``.

    The subset at mode ``j`` of ``v_rest`` is ignored. The returned score
    is the canonical :func:`~hte_scan.score.max_over_alpha` of the result.
    """
    alphas, mass, arities = _arrays(table, cfg)
    member = v_rest.member_matrix(arities)
    mask, _, _ = kernels.optimize_mode(
        table.profiles, arities, mass, table.counts, alphas, int(cfg.score), cfg.one_sided, member, j
    )
    v_j = frozenset(np.flatnonzero(mask).tolist())
    values = list(v_rest.values)
    values[j] = v_j
    S = Subpopulation(tuple(values))
    return v_j, max_over_alpha(S, table, cfg.score, cfg.alpha_min, cfg.alpha_max, cfg.one_sided)


def ltss_fixed_alpha(n_alpha: Sequence[float], n_total: Sequence[float], alpha: float, kind=ScoreKind.NA):
    """Best subset of values from per-value counts at one threshold.

    Returns
    -------
    values : frozenset of int
    score : float
    """
    n_alpha = np.asarray(n_alpha, dtype=float)
    n_total = np.asarray(n_total, dtype=float)
    V = n_alpha.size
    profiles = np.arange(V, dtype=np.int32)[:, None]
    member = np.ones((1, V), dtype=np.uint8)
    mask, score, _ = kernels.optimize_mode(
        profiles,
        np.array([V], dtype=np.int64),
        n_alpha[:, None].copy(),
        n_total,
        np.array([float(alpha)]),
        int(ScoreKind.parse(kind)),
        True,
        member,
        0,
    )
    return frozenset(np.flatnonzero(mask).tolist()), float(score)


def random_start(table: CellTable, inclusion_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Random starting subsets covering at least one treatment cell.

    Each value is kept independently with ``inclusion_prob``; an empty mode
    is redrawn. If repeated draws miss every cell (sparse high-dimensional
    tables), the profile of a random cell is added to the last draw.
    """
    arities = table.schema.arities
    d, vmax = len(arities), max(arities)
    member = np.zeros((d, vmax), dtype=np.uint8)
    for _ in range(INIT_ATTEMPTS):
        for j, a in enumerate(arities):
            row = rng.random(a) < inclusion_prob
            while not row.any():
                row = rng.random(a) < inclusion_prob
            member[j, :a] = row
        if member_cell_mask(member, table.profiles).any():
            return member
    m = int(rng.integers(table.M))
    member[np.arange(d), table.profiles[m]] = 1
    return member


def scan_restart(table: CellTable, cfg: ScanConfig, restart_seed) -> RestartResult:
    """One ordinal-ascent run from a random start."""
    if table.M == 0:
        raise DataError("no treatment cell with a control reference; nothing to scan")
    alphas, mass, arities = _arrays(table, cfg)
    if table.M == 1:
        S = Subpopulation(tuple(frozenset([int(v)]) for v in table.profiles[0]))
        scored = max_over_alpha(S, table, cfg.score, cfg.alpha_min, cfg.alpha_max, cfg.one_sided)
        return RestartResult(S, scored, 1, [scored.score], True)
    if restart_seed is None:
        member = Subpopulation.full(table.schema).member_matrix(arities)
    else:
        member = random_start(table, cfg.inclusion_prob, np.random.default_rng(restart_seed))
    _, _, cycles, trace, converged = kernels.ascent(
        table.profiles, arities, mass, table.counts, alphas, int(cfg.score), cfg.one_sided, member, cfg.max_cycles
    )
    S = Subpopulation.from_member(member, arities)
    keep = member_cell_mask(member, table.profiles)
    scored = max_over_alpha(S, table, cfg.score, cfg.alpha_min, cfg.alpha_max, cfg.one_sided, cell_mask=keep)
    return RestartResult(S, scored, int(cycles), list(trace), bool(converged))


def restart_seed(seed: int, r: int):
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, int(r)]


def subpopulation_scan(table: CellTable, cfg: ScanConfig) -> ScanResult:
    """Best rectangular subpopulation over ``cfg.restarts`` random restarts.

    Results are deterministic for a fixed seed, whether or not restarts run
    concurrently: ties in score go to the lowest restart index.
    """
    if table.M == 0:
        raise DataError("no treatment cell with a control reference; the scan needs treated and control units sharing a profile")
    t0 = time.perf_counter()
    table.mass_matrix(cfg.alpha_min, cfg.alpha_max)  # warm the cache before threads share it
    seeds = [restart_seed(cfg.seed, r) for r in range(cfg.restarts)]
    if cfg.full_start:
        seeds[0] = None
    if cfg.threads > 1 and cfg.restarts > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            runs = list(pool.map(lambda s: scan_restart(table, cfg, s), seeds))
    else:
        runs = [scan_restart(table, cfg, s) for s in seeds]
    scores = [r.scored.score for r in runs]
    b = int(np.argmax(scores))
    best = runs[b]
    keep = table.cell_mask(best.best)
    return ScanResult(
        best=best.best,
        score=best.scored.score,
        alpha=best.scored.alpha,
        mu_nate=best.scored.mu_nate,
        restart_scores=scores,
        cycles_per_restart=[r.cycles for r in runs],
        converged=[r.converged for r in runs],
        n_treated=int(table.counts[keep].sum()),
        n_cells=int(keep.sum()),
        wall_time=time.perf_counter() - t0,
    )

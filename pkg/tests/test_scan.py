import time
from dataclasses import replace

import numpy as np
import pytest

from hte_scan.data_model import CellTable, CovariateSchema, DataError, Subpopulation, member_cell_mask
from hte_scan.oracle import exhaustive_mode, exhaustive_scan
from hte_scan.scan import (
    ScanConfig,
    ScanResult,
    ltss_fixed_alpha,
    optimize_mode,
    priority,
    random_start,
    scan_restart,
    subpopulation_scan,
)
from hte_scan.score import ScoreKind, max_over_alpha

from conftest import full_grid, random_table


def planted_block_table():
    """3x3 table; cells with both values in {0, 1} hold near-zero p-values."""
    schema = CovariateSchema.from_arities([3, 3])
    grid = full_grid((3, 3))
    ranges = []
    for a, b in grid:
        if a < 2 and b < 2:
            ranges.append([(0.0, 0.002 * (k + 1)) for k in range(8)])
        else:
            ranges.append([(k / 8, (k + 1) / 8) for k in range(8)])
    return CellTable.from_ranges(schema, grid.tolist(), ranges)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha_min": 0.5, "alpha_max": 0.1},
            {"alpha_min": 0.0},
            {"restarts": 0},
            {"max_cycles": 0},
            {"inclusion_prob": 1.0},
            {"threads": 0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(DataError):
            ScanConfig(**kwargs)

    def test_defaults(self):
        cfg = ScanConfig()
        assert (cfg.restarts, cfg.inclusion_prob, cfg.max_cycles, cfg.score) == (50, 0.5, 100, ScoreKind.BJ)

    def test_score_parsed(self):
        assert ScanConfig(score="na").score is ScoreKind.NA


class TestPriority:
    @pytest.mark.parametrize("args, expected", [((8, 10), 0.8), ((0, 10), 0.0), ((2.5, 10), 0.25)])
    def test_ratio(self, args, expected):
        assert priority(*args) == pytest.approx(expected)

    def test_no_treated_units(self):
        assert priority(0, 0) is None


class TestLTSS:
    def test_example(self):
        values, score = ltss_fixed_alpha([8, 1, 5], [10, 10, 10], 0.2)
        assert values == {0, 2}
        assert score == pytest.approx((13 - 4) ** 2 / (2 * 20 * 0.16))
        assert score == pytest.approx(12.6563, abs=5e-5)

    def test_null_proportions_give_singleton(self):
        assert ltss_fixed_alpha([2, 2, 2], [10, 10, 10], 0.2) == (frozenset([0]), 0.0)

    def test_single_value_dominates(self):
        values, _ = ltss_fixed_alpha([10, 0, 0, 0], [10, 10, 10, 10], 0.1)
        assert values == {0}

    def test_mode_matches_exhaustive_on_random_instances(self):
        rng = np.random.default_rng(11)
        for i in range(60):
            t = random_table(rng, tuple(rng.integers(1, 5, size=3)), effect_sd=1.5)
            kind = ScoreKind(int(rng.integers(6)))
            cfg = ScanConfig(score=kind, alpha_min=0.02, alpha_max=0.4)
            member = random_start(t, 0.6, rng)
            S = Subpopulation.from_member(member, t.schema.arities)
            j = int(rng.integers(t.d))
            _, fast = optimize_mode(j, S, t, cfg)
            _, slow = exhaustive_mode(j, S, t, kind, 0.02, 0.4)
            assert fast.score == slow.score


class TestRestart:
    def test_planted_block(self):
        t = planted_block_table()
        cfg = ScanConfig(score=ScoreKind.NA, restarts=10, seed=3)
        res = subpopulation_scan(t, cfg)
        assert res.best == Subpopulation((frozenset([0, 1]), frozenset([0, 1])))
        assert exhaustive_scan(t, ScoreKind.NA).best == res.best

    def test_single_cell(self):
        schema = CovariateSchema.from_arities([3, 2])
        t = CellTable.from_ranges(schema, [[2, 1]], [[(0.0, 0.01)] * 4])
        r = scan_restart(t, ScanConfig(), [0, 0])
        assert r.best == Subpopulation((frozenset([2]), frozenset([1])))
        assert r.cycles == 1 and r.converged

    def test_random_start_covers_a_cell(self):
        rng = np.random.default_rng(0)
        schema = CovariateSchema.from_arities([7] * 6)
        t = CellTable.from_ranges(schema, [[1] * 6, [3] * 6], [[(0, 0.5)], [(0.5, 1)]])
        for _ in range(20):
            assert member_cell_mask(random_start(t, 0.5, rng), t.profiles).any()

    def test_trace_nondecreasing_and_converges(self):
        rng = np.random.default_rng(12)
        cycles = []
        for i in range(20):
            t = random_table(rng, (3, 4, 3), effect_sd=1.0)
            r = scan_restart(t, ScanConfig(), [i, 1])
            assert np.all(np.diff(r.trace) >= -1e-12)
            assert r.converged
            cycles.append(r.cycles)
        assert np.mean(cycles) <= 5


class TestSubpopulationScan:
    def test_refuses_empty_table(self):
        schema = CovariateSchema.from_arities([2])
        t = CellTable.from_arrays(np.zeros(3), np.zeros(3, bool), np.zeros((3, 1), int), schema)
        with pytest.raises(DataError):
            subpopulation_scan(t, ScanConfig())

    def test_one_restart_is_the_full_start(self):
        t = random_table(np.random.default_rng(1), (3, 3, 2))
        cfg = ScanConfig(restarts=1)
        res = subpopulation_scan(t, cfg)
        r = scan_restart(t, cfg, None)
        assert res.best == r.best and res.score == r.scored.score

    def test_one_random_restart(self):
        t = random_table(np.random.default_rng(1), (3, 3, 2))
        cfg = ScanConfig(restarts=1, full_start=False, seed=5)
        res = subpopulation_scan(t, cfg)
        r = scan_restart(t, cfg, [5, 0])
        assert res.best == r.best and res.score == r.scored.score

    def test_deterministic(self):
        t = random_table(np.random.default_rng(2), (3, 4, 2))
        cfg = ScanConfig(restarts=15, seed=7)
        a, b = subpopulation_scan(t, cfg), subpopulation_scan(t, cfg)
        assert a == b
        assert a.to_dict() == b.to_dict()

    def test_threads_match_serial(self):
        t = random_table(np.random.default_rng(3), (3, 4, 2))
        cfg = ScanConfig(restarts=12, seed=9)
        assert subpopulation_scan(t, cfg) == subpopulation_scan(t, replace(cfg, threads=4))

    def test_score_recomputes_exactly(self):
        rng = np.random.default_rng(4)
        for kind in ScoreKind:
            t = random_table(rng, (3, 3, 3), effect_sd=1.2)
            cfg = ScanConfig(score=kind, restarts=5)
            res = subpopulation_scan(t, cfg)
            again = max_over_alpha(res.best, t, kind, cfg.alpha_min, cfg.alpha_max)
            assert again.score == res.score and again.alpha == res.alpha
            assert res.score == max(res.restart_scores)

    def test_never_exceeds_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            t = random_table(rng, (3, 3, 3), effect_sd=1.0)
            res = subpopulation_scan(t, ScanConfig(restarts=5))
            assert res.score <= exhaustive_scan(t).score

    def test_result_round_trip(self):
        t = random_table(np.random.default_rng(6), (2, 3))
        res = subpopulation_scan(t, ScanConfig(restarts=3))
        assert ScanResult.from_dict(res.to_dict()) == res

    def test_near_linear_in_records(self):
        """Cost grows about linearly in the number of treated records at fixed cells."""
        schema = CovariateSchema.from_arities([4, 4, 3])
        grid = full_grid(schema.arities)
        cfg = ScanConfig(restarts=5)

        def run(per_cell):
            rng = np.random.default_rng(per_cell)
            X = np.repeat(grid, per_cell, axis=0)
            w = np.tile(np.r_[np.zeros(per_cell // 2), np.ones(per_cell - per_cell // 2)], len(grid)).astype(bool)
            y = rng.standard_normal(w.size)
            best = np.inf
            for _ in range(3):
                t0 = time.perf_counter()
                subpopulation_scan(CellTable.from_arrays(y, w, X, schema, "upper"), cfg)
                best = min(best, time.perf_counter() - t0)
            return best

        small, large = run(20), run(160)
        # eight times the records; quadratic growth would cost about 64 times
        assert large / small < 16

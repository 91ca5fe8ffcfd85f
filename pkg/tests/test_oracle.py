import numpy as np
import pytest

from hte_scan.data_model import CellTable, CovariateSchema, DataError, Subpopulation
from hte_scan.oracle import exhaustive_mode, exhaustive_scan, n_rectangles
from hte_scan.score import ScoreKind, max_over_alpha

from conftest import random_table, single_mode_table


class TestExhaustiveScan:
    def test_two_by_two_enumerates_nine(self, table1):
        from hte_scan.data_model import build_cell_table

        records, schema = table1
        res = exhaustive_scan(build_cell_table(records, schema, "upper"))
        assert res.n_evaluated == 9 == n_rectangles((2, 2))

    @pytest.mark.parametrize("arities, expected", [((3, 3, 3), 343), ((1,), 1), ((2, 4), 45)])
    def test_count(self, arities, expected):
        assert n_rectangles(arities) == expected

    def test_cap_refused_with_count(self):
        t = random_table(np.random.default_rng(0), (4, 4))
        with pytest.raises(DataError, match="225"):
            exhaustive_scan(t, cap=100)

    def test_single_cell(self):
        schema = CovariateSchema.from_arities([1, 1])
        t = CellTable.from_ranges(schema, [[0, 0]], [[(0.0, 0.02), (0.1, 0.2)]])
        res = exhaustive_scan(t, ScoreKind.NA)
        direct = max_over_alpha(Subpopulation.full(schema), t, ScoreKind.NA, 0.01, 0.5)
        assert res.n_evaluated == 1 and res.score == direct.score and res.alpha == direct.alpha

    def test_best_scores_as_reported(self):
        rng = np.random.default_rng(1)
        for kind in ScoreKind:
            t = random_table(rng, (3, 2, 3), effect_sd=1.5)
            res = exhaustive_scan(t, kind)
            assert max_over_alpha(res.best, t, kind, 0.01, 0.5).score == res.score

    def test_brute_force_agrees(self):
        """Against a plain loop over every rectangle."""
        from itertools import combinations, product

        t = random_table(np.random.default_rng(2), (3, 2), effect_sd=1.5)
        subsets = [
            [frozenset(c) for k in range(1, a + 1) for c in combinations(range(a), k)] for a in t.schema.arities
        ]
        best = max(max_over_alpha(Subpopulation(v), t, ScoreKind.BJ, 0.01, 0.5).score for v in product(*subsets))
        assert exhaustive_scan(t).score == pytest.approx(best, rel=1e-12)


class TestExhaustiveMode:
    def test_example(self):
        t = single_mode_table([8, 1, 5], [10, 10, 10])
        values, sc = exhaustive_mode(0, Subpopulation.full(t.schema), t, ScoreKind.NA, 0.15, 0.25)
        assert values == {0, 2}

    def test_fixed_alpha_example(self):
        from hte_scan.scan import ltss_fixed_alpha

        # mass below 0.2 equals the count of (0, 0.01] ranges
        t = single_mode_table([8, 1, 5], [10, 10, 10])
        values, sc = exhaustive_mode(0, Subpopulation.full(t.schema), t, ScoreKind.NA, 0.2, 0.2 + 1e-12)
        assert values == {0, 2}
        assert sc.score == pytest.approx(12.6563, abs=5e-4)
        assert ltss_fixed_alpha([8, 1, 5], [10, 10, 10], 0.2)[0] == values

    def test_arity_one(self):
        t = single_mode_table([3], [5])
        values, _ = exhaustive_mode(0, Subpopulation.full(t.schema), t)
        assert values == {0}

    def test_null_proportions(self):
        schema = CovariateSchema.from_arities([3])
        t = CellTable.from_ranges(schema, [[0], [1], [2]], [[(0.0, 1.0)]] * 3)
        values, sc = exhaustive_mode(0, Subpopulation.full(schema), t, ScoreKind.NA)
        assert values == {0} and sc.score == 0.0

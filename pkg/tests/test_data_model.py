import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hte_scan.data_model import (
    CellTable,
    CovariateSchema,
    DataError,
    Record,
    Subpopulation,
    build_cell_table,
    subset_counts,
)
from hte_scan.scan import ScanConfig, subpopulation_scan

from conftest import random_table


def one_mode(ranges):
    schema = CovariateSchema.from_arities([len(ranges)])
    return CellTable.from_ranges(schema, [[v] for v in range(len(ranges))], [[r] for r in ranges])


class TestSchema:
    def test_arities(self):
        s = CovariateSchema(("a", "b"), (("x", "y", "z"), ("u",)))
        assert s.d == 2 and s.arities == (3, 1) and s.arity(0) == 3

    @pytest.mark.parametrize(
        "names, values",
        [((), ()), (("a",), ((),)), (("a",), (("x", "x"),)), (("a", "a"), (("x",), ("y",)))],
    )
    def test_invalid(self, names, values):
        with pytest.raises(DataError):
            CovariateSchema(names, values)


class TestBuildCellTable:
    def test_demonstration_dataset(self, table1):
        records, schema = table1
        t = build_cell_table(records, schema, "upper")
        assert t.M == 4
        assert t.n == 1
        assert list(t.counts) == [1, 1, 1, 1]
        for cell in t.cells.values():
            assert cell.n_control == 1 and cell.n_treated == 1
        # every treated outcome exceeds its single control: range (0, 1/2]
        np.testing.assert_allclose(t.lo, 0.0)
        np.testing.assert_allclose(t.hi, 0.5)

    def test_all_control(self, table1):
        records, schema = table1
        recs = [r._replace(treatment=0) for r in records]
        t = build_cell_table(recs, schema)
        assert t.M == 0
        with pytest.raises(DataError, match="no treatment cell"):
            subpopulation_scan(t, ScanConfig())

    def test_orphan_treated_excluded(self, table1):
        records, schema = table1
        recs = [r for r in records if r.profile != (1, 1) or r.treatment == 1]
        t = build_cell_table(recs, schema)
        assert t.M == 3
        assert t.diagnostics.orphan_treated == 1
        t2 = build_cell_table(recs, schema, include_orphans=True)
        assert t2.M == 4 and t2.diagnostics.orphan_treated == 1
        m = t2.cells[(1, 1)]
        assert (m.p_min[0], m.p_max[0]) == (0.0, 1.0)

    def test_empty_rejected(self, table1):
        with pytest.raises(DataError, match="no records"):
            build_cell_table([], table1[1])

    def test_profile_mismatch_names_record(self, table1):
        records, schema = table1
        bad = records[:5] + [Record(1.0, 0, (0, 2))] + records[6:]
        with pytest.raises(DataError, match="record 5"):
            build_cell_table(bad, schema)
        with pytest.raises(DataError, match="record 2"):
            build_cell_table(records[:2] + [Record(1.0, 1, (0,))], schema)

    def test_controls_sorted_and_thin_cells(self):
        rng = np.random.default_rng(0)
        t = random_table(rng, (2, 3))
        for cell in t.cells.values():
            assert np.all(np.diff(cell.reference.outcomes) >= 0)
        assert t.diagnostics.thin_control_cells == int(np.sum((t.n_controls > 0) & (t.n_controls < 5)))

    def test_profiles_lexicographic(self):
        rng = np.random.default_rng(1)
        t = random_table(rng, (3, 2, 2))
        keys = [tuple(p) for p in t.profiles.tolist()]
        assert keys == sorted(keys)

    def test_location_shift_per_profile(self):
        rng = np.random.default_rng(2)
        schema = CovariateSchema.from_arities([3, 2])
        X = rng.integers(0, [3, 2], size=(300, 2))
        w = rng.random(300) < 0.5
        y = rng.normal(size=300)
        base = CellTable.from_arrays(y, w, X, schema)
        shifted = y + np.where((X[:, 0] == 1) & (X[:, 1] == 0), 17.5, 0.0)
        moved = CellTable.from_arrays(shifted, w, X, schema)
        np.testing.assert_array_equal(base.lo, moved.lo)
        np.testing.assert_array_equal(base.hi, moved.hi)


class TestSubsetCounts:
    def test_all_significant(self):
        t = one_mode([(0.0, 0.05)] * 10)
        S = Subpopulation.full(t.schema)
        assert subset_counts(S, t, 0.1) == (10, 10)

    @pytest.mark.parametrize("alpha, expected", [(0.10, (2.0, 3.0)), (0.075, (1.5, 3.0))])
    def test_fractional_mass(self, alpha, expected):
        t = one_mode([(0.0, 0.05), (0.05, 0.10), (0.5, 0.55)])
        got = subset_counts(Subpopulation.full(t.schema), t, alpha)
        assert got == pytest.approx(expected)

    def test_no_matching_cells(self):
        schema = CovariateSchema.from_arities([3])
        t = CellTable.from_ranges(schema, [[0]], [[(0.0, 0.1)]])
        assert subset_counts(Subpopulation((frozenset([2]),)), t, 0.1) == (0, 0)

    def test_additive_over_cells(self):
        rng = np.random.default_rng(3)
        t = random_table(rng, (3, 3))
        S = Subpopulation((frozenset([0, 2]), frozenset([1, 2])))
        total = [0.0, 0.0]
        for prof, cell in t.cells.items():
            if S.contains(prof):
                m = np.clip((0.2 - cell.p_min) / (cell.p_max - cell.p_min), 0, 1)
                total[0] += m.sum()
                total[1] += cell.n_treated
        assert subset_counts(S, t, 0.2) == pytest.approx(tuple(total))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 0.98), st.floats(0.001, 0.5))
    def test_monotone_in_alpha(self, seed, a, gap):
        t = random_table(np.random.default_rng(seed), (2, 2))
        S = Subpopulation.full(t.schema)
        lo = subset_counts(S, t, a)
        hi = subset_counts(S, t, min(a + gap, 0.999))
        assert lo.n_alpha <= hi.n_alpha + 1e-12
        assert subset_counts(S, t, 1.0).n_alpha == pytest.approx(lo.n_total)

    def test_null_expectation(self):
        rng = np.random.default_rng(4)
        schema = CovariateSchema.from_arities([4, 3])
        S = Subpopulation((frozenset([0, 1]), frozenset([0, 2])))
        alpha, tot_a, tot_n = 0.1, 0.0, 0.0
        for _ in range(300):
            X = rng.integers(0, [4, 3], size=(240, 2))
            w = rng.random(240) < 0.5
            t = CellTable.from_arrays(rng.normal(size=240), w, X, schema, "upper")
            c = subset_counts(S, t, alpha)
            tot_a += c.n_alpha
            tot_n += c.n_total
        assert tot_a / tot_n == pytest.approx(alpha, abs=0.01)


class TestSubpopulation:
    def test_empty_mode_rejected(self):
        with pytest.raises(DataError):
            Subpopulation((frozenset([0]), frozenset()))

    def test_membership(self):
        S = Subpopulation((frozenset([0, 2]), frozenset([1])))
        prof = np.array([[0, 1], [1, 1], [2, 1], [2, 0]])
        np.testing.assert_array_equal(S.mask(prof), [True, False, True, False])
        assert S.contains((2, 1)) and not S.contains((1, 1))

    def test_describe_lists_restricted_modes(self, table1):
        _, schema = table1
        S = Subpopulation((frozenset([1]), frozenset([0, 1])))
        assert S.describe(schema) == {"gender": ["Male"]}

    def test_member_matrix_round_trip(self):
        S = Subpopulation((frozenset([0, 2]), frozenset([1])))
        assert Subpopulation.from_member(S.member_matrix((3, 2)), (3, 2)) == S

    def test_validate(self, table1):
        _, schema = table1
        with pytest.raises(DataError):
            Subpopulation((frozenset([0, 2]), frozenset([1]))).validate(schema)

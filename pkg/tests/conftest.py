import numpy as np
import pytest

from hte_scan.data_model import CellTable, CovariateSchema, Record

# Demonstration dataset: two binary covariates, one unit per profile and arm.
TABLE1_ROWS = [
    (2.35, "Female", "Black", 1),
    (2.06, "Female", "White", 1),
    (2.92, "Male", "Black", 1),
    (2.27, "Male", "White", 1),
    (1.73, "Female", "Black", 0),
    (1.84, "Female", "White", 0),
    (1.70, "Male", "Black", 0),
    (1.59, "Male", "White", 0),
]


@pytest.fixture
def table1():
    schema = CovariateSchema(("gender", "race"), (("Female", "Male"), ("Black", "White")))
    g = {"Female": 0, "Male": 1}
    r = {"Black": 0, "White": 1}
    records = [Record(y, w, (g[a], r[b])) for y, a, b, w in TABLE1_ROWS]
    return records, schema


@pytest.fixture
def table1_csv(tmp_path):
    path = tmp_path / "table1.csv"
    lines = ["outcome,gender,race,treatment"] + [f"{y},{a},{b},{w}" for y, a, b, w in TABLE1_ROWS]
    path.write_text("\n".join(lines) + "\n")
    return path


def full_grid(arities):
    return np.array(np.meshgrid(*[np.arange(a) for a in arities], indexing="ij")).reshape(len(arities), -1).T


def random_table(rng, arities, per_arm=(1, 7), effect_sd=1.0, sidedness="upper"):
    """Every profile populated, random per-cell shift of treated outcomes."""
    grid = full_grid(arities)
    nc = rng.integers(per_arm[0], per_arm[1], len(grid))
    nt = rng.integers(per_arm[0], per_arm[1], len(grid))
    shift = rng.normal(0.0, effect_sd, len(grid))
    X = np.repeat(grid, nc + nt, axis=0)
    w = np.concatenate([np.r_[np.zeros(c), np.ones(t)] for c, t in zip(nc, nt)]).astype(bool)
    y = rng.standard_normal(w.size) + np.repeat(shift, nc + nt) * w
    return CellTable.from_arrays(y, w, X, CovariateSchema.from_arities(arities), sidedness)


def single_mode_table(n_alpha, n_total):
    """One-mode table whose value v holds n_total[v] ranges, n_alpha[v] of them (0, 0.01]."""
    schema = CovariateSchema.from_arities([len(n_alpha)])
    ranges = []
    for a, n in zip(n_alpha, n_total):
        ranges.append([(0.0, 0.01)] * a + [(0.9, 1.0)] * (n - a))
    return CellTable.from_ranges(schema, [[v] for v in range(len(n_alpha))], ranges)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if rep.when == "call" and "criterion" in props:
                lines.append((props["criterion"], outcome.upper(), props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for num, outcome, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {num:>2}: {outcome}  {detail}")

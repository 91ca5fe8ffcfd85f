"""Compare the compiled and numpy scan kernels.

Times one per-mode optimization, one full ascent and a complete scan on a
synthetic ten-covariate table, then checks that both backends agree.

Usage::

    python benchmarks/bench_backends.py --restarts 50 --repeat 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hte_scan import kernels
from hte_scan.data_model import CellTable, Subpopulation
from hte_scan.scan import ScanConfig, random_start, subpopulation_scan
from hte_scan.simgen import SimSpec, inject, synthetic_base


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_table(seed):
    spec = SimSpec()
    base = synthetic_base(spec.arities, spec.n_profiles, spec.records_per_profile, np.random.default_rng(seed))
    ds = inject(base, Subpopulation.full(base.schema), 0.0, "mean_shift", np.random.default_rng(seed + 1))
    return CellTable.from_arrays(ds.y, ds.w, ds.X, ds.schema, "two")


def run(backend, table, cfg, member, repeat):
    alphas, mass = table.mass_matrix(cfg.alpha_min, cfg.alpha_max)
    ar = np.asarray(table.schema.arities, dtype=np.int64)
    args = (table.profiles, ar, mass, table.counts, alphas, int(cfg.score), cfg.one_sided)
    t_mode = best_time(lambda: backend.optimize_mode(*args, member, 0), repeat)
    t_ascent = best_time(lambda: backend.ascent(*args, member.copy(), cfg.max_cycles), repeat)
    saved = kernels.ascent
    kernels.ascent = backend.ascent
    try:
        t_scan = best_time(lambda: subpopulation_scan(table, cfg), repeat)
        result = subpopulation_scan(table, cfg)
    finally:
        kernels.ascent = saved
    return t_mode, t_ascent, t_scan, result


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--restarts", type=int, default=50)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    table = build_table(args.seed)
    cfg = ScanConfig(restarts=args.restarts, seed=args.seed)
    member = random_start(table, cfg.inclusion_prob, np.random.default_rng(args.seed))
    print(f"table: M={table.M} cells, {int(table.counts.sum())} treated, d={table.d}")

    backends = [("numpy", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))
    else:
        print("compiled extension not built; timing the numpy backend only")

    rows = {name: run(b, table, cfg, member, args.repeat) for name, b in backends}
    print(f"{'backend':<8} {'optimize_mode':>14} {'ascent':>10} {'scan':>10}")
    for name, (tm, ta, ts, _) in rows.items():
        print(f"{name:<8} {tm * 1e3:>12.3f}ms {ta * 1e3:>8.2f}ms {ts:>9.3f}s")
    if len(rows) == 2:
        (tm0, ta0, ts0, r0), (tm1, ta1, ts1, r1) = rows["numpy"], rows["cython"]
        print(f"speedup  {tm0 / tm1:>13.1f}x {ta0 / ta1:>9.1f}x {ts0 / ts1:>9.1f}x")
        print(f"results identical: {r0 == r1}")


if __name__ == "__main__":
    main()

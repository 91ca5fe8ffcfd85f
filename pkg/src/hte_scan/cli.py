"""Command-line interface.

Machine-readable reports are JSON with sorted keys and no timing fields, so
identical inputs, flags and seeds give byte-identical output. A short
human-readable summary goes to stderr.

Exit status is 0 on success, 2 on invalid input or flags and 1 on any
other failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .data_model import CellTable, CovariateSchema, DataError, Record, Subpopulation, records_to_arrays
from .inference import critical_value, holdout_ate_arrays, permutation_test_arrays, theory_constant
from .oracle import exhaustive_mode, exhaustive_scan
from .scan import ScanConfig, optimize_mode, subpopulation_scan
from .score import ScoreKind
from .simgen import (
    ALTERNATIVES,
    DEFAULT_ARITIES,
    STATISTICS,
    Dataset,
    SimSpec,
    detection_power_experiment,
    draw_affected,
    inject,
    synthetic_base,
)

log = logging.getLogger("hte_scan")

SEED_ENV = "HTE_SCAN_SEED"
THREADS_ENV = "HTE_SCAN_THREADS"


# ---------------------------------------------------------------- input


def load_csv(
    path: str,
    outcome_col: str = "outcome",
    treatment_col: str = "treatment",
    covariate_cols: Optional[Sequence[str]] = None,
) -> Tuple[List[Record], CovariateSchema]:
    """Read records from a CSV file with a header row.

    Value labels of each covariate are indexed in order of first appearance.
    ``covariate_cols`` defaults to every column other than the outcome and
    treatment columns.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        if covariate_cols is None:
            covariate_cols = [h for h in header if h not in (outcome_col, treatment_col)]
        wanted = [outcome_col, treatment_col, *covariate_cols]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"{path}: unknown column(s) {missing}; available columns: {header}")
        if not covariate_cols:
            raise DataError(f"{path}: no covariate columns")
        pos = {h: i for i, h in enumerate(header)}
        labels: List[Dict[str, int]] = [{} for _ in covariate_cols]
        records = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {line}: expected {len(header)} fields, found {len(row)}")
            cells = {c: row[pos[c]].strip() for c in wanted}
            empty = [c for c, v in cells.items() if v == ""]
            if empty:
                raise DataError(f"{path}: line {line}: missing value in column(s) {empty}")
            try:
                y = float(cells[outcome_col])
            except ValueError:
                raise DataError(f"{path}: line {line}: outcome {cells[outcome_col]!r} is not a number") from None
            if not np.isfinite(y):
                raise DataError(f"{path}: line {line}: outcome is not finite")
            t = cells[treatment_col]
            if t not in ("0", "1"):
                raise DataError(f"{path}: line {line}: treatment must be 0 or 1, got {t!r}")
            prof = tuple(labels[j].setdefault(cells[c], len(labels[j])) for j, c in enumerate(covariate_cols))
            records.append(Record(y, int(t), prof))
    if not records:
        raise DataError(f"{path}: no data rows")
    schema = CovariateSchema(tuple(covariate_cols), tuple(tuple(lab) for lab in labels))
    return records, schema


def write_csv(path: str, ds: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["outcome", "treatment", *ds.schema.names])
        for yi, wi, xi in zip(ds.y, ds.w, ds.X):
            wr.writerow([repr(float(yi)), int(wi), *(ds.schema.values[j][v] for j, v in enumerate(xi))])


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- report


@dataclass
class RunReport:
    """Machine-readable record of one CLI run."""

    command: str
    config: dict
    input_digest: Optional[str] = None
    scan: Optional[dict] = None
    permutation: Optional[dict] = None
    holdout: Optional[dict] = None
    diagnostics: Optional[dict] = None
    extra: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "input_digest": self.input_digest,
            "scan": self.scan,
            "permutation": self.permutation,
            "holdout": self.holdout,
            "diagnostics": self.diagnostics,
            "extra": self.extra,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


def emit(report: RunReport, args) -> None:
    text = report.to_json()
    if args.report in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)


def summary(msg: str, args) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


# ---------------------------------------------------------------- arguments


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"environment variable {name} must be an integer, got {raw!r}") from None


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def add_output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--report", default=None, help="write the JSON report here instead of stdout")
    p.add_argument("--quiet", action="store_true", help="suppress the summary on stderr")


def add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--outcome", default="outcome", help="outcome column (default: outcome)")
    p.add_argument("--treatment", default="treatment", help="0/1 treatment column (default: treatment)")
    p.add_argument("--covariates", default=None, help="comma-separated covariate columns (default: all others)")
    p.add_argument("--include-orphan-treated", action="store_true",
                   help="keep treated units whose profile has no controls, with p-value range (0, 1]")


def add_scan_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--score", choices=[k.name.lower() for k in ScoreKind], default="bj", help="scan statistic (default: bj)")
    p.add_argument("--sided", choices=["upper", "lower", "two"], default="two", help="p-value tail (default: two)")
    p.add_argument("--alpha-min", type=float, default=0.01, help="smallest threshold searched (default: 0.01)")
    p.add_argument("--alpha-max", type=float, default=0.5, help="largest threshold searched (default: 0.5)")
    p.add_argument("--restarts", type=int, default=50, help="random restarts (default: 50)")
    p.add_argument("--max-cycles", type=int, default=100, help="cap on ascent cycles per restart (default: 100)")
    p.add_argument("--inclusion-prob", type=float, default=0.5, help="value inclusion probability of random starts (default: 0.5)")
    p.add_argument("--symmetric", action="store_true", help="also score deficits of significant p-values")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (default: ${THREADS_ENV} or 1)")


def scan_config(args) -> ScanConfig:
    seed = args.seed if args.seed is not None else _env_int(SEED_ENV, 0)
    threads = args.threads if args.threads is not None else _env_int(THREADS_ENV, 1)
    return ScanConfig(
        score=args.score,
        alpha_min=args.alpha_min,
        alpha_max=args.alpha_max,
        restarts=args.restarts,
        max_cycles=args.max_cycles,
        seed=seed,
        inclusion_prob=args.inclusion_prob,
        one_sided=not args.symmetric,
        threads=threads,
    )


def _load(args):
    covs = None if args.covariates is None else [c.strip() for c in args.covariates.split(",") if c.strip()]
    records, schema = load_csv(args.data, args.outcome, args.treatment, covs)
    y, w, X = records_to_arrays(records, schema)
    return y, w, X, schema


def _config_echo(args, cfg: ScanConfig) -> dict:
    out = cfg.to_dict()
    out["sided"] = args.sided
    for key in ("include_orphan_treated", "outcome", "treatment", "covariates", "permutations", "gamma", "folds"):
        if hasattr(args, key):
            out[key] = getattr(args, key)
    return out


# ---------------------------------------------------------------- commands


def cmd_scan(args) -> int:
    cfg = scan_config(args)
    y, w, X, schema = _load(args)
    table = CellTable.from_arrays(y, w, X, schema, args.sided, args.include_orphan_treated)
    res = subpopulation_scan(table, cfg)
    report = RunReport(
        "scan", _config_echo(args, cfg), file_digest(args.data),
        scan=res.to_dict(schema), diagnostics=table.diagnostics.to_dict(),
    )
    emit(report, args)
    summary(f"score={res.score:.4f} alpha={res.alpha:.4g} treated={res.n_treated} subpopulation={res.best.describe(schema)}", args)
    return 0


def cmd_permtest(args) -> int:
    cfg = scan_config(args)
    y, w, X, schema = _load(args)
    rep = permutation_test_arrays(y, w, X, schema, cfg, args.permutations, args.gamma, cfg.seed, args.sided,
                                  args.include_orphan_treated)
    table = CellTable.from_arrays(y, w, X, schema, args.sided, args.include_orphan_treated)
    report = RunReport(
        "permtest", _config_echo(args, cfg), file_digest(args.data),
        scan=rep.scan.to_dict(schema), permutation=rep.to_dict(), diagnostics=table.diagnostics.to_dict(),
    )
    emit(report, args)
    summary(f"score={rep.observed:.4f} p={rep.p_value:.4g} reject={rep.reject}", args)
    return 0


def cmd_holdout(args) -> int:
    cfg = scan_config(args)
    y, w, X, schema = _load(args)
    rep = holdout_ate_arrays(y, w, X, schema, cfg, args.folds, cfg.seed, args.sided, args.include_orphan_treated)
    report = RunReport("holdout", _config_echo(args, cfg), file_digest(args.data), holdout=rep.to_dict())
    emit(report, args)
    est = rep.mean_estimate
    summary(f"folds={args.folds} mean holdout effect={'n/a' if est is None else f'{est:.4f}'}", args)
    return 0


def _spec(args, **over) -> SimSpec:
    kw = dict(
        effect_magnitude=args.effect,
        num_covs=args.num_covs,
        value_prob=args.value_prob,
        alternative=args.alternative,
        arities=_ints(args.arities),
        n_profiles=args.n_profiles,
        records_per_profile=args.records_per_profile,
    )
    kw.update(over)
    return SimSpec(**kw)


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else _env_int(SEED_ENV, 0)
    spec = _spec(args, seed=seed)
    base = synthetic_base(spec.arities, spec.n_profiles, spec.records_per_profile, np.random.default_rng([seed, 0]))
    rng = np.random.default_rng([seed, 2, 0])
    truth = draw_affected(base, spec, rng)
    ds = inject(base, truth, spec.effect_magnitude, spec.alternative, rng)
    write_csv(args.output, ds)
    affected = truth.mask(ds.X) & ds.w
    report = RunReport(
        "simulate",
        {"effect": spec.effect_magnitude, "num_covs": spec.num_covs, "value_prob": spec.value_prob,
         "alternative": spec.alternative, "arities": list(spec.arities), "n_profiles": spec.n_profiles,
         "records_per_profile": spec.records_per_profile, "seed": seed},
        file_digest(args.output),
        extra={"affected": truth.to_lists(), "affected_treated": int(affected.sum()), "n_records": int(ds.y.size)},
    )
    emit(report, args)
    summary(f"wrote {ds.y.size} records to {args.output}; {int(affected.sum())} affected treated", args)
    return 0


def cmd_power(args) -> int:
    cfg = scan_config(args)
    spec = _spec(args, replicates=args.replicates, null_copies=args.null_copies, gamma=args.gamma,
                 sidedness=args.sided, statistic=args.statistic, seed=cfg.seed)
    base = None
    digest = None
    if args.data:
        y, w, X, schema = _load(args)
        base = Dataset(y, w, X, schema)
        digest = file_digest(args.data)
    rep = detection_power_experiment(spec, cfg, base=base)
    if args.jsonl:
        with open(args.jsonl, "w", encoding="utf-8") as fh:
            rep.write_jsonl(fh)
    echo = _config_echo(args, cfg)
    echo.update({"effect": spec.effect_magnitude, "num_covs": spec.num_covs, "value_prob": spec.value_prob,
                 "alternative": spec.alternative, "replicates": spec.replicates, "null_copies": spec.null_copies,
                 "statistic": spec.statistic, "arities": list(spec.arities), "n_profiles": spec.n_profiles,
                 "records_per_profile": spec.records_per_profile})
    report = RunReport("power", echo, digest, extra=rep.to_dict())
    emit(report, args)
    summary(f"power={rep.power:.3f} CI=({rep.ci[0]:.3f}, {rep.ci[1]:.3f})", args)
    return 0


def random_instance(arities: Sequence[int], rng: np.random.Generator, max_per_arm: int = 6) -> CellTable:
    """Small fully populated table with random per-cell effects, upper-tail ranges."""
    grid = np.array(np.meshgrid(*[np.arange(a) for a in arities], indexing="ij")).reshape(len(arities), -1).T
    nc = rng.integers(1, max_per_arm + 1, len(grid))
    nt = rng.integers(1, max_per_arm + 1, len(grid))
    shift = rng.normal(0.0, 1.0, len(grid))
    X = np.repeat(grid, nc + nt, axis=0)
    w = np.concatenate([np.r_[np.zeros(c), np.ones(t)] for c, t in zip(nc, nt)]).astype(bool)
    y = rng.standard_normal(w.size) + np.repeat(shift, nt + nc) * w
    return CellTable.from_arrays(y, w, X, CovariateSchema.from_arities(arities), "upper")


def cmd_oracle_check(args) -> int:
    cfg = scan_config(args)
    arities = (args.arity,) * args.modes
    rng = np.random.default_rng([cfg.seed, 3])
    mode_agree = scan_agree = exceeded = 0
    for i in range(args.instances):
        table = random_instance(arities, rng)
        rest = Subpopulation(tuple(
            frozenset(np.flatnonzero(rng.random(a) < 0.7).tolist() or [int(rng.integers(a))]) for a in arities
        ))
        j = int(rng.integers(args.modes))
        _, a = optimize_mode(j, rest, table, cfg)
        _, b = exhaustive_mode(j, rest, table, cfg.score, cfg.alpha_min, cfg.alpha_max, cfg.one_sided)
        mode_agree += a.score == b.score
        s = subpopulation_scan(table, ScanConfig(**{**cfg.__dict__, "seed": cfg.seed + i, "threads": 1})).score
        o = exhaustive_scan(table, cfg.score, cfg.alpha_min, cfg.alpha_max, cfg.one_sided).score
        scan_agree += s == o
        exceeded += s > o
    n = args.instances
    report = RunReport(
        "oracle-check", {**cfg.to_dict(), "modes": args.modes, "arity": args.arity, "instances": n}, None,
        extra={"mode_agreement": mode_agree / n, "scan_agreement": scan_agree / n, "scan_exceeds_oracle": exceeded},
    )
    emit(report, args)
    summary(f"mode-optimization agreement {100 * mode_agree / n:.0f}%; scan matches oracle {100 * scan_agree / n:.0f}%", args)
    return 0


def cmd_theory(args) -> int:
    tc = theory_constant()
    extra = {"C": tc.C, "argmax_Z": tc.argmax_Z}
    if args.M is not None:
        extra["critical_value"] = critical_value(args.M, args.epsilon)
    report = RunReport("theory", {"M": args.M, "epsilon": args.epsilon}, None, extra=extra)
    emit(report, args)
    msg = f"C = {tc.C:.6f} at Z = {tc.argmax_Z:.4f}"
    if args.M is not None:
        msg += f"; h({args.M}, {args.epsilon}) = {extra['critical_value']:.4f}"
    summary(msg, args)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hte-scan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="find the most anomalous subpopulation")
    add_data_args(p), add_scan_args(p), add_output_args(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("permtest", help="scan plus within-profile permutation test")
    add_data_args(p), add_scan_args(p), add_output_args(p)
    p.add_argument("--permutations", type=int, default=199, help="null replicates (default: 199)")
    p.add_argument("--gamma", type=float, default=0.05, help="test level (default: 0.05)")
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("holdout", help="cross-validated effect of the detected subpopulation")
    add_data_args(p), add_scan_args(p), add_output_args(p)
    p.add_argument("--folds", type=int, default=10, help="number of folds (default: 10)")
    p.set_defaults(func=cmd_holdout)

    def add_sim_args(p):
        p.add_argument("--effect", type=float, default=1.5, help="effect magnitude (default: 1.5)")
        p.add_argument("--num-covs", type=int, default=5, help="restricted covariates (default: 5)")
        p.add_argument("--value-prob", type=float, default=0.5, help="value keep probability (default: 0.5)")
        p.add_argument("--alternative", choices=ALTERNATIVES, default="mean_shift", help="alternative family")
        p.add_argument("--arities", default=",".join(map(str, DEFAULT_ARITIES)), help="synthetic covariate arities")
        p.add_argument("--n-profiles", type=int, default=150, help="distinct synthetic profiles (default: 150)")
        p.add_argument("--records-per-profile", type=int, default=40, help="records per profile (default: 40)")

    p = sub.add_parser("simulate", help="write one synthetic dataset with a planted effect")
    add_sim_args(p), add_output_args(p)
    p.add_argument("--output", required=True, help="CSV file to write")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default: ${SEED_ENV} or 0)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", help="detection power experiment")
    add_sim_args(p), add_scan_args(p), add_output_args(p)
    p.add_argument("--data", default=None, help="optional CSV whose profiles and treatment form the base")
    p.add_argument("--outcome", default="outcome")
    p.add_argument("--treatment", default="treatment")
    p.add_argument("--covariates", default=None)
    p.add_argument("--replicates", type=int, default=50, help="replicates (default: 50)")
    p.add_argument("--null-copies", type=int, default=200, help="null datasets (default: 200)")
    p.add_argument("--gamma", type=float, default=0.05, help="test level (default: 0.05)")
    p.add_argument("--statistic", choices=STATISTICS, default="scan", help="test statistic (default: scan)")
    p.add_argument("--jsonl", default=None, help="write per-replicate records here")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("oracle-check", help="compare the scan with brute force on random tables")
    add_scan_args(p), add_output_args(p)
    p.add_argument("--modes", type=int, default=3)
    p.add_argument("--arity", type=int, default=3)
    p.add_argument("--instances", type=int, default=100)
    p.set_defaults(func=cmd_oracle_check, restarts=20)

    p = sub.add_parser("theory", help="asymptotic null constant and critical value")
    add_output_args(p)
    p.add_argument("--M", type=int, default=None, help="number of cells for the critical value")
    p.add_argument("--epsilon", type=float, default=1.0, help="margin of the critical value (default: 1.0)")
    p.set_defaults(func=cmd_theory)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Subcommands: ``test``, ``sequential``, ``simulate``, ``tune``, ``predict``,
``scenarios``, ``generate`` and ``schema``. Every run prints a fixed-width table on
stdout; ``--out`` also writes the full report as JSON.

Exit codes
----------
0  success
1  unexpected internal error
2  usage error (bad flags or option values)
3  input file could not be parsed
4  model fit failed (singular design, separation, degenerate mixture)
5  numerical failure (non-finite scores, density underflow)
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import __version__
from .errors import (
    DegenerateLikelihoodError,
    EmTestError,
    InvalidInputError,
    NumericalError,
)
from .glm import Family
from .io import ColumnSpec, CsvParseError, parse_names, read_csv_dataset, write_csv_dataset
from .predict import predict_cv
from .schema import SCHEMAS
from .procedure import DEFAULT_LEVELS, TestConfig, run_test, sequential_test, tune_c
from .simgen import ScenarioSpec, generate_scenario, get_scenario, list_builtin_scenarios, monte_carlo_rejection, with_n
from ._rng import derive_rng

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_FIT = 4
EXIT_NUMERICAL = 5

# penalty constants chosen by the tuning protocol, per order under test
DEFAULT_C = {
    "normal": {1: 3.0, 2: 0.8, 3: 2.0},
    "logit": {1: 1.8, 2: 1.0, 3: 2.0},
}
# "a..b" in --c-grid selects these values inside [a, b]
STANDARD_C_GRID = (0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0, 3.0, 8.0, 12.0)
TIMING_KEYS = ("wall_time",)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument types


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _level(text):
    v = _positive_float(text)
    if v >= 1:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {text}")
    return v


def _float_list(text):
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return tuple(vals)


def parse_c(text):
    """``3`` for one constant or ``1:3,2:0.8`` for a per-order schedule."""
    if ":" not in text:
        return _positive_float(text)
    out = {}
    for part in text.split(","):
        try:
            k, v = part.split(":")
            out[int(k)] = _positive_float(v)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad C schedule entry {part!r}; use m0:C pairs") from None
    return out


def parse_c_grid(text):
    """Comma-separated values, or ``a..b`` for the standard grid points in ``[a, b]``."""
    if ".." in text:
        lo, hi = (float(s) for s in text.split(".."))
        vals = tuple(c for c in STANDARD_C_GRID if lo - 1e-12 <= c <= hi + 1e-12)
        if not vals:
            raise argparse.ArgumentTypeError(f"no standard grid values inside {text}")
        return vals
    vals = _float_list(text)
    if any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("C values must be positive")
    return vals


# ---------------------------------------------------------------------------
# parser


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--input", required=True, help="CSV file with a header row")
    g.add_argument("--response", required=True, help="response column")
    g.add_argument("--x", required=True, help="comma-separated subgroup-effect columns")
    g.add_argument("--z", default="", help="comma-separated common-effect columns")
    g.add_argument("--family", choices=("normal", "logit"), default="normal")
    g.add_argument("--sigma", type=_positive_float, default=1.0, help="known normal standard deviation")


def _add_test_args(p):
    g = p.add_argument_group("EM test")
    g.add_argument("--K", type=_positive_int, default=3, help="EM iterations")
    g.add_argument("--C", type=parse_c, default=None,
                   help="penalty constant, or m0:C schedule (default: the tuned values per family)")
    g.add_argument("--beta-grid", type=_float_list, default=(0.1, 0.3, 0.5))
    g.add_argument("--lambda", dest="lam", type=float, default=0.0, help="coefficient-difference penalty")
    g.add_argument("--mc-draws", type=_positive_int, default=10000, help="chi-bar Monte Carlo draws")
    g.add_argument("--restarts", type=_positive_int, default=20, help="null-fit EM restarts")
    g.add_argument("--inner-restarts", type=_positive_int, default=4, help="starts per beta grid point")


def _add_run_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1, help="worker processes for replicates")
    p.add_argument("--out", default=None, help="write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subgroup-emtest",
        description="EM test for the number of latent subgroups in mixtures of GLMs.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test H0: m = m0 on a CSV dataset")
    _add_data_args(p)
    p.add_argument("--m0", type=_positive_int, default=1)
    p.add_argument("--level", type=_level, default=0.05)
    _add_test_args(p)
    _add_run_args(p)

    p = sub.add_parser("sequential", help="select the number of subgroups by sequential testing")
    _add_data_args(p)
    p.add_argument("--level", type=_level, default=0.05)
    p.add_argument("--m-max", type=_positive_int, default=5)
    _add_test_args(p)
    _add_run_args(p)

    p = sub.add_parser("simulate", help="Monte Carlo rejection rates for a scenario")
    p.add_argument("scenario", nargs="?", help="registered scenario id")
    p.add_argument("--spec-file", help="JSON scenario specification instead of a registered id")
    p.add_argument("--n", type=_positive_int, default=None)
    p.add_argument("--reps", type=_positive_int, default=1000)
    p.add_argument("--m0", type=_positive_int, default=None, help="order under test (default from the scenario)")
    p.add_argument("--levels", type=_float_list, default=DEFAULT_LEVELS)
    _add_test_args(p)
    _add_run_args(p)

    p = sub.add_parser("tune", help="choose C by null rejection rates")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--spec-file")
    p.add_argument("--c-grid", type=parse_c_grid, default=STANDARD_C_GRID,
                   help="comma-separated values or a..b (standard grid points in range)")
    p.add_argument("--n", type=_positive_int, default=None)
    p.add_argument("--reps", type=_positive_int, default=1000)
    p.add_argument("--m0", type=_positive_int, default=None)
    p.add_argument("--levels", type=_float_list, default=DEFAULT_LEVELS)
    _add_test_args(p)
    _add_run_args(p)

    p = sub.add_parser("predict", help="cross-validated subgroup prediction for a binary response")
    _add_data_args(p)
    p.set_defaults(family="logit")
    p.add_argument("--m", type=_positive_int, required=True, help="number of subgroups")
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--restarts", type=_positive_int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("scenarios", help="list the registered scenarios")
    p.add_argument("--json", action="store_true", help="print the full specifications as JSON")

    p = sub.add_parser("schema", help="print the JSON Schema of a report")
    p.add_argument("name", choices=sorted(SCHEMAS))

    p = sub.add_parser("generate", help="write one simulated dataset to CSV")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--spec-file")
    p.add_argument("--n", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _family(args) -> Family:
    return Family.logit() if args.family == "logit" else Family.normal(args.sigma)


def _load(args):
    columns = ColumnSpec(args.response, parse_names(args.x), parse_names(args.z))
    return read_csv_dataset(args.input, columns, _family(args)), columns


def _config(args, family_kind: str) -> TestConfig:
    C = args.C if args.C is not None else DEFAULT_C[family_kind]
    return TestConfig(
        K=args.K, C=C, beta_grid=tuple(args.beta_grid), lam=args.lam,
        inner_restarts=args.inner_restarts, restarts=args.restarts,
        mc_draws=args.mc_draws, seed=args.seed,
    )


def _scenario(args) -> ScenarioSpec:
    if args.spec_file and args.scenario:
        raise UsageError("give either a scenario id or --spec-file, not both")
    if args.spec_file:
        try:
            with open(args.spec_file, encoding="utf-8") as fh:
                spec = ScenarioSpec.from_json(fh.read())
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CsvParseError(f"cannot read scenario file {args.spec_file}: {exc}") from exc
    elif args.scenario:
        spec = get_scenario(args.scenario)
    else:
        raise UsageError("a scenario id or --spec-file is required; valid ids: "
                         + ", ".join(sorted(list_builtin_scenarios())))
    return with_n(spec, args.n) if args.n else spec


def strip_timing(obj):
    """Drop timing fields so reports of identical runs compare equal."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def _emit(args, text: str, payload: dict, out=None):
    out = out or sys.stdout
    print(text, file=out)
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _test_text(report, n, family, level) -> str:
    lines = [
        f"EM test of H0: m = {report.m0} against m = {2 * report.m0}"
        f"   (n = {n}, family = {family}, C = {report.config['C_used']:g})",
        f"{'iteration':>10}{'statistic':>12}{'p-value':>10}",
    ]
    for k, (t, pv) in enumerate(zip(report.statistics_by_iteration, report.pvalues_by_iteration), start=1):
        lines.append(f"{k:>10}{t:12.4f}{pv:10.4f}")
    lines.append("chi-bar weights: " + " ".join(f"{a:.4f}" for a in report.weights.a)
                 + f"  (N = {report.weights.mc_draws})")
    verdict = "rejected" if report.pvalue <= level else "not rejected"
    lines.append(f"decision at level {level:g}: {verdict}")
    return "\n".join(lines)


def _sequential_text(result, n, family) -> str:
    lines = [f"sequential selection (n = {n}, family = {family}, level = {result.level:g})",
             f"{'test':>12}{'statistic':>12}{'p-value':>10}"]
    for r in result.reports:
        lines.append(f"{'m0 = ' + str(r.m0):>12}{r.statistic:12.4f}{r.pvalue:10.4f}")
    lines.append(f"selected number of subgroups: {result.selected_m}")
    if result.capped:
        lines.append("note: reached --m-max without a non-rejection")
    if result.halted:
        lines.append(f"note: halted ({result.halted})")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# commands


def cmd_test(args) -> int:
    data, columns = _load(args)
    config = _config(args, args.family)
    report = run_test(data, args.m0, config)
    payload = {"command": "test", "input": args.input, "columns": columns.to_dict(),
               "family": data.family.to_dict(), "n": data.n, "level": args.level, "report": report.to_dict()}
    _emit(args, _test_text(report, data.n, args.family, args.level), payload)
    return EXIT_OK


def cmd_sequential(args) -> int:
    data, columns = _load(args)
    config = _config(args, args.family)
    result = sequential_test(data, args.level, args.m_max, config)
    payload = {"command": "sequential", "input": args.input, "columns": columns.to_dict(),
               "family": data.family.to_dict(), "n": data.n, "result": result.to_dict()}
    _emit(args, _sequential_text(result, data.n, args.family), payload)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _scenario(args)
    config = _config(args, spec.family.kind)
    table = monte_carlo_rejection(spec, args.m0, config, args.reps, args.levels, threads=args.threads)
    payload = {"command": "simulate", "scenario": spec.to_dict(), "config": config.to_dict(), "table": table.to_dict()}
    _emit(args, table.to_text(), payload)
    return EXIT_OK


def cmd_tune(args) -> int:
    spec = _scenario(args)
    config = _config(args, spec.family.kind)
    result = tune_c(spec, args.c_grid, args.levels, args.reps, None, config, args.m0, args.threads)
    payload = {"command": "tune", "scenario": spec.to_dict(), "config": config.to_dict(), "result": result.to_dict()}
    _emit(args, result.to_text(), payload)
    return EXIT_OK


def cmd_predict(args) -> int:
    if args.family != "logit":
        raise UsageError("predict needs a binary response; use --family logit")
    data, columns = _load(args)
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    report = predict_cv(data, args.m, args.folds, args.seed, args.restarts, names=columns.names)
    payload = {"command": "predict", "input": args.input, "n": data.n, "report": report.to_dict()}
    _emit(args, report.to_text(), payload)
    return EXIT_OK


def cmd_scenarios(args) -> int:
    reg = list_builtin_scenarios()
    if args.json:
        print(json.dumps({k: v.to_dict() for k, v in sorted(reg.items())}, indent=2, sort_keys=True))
        return EXIT_OK
    width = max(len(k) for k in reg)
    for k in sorted(reg):
        s = reg[k]
        print(f"{k:<{width}}  {s.family.kind:<6}  m0={s.m0_under_test}  n={s.n:<5}  {s.provenance}")
    return EXIT_OK


def cmd_generate(args) -> int:
    spec = _scenario(args)
    data = generate_scenario(spec, derive_rng(args.seed, 0, 0))
    cols = write_csv_dataset(data, args.out)
    print(f"wrote {data.n} rows of {spec.id} to {args.out} (response {cols.response}; "
          f"x: {','.join(cols.x)}; z: {','.join(cols.z) or '-'})")
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(SCHEMAS[args.name], indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "test": cmd_test,
    "sequential": cmd_sequential,
    "simulate": cmd_simulate,
    "tune": cmd_tune,
    "predict": cmd_predict,
    "scenarios": cmd_scenarios,
    "generate": cmd_generate,
    "schema": cmd_schema,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CsvParseError):
        return EXIT_PARSE
    if isinstance(exc, (UsageError, InvalidInputError)):
        return EXIT_USAGE
    if isinstance(exc, (NumericalError, DegenerateLikelihoodError)):
        return EXIT_NUMERICAL
    if isinstance(exc, EmTestError):
        return EXIT_FIT
    return EXIT_INTERNAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (EmTestError, UsageError) as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()

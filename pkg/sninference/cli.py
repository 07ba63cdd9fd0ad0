"""
Command-line front end.

Parses a subcommand, runs the corresponding library call and returns an
AnalysisReport. ``main`` serializes the report as JSON on standard output
(or to ``--output``) and maps library errors to exit codes.
"""

import argparse
import contextlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from sninference import __version__
from sninference.bootstrap import BLOCK, KINDS, MultiplierScheme, bootstrap_distribution
from sninference.changepoint import cp_statistic
from sninference.config import load_config
from sninference.core import Functional, replication_rng
from sninference.errors import ConfigurationError, DomainError, SnInferenceError, UsageError
from sninference.fixedb import calibrated_pvalue, fixedb_pvalue
from sninference.ingest import read_csv_input
from sninference.limits import (
    CP_LIMIT,
    FIXEDB_LIMIT,
    FUNCTIONAL_IDS,
    GENERALIZED_SN_LIMIT,
    SN_LIMIT,
    TableSpec,
    build_table,
    measure_param,
    simulate_limit,
)
from sninference.report import AnalysisReport
from sninference.selfnorm import (
    RECURSIVE,
    clipped_sn_statistic,
    generalized_sn_statistic,
    measure_from_spec,
    sn_confidence_interval,
    sn_pvalue,
    sn_statistic,
)
from sninference.seqproc import counterexample_demo, prop1_identity_check
from sninference.simulate import iid_normal
from sninference.tables import find_table, load_table, save_table, table_path

logger = logging.getLogger(__name__)

SUMMARY_LEVELS = (0.9, 0.95, 0.99)
DEFAULT_DEMO_SIZES = (16, 256, 4096, 65536)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _Timer:
    """Collects wall-clock seconds per phase."""

    def __init__(self):
        self.phases = {}

    @contextlib.contextmanager
    def phase(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - start


def parse_vector(text):
    """Reads a comma-separated vector such as ``0`` or ``0.5,1``."""
    try:
        values = [float(part) for part in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse vector {text!r}; use comma-separated numbers") from exc
    return np.array(values)


def _level_key(level):
    return f"{level:g}"


# Parser construction


def _common_options():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="master seed (default from the configuration)")
    common.add_argument("--verbose", action="store_true", help="log at DEBUG level on stderr")
    common.add_argument("--timings", action="store_true", help="include per-phase timings in the report")
    common.add_argument("--output", help="write the report here instead of stdout")
    return common


def _data_options(parser, theta0=True):
    parser.add_argument("--input", required=True, help="CSV file, one observation per line")
    parser.add_argument("--functional", default="mean", help="mean, quantile:TAU, acf:H or a +-joined composite")
    if theta0:
        parser.add_argument("--theta0", type=parse_vector, required=True, help="hypothesized value, comma-separated")


def build_parser():
    """Builds the argument parser with one subparser per command."""
    common = _common_options()
    parser = _Parser(prog="sn_cli.py", description="Self-normalized inference for time series")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sn_test = commands.add_parser("sn-test", parents=[common], help="SN test of H0: theta = theta0")
    _data_options(sn_test)
    sn_test.add_argument("--table", help="critical-value table file")

    sn_ci = commands.add_parser("sn-ci", parents=[common], help="SN confidence interval for a scalar functional")
    _data_options(sn_ci, theta0=False)
    sn_ci.add_argument("--level", type=float, default=0.95, help="confidence level")
    sn_ci.add_argument("--table", help="critical-value table file")

    gsn_test = commands.add_parser("gsn-test", parents=[common], help="generalized SN test over a measure H")
    _data_options(gsn_test)
    gsn_test.add_argument("--H", dest="H", default=RECURSIVE, help="recursive, grid:K or an atom file s,t,w")
    gsn_test.add_argument("--gamma", type=float, help="clip atoms with t - s <= n^-gamma")
    gsn_test.add_argument("--table", help="critical-value table file")

    cp_test = commands.add_parser("cp-test", parents=[common], help="SN change-point test")
    _data_options(cp_test, theta0=False)
    cp_test.add_argument("--gamma", type=float, help="restrict the scan to k/n in [n^-gamma, 1 - n^-gamma]")
    cp_test.add_argument("--table", help="critical-value table file")

    fixedb = commands.add_parser("fixedb-pvalue", parents=[common], help="fixed-b subsampling p-value")
    _data_options(fixedb)
    fixedb.add_argument("--b", type=float, required=True, help="subsample fraction in (0, 1)")
    fixedb.add_argument("--table", help="critical-value table file of the fixed-b limit")
    fixedb.add_argument("--sigma-half", type=parse_vector, help="Sigma^{1/2} row by row, for the stored table when p > 1")

    boot = commands.add_parser("bootstrap", parents=[common], help="multiplier bootstrap of a statistic")
    _data_options(boot, theta0=False)
    boot.add_argument("--kind", choices=KINDS, default="sn", help="statistic to bootstrap")
    boot.add_argument("--theta0", type=parse_vector, help="hypothesized value (sn and fixedb)")
    boot.add_argument("--b", type=float, help="subsample fraction (fixedb)")
    boot.add_argument("--multipliers", default="gaussian", help="gaussian, rademacher or block:L")
    boot.add_argument("--reps", type=int, help="number of bootstrap replicates B")

    for name, text in (("simulate-limits", "simulate a limit functional"), ("build-table", "build a critical-value table")):
        limit = commands.add_parser(name, parents=[common], help=text)
        limit.add_argument("--kind", choices=FUNCTIONAL_IDS, required=True, help="limit functional")
        limit.add_argument("--p", type=int, default=1, help="parameter dimension")
        limit.add_argument("--b", type=float, help="subsample fraction (fixedb_limit)")
        limit.add_argument("--H", dest="H", help="measure (generalized_sn_limit)")
        limit.add_argument("--sigma-half", type=parse_vector, help="Sigma^{1/2} row by row (fixedb_limit with p > 1)")
        limit.add_argument("--reps", type=int, help="Monte Carlo replications")
        limit.add_argument("--grid", type=int, help="Brownian grid size m")
        if name == "simulate-limits":
            limit.add_argument("--level", type=float, action="append", help="quantile level to report (repeatable)")
        else:
            limit.add_argument("--table", help="destination file (default: the table directory)")

    demo = commands.add_parser("demo-counterexample", parents=[common], help="divergence of the unclipped median process")
    demo.add_argument("--n", type=int, nargs="+", default=list(DEFAULT_DEMO_SIZES), help="sample sizes")
    demo.add_argument("--gamma", type=float, help="clipping exponent for the clipped column")

    identity = commands.add_parser("check-identity", parents=[common], help="check the block-mean representation")
    identity.add_argument("--input", help="CSV file (default: a simulated N(0, 1) sample)")
    identity.add_argument("--n", type=int, default=100, help="simulated sample size without --input")
    identity.add_argument("--theta0", type=parse_vector, help="centre x (default 0)")
    identity.add_argument("--tolerance", type=float, default=1e-12, help="largest relative violation")
    return parser


# Shared steps


def _sigma_half(values, p):
    if values.size != p * p:
        raise ConfigurationError(f"--sigma-half needs {p * p} entries ({p} x {p}, row by row), got {values.size}")
    return values.reshape(p, p)


def _limit_params(args):
    params = {}
    if args.b is not None:
        params["b"] = args.b
    if args.H is not None:
        params["H"] = args.H
    if args.sigma_half is not None:
        params["sigma_half"] = _sigma_half(args.sigma_half, args.p)
    return params


def _table_provenance(table, path):
    return {
        "table": table.name,
        "path": str(path),
        "reps": table.reps,
        "grid": table.grid,
        "seed": table.seed,
        "discarded": table.discarded,
        "version": table.version,
    }


def _resolve_table(args, config, functional_id, p, params=None):
    """Loads ``--table`` (checked for compatibility) or the stored table."""
    if args.table:
        table = load_table(args.table)
        table.check_compatible(functional_id, p, params)
        return table, _table_provenance(table, args.table)
    spec = TableSpec.create(functional_id, p, params)
    table = find_table(config.table_dir, spec)
    return table, _table_provenance(table, table_path(config.table_dir, spec))


class _Command:
    """State shared by the command handlers."""

    def __init__(self, args):
        self.args = args
        self.config = load_config(args.config, rng_seed=args.seed)
        self.timer = _Timer()
        echoed = {key: value for key, value in vars(args).items() if key not in ("command", "verbose", "output")}
        echoed["seed"] = self.config.rng_seed
        self.report = AnalysisReport(args.command, arguments=echoed)

    def load(self):
        with self.timer.phase("ingest"):
            data = read_csv_input(self.args.input)
        self.report.input = {
            "path": data.path,
            "sha256": data.digest,
            "n": data.n,
            "d": data.d,
            "header": list(data.header) if data.header else None,
        }
        functional = Functional.parse(getattr(self.args, "functional", "mean"))
        return data.series, functional

    def table(self, functional_id, p, params=None):
        with self.timer.phase("table"):
            table, provenance = _resolve_table(self.args, self.config, functional_id, p, params)
        self.report.provenance.update(provenance)
        return table

    def finish(self):
        if self.args.timings:
            self.report.timings = dict(self.timer.phases)
        return self.report


def _sn_results(result, functional):
    return {
        "functional": functional.describe(),
        "statistic": result.statistic,
        "theta_hat": result.theta_hat,
        "theta0": result.theta0,
        "normalizer": result.normalizer,
        "condition_number": result.condition_number,
        "n": result.n,
        "measure": result.measure,
        "clipped": result.clipped,
        "gamma": result.gamma,
    }


# Command handlers


def _sn_test(command):
    ts, f = command.load()
    with command.timer.phase("compute"):
        result = sn_statistic(ts, f, command.args.theta0, command.config)
    table = command.table(SN_LIMIT, result.theta_hat.size)
    command.report.results = _sn_results(result, f)
    command.report.add_pvalue("sn", sn_pvalue(result, table))
    command.report.warn(*result.warnings)


def _sn_ci(command):
    ts, f = command.load()
    table = command.table(SN_LIMIT, 1)
    with command.timer.phase("compute"):
        interval = sn_confidence_interval(ts, f, command.args.level, table)
    command.report.results = {
        "functional": f.describe(),
        "lower": interval.lower,
        "upper": interval.upper,
        "level": interval.level,
        "critical_value": interval.critical_value,
        "theta_hat": interval.theta_hat,
        "normalizer": interval.normalizer,
    }


def _gsn_test(command):
    args = command.args
    ts, f = command.load()
    with command.timer.phase("compute"):
        H = measure_from_spec(args.H, ts.n)
        if args.gamma is None:
            result = generalized_sn_statistic(ts, f, args.theta0, H, command.config)
        else:
            result = clipped_sn_statistic(ts, f, args.theta0, H, args.gamma, command.config)
    table = command.table(GENERALIZED_SN_LIMIT, result.theta_hat.size, {"H": H.label})
    command.report.results = _sn_results(result, f)
    command.report.results["atoms"] = H.size
    command.report.add_pvalue("gsn", sn_pvalue(result, table))
    command.report.warn(*result.warnings)
    if result.clipped:
        command.report.warn("clipped statistic calibrated with the unclipped limit table")


def _cp_test(command):
    args = command.args
    ts, f = command.load()
    with command.timer.phase("compute"):
        result = cp_statistic(ts, f, command.config, clipped=args.gamma is not None, gamma=args.gamma)
    p = f.output_dim(ts.d)
    table = command.table(CP_LIMIT, p)
    command.report.results = {
        "functional": f.describe(),
        "statistic": result.statistic,
        "argmax_k": result.argmax_k,
        "estimated_fraction": result.estimated_fraction,
        "n": result.n,
        "scanned": len(result.per_k) + len(result.skipped),
        "clipped": result.clipped,
        "gamma": result.gamma,
        "profile": [[k, value] for k, _, value in result.per_k],
    }
    command.report.add_pvalue("cp", table.upper_tail(result.statistic))
    if result.skipped:
        command.report.warn(f"skipped {len(result.skipped)} breaks with singular normalizer: {list(result.skipped)}")
    if result.clipped:
        command.report.warn("clipped scan calibrated with the unclipped limit table")


def _fixedb_pvalue(command):
    args = command.args
    ts, f = command.load()
    with command.timer.phase("compute"):
        result = fixedb_pvalue(ts, f, args.theta0, args.b)
    p = result.theta_hat.size
    command.report.results = {
        "functional": f.describe(),
        "statistic": result.statistic,
        "b": result.b,
        "l": result.l,
        "count": result.count,
        "exceedances": result.exceedances,
        "theta_hat": result.theta_hat,
        "theta0": result.theta0,
    }
    command.report.add_pvalue("subsampling", result.pvalue)
    params = {"b": args.b}
    if args.sigma_half is not None:
        params["sigma_half"] = _sigma_half(args.sigma_half, p)
    elif p > 1 and not args.table:
        command.report.warn("fixed-b limit depends on Sigma^{1/2} for p > 1; pass --table or --sigma-half to calibrate")
        return
    table = command.table(FIXEDB_LIMIT, p, params)
    command.report.add_pvalue("fixedb_calibrated", calibrated_pvalue(result, table))


def _bootstrap(command):
    args = command.args
    ts, f = command.load()
    scheme = MultiplierScheme.parse(args.multipliers, command.config.rng_seed)
    with command.timer.phase("compute"):
        result = bootstrap_distribution(
            ts, f, args.kind, scheme, replicates=args.reps, theta0=args.theta0, b=args.b, config=command.config
        )
    command.report.results = {
        "functional": f.describe(),
        "kind": result.kind,
        "observed": result.observed,
        "requested": result.requested,
        "failed": result.failed,
        "quantiles": {_level_key(level): result.quantile(level) for level in SUMMARY_LEVELS},
    }
    command.report.add_pvalue("bootstrap", result.pvalue)
    command.report.provenance = {
        "multipliers": scheme.describe(),
        "block_length": scheme.resolved_block_length(ts.n) if scheme.kind == BLOCK else None,
        "seed": scheme.seed,
        "replicates": result.requested,
    }
    if result.failed:
        command.report.warn(f"dropped {result.failed} degenerate bootstrap replicates")


def _simulate_limits(command):
    args = command.args
    config = command.config
    params = _limit_params(args)
    measure = None
    if "H" in params:
        params["H"], measure = measure_param(params["H"])
    spec = TableSpec.create(args.kind, args.p, params)
    reps = config.reps if args.reps is None else args.reps
    grid = config.grid if args.grid is None else args.grid
    levels = sorted(set(args.level or SUMMARY_LEVELS))
    if any(not 0.0 < level < 1.0 for level in levels):
        raise DomainError("quantile levels must lie in (0, 1)")
    with command.timer.phase("simulate"):
        sample = simulate_limit(spec, reps, grid, config.rng_seed, config.condition_limit, measure=measure)
    quantiles = sample.quantiles(levels)
    command.report.results = {
        "limit": spec.name,
        "reps": reps,
        "grid": grid,
        "discarded": sample.discarded,
        "mean": float(np.mean(sample.values)),
        "quantiles": {_level_key(level): value for level, value in zip(levels, quantiles)},
    }
    if sample.discarded:
        command.report.warn(f"discarded {sample.discarded} singular draws")


def _build_table(command):
    args = command.args
    config = command.config
    with command.timer.phase("simulate"):
        table = build_table(args.kind, args.p, _limit_params(args), reps=args.reps, grid=args.grid, config=config)
    with command.timer.phase("write"):
        path = save_table(table, directory=config.table_dir, path=args.table)
    summary = {
        _level_key(level): table.quantile(level)
        for level in SUMMARY_LEVELS
        if table.levels[0] <= level <= table.levels[-1]
    }
    command.report.results = {"table": table.name, "levels": len(table.levels), "quantiles": summary}
    command.report.provenance = _table_provenance(table, path)
    if table.discarded:
        command.report.warn(f"discarded {table.discarded} singular draws")


def _demo_counterexample(command):
    args = command.args
    with command.timer.phase("compute"):
        rows = counterexample_demo(args.n, seed=command.config.rng_seed, gamma=args.gamma)
    command.report.results = {
        "rows": [
            {
                "n": row.n,
                "prefix_length": row.prefix_length,
                "planted": row.planted,
                "value": row.value,
                "closed_form": row.closed_form,
                "clipped_value": row.clipped_value,
            }
            for row in rows
        ]
    }


def _check_identity(command):
    args = command.args
    if args.input:
        ts, _ = command.load()
    else:
        ts = iid_normal(args.n, replication_rng(command.config.rng_seed))
    with command.timer.phase("compute"):
        outcome = prop1_identity_check(
            ts, tolerance=args.tolerance, x=args.theta0, seed=command.config.rng_seed
        )
    command.report.results = {
        "n": ts.n,
        "pairs_checked": outcome.pairs_checked,
        "max_violation": outcome.max_violation,
        "worst_pair": outcome.worst_pair,
        "tolerance": outcome.tolerance,
    }


HANDLERS = {
    "sn-test": _sn_test,
    "sn-ci": _sn_ci,
    "gsn-test": _gsn_test,
    "cp-test": _cp_test,
    "fixedb-pvalue": _fixedb_pvalue,
    "bootstrap": _bootstrap,
    "simulate-limits": _simulate_limits,
    "build-table": _build_table,
    "demo-counterexample": _demo_counterexample,
    "check-identity": _check_identity,
}


def execute(args):
    """Runs a parsed command and returns its report."""
    command = _Command(args)
    logger.info("running %s with seed %d", args.command, command.config.rng_seed)
    HANDLERS[args.command](command)
    return command.finish()


def run_command(argv):
    """
    Parses ``argv`` and runs the command.

    Args:
        argv: Arguments without the program name

    Returns:
        AnalysisReport

    Raises:
        UsageError: The arguments could not be parsed
        SnInferenceError: The command failed
    """
    return execute(build_parser().parse_args(argv))


def main(argv=None):
    """
    Entry point: runs a command and writes its JSON report.

    Returns:
        int: 0 on success, the error's exit code otherwise
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"❌ ERROR: {exc}", file=sys.stderr)
        return exc.exit_code

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        report = execute(args)
        text = report.to_json()
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    except SnInferenceError as exc:
        print(f"❌ ERROR: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"❌ ERROR: cannot write report: {exc}", file=sys.stderr)
        return 1
    return 0

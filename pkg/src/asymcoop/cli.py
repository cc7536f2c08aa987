"""Command-line front end.

Subcommands::

    run         one method over the configured ensemble
    sweep       every configured method x epsilon x target (x MS density)
    fullsearch  exhaustive pattern search over the configured ensemble
    check       solver, gradient and rank-one self-tests
    figdata     reshape a records CSV into figure- or table-shaped data

``ASYMCOOP_OUT`` and ``ASYMCOOP_JOBS`` provide defaults for ``--out`` and
``--jobs``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import __version__, conic, sim
from .baselines import UNAVAILABLE_METHODS, UnavailableMethodError
from .model import (
    BeamformerSet,
    ChannelSet,
    SinrSpec,
    SmoothingState,
    mw_to_dbm,
    sinr_slack,
    smoothed_gradient,
    smoothed_objective,
)
from .subproblems import RANK1_TOL, project_feasible, solve_obp

log = logging.getLogger("asymcoop")

FIGURES = ("tradeoff", "coop_vs_sinr", "coop_vs_density", "table3", "table5")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    """A user-facing error; the message is printed without a traceback."""


# -------------------------------------------------------------------------
# Experiment commands
# -------------------------------------------------------------------------


def _out_dir(args) -> str:
    out = args.out or os.environ.get("ASYMCOOP_OUT") or "asymcoop-out"
    os.makedirs(out, exist_ok=True)
    return out


def _jobs(args) -> Optional[int]:
    if args.jobs is not None:
        if args.jobs < 1:
            raise CliError("--jobs must be at least 1")
        return args.jobs
    return None  # sim falls back to ASYMCOOP_JOBS, then the CPU count


def _load(args, extra_overrides: Sequence[str] = ()):
    try:
        return sim.load_config(args.config, list(args.set or []) + list(extra_overrides))
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    except UnavailableMethodError as exc:
        raise CliError(str(exc)) from None
    except sim.ConfigError as exc:
        raise CliError(f"invalid configuration: {exc}") from None


def _progress(total):
    start = time.perf_counter()

    def report(done):
        log.info("trial %d/%d (%.1fs)", done, total, time.perf_counter() - start)
    return report


def _write_outputs(out, records, aggregates, fields=sim.AGGREGATE_FIELDS):
    rec_path = os.path.join(out, "records.csv")
    agg_path = os.path.join(out, "aggregates.csv")
    sim.write_records(records, rec_path)
    sim.write_aggregates(aggregates, agg_path, fields)
    print(f"wrote {rec_path}")
    print(f"wrote {agg_path}")


def cmd_run(args) -> int:
    method = args.method
    if method in UNAVAILABLE_METHODS:
        raise CliError(f"{method}: not implemented: under-specified in source paper")
    if method not in sim.METHODS:
        raise CliError(f"unknown method {method!r}; valid methods: {', '.join(sim.METHODS)}")
    config, _ = _load(args, [f'methods=["{method}"]'])
    result = sim.run_monte_carlo(config, _jobs(args), _progress(config.trials))
    _write_outputs(_out_dir(args), result.records, result.aggregates())
    return EXIT_OK


def cmd_fullsearch(args) -> int:
    config, _ = _load(args, ['methods=["fullsearch"]'])
    result = sim.run_monte_carlo(config, _jobs(args), _progress(config.trials))
    _write_outputs(_out_dir(args), result.records, result.aggregates())
    return EXIT_OK


def cmd_sweep(args) -> int:
    config, extra = _load(args)
    grid = extra.get("lambda_ms_grid")
    if grid is not None and not isinstance(grid, (list, tuple)):
        grid = [grid]
    if (not config.methods or not config.epsilons or not config.sinr_targets_db
            or (grid is not None and len(grid) == 0)):
        raise CliError("empty sweep")
    records, aggregates = [], []
    densities = [None] if grid is None else [float(g) for g in grid]
    for i, lam in enumerate(densities):
        cfg = config if lam is None else config.replace(lambda_ms=lam)
        result = sim.run_monte_carlo(cfg, _jobs(args), _progress(cfg.trials))
        for r in result.records:
            r.trial_id += i * cfg.trials
        records += result.records
        for row in result.aggregates():
            row["lambda_ms"] = cfg.lambda_ms
            aggregates.append(row)
    _write_outputs(_out_dir(args), records, aggregates, ("lambda_ms",) + sim.AGGREGATE_FIELDS)
    return EXIT_OK


# -------------------------------------------------------------------------
# Figure data
# -------------------------------------------------------------------------


def _group(records, key):
    cells = {}
    for r in records:
        if r.feasible:
            cells.setdefault(key(r), []).append(r)
    return cells


def _series(r) -> str:
    return r.method if r.method in ("b4", "b5") else f"{r.method}(eps={r.epsilon:g})"


def figure_data(records, figure: str, area_km2: float = 1.0):
    """Tidy rows for one figure or table.

    Returns
    -------
    header, rows
    """
    if figure not in FIGURES:
        raise CliError(f"unknown figure id {figure!r}; valid ids: {', '.join(FIGURES)}")
    if figure == "table5":
        header = ["epsilon", "method", "avg_pwr_dbm", "avg_coop", "sdp_count"]
        rows = []
        for (eps, method), rs in sorted(_group(records, lambda r: (r.epsilon, r.method)).items()):
            p = sim._mean_se(10 ** (r.power_dbm / 10) for r in rs)[0]
            rows.append([eps, method, float(mw_to_dbm(p)), sim._mean_se(r.avg_coop for r in rs)[0],
                         sim._mean_se(r.sdp_count for r in rs)[0]])
        return header, rows
    if figure == "table3":
        header = ["gamma_db", "method", "epsilon", "power_dbm", "power_mw_mean", "power_mw_stderr"]
        rows = []
        cells = _group(records, lambda r: (r.gamma_db, r.method, r.epsilon))
        for (g, method, eps), rs in sorted(cells.items()):
            m, se = sim._mean_se(10 ** (r.power_dbm / 10) for r in rs)
            rows.append([g, method, eps, float(mw_to_dbm(m)), m, se])
        return header, rows
    header = ["x", "series", "mean", "stderr"]
    rows = []
    if figure == "coop_vs_sinr":
        cells = _group(records, lambda r: (r.gamma_db, _series(r)))
        for (x, s), rs in sorted(cells.items()):
            rows.append([x, s, *sim._mean_se(r.backhaul_cost for r in rs)])
    elif figure == "coop_vs_density":
        # realized users per km^2 of each trial
        cells = _group(records, lambda r: (r.n_ms / area_km2, _series(r)))
        for (x, s), rs in sorted(cells.items()):
            rows.append([x, s, *sim._mean_se(r.backhaul_cost for r in rs)])
    else:  # tradeoff: one point per method and epsilon, x = mean power in dBm
        header = ["x", "series", "mean", "stderr", "epsilon"]
        cells = _group(records, lambda r: (r.method, r.epsilon))
        for (method, eps), rs in sorted(cells.items()):
            p = sim._mean_se(10 ** (r.power_dbm / 10) for r in rs)[0]
            rows.append([float(mw_to_dbm(p)), method, *sim._mean_se(r.avg_coop for r in rs), eps])
    return header, rows


def cmd_figdata(args) -> int:
    if args.figure not in FIGURES:
        raise CliError(f"unknown figure id {args.figure!r}; valid ids: {', '.join(FIGURES)}")
    try:
        records = sim.read_records(args.records)
    except FileNotFoundError:
        raise CliError(f"records file not found: {args.records}") from None
    except ValueError as exc:
        raise CliError(str(exc)) from None
    header, rows = figure_data(records, args.figure, args.area)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if args.out:
            fh.close()
            print(f"wrote {args.out}")
    return EXIT_OK


# -------------------------------------------------------------------------
# Self-test
# -------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: int
    total: int
    worst: float
    limit: float

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def line(self) -> str:
        tag = "PASS" if self.ok else "FAIL"
        return (f"{tag} {self.name}: {self.passed}/{self.total} within {self.limit:g} "
                f"(worst {self.worst:.3e})")


def _random_sdp(rng, n_blocks=2, size=3, m=3):
    """Feasible, bounded random SDP: ``C`` positive definite, ``X = I`` strictly feasible."""
    blocks = [size] * n_blocks
    C = []
    for _ in blocks:
        B = rng.standard_normal((size, size))
        C.append(B @ B.T + 0.5 * np.eye(size))
    rows = []
    for i in range(m):
        coeffs = {}
        for b in range(n_blocks):
            A = rng.standard_normal((size, size))
            coeffs[b] = A + A.T
        rhs = sum(float(np.trace(a)) for a in coeffs.values())
        sense = conic.EQ if i % 2 == 0 else conic.GE
        rows.append(conic.Constraint(coeffs, rhs - (0.0 if sense == conic.EQ else 0.5), sense))
    return conic.SdpProblem(blocks, C, rows)


def check_kkt_suite(seed: int, tolerance: float, trials: int = 20,
                    limit: float = 1e-8) -> CheckResult:
    rng = np.random.default_rng(seed)
    opts = conic.SolverOptions(tolerance=tolerance)
    passed, worst = 0, 0.0
    for _ in range(trials):
        prob = _random_sdp(rng)
        res = conic.solve(prob, opts)
        r = conic.check_kkt(prob, res).max() if res.status is conic.Status.OPTIMAL else math.inf
        worst = max(worst, r)
        passed += r <= limit
    return CheckResult("conic KKT residuals", passed, trials, worst, limit)


def check_gradient_suite(seed: int, trials: int = 20, limit: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    passed, worst = 0, 0.0
    for _ in range(trials):
        K, N, L = rng.integers(1, 4, size=3)
        w = rng.standard_normal((K, N, L)) + 1j * rng.standard_normal((K, N, L))
        theta = float(rng.uniform(0.5, 2.0) * np.abs(w).max())
        state = SmoothingState(theta, float(rng.uniform(0, 1)))
        g = smoothed_gradient(BeamformerSet(w), state).w
        x = np.concatenate([w.real.ravel(), w.imag.ravel()])
        h = 1e-6 * max(1.0, np.abs(x).max())
        fd = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            f = lambda v: smoothed_objective(  # noqa: E731
                BeamformerSet((v[:w.size] + 1j * v[w.size:]).reshape(w.shape)), state)
            fd[i] = (f(x + e) - f(x - e)) / (2 * h)
        an = np.concatenate([g.real.ravel(), g.imag.ravel()])
        err = float(np.max(np.abs(fd - an) / np.maximum(np.abs(an), 1e-3)))
        worst = max(worst, err)
        passed += err <= limit
    return CheckResult("smoothed gradient vs finite differences", passed, trials, worst, limit)


def check_rank1_suite(seed: int, tolerance: float, trials: int = 10,
                      limit: float = RANK1_TOL) -> CheckResult:
    rng = np.random.default_rng(seed)
    opts = conic.SolverOptions(tolerance=tolerance)
    passed = total = 0
    worst = 0.0
    while total < trials:
        K, N, L = int(rng.integers(2, 5)), int(rng.integers(2, 4)), 2
        h = (rng.standard_normal((K, N, L)) + 1j * rng.standard_normal((K, N, L))) / math.sqrt(2)
        ch, spec = ChannelSet(h), SinrSpec.uniform(K, 10.0, 0.0)
        sol = solve_obp(ch, spec, opts)
        if not sol.feasible:
            continue
        w_bar = BeamformerSet(sol.beams.w * rng.uniform(0.3, 0.9))
        proj = project_feasible(ch, spec, w_bar, opts)
        for s in (sol, proj):
            total += 1
            r = s.max_rank_ratio if s.feasible else math.inf
            slack_ok = s.feasible and bool(np.all(sinr_slack(ch, s.beams, spec) >= -1e-6))
            worst = max(worst, r)
            passed += (r <= limit) and slack_ok
    return CheckResult("rank-one lifted solutions", passed, total, worst, limit)


def cmd_check(args) -> int:
    results = [check_kkt_suite(args.seed, args.tolerance),
               check_gradient_suite(args.seed),
               check_rank1_suite(args.seed, args.tolerance)]
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"{len(failed)} suite(s) failed: {', '.join(failed)}")
        return EXIT_FAIL
    print("all checks passed")
    return EXIT_OK


# -------------------------------------------------------------------------
# Entry point
# -------------------------------------------------------------------------


def _env_int(name):
    v = os.environ.get(name)
    if v is None:
        return None
    try:
        return int(v)
    except ValueError:
        raise CliError(f"{name} must be an integer, got {v!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asymcoop",
                                description="Sparse multicell beamforming experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="log progress (-vv for debug output)")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="TOML configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
        sp.add_argument("--out", help="output directory (default: $ASYMCOOP_OUT or ./asymcoop-out)")
        sp.add_argument("--jobs", type=int, help="worker processes (default: $ASYMCOOP_JOBS or CPUs)")
        return sp

    run = experiment("run", "run one method over the configured ensemble")
    run.add_argument("--method", default="proposed",
                     help=f"one of {', '.join(sim.METHODS)}")
    run.set_defaults(func=cmd_run)
    experiment("sweep", "run the full configured grid").set_defaults(func=cmd_sweep)
    experiment("fullsearch", "exhaustive pattern search").set_defaults(func=cmd_fullsearch)

    chk = sub.add_parser("check", help="solver and model self-tests")
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("--tolerance", type=float, default=1e-8,
                     help="solver tolerance used by the suites (loosen to see them fail)")
    chk.set_defaults(func=cmd_check)

    fig = sub.add_parser("figdata", help="figure- or table-shaped CSV from records")
    fig.add_argument("--records", required=True, help="records CSV written by run/sweep")
    fig.add_argument("--figure", required=True, help=f"one of {', '.join(FIGURES)}")
    fig.add_argument("--area", type=float, default=1.0,
                     help="area in km^2 used to turn user counts into densities")
    fig.add_argument("--out", help="output CSV (default: stdout)")
    fig.set_defaults(func=cmd_figdata)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "jobs", None) is None and hasattr(args, "jobs"):
            args.jobs = _env_int("ASYMCOOP_JOBS")
        return args.func(args)
    except CliError as exc:
        print(f"asymcoop: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (sim.ConfigError, UnavailableMethodError) as exc:
        print(f"asymcoop: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Random networks, channel synthesis and Monte-Carlo aggregation.

Base stations and users are dropped by independent Poisson point
processes on a rectangle.  Channels follow an LTE-style macro model:
pathloss ``PL = 148.1 + 37.6 log10(d_km)`` dB, log-normal shadowing drawn
once per BS-user pair, antenna gain, and Rayleigh fading per antenna.

Every trial derives its random streams from ``(master_seed, trial_id,
attempt)``, so a run is a pure function of its configuration no matter
how trials are scheduled across workers.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .algorithm import (
    AlgorithmParams,
    DegenerateStartError,
    InfeasibleInstanceError,
    SolutionReport,
    run_algorithm1,
)
from .baselines import (
    UNAVAILABLE_METHODS,
    BaselineParams,
    UnavailableMethodError,
    full_search_many,
    iterative_link_removal,
    reweighted_group_l1,
)
from .conic import SolverOptions
from .model import ChannelSet, InvalidSolutionError, NetworkInstance, SinrSpec, mw_to_dbm
from .subproblems import solve_obp

__all__ = [
    "METHODS",
    "RECORD_FIELDS",
    "AGGREGATE_FIELDS",
    "SimConfig",
    "TrialRecord",
    "MonteCarloResult",
    "sample_ppp",
    "sample_network",
    "pathloss_db",
    "draw_channels",
    "feasibility_screen",
    "run_monte_carlo",
    "aggregate",
    "write_records",
    "read_records",
    "write_aggregates",
]

METHODS = ("proposed", "fullsearch", "b4", "b5")

RECORD_FIELDS = ("trial_id", "seed", "n_bs", "n_ms", "method", "epsilon", "gamma_db",
                 "backhaul_cost", "avg_coop", "power_dbm", "sdp_count", "iterations",
                 "rank1_ok", "feasible", "wall_ms")

AGGREGATE_FIELDS = ("method", "epsilon", "gamma_db", "n", "n_failed", "resampled",
                    "backhaul_cost_mean", "backhaul_cost_stderr",
                    "avg_coop_mean", "avg_coop_stderr",
                    "power_mw_mean", "power_mw_stderr", "power_dbm",
                    "sdp_count_mean", "iterations_mean", "rank1_rate")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.  Densities are per km^2, distances in km.

    ``n_bs`` / ``n_ms`` fix the node counts instead of drawing them from
    the Poisson laws; positions stay uniform.  ``tau=None`` selects the
    instance-dependent default of :class:`AlgorithmParams`.
    """

    area_km: tuple = (1.0, 1.0)
    lambda_bs: float = 4.0
    lambda_ms: float = 8.0
    n_bs: Optional[int] = None
    n_ms: Optional[int] = None
    antennas: int = 2
    antenna_gain_db: float = 9.0
    shadow_sigma_db: float = 8.0
    pl_intercept_db: float = 148.1
    pl_slope_db: float = 37.6
    min_distance_km: float = 0.01
    noise_dbm: float = -102.0
    sinr_targets_db: tuple = (20.0,)
    epsilons: tuple = (0.0,)
    methods: tuple = ("proposed",)
    location_draws: int = 10
    fading_draws: int = 1
    master_seed: int = 0
    max_resample: int = 200
    eta: float = 0.9
    tau: Optional[float] = None
    rho: float = 1e-4
    theta_min: float = 1e-4
    theta_init_factor: float = 2.0
    step_factor: float = 2.0
    max_outer_iterations: int = 500
    zero_threshold_factor: float = 1e-3
    power_step: str = "implicit"
    skip_feasible_projection: bool = True
    reweight_iterations: int = 5
    reweight_floor: float = 1e-8
    full_search_limit: int = 100_000
    solver_tolerance: float = 1e-8
    solver_max_iterations: int = 200

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("area_km", tuple(float(a) for a in self.area_km))
        set_("sinr_targets_db", tuple(float(g) for g in self.sinr_targets_db))
        set_("epsilons", tuple(float(e) for e in self.epsilons))
        set_("methods", tuple(str(m) for m in self.methods))
        if len(self.area_km) != 2 or min(self.area_km) < 0:
            raise ValueError("area_km must be two nonnegative side lengths")
        if self.lambda_bs <= 0:
            raise ValueError("lambda_bs must be positive")
        if self.lambda_ms <= 0:
            raise ValueError("lambda_ms must be positive")
        for name in ("n_bs", "n_ms"):
            v = getattr(self, name)
            if v is not None and int(v) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.antennas < 1:
            raise ValueError("antennas must be at least 1")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be nonnegative")
        if self.min_distance_km <= 0:
            raise ValueError("min_distance_km must be positive")
        if self.location_draws < 1 or self.fading_draws < 1:
            raise ValueError("location_draws and fading_draws must be at least 1")
        if self.max_resample < 1:
            raise ValueError("max_resample must be at least 1")
        for e in self.epsilons:
            if e < 0 or not math.isfinite(e):
                raise ValueError(f"epsilon must be a finite value >= 0, got {e}")
        for m in self.methods:
            if m in UNAVAILABLE_METHODS:
                raise UnavailableMethodError(
                    f"{m}: not implemented: under-specified in source paper")
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; valid methods: {', '.join(METHODS)}")
        # parameter objects validate the remaining knobs
        self.algorithm_params(0.0, 0)
        self.baseline_params(0.0)
        if self.solver_tolerance <= 0:
            raise ValueError("solver_tolerance must be positive")

    @property
    def trials(self) -> int:
        return self.location_draws * self.fading_draws

    @property
    def area(self) -> float:
        return self.area_km[0] * self.area_km[1]

    def algorithm_params(self, epsilon: float, seed: int) -> AlgorithmParams:
        return AlgorithmParams(
            epsilon=epsilon, eta=self.eta, tau=self.tau, rho=self.rho, theta_min=self.theta_min,
            theta_init_factor=self.theta_init_factor, step_factor=self.step_factor,
            max_outer_iterations=self.max_outer_iterations,
            zero_threshold_factor=self.zero_threshold_factor, seed=seed,
            power_step=self.power_step, skip_feasible_projection=self.skip_feasible_projection)

    def baseline_params(self, epsilon: float) -> BaselineParams:
        return BaselineParams(epsilon=epsilon, reweight_iterations=self.reweight_iterations,
                              reweight_floor=self.reweight_floor,
                              zero_threshold_factor=self.zero_threshold_factor)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(tolerance=self.solver_tolerance,
                             max_iterations=self.solver_max_iterations)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TrialRecord:
    trial_id: int
    seed: int
    n_bs: int
    n_ms: int
    method: str
    epsilon: float
    gamma_db: float
    backhaul_cost: float
    avg_coop: float
    power_dbm: float
    sdp_count: int
    iterations: int
    rank1_ok: bool
    feasible: bool
    wall_ms: float

    def row(self) -> list:
        return [self.trial_id, self.seed, self.n_bs, self.n_ms, self.method,
                _fmt(self.epsilon), _fmt(self.gamma_db), _fmt(self.backhaul_cost),
                _fmt(self.avg_coop), _fmt(self.power_dbm), self.sdp_count, self.iterations,
                int(self.rank1_ok), int(self.feasible), f"{self.wall_ms:.1f}"]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# -------------------------------------------------------------------------
# Network and channel synthesis
# -------------------------------------------------------------------------


def sample_ppp(rate: float, area_km, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson point process on ``[0, a] x [0, b]``; returns ``(n, 2)``."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    a, b = (float(v) for v in area_km)
    n = int(rng.poisson(rate * a * b))
    return np.column_stack([rng.uniform(0.0, a, n), rng.uniform(0.0, b, n)])


def _uniform_points(n: int, area_km, rng) -> np.ndarray:
    a, b = area_km
    return np.column_stack([rng.uniform(0.0, a, n), rng.uniform(0.0, b, n)])


def sample_network(config: SimConfig, rng: np.random.Generator,
                   max_tries: int = 10_000) -> tuple:
    """Draw one layout with at least one BS and one user.

    Returns
    -------
    NetworkInstance, number of empty layouts that were redrawn
    """
    for tries in range(max_tries):
        bs = (_uniform_points(config.n_bs, config.area_km, rng) if config.n_bs
              else sample_ppp(config.lambda_bs, config.area_km, rng))
        ms = (_uniform_points(config.n_ms, config.area_km, rng) if config.n_ms
              else sample_ppp(config.lambda_ms, config.area_km, rng))
        if len(bs) and len(ms):
            return NetworkInstance(bs, ms, config.antennas, config.area_km), tries
    raise RuntimeError("could not draw a nonempty network; check the densities and area")


def pathloss_db(d_km, intercept_db: float = 148.1, slope_db: float = 37.6):
    """LTE macro pathloss ``intercept + slope * log10(d_km)``."""
    return intercept_db + slope_db * np.log10(d_km)


def large_scale_gain_db(network: NetworkInstance, config: SimConfig,
                        rng: np.random.Generator) -> np.ndarray:
    """Antenna gain minus pathloss plus shadowing, shape ``(K, N)``."""
    d = np.maximum(network.distances(), config.min_distance_km)
    shadow = rng.normal(0.0, config.shadow_sigma_db, size=d.shape)
    return config.antenna_gain_db - pathloss_db(d, config.pl_intercept_db, config.pl_slope_db) + shadow


def draw_channels(network: NetworkInstance, config: SimConfig,
                  rng: np.random.Generator) -> ChannelSet:
    """``h_{n,k,l} = Gamma * 10^((G - PL + shadow) / 20)`` with ``Gamma ~ CN(0, 1)``."""
    K, N, L = network.n_ms, network.n_bs, network.antennas_per_bs
    amp = 10.0 ** (large_scale_gain_db(network, config, rng) / 20.0)
    fading = (rng.standard_normal((K, N, L)) + 1j * rng.standard_normal((K, N, L))) / math.sqrt(2.0)
    return ChannelSet(fading * amp[:, :, None])


def feasibility_screen(channels: ChannelSet, spec: SinrSpec,
                       options: Optional[SolverOptions] = None) -> bool:
    """True when the full-cooperation power problem has a solution."""
    if np.all(spec.targets == 0):
        return True
    return solve_obp(channels, spec, options).feasible


# -------------------------------------------------------------------------
# Monte-Carlo driver
# -------------------------------------------------------------------------


def _seed(*words) -> int:
    return int(np.random.SeedSequence([int(w) for w in words]).generate_state(1, np.uint32)[0])


def _trial_instance(config: SimConfig, trial_id: int, attempt: int):
    """Instance ``attempt`` of a trial.  Fading draws of one location share its layout."""
    loc, fad = divmod(trial_id, config.fading_draws)
    loc_rng = np.random.default_rng(_seed(config.master_seed, 0, loc, attempt))
    network, _ = sample_network(config, loc_rng)
    seed = _seed(config.master_seed, 1, loc, fad, attempt)
    channels = draw_channels(network, config, np.random.default_rng(seed))
    return network, channels, seed


@dataclass
class _TrialOutput:
    records: list
    resampled: dict


def _record(trial_id, seed, channels, method, eps, gamma_db, report: Optional[SolutionReport],
            wall_ms) -> TrialRecord:
    K, N = channels.n_ms, channels.n_bs
    if report is None:
        return TrialRecord(trial_id, seed, N, K, method, eps, gamma_db, math.nan, math.nan,
                           math.nan, 0, 0, False, False, wall_ms)
    return TrialRecord(trial_id, seed, N, K, method, eps, gamma_db, report.backhaul_cost,
                       report.avg_coop, report.power_dbm, report.sdp_solve_count,
                       report.outer_iterations, report.rank1_ok, report.feasible, wall_ms)


def _run_methods(config: SimConfig, trial_id, seed, channels, spec, gamma_db) -> list:
    opts = config.solver_options()
    out = []
    for method in config.methods:
        if method == "fullsearch":
            t0 = time.perf_counter()
            try:
                reports = full_search_many(channels, spec, config.epsilons, opts,
                                           config.full_search_limit, config.zero_threshold_factor)
            except InfeasibleInstanceError:
                reports = [None] * len(config.epsilons)
            ms = (time.perf_counter() - t0) * 1e3 / len(config.epsilons)
            out += [_record(trial_id, seed, channels, method, e, gamma_db, r, ms)
                    for e, r in zip(config.epsilons, reports)]
            continue
        for eps in config.epsilons:
            t0 = time.perf_counter()
            try:
                if method == "proposed":
                    rep = run_algorithm1(channels, spec,
                                         config.algorithm_params(eps, _seed(seed, 2)), opts)
                elif method == "b4":
                    rep = iterative_link_removal(channels, spec, config.baseline_params(eps), opts)
                else:
                    rep = reweighted_group_l1(channels, spec, config.baseline_params(eps), opts)
            except (InfeasibleInstanceError, InvalidSolutionError, DegenerateStartError):
                rep = None
            ms = (time.perf_counter() - t0) * 1e3
            out.append(_record(trial_id, seed, channels, method, eps, gamma_db, rep, ms))
    return out


def _run_trial(config: SimConfig, trial_id: int) -> _TrialOutput:
    records = []
    resampled = {}
    opts = config.solver_options()
    for gamma_db in config.sinr_targets_db:
        for attempt in range(config.max_resample):
            _, channels, seed = _trial_instance(config, trial_id, attempt)
            spec = SinrSpec.uniform(channels.n_ms, gamma_db, config.noise_dbm)
            if feasibility_screen(channels, spec, opts):
                break
        else:
            resampled[gamma_db] = config.max_resample
            continue
        resampled[gamma_db] = attempt
        records += _run_methods(config, trial_id, seed, channels, spec, gamma_db)
    return _TrialOutput(records, resampled)


@dataclass
class MonteCarloResult:
    records: list
    resampled: dict = field(default_factory=dict)
    unscreened: int = 0

    def aggregates(self) -> list:
        return aggregate(self.records, self.resampled)


def _default_jobs() -> int:
    env = os.environ.get("ASYMCOOP_JOBS")
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover
        return max(1, os.cpu_count() or 1)


def run_monte_carlo(config: SimConfig, jobs: Optional[int] = None,
                    progress=None) -> MonteCarloResult:
    """Run every trial of ``config`` and collect one record per cell.

    Records are ordered by trial, target, method and epsilon regardless of
    ``jobs``.  ``progress`` is called with the number of finished trials.
    """
    jobs = _default_jobs() if jobs is None else max(1, int(jobs))
    ids = range(config.trials)
    if jobs == 1 or config.trials == 1:
        outputs = []
        for i in ids:
            outputs.append(_run_trial(config, i))
            if progress:
                progress(i + 1)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = []
            for i, o in enumerate(pool.map(_run_trial, [config] * config.trials, ids)):
                outputs.append(o)
                if progress:
                    progress(i + 1)
    records, resampled = [], {}
    for o in outputs:
        records += o.records
        for g, n in o.resampled.items():
            resampled[g] = resampled.get(g, 0) + n
    return MonteCarloResult(records, resampled)


# -------------------------------------------------------------------------
# Aggregation and CSV
# -------------------------------------------------------------------------


def _mean_se(values) -> tuple:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate(records: Sequence[TrialRecord], resampled: Optional[dict] = None) -> list:
    """Mean and standard error per ``(method, epsilon, gamma_db)`` cell.

    Mean power in dBm is ``10 log10`` of the mean power in mW.
    """
    resampled = resampled or {}
    cells = {}
    for r in records:
        cells.setdefault((r.method, float(r.epsilon), float(r.gamma_db)), []).append(r)
    rows = []
    for (method, eps, gamma), rs in cells.items():
        ok = [r for r in rs if r.feasible]
        cb = _mean_se(r.backhaul_cost for r in ok)
        coop = _mean_se(r.avg_coop for r in ok)
        pw = _mean_se(10.0 ** (r.power_dbm / 10.0) for r in ok)
        rows.append({
            "method": method, "epsilon": eps, "gamma_db": gamma, "n": len(ok),
            "n_failed": len(rs) - len(ok), "resampled": resampled.get(gamma, 0),
            "backhaul_cost_mean": cb[0], "backhaul_cost_stderr": cb[1],
            "avg_coop_mean": coop[0], "avg_coop_stderr": coop[1],
            "power_mw_mean": pw[0], "power_mw_stderr": pw[1],
            "power_dbm": float(mw_to_dbm(pw[0])) if pw[0] > 0 else math.nan,
            "sdp_count_mean": _mean_se(r.sdp_count for r in ok)[0],
            "iterations_mean": _mean_se(r.iterations for r in ok)[0],
            "rank1_rate": (sum(r.rank1_ok for r in ok) / len(ok)) if ok else math.nan,
        })
    return rows


def _open(out, mode="w"):
    if isinstance(out, (str, bytes, os.PathLike)):
        return open(out, mode, newline=""), True
    return out, False


def write_records(records: Iterable[TrialRecord], out) -> None:
    """Write records with the fixed header to a path or text stream."""
    fh, close = _open(out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow(r.row())
    finally:
        if close:
            fh.close()


def _parse_bool(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes")


def read_records(src) -> list:
    """Inverse of :func:`write_records`.

    Raises
    ------
    ValueError
        Naming any missing column.
    """
    if isinstance(src, (str, bytes, os.PathLike)):
        with open(src, newline="") as fh:
            return read_records(fh)
    reader = csv.DictReader(src)
    missing = [c for c in RECORD_FIELDS if c not in (reader.fieldnames or [])]
    if missing:
        raise ValueError(f"records file is missing columns: {', '.join(missing)}")
    out = []
    for row in reader:
        out.append(TrialRecord(
            int(row["trial_id"]), int(row["seed"]), int(row["n_bs"]), int(row["n_ms"]),
            row["method"], float(row["epsilon"]), float(row["gamma_db"]),
            float(row["backhaul_cost"]), float(row["avg_coop"]), float(row["power_dbm"]),
            int(row["sdp_count"]), int(row["iterations"]), _parse_bool(row["rank1_ok"]),
            _parse_bool(row["feasible"]), float(row["wall_ms"])))
    return out


def write_aggregates(rows: Sequence[dict], out, fields: Sequence[str] = AGGREGATE_FIELDS) -> None:
    fh, close = _open(out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) if isinstance(r[f], (float, np.floating)) else r[f]
                        for f in fields])
    finally:
        if close:
            fh.close()


def records_csv(records: Iterable[TrialRecord]) -> str:
    buf = io.StringIO()
    write_records(records, buf)
    return buf.getvalue()


# -------------------------------------------------------------------------
# Configuration files
# -------------------------------------------------------------------------

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as _toml


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


_ALIASES = {
    "epsilon": ("epsilons", True),
    "gamma_db": ("sinr_targets_db", True),
    "sinr_target_db": ("sinr_targets_db", True),
    "method": ("methods", True),
    "seed": ("master_seed", False),
    "trials": ("location_draws", False),
}

# keys that only the sweep driver reads
SWEEP_KEYS = ("lambda_ms_grid",)


def _field_types() -> dict:
    return {f.name: f for f in dataclasses.fields(SimConfig)}


def _coerce(key: str, value):
    f = _field_types()[key]
    default = f.default
    if key == "tau" or key in ("n_bs", "n_ms"):
        if value is None or (isinstance(value, str) and value.lower() in ("auto", "ppp", "none")):
            return None
        if key == "tau":
            return float(value)
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, tuple):
        seq = value if isinstance(value, (list, tuple)) else [value]
        return tuple(seq)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected true or false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return str(value)


def flatten_config(mapping: dict) -> dict:
    """Merge one level of sections into a flat key/value mapping."""
    flat = {}
    for key, value in mapping.items():
        items = value.items() if isinstance(value, dict) else [(key, value)]
        for k, v in items:
            if isinstance(v, dict):
                raise ConfigError(f"{key}.{k}: sections nest at most one level")
            if k in flat:
                raise ConfigError(f"{k}: key given more than once")
            flat[k] = v
    return flat


def normalize_keys(flat: dict) -> dict:
    """Resolve aliases and reject unknown keys, naming them."""
    fields = _field_types()
    out = {}
    for key, value in flat.items():
        target, wrap = _ALIASES.get(key, (key, False))
        if target not in fields and target not in SWEEP_KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        if wrap and not isinstance(value, (list, tuple)):
            value = [value]
        out[target] = value
    return out


def config_from_mapping(mapping: dict) -> tuple:
    """Build a :class:`SimConfig` plus sweep-only settings from parsed TOML.

    Returns
    -------
    SimConfig, dict of sweep-only keys
    """
    flat = normalize_keys(flatten_config(mapping))
    extra = {k: flat.pop(k) for k in SWEEP_KEYS if k in flat}
    kwargs = {k: _coerce(k, v) for k, v in flat.items()}
    try:
        return SimConfig(**kwargs), extra
    except UnavailableMethodError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_override(text: str) -> tuple:
    """``key=value`` with ``value`` read as a TOML literal, else as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = _toml.loads(f"v = {raw}")["v"]
    except _toml.TOMLDecodeError:
        value = raw
    return key, value


def load_config(path, overrides: Sequence[str] = ()) -> tuple:
    """Read a TOML config file and apply ``key=value`` overrides.

    Raises
    ------
    FileNotFoundError
        Naming the path.
    ConfigError
        For malformed files, unknown keys and invalid values.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            mapping = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    flat = flatten_config(mapping)
    for text in overrides:
        key, value = parse_override(text)
        flat[key] = value
    return config_from_mapping(flat)

"""Smoothed-l0 projected-gradient search for sparse cooperation patterns.

The search runs in three stages:

1. start from the minimum-power full-cooperation solution;
2. take perturbed gradient-ascent steps on
   ``F_theta(w) - epsilon * sum_k ||w_k||^2``, projecting every step back
   onto the SINR-feasible set, and shrink ``theta`` by ``eta`` whenever the
   step makes little first-order progress;
3. read the zero blocks off the final iterate and re-solve the
   minimum-power problem restricted to that pattern.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conic import SolverOptions
from .model import (
    ZERO_THRESHOLD_FACTOR,
    BeamformerSet,
    ChannelSet,
    CooperationPattern,
    InvalidSolutionError,
    SinrSpec,
    SmoothingState,
    backhaul_cost,
    block_norms,
    default_zero_threshold,
    mw_to_dbm,
    pattern_from_beamformers,
    sinr_slack,
    smoothed_gradient,
    smoothed_objective,
    total_power,
)
from .subproblems import (
    RANK1_TOL,
    project_feasible,
    solve_min_power_with_pattern,
    solve_obp,
)

__all__ = [
    "InfeasibleInstanceError",
    "DegenerateStartError",
    "AlgorithmParams",
    "IterationTrace",
    "SolutionReport",
    "StationarityReport",
    "default_tau",
    "initialize",
    "theta_init",
    "gradient_step",
    "run_algorithm1",
    "finish_with_pattern",
    "stationarity_check",
]

SKIPPED = "skipped-feasible"
TRACE_COLUMNS = ("j", "theta", "mu", "objective", "grad_progress", "max_rank_ratio", "sdp_status")


class InfeasibleInstanceError(RuntimeError):
    """The SINR targets cannot be met by any beamformer set."""


class DegenerateStartError(ValueError):
    """The starting point is identically zero, so no smoothing width can be derived."""


def default_tau(n_ms: int, n_bs: int, antennas: int, spec: SinrSpec) -> float:
    """``K L N sqrt(gamma_bar) / 2`` with ``gamma_bar`` the mean linear target."""
    return n_ms * antennas * n_bs * math.sqrt(float(np.mean(spec.targets))) / 2.0


@dataclass(frozen=True)
class AlgorithmParams:
    """Tuning knobs of the search.

    ``tau=None`` selects :func:`default_tau` for the instance at hand.
    With ``skip_feasible_projection`` a pre-projection point that already
    meets every SINR target is taken as its own projection and no SDP is
    solved for that step.
    """

    epsilon: float = 0.0
    eta: float = 0.9
    tau: Optional[float] = None
    rho: float = 1e-4
    theta_min: float = 1e-4
    theta_init_factor: float = 2.0
    step_factor: float = 2.0
    max_outer_iterations: int = 500
    zero_threshold_factor: float = ZERO_THRESHOLD_FACTOR
    seed: int = 0
    rank1_tol: float = RANK1_TOL
    power_step: str = "implicit"
    skip_feasible_projection: bool = True

    def __post_init__(self):
        if self.power_step not in ("implicit", "explicit"):
            raise ValueError(f"power_step must be 'implicit' or 'explicit', got {self.power_step!r}")
        if self.epsilon < 0 or not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be a finite value >= 0, got {self.epsilon}")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.tau is not None and self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.rho < 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")
        if self.theta_min <= 0:
            raise ValueError(f"theta_min must be positive, got {self.theta_min}")
        if self.theta_init_factor <= 0 or self.step_factor <= 0:
            raise ValueError("theta_init_factor and step_factor must be positive")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")
        if self.zero_threshold_factor < 0:
            raise ValueError("zero_threshold_factor must be nonnegative")

    def resolved_tau(self, channels: ChannelSet, spec: SinrSpec) -> float:
        if self.tau is not None:
            return self.tau
        K, N, L = channels.h.shape
        return default_tau(K, N, L, spec)


@dataclass
class IterationTrace:
    """Per-step record of the gradient/projection loop.

    Entry ``j`` (1-based in :attr:`j`) stores the ``theta`` and ``mu`` used
    for that step, the smoothed objective at the projected point, the
    first-order progress ``|sum_k Re <delta_k, w_k^j - w_k^{j-1}>|``, the
    worst rank ratio of the projection, and the projection status.
    """

    tau: float
    eta: float
    j: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    grad_progress: list = field(default_factory=list)
    rank_ratios: list = field(default_factory=list)
    sdp_status: list = field(default_factory=list)

    def __len__(self):
        return len(self.j)

    def append(self, j, theta, mu, objective, progress, ratios, status):
        self.j.append(int(j))
        self.theta.append(float(theta))
        self.mu.append(float(mu))
        self.objective.append(float(objective))
        self.grad_progress.append(float(progress))
        self.rank_ratios.append(np.asarray(ratios, dtype=float))
        self.sdp_status.append(str(status))

    @property
    def max_rank_ratio(self) -> list:
        return [float(r.max()) if r.size else 0.0 for r in self.rank_ratios]

    def rows(self):
        for row in zip(self.j, self.theta, self.mu, self.objective, self.grad_progress,
                       self.max_rank_ratio, self.sdp_status):
            yield row

    def write_csv(self, out) -> None:
        """Write the trace to a path or text stream."""
        if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
            with open(out, "w", newline="") as fh:
                self.write_csv(fh)
            return
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for j, th, mu, obj, prog, rr, st in self.rows():
            writer.writerow([j, repr(th), repr(mu), repr(obj), repr(prog), repr(rr), st])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


@dataclass
class SolutionReport:
    """Final beamformers and summary metrics of one method on one instance."""

    method: str
    epsilon: float
    beams: Optional[BeamformerSet]
    pattern: Optional[CooperationPattern]
    backhaul_cost: int
    total_power_mw: float
    sdp_solve_count: int
    outer_iterations: int = 0
    trace: Optional[IterationTrace] = None
    max_rank_ratio: float = 0.0
    rank_fallback: bool = False
    converged: bool = True
    feasible: bool = True
    flags: list = field(default_factory=list)
    zero_threshold: float = 0.0

    @property
    def n_ms(self) -> int:
        return self.beams.n_ms if self.beams is not None else 0

    @property
    def power_dbm(self) -> float:
        return float(mw_to_dbm(self.total_power_mw))

    @property
    def avg_coop(self) -> float:
        return self.backhaul_cost / self.n_ms if self.n_ms else math.nan

    @property
    def score(self) -> float:
        """``C_B + epsilon * power`` in mW."""
        return self.backhaul_cost + self.epsilon * self.total_power_mw

    @property
    def rank1_ok(self) -> bool:
        return not self.rank_fallback


def initialize(channels: ChannelSet, spec: SinrSpec,
               options: Optional[SolverOptions] = None) -> BeamformerSet:
    """Minimum-power full-cooperation beamformers.

    Raises
    ------
    InfeasibleInstanceError
        When the targets cannot be met.
    """
    sol = solve_obp(channels, spec, options)
    if not sol.feasible:
        raise InfeasibleInstanceError(f"minimum-power problem returned status {sol.status}")
    return sol.beams


def theta_init(w0: BeamformerSet, factor: float = 2.0) -> float:
    """``factor`` times the largest entry magnitude of ``w0``."""
    peak = float(np.max(np.abs(w0.w))) if w0.w.size else 0.0
    if peak == 0.0:
        raise DegenerateStartError("starting beamformers are all zero")
    return factor * peak


def gradient_step(w: BeamformerSet, theta: float, params: AlgorithmParams,
                  rng: np.random.Generator):
    """Perturbed ascent point before projection.

    With ``power_step="explicit"`` this is ``w + mu delta - mu s w``, where
    ``s`` is drawn once per user from ``U[-rho, rho]``.  The default
    ``"implicit"`` step treats the ``-epsilon ||w||^2`` term as a proximal
    step, ``(w + mu g - mu s w) / (1 + 2 mu epsilon)`` with ``g`` the
    gradient of ``F_theta`` alone.  Both agree to first order in ``mu``;
    the explicit one diverges once ``2 mu epsilon > 2``, which happens at
    the start of most runs with ``epsilon > 0``.  For ``epsilon = 0`` they
    coincide.

    Returns
    -------
    w_bar : BeamformerSet
    delta : BeamformerSet
        Gradient at ``w``.
    mu : float
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    mu = params.step_factor * theta ** 2
    delta = smoothed_gradient(w, SmoothingState(theta, params.epsilon))
    s = rng.uniform(-params.rho, params.rho, size=w.n_ms)
    if params.power_step == "explicit":
        w_bar = w.w + mu * delta.w - mu * s[:, None, None] * w.w
    else:
        # the power term's gradient is -2 eps w; take it implicitly
        smooth = delta.w + 2.0 * params.epsilon * w.w
        w_bar = (w.w + mu * smooth - mu * s[:, None, None] * w.w) / (1.0 + 2.0 * mu * params.epsilon)
    return BeamformerSet(w_bar), delta, mu


def _progress(delta: BeamformerSet, w_new: BeamformerSet, w_old: BeamformerSet) -> float:
    # real inner product on the real/imaginary stacking
    return abs(float(np.real(np.vdot(delta.w, w_new.w - w_old.w))))


def finish_with_pattern(channels: ChannelSet, spec: SinrSpec, beams: BeamformerSet,
                        zero_factor: float, options: Optional[SolverOptions] = None,
                        rank1_tol: float = RANK1_TOL):
    """Threshold ``beams`` into a pattern and re-solve minimum power on it.

    If the thresholded pattern turns out infeasible, the pattern of every
    nonzero block is tried instead.

    Returns
    -------
    pattern, LiftedSolution, list of flags, number of SDPs solved
    """
    flags = []
    count = 0
    zeta = default_zero_threshold(beams, zero_factor)
    try:
        pattern = pattern_from_beamformers(beams, zeta)
    except InvalidSolutionError:
        pattern = None
        flags.append("empty-user-pattern")
    sol = None
    if pattern is not None:
        sol = solve_min_power_with_pattern(channels, spec, pattern, options, rank1_tol)
        count += 1
    if sol is None or not sol.feasible:
        flags.append("pattern-fallback")
        pattern = pattern_from_beamformers(beams, 0.0) if np.all(
            (block_norms(beams) > 0).any(axis=1)) else CooperationPattern.full(
                beams.n_ms, beams.n_bs, beams.antennas)
        sol = solve_min_power_with_pattern(channels, spec, pattern, options, rank1_tol)
        count += 1
    return pattern, sol, flags, count


def _metrics(beams: BeamformerSet, zero_factor: float):
    zeta = default_zero_threshold(beams, zero_factor)
    return backhaul_cost(beams, zeta), total_power(beams), zeta


def run_algorithm1(channels: ChannelSet, spec: SinrSpec,
                   params: Optional[AlgorithmParams] = None,
                   options: Optional[SolverOptions] = None) -> SolutionReport:
    """Run the full three-stage search on one instance.

    Raises
    ------
    InfeasibleInstanceError
        If the instance has no SINR-feasible beamformers.
    """
    params = params or AlgorithmParams()
    rng = np.random.default_rng(params.seed)
    tau = params.resolved_tau(channels, spec)
    trace = IterationTrace(tau=tau, eta=params.eta)
    flags: list = []

    start = solve_obp(channels, spec, options, params.rank1_tol)
    if not start.feasible:
        raise InfeasibleInstanceError(f"minimum-power problem returned status {start.status}")
    sdp_count = 1
    worst_ratio = start.max_rank_ratio
    fallback = start.rank_fallback
    w = start.beams

    theta = theta_init(w, params.theta_init_factor)
    converged = False
    aborted = False
    j = 0
    while j < params.max_outer_iterations:
        j += 1
        w_bar, delta, mu = gradient_step(w, theta, params, rng)
        if params.skip_feasible_projection and np.all(sinr_slack(channels, w_bar, spec) >= 0):
            # a feasible point is its own projection
            w_new, ratios, status = w_bar, np.zeros(w.n_ms), SKIPPED
        else:
            proj = project_feasible(channels, spec, w_bar, options, params.rank1_tol)
            sdp_count += 1
            if not proj.feasible:
                trace.append(j, theta, mu, math.nan, math.nan, proj.rank_ratios, proj.status)
                flags.append("projection-failed")
                aborted = True
                break
            worst_ratio = max(worst_ratio, proj.max_rank_ratio)
            fallback |= proj.rank_fallback
            w_new, ratios, status = proj.beams, proj.rank_ratios, proj.status
        progress = _progress(delta, w_new, w)
        obj = smoothed_objective(w_new, SmoothingState(theta, params.epsilon))
        trace.append(j, theta, mu, obj, progress, ratios, status)
        w = w_new
        if progress < tau * theta:
            theta *= params.eta
        if theta < params.theta_min:
            converged = True
            break
    if not converged and not aborted:
        flags.append("iteration-cap")

    pattern, final, extra, n = finish_with_pattern(
        channels, spec, w, params.zero_threshold_factor, options, params.rank1_tol)
    flags += extra
    sdp_count += n
    if not final.feasible:
        # cannot happen for a feasible instance; keep the run total
        flags.append("final-solve-failed")
        beams = w
    else:
        beams = final.beams
        worst_ratio = max(worst_ratio, final.max_rank_ratio)
        fallback |= final.rank_fallback
    if fallback:
        flags.append("rank-fallback")
    cb, power, zeta = _metrics(beams, params.zero_threshold_factor)
    return SolutionReport(
        method="proposed", epsilon=params.epsilon, beams=beams, pattern=pattern,
        backhaul_cost=cb, total_power_mw=power, sdp_solve_count=sdp_count,
        outer_iterations=len(trace), trace=trace, max_rank_ratio=worst_ratio,
        rank_fallback=fallback, converged=converged, feasible=final.feasible,
        flags=flags, zero_threshold=zeta)


@dataclass
class StationarityReport:
    ok: bool
    violations: list
    terminal_progress: float
    terminal_theta: float
    decrease_steps: int


def stationarity_check(trace: IterationTrace, params: Optional[AlgorithmParams] = None,
                       rtol: float = 1e-12) -> StationarityReport:
    """Check the theta-update rule and the first-order progress along a trace.

    At every step where ``theta`` shrank afterwards the progress must be
    below ``tau * theta``; where it stayed, at least that much.  Shrinks
    must be by exactly ``eta``.  For the last step the rule itself decides
    whether it was a decrease.
    """
    tau = trace.tau if params is None or params.tau is None else params.tau
    eta = trace.eta if params is None else params.eta
    violations = []
    terminal = math.nan
    terminal_theta = math.nan
    decreases = 0
    n = len(trace)
    for i in range(n):
        th, prog = trace.theta[i], trace.grad_progress[i]
        if i + 1 < n:
            nxt = trace.theta[i + 1]
            if math.isclose(nxt, th, rel_tol=rtol):
                decreased = False
            elif math.isclose(nxt, eta * th, rel_tol=1e-9):
                decreased = True
            else:
                violations.append((trace.j[i], "theta changed by a factor other than eta"))
                continue
        else:
            decreased = prog < tau * th
        if decreased:
            decreases += 1
            terminal, terminal_theta = prog, th
            if not prog < tau * th:
                violations.append((trace.j[i], "theta shrank although progress >= tau*theta"))
        elif not prog >= tau * th:
            violations.append((trace.j[i], "theta kept although progress < tau*theta"))
    return StationarityReport(ok=not violations, violations=violations,
                              terminal_progress=terminal, terminal_theta=terminal_theta,
                              decrease_steps=decreases)

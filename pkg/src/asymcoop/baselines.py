"""Reference methods that share the SDP core with the proposed search.

* :func:`full_search` scores every cooperation pattern and returns the
  best one.  It is exponential in ``K N`` and only meant for tiny networks.
* :func:`iterative_link_removal` starts from full cooperation and switches
  off the weakest link while the targets remain reachable.
* :func:`reweighted_group_l1` solves a short sequence of block-weighted
  power problems with reciprocal-power weights, then thresholds.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .algorithm import InfeasibleInstanceError, SolutionReport, finish_with_pattern
from .conic import SolverOptions
from .model import (
    ZERO_THRESHOLD_FACTOR,
    ChannelSet,
    CooperationPattern,
    InvalidSolutionError,
    SinrSpec,
    backhaul_cost,
    block_norms,
    default_zero_threshold,
    total_power,
)
from .subproblems import (
    FEAS_TOL,
    RANK1_TOL,
    solve_min_power_with_pattern,
    solve_obp,
    solve_weighted_power,
)

__all__ = [
    "BaselineParams",
    "BudgetExceededError",
    "UnavailableMethodError",
    "FULL_SEARCH_LIMIT",
    "UNAVAILABLE_METHODS",
    "pattern_count",
    "full_search",
    "full_search_many",
    "iterative_link_removal",
    "reweighted_group_l1",
]

FULL_SEARCH_LIMIT = 100_000
UNAVAILABLE_METHODS = ("baseline1", "baseline2", "baseline3")


class BudgetExceededError(RuntimeError):
    """Exhaustive enumeration would need more solves than allowed."""


class UnavailableMethodError(NotImplementedError):
    """The requested method is not implemented."""


@dataclass(frozen=True)
class BaselineParams:
    """Knobs of the baseline methods.

    ``reweight_floor`` is in mW.  ``removal_feastol`` is the relative SINR
    slack a link-removal re-solve must keep to count as feasible.
    """

    epsilon: float = 0.0
    reweight_iterations: int = 5
    reweight_floor: float = 1e-8
    removal_feastol: float = FEAS_TOL
    zero_threshold_factor: float = ZERO_THRESHOLD_FACTOR
    rank1_tol: float = RANK1_TOL

    def __post_init__(self):
        if self.epsilon < 0 or not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be a finite value >= 0, got {self.epsilon}")
        if self.reweight_iterations < 1:
            raise ValueError("reweight_iterations must be at least 1")
        if self.reweight_floor <= 0:
            raise ValueError("reweight_floor must be positive")


def pattern_count(n_ms: int, n_bs: int) -> int:
    """Number of patterns in which every user keeps at least one BS: ``(2^N - 1)^K``."""
    return (2 ** n_bs - 1) ** n_ms


def _measured_cost(beams, pattern: CooperationPattern, zeta: float) -> int:
    """``C_B`` under the zero rule; the pattern's own count if a user falls below ``zeta``."""
    try:
        return backhaul_cost(beams, zeta)
    except InvalidSolutionError:
        # one user needs so much power that the others' blocks all look like zero
        return pattern.backhaul_cost()


def _report(method, epsilon, beams, pattern, count, zero_factor, **kw) -> SolutionReport:
    zeta = default_zero_threshold(beams, zero_factor)
    return SolutionReport(method=method, epsilon=epsilon, beams=beams, pattern=pattern,
                          backhaul_cost=_measured_cost(beams, pattern, zeta),
                          total_power_mw=total_power(beams), sdp_solve_count=count,
                          zero_threshold=zeta, **kw)


def _enumerate(channels: ChannelSet, spec: SinrSpec, options, limit):
    K, N = channels.n_ms, channels.n_bs
    total = pattern_count(K, N)
    if total > limit:
        raise BudgetExceededError(
            f"full search needs {total} SDP solves for N={N}, K={K} (limit {limit}); "
            "reduce the network size or use another method")
    subsets = [np.array([(s >> n) & 1 for n in range(N)], dtype=bool) for s in range(1, 2 ** N)]
    for choice in itertools.product(subsets, repeat=K):
        pattern = CooperationPattern(np.array(choice), channels.antennas)
        yield pattern, solve_min_power_with_pattern(channels, spec, pattern, options)


def full_search_many(channels: ChannelSet, spec: SinrSpec, epsilons: Sequence[float],
                     options: Optional[SolverOptions] = None,
                     limit: int = FULL_SEARCH_LIMIT,
                     zero_threshold_factor: float = ZERO_THRESHOLD_FACTOR) -> list:
    """:func:`full_search` for several weights, sharing the pattern solves."""
    total = pattern_count(channels.n_ms, channels.n_bs)
    best = [None] * len(epsilons)
    fallback, worst = False, 0.0
    for pattern, sol in _enumerate(channels, spec, options, limit):
        if not sol.feasible:
            continue
        fallback |= sol.rank_fallback
        worst = max(worst, sol.max_rank_ratio)
        zeta = default_zero_threshold(sol.beams, zero_threshold_factor)
        cb, power = _measured_cost(sol.beams, pattern, zeta), total_power(sol.beams)
        for i, eps in enumerate(epsilons):
            # equal scores go to the lower-power pattern
            key = (cb + eps * power, power)
            if best[i] is None or key < best[i][0]:
                best[i] = (key, pattern, sol)
    if best and best[0] is None:
        raise InfeasibleInstanceError("no cooperation pattern is feasible")
    return [_report("fullsearch", eps, sol.beams, pattern, total, zero_threshold_factor,
                    max_rank_ratio=worst, rank_fallback=fallback)
            for eps, (_, pattern, sol) in zip(epsilons, best)]


def full_search(channels: ChannelSet, spec: SinrSpec, epsilon: float = 0.0,
                options: Optional[SolverOptions] = None,
                limit: int = FULL_SEARCH_LIMIT,
                zero_threshold_factor: float = ZERO_THRESHOLD_FACTOR) -> SolutionReport:
    """Exhaustive search over all cooperation patterns.

    Each of the ``(2^N - 1)^K`` patterns is solved for minimum power;
    feasible ones are scored by ``C_B + epsilon * power`` with ``C_B``
    measured on the solution.  Ties go to the pattern with lower power,
    then to the first in enumeration order.

    Raises
    ------
    BudgetExceededError
        If more than ``limit`` patterns would be enumerated.
    InfeasibleInstanceError
        If no pattern is feasible.
    """
    return full_search_many(channels, spec, [epsilon], options, limit, zero_threshold_factor)[0]


def _removal_ok(sol, tol) -> bool:
    return sol.feasible and bool(np.all(sol.sinr_margin >= -tol))


def iterative_link_removal(channels: ChannelSet, spec: SinrSpec,
                           params: Optional[BaselineParams] = None,
                           options: Optional[SolverOptions] = None) -> SolutionReport:
    """Greedy removal of the weakest link, starting from full cooperation.

    The candidate is the active block with the smallest norm among users
    that still have more than one BS; ties go to the lowest BS index, then
    the lowest user index.  A removal that makes the targets unreachable is
    undone and the link is locked.
    """
    params = params or BaselineParams()
    start = solve_obp(channels, spec, options, params.rank1_tol)
    if not start.feasible:
        raise InfeasibleInstanceError(f"minimum-power problem returned status {start.status}")
    K, N = channels.n_ms, channels.n_bs
    count = 1
    beams = start.beams
    fallback, worst = start.rank_fallback, start.max_rank_ratio
    active = np.ones((K, N), dtype=bool)
    locked = np.zeros((K, N), dtype=bool)
    removals = []
    while True:
        norms = block_norms(beams)
        free = active & ~locked & (active.sum(axis=1) > 1)[:, None]
        if not free.any():
            break
        ks, ns = np.nonzero(free)
        order = sorted(zip(norms[ks, ns], ns, ks))
        _, n, k = order[0]
        trial = active.copy()
        trial[k, n] = False
        pattern = CooperationPattern(trial, channels.antennas)
        sol = solve_min_power_with_pattern(channels, spec, pattern, options, params.rank1_tol)
        count += 1
        if _removal_ok(sol, params.removal_feastol):
            active = trial
            beams = sol.beams
            fallback |= sol.rank_fallback
            worst = max(worst, sol.max_rank_ratio)
            removals.append((int(k), int(n)))
        else:
            locked[k, n] = True
    report = _report("b4", params.epsilon, beams, CooperationPattern(active, channels.antennas),
                     count, params.zero_threshold_factor, max_rank_ratio=worst,
                     rank_fallback=fallback, outer_iterations=len(removals))
    report.flags.append(f"removals={len(removals)}")
    return report


def reweighted_group_l1(channels: ChannelSet, spec: SinrSpec,
                        params: Optional[BaselineParams] = None,
                        options: Optional[SolverOptions] = None) -> SolutionReport:
    """Reciprocal-power reweighting of per-block powers, then a pattern re-solve.

    Iteration ``t`` minimizes ``sum beta_{n,k} tr(E_n W_k) + epsilon sum tr(W_k)``
    with ``beta = 1 / (previous block power + floor)`` and ``beta = 1`` at
    the start.
    """
    params = params or BaselineParams()
    K, N = channels.n_ms, channels.n_bs
    beta = np.ones((K, N))
    count = 0
    fallback, worst = False, 0.0
    sol = None
    for _ in range(params.reweight_iterations):
        sol = solve_weighted_power(channels, spec, beta + params.epsilon, options, params.rank1_tol)
        count += 1
        if not sol.feasible:
            raise InfeasibleInstanceError(f"weighted power problem returned status {sol.status}")
        fallback |= sol.rank_fallback
        worst = max(worst, sol.max_rank_ratio)
        powers = _block_powers(sol.matrices, N, channels.antennas)
        beta = 1.0 / (powers + params.reweight_floor)
    pattern, final, flags, n = finish_with_pattern(
        channels, spec, sol.beams, params.zero_threshold_factor, options, params.rank1_tol)
    count += n
    if not final.feasible:
        raise InfeasibleInstanceError("pattern re-solve failed")
    report = _report("b5", params.epsilon, final.beams, pattern, count,
                     params.zero_threshold_factor,
                     max_rank_ratio=max(worst, final.max_rank_ratio),
                     rank_fallback=fallback or final.rank_fallback,
                     outer_iterations=params.reweight_iterations)
    report.flags.extend(flags)
    return report


def _block_powers(matrices, n_bs: int, antennas: int) -> np.ndarray:
    """``tr(E_n W_k)`` for each user and BS, clipped at zero."""
    d = np.array([np.real(np.diag(W)) for W in matrices])
    return np.clip(d.reshape(len(matrices), n_bs, antennas).sum(axis=2), 0.0, None)

"""Lifted SDP forms of the power-minimization and projection subproblems.

Three relaxations share one pattern: lift each beamformer ``w_k`` to a PSD
matrix, solve the SDP with :mod:`asymcoop.conic`, and read a rank-one
beamformer back out.

* ``OBP``: minimum total power under the SINR targets, full cooperation.
* ``OBP-AC``: the same with a fixed cooperation pattern; masked blocks are
  pinned to zero through ``tr(M_k W_k) = 0``.
* ``AP``: Euclidean projection of a point ``w_bar`` onto the SINR-feasible
  set, homogenized with ``w~_k = [1; w_k]`` so it becomes an SDP over
  ``(LN+1) x (LN+1)`` blocks.

Builders rescale the data so the solver sees quantities of order one.
Each user's SINR row is divided by its noise power and the matrix
variables are expressed in units of ``p0`` mW, where ``p0`` is a typical
single-user power requirement; ``SdpProblem.scale`` records ``p0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import conic
from .conic import EQ, GE, Constraint, SdpProblem, SolverOptions, Status
from .model import BeamformerSet, ChannelSet, CooperationPattern, SinrSpec, sinr_slack

__all__ = [
    "RANK1_TOL",
    "FEAS_TOL",
    "DegenerateExtractionError",
    "Extraction",
    "LiftedSolution",
    "HomogenizationData",
    "power_unit",
    "homogenization",
    "build_obp_sdp",
    "build_obp_ac_sdp",
    "build_ap_sdp",
    "build_weighted_power_sdp",
    "solve_weighted_power",
    "extract_rank1",
    "solve_obp",
    "solve_min_power_with_pattern",
    "project_feasible",
    "restore_feasibility",
]

RANK1_TOL = 1e-6
FEAS_TOL = 1e-6
# The projection objective is a squared distance, so a gap of t pins the
# point only to about sqrt(t); projections are solved this much tighter.
AP_TOLERANCE_FACTOR = 1e-2


class DegenerateExtractionError(ValueError):
    """The lifted matrix has no positive eigenvalue."""


class Extraction(NamedTuple):
    vector: np.ndarray
    rank_ratio: float
    rank_one: bool


@dataclass
class HomogenizationData:
    """Matrices of the homogenized projection objective for one user."""

    A: np.ndarray  # [[w'w, -w^H], [-w, I]]
    H_tilde: np.ndarray  # h h^H bordered by a zero row and column
    I00: np.ndarray  # unit top-left corner


@dataclass
class LiftedSolution:
    status: Status
    kind: str
    matrices: list = field(default_factory=list)
    rank_ratios: np.ndarray = None
    beams: Optional[BeamformerSet] = None
    sinr_margin: Optional[np.ndarray] = None
    objective: float = np.nan
    result: Optional[conic.SdpResult] = None
    rank_fallback: bool = False

    @property
    def feasible(self) -> bool:
        return self.status is Status.OPTIMAL and self.beams is not None

    @property
    def max_rank_ratio(self) -> float:
        if self.rank_ratios is None or len(self.rank_ratios) == 0:
            return np.nan
        return float(np.max(self.rank_ratios))


def power_unit(channels: ChannelSet, spec: SinrSpec, w_bar: Optional[BeamformerSet] = None) -> float:
    """Typical per-user power (mW) used to normalize the lifted variables."""
    gain = np.sum(np.abs(channels.vectors()) ** 2, axis=1) / spec.noise
    need = spec.targets / gain
    pos = need[need > 0]
    if pos.size:
        unit = float(np.median(pos))
    elif w_bar is not None and np.any(w_bar.w != 0):
        unit = float(np.mean(np.sum(np.abs(w_bar.vectors()) ** 2, axis=1)))
    else:
        unit = float(1.0 / np.median(gain))
    return unit


def _scaled_grams(channels: ChannelSet, spec: SinrSpec, unit: float) -> list:
    v = channels.vectors()
    return [np.outer(v[k], v[k].conj()) * (unit / spec.noise[k]) for k in range(channels.n_ms)]


def _sinr_rows(grams, spec: SinrSpec, pad: int = 0) -> list:
    """``tr(H_k W_k) - gamma_k sum_{m != k} tr(H_k W_m) >= gamma_k`` in scaled units."""
    K = len(grams)
    rows = []
    for k in range(K):
        g = grams[k]
        if pad:
            g = np.pad(g, ((pad, 0), (pad, 0)))
        coeffs = {k: g}
        if spec.targets[k] > 0:
            for m in range(K):
                if m != k:
                    coeffs[m] = -spec.targets[k] * g
        rows.append(Constraint(coeffs, spec.targets[k], GE))
    return rows


def _check(channels: ChannelSet, spec: SinrSpec):
    if len(spec) != channels.n_ms:
        raise ValueError(f"{len(spec)} SINR targets for {channels.n_ms} users")


def build_obp_sdp(channels: ChannelSet, spec: SinrSpec, unit: Optional[float] = None) -> SdpProblem:
    """Relaxed full-cooperation power minimization: minimize ``sum_k tr(W_k)``."""
    _check(channels, spec)
    unit = power_unit(channels, spec) if unit is None else unit
    n = channels.n_bs * channels.antennas
    grams = _scaled_grams(channels, spec, unit)
    return SdpProblem(block_sizes=[n] * channels.n_ms,
                      objective=[np.eye(n, dtype=complex)] * channels.n_ms,
                      constraints=_sinr_rows(grams, spec), name="obp-sdp", scale=unit)


def build_obp_ac_sdp(channels: ChannelSet, spec: SinrSpec, pattern: CooperationPattern,
                     unit: Optional[float] = None) -> SdpProblem:
    """Relaxed power minimization with ``tr(M_k W_k) = 0`` for the masked blocks."""
    if pattern.active.shape != (channels.n_ms, channels.n_bs):
        raise ValueError("cooperation pattern does not match the channel dimensions")
    problem = build_obp_sdp(channels, spec, unit)
    for k in range(channels.n_ms):
        m = np.repeat((~pattern.active[k]).astype(float), channels.antennas)
        if m.any():
            problem.constraints.append(Constraint({k: np.diag(m).astype(complex)}, 0.0, EQ))
    problem.name = "obp-ac-sdp"
    return problem


def build_weighted_power_sdp(channels: ChannelSet, spec: SinrSpec, weights,
                             unit: Optional[float] = None) -> SdpProblem:
    """Minimize ``sum_k sum_n weights[k, n] tr(E_n W_k)`` under the SINR rows.

    ``E_n`` selects the diagonal block of BS ``n``; uniform weights give
    the plain power objective.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (channels.n_ms, channels.n_bs):
        raise ValueError(f"weights must have shape {(channels.n_ms, channels.n_bs)}")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be positive and finite")
    problem = build_obp_sdp(channels, spec, unit)
    problem.objective = [np.diag(np.repeat(weights[k], channels.antennas)).astype(complex)
                         for k in range(channels.n_ms)]
    problem.name = "weighted-power-sdp"
    return problem


def homogenization(w_bar_k: np.ndarray, h_k: np.ndarray) -> HomogenizationData:
    """Bordered matrices with ``[1, w^H] A [1; w] = ||w - w_bar||^2``."""
    wb = np.asarray(w_bar_k, dtype=complex).reshape(-1)
    h = np.asarray(h_k, dtype=complex).reshape(-1)
    n = len(wb)
    A = np.zeros((n + 1, n + 1), dtype=complex)
    A[0, 0] = np.vdot(wb, wb).real
    A[0, 1:] = -wb.conj()
    A[1:, 0] = -wb
    A[1:, 1:] = np.eye(n)
    Ht = np.zeros((n + 1, n + 1), dtype=complex)
    Ht[1:, 1:] = np.outer(h, h.conj())
    I00 = np.zeros((n + 1, n + 1))
    I00[0, 0] = 1.0
    return HomogenizationData(A=A, H_tilde=Ht, I00=I00)


def build_ap_sdp(channels: ChannelSet, spec: SinrSpec, w_bar: BeamformerSet,
                 unit: Optional[float] = None) -> SdpProblem:
    """Homogenized projection of ``w_bar`` onto the SINR-feasible set."""
    _check(channels, spec)
    if w_bar.w.shape != channels.h.shape:
        raise ValueError("w_bar does not match the channel dimensions")
    unit = power_unit(channels, spec, w_bar) if unit is None else unit
    n = channels.n_bs * channels.antennas
    grams = _scaled_grams(channels, spec, unit)
    wb = w_bar.vectors() / np.sqrt(unit)
    objective = []
    corner = np.zeros((n + 1, n + 1), dtype=complex)
    corner[0, 0] = 1.0
    rows = _sinr_rows(grams, spec, pad=1)
    for k in range(channels.n_ms):
        objective.append(homogenization(wb[k], np.zeros(n)).A)
        rows.append(Constraint({k: corner}, 1.0, EQ))
    return SdpProblem(block_sizes=[n + 1] * channels.n_ms, objective=objective,
                      constraints=rows, name="ap-sdp", scale=unit)


def extract_rank1(W: np.ndarray, kind: str = "plain", rank1_tol: float = RANK1_TOL) -> Extraction:
    """Rank-one beamformer from a lifted PSD matrix.

    ``plain``: ``sqrt(lambda_1) u_1`` with the global phase chosen so the
    largest-magnitude entry is real and nonnegative.  ``homogenized``: the
    first column of ``W~ / W~[0, 0]`` without its corner, which is exact
    for ``W~ = [1; w][1; w]^H``; when the matrix is not rank one the
    principal eigenvector is normalized to a unit leading entry instead.
    ``rank_ratio`` is ``lambda_2 / lambda_1``.
    """
    W = np.asarray(W)
    W = 0.5 * (W + W.conj().T)
    lam, U = np.linalg.eigh(W)
    l1 = lam[-1]
    if not l1 > 0:
        raise DegenerateExtractionError("lifted matrix has no positive eigenvalue")
    ratio = float(np.clip(lam[-2] / l1, 0.0, 1.0)) if len(lam) > 1 else 0.0
    rank_one = ratio <= rank1_tol
    if kind == "plain":
        v = np.sqrt(l1) * U[:, -1]
        j = int(np.argmax(np.abs(v)))
        if v[j] != 0:
            v = v * (abs(v[j]) / v[j])
        return Extraction(v, ratio, rank_one)
    if kind == "homogenized":
        if rank_one and W[0, 0].real > 0:
            return Extraction(W[1:, 0] / W[0, 0].real, ratio, True)
        u = U[:, -1]
        if abs(u[0]) > 1e-8:
            return Extraction(u[1:] / u[0], ratio, rank_one)
        return Extraction(np.sqrt(l1) * u[1:], ratio, rank_one)
    raise ValueError(f"unknown extraction kind {kind!r}")


def restore_feasibility(channels: ChannelSet, spec: SinrSpec, beams: BeamformerSet):
    """Scale all beams by the smallest common factor ``c >= 1`` that meets every target.

    Returns ``(beams, ok)``; ``ok`` is False when no scaling can help
    because interference dominates some user's signal.
    """
    g = np.abs(channels.vectors().conj() @ beams.vectors().T) ** 2
    sig = np.diag(g)
    interf = g.sum(axis=1) - sig
    excess = sig - spec.targets * interf
    need = spec.targets > 0
    if np.any(excess[need] <= 0):
        return beams, False
    c2 = np.max(spec.targets[need] * spec.noise[need] / excess[need], initial=0.0)
    c = np.sqrt(max(1.0, c2))
    return BeamformerSet(beams.w * c), True


def _finish(problem: SdpProblem, result: conic.SdpResult, channels: ChannelSet, spec: SinrSpec,
            kind: str, rank1_tol: float) -> LiftedSolution:
    unit = problem.scale
    if result.status is not Status.OPTIMAL:
        return LiftedSolution(status=result.status, kind=kind, result=result)
    K, N, L = channels.h.shape
    vecs = np.zeros((K, N * L), dtype=complex)
    ratios = np.zeros(K)
    mats = []
    fallback = False
    hkind = "homogenized" if kind == "ap" else "plain"
    for k, Wk in enumerate(result.X):
        if np.allclose(Wk, 0) or np.real(np.trace(Wk)) <= 0:
            ratios[k] = 0.0
            mats.append(Wk * unit)
            continue
        ext = extract_rank1(Wk, hkind, rank1_tol)
        ratios[k] = ext.rank_ratio
        fallback |= not ext.rank_one
        vecs[k] = ext.vector * np.sqrt(unit)
        if kind == "ap":
            d = np.concatenate([[1.0], np.full(N * L, np.sqrt(unit))])
            mats.append(Wk * np.outer(d, d))
        else:
            mats.append(Wk * unit)
    beams = BeamformerSet(vecs.reshape(K, N, L))
    if fallback:
        beams, ok = restore_feasibility(channels, spec, beams)
        if not ok:
            return LiftedSolution(status=Status.INFEASIBLE, kind=kind, matrices=mats,
                                  rank_ratios=ratios, result=result, rank_fallback=True)
    return LiftedSolution(status=result.status, kind=kind, matrices=mats, rank_ratios=ratios,
                          beams=beams, sinr_margin=sinr_slack(channels, beams, spec),
                          objective=result.objective * unit, result=result,
                          rank_fallback=fallback)


def solve_obp(channels: ChannelSet, spec: SinrSpec, options: Optional[SolverOptions] = None,
              rank1_tol: float = RANK1_TOL) -> LiftedSolution:
    problem = build_obp_sdp(channels, spec)
    return _finish(problem, conic.solve(problem, options), channels, spec, "obp", rank1_tol)


def solve_min_power_with_pattern(channels: ChannelSet, spec: SinrSpec, pattern: CooperationPattern,
                                 options: Optional[SolverOptions] = None,
                                 rank1_tol: float = RANK1_TOL) -> LiftedSolution:
    """Minimum-power beamformers restricted to ``pattern``; masked blocks are exactly zero."""
    problem = build_obp_ac_sdp(channels, spec, pattern)
    sol = _finish(problem, conic.solve(problem, options), channels, spec, "obp-ac", rank1_tol)
    if sol.beams is not None:
        w = sol.beams.w.copy()
        w[~pattern.active] = 0.0
        sol.beams = BeamformerSet(w)
    return sol


def solve_weighted_power(channels: ChannelSet, spec: SinrSpec, weights,
                         options: Optional[SolverOptions] = None,
                         rank1_tol: float = RANK1_TOL) -> LiftedSolution:
    """Solve :func:`build_weighted_power_sdp`; ``objective`` is reported in weighted mW."""
    problem = build_weighted_power_sdp(channels, spec, weights)
    return _finish(problem, conic.solve(problem, options), channels, spec, "weighted", rank1_tol)


def project_feasible(channels: ChannelSet, spec: SinrSpec, w_bar: BeamformerSet,
                     options: Optional[SolverOptions] = None,
                     rank1_tol: float = RANK1_TOL) -> LiftedSolution:
    """Closest SINR-feasible beamformer set to ``w_bar`` (squared Euclidean distance).

    Solved at ``AP_TOLERANCE_FACTOR`` times the requested tolerance.
    """
    options = options or SolverOptions()
    options = replace(options, tolerance=options.tolerance * AP_TOLERANCE_FACTOR)
    problem = build_ap_sdp(channels, spec, w_bar)
    return _finish(problem, conic.solve(problem, options), channels, spec, "ap", rank1_tol)

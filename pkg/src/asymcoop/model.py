"""System-model quantities for downlink multicell beamforming.

Arrays follow one layout throughout the package: channels and beamformers
are complex arrays of shape ``(K, N, L)`` -- user, base station, antenna.
The aggregate vector of user ``k`` is the row-major flattening
``x[k].reshape(N * L)``, i.e. ``[w_1k; w_2k; ...; w_Nk]``.

Powers are in mW; channel entries are linear amplitude gains.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "InvalidSolutionError",
    "NetworkInstance",
    "ChannelSet",
    "SinrSpec",
    "BeamformerSet",
    "CooperationPattern",
    "SmoothingState",
    "sinr",
    "sinr_all",
    "sinr_slack",
    "total_power",
    "block_norms",
    "default_zero_threshold",
    "mixed_norm_l02",
    "backhaul_cost",
    "smoothed_objective",
    "smoothed_gradient",
    "pattern_from_beamformers",
    "mw_to_dbm",
    "dbm_to_mw",
    "db_to_linear",
]

ZERO_THRESHOLD_FACTOR = 1e-3


class InvalidSolutionError(ValueError):
    """A beamformer set that cannot serve every user."""


def mw_to_dbm(p):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(p)


def dbm_to_mw(p_dbm):
    return 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class NetworkInstance:
    """Node layout; coordinates in km inside ``[0, width] x [0, height]``."""

    bs_positions: np.ndarray
    ms_positions: np.ndarray
    antennas_per_bs: int = 2
    area: tuple = (1.0, 1.0)

    def __post_init__(self):
        bs = np.asarray(self.bs_positions, dtype=float).reshape(-1, 2)
        ms = np.asarray(self.ms_positions, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "bs_positions", bs)
        object.__setattr__(self, "ms_positions", ms)
        if len(bs) < 1 or len(ms) < 1:
            raise ValueError("a network needs at least one BS and one MS")
        if self.antennas_per_bs < 1:
            raise ValueError("antennas_per_bs must be >= 1")
        w, h = self.area
        for pts in (bs, ms):
            if np.any(pts < 0) or np.any(pts[:, 0] > w) or np.any(pts[:, 1] > h):
                raise ValueError("node outside the configured area")

    @property
    def n_bs(self) -> int:
        return len(self.bs_positions)

    @property
    def n_ms(self) -> int:
        return len(self.ms_positions)

    def distances(self) -> np.ndarray:
        """BS-MS distances in km, shape ``(K, N)``."""
        diff = self.ms_positions[:, None, :] - self.bs_positions[None, :, :]
        return np.sqrt(np.sum(diff ** 2, axis=-1))


@dataclass(frozen=True)
class ChannelSet:
    """Per-user aggregate channels ``h_k``; ``h`` has shape ``(K, N, L)``."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.ndim != 3:
            raise ValueError(f"channels must have shape (K, N, L), got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel entries must be finite")
        if np.any(np.linalg.norm(h.reshape(len(h), -1), axis=1) == 0):
            raise ValueError("every user needs a nonzero channel")
        object.__setattr__(self, "h", h)

    @property
    def n_ms(self) -> int:
        return self.h.shape[0]

    @property
    def n_bs(self) -> int:
        return self.h.shape[1]

    @property
    def antennas(self) -> int:
        return self.h.shape[2]

    def vectors(self) -> np.ndarray:
        return self.h.reshape(self.n_ms, -1)

    def gram(self, k: int) -> np.ndarray:
        """``H_k = h_k h_k^H``."""
        v = self.h[k].reshape(-1)
        return np.outer(v, v.conj())


@dataclass(frozen=True)
class SinrSpec:
    targets: np.ndarray  # linear gamma_k
    noise: np.ndarray  # sigma_k^2 in mW

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.targets, dtype=float))
        n = np.atleast_1d(np.asarray(self.noise, dtype=float))
        if t.shape != n.shape:
            raise ValueError("targets and noise powers must have equal length")
        if np.any(t < 0):
            raise ValueError("SINR targets must be nonnegative")
        if np.any(n <= 0):
            raise ValueError("noise powers must be positive")
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "noise", n)

    @classmethod
    def uniform(cls, n_ms: int, gamma_db: float, noise_dbm: float) -> "SinrSpec":
        return cls(np.full(n_ms, float(db_to_linear(gamma_db))),
                   np.full(n_ms, float(dbm_to_mw(noise_dbm))))

    def __len__(self):
        return len(self.targets)


@dataclass(frozen=True)
class BeamformerSet:
    """Per-user aggregate beamformers ``w_k``; ``w`` has shape ``(K, N, L)``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=complex)
        if w.ndim != 3:
            raise ValueError(f"beamformers must have shape (K, N, L), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("beamformer entries must be finite")
        object.__setattr__(self, "w", w)

    @classmethod
    def from_vectors(cls, vectors, n_bs: int) -> "BeamformerSet":
        v = np.asarray(vectors, dtype=complex)
        return cls(v.reshape(v.shape[0], n_bs, -1))

    @classmethod
    def zeros(cls, n_ms, n_bs, antennas) -> "BeamformerSet":
        return cls(np.zeros((n_ms, n_bs, antennas), dtype=complex))

    @property
    def n_ms(self) -> int:
        return self.w.shape[0]

    @property
    def n_bs(self) -> int:
        return self.w.shape[1]

    @property
    def antennas(self) -> int:
        return self.w.shape[2]

    def vectors(self) -> np.ndarray:
        return self.w.reshape(self.n_ms, -1)

    def __mul__(self, c) -> "BeamformerSet":
        return BeamformerSet(self.w * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class CooperationPattern:
    """Which BSs hold each user's data.

    ``active[k, n]`` is True when BS ``n`` serves user ``k`` (``n`` in
    ``Q_k``).  The mask matrices follow the opposite convention: a 1 on
    the diagonal of ``M_k`` marks a block that is switched off.
    """

    active: np.ndarray
    antennas: int = 1

    def __post_init__(self):
        a = np.asarray(self.active, dtype=bool)
        if a.ndim != 2:
            raise ValueError("active must be a (K, N) boolean array")
        if not np.all(a.any(axis=1)):
            raise InvalidSolutionError("every user needs at least one active BS")
        object.__setattr__(self, "active", a)

    @classmethod
    def full(cls, n_ms, n_bs, antennas=1) -> "CooperationPattern":
        return cls(np.ones((n_ms, n_bs), dtype=bool), antennas)

    @classmethod
    def from_active_sets(cls, sets, n_bs, antennas=1) -> "CooperationPattern":
        a = np.zeros((len(sets), n_bs), dtype=bool)
        for k, q in enumerate(sets):
            a[k, sorted(q)] = True
        return cls(a, antennas)

    @property
    def n_ms(self) -> int:
        return self.active.shape[0]

    @property
    def n_bs(self) -> int:
        return self.active.shape[1]

    @property
    def active_sets(self) -> list:
        return [frozenset(np.flatnonzero(row).tolist()) for row in self.active]

    def mask_vector(self, k: int) -> np.ndarray:
        """Diagonal of ``M_k``: ``m_k`` repeated over the antennas of each BS."""
        return np.repeat((~self.active[k]).astype(float), self.antennas)

    def mask(self, k: int) -> np.ndarray:
        return np.diag(self.mask_vector(k))

    @property
    def masks(self) -> list:
        return [self.mask(k) for k in range(self.n_ms)]

    def link_count(self) -> int:
        return int(self.active.sum())

    def backhaul_cost(self) -> int:
        return self.link_count() - self.n_ms

    def key(self) -> tuple:
        return tuple(map(tuple, self.active.astype(int)))


@dataclass(frozen=True)
class SmoothingState:
    theta: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")


def _check_dims(channels: ChannelSet, beams: BeamformerSet, spec: Optional[SinrSpec] = None):
    if channels.h.shape != beams.w.shape:
        raise ValueError(
            f"channel shape {channels.h.shape} does not match beamformer shape {beams.w.shape}")
    if spec is not None and len(spec) != channels.n_ms:
        raise ValueError(f"{len(spec)} SINR targets for {channels.n_ms} users")


def _gains(channels: ChannelSet, beams: BeamformerSet) -> np.ndarray:
    """``G[k, m] = |h_k^H w_m|^2``."""
    return np.abs(channels.vectors().conj() @ beams.vectors().T) ** 2


def sinr(channels: ChannelSet, beams: BeamformerSet, spec: SinrSpec, k: int) -> float:
    """SINR of user ``k`` (0-based)."""
    _check_dims(channels, beams, spec)
    if not 0 <= k < channels.n_ms:
        raise IndexError(f"user index {k} out of range")
    g = _gains(channels, beams)[k]
    interference = g.sum() - g[k]
    return float(g[k] / (interference + spec.noise[k]))


def sinr_all(channels: ChannelSet, beams: BeamformerSet, spec: SinrSpec) -> np.ndarray:
    _check_dims(channels, beams, spec)
    g = _gains(channels, beams)
    sig = np.diag(g)
    return sig / (g.sum(axis=1) - sig + spec.noise)


def sinr_slack(channels: ChannelSet, beams: BeamformerSet, spec: SinrSpec) -> np.ndarray:
    """Relative SINR margin ``(SINR_k - gamma_k) / gamma_k``; ``inf`` when ``gamma_k = 0``."""
    s = sinr_all(channels, beams, spec)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (s - spec.targets) / spec.targets
    out[spec.targets == 0] = np.inf
    return out


def total_power(beams: BeamformerSet) -> float:
    return float(np.sum(np.abs(beams.w) ** 2))


def block_norms(beams: BeamformerSet) -> np.ndarray:
    """``||w_{n,k}||_2`` as a ``(K, N)`` array."""
    return np.linalg.norm(beams.w, axis=2)


def default_zero_threshold(beams: BeamformerSet, factor: float = ZERO_THRESHOLD_FACTOR) -> float:
    """Relative zero test: ``factor * max_{n,k} ||w_{n,k}||``."""
    norms = block_norms(beams)
    return factor * float(norms.max()) if norms.size else 0.0


def mixed_norm_l02(wk, zero_threshold: float = 0.0) -> int:
    """Number of per-BS blocks of one user's beamformer above ``zero_threshold``.

    ``wk`` is an ``(N, L)`` array of blocks.
    """
    if zero_threshold < 0:
        raise ValueError("zero_threshold must be nonnegative")
    wk = np.asarray(wk)
    if wk.ndim == 1:
        wk = wk[:, None]
    return int(np.count_nonzero(np.linalg.norm(wk, axis=-1) > zero_threshold))


def backhaul_cost(beams: BeamformerSet, zero_threshold: Optional[float] = None) -> int:
    """``C_B = sum_k ||w_k||_{0,2} - K``."""
    if zero_threshold is None:
        zero_threshold = default_zero_threshold(beams)
    counts = [mixed_norm_l02(beams.w[k], zero_threshold) for k in range(beams.n_ms)]
    if min(counts) == 0:
        raise InvalidSolutionError(
            f"user {counts.index(0)} has no block above the zero threshold {zero_threshold:g}")
    return sum(counts) - beams.n_ms


def smoothed_objective(beams: BeamformerSet, state: SmoothingState) -> float:
    """``F_theta(w) - epsilon * sum_k ||w_k||^2``.

    ``F_theta`` sums ``exp(-||w_{n,k}||^2 / (2 theta^2))`` over all blocks,
    so ``K*N - F_theta`` approaches the number of nonzero blocks as
    ``theta -> 0``.
    """
    sq = np.sum(np.abs(beams.w) ** 2, axis=2)
    f = np.exp(-sq / (2.0 * state.theta ** 2)).sum()
    return float(f - state.epsilon * sq.sum())


def smoothed_gradient(beams: BeamformerSet, state: SmoothingState) -> BeamformerSet:
    """Gradient of :func:`smoothed_objective` on the real/imaginary stacking.

    Returned in complex form: the real and imaginary parts of each entry
    are the partial derivatives with respect to the real and imaginary
    parts of the corresponding beamformer entry.
    """
    sq = np.sum(np.abs(beams.w) ** 2, axis=2, keepdims=True)
    k = np.exp(-sq / (2.0 * state.theta ** 2)) / state.theta ** 2
    return BeamformerSet(-(k + 2.0 * state.epsilon) * beams.w)


def pattern_from_beamformers(beams: BeamformerSet,
                             zero_threshold: Optional[float] = None) -> CooperationPattern:
    """Cooperation pattern of the blocks whose norm is strictly above the threshold."""
    if zero_threshold is None:
        zero_threshold = default_zero_threshold(beams)
    active = block_norms(beams) > zero_threshold
    if not np.all(active.any(axis=1)):
        k = int(np.flatnonzero(~active.any(axis=1))[0])
        raise InvalidSolutionError(f"user {k} has no block above the zero threshold")
    return CooperationPattern(active, beams.antennas)

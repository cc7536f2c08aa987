"""Dense primal-dual interior-point solver for small block-diagonal SDPs.

Problems are stated in the primal standard form ::

    minimize    sum_b tr(C_b X_b)
    subject to  sum_b tr(A_ib X_b)  (>= or =)  b_i      for every row i
                X_b PSD

with real symmetric or complex Hermitian blocks.  Complex problems are
solved through the real embedding ``[[Re M, -Im M], [Im M, Re M]]`` and
mapped back afterwards.  Inequality rows receive a nonnegative slack
scalar, i.e. a 1x1 PSD block.

A row ``tr(A X_b) = 0`` with ``A`` PSD and touching a single block has no
strictly feasible point, which interior-point methods handle badly.  Such
rows are removed before the solve by restricting ``X_b`` to the null space
of ``A`` (facial reduction).  Their multipliers are reported as zero and
KKT residuals are measured on the reduced face.

The iteration is an infeasible-start Mehrotra predictor-corrector method
using the HKM search direction.  Primal infeasibility is declared when the
dual iterates grow along a Farkas ray, i.e. ``b'y > 0`` and
``||A'y + Z|| / b'y`` falls below ``infeasibility_tolerance``.

Warm starting is not supported; each solve starts from the same
data-driven initial point so repeated solves are bit-identical.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np
import scipy.linalg as sla

__all__ = [
    "GE",
    "EQ",
    "Constraint",
    "SdpProblem",
    "SolverOptions",
    "Status",
    "KktReport",
    "SdpResult",
    "embed_hermitian",
    "deembed_hermitian",
    "solve",
    "check_kkt",
    "certificate_residual",
    "dump_problem",
    "load_problem",
]

GE = ">="
EQ = "="

_HERMITIAN_TOL = 1e-10


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITERATIONS = "max-iterations"

    def __str__(self):
        return self.value


def _is_hermitian(m: np.ndarray) -> bool:
    if not m.size:
        return True
    scale = max(1.0, float(np.max(np.abs(m))))
    return float(np.max(np.abs(m - m.conj().T))) <= _HERMITIAN_TOL * scale


@dataclass
class Constraint:
    """One linear row ``sum_b tr(coeffs[b] X_b) sense rhs``.

    ``coeffs`` maps block index to a Hermitian matrix; blocks that do not
    appear have zero coefficient.
    """

    coeffs: dict
    rhs: float
    sense: str = GE

    def __post_init__(self):
        if self.sense not in (GE, EQ):
            raise ValueError(f"constraint sense must be '>=' or '=', got {self.sense!r}")
        self.rhs = float(self.rhs)


@dataclass
class SdpProblem:
    """Block-diagonal SDP in primal standard form.

    Attributes
    ----------
    block_sizes : list of int
        Side length of each PSD block.
    objective : list of ndarray
        Cost matrix ``C_b`` for every block.
    constraints : list of Constraint
        At least one row.
    name : str
        Free-form label, kept in debug dumps.
    scale : float
        Multiplier that maps this problem's variables back to physical
        units.  Set by the model builders; the solver ignores it.
    """

    block_sizes: list
    objective: list
    constraints: list
    name: str = ""
    scale: float = 1.0

    def __post_init__(self):
        self.block_sizes = [int(n) for n in self.block_sizes]
        if len(self.objective) != len(self.block_sizes):
            raise ValueError("one objective matrix is required per block")
        if not self.constraints:
            raise ValueError("an SDP needs at least one constraint")
        self.objective = [np.asarray(c) for c in self.objective]
        for b, (n, c) in enumerate(zip(self.block_sizes, self.objective)):
            if n < 0:
                raise ValueError(f"block {b} has negative size")
            if c.shape != (n, n):
                raise ValueError(f"objective block {b} has shape {c.shape}, expected {(n, n)}")
            if not _is_hermitian(c):
                raise ValueError(f"objective block {b} is not Hermitian")
        for i, con in enumerate(self.constraints):
            con.coeffs = {int(b): np.asarray(a) for b, a in con.coeffs.items()}
            for b, a in con.coeffs.items():
                if not 0 <= b < len(self.block_sizes):
                    raise ValueError(f"constraint {i} refers to unknown block {b}")
                n = self.block_sizes[b]
                if a.shape != (n, n):
                    raise ValueError(
                        f"constraint {i}, block {b}: shape {a.shape}, expected {(n, n)}")
                if not _is_hermitian(a):
                    raise ValueError(f"constraint {i}, block {b} is not Hermitian")

    @property
    def is_complex(self) -> bool:
        if any(np.iscomplexobj(c) for c in self.objective):
            return True
        return any(np.iscomplexobj(a) for con in self.constraints for a in con.coeffs.values())

    @property
    def n_blocks(self) -> int:
        return len(self.block_sizes)

    def row_value(self, i: int, X: Sequence[np.ndarray]) -> float:
        return float(sum(np.real(np.vdot(a, X[b])) for b, a in self.constraints[i].coeffs.items()))

    def objective_value(self, X: Sequence[np.ndarray]) -> float:
        return float(sum(np.real(np.vdot(c, x)) for c, x in zip(self.objective, X)))


@dataclass
class SolverOptions:
    tolerance: float = 1e-8
    max_iterations: int = 200
    infeasibility_tolerance: float = 1e-8
    step_fraction: float = 0.98

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class KktReport:
    """Relative KKT residuals of a primal-dual pair."""

    primal: float
    dual: float
    complementarity: float
    gap: float

    def max(self) -> float:
        return max(self.primal, self.dual, self.complementarity, self.gap)

    def ok(self, tol: float) -> bool:
        return self.max() <= tol


@dataclass
class SdpResult:
    status: Status
    X: list
    y: np.ndarray
    Z: list
    objective: float
    dual_objective: float
    residuals: Optional[KktReport]
    iterations: int
    certificate: Optional[np.ndarray] = None
    trace: list = field(default_factory=list)
    # orthonormal basis of the face each block was restricted to (None = whole cone)
    faces: list = field(default_factory=list)
    eliminated: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# -------------------------------------------------------------------------
# Real embedding
# -------------------------------------------------------------------------


def embed_hermitian(m: np.ndarray) -> np.ndarray:
    """Real symmetric ``2n x 2n`` embedding of a Hermitian ``n x n`` matrix.

    The embedding is a *-homomorphism: it preserves products, inverses and
    the spectrum (each eigenvalue with doubled multiplicity), and
    ``tr(embed(A) embed(B)) = 2 tr(A B)``.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not _is_hermitian(m):
        raise ValueError("matrix is not Hermitian")
    re, im = m.real, m.imag
    return np.block([[re, -im], [im, re]])


def deembed_hermitian(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`embed_hermitian`, averaging the redundant copies."""
    n = r.shape[-1] // 2
    a, b = r[..., :n, :n], r[..., :n, n:]
    c, d = r[..., n:, :n], r[..., n:, n:]
    return 0.5 * (a + d) + 0.5j * (c - b)


# -------------------------------------------------------------------------
# Compilation to internal real standard form
# -------------------------------------------------------------------------


@dataclass
class _Group:
    blocks: list  # compiled block ids
    n: int
    C: np.ndarray  # (g, n, n)
    A: np.ndarray  # (m, g, n, n)


@dataclass
class _Compiled:
    groups: list
    lp_rows: np.ndarray  # row index of each slack scalar
    b: np.ndarray
    row_map: list  # compiled row -> original row
    d: np.ndarray  # row scaling
    c_scale: float
    emb: float  # 2 for complex problems, 1 for real
    faces: list  # per original block: None or orthonormal basis
    block_map: list  # compiled block id -> original block id
    eliminated: list
    row_norm: np.ndarray  # per compiled row: norm of the original row
    rhs: np.ndarray  # per compiled row: original right-hand side
    c_norm: float
    trivially_infeasible: Optional[int] = None

    @property
    def m(self):
        return len(self.b)

    @property
    def n_lp(self):
        return len(self.lp_rows)


def _face_reduction(problem: SdpProblem):
    faces = [None] * problem.n_blocks
    eliminated = []
    for i, con in enumerate(problem.constraints):
        if con.sense != EQ or con.rhs != 0.0:
            continue
        nz = [(b, a) for b, a in con.coeffs.items() if np.any(a != 0)]
        if len(nz) != 1:
            continue
        b, a = nz[0]
        v = faces[b] if faces[b] is not None else np.eye(problem.block_sizes[b])
        ar = v.conj().T @ a @ v
        if ar.size == 0:
            eliminated.append(i)
            continue
        w, u = np.linalg.eigh(ar)
        top = max(abs(w[0]), abs(w[-1]))
        if w[0] < -1e-12 * top:
            continue  # indefinite: leave the row to the solver
        keep = w <= 1e-10 * top
        faces[b] = v @ u[:, keep]
        eliminated.append(i)
    return faces, eliminated


def _compile(problem: SdpProblem) -> _Compiled:
    cplx = problem.is_complex
    faces, eliminated = _face_reduction(problem)
    elim = set(eliminated)

    def reduce(b, a):
        v = faces[b]
        return a if v is None else v.conj().T @ a @ v

    sizes = [problem.block_sizes[b] if faces[b] is None else faces[b].shape[1]
             for b in range(problem.n_blocks)]
    live = [b for b in range(problem.n_blocks) if sizes[b] > 0]

    def to_real(a):
        if cplx:
            return embed_hermitian(np.asarray(a, dtype=complex))
        return np.asarray(a, dtype=float)

    emb = 2.0 if cplx else 1.0
    rows, rhs, senses, row_map, row_norm = [], [], [], [], []
    trivially_infeasible = None
    for i, con in enumerate(problem.constraints):
        if i in elim:
            continue
        coeffs = {}
        sq = 0.0
        for b, a in con.coeffs.items():
            ar = reduce(b, a)
            sq += float(np.linalg.norm(a) ** 2)
            if ar.size and np.any(ar != 0):
                coeffs[b] = ar
        norm = math.sqrt(sq + (1.0 if con.sense == GE else 0.0))
        if not coeffs:
            bad = con.rhs > 0 if con.sense == GE else con.rhs != 0
            if bad and trivially_infeasible is None:
                trivially_infeasible = i
            continue
        rows.append(coeffs)
        rhs.append(con.rhs)
        senses.append(con.sense)
        row_map.append(i)
        row_norm.append(norm)

    m = len(rows)
    real_rows = []
    d = np.empty(m)
    for r, coeffs in enumerate(rows):
        real = {b: to_real(a) for b, a in coeffs.items()}
        sq = sum(float(np.sum(a * a)) for a in real.values())
        if senses[r] == GE:
            sq += 1.0
        d[r] = 1.0 / math.sqrt(sq)
        real_rows.append(real)

    c_real = {b: to_real(reduce(b, problem.objective[b])) for b in live}
    c_norm_real = math.sqrt(sum(float(np.sum(c * c)) for c in c_real.values()))
    c_scale = 1.0 / c_norm_real if c_norm_real > 0 else 1.0

    by_size: dict = {}
    for cb, b in enumerate(live):
        by_size.setdefault(c_real[b].shape[0], []).append(cb)
    groups = []
    for n, cbs in sorted(by_size.items()):
        g = len(cbs)
        C = np.stack([c_real[live[cb]] * c_scale for cb in cbs])
        A = np.zeros((m, g, n, n))
        for r, real in enumerate(real_rows):
            for j, cb in enumerate(cbs):
                a = real.get(live[cb])
                if a is not None:
                    A[r, j] = d[r] * a
        groups.append(_Group(blocks=cbs, n=n, C=C, A=A))

    lp_rows = np.array([r for r in range(m) if senses[r] == GE], dtype=int)
    b = emb * d * np.asarray(rhs, dtype=float)
    c_norm = math.sqrt(sum(float(np.linalg.norm(c) ** 2) for c in problem.objective))
    return _Compiled(groups=groups, lp_rows=lp_rows, b=b, row_map=row_map, d=d,
                     c_scale=c_scale, emb=emb, faces=faces, block_map=live,
                     eliminated=eliminated, row_norm=np.asarray(row_norm),
                     rhs=np.asarray(rhs, dtype=float), c_norm=c_norm,
                     trivially_infeasible=trivially_infeasible)


# -------------------------------------------------------------------------
# Interior-point iteration
# -------------------------------------------------------------------------


def _sym(x):
    return 0.5 * (x + np.swapaxes(x, -1, -2).conj())


def _aop(cp: _Compiled, X, x):
    out = np.zeros(cp.m)
    for grp, xg in zip(cp.groups, X):
        out += grp.A.reshape(cp.m, -1) @ xg.reshape(-1)
    if cp.n_lp:
        np.subtract.at(out, cp.lp_rows, x)
    return out


def _atop(cp: _Compiled, y):
    mats = [(y @ grp.A.reshape(cp.m, -1)).reshape(grp.C.shape) for grp in cp.groups]
    return mats, -y[cp.lp_rows]


def _inv_factors(mats):
    """Inverse Cholesky factors ``L^-1`` with ``M = L L'`` for each group."""
    return [np.linalg.inv(np.linalg.cholesky(M)) if M.shape[-1] else M for M in mats]


def _max_step_pair(LXi, LZi, dX, dZ):
    """Largest primal and dual PSD steps, one batched eigen call per group."""
    ap = ad = np.inf
    for lx, lz, dx, dz in zip(LXi, LZi, dX, dZ):
        g = lx.shape[0]
        if g == 0 or lx.shape[-1] == 0:
            continue
        Li = np.concatenate([lx, lz])
        T = Li @ np.concatenate([dx, dz]) @ np.swapaxes(Li, -1, -2)
        lam = np.linalg.eigvalsh(_sym(T))[:, 0]
        lp, ld = float(lam[:g].min()), float(lam[g:].min())
        if lp < 0:
            ap = min(ap, -1.0 / lp)
        if ld < 0:
            ad = min(ad, -1.0 / ld)
    return ap, ad


def _max_step_lp(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _safe_update(X, dX, alpha):
    """``X + alpha dX`` and its inverse factors, shrinking ``alpha`` until every block factors."""
    for _ in range(30):
        out = [x + alpha * d for x, d in zip(X, dX)]
        try:
            return out, alpha, _inv_factors(out)
        except np.linalg.LinAlgError:
            alpha *= 0.8
    return X, 0.0, _inv_factors(X)


def _inner(X, Z, x, z):
    return float(sum(np.sum(a * b) for a, b in zip(X, Z)) + np.dot(x, z))


def _solve_schur(M, rhs, factor=None):
    if factor is None:
        M = 0.5 * (M + M.T)
        for ridge in (0.0, 1e-14, 1e-12, 1e-10):
            try:
                factor = sla.cho_factor(M + ridge * max(1.0, np.max(np.diag(M))) * np.eye(len(M)),
                                        check_finite=False)
                break
            except (np.linalg.LinAlgError, sla.LinAlgError):
                factor = None
        if factor is None:
            factor = ("lstsq", M)
    if isinstance(factor, tuple) and len(factor) == 2 and isinstance(factor[0], str):
        sol = np.linalg.lstsq(factor[1], rhs, rcond=None)[0]
    else:
        sol = sla.cho_solve(factor, rhs, check_finite=False)
    return sol, factor


def _initial_point(cp: _Compiled):
    X, Z = [], []
    m = cp.m
    for grp in cp.groups:
        n = grp.n
        anorm = np.sqrt(np.sum(grp.A ** 2, axis=(2, 3)))  # (m, g)
        xi = np.maximum(10.0, math.sqrt(n))
        eta = np.maximum(10.0, math.sqrt(n))
        if m:
            xi = np.maximum(xi, n * np.max((1 + np.abs(cp.b))[:, None] / (1 + anorm), axis=0))
            eta = np.maximum(eta, np.max(anorm, axis=0))
        eta = np.maximum(eta, np.sqrt(np.sum(grp.C ** 2, axis=(1, 2))))
        eye = np.eye(n)
        X.append(xi[:, None, None] * eye if np.ndim(xi) else np.full(len(grp.blocks), xi)[:, None, None] * eye)
        Z.append(eta[:, None, None] * eye if np.ndim(eta) else np.full(len(grp.blocks), eta)[:, None, None] * eye)
    x = np.maximum(10.0, 1.0 + np.abs(cp.b[cp.lp_rows]))
    z = np.full(cp.n_lp, 10.0)
    return X, np.zeros(m), Z, x, z


@dataclass
class _Iterate:
    X: list
    y: np.ndarray
    Z: list
    x: np.ndarray
    z: np.ndarray
    LXi: Optional[list] = None
    LZi: Optional[list] = None


def _measures(cp, it, rp, Rd, rd):
    """Stopping measures expressed in the units of the original problem."""
    denom_scale = cp.c_scale * cp.emb
    pobj = (sum(float(np.sum(g.C * X)) for g, X in zip(cp.groups, it.X))) / denom_scale
    dobj = float(cp.b @ it.y) / denom_scale
    if cp.m:
        den = cp.emb * cp.d * (cp.row_norm + np.abs(cp.rhs))
        pinf = float(np.max(np.abs(rp) / den))
    else:
        pinf = 0.0
    rd_sq = sum(float(np.sum(r * r)) for r in Rd) / cp.emb + float(np.sum(rd * rd))
    dinf = math.sqrt(rd_sq) / cp.c_scale / (1.0 + cp.c_norm)
    comp = 0.0
    for X, Z in zip(it.X, it.Z):
        if X.shape[-1]:
            comp = max(comp, float(np.max(np.sum(X * Z, axis=(1, 2)))) / cp.emb)
    if cp.n_lp:
        comp = max(comp, float(np.max(np.abs(it.x * it.z))) / cp.emb)
    scale = 1.0 + abs(pobj) + abs(dobj)
    comp = comp / cp.c_scale / scale
    gap = abs(pobj - dobj) / scale
    return pobj, dobj, pinf, dinf, comp, gap


def _step(cp, it, rp, Rd, rd, mu, n_total, frac):
    """One Mehrotra predictor-corrector step with the HKM direction."""
    if it.LXi is None:
        it.LXi, it.LZi = _inv_factors(it.X), _inv_factors(it.Z)
    Zinv = [np.swapaxes(L, -1, -2) @ L for L in it.LZi]
    zinv = 1.0 / it.z
    m = cp.m
    M = np.zeros((m, m))
    for g, X, Zi in zip(cp.groups, it.X, Zinv):
        if g.n == 0:
            continue
        G = np.matmul(np.matmul(X[None], g.A), Zi[None])
        M += g.A.reshape(m, -1) @ np.swapaxes(G, -1, -2).reshape(m, -1).T
    if cp.n_lp:
        w = it.x * zinv
        np.add.at(M, (cp.lp_rows[:, None], cp.lp_rows[None, :]), np.diag(w))
    XRdZ = [X @ R @ Zi for X, R, Zi in zip(it.X, Rd, Zinv)]
    xrdz = it.x * rd * zinv
    base = rp + _aop(cp, XRdZ, xrdz)
    factor = None

    def direction(RcZ, rcz):
        nonlocal factor
        rhs = base - _aop(cp, RcZ, rcz)
        dy, factor = _solve_schur(M, rhs, factor)
        aty, aty_l = _atop(cp, dy)
        dZ = [R - a for R, a in zip(Rd, aty)]
        dz = rd - aty_l
        dX = [_sym(Rc - X @ D @ Zi) for Rc, X, D, Zi in zip(RcZ, it.X, dZ, Zinv)]
        dx = rcz - it.x * dz * zinv
        return dX, dy, dZ, dx, dz

    # predictor
    dXa, dya, dZa, dxa, dza = direction([-X for X in it.X], -it.x)
    ap, ad = _max_step_pair(it.LXi, it.LZi, dXa, dZa)
    ap = min(1.0, ap, _max_step_lp(it.x, dxa))
    ad = min(1.0, ad, _max_step_lp(it.z, dza))
    mu_aff = _inner([X + ap * D for X, D in zip(it.X, dXa)],
                    [Z + ad * D for Z, D in zip(it.Z, dZa)],
                    it.x + ap * dxa, it.z + ad * dza) / max(n_total, 1)
    sigma = min(1.0, (max(mu_aff, 0.0) / mu) ** 3) if mu > 0 else 0.0
    # corrector
    RcZ = [sigma * mu * Zi - X - Dx @ Dz @ Zi
           for Zi, X, Dx, Dz in zip(Zinv, it.X, dXa, dZa)]
    rcz = sigma * mu * zinv - it.x - dxa * dza * zinv
    dX, dy, dZ, dx, dz = direction(RcZ, rcz)
    ap, ad = _max_step_pair(it.LXi, it.LZi, dX, dZ)
    ap = min(1.0, frac * min(ap, _max_step_lp(it.x, dx)))
    ad = min(1.0, frac * min(ad, _max_step_lp(it.z, dz)))
    it.X, ap, it.LXi = _safe_update(it.X, dX, ap)
    it.Z, ad, it.LZi = _safe_update(it.Z, dZ, ad)
    it.x = it.x + ap * dx
    it.y = it.y + ad * dy
    it.z = it.z + ad * dz
    return it


def _ipm(cp: _Compiled, options: SolverOptions):
    it = _Iterate(*_initial_point(cp))
    n_total = sum(g.n * len(g.blocks) for g in cp.groups) + cp.n_lp
    trace = []
    status = Status.MAX_ITERATIONS
    cert = None
    frac = options.step_fraction
    stop_tol = 0.5 * options.tolerance

    for k in range(options.max_iterations + 1):
        ATy, aty_lp = _atop(cp, it.y)
        rp = cp.b - _aop(cp, it.X, it.x)
        Rd = [g.C - a - Z for g, a, Z in zip(cp.groups, ATy, it.Z)]
        rd = -aty_lp - it.z
        pobj, dobj, pinf, dinf, comp, gap = _measures(cp, it, rp, Rd, rd)
        mu = _inner(it.X, it.Z, it.x, it.z) / max(n_total, 1)
        trace.append({"iteration": k, "pobj": pobj, "dobj": dobj, "pinf": pinf,
                      "dinf": dinf, "mu": mu,
                      # <X, Z> = pobj - dobj + y'rp - <Rd, X>, nonnegative
                      "xz": _inner(it.X, it.Z, it.x, it.z) / (cp.c_scale * cp.emb)})
        if max(pinf, dinf, comp, gap) <= stop_tol:
            status = Status.OPTIMAL
            break
        # Farkas-ray tests on the scaled data
        by = float(cp.b @ it.y)
        if by > 0:
            ray = math.sqrt(sum(float(np.sum((a + Z) ** 2)) for a, Z in zip(ATy, it.Z))
                            + float(np.sum((aty_lp + it.z) ** 2)))
            if ray / by < options.infeasibility_tolerance:
                status = Status.INFEASIBLE
                cert = it.y / by
                break
        cx = sum(float(np.sum(g.C * X)) for g, X in zip(cp.groups, it.X))
        if cx < 0:
            ax = np.linalg.norm(_aop(cp, it.X, it.x))
            if ax / -cx < options.infeasibility_tolerance:
                status = Status.UNBOUNDED
                break
        if k == options.max_iterations:
            break

        try:
            it = _step(cp, it, rp, Rd, rd, mu, n_total, frac)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            # numerical breakdown: accept the iterate if it already meets the target
            if max(pinf, dinf, comp, gap) <= options.tolerance:
                status = Status.OPTIMAL
            break
    return it, status, cert, trace, k


# -------------------------------------------------------------------------
# Public entry points
# -------------------------------------------------------------------------


def _lift(cp: _Compiled, problem: SdpProblem, it: _Iterate):
    """Map compiled iterates back to the original blocks, rows and units."""
    cplx = problem.is_complex
    dtype = complex if cplx else float
    X = [np.zeros((n, n), dtype=dtype) for n in problem.block_sizes]
    Zr = [None] * problem.n_blocks
    for grp, Xg, Zg in zip(cp.groups, it.X, it.Z):
        for j, cb in enumerate(grp.blocks):
            b = cp.block_map[cb]
            xb = deembed_hermitian(Xg[j]) if cplx else Xg[j].copy()
            zb = (deembed_hermitian(Zg[j]) if cplx else Zg[j].copy()) / cp.c_scale
            v = cp.faces[b]
            X[b] = _sym(xb) if v is None else v @ xb @ v.conj().T
            Zr[b] = _sym(zb)
    y = np.zeros(len(problem.constraints))
    y[cp.row_map] = it.y * cp.d / cp.c_scale
    Z = []
    for b in range(problem.n_blocks):
        v = cp.faces[b]
        if v is None:
            Z.append(Zr[b] if Zr[b] is not None else np.zeros((0, 0), dtype=dtype))
        else:
            zf = _dual_slack_full(problem, y, b)
            if Zr[b] is not None:
                # keep the solver's slack on the face, the exact residual elsewhere
                P = v @ v.conj().T
                zf = zf - P @ zf @ P + v @ Zr[b] @ v.conj().T
            Z.append(_sym(zf))
    return X, y, Z


def _dual_slack_full(problem: SdpProblem, y, b):
    z = np.array(problem.objective[b], dtype=complex if problem.is_complex else float)
    for i, con in enumerate(problem.constraints):
        a = con.coeffs.get(b)
        if a is not None and y[i] != 0:
            z = z - y[i] * a
    return z


def solve(problem: SdpProblem, options: Optional[SolverOptions] = None) -> SdpResult:
    """Solve ``problem`` and return the primal-dual pair with its residuals."""
    options = options or SolverOptions()
    cp = _compile(problem)
    if cp.trivially_infeasible is not None:
        y = np.zeros(len(problem.constraints))
        i = cp.trivially_infeasible
        y[i] = 1.0 / problem.constraints[i].rhs
        return SdpResult(status=Status.INFEASIBLE, X=[], y=y, Z=[], objective=math.nan,
                         dual_objective=math.nan, residuals=None, iterations=0,
                         certificate=y, faces=cp.faces, eliminated=cp.eliminated)
    it, status, cert, trace, iters = _ipm(cp, options)
    X, y, Z = _lift(cp, problem, it)
    if status is Status.INFEASIBLE:
        c = np.zeros(len(problem.constraints))
        c[cp.row_map] = cert * cp.d * cp.emb
        return SdpResult(status=status, X=X, y=y, Z=Z, objective=math.nan,
                         dual_objective=math.nan, residuals=None, iterations=iters,
                         certificate=c, trace=trace, faces=cp.faces, eliminated=cp.eliminated)
    res = SdpResult(status=status, X=X, y=y, Z=Z,
                    objective=problem.objective_value(X),
                    dual_objective=float(sum(c.rhs * yi for c, yi in zip(problem.constraints, y))),
                    residuals=None, iterations=iters, trace=trace,
                    faces=cp.faces, eliminated=cp.eliminated)
    res.residuals = check_kkt(problem, res)
    return res


def check_kkt(problem: SdpProblem, result: SdpResult) -> KktReport:
    """Recompute relative KKT residuals of ``result`` from the problem data.

    primal
        worst row violation divided by ``||row|| + |b_i|``, together with
        the PSD violation of each ``X_b``;
    dual
        ``||C - A'y - Z||`` plus the PSD violation of ``Z`` and the sign
        violation of inequality multipliers, over ``1 + ||C||``;
    complementarity
        ``max_b tr(X_b Z_b) = max_b ||X_b^(1/2) Z_b^(1/2)||_F^2`` (zero exactly
        when ``X_b Z_b = 0`` for PSD pairs) over ``1 + |pobj| + |dobj|``;
    gap
        ``|pobj - dobj|`` over the same denominator.

    Blocks restricted to a face are checked on that face.
    """
    X, y, Z = result.X, np.asarray(result.y, dtype=float), result.Z
    faces = result.faces or [None] * problem.n_blocks
    elim = set(result.eliminated)
    pviol = 0.0
    for i, con in enumerate(problem.constraints):
        val = problem.row_value(i, X)
        norm = math.sqrt(sum(float(np.linalg.norm(a) ** 2) for a in con.coeffs.values())
                         + (1.0 if con.sense == GE else 0.0))
        v = max(0.0, con.rhs - val) if con.sense == GE else abs(val - con.rhs)
        pviol = max(pviol, v / (norm + abs(con.rhs)))
    for x in X:
        if x.size:
            lam = np.linalg.eigvalsh(x)
            pviol = max(pviol, max(0.0, -lam[0]) / (1.0 + abs(lam[-1])))

    c_norm = math.sqrt(sum(float(np.linalg.norm(c) ** 2) for c in problem.objective))
    dsq = 0.0
    dpsd = 0.0
    comp = 0.0
    for b in range(problem.n_blocks):
        v = faces[b]
        zfull = np.array(problem.objective[b], dtype=complex if problem.is_complex else float)
        for i, con in enumerate(problem.constraints):
            a = con.coeffs.get(b)
            if a is not None and i not in elim:
                zfull = zfull - y[i] * a
        if v is None:
            r = zfull - Z[b]
            zb, xb = Z[b], X[b]
        else:
            vh = v.conj().T
            r = vh @ (zfull - Z[b]) @ v
            zb, xb = vh @ Z[b] @ v, vh @ X[b] @ v
        dsq += float(np.linalg.norm(r) ** 2)
        if zb.size:
            dpsd = max(dpsd, max(0.0, -float(np.linalg.eigvalsh(zb)[0])))
            comp = max(comp, abs(float(np.real(np.vdot(xb, zb)))))
    ysign = 0.0
    for i, con in enumerate(problem.constraints):
        if con.sense == GE and i not in elim:
            # slack complementarity: y_i * (row - b_i)
            norm = math.sqrt(sum(float(np.linalg.norm(a) ** 2) for a in con.coeffs.values()) + 1.0)
            ysign = max(ysign, max(0.0, -y[i]) * norm)
            comp = max(comp, abs(y[i] * (problem.row_value(i, X) - con.rhs)))
    pobj = problem.objective_value(X)
    dobj = float(sum(con.rhs * yi for con, yi in zip(problem.constraints, y)))
    scale = 1.0 + abs(pobj) + abs(dobj)
    dual = (math.sqrt(dsq) + dpsd + ysign) / (1.0 + c_norm)
    return KktReport(primal=pviol, dual=dual, complementarity=comp / scale,
                     gap=abs(pobj - dobj) / scale)


def certificate_residual(problem: SdpProblem, y: np.ndarray) -> float:
    """Residual of a primal-infeasibility certificate ``y`` with ``b'y = 1``.

    A valid certificate has ``-sum_i y_i A_i`` PSD on every block (on the
    reduced face where rows were eliminated) and ``y_i >= 0`` for
    inequality rows.  Returns the worst violation relative to the row
    norms; zero for an exact certificate.
    """
    y = np.asarray(y, dtype=float)
    by = sum(con.rhs * yi for con, yi in zip(problem.constraints, y))
    if by <= 0:
        return math.inf
    y = y / by
    faces, eliminated = _face_reduction(problem)
    elim = set(eliminated)
    scale = max(1e-300, max(abs(yi) * math.sqrt(sum(float(np.linalg.norm(a) ** 2)
                                                      for a in con.coeffs.values()) + 1.0)
                            for yi, con in zip(y, problem.constraints)))
    worst = 0.0
    for i, con in enumerate(problem.constraints):
        if con.sense == GE and i not in elim:
            worst = max(worst, max(0.0, -y[i]))
    for b in range(problem.n_blocks):
        s = np.zeros((problem.block_sizes[b],) * 2, dtype=complex if problem.is_complex else float)
        for i, con in enumerate(problem.constraints):
            a = con.coeffs.get(b)
            if a is not None and i not in elim:
                s = s - y[i] * a
        v = faces[b]
        if v is not None:
            s = v.conj().T @ s @ v
        if s.size:
            worst = max(worst, max(0.0, -float(np.linalg.eigvalsh(s)[0])) / scale)
    return worst


# -------------------------------------------------------------------------
# Debug dump
# -------------------------------------------------------------------------


def _fmt(v) -> str:
    v = complex(v)
    if v.imag == 0:
        return repr(v.real)
    return repr(v).strip("()")


def _write_matrix(out: TextIO, a: np.ndarray):
    for row in np.atleast_2d(a):
        out.write(" ".join(_fmt(v) for v in row) + "\n")


def dump_problem(problem: SdpProblem, out: Optional[TextIO] = None) -> str:
    """Write ``problem`` in a plain-text, self-describing format.

    Layout::

        sdp 1
        name <label>
        field real|complex
        blocks <n_1> <n_2> ...
        objective <block>
        <dense rows>
        constraint <index> <sense> <rhs>
        coeff <block>
        <dense rows>
        end

    Matrices are dense and row-major, one row per line.
    """
    buf = io.StringIO()
    buf.write("sdp 1\n")
    buf.write(f"name {problem.name}\n")
    buf.write(f"field {'complex' if problem.is_complex else 'real'}\n")
    buf.write(f"scale {problem.scale!r}\n")
    buf.write("blocks " + " ".join(str(n) for n in problem.block_sizes) + "\n")
    for b, c in enumerate(problem.objective):
        buf.write(f"objective {b}\n")
        _write_matrix(buf, c)
    for i, con in enumerate(problem.constraints):
        buf.write(f"constraint {i} {con.sense} {con.rhs!r}\n")
        for b, a in sorted(con.coeffs.items()):
            buf.write(f"coeff {b}\n")
            _write_matrix(buf, a)
    buf.write("end\n")
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def load_problem(text: str) -> SdpProblem:
    """Parse the output of :func:`dump_problem`."""
    lines = iter(text.splitlines())
    header = next(lines).split()
    if header != ["sdp", "1"]:
        raise ValueError("not an sdp dump (bad header)")
    name = next(lines)[len("name "):]
    field_kind = next(lines).split()[1]
    dtype = complex if field_kind == "complex" else float
    scale = float(next(lines).split()[1])
    sizes = [int(t) for t in next(lines).split()[1:]]

    def read_matrix(n):
        rows = [next(lines).split() for _ in range(n)]
        return np.array([[dtype(complex(t)) if dtype is complex else float(t) for t in r]
                         for r in rows], dtype=dtype).reshape(n, n)

    objective = [None] * len(sizes)
    constraints = []
    for line in lines:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "objective":
            b = int(tok[1])
            objective[b] = read_matrix(sizes[b])
        elif tok[0] == "constraint":
            constraints.append(Constraint(coeffs={}, rhs=float(tok[3]), sense=tok[2]))
        elif tok[0] == "coeff":
            b = int(tok[1])
            constraints[-1].coeffs[b] = read_matrix(sizes[b])
        elif tok[0] == "end":
            break
        else:
            raise ValueError(f"unexpected line in sdp dump: {line!r}")
    return SdpProblem(block_sizes=sizes, objective=objective, constraints=constraints,
                      name=name, scale=scale)

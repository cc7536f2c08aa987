import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymcoop import conic
from asymcoop.conic import (
    EQ,
    GE,
    Constraint,
    SdpProblem,
    SolverOptions,
    Status,
    certificate_residual,
    check_kkt,
    deembed_hermitian,
    dump_problem,
    embed_hermitian,
    load_problem,
    solve,
)


def random_hermitian(rng, n, complex_=True):
    a = rng.standard_normal((n, n))
    if complex_:
        a = a + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2


def random_sdp(rng, sizes=(3, 2), m=4, complex_=False):
    """Strictly feasible (X = I) and bounded (C positive definite) test problem."""
    C = []
    for n in sizes:
        b = rng.standard_normal((n, n)) + (1j * rng.standard_normal((n, n)) if complex_ else 0)
        C.append(b @ b.conj().T + 0.5 * np.eye(n))
    rows = []
    for i in range(m):
        coeffs = {b: random_hermitian(rng, n, complex_) for b, n in enumerate(sizes)}
        rhs = sum(float(np.trace(a).real) for a in coeffs.values())
        sense = EQ if i % 2 == 0 else GE
        rows.append(Constraint(coeffs, rhs - (0.0 if sense == EQ else 0.5), sense))
    return SdpProblem(list(sizes), C, rows)


# --- problem validation ------------------------------------------------------


def test_problem_validation():
    with pytest.raises(ValueError, match="at least one constraint"):
        SdpProblem([2], [np.eye(2)], [])
    with pytest.raises(ValueError, match="Hermitian"):
        SdpProblem([2], [np.array([[0, 1], [0, 0]])], [Constraint({0: np.eye(2)}, 1)])
    with pytest.raises(ValueError, match="shape"):
        SdpProblem([2], [np.eye(3)], [Constraint({0: np.eye(2)}, 1)])
    with pytest.raises(ValueError, match="unknown block"):
        SdpProblem([2], [np.eye(2)], [Constraint({1: np.eye(2)}, 1)])
    with pytest.raises(ValueError, match="sense"):
        Constraint({0: np.eye(2)}, 1, "<=")
    with pytest.raises(ValueError):
        SolverOptions(tolerance=0)


# --- embedding ---------------------------------------------------------------


def test_embed_identity():
    assert np.array_equal(embed_hermitian(np.eye(1)), np.eye(2))


def test_embed_pauli_like():
    m = np.array([[0, 1j], [-1j, 0]])
    lam = np.linalg.eigvalsh(embed_hermitian(m))
    assert np.allclose(lam, [-1, -1, 1, 1])


def test_embed_rejects_non_hermitian():
    with pytest.raises(ValueError):
        embed_hermitian(np.array([[0, 1], [0, 0]]))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_embed_spectrum_and_trace(n, seed):
    rng = np.random.default_rng(seed)
    a, b = random_hermitian(rng, n), random_hermitian(rng, n)
    ea, eb = embed_hermitian(a), embed_hermitian(b)
    lam = np.linalg.eigvalsh(a)
    assert np.allclose(np.linalg.eigvalsh(ea), np.sort(np.repeat(lam, 2)), atol=1e-10)
    assert np.trace(ea @ eb) == pytest.approx(2 * np.trace(a @ b).real, abs=1e-9)
    assert np.allclose(deembed_hermitian(ea), a)


# --- solve: closed-form examples --------------------------------------------


def test_trace_minimization():
    p = SdpProblem([2], [np.eye(2)], [Constraint({0: np.eye(2)}, 1.0, GE)])
    r = solve(p)
    assert r.status is Status.OPTIMAL
    assert r.objective == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("complex_", [False, True])
def test_min_eigenvalue_oracle(rng, complex_):
    for n in (1, 2, 4, 6):
        C = random_hermitian(rng, n, complex_)
        r = solve(SdpProblem([n], [C], [Constraint({0: np.eye(n)}, 1.0, EQ)]))
        assert r.status is Status.OPTIMAL
        assert r.objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-7)


def test_complex_real_consistency(rng):
    n = 3
    C = random_hermitian(rng, n)
    rc = solve(SdpProblem([n], [C], [Constraint({0: np.eye(n)}, 1.0, EQ)]))
    # the embedded problem with embedded costs and doubled right-hand side
    rr = solve(SdpProblem([2 * n], [embed_hermitian(C)],
                          [Constraint({0: np.eye(2 * n)}, 2.0, EQ)]))
    assert rr.objective == pytest.approx(2 * rc.objective, abs=1e-7)
    assert rr.objective / 2 == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-7)


def test_lp_like_blocks():
    # min x + 2y  s.t.  x + y >= 1  (1x1 blocks)
    p = SdpProblem([1, 1], [np.eye(1), 2 * np.eye(1)],
                   [Constraint({0: np.eye(1), 1: np.eye(1)}, 1.0, GE)])
    r = solve(p)
    assert r.objective == pytest.approx(1.0, abs=1e-8)
    assert r.X[0][0, 0] == pytest.approx(1.0, abs=1e-6)


# --- solve: random problems --------------------------------------------------


@pytest.mark.parametrize("complex_", [False, True])
def test_random_problems_meet_tolerance(complex_):
    rng = np.random.default_rng(7 if complex_ else 8)
    for _ in range(10):
        p = random_sdp(rng, complex_=complex_)
        r = solve(p)
        assert r.status is Status.OPTIMAL
        assert check_kkt(p, r).max() <= 1e-8
        assert r.residuals.max() <= 1e-8
        for x in r.X:
            assert np.linalg.eigvalsh(x)[0] >= -1e-8 * max(1, np.abs(x).max())


def test_solver_is_deterministic(rng):
    p = random_sdp(rng)
    a, b = solve(p), solve(p)
    assert a.iterations == b.iterations
    assert all(np.array_equal(x, y) for x, y in zip(a.X, b.X))
    assert np.array_equal(a.y, b.y)


def test_objective_scale_invariance(rng):
    p = random_sdp(rng)
    r1 = solve(p)
    scaled = SdpProblem(p.block_sizes, [3.0 * c for c in p.objective], p.constraints)
    r3 = solve(scaled)
    assert r3.objective == pytest.approx(3.0 * r1.objective, rel=1e-7)
    for x1, x3 in zip(r1.X, r3.X):
        assert np.allclose(x1, x3, atol=1e-5 * max(1.0, np.abs(x1).max()))


def test_weak_duality_at_feasible_iterates(rng):
    p = random_sdp(rng)
    r = solve(p)
    checked = 0
    for t in r.trace:
        if max(t["pinf"], t["dinf"]) <= 1e-9:
            assert t["pobj"] >= t["dobj"] - 1e-9 * (1 + abs(t["pobj"]))
            checked += 1
    assert r.objective >= r.dual_objective - 1e-8 * (1 + abs(r.objective))
    assert checked >= 1


def test_face_reduction_rows():
    # tr(diag(1, 0) X) = 0 forces X[0, 0] = 0 and hence the first row and column
    n = 3
    C = np.eye(n)
    rows = [Constraint({0: np.diag([1.0, 0, 0])}, 0.0, EQ),
            Constraint({0: np.diag([0, 1.0, 1.0])}, 2.0, GE)]
    r = solve(SdpProblem([n], [C], rows))
    assert r.status is Status.OPTIMAL
    assert r.objective == pytest.approx(2.0, abs=1e-7)
    assert np.abs(r.X[0][0]).max() <= 1e-9


# --- infeasible and unbounded ------------------------------------------------


def test_infeasible_with_certificate():
    # X[0,0] >= 1 and -tr(X) >= 0
    p = SdpProblem([2], [np.eye(2)], [Constraint({0: np.diag([1.0, 0.0])}, 1.0, GE),
                                      Constraint({0: -np.eye(2)}, 0.0, GE)])
    r = solve(p)
    assert r.status is Status.INFEASIBLE
    assert certificate_residual(p, r.certificate) <= 1e-8


def test_infeasible_masked_problem():
    # every entry masked out but a positive trace required
    p = SdpProblem([2], [np.eye(2)], [Constraint({0: np.eye(2)}, 0.0, EQ),
                                      Constraint({0: np.eye(2)}, 1.0, GE)])
    r = solve(p)
    assert r.status is Status.INFEASIBLE
    assert certificate_residual(p, r.certificate) <= 1e-8


def test_unbounded():
    p = SdpProblem([2], [-np.eye(2)], [Constraint({0: np.diag([1.0, 0.0])}, 1.0, GE)])
    assert solve(p).status is Status.UNBOUNDED


def test_iteration_cap_reports_status(rng):
    p = random_sdp(rng)
    r = solve(p, SolverOptions(max_iterations=2))
    assert r.status is Status.MAX_ITERATIONS
    assert r.residuals is not None and r.residuals.max() > 1e-8


# --- KKT checking ------------------------------------------------------------


def _exact_pair():
    # min tr(C X), tr(X) = 1 with C = diag(1, 2): X = e1 e1', y = 1, Z = diag(0, 1)
    C = np.diag([1.0, 2.0])
    p = SdpProblem([2], [C], [Constraint({0: np.eye(2)}, 1.0, EQ)])
    res = conic.SdpResult(status=Status.OPTIMAL, X=[np.diag([1.0, 0.0])], y=np.array([1.0]),
                          Z=[np.diag([0.0, 1.0])], objective=1.0, dual_objective=1.0,
                          residuals=None, iterations=0)
    return p, res


def test_kkt_exact_pair():
    p, res = _exact_pair()
    assert check_kkt(p, res).max() <= 1e-10


def test_kkt_detects_perturbed_primal():
    p, res = _exact_pair()
    res.X = [res.X[0] + 1e-3 * np.eye(2)]
    assert check_kkt(p, res).complementarity >= 1e-4


def test_loose_tolerance_fails_kkt(rng):
    p = random_sdp(rng)
    r = solve(p, SolverOptions(tolerance=1e-2))
    assert check_kkt(p, r).max() > 1e-8


# --- external cross-check ----------------------------------------------------


def test_cvxopt_cross_check(monkeypatch):
    pytest.importorskip("cvxopt")
    from cvxopt import matrix, solvers
    for key, value in (("show_progress", False), ("abstol", 1e-9), ("reltol", 1e-9),
                       ("feastol", 1e-9)):
        monkeypatch.setitem(solvers.options, key, value)
    rng = np.random.default_rng(99)
    for _ in range(8):
        p = random_sdp(rng, sizes=(3, 2), m=4)
        ours = solve(p)
        # dual form: max b'y  s.t.  sum_i y_i A_i <= C (per block), y_i >= 0 on inequality rows
        m = len(p.constraints)
        Gs = [matrix(np.column_stack([c.coeffs[b].ravel(order="F") for c in p.constraints]))
              for b in range(p.n_blocks)]
        hs = [matrix(p.objective[b]) for b in range(p.n_blocks)]
        ge = [i for i, c in enumerate(p.constraints) if c.sense == GE]
        Gl = np.zeros((len(ge), m))
        Gl[np.arange(len(ge)), ge] = -1.0
        b = np.array([c.rhs for c in p.constraints])
        sol = solvers.sdp(matrix(-b), Gl=matrix(Gl), hl=matrix(np.zeros(len(ge))),
                          Gs=Gs, hs=hs)
        assert sol["status"] == "optimal"
        ref = -sol["primal objective"]
        assert ours.objective == pytest.approx(ref, rel=1e-6, abs=1e-7)


# --- debug dump --------------------------------------------------------------


@pytest.mark.parametrize("complex_", [False, True])
def test_dump_round_trip(rng, complex_):
    p = random_sdp(rng, complex_=complex_)
    p.name = "roundtrip"
    buf = io.StringIO()
    text = dump_problem(p, buf)
    assert buf.getvalue() == text
    q = load_problem(text)
    assert q.block_sizes == p.block_sizes and q.name == "roundtrip"
    assert all(np.array_equal(a, b) for a, b in zip(p.objective, q.objective))
    for c1, c2 in zip(p.constraints, q.constraints):
        assert c1.sense == c2.sense and c1.rhs == c2.rhs
        assert all(np.array_equal(c1.coeffs[b], c2.coeffs[b]) for b in c1.coeffs)
    assert solve(q).objective == solve(p).objective


def test_load_rejects_garbage():
    with pytest.raises(ValueError):
        load_problem("hello\n")

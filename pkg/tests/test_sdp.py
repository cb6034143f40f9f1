import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from invkit.sdp import (Block, ConicProblem, ConicSolution, PresolveError, check_kkt, export_sdpa,
                        find_dependent_rows, presolve, read_sdpa, smat, solve, svec, tril_indices)

SQ2 = np.sqrt(2.0)


def eig_toy():
    # minimize t  s.t. [[t, 1], [1, t]] >= 0, written with svec = (X11, sqrt2 X21, X22)
    A = np.array([[1.0, 0.0, -1.0], [0.0, 1.0 / SQ2, 0.0]])
    b = np.array([0.0, 1.0])
    c = np.array([1.0, 0.0, 0.0])
    return ConicProblem([Block("psd", 2)], c, sp.csr_matrix(A), b)


def random_sdp(rng, n, m):
    """Strictly feasible primal and dual points make the optimum attained."""
    size = n * (n + 1) // 2
    A = rng.standard_normal((m, size))
    G = rng.standard_normal((n, n))
    X0 = G @ G.T + n * np.eye(n)
    H = rng.standard_normal((n, n))
    S0 = H @ H.T + np.eye(n)
    y0 = rng.standard_normal(m)
    b = A @ svec(X0)
    c = A.T @ y0 + svec(S0)
    return ConicProblem([Block("psd", n)], c, sp.csr_matrix(A), b)


def clarabel_value(problem):
    import cvxpy as cp

    n = problem.blocks[0].dim
    X = cp.Variable((n, n), symmetric=True)
    ii, jj, sc = tril_indices(n)
    xv = cp.hstack([X[i, j] * s for i, j, s in zip(ii, jj, sc)])
    A = problem.A.toarray()
    prob = cp.Problem(cp.Minimize(problem.c @ xv), [A @ xv == problem.b, X >> 0])
    prob.solve(solver=cp.CLARABEL)
    return prob.value


def test_eigenvalue_toy():
    sol = solve(eig_toy())
    assert sol.status == "optimal"
    assert sol.primal_objective == pytest.approx(1.0, abs=1e-7)
    r = check_kkt(eig_toy(), sol)
    assert max(r["primal_residual"], r["dual_residual"]) <= 1e-9
    assert r["gap"] <= 1e-8


def test_lower_bound_toy():
    # minimize x s.t. x - s = 3 with x, s >= 0
    P = ConicProblem([Block("nonneg", 2)], [1.0, 0.0], sp.csr_matrix([[1.0, -1.0]]), [3.0])
    sol = solve(P)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(3.0, abs=1e-7)


def test_free_block_toy():
    # minimize x1 + x2 with x1 free, x2 >= 0, x1 - x2 = -1, x1 + x2 >= ... via slack
    P = ConicProblem([Block("free", 1), Block("nonneg", 2)], [1.0, 2.0, 0.0],
                     sp.csr_matrix([[1.0, 1.0, 0.0], [1.0, 0.0, -1.0]]), [1.0, -2.0])
    sol = solve(P)
    assert sol.status == "optimal"
    # x1 = 1 - x2 and x1 >= -2 -> minimize 1 + x2 over x2 in [0, 3]
    assert sol.primal_objective == pytest.approx(1.0, abs=1e-7)


def test_kkt_reports_perturbation():
    P = eig_toy()
    sol = solve(P)
    bumped = ConicSolution(sol.x + 1e-3, sol.y, sol.s, sol.status, 0, 0, 0)
    r = check_kkt(P, bumped)
    assert r["primal_residual"] == pytest.approx(1e-3, rel=0.5)


def test_zero_problem():
    P = ConicProblem([Block("nonneg", 2)], np.zeros(2), sp.csr_matrix((0, 2)), np.zeros(0))
    sol = solve(P)
    assert check_kkt(P, sol)["gap"] == 0.0


def test_infeasible_problem_is_not_optimal():
    P = ConicProblem([Block("nonneg", 1)], [1.0], sp.csr_matrix([[1.0]]), [-1.0])
    sol = solve(P)
    assert sol.status in ("infeasible", "stall")


def test_presolve_drops_consistent_duplicates_and_rejects_conflicts():
    A = sp.csr_matrix([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
    keep, dep = find_dependent_rows(A)
    assert len(keep) == 2 and len(dep) == 1
    P = ConicProblem([Block("nonneg", 3)], [1.0, 1.0, 1.0], A, [1.0, 2.0, 1.0])
    red, kept = presolve(P)
    assert red.nrows == 2
    assert np.linalg.matrix_rank(red.A.toarray()) == 2
    bad = ConicProblem([Block("nonneg", 3)], [1.0, 1.0, 1.0], A, [1.0, 3.0, 1.0])
    with pytest.raises(PresolveError) as err:
        presolve(bad)
    assert len(err.value.rows) == 1
    sol = solve(P)
    assert sol.status == "optimal"


def test_block_validation():
    with pytest.raises(ValueError):
        Block("psd", 0)
    with pytest.raises(ValueError):
        Block("cone", 2)
    with pytest.raises(ValueError):
        ConicProblem([Block("psd", 2)], np.zeros(2), sp.csr_matrix((1, 3)), np.zeros(1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_svec_round_trip_and_inner_product(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    M = M + M.T
    N = rng.standard_normal((n, n))
    N = N + N.T
    assert np.array_equal(smat(svec(M), n), M) or np.allclose(smat(svec(M), n), M, atol=1e-15)
    assert svec(M) @ svec(N) == pytest.approx(np.trace(M @ N), rel=1e-12, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.integers(1, 15), st.integers(0, 10_000))
def test_random_strictly_feasible_sdps(n, m, seed):
    m = min(m, n * (n + 1) // 2)
    rng = np.random.default_rng(seed)
    P = random_sdp(rng, n, m)
    sol = solve(P)
    assert sol.status == "optimal"
    r = sol.residuals
    assert r["gap"] <= 1e-8
    assert r["primal_residual"] <= 1e-8 * (1 + np.abs(P.b).max())
    # weak duality at the returned point
    assert sol.primal_objective >= sol.dual_objective - 1e-9 * (1 + abs(sol.primal_objective))
    assert r["min_eig_x"] >= -1e-9 and r["min_eig_s"] >= -1e-9


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_random_sdp_against_external_solver(seed):
    rng = np.random.default_rng(seed)
    P = random_sdp(rng, 5, 9)
    ours = solve(P).primal_objective
    ref = clarabel_value(P)
    assert ours == pytest.approx(ref, rel=1e-6, abs=1e-6)


def parse_sdpa_independently(path):
    """Minimal reader written against the format description only."""
    lines = [ln for ln in open(path).read().splitlines() if ln.strip() and ln[0] not in '"*']
    m = int(lines[0].split()[0])
    nblocks = int(lines[1].split()[0])
    dims = [int(t) for t in lines[2].replace(",", " ").split()[:nblocks]]
    cvec = [float(t) for t in lines[3].replace("{", " ").replace("}", " ").replace(",", " ").split()]
    mats = {}
    for ln in lines[4:]:
        k, blk, i, j, v = ln.split()
        mats[(int(k), int(blk), int(i), int(j))] = float(v)
    return m, dims, cvec, mats


def test_sdpa_round_trip(tmp_path):
    P = ConicProblem([Block("psd", 2), Block("nonneg", 1), Block("free", 1)],
                     [1.0 / 3, 0.0, 2.0, 0.1, -7.25],
                     sp.csr_matrix([[1.0, 0.0, 1.0, 1.0, 0.0], [0.0, 1.0 / SQ2, 0.0, 0.0, 1.0]]),
                     [1.0 / 7, 2.0])
    path = export_sdpa(P, tmp_path / "p.dat-s", comment="round trip")
    m, dims, cvec, mats = parse_sdpa_independently(path)
    assert m == 2 and dims == [2, -3]
    assert cvec == [1.0 / 7, 2.0]
    # objective enters as -C, free column split into +/- pair on the LP block
    assert mats[(0, 1, 1, 1)] == -1.0 / 3
    assert mats[(0, 2, 1, 1)] == -0.1
    assert mats[(0, 2, 2, 2)] == 7.25 and mats[(0, 2, 3, 3)] == -7.25
    assert mats[(2, 1, 1, 2)] == pytest.approx(0.5, abs=1e-15)
    assert all(i <= j for (_, blk, i, j) in mats if dims[blk - 1] > 0)
    data = read_sdpa(path)
    assert data.m == 2 and data.block_struct == [2, -3]
    assert {e[:4]: e[4] for e in data.entries} == mats


def test_one_by_one_round_trip(tmp_path):
    P = ConicProblem([Block("psd", 1)], [0.123456789012345678], sp.csr_matrix([[3.0]]), [1.5])
    path = export_sdpa(P, tmp_path / "one.dat-s")
    m, dims, cvec, mats = parse_sdpa_independently(path)
    assert (m, dims, cvec) == (1, [1], [1.5])
    assert mats == {(0, 1, 1, 1): -0.123456789012345678, (1, 1, 1, 1): 3.0}


def test_empty_constraint_set_exports(tmp_path):
    P = ConicProblem([Block("psd", 2)], np.zeros(3), sp.csr_matrix((0, 3)), np.zeros(0))
    path = export_sdpa(P, tmp_path / "empty.dat-s")
    data = read_sdpa(path)
    assert data.m == 0 and data.entries == []


def test_sdpa_export_solves_to_same_value(tmp_path):
    """Solve the exported file with an external solver and compare optima."""
    import cvxpy as cp

    P = random_sdp(np.random.default_rng(11), 4, 6)
    path = export_sdpa(P, tmp_path / "r.dat-s")
    m, dims, cvec, mats = parse_sdpa_independently(path)
    n = dims[0]
    F = [np.zeros((n, n)) for _ in range(m + 1)]
    for (k, blk, i, j), v in mats.items():
        F[k][i - 1, j - 1] = v
        F[k][j - 1, i - 1] = v
    Y = cp.Variable((n, n), symmetric=True)
    prob = cp.Problem(cp.Maximize(cp.trace(F[0] @ Y)),
                      [cp.trace(F[k] @ Y) == cvec[k - 1] for k in range(1, m + 1)] + [Y >> 0])
    prob.solve(solver=cp.CLARABEL)
    assert -prob.value == pytest.approx(solve(P).primal_objective, rel=1e-6, abs=1e-7)

import math
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad, solve_ivp

from invkit.models import appendix_b, box_system, build_poly_system
from invkit.polyalg import Polynomial, lie_derivative
from invkit.sdp import ConicSolution, solve
from invkit.sos import (AssemblyError, Certificate, CertificateProblem, ConfigurationError,
                        ExtractionError, assemble, build_inner, build_outer, build_robust,
                        compute_certificate, gram_matrices, identity_residuals, reduce_poly,
                        reference_moments, residual_check)

t1 = Polynomial.variable(1, 0)
GRID = np.linspace(-1, 1, 2001)[:, None]


def circle_moment(a, b):
    val, _ = quad(lambda th: math.cos(th) ** a * math.sin(th) ** b, -math.pi, math.pi, limit=200)
    return val / (2 * math.pi)


def test_reference_moments_against_quadrature():
    s = build_poly_system(2, appendix_b(2), 2)
    mons = [(2, 0, 0), (1, 1, 0), (2, 2, 2), (0, 0, 4), (4, 0, 0)]
    got = reference_moments(mons, s)
    assert got[0] == pytest.approx(circle_moment(2, 0), abs=1e-12)
    assert got[0] == pytest.approx(0.5, abs=1e-15)
    assert got[1] == 0.0
    assert got[2] == pytest.approx(circle_moment(2, 2) * (1 / 3), abs=1e-12)
    assert got[2] == pytest.approx(1 / 24, abs=1e-15)
    assert got[3] == pytest.approx(1 / 5, abs=1e-15)
    assert got[4] == pytest.approx(circle_moment(4, 0), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 6), st.integers(0, 6))
def test_reference_moments_property(a, b, c, d):
    s = build_poly_system(3, appendix_b(3), 2)
    got = reference_moments([(a, b, c, d)], s)[0]
    interval = lambda n: 0.0 if n % 2 else 1.0 / (n + 1)
    assert got == pytest.approx(circle_moment(a, b) * interval(c) * interval(d), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 3)),
                       st.floats(-2, 2, allow_nan=False), max_size=6),
       st.floats(-math.pi, math.pi), st.floats(-1, 1))
def test_circle_normal_form_preserves_values_on_circle(terms, th, w):
    p = Polynomial(3, terms)
    q = reduce_poly(p, (0, 1))
    assert all(e[1] <= 1 for e, _ in q.items())
    pt = [math.cos(th), math.sin(th), w]
    assert q.evaluate(pt) == pytest.approx(p.evaluate(pt), abs=1e-9 * (1 + sum(abs(c) for c in terms.values())))


def test_toy_stable_inner():
    s = box_system([-t1])
    cert = compute_certificate(s, "inner", 2, a=100.0)
    assert cert.u <= 1e-6 and cert.certifies_invariance
    inside = cert.v.evaluate_many(GRID)[np.abs(GRID[:, 0]) <= 0.95]
    assert np.all(inside < 0)
    assert residual_check(cert, s).passed


def test_toy_unstable_inner_shrinks_to_origin():
    s = box_system([t1])
    cert = compute_certificate(s, "inner", 2, a=100.0)
    assert cert.u <= 1e-6
    # grid oracle: every point other than 0 leaves X, so {v < 0} may only hug the origin
    neg = GRID[cert.v.evaluate_many(GRID) < 0, 0]
    assert neg.size == 0 or np.abs(neg).max() <= 0.1
    assert residual_check(cert, s).passed


def test_toy_stable_outer_covers_state_set():
    s = box_system([-t1])
    cert = compute_certificate(s, "outer", 2)
    interior = GRID[np.abs(GRID[:, 0]) < 1]
    assert np.all(cert.v.evaluate_many(interior) >= -1e-7)


def test_block_counts_and_sizes():
    s = box_system([-t1])
    asm = assemble(CertificateProblem("inner", 2, s))
    by_identity = {}
    for g in asm.grams:
        by_identity.setdefault(g.identity, []).append(g)
    # one SOS block per inequality plus sigma_0; faces of an interval carry no inequality
    for name in ("dynamics", "w-v-1", "w"):
        blocks = by_identity[name]
        assert len(blocks) == len(s.ineqs) + 1
        for g in blocks:
            d = (2 * 2 - g.multiplier.degree) // 2
            assert len(g.basis) == comb(1 + d, d)
            assert asm.problem.blocks[g.block_index].dim == len(g.basis)
    assert sorted(n for n in by_identity if n.startswith("face")) == ["face x0=+1", "face x0=-1"]
    s2 = build_poly_system(2, appendix_b(2), 2)
    asm2 = assemble(CertificateProblem("inner", 3, s2))
    for name in ("dynamics", "w-v-1", "w"):
        assert sum(g.identity == name for g in asm2.grams) == len(s2.ineqs) + 1


@pytest.mark.parametrize("multipliers", ["truncated", "full"])
def test_degree_bookkeeping(multipliers):
    s = build_poly_system(2, appendix_b(2), 2)
    k = 3
    asm = assemble(CertificateProblem("inner", k, s, multipliers=multipliers))
    need = 2 * k - 1 + max(f.degree for f in s.nominal_field())
    cap = 2 * k if multipliers == "truncated" else max(2 * k, need + 1)
    for g in asm.grams:
        deg = 2 * max(sum(m) for m in g.basis) + g.multiplier.degree
        limit = cap if g.identity == "dynamics" else 2 * k
        assert deg <= limit
    assert max(sum(m) for m in asm.v_basis) == 2 * k


def test_assembly_errors():
    s = build_poly_system(2, appendix_b(2), 2)
    with pytest.raises(AssemblyError, match="required 8"):
        assemble(CertificateProblem("inner", 3, s, match_degree=6))
    with pytest.raises(ConfigurationError):
        build_robust(CertificateProblem("robust-inner", 2, box_system([-t1])))
    with pytest.raises(ConfigurationError):
        build_outer(CertificateProblem("outer", 2, s, beta=0.0))
    with pytest.raises(ConfigurationError):
        build_inner(CertificateProblem("outer", 2, s))
    with pytest.raises(ConfigurationError):
        CertificateProblem("sideways", 2, s)


def test_extraction_rejects_failed_solves():
    s = box_system([-t1])
    asm = assemble(CertificateProblem("inner", 2, s))
    n = asm.problem.nvars
    bad = ConicSolution(np.zeros(n), np.zeros(asm.problem.nrows), np.zeros(n), "infeasible", 0, 0, 3)
    with pytest.raises(ExtractionError) as err:
        from invkit.sos import extract_certificate
        extract_certificate(asm, bad)
    assert err.value.status == "infeasible"


def test_second_order_inner_certificate(certs):
    cert = certs.get(2, "inner", 3)
    s = certs.system(2)
    assert cert.u <= 1e-6 and cert.certifies_invariance
    assert cert.v.degree <= 6 and cert.w.degree <= 6
    rep = residual_check(cert, s, nsamples=20000, seed=1)
    assert rep.passed, rep.to_json()
    # (v, w) = (0, 1) is always feasible, so the optimum never exceeds the normalized mass
    assert cert.objective <= 1 + 1e-7


def test_identity_residuals_and_gram_eigenvalues():
    s = build_poly_system(2, appendix_b(2), 2)
    for kind in ("inner", "outer"):
        asm = assemble(CertificateProblem(kind, 3, s))
        sol = solve(asm.problem)
        assert sol.status == "optimal"
        res = identity_residuals(asm, sol)
        assert max(res.values()) <= 1e-7, res
        assert min(np.linalg.eigvalsh(Q)[0] for _, Q in gram_matrices(asm, sol)) >= -1e-8


def test_zero_mass_bound_flags_certificate():
    s = build_poly_system(2, appendix_b(2), 2)
    cert = compute_certificate(s, "inner", 2, a=0.0)
    if cert.u > 1e-6:
        assert not cert.certifies_invariance
    cert.u = 1.0
    assert not cert.certifies_invariance


def test_residual_check_flags_constructed_counterexample():
    s = build_poly_system(2, appendix_b(2), 2)
    n = s.nstate
    bad = Certificate(v=Polynomial.constant(n, -1.0), w=Polynomial.zero(n), u=0.0, k=1,
                      kind="inner", objective=0.0)
    rep = residual_check(bad, s, nsamples=2000)
    assert rep.w_minus_v_minus_1 == 0.0
    assert rep.boundary == pytest.approx(1.0)
    assert rep.failures() == ["v >= 0 on boundary"]
    assert not rep.passed


def test_certificate_json_round_trip(tmp_path):
    s = box_system([-t1])
    cert = compute_certificate(s, "inner", 2)
    cert.save(tmp_path / "c.json")
    back = Certificate.load(tmp_path / "c.json")
    assert back.v == cert.v and back.w == cert.w and back.u == cert.u and back.kind == "inner"


def test_robust_with_degenerate_box_matches_inner(certs):
    plain = certs.get(2, "inner", 3)
    robust = certs.get(2, "robust-inner", 3, unc_scale=0.0)
    assert robust.objective == pytest.approx(plain.objective, rel=1e-6)


def test_robust_monotone_in_box_size(certs):
    small = certs.get(2, "robust-inner", 3, taylor_order=0)
    large = certs.get(2, "robust-inner", 3, taylor_order=0, unc_scale=2.0)
    s = certs.system(2)
    pts = np.random.default_rng(5).uniform(size=(10_000, 1))
    from invkit.sos import sample_state_set
    pts = sample_state_set(s, 10_000, np.random.default_rng(5))
    in_small = small.v.evaluate_many(pts) < 0
    in_large = large.v.evaluate_many(pts) < 0
    # enlarging the uncertainty box never enlarges the robust set (up to solver noise on the boundary)
    assert np.count_nonzero(in_large & ~in_small) <= 10


def test_outer_gronwall_bound_along_polynomial_flow(certs):
    outer = certs.get(2, "outer", 3)
    s = certs.system(2)
    field = s.nominal_field()

    def rhs(t, z):
        return [f.evaluate(z) for f in field]

    rng = np.random.default_rng(2)
    from invkit.sos import sample_state_set
    starts = sample_state_set(s, 4000, rng)
    starts = starts[outer.v.evaluate_many(starts) < 0][:5]
    assert len(starts) > 0
    for z0 in starts:
        sol = solve_ivp(rhs, (0, 2.0), z0, rtol=1e-10, atol=1e-12, dense_output=True)
        ts = np.linspace(0, sol.t[-1], 400)
        zs = sol.sol(ts).T
        ok = (np.abs(zs[:, 2]) <= 1) & (zs[:, 0] >= -1)
        stop = np.argmin(ok) if not ok.all() else len(ts)
        v = outer.v.evaluate_many(zs[:stop])
        bound = outer.v.evaluate(z0) * np.exp(outer.beta * ts[:stop])
        assert np.all(v <= bound + 1e-6)


def test_lie_derivative_of_certificate_matches_residual_report(certs):
    cert = certs.get(2, "inner", 3)
    s = certs.system(2)
    lie = lie_derivative(cert.v, s.nominal_field())
    pt = s.equilibrium_scaled
    assert abs(lie.evaluate(pt)) < 1e-9


def test_robust_set_is_empty_when_the_uncertainty_can_pump_energy(certs):
    """With zeroth order bounds an admissible eps(t) drives even the equilibrium out of X.

    The robust MPI set is then empty, and so must be every sound robust inner set.
    """
    from invkit.models import equilibrium, taylor_remainder_bound

    p = appendix_b(2)
    e_max = taylor_remainder_bound("inverse-speed", 0, p).bound
    K = p.V_s * p.V_i / p.X_l

    def rhs(t, z):
        pe = K * math.sin(z[0])
        eps = -e_max * np.sign(z[1] * pe) if z[1] != 0 else e_max
        return [p.omega_n * z[1], (p.C_m - (1 + eps) * pe - p.D * z[1]) / (2 * p.H)]

    leave = lambda t, z: abs(z[0]) - math.pi
    leave.terminal = True
    sol = solve_ivp(rhs, (0, 60), [equilibrium(2, p)[0], 0.0], max_step=1e-3, events=leave)
    assert sol.status == 1 and np.abs(sol.y[1]).max() < p.omega_M
    robust = certs.get(2, "robust-inner", 3, taylor_order=0)
    from invkit.sos import sample_state_set
    pts = sample_state_set(certs.system(2, taylor_order=0), 20_000, np.random.default_rng(3))
    assert np.all(robust.v.evaluate_many(pts) >= 0)

"""SOS tightenings for invariant-set certificates.

Every polynomial identity is matched coefficient-wise in the quotient ring of
the circle ``x^2 + y^2 = 1``: monomials are reduced to normal form (degree in
``y`` at most one) by ``y^2 -> 1 - x^2``. This is exactly equivalent to adding
a free polynomial multiplier of the circle equation, and SOS multipliers are
likewise parametrized over normal-form monomials. Boundary faces are handled
by substituting the coordinates their equalities pin down.

Decision vector layout: ``[free: v, w] [nonneg: u] [psd: Gram blocks ...]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .models import PolySystem, build_poly_system, SmibParams
from .polyalg import MonomialBasis, Polynomial, lie_derivative
from .sdp import Block, ConicProblem, ConicSolution, smat, tril_indices
from .sets import SetDescription

U_TOL = 1e-6
_BASE = 64


class AssemblyError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class ExtractionError(RuntimeError):
    def __init__(self, status: str):
        self.status = status
        super().__init__(f"cannot extract a certificate from a solution with status {status!r}")


# ---------------------------------------------------------------------------
# quotient-ring helpers
# ---------------------------------------------------------------------------

def encode(exps: np.ndarray) -> np.ndarray:
    exps = np.asarray(exps, dtype=np.int64)
    if exps.size and exps.max() >= _BASE:
        raise AssemblyError(f"monomial degree {exps.max()} exceeds encoder range")
    w = _BASE ** np.arange(exps.shape[1], dtype=np.int64)
    return exps @ w


def decode(codes: np.ndarray, nvars: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    out = np.empty((codes.size, nvars), dtype=np.int64)
    rest = codes.copy()
    for i in range(nvars):
        out[:, i] = rest % _BASE
        rest //= _BASE
    return out


def reduce_circle_terms(exps: np.ndarray, coefs: np.ndarray, ix: int, iy: int, return_source: bool = False):
    """Rewrite ``y^b`` as ``y^(b mod 2) (1 - x^2)^(b // 2)`` term by term.

    With ``return_source`` the input row each output term came from is returned too.
    """
    exps = np.asarray(exps, dtype=np.int64)
    coefs = np.asarray(coefs, dtype=float)
    src = np.arange(len(coefs))
    q = exps[:, iy] // 2
    keep = q == 0
    out_e, out_c, out_s = [exps[keep]], [coefs[keep]], [src[keep]]
    for qq in np.unique(q[~keep]):
        sel = q == qq
        base = exps[sel].copy()
        base[:, iy] %= 2
        for j in range(qq + 1):
            e = base.copy()
            e[:, ix] += 2 * j
            out_e.append(e)
            out_c.append(coefs[sel] * (comb(int(qq), j) * (-1) ** j))
            out_s.append(src[sel])
    if return_source:
        return np.concatenate(out_e), np.concatenate(out_c), np.concatenate(out_s)
    return np.concatenate(out_e), np.concatenate(out_c)


def combine(codes: np.ndarray, coefs: np.ndarray):
    uniq, inv = np.unique(codes, return_inverse=True)
    return uniq, np.bincount(inv, weights=coefs, minlength=len(uniq))


def reduce_poly(p: Polynomial, circle: tuple[int, int] | None = (0, 1)) -> Polynomial:
    """Normal form of ``p`` modulo ``x^2 + y^2 - 1`` (identity when ``circle`` is None)."""
    if p.is_zero() or circle is None:
        return p
    exps = np.array([e for e, _ in p.items()], dtype=np.int64)
    coefs = np.array([c for _, c in p.items()])
    e2, c2 = reduce_circle_terms(exps, coefs, *circle)
    codes, vals = combine(encode(e2), c2)
    return Polynomial.from_coefficients([tuple(r) for r in decode(codes, p.nvars)], vals, p.nvars)


def normal_basis(nvars: int, degree: int, active: Sequence[int], circle: tuple[int, int] | None) -> MonomialBasis:
    """Monomials of degree <= ``degree`` in the ``active`` variables, in normal form."""
    if degree < 0:
        return MonomialBasis(nvars, 0, [])
    sub = MonomialBasis(len(active), degree)
    mons = []
    for m in sub:
        e = [0] * nvars
        for k, i in enumerate(active):
            e[i] = m[k]
        if circle is not None and circle[1] in active and e[circle[1]] > 1:
            continue
        mons.append(tuple(e))
    return MonomialBasis(nvars, degree, mons)


def reference_moments(basis: MonomialBasis | Sequence[Sequence[int]], system: PolySystem) -> np.ndarray:
    """Moments of the normalized uniform measure on circle x [-1, 1]^r."""
    mons = list(basis)
    intervals = system.interval_vars
    out = np.zeros(len(mons))
    for k, m in enumerate(mons):
        val = 1.0
        if system.circle is not None:
            a, b = m[system.circle[0]], m[system.circle[1]]
            if a % 2 or b % 2:
                continue
            val = _double_fact(a - 1) * _double_fact(b - 1) / _double_fact(a + b)
        for i in intervals:
            ci = m[i]
            if ci % 2:
                val = 0.0
                break
            val /= ci + 1
        out[k] = val
    return out


def _double_fact(n: int) -> float:
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


# ---------------------------------------------------------------------------
# problem and certificate types
# ---------------------------------------------------------------------------

@dataclass
class CertificateProblem:
    kind: str
    k: int
    system: PolySystem
    a: float = 100.0
    beta: float = 1.0
    multipliers: str = "full"  # full | truncated
    match_degree: int | None = None

    def __post_init__(self):
        if self.multipliers not in ("full", "truncated"):
            raise ConfigurationError(f"unknown multiplier sizing {self.multipliers!r}")
        if self.kind not in ("inner", "outer", "robust-inner"):
            raise ConfigurationError(f"unknown certificate kind {self.kind!r}")
        if self.k < 1:
            raise ConfigurationError("relaxation order k must be >= 1")
        if self.a < 0:
            raise ConfigurationError("mass bound a must be >= 0")


@dataclass
class Certificate:
    v: Polynomial
    w: Polynomial
    u: float
    k: int
    kind: str
    objective: float
    beta: float = 1.0
    a: float = 100.0
    status: str = "optimal"
    u_tol: float = U_TOL
    meta: dict = field(default_factory=dict)

    @property
    def certifies_invariance(self) -> bool:
        if self.kind == "outer":
            return True
        return self.u <= self.u_tol

    def to_json(self) -> dict:
        return {"kind": self.kind, "k": self.k, "u": self.u, "objective": self.objective,
                "beta": self.beta, "a": self.a, "status": self.status, "u_tol": self.u_tol,
                "certifies_invariance": self.certifies_invariance,
                "v": self.v.to_json(), "w": self.w.to_json(), "meta": self.meta}

    @classmethod
    def from_json(cls, d: dict) -> "Certificate":
        return cls(v=Polynomial.from_json(d["v"]), w=Polynomial.from_json(d["w"]), u=float(d["u"]),
                   k=int(d["k"]), kind=d["kind"], objective=float(d["objective"]),
                   beta=float(d.get("beta", 1.0)), a=float(d.get("a", 100.0)),
                   status=d.get("status", "optimal"), u_tol=float(d.get("u_tol", U_TOL)),
                   meta=d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "Certificate":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class GramBlock:
    identity: str
    multiplier: Polynomial
    basis: MonomialBasis
    block_index: int


@dataclass
class Assembly:
    """Assembled conic program plus the bookkeeping needed to read it back."""

    problem: ConicProblem
    cert_problem: CertificateProblem
    v_basis: MonomialBasis
    w_basis: MonomialBasis
    v_cols: np.ndarray
    w_cols: np.ndarray
    u_col: int | None
    grams: list
    identities: dict  # name -> (row slice, description)
    nvars: int


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

class _Builder:
    def __init__(self, nvars: int, circle: tuple[int, int] | None):
        self.nvars = nvars
        self.circle = circle
        self.blocks: list[Block] = []
        self.offsets: list[int] = []
        self.ncols = 0
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        self.nrows = 0
        self.identities: dict = {}

    def add_block(self, kind: str, dim: int) -> int:
        self.blocks.append(Block(kind, dim))
        self.offsets.append(self.ncols)
        self.ncols += self.blocks[-1].size
        return len(self.blocks) - 1

    def identity(self, name: str, terms: list, const: Polynomial | None):
        """Add rows ``sum(terms) = const`` matched over normal-form monomials.

        ``terms`` holds ``(exps, cols, coefs)`` triples: monomial exponents,
        decision-variable column and coefficient for each elementary product.
        """
        E = [t[0] for t in terms if len(t[0])]
        C = [t[1] for t in terms if len(t[0])]
        V = [t[2] for t in terms if len(t[0])]
        exps = np.concatenate(E) if E else np.zeros((0, self.nvars), dtype=np.int64)
        cols = np.concatenate(C) if C else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(V) if V else np.zeros(0)
        if self.circle is not None:
            e2, vals2, src = reduce_circle_terms(exps, vals, *self.circle, return_source=True)
        else:
            e2, vals2, src = exps, vals, np.arange(len(vals))
        codes = encode(e2)
        cols2 = cols[src]
        const_codes = np.zeros(0, dtype=np.int64)
        const_vals = np.zeros(0)
        if const is not None and not const.is_zero():
            ce = np.array([e for e, _ in const.items()], dtype=np.int64)
            cc = np.array([c for _, c in const.items()])
            if self.circle is not None:
                ce, cc = reduce_circle_terms(ce, cc, *self.circle)
            const_codes, const_vals = combine(encode(ce), cc)
        all_codes = np.unique(np.concatenate([codes, const_codes]))
        row_of = np.searchsorted(all_codes, codes)
        rhs = np.zeros(len(all_codes))
        rhs[np.searchsorted(all_codes, const_codes)] = const_vals
        start = self.nrows
        self.rows.append(start + row_of)
        self.cols.append(cols2)
        self.vals.append(vals2)
        self.b.append(rhs)
        self.nrows += len(all_codes)
        self.identities[name] = (slice(start, self.nrows), all_codes)

    def finish(self, c: np.ndarray) -> ConicProblem:
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(self.nrows, self.ncols))
        A.sum_duplicates()
        A.eliminate_zeros()
        labels = []
        for name, (sl, codes) in self.identities.items():
            labels.extend(f"{name}:{tuple(e)}" for e in decode(codes, self.nvars))
        return ConicProblem(self.blocks, c, A, np.concatenate(self.b), labels)


def _gram_terms(builder: _Builder, basis: MonomialBasis, g: Polynomial, sign: float, block: int):
    """Elementary products of the Gram parametrization ``sign * g * m^T Q m``."""
    n = len(basis)
    B = basis.exponents()
    ii, jj, sc = tril_indices(n)
    off = builder.offsets[block]
    exps_l, cols_l, vals_l = [], [], []
    pair = B[ii] + B[jj]
    cols = off + np.arange(len(ii))
    for te, tc in g.items():
        exps_l.append(pair + np.array(te, dtype=np.int64))
        cols_l.append(cols)
        vals_l.append(sign * tc * sc)
    return np.concatenate(exps_l), np.concatenate(cols_l), np.concatenate(vals_l)


def _poly_terms(polys: Sequence[Polynomial], cols: np.ndarray, scale: float = 1.0):
    """Terms of ``sum_j col_j * polys[j]``."""
    e, c, v = [], [], []
    for p, col in zip(polys, cols):
        for te, tc in p.items():
            e.append(te)
            c.append(col)
            v.append(scale * tc)
    nv = polys[0].nvars if polys else 0
    return (np.array(e, dtype=np.int64).reshape(len(e), nv), np.array(c, dtype=np.int64), np.array(v))


def _multiplier_degree(k: int, g: Polynomial) -> int:
    return (2 * k - g.degree) // 2


def _add_putinar(builder: _Builder, grams: list, name: str, k: int, nvars: int,
                 ineqs: Sequence[Polynomial], active: Sequence[int], circle) -> list:
    terms = []
    for g in [Polynomial.constant(nvars, 1.0)] + list(ineqs):
        d = _multiplier_degree(k, g)
        if d < 0:
            continue
        circ = circle if circle is not None and circle[1] in active and circle[0] in active else None
        basis = normal_basis(nvars, d, active, circ)
        if len(basis) == 0:
            continue
        blk = builder.add_block("psd", len(basis))
        grams.append(GramBlock(name, g, basis, blk))
        terms.append((basis, g, blk))
    return terms


def assemble(cp: CertificateProblem) -> Assembly:
    """Build the conic program for an inner, robust-inner or outer certificate."""
    system = cp.system
    k = cp.k
    robust = cp.kind == "robust-inner"
    if robust and not system.uncertainty:
        raise ConfigurationError("robust-inner needs a nonempty uncertainty list; use the inner builder")
    if cp.kind == "outer" and not cp.beta > 0:
        raise ConfigurationError("outer certificates need beta > 0")
    ns = system.nstate
    nv = system.nvars if robust else ns
    circle = system.circle
    if robust:
        field_ = list(system.field)
        unc_ineqs = [Polynomial.constant(nv, 1.0) - Polynomial.variable(nv, u.index) ** 2
                     for u in system.uncertainty]
        ineqs1 = [g for g in system.ineqs] + unc_ineqs
    else:
        field_ = system.nominal_field()
        ineqs1 = system.state_ineqs()
    ineqs = system.state_ineqs()
    faces = system.state_faces()
    state_vars = list(range(ns))

    vb = normal_basis(ns, 2 * k, state_vars, circle)
    wb = vb
    lie_polys = []
    fdeg = max(f.degree for f in field_)
    for m in vb:
        mono = Polynomial.monomial(m).extend(nv) if nv > ns else Polynomial.monomial(m)
        lie_polys.append(lie_derivative(mono, field_))
    need = 2 * k - 1 + fdeg
    if cp.match_degree is not None and need > cp.match_degree:
        raise AssemblyError(f"grad v . f has degree {need}; matching degree {cp.match_degree} "
                            f"is too small (required {need})")
    # full: the dynamics multipliers reach deg(grad v . f), so v keeps degree 2k;
    # truncated: multipliers stop at 2k and the excess coefficients of grad v . f are forced to zero
    kd = k if cp.multipliers == "truncated" else max(k, (need + 1) // 2)

    bld = _Builder(nv, circle)
    bfree = bld.add_block("free", 2 * len(vb))
    v_cols = np.arange(len(vb))
    w_cols = len(vb) + np.arange(len(wb))
    u_col = None
    if cp.kind != "outer":
        bnn = bld.add_block("nonneg", 1)
        u_col = bld.offsets[bnn]

    grams: list[GramBlock] = []

    # identity 1: dynamics
    id1 = _add_putinar(bld, grams, "dynamics", kd, nv, ineqs1, list(range(nv)), circle)
    terms = [_poly_terms(lie_polys, v_cols, -1.0)]
    if cp.kind == "outer":
        v_polys = [Polynomial.monomial(m).extend(nv) if nv > ns else Polynomial.monomial(m) for m in vb]
        terms.append(_poly_terms(v_polys, v_cols, cp.beta))
    else:
        terms.append((np.zeros((1, nv), dtype=np.int64), np.array([u_col]), np.array([1.0])))
    for basis, g, blk in id1:
        terms.append(_gram_terms(bld, basis, g, -1.0, blk))
    bld.identity("dynamics", terms, None)

    # identity 2: w - v - 1 = sos
    mon_polys = [Polynomial.monomial(m) for m in vb]
    id2 = _add_putinar(bld, grams, "w-v-1", k, ns, ineqs, state_vars, circle)
    terms = [_poly_terms(mon_polys, w_cols, 1.0), _poly_terms(mon_polys, v_cols, -1.0)]
    for basis, g, blk in id2:
        terms.append(_gram_terms(bld, basis, g, -1.0, blk))
    bld_nv = bld.nvars
    bld.nvars = ns
    bld.identity("w-v-1", terms, Polynomial.constant(ns, 1.0))

    # identity 3: w = sos
    id3 = _add_putinar(bld, grams, "w", k, ns, ineqs, state_vars, circle)
    terms = [_poly_terms(mon_polys, w_cols, 1.0)]
    for basis, g, blk in id3:
        terms.append(_gram_terms(bld, basis, g, -1.0, blk))
    bld.identity("w", terms, None)

    # identity 4: v >= 0 on each boundary face
    if cp.kind != "outer":
        for F in faces:
            active = [i for i in state_vars if i not in F.fixed]
            fixed_polys = []
            for p in mon_polys:
                q = p
                for var, val in F.fixed.items():
                    q = q.fix(var, val)
                fixed_polys.append(q)
            face_ineqs = []
            for g in F.ineqs:
                q = g
                for var, val in F.fixed.items():
                    q = q.fix(var, val)
                if q.degree > 0:
                    face_ineqs.append(q)
            idf = _add_putinar(bld, grams, f"face {F.label}", k, ns, face_ineqs, active, circle)
            terms = [_poly_terms(fixed_polys, v_cols, 1.0)]
            for basis, g, blk in idf:
                terms.append(_gram_terms(bld, basis, g, -1.0, blk))
            bld.identity(f"face {F.label}", terms, None)
    bld.nvars = bld_nv

    c = np.zeros(bld.ncols)
    c[w_cols] = reference_moments(wb, system)
    if u_col is not None:
        c[u_col] = cp.a
    problem = bld.finish(c)
    problem.var_labels = {"v": v_cols, "w": w_cols, "u": u_col}
    return Assembly(problem, cp, vb, wb, v_cols, w_cols, u_col, grams,
                    {n: sl for n, (sl, _) in bld.identities.items()}, nv)


def build_inner(cp: CertificateProblem) -> ConicProblem:
    if cp.kind != "inner":
        raise ConfigurationError("build_inner needs kind='inner'")
    return assemble(cp).problem


def build_robust(cp: CertificateProblem) -> ConicProblem:
    if cp.kind != "robust-inner":
        raise ConfigurationError("build_robust needs kind='robust-inner'")
    return assemble(cp).problem


def build_outer(cp: CertificateProblem) -> ConicProblem:
    if cp.kind != "outer":
        raise ConfigurationError("build_outer needs kind='outer'")
    return assemble(cp).problem


# ---------------------------------------------------------------------------
# extraction and validation
# ---------------------------------------------------------------------------

def extract_certificate(asm: Assembly, solution: ConicSolution) -> Certificate:
    if solution.status not in ("optimal", "near"):
        raise ExtractionError(solution.status)
    cp = asm.cert_problem
    x = solution.x
    ns = cp.system.nstate
    v = Polynomial.from_coefficients(asm.v_basis.monomials, x[asm.v_cols], ns)
    w = Polynomial.from_coefficients(asm.w_basis.monomials, x[asm.w_cols], ns)
    u = float(x[asm.u_col]) if asm.u_col is not None else 0.0
    sysd = cp.system
    meta = {"order": sysd.order, "taylor_order": sysd.taylor_order, "params": sysd.params.to_dict() if sysd.params is not None else None,
            "state_names": sysd.state_names,
            "uncertainty": [(q.name, q.lower, q.upper) for q in sysd.uncertainty] if cp.kind == "robust-inner" else [],
            "solver": {"status": solution.status, "iterations": solution.iterations,
                       "time": solution.solve_time, **{k_: float(v_) for k_, v_ in solution.residuals.items()}},
            "size": asm.problem.summary()}
    return Certificate(v=v, w=w, u=u, k=cp.k, kind=cp.kind, objective=float(solution.primal_objective),
                       beta=cp.beta, a=cp.a, status=solution.status, meta=meta)


def gram_matrices(asm: Assembly, solution: ConicSolution) -> list[tuple[GramBlock, np.ndarray]]:
    return [(g, asm.problem.block_value(solution.x, g.block_index)) for g in asm.grams]


def identity_residuals(asm: Assembly, solution: ConicSolution) -> dict:
    """Max coefficient of (lhs - rhs) per identity, rebuilt with polynomial arithmetic."""
    cp = asm.cert_problem
    system = cp.system
    cert = extract_certificate(asm, solution) if solution.status in ("optimal", "near") else None
    if cert is None:
        raise ExtractionError(solution.status)
    ns = system.nstate
    nv = asm.nvars
    circle = system.circle
    sos_sum: dict[str, Polynomial] = {}
    for gb, Q in gram_matrices(asm, solution):
        nvq = gb.multiplier.nvars
        B = gb.basis.exponents()
        terms: dict = {}
        for i in range(len(B)):
            for j in range(len(B)):
                q = Q[i, j]
                if q == 0.0:
                    continue
                e = tuple(B[i] + B[j])
                terms[e] = terms.get(e, 0.0) + q
        sig = Polynomial(nvq, terms, prune_tol=0.0) * gb.multiplier
        sos_sum[gb.identity] = sos_sum.get(gb.identity, Polynomial.zero(nvq)) + sig
    out = {}
    robust = cp.kind == "robust-inner"
    field_ = list(system.field) if robust else system.nominal_field()
    v_ext = cert.v.extend(nv) if nv > ns else cert.v
    lhs1 = -lie_derivative(v_ext, field_)
    lhs1 = lhs1 + (v_ext * cp.beta if cp.kind == "outer" else Polynomial.constant(nv, cert.u))
    out["dynamics"] = reduce_poly(lhs1 - sos_sum["dynamics"], circle).max_abs_coef()
    out["w-v-1"] = reduce_poly(cert.w - cert.v - 1.0 - sos_sum["w-v-1"], circle).max_abs_coef()
    out["w"] = reduce_poly(cert.w - sos_sum["w"], circle).max_abs_coef()
    if cp.kind != "outer":
        for F in system.state_faces():
            name = f"face {F.label}"
            vf = cert.v
            for var, val in F.fixed.items():
                vf = vf.fix(var, val)
            out[name] = reduce_poly(vf - sos_sum.get(name, Polynomial.zero(ns)), circle).max_abs_coef()
    return out


# ---------------------------------------------------------------------------
# sampling-based residual check
# ---------------------------------------------------------------------------

def sample_state_set(system: PolySystem, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples of the reference measure: angle on the circle x boxes."""
    pts = np.empty((n, system.nstate))
    if system.circle is not None:
        th = rng.uniform(-math.pi, math.pi, n)
        ix, iy = system.circle
        pts[:, ix] = np.cos(th)
        pts[:, iy] = np.sin(th)
    for i in system.interval_vars:
        pts[:, i] = rng.uniform(-1.0, 1.0, n)
    return pts


def sample_face(system: PolySystem, face: SetDescription, n: int, rng) -> np.ndarray:
    pts = sample_state_set(system, n, rng)
    for var, val in face.fixed.items():
        pts[:, var] = val
    return pts


@dataclass
class ResidualReport:
    dynamics: float
    w_minus_v_minus_1: float
    w_nonneg: float
    boundary: float
    nsamples: int
    seed: int
    tol: float = 1e-6

    @property
    def worst(self) -> float:
        return max(self.dynamics, self.w_minus_v_minus_1, self.w_nonneg, self.boundary)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def failures(self) -> list[str]:
        names = {"dynamics": self.dynamics, "w >= v+1": self.w_minus_v_minus_1,
                 "w >= 0": self.w_nonneg, "v >= 0 on boundary": self.boundary}
        return [k for k, v in names.items() if v > self.tol]

    def to_json(self) -> dict:
        return {"dynamics": self.dynamics, "w_minus_v_minus_1": self.w_minus_v_minus_1,
                "w_nonneg": self.w_nonneg, "boundary": self.boundary, "nsamples": self.nsamples,
                "seed": self.seed, "tol": self.tol, "passed": self.passed}


def residual_check(cert: Certificate, system: PolySystem, nsamples: int = 20000, seed: int = 0,
                   tol: float = 1e-6) -> ResidualReport:
    """Largest sampled violation of each certificate inequality (0 means satisfied)."""
    rng = np.random.default_rng(seed)
    pts = sample_state_set(system, nsamples, rng)
    # include the corners of the boxes along the sampled angles
    ns = system.nstate
    robust = cert.kind == "robust-inner"
    if robust:
        nv = system.nvars
        lie = lie_derivative(cert.v.extend(nv), system.field)
        dyn = -np.inf * np.ones(nsamples)
        nunc = len(system.uncertainty)
        for corner in range(2 ** nunc):
            eps = [1.0 if (corner >> j) & 1 else -1.0 for j in range(nunc)]
            full = np.hstack([pts, np.tile(eps, (nsamples, 1))])
            dyn = np.maximum(dyn, lie.evaluate_many(full))
    else:
        lie = lie_derivative(cert.v, system.nominal_field())
        dyn = lie.evaluate_many(pts)
    vv = cert.v.evaluate_many(pts)
    ww = cert.w.evaluate_many(pts)
    if cert.kind == "outer":
        dyn_v = dyn - cert.beta * vv
    else:
        dyn_v = dyn - cert.u
    boundary = 0.0
    if cert.kind != "outer":
        per_face = max(1000, nsamples // max(1, len(system.boundary_faces)))
        for F in system.state_faces():
            fp = sample_face(system, F, per_face, rng)
            boundary = max(boundary, float(np.max(-cert.v.evaluate_many(fp))))
    return ResidualReport(dynamics=max(0.0, float(dyn_v.max())),
                          w_minus_v_minus_1=max(0.0, float(np.max(-(ww - vv - 1.0)))),
                          w_nonneg=max(0.0, float(np.max(-ww))),
                          boundary=max(0.0, boundary), nsamples=nsamples, seed=seed, tol=tol)


# ---------------------------------------------------------------------------
# convenience pipeline
# ---------------------------------------------------------------------------

def compute_certificate(system: PolySystem, kind: str, k: int, a: float = 100.0, beta: float = 1.0,
                        tol: float = 1e-8, quiet: bool = True, return_assembly: bool = False,
                        multipliers: str = "full"):
    from .sdp import solve

    cp = CertificateProblem(kind=kind, k=k, system=system, a=a, beta=beta, multipliers=multipliers)
    asm = assemble(cp)
    sol = solve(asm.problem, tol=tol, quiet=quiet)
    cert = extract_certificate(asm, sol)
    if return_assembly:
        return cert, asm, sol
    return cert

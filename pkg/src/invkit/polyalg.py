"""Sparse multivariate polynomials over indexed variables.

Polynomials are immutable maps ``exponent tuple -> float`` with a fixed number
of variables. Variable names live at the system level; the kernel only knows
indices. Iteration order is graded lexicographic (total degree first, then
descending lex on the exponent tuple), so ``basis(2, 1)`` lists ``1, x, y``.
"""

from __future__ import annotations

from itertools import combinations_with_replacement
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-14


class DimensionError(ValueError):
    pass


class DegenerateScalingError(ValueError):
    pass


def grlex_key(exps: Sequence[int]) -> tuple:
    return (sum(exps), tuple(-e for e in exps))


class Polynomial:
    """Immutable sparse polynomial.

    ``terms`` maps exponent tuples (length ``nvars``) to coefficients. Entries
    with magnitude below ``prune_tol`` are dropped on construction.
    """

    __slots__ = ("nvars", "_terms")

    def __init__(self, nvars: int, terms: Mapping[tuple, float] | None = None,
                 prune_tol: float = PRUNE_TOL):
        self.nvars = int(nvars)
        clean = {}
        if terms:
            for e, c in terms.items():
                e = tuple(int(k) for k in e)
                if len(e) != self.nvars:
                    raise DimensionError(f"exponent {e} has length {len(e)}, expected {self.nvars}")
                if any(k < 0 for k in e):
                    raise ValueError(f"negative exponent in {e}")
                c = float(c)
                if abs(c) > prune_tol:
                    clean[e] = c
        self._terms = dict(sorted(clean.items(), key=lambda t: grlex_key(t[0])))

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, c: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars: int, i: int) -> "Polynomial":
        if not 0 <= i < nvars:
            raise DimensionError(f"variable index {i} out of range for {nvars} variables")
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, exps: Sequence[int], coef: float = 1.0) -> "Polynomial":
        return cls(len(exps), {tuple(exps): coef})

    # -- accessors --------------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coef(self, exps: Sequence[int]) -> float:
        return self._terms.get(tuple(exps), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        if not self._terms:
            return -1
        return max(sum(e) for e in self._terms)

    def degree_in(self, var: int) -> int:
        if not self._terms:
            return -1
        return max(e[var] for e in self._terms)

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # -- arithmetic -------------------------------------------------------
    def _check(self, other: "Polynomial"):
        if self.nvars != other.nvars:
            raise DimensionError(f"nvars mismatch: {self.nvars} vs {other.nvars}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def scale(self, s: float) -> "Polynomial":
        return Polynomial(self.nvars, {e: s * c for e, c in self._terms.items()})

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(self.nvars, 1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        return hash((self.nvars, tuple(self._terms.items())))

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        return (self - other).max_abs_coef() <= atol

    def __repr__(self):
        if not self._terms:
            return f"Polynomial({self.nvars}, 0)"
        parts = []
        for e, c in self._terms.items():
            mono = "*".join(f"x{i}^{k}" if k > 1 else f"x{i}" for i, k in enumerate(e) if k)
            parts.append(f"{c:+.6g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial({self.nvars}, {' '.join(parts)})"

    # -- calculus and evaluation -----------------------------------------
    def differentiate(self, var: int) -> "Polynomial":
        if not 0 <= var < self.nvars:
            raise DimensionError(f"variable index {var} out of range")
        out = {}
        for e, c in self._terms.items():
            k = e[var]
            if k:
                ne = list(e)
                ne[var] = k - 1
                out[tuple(ne)] = c * k
        return Polynomial(self.nvars, out)

    def evaluate(self, point: Sequence[float]) -> float:
        if len(point) != self.nvars:
            raise DimensionError(f"point has {len(point)} coordinates, expected {self.nvars}")
        total = 0.0
        for e, c in self._terms.items():
            t = c
            for xi, k in zip(point, e):
                if k:
                    t *= xi ** k
            total += t
        return total

    def __call__(self, *point):
        return self.evaluate(point)

    def evaluate_many(self, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Vectorized evaluation at the rows of ``points`` (shape ``(N, nvars)``)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.nvars:
            raise DimensionError(f"points have {pts.shape[1]} columns, expected {self.nvars}")
        out = np.zeros(pts.shape[0])
        if not self._terms:
            return out
        exps = np.array(list(self._terms.keys()), dtype=np.int64).reshape(len(self._terms), self.nvars)
        coefs = np.array(list(self._terms.values()))
        maxdeg = exps.max(axis=0) if self.nvars else np.zeros(0, dtype=np.int64)
        for start in range(0, pts.shape[0], chunk):
            block = pts[start:start + chunk]
            prod = np.ones((block.shape[0], len(coefs)))
            for v in range(self.nvars):
                if maxdeg[v] == 0:
                    continue
                powers = block[:, v:v + 1] ** np.arange(maxdeg[v] + 1)
                prod *= powers[:, exps[:, v]]
            out[start:start + chunk] = prod @ coefs
        return out

    def substitute(self, var: int, a: float, b: float = 0.0) -> "Polynomial":
        """Replace variable ``var`` by the affine expression ``a*t + b``."""
        if a == 0:
            raise DegenerateScalingError("affine substitution with a = 0 collapses the variable")
        if not 0 <= var < self.nvars:
            raise DimensionError(f"variable index {var} out of range")
        if a == 1.0 and b == 0.0:
            return self
        out: dict = {}
        for e, c in self._terms.items():
            k = e[var]
            for j in range(k + 1):
                # (a t + b)^k = sum_j C(k, j) a^j b^(k-j) t^j
                w = comb(k, j) * a ** j * (b ** (k - j) if k - j else 1.0)
                if w == 0.0:
                    continue
                ne = list(e)
                ne[var] = j
                ne = tuple(ne)
                out[ne] = out.get(ne, 0.0) + c * w
        return Polynomial(self.nvars, out)

    def fix(self, var: int, value: float) -> "Polynomial":
        """Set ``var`` to a constant; the variable stays in the index space."""
        out: dict = {}
        for e, c in self._terms.items():
            k = e[var]
            ne = list(e)
            ne[var] = 0
            ne = tuple(ne)
            out[ne] = out.get(ne, 0.0) + c * (value ** k if k else 1.0)
        return Polynomial(self.nvars, out)

    def extend(self, nvars: int) -> "Polynomial":
        """Append passive variables so the polynomial lives in ``nvars`` variables."""
        if nvars < self.nvars:
            raise DimensionError("cannot shrink variable space")
        pad = (0,) * (nvars - self.nvars)
        return Polynomial(nvars, {e + pad: c for e, c in self._terms.items()})

    # -- serialization ----------------------------------------------------
    def to_json(self) -> dict:
        return {"nvars": self.nvars,
                "terms": [{"exp": list(e), "coef": c} for e, c in self._terms.items()]}

    @classmethod
    def from_json(cls, data: Mapping) -> "Polynomial":
        return cls(int(data["nvars"]), {tuple(t["exp"]): float(t["coef"]) for t in data["terms"]})

    @classmethod
    def from_coefficients(cls, monomials: Sequence[Sequence[int]], coefs: Iterable[float],
                          nvars: int | None = None, prune_tol: float = PRUNE_TOL) -> "Polynomial":
        monomials = [tuple(m) for m in monomials]
        if nvars is None:
            nvars = len(monomials[0]) if monomials else 0
        out: dict = {}
        for m, c in zip(monomials, coefs):
            out[m] = out.get(m, 0.0) + float(c)
        return cls(nvars, out, prune_tol=prune_tol)


def arith(p: Polynomial, q, op: str) -> Polynomial:
    """Functional form of the arithmetic operators (``add``, ``sub``, ``mul``, ``scale``)."""
    if op == "scale":
        return p.scale(float(q))
    if not isinstance(q, Polynomial):
        raise TypeError("add/sub/mul need a Polynomial operand")
    if p.nvars != q.nvars:
        raise DimensionError(f"nvars mismatch: {p.nvars} vs {q.nvars}")
    if op == "add":
        return p + q
    if op == "sub":
        return p - q
    if op == "mul":
        return p * q
    raise ValueError(f"unknown op {op!r}")


def differentiate(p: Polynomial, var: int) -> Polynomial:
    return p.differentiate(var)


def evaluate(p: Polynomial, point: Sequence[float]) -> float:
    return p.evaluate(point)


def substitute(p: Polynomial, var: int, a: float, b: float = 0.0) -> Polynomial:
    return p.substitute(var, a, b)


def lie_derivative(v: Polynomial, field: Sequence[Polynomial]) -> Polynomial:
    """Return ``sum_i dv/dx_i * f_i``.

    ``field`` may be shorter than ``v.nvars``: trailing variables (uncertain
    parameters) are passive and carry a zero field.
    """
    if len(field) > v.nvars:
        raise DimensionError(f"field has {len(field)} components but v has {v.nvars} variables")
    out = Polynomial.zero(v.nvars)
    for i, fi in enumerate(field):
        if fi.nvars != v.nvars:
            raise DimensionError(f"field component {i} has {fi.nvars} variables, expected {v.nvars}")
        d = v.differentiate(i)
        if not d.is_zero() and not fi.is_zero():
            out = out + d * fi
    return out


class MonomialBasis:
    """All monomials of total degree ``<= degree`` in ``nvars`` variables, grlex ordered."""

    def __init__(self, nvars: int, degree: int, monomials: list[tuple] | None = None):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        self.nvars = nvars
        self.degree = degree
        if monomials is None:
            monomials = _all_monomials(nvars, degree)
        self.monomials = monomials
        self._index = {m: i for i, m in enumerate(monomials)}

    def __len__(self):
        return len(self.monomials)

    def __iter__(self):
        return iter(self.monomials)

    def __getitem__(self, i):
        return self.monomials[i]

    def index(self, m: Sequence[int]) -> int:
        return self._index[tuple(m)]

    def __contains__(self, m):
        return tuple(m) in self._index

    def exponents(self) -> np.ndarray:
        return np.array(self.monomials, dtype=np.int64).reshape(len(self.monomials), self.nvars)

    def filtered(self, keep) -> "MonomialBasis":
        return MonomialBasis(self.nvars, self.degree, [m for m in self.monomials if keep(m)])


def _all_monomials(nvars: int, degree: int) -> list[tuple]:
    out = []
    for d in range(degree + 1):
        layer = []
        for combo in combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            layer.append(tuple(e))
        layer.sort(key=lambda e: tuple(-k for k in e))
        out.extend(layer)
    return out


def basis(nvars: int, degree: int) -> MonomialBasis:
    return MonomialBasis(nvars, degree)


def basis_size(nvars: int, degree: int) -> int:
    return comb(nvars + degree, degree)

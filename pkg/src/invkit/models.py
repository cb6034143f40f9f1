"""Single machine infinite bus models and their polynomial reformulation.

Physical states are ``(delta, omega, e_q', E_vf)`` truncated to the model
order, where ``omega = omega_s - 1`` is the per-unit speed deviation. The
polynomial models live in scaled coordinates ``(x, y, wbar[, ebar[, Ebar]])``
with ``x = cos(delta)``, ``y = sin(delta)``, ``wbar = omega / omega_M``,
``ebar = e_q'/e_q,eq - 1`` and ``Ebar = E_vf/E_vf,eq - 1``; Taylor remainders
enter as extra scaled uncertainty variables in ``[-1, 1]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .polyalg import Polynomial
from .sets import SetDescription

X, Y, W, EQ, EF = 0, 1, 2, 3, 4

STATE_NAMES = {
    2: ["x", "y", "wbar"],
    3: ["x", "y", "wbar", "ebar"],
    4: ["x", "y", "wbar", "ebar", "Ebar"],
}
PHYSICAL_NAMES = {
    2: ["delta", "omega"],
    3: ["delta", "omega", "eq_prime"],
    4: ["delta", "omega", "eq_prime", "E_vf"],
}


class ValidationError(ValueError):
    pass


class NoEquilibriumError(RuntimeError):
    pass


class InvalidBoundError(ValueError):
    pass


class RangeError(ValueError):
    def __init__(self, variable: str, value: float, msg: str = ""):
        self.variable = variable
        self.value = value
        super().__init__(msg or f"{variable}={value!r} is outside the scaling domain")


class SingularityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SmibParams:
    omega_n: float = 314.0
    H: float = 5.0
    D: float = 1.0
    V_s: float = 1.0
    V_i: float = 1.0
    X_l: float = 0.8
    C_m: float = 0.6
    x_d: float = 2.5
    x_q: float = 2.5
    x_d_prime: float = 0.4
    T_d0_prime: float = 10.0
    T_E: float = 0.3
    kappa: float = 25.0
    V_ref: float | None = None
    E_vf_bar: float = 1.85
    omega_M: float = 0.05
    fault_reactance: float | None = None
    exciter_ceiling: float = 5.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.H > 0, "H must be > 0"),
            (self.T_d0_prime > 0, "T_d0_prime must be > 0"),
            (self.T_E > 0, "T_E must be > 0"),
            (self.X_l > 0, "X_l must be > 0"),
            (0 < self.omega_M < 1, "omega_M must lie in (0, 1)"),
            (self.x_d_prime < self.x_d, "x_d_prime must be < x_d"),
            (self.fault_reactance is None or self.fault_reactance > 0,
             "fault_reactance must be > 0 when given"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)

    def replace(self, **changes) -> "SmibParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SmibParams":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "SmibParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def appendix_b(order: int = 2, **overrides) -> SmibParams:
    """Test-system parameters; the line reactance depends on the model order."""
    if order not in (2, 3, 4):
        raise ValidationError(f"model order must be 2, 3 or 4, got {order}")
    base = dict(X_l=0.8 if order == 2 else 0.2)
    base.update(overrides)
    return SmibParams(**base)


PRESETS = {"appendixB": appendix_b}


# ---------------------------------------------------------------------------
# physical model
# ---------------------------------------------------------------------------

def _coupling(p: SmibParams) -> float:
    return (p.x_d - p.x_d_prime) / (p.x_d_prime + p.X_l)


def _voltage_coeffs(p: SmibParams) -> tuple[float, float, float]:
    a = p.x_q * p.V_i / (p.x_q + p.X_l)
    b = p.x_d_prime * p.V_i / (p.x_d_prime + p.X_l)
    c = p.X_l / (p.x_d_prime + p.X_l)
    return a, b, c


def terminal_voltage(p: SmibParams, delta, eq):
    a, b, c = _voltage_coeffs(p)
    return np.sqrt((a * np.sin(delta)) ** 2 + (b * np.cos(delta) + c * eq) ** 2)


def electrical_power(order: int, p: SmibParams, delta, eq=None):
    if order == 2:
        return p.V_s * p.V_i / p.X_l * np.sin(delta)
    sal = 0.5 * p.V_i ** 2 * (1.0 / (p.x_q + p.X_l) - 1.0 / (p.x_d_prime + p.X_l))
    return eq * p.V_i * np.sin(delta) / (p.x_d_prime + p.X_l) + sal * np.sin(2 * delta)


def _resolved_vref(order: int, p: SmibParams) -> float | None:
    if order != 4:
        return p.V_ref
    if p.V_ref is not None:
        return p.V_ref
    d, e = _equilibrium_3rd(p)
    return float(terminal_voltage(p, d, e)) + p.E_vf_bar / p.kappa


def physical_field(order: int, params: SmibParams, fault: str = "none") -> Callable:
    """Right-hand side ``f(state) -> dstate`` of the exact model.

    ``state`` may be a vector or an array of shape ``(nstate, batch)``.
    ``fault='bolted-terminal'`` removes the electrical power and the network
    coupling of the flux equation; the exciter then sees zero terminal voltage
    and is clipped at ``exciter_ceiling``.
    """
    if order not in (2, 3, 4):
        raise ValidationError(f"model order must be 2, 3 or 4, got {order}")
    if fault not in ("none", "bolted-terminal"):
        raise ValidationError(f"unknown fault {fault!r}")
    p = params
    faulted = fault == "bolted-terminal"
    retained = 0.0
    if faulted and p.fault_reactance is not None:
        retained = p.fault_reactance / (p.fault_reactance + p.X_l)
    K = _coupling(p)
    v_ref = _resolved_vref(order, p)

    def rhs(state):
        s = np.asarray(state, dtype=float)
        delta, omega = s[0], s[1]
        ws = 1.0 + omega
        if np.any(ws <= 0):
            raise SingularityError("rotor speed omega_s <= 0")
        eq = s[2] if order >= 3 else None
        pe = electrical_power(order, p, delta, eq)
        if faulted:
            pe = retained * pe
        out = np.empty_like(s)
        out[0] = p.omega_n * omega
        out[1] = (p.C_m - pe / ws - p.D * omega) / (2 * p.H)
        if order >= 3:
            evf = s[3] if order == 4 else p.E_vf_bar
            coupling = K * (p.V_i * np.cos(delta) - eq)
            if faulted:
                coupling = retained * coupling
            out[2] = (evf - eq + coupling) / p.T_d0_prime
        if order == 4:
            vs = terminal_voltage(p, delta, eq)
            if faulted:
                vs = retained * vs
            dE = (p.kappa * (v_ref - vs) - s[3]) / p.T_E
            if faulted:
                cap = p.exciter_ceiling
                dE = np.where((s[3] >= cap) & (dE > 0), 0.0, dE)
                dE = np.where((s[3] <= -cap) & (dE < 0), 0.0, dE)
            out[3] = dE
        return out

    return rhs


# ---------------------------------------------------------------------------
# equilibrium
# ---------------------------------------------------------------------------

def _damped_newton(F, z0, tol=1e-14, maxit=100):
    z = np.array(z0, dtype=float)
    r = F(z)
    for _ in range(maxit):
        nr = np.linalg.norm(r, np.inf)
        if nr <= tol:
            return z
        n = z.size
        J = np.empty((n, n))
        for j in range(n):
            h = 1e-7 * max(1.0, abs(z[j]))
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            J[:, j] = (F(zp) - F(zm)) / (2 * h)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-6:
            zn = z + t * step
            rn = F(zn)
            if np.all(np.isfinite(rn)) and np.linalg.norm(rn, np.inf) < nr:
                break
            t *= 0.5
        else:
            # no decrease; accept tiny residuals reached at round-off level
            if nr <= 1e-12:
                return z
            break
        z, r = zn, rn
    if np.linalg.norm(r, np.inf) <= 1e-12:
        return z
    raise NoEquilibriumError("Newton iteration did not converge; the machine may be overloaded")


def _equilibrium_3rd(p: SmibParams) -> tuple[float, float]:
    K = _coupling(p)

    def F(z):
        d, e = z
        return np.array([p.C_m - electrical_power(3, p, d, e),
                         p.E_vf_bar - e + K * (p.V_i * math.cos(d) - e)])

    d0 = 0.5
    e0 = (p.E_vf_bar + K * p.V_i * math.cos(d0)) / (1 + K)
    d, e = _damped_newton(F, [d0, e0])
    return float(d), float(e)


def equilibrium(order: int, params: SmibParams) -> np.ndarray:
    """Stable operating point in physical coordinates (omega = 0)."""
    p = params
    if order == 2:
        P = p.V_s * p.V_i / p.X_l

        def F(z):
            return np.array([p.C_m - P * math.sin(z[0])])

        (d,) = _damped_newton(F, [0.5])
        state = np.array([d, 0.0])
    elif order == 3:
        d, e = _equilibrium_3rd(p)
        state = np.array([d, 0.0, e])
    elif order == 4:
        if p.V_ref is None:
            d, e = _equilibrium_3rd(p)
            state = np.array([d, 0.0, e, p.E_vf_bar])
        else:
            K = _coupling(p)

            def F(z):
                d, e, E = z
                return np.array([p.C_m - electrical_power(4, p, d, e),
                                 E - e + K * (p.V_i * math.cos(d) - e),
                                 p.kappa * (p.V_ref - terminal_voltage(p, d, e)) - E])

            d0 = 0.5
            e0 = (p.E_vf_bar + K * p.V_i * math.cos(d0)) / (1 + K)
            state = _damped_newton(F, [d0, e0, p.E_vf_bar])
            state = np.array([state[0], 0.0, state[1], state[2]])
    else:
        raise ValidationError(f"model order must be 2, 3 or 4, got {order}")
    if not -math.pi / 2 < state[0] < math.pi / 2:
        raise NoEquilibriumError(f"equilibrium angle {state[0]:.4f} rad is outside (-pi/2, pi/2)")
    return state


# ---------------------------------------------------------------------------
# Taylor remainders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaylorBound:
    term: str
    order: int
    bound: float


def _sqrt_taylor_coeff(j: int) -> float:
    # binomial(1/2, j)
    c = 1.0
    for i in range(j):
        c *= (0.5 - i) / (i + 1)
    return c


def voltage_deviation_range(params: SmibParams, eq_eq: float, v_eq: float,
                            pieces: int = 256) -> tuple[float, float]:
    """Enclosure of ``h`` over the scaled state set of the 4th order model.

    Uses ``y**2 = 1 - x**2`` and interval evaluation on ``pieces`` subintervals
    of ``x in [-1, 1]`` with ``e_q' in [0, 2 e_q,eq]``.
    """
    a, b, c = _voltage_coeffs(params)
    edges = np.linspace(-1.0, 1.0, pieces + 1)
    lo_all, hi_all = math.inf, -math.inf
    e_lo, e_hi = 0.0, 2.0 * eq_eq
    for x0, x1 in zip(edges[:-1], edges[1:]):
        # x**2 enclosure
        sq_lo = 0.0 if x0 <= 0.0 <= x1 else min(x0 * x0, x1 * x1)
        sq_hi = max(x0 * x0, x1 * x1)
        t1_lo, t1_hi = a * a * (1.0 - sq_hi), a * a * (1.0 - sq_lo)
        u_lo = min(b * x0, b * x1) + c * e_lo
        u_hi = max(b * x0, b * x1) + c * e_hi
        u2_lo = 0.0 if u_lo <= 0.0 <= u_hi else min(u_lo * u_lo, u_hi * u_hi)
        u2_hi = max(u_lo * u_lo, u_hi * u_hi)
        lo_all = min(lo_all, t1_lo + u2_lo)
        hi_all = max(hi_all, t1_hi + u2_hi)
    return lo_all / v_eq ** 2 - 1.0, hi_all / v_eq ** 2 - 1.0


def taylor_remainder_bound(term: str, p: int, params: SmibParams) -> TaylorBound:
    """Bound on the truncation error of the order-``p`` expansion.

    ``inverse-speed``: ``|1/(1+w) - sum_j (-w)^j| <= w_M^(p+1) / (1 - w_M)``.
    ``terminal-voltage``: Lagrange remainder of ``V_eq * sqrt(1 + h)`` over the
    enclosure of ``h`` (4th order model quantities).
    """
    if p < 0:
        raise InvalidBoundError("expansion order must be >= 0")
    wM = params.omega_M
    if not wM < 1:
        raise InvalidBoundError("omega_M must be < 1 for the inverse-speed expansion")
    if term == "inverse-speed":
        return TaylorBound(term, p, wM ** (p + 1) / (1 - wM))
    if term == "terminal-voltage":
        d, e = _equilibrium_3rd(params) if params.V_ref is None else equilibrium(4, params)[[0, 2]]
        v_eq = float(terminal_voltage(params, d, e))
        h_lo, h_hi = voltage_deviation_range(params, e, v_eq)
        if h_lo <= -1.0:
            return TaylorBound(term, p, math.inf)
        hmax = max(abs(h_lo), abs(h_hi))
        xi = min(h_lo, 0.0)
        coeff = abs(_sqrt_taylor_coeff(p + 1))
        return TaylorBound(term, p, v_eq * coeff * hmax ** (p + 1) * (1.0 + xi) ** (0.5 - p - 1))
    raise ValueError(f"unknown remainder term {term!r}")


# ---------------------------------------------------------------------------
# polynomial system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Uncertainty:
    name: str
    index: int
    lower: float
    upper: float

    @property
    def radius(self) -> float:
        return max(abs(self.lower), abs(self.upper))


@dataclass(frozen=True)
class ScalingMap:
    """How one physical state maps to scaled coordinates.

    ``kind='angle'``: ``delta -> (cos delta, sin delta)`` at indices ``indices``.
    ``kind='affine'``: ``physical = offset + scale * scaled``.
    """

    physical: str
    kind: str
    indices: tuple[int, ...]
    scale: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class PolySystem:
    order: int
    params: SmibParams
    taylor_order: int
    state_names: list
    field: list
    ineqs: list
    eqs: list
    boundary_faces: list
    uncertainty: list
    scaling: list
    equilibrium_physical: np.ndarray
    circle: tuple = (X, Y)

    @property
    def nstate(self) -> int:
        return len(self.state_names)

    @property
    def nvars(self) -> int:
        return self.nstate + len(self.uncertainty)

    @property
    def var_names(self) -> list:
        return list(self.state_names) + [u.name for u in self.uncertainty]

    @property
    def interval_vars(self) -> list[int]:
        """State variables ranging over [-1, 1] (everything but the circle pair)."""
        return [i for i in range(self.nstate) if self.circle is None or i not in self.circle]

    def nominal_field(self) -> list[Polynomial]:
        """Field with all uncertainties at zero, in the state variables only."""
        out = []
        for f in self.field:
            g = f
            for u in self.uncertainty:
                g = g.fix(u.index, 0.0)
            out.append(_truncate(g, self.nstate))
        return out

    def state_ineqs(self) -> list[Polynomial]:
        return [_truncate(g, self.nstate) for g in self.ineqs]

    def state_eqs(self) -> list[Polynomial]:
        return [_truncate(h, self.nstate) for h in self.eqs]

    def state_faces(self) -> list[SetDescription]:
        return [SetDescription([_truncate(g, self.nstate) for g in F.ineqs],
                               [_truncate(h, self.nstate) for h in F.eqs],
                               dict(F.fixed), F.label) for F in self.boundary_faces]

    @property
    def equilibrium_scaled(self) -> np.ndarray:
        return to_scaled(self, self.equilibrium_physical)

    def with_uncertainty_scale(self, factor: float) -> "PolySystem":
        """Same system with every uncertainty box scaled by ``factor``."""
        return _build(self.order, self.params, self.taylor_order, unc_factor=factor)


def _truncate(p: Polynomial, n: int) -> Polynomial:
    if p.nvars == n:
        return p
    out = {}
    for e, c in p.items():
        if any(e[n:]):
            raise ValueError("polynomial depends on dropped variables")
        out[e[:n]] = c
    return Polynomial(n, out)


def build_poly_system(order: int, params: SmibParams, taylor_order: int = 2) -> PolySystem:
    """Scaled polynomial model with Taylor remainders as bounded uncertainties."""
    if taylor_order < 0:
        raise ValidationError("taylor_order must be >= 0")
    return _build(order, params, taylor_order)


def _build(order: int, params: SmibParams, taylor_order: int, unc_factor: float = 1.0) -> PolySystem:
    if order not in (2, 3, 4):
        raise ValidationError(f"model order must be 2, 3 or 4, got {order}")
    p = params
    eq_phys = equilibrium(order, p)
    nstate = order + 1
    unc_specs = [("eps_inv", taylor_remainder_bound("inverse-speed", taylor_order, p).bound)]
    if order == 4:
        unc_specs.append(("eps_vs", taylor_remainder_bound("terminal-voltage", 2, p).bound))
    for name, b in unc_specs:
        if not math.isfinite(b):
            raise InvalidBoundError(f"{name}: Taylor remainder is unbounded over the state set")
    nv = nstate + len(unc_specs)
    var = [Polynomial.variable(nv, i) for i in range(nv)]
    one = Polynomial.constant(nv, 1.0)
    x, y, w = var[X], var[Y], var[W]
    wM = p.omega_M
    uncertainty = [Uncertainty(name, nstate + j, -b * unc_factor, b * unc_factor)
                   for j, (name, b) in enumerate(unc_specs)]

    # truncated 1/(1 + wM*wbar)
    inv = Polynomial.zero(nv)
    for j in range(taylor_order + 1):
        inv = inv + ((w * (-wM)) ** j)
    eps_inv = var[nstate] * uncertainty[0].radius

    scaling = [ScalingMap("delta", "angle", (X, Y)),
               ScalingMap("omega", "affine", (W,), scale=wM, offset=0.0)]
    fx = (w * y) * (-p.omega_n * wM)
    fy = (w * x) * (p.omega_n * wM)
    if order == 2:
        pe = y * (p.V_s * p.V_i / p.X_l)
    else:
        e_eq = float(eq_phys[2])
        eqp = (one + var[EQ]) * e_eq
        sal = p.V_i ** 2 * (1.0 / (p.x_q + p.X_l) - 1.0 / (p.x_d_prime + p.X_l))
        pe = eqp * y * (p.V_i / (p.x_d_prime + p.X_l)) + (x * y) * sal
        scaling.append(ScalingMap("eq_prime", "affine", (EQ,), scale=e_eq, offset=e_eq))
    fw = (one * p.C_m - inv * pe - w * (p.D * wM) - eps_inv * pe) * (1.0 / (2 * p.H * wM))
    field = [fx, fy, fw]
    if order >= 3:
        K = _coupling(p)
        if order == 4:
            E_eq = float(eq_phys[3])
            evf = (one + var[EF]) * E_eq
            scaling.append(ScalingMap("E_vf", "affine", (EF,), scale=E_eq, offset=E_eq))
        else:
            evf = one * p.E_vf_bar
        fe = (evf - eqp + (x * p.V_i - eqp) * K) * (1.0 / (p.T_d0_prime * e_eq))
        field.append(fe)
    if order == 4:
        a, b, c = _voltage_coeffs(p)
        v_eq = float(terminal_voltage(p, eq_phys[0], eq_phys[2]))
        h = ((y * a) ** 2 + (x * b + eqp * c) ** 2) * (1.0 / v_eq ** 2) - one
        v_approx = (one + h * 0.5 - (h * h) * 0.125) * v_eq
        eps_vs = var[nstate + 1] * uncertainty[1].radius
        v_ref = _resolved_vref(4, p)
        fE = ((one * v_ref - v_approx - eps_vs) * p.kappa - evf) * (1.0 / (p.T_E * E_eq))
        field.append(fE)

    circle = x * x + y * y - one
    box_vars = [W] + ([EQ] if order >= 3 else []) + ([EF] if order == 4 else [])
    ineqs = []
    for i in box_vars:
        ineqs.append(one - var[i] * var[i])
        if i == W:
            ineqs.append(x + one)
    faces = []
    for i in box_vars:
        for s in (1.0, -1.0):
            rest = [g for g in ineqs if g != one - var[i] * var[i]]
            witness = [1.0, 0.0] + [0.0] * (nv - 2)
            witness[i] = s
            faces.append(SetDescription(rest, [var[i] - one * s, circle], {i: s},
                                        f"{STATE_NAMES[order][i]}={s:+g}", tuple(witness)))
    rest = [g for g in ineqs if g != x + one]
    witness = [-1.0, 0.0] + [0.0] * (nv - 2)
    faces.append(SetDescription(rest, [x + one, circle], {X: -1.0, Y: 0.0}, "x=-1", tuple(witness)))

    return PolySystem(order=order, params=p, taylor_order=taylor_order,
                      state_names=list(STATE_NAMES[order]), field=field, ineqs=ineqs,
                      eqs=[circle], boundary_faces=faces, uncertainty=uncertainty,
                      scaling=scaling, equilibrium_physical=eq_phys)


def box_system(field: Sequence[Polynomial], names: Sequence[str] | None = None) -> PolySystem:
    """Polynomial system on the box ``[-1, 1]^n`` with faces ``x_i = +-1``.

    Small test problems (no angle coordinate, no uncertainty) use this in
    place of the SMIB builders.
    """
    field = list(field)
    n = len(field)
    if n == 0 or any(f.nvars != n for f in field):
        raise ValidationError("field must hold n polynomials in n variables")
    names = list(names) if names is not None else [f"x{i}" for i in range(n)]
    one = Polynomial.constant(n, 1.0)
    var = [Polynomial.variable(n, i) for i in range(n)]
    ineqs = [one - v * v for v in var]
    faces = []
    for i in range(n):
        rest = ineqs[:i] + ineqs[i + 1:]
        for s in (1.0, -1.0):
            witness = [0.0] * n
            witness[i] = s
            faces.append(SetDescription(rest, [var[i] - one * s], {i: s}, f"{names[i]}={s:+g}",
                                        tuple(witness)))
    scaling = [ScalingMap(nm, "affine", (i,)) for i, nm in enumerate(names)]
    return PolySystem(order=n, params=None, taylor_order=0, state_names=names, field=field,
                      ineqs=ineqs, eqs=[], boundary_faces=faces, uncertainty=[], scaling=scaling,
                      equilibrium_physical=np.zeros(n), circle=None)


# ---------------------------------------------------------------------------
# coordinate maps
# ---------------------------------------------------------------------------

def to_scaled(system: PolySystem, physical_point, strict: bool = True) -> np.ndarray:
    """Map ``(delta, omega[, e_q'[, E_vf]])`` to scaled state coordinates.

    Accepts a single point or an array of shape ``(N, order)``.
    """
    pt = np.asarray(physical_point, dtype=float)
    single = pt.ndim == 1
    pts = np.atleast_2d(pt)
    if pts.shape[1] != system.order:
        raise ValueError(f"expected {system.order} physical coordinates, got {pts.shape[1]}")
    out = np.empty((pts.shape[0], system.nstate))
    for j, m in enumerate(system.scaling):
        col = pts[:, j]
        if m.kind == "angle":
            out[:, m.indices[0]] = np.cos(col)
            out[:, m.indices[1]] = np.sin(col)
        else:
            s = (col - m.offset) / m.scale
            if strict:
                bad = ~(np.abs(s) < 1.0)
                if np.any(bad):
                    raise RangeError(m.physical, float(col[np.argmax(bad)]))
            out[:, m.indices[0]] = s
    return out[0] if single else out


def from_scaled(system: PolySystem, scaled_point) -> np.ndarray:
    pt = np.asarray(scaled_point, dtype=float)
    single = pt.ndim == 1
    pts = np.atleast_2d(pt)
    out = np.empty((pts.shape[0], system.order))
    for j, m in enumerate(system.scaling):
        if m.kind == "angle":
            out[:, j] = np.arctan2(pts[:, m.indices[1]], pts[:, m.indices[0]])
        else:
            out[:, j] = m.offset + m.scale * pts[:, m.indices[0]]
    return out[0] if single else out


def in_state_set(system: PolySystem, scaled: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Membership of scaled points in the closed state set (boxes and x >= -1)."""
    s = np.atleast_2d(scaled)
    ok = np.ones(len(s), dtype=bool) if system.circle is None else s[:, X] >= -1.0 - tol
    for i in system.interval_vars:
        ok &= np.abs(s[:, i]) <= 1.0 + tol
    return ok

"""Set-level reporting on certificates: volumes, membership, contour grids, invariance tests."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .models import (PHYSICAL_NAMES, RangeError, SmibParams, build_poly_system, from_scaled,
                     physical_field, to_scaled)
from .sim import drive
from .sos import sample_state_set

BATCH = 1 << 16


@dataclass
class VolumeEstimate:
    value: float
    stderr: float
    nsamples: int
    seed: int
    region: str = "inner"
    total_measure: float = 0.0
    fraction: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


def total_measure(system) -> float:
    """Mass of the reference measure: circumference times 2 per interval variable."""
    circ = 2 * math.pi if system.circle is not None else 1.0
    return circ * 2.0 ** len(system.interval_vars)


def _batch_generators(seed: int, nsamples: int):
    # one counter-based stream per fixed-size batch, independent of how batches are scheduled
    nb = max(1, -(-nsamples // BATCH))
    children = np.random.SeedSequence(seed).spawn(nb)
    for i, ss in enumerate(children):
        n = min(BATCH, nsamples - i * BATCH)
        yield n, np.random.Generator(np.random.Philox(ss))


def sample_reference(system, nsamples: int, seed: int) -> np.ndarray:
    """Deterministic uniform samples of the circle-times-box reference measure."""
    parts = [sample_state_set(system, n, rng) for n, rng in _batch_generators(seed, nsamples)]
    return np.vstack(parts) if parts else np.empty((0, system.nstate))


def mc_volume(cert, region: str, system, nsamples: int = 100_000, seed: int = 0) -> VolumeEstimate:
    """Monte-Carlo measure of ``{v < 0}`` (inner) or ``{v >= 0}`` (outer) within X."""
    if region not in ("inner", "outer"):
        raise ValueError(f"region must be inner or outer, got {region!r}")
    if nsamples < 1000:
        raise ValueError("nsamples must be >= 1000")
    hits = 0
    for n, rng in _batch_generators(seed, nsamples):
        vals = cert.v.evaluate_many(sample_state_set(system, n, rng))
        hits += int(np.count_nonzero(vals < 0 if region == "inner" else vals >= 0))
    T = total_measure(system)
    p = hits / nsamples
    return VolumeEstimate(value=T * p, stderr=T * math.sqrt(p * (1 - p) / nsamples),
                          nsamples=nsamples, seed=seed, region=region, total_measure=T, fraction=p)


def membership(cert_inner, cert_outer, system, physical_point) -> str:
    """``inside`` if certified in the inner set, ``outside`` if excluded by the outer set."""
    s = to_scaled(system, physical_point, strict=True)
    if s[0] <= -1.0:
        raise RangeError("delta", float(np.asarray(physical_point)[0]), "angle at the excluded point x = -1")
    if cert_inner.v.evaluate_many(s[None])[0] < 0:
        return "inside"
    if cert_outer.v.evaluate_many(s[None])[0] < 0:
        return "outside"
    return "undecided"


@dataclass
class Grid:
    """Values of ``v`` on a 2-D section; axes are in physical coordinates."""

    axes: tuple  # two physical coordinate indices
    fixed: dict  # physical index -> scaled (or angle) value
    u: np.ndarray  # section coordinates, scaled (delta in radians)
    w: np.ndarray
    values: np.ndarray  # (len(w), len(u))
    names: tuple
    physical_u: np.ndarray
    physical_w: np.ndarray
    meta: dict = field(default_factory=dict)

    def points(self, system) -> np.ndarray:
        return _section_points(system, self.axes, self.fixed, self.u, self.w)

    def to_csv(self, path):
        with open(path, "w") as fh:
            header = dict(self.meta, axes=list(self.names), fixed={str(k): v for k, v in self.fixed.items()},
                          shape=list(self.values.shape))
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            fh.write(f"{self.names[0]},{self.names[1]},v\n")
            for j, pw in enumerate(self.physical_w):
                for i, pu in enumerate(self.physical_u):
                    fh.write(f"{pu!r},{pw!r},{self.values[j, i]!r}\n")


def _axis_values(system, idx: int, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    m = system.scaling[idx]
    if m.kind == "angle":
        # open interval: x = -1 lies outside the state set
        t = np.linspace(-math.pi, math.pi, resolution + 2)[1:-1]
        return t, t
    s = np.linspace(-1.0, 1.0, resolution)
    return s, m.offset + m.scale * s


def _section_points(system, axes, fixed, u, w) -> np.ndarray:
    U, W = np.meshgrid(u, w)
    coords = {axes[0]: U.ravel(), axes[1]: W.ravel()}
    n = U.size
    pts = np.empty((n, system.nstate))
    for j, m in enumerate(system.scaling):
        col = coords[j] if j in coords else np.full(n, float(fixed[j]))
        if m.kind == "angle":
            pts[:, m.indices[0]] = np.cos(col)
            pts[:, m.indices[1]] = np.sin(col)
        else:
            pts[:, m.indices[0]] = col
    return pts


def grid_eval(cert, system, axes=(0, 1), fixed: dict | None = None, resolution: int = 200,
              meta: dict | None = None) -> Grid:
    """Evaluate ``v`` on a ``resolution x resolution`` section.

    ``axes`` are physical coordinate indices (0 = delta, 1 = omega, ...); the
    remaining coordinates are fixed at ``fixed[index]`` given in scaled units
    (delta in radians). Unlisted fixed coordinates default to the equilibrium.
    """
    if len(set(axes)) != 2:
        raise ValueError("axes must name two distinct coordinates")
    eq_scaled = to_scaled(system, system.equilibrium_physical)
    fixed = dict(fixed or {})
    for j, m in enumerate(system.scaling):
        if j in axes:
            continue
        if j not in fixed:
            fixed[j] = float(system.equilibrium_physical[0]) if m.kind == "angle" else float(eq_scaled[m.indices[0]])
        if m.kind != "angle" and abs(fixed[j]) > 1:
            raise RangeError(m.physical, fixed[j], "fixed value outside the scaled range [-1, 1]")
    u, pu = _axis_values(system, axes[0], resolution)
    w, pw = _axis_values(system, axes[1], resolution)
    vals = cert.v.evaluate_many(_section_points(system, axes, fixed, u, w)).reshape(len(w), len(u))
    names = tuple(PHYSICAL_NAMES[system.order][a] for a in axes)
    return Grid(tuple(axes), fixed, u, w, vals, names, pu, pw, dict(meta or {}))


@dataclass
class InvarianceReport:
    violations: int
    nstarts: int
    horizon: float
    seed: int
    max_v_increase: float = 0.0
    exit_times: list = field(default_factory=list)
    requested: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def sample_certified_starts(cert, system, nstarts: int, seed: int, max_draws: int = 10_000_000,
                            strict: bool = True) -> np.ndarray:
    """Rejection-sample scaled states with ``v < 0``.

    With ``strict=False`` a shortfall after ``max_draws`` returns the starts found so far.
    """
    out, drawn, batch_seed = [], 0, seed
    need = nstarts
    while need > 0:
        if drawn >= max_draws:
            if not strict:
                break
            raise RuntimeError(f"found only {nstarts - need} of {nstarts} certified starts in {drawn} draws")
        pts = sample_reference(system, 20_000, batch_seed)
        batch_seed += 1_000_003
        drawn += len(pts)
        keep = pts[cert.v.evaluate_many(pts) < 0]
        out.append(keep[:need])
        need -= len(out[-1])
    return np.vstack(out) if out else np.empty((0, system.nstate))


def simulate_exits(starts, order: int, params: SmibParams, system, horizon: float = 10.0,
                   tol: float = 1e-8, dt_check: float = 1e-3, cert=None, v_stride: int = 10):
    """Integrate the exact post-fault model from scaled ``starts`` as one batched system.

    Returns ``(exited, exit_times, vmax)``: which starts leave the state set
    (a box bound crossed, or the angle reaching pi) within ``horizon``, when, and (if ``cert`` is given) the largest value
    of ``cert.v`` seen before the exit, sampled every ``v_stride`` steps.
    """
    starts = np.atleast_2d(starts)
    phys = from_scaled(system, starts)
    rhs = physical_field(order, params, "none")
    n, d = phys.shape
    exited = np.zeros(n, dtype=bool)
    exit_t = np.full(n, np.nan)
    vmax = cert.v.evaluate_many(starts) if cert is not None else None
    counter = [0]

    def fun(t, y):
        return rhs(y.reshape(d, n)).ravel()

    def obs(ts, ys):
        Y = ys.reshape(d, n, len(ts))
        for j, m in enumerate(system.scaling):
            if m.kind == "affine":
                bad = np.abs((Y[j] - m.offset) / m.scale) > 1.0 + 1e-9
            else:
                # passing through x = -1 also leaves the open state set
                bad = np.abs(Y[j]) >= np.pi
            first = bad & ~exited[:, None]
            hit = first.any(axis=1)
            exit_t[hit] = ts[np.argmax(first[hit], axis=1)]
            exited[hit] = True
        if cert is not None:
            for i in range(len(ts)):
                if counter[0] % v_stride == 0:
                    vals = cert.v.evaluate_many(to_scaled(system, Y[:, :, i].T, strict=False))
                    np.maximum(vmax, np.where(exited, -np.inf, vals), out=vmax)
                counter[0] += 1
        return False

    if n:
        drive(fun, 0.0, phys.T.ravel(), horizon, obs, rtol=tol, dt_out=dt_check)
    return exited, exit_t, vmax


def invariance_sample_test(cert, order: int, params: SmibParams, nstarts: int = 1000, horizon: float = 10.0,
                           seed: int = 0, system=None, tol: float = 1e-8, dt_check: float = 1e-3,
                           v_stride: int = 10, max_draws: int = 10_000_000) -> InvarianceReport:
    """Count certified starts whose exact post-fault trajectory leaves the state set.

    Also records the largest increase of ``v`` over its starting value along
    the trajectories (sampled every ``v_stride`` output steps).
    """
    if cert.kind == "outer":
        raise ValueError("invariance is only certified by inner certificates")
    if not cert.certifies_invariance:
        raise ValueError(f"certificate has u={cert.u:.3g} above u_tol")
    if system is None:
        system = build_poly_system(order, params)
    if nstarts == 0:
        return InvarianceReport(0, 0, horizon, seed)
    # an (almost) empty certified set yields fewer starts; the report says how many
    starts = sample_certified_starts(cert, system, nstarts, seed, max_draws=max_draws, strict=False)
    if len(starts) == 0:
        return InvarianceReport(0, 0, horizon, seed, requested=nstarts)
    v0 = cert.v.evaluate_many(starts)
    exited, exit_t, vmax = simulate_exits(starts, order, params, system, horizon, tol, dt_check,
                                          cert=cert, v_stride=v_stride)
    inc = float(np.max(vmax - v0))
    return InvarianceReport(int(exited.sum()), len(starts), horizon, seed, max(0.0, inc),
                            [float(t) for t in exit_t[exited]], nstarts)

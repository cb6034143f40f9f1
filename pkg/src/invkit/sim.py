"""Time-domain simulation of the exact SMIB models and CCT estimation.

Integration uses scipy's Dormand-Prince 4(5) pair (``RK45``) stepped by hand so
that dense output can be sampled on a fixed grid and reduced on the fly.
A fault is a ``bolted-terminal`` short applied from ``t = 0`` to the clearing
time; clearing restarts the integrator on the post-fault (pre-fault) network.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import RK45

from .models import (PHYSICAL_NAMES, SmibParams, build_poly_system, equilibrium, physical_field,
                     to_scaled)

DIVERGENCE_ANGLE = 2 * math.pi
POST_FAULT_HORIZON = 15.0
BISECTION_WINDOW = (0.0, 2.0)


class StiffnessError(RuntimeError):
    def __init__(self, time: float, msg: str = ""):
        self.time = time
        super().__init__(f"step size underflow at t={time:.6g} s{': ' + msg if msg else ''}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (ntimes, nstate) physical coordinates
    events: list = field(default_factory=list)  # (time, label)
    names: list = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return any(lbl == "divergence" for _, lbl in self.events)

    def to_csv(self, path, extra: dict | None = None):
        """Write ``time, states..., [extra...], event`` rows."""
        extra = extra or {}
        names = self.names or [f"x{i}" for i in range(self.states.shape[1])]
        marks = {}
        for t, lbl in self.events:
            i = int(np.argmin(np.abs(self.times - t)))
            marks[i] = (marks[i] + ";" if i in marks else "") + lbl
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time"] + list(names) + list(extra) + ["event"])
            cols = [np.asarray(v) for v in extra.values()]
            for i, t in enumerate(self.times):
                wr.writerow([repr(float(t))] + [repr(float(v)) for v in self.states[i]]
                            + [repr(float(c[i])) for c in cols] + [marks.get(i, "")])


@dataclass
class CctResult:
    method: str  # simulation | certificate
    lower: float
    upper: float
    grid_step: float
    partial: bool = False
    note: str = ""
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"CCT bracket is inverted: [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def estimate(self) -> float:
        return 0.5 * (self.lower + self.upper) if math.isfinite(self.upper) else self.lower

    def contains(self, t: float) -> bool:
        return self.lower <= t <= self.upper

    def to_json(self) -> dict:
        return {"method": self.method, "lower": self.lower,
                "upper": self.upper if math.isfinite(self.upper) else None,
                "grid_step": self.grid_step, "partial": self.partial, "note": self.note,
                "flags": list(self.flags)}


def _sample_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    n = int(math.floor((t1 - t0) / dt + 1e-9))
    grid = t0 + dt * np.arange(n + 1)
    if t1 - grid[-1] > 1e-12:
        grid = np.append(grid, t1)
    return grid


def drive(fun: Callable, t0: float, y0, t_end: float, observer: Callable, rtol: float = 1e-8,
          atol: float | None = None, dt_out: float = 1e-3):
    """Step ``y' = fun(t, y)`` and hand dense samples on the output grid to ``observer``.

    ``observer(times, states)`` receives arrays of shape ``(n,)`` and ``(len(y), n)``
    and returns True to stop. Returns the last observed time.
    """
    y0 = np.asarray(y0, dtype=float).ravel()
    atol = rtol * 1e-2 if atol is None else atol
    grid = _sample_grid(t0, t_end, dt_out)
    if observer(grid[:1], y0[:, None]):
        return grid[0]
    nxt = 1
    solver = RK45(fun, t0, y0, t_end, rtol=rtol, atol=atol)
    while nxt < len(grid):
        msg = solver.step()
        if solver.status == "failed":
            raise StiffnessError(solver.t, msg or "")
        hi = np.searchsorted(grid, solver.t, side="right")
        if solver.status == "finished":
            hi = len(grid)
        if hi > nxt:
            ts = grid[nxt:hi]
            dense = solver.dense_output()
            ys = dense(ts)
            if observer(ts, ys):
                return float(ts[-1])
            nxt = hi
    return float(grid[-1])


def integrate(field_fn: Callable, x0, t_end: float, tol: float = 1e-8, t0: float = 0.0,
              dt_out: float = 1e-3, names=None, stop_on_divergence: bool = True) -> Trajectory:
    """Adaptive RK4(5) integration of an autonomous field, sampled every ``dt_out``.

    Stops early with a ``divergence`` event once ``|delta| > 2 pi``.
    """
    x0 = np.asarray(x0, dtype=float)
    ts, ys, events = [], [], []

    def obs(t, y):
        ts.append(t)
        ys.append(y.T)
        if stop_on_divergence:
            bad = np.abs(y[0]) > DIVERGENCE_ANGLE
            if bad.any():
                i = int(np.argmax(bad))
                ts[-1] = t[:i + 1]
                ys[-1] = y.T[:i + 1]
                events.append((float(t[i]), "divergence"))
                return True
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("non-finite state during integration")
        return False

    drive(lambda t, y: field_fn(y), t0, x0, t0 + t_end, obs, rtol=tol, dt_out=dt_out)
    return Trajectory(np.concatenate(ts), np.vstack(ys), events, list(names or []))


def fault_trajectory(order: int, params: SmibParams, t_clear: float, t_post: float = POST_FAULT_HORIZON,
                     tol: float = 1e-8, dt_out: float = 1e-3, x0=None) -> Trajectory:
    """Faulted phase on ``[0, t_clear]`` then the post-fault model on ``[t_clear, t_clear + t_post]``."""
    names = PHYSICAL_NAMES[order]
    x0 = equilibrium(order, params) if x0 is None else np.asarray(x0, dtype=float)
    faulted = physical_field(order, params, "bolted-terminal")
    post = physical_field(order, params, "none")
    parts = []
    if t_clear > 0:
        parts.append(integrate(faulted, x0, t_clear, tol=tol, dt_out=dt_out, names=names))
        if parts[-1].diverged:
            return parts[-1]
        x0 = parts[-1].states[-1]
    tail = integrate(post, x0, t_post, tol=tol, t0=t_clear, dt_out=dt_out, names=names)
    if parts:
        head = parts[0]
        times = np.concatenate([head.times, tail.times[1:]])
        states = np.vstack([head.states, tail.states[1:]])
        events = [(t_clear, "fault-cleared")] + tail.events
        return Trajectory(times, states, events, list(names))
    tail.events.insert(0, (0.0, "fault-cleared"))
    return tail


def is_stable(traj: Trajectory, delta_eq: float) -> bool:
    """Synchronism verdict: the angle never drifts a half turn away from equilibrium."""
    if traj.diverged:
        return False
    return bool(np.all(np.abs(traj.states[:, 0] - delta_eq) < math.pi))


def cct_bisection(order: int, params: SmibParams, grid: float = 1e-3, tol: float = 1e-8,
                  window: tuple = BISECTION_WINDOW, t_post: float = POST_FAULT_HORIZON) -> CctResult:
    """Critical clearing time by bisection on the clearing instant."""
    if not grid > 0:
        raise ValueError("grid must be > 0")
    d_eq = float(equilibrium(order, params)[0])

    def stable(tc):
        return is_stable(fault_trajectory(order, params, tc, t_post=t_post, tol=tol), d_eq)

    lo, hi = window
    if stable(hi):
        return CctResult("simulation", hi, math.inf, grid, note="no CCT below horizon")
    if not stable(lo):
        return CctResult("simulation", lo, lo, grid, note="unstable without fault")
    while hi - lo > grid:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return CctResult("simulation", lo, hi, grid)


def _in_domain(system, states: np.ndarray) -> np.ndarray:
    # the angle may not pass through the excluded point x = -1 (|delta| = pi)
    ok = np.ones(len(states), dtype=bool)
    for j, m in enumerate(system.scaling):
        if m.kind == "affine":
            ok &= np.abs((states[:, j] - m.offset) / m.scale) <= 1.0
        else:
            ok &= np.abs(states[:, j]) < math.pi
    return ok


def certificate_profile(cert, system, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """``v`` along a trajectory (NaN outside the scaling domain) and the in-domain mask."""
    inside = _in_domain(system, traj.states)
    vals = np.full(len(traj.times), np.nan)
    if inside.any():
        vals[inside] = cert.v.evaluate_many(to_scaled(system, traj.states[inside], strict=False))
    return vals, inside


def cct_from_certificate(cert_inner, cert_outer, order: int, params: SmibParams, grid: float = 1e-3,
                         system=None, t_max: float = BISECTION_WINDOW[1], tol: float = 1e-8) -> CctResult:
    """Bracket the CCT by evaluating both certificates along the sustained-fault trajectory.

    The lower bound is the last sample still inside the inner approximation, the
    upper bound the first sample outside the outer approximation.
    """
    if cert_inner.kind != "outer" and not cert_inner.certifies_invariance:
        raise ValueError(f"inner certificate has u={cert_inner.u:.3g} > u_tol; it certifies nothing")
    if system is None:
        system = build_poly_system(order, params)
    traj = integrate(physical_field(order, params, "bolted-terminal"), equilibrium(order, params),
                     t_max, tol=tol, dt_out=grid, names=PHYSICAL_NAMES[order])
    vi, inside = certificate_profile(cert_inner, system, traj)
    vo, _ = certificate_profile(cert_outer, system, traj)
    t = traj.times
    flags, notes = [], []
    # only the portion before the first domain exit is meaningful
    n_ok = int(np.argmin(inside)) if not inside.all() else len(t)
    exit_time = float(t[n_ok]) if n_ok < len(t) else None
    ti, vi, vo = t[:n_ok], vi[:n_ok], vo[:n_ok]
    certified = vi < 0
    if certified.all() and len(ti):
        flags.append("inner-vacuous")
        notes.append("inner certificate holds up to the domain exit")
    lower = float(ti[certified].max()) if certified.any() else 0.0
    out = np.flatnonzero(vo < 0)
    partial = False
    if len(out):
        upper = float(ti[out[0]])
    else:
        partial = True
        upper = exit_time if exit_time is not None else math.inf
        notes.append("trajectory leaves the scaling domain before crossing the outer certificate"
                     if exit_time is not None else "no outer crossing within the horizon")
    if upper < lower:
        flags.append("inconsistent")
        notes.append("outer crossing precedes inner exit; certificates disagree")
        upper = lower
    return CctResult("certificate", lower, upper, grid, partial=partial, note="; ".join(notes), flags=flags)

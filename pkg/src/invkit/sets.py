"""Basic semialgebraic set descriptions shared by the model and SOS layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .polyalg import Polynomial


@dataclass(frozen=True)
class SetDescription:
    """``{g_i >= 0, h_j = 0}`` with optional coordinates pinned by the equalities.

    ``fixed`` maps variable indices to the values the equalities force on the
    real points of the set (for instance ``x = -1`` together with the circle
    forces ``y = 0``). Builders use it to substitute the face equalities
    instead of carrying explicit multipliers for them.
    """

    ineqs: tuple[Polynomial, ...]
    eqs: tuple[Polynomial, ...] = ()
    fixed: dict = field(default_factory=dict)
    label: str = ""
    witness: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "ineqs", tuple(self.ineqs))
        object.__setattr__(self, "eqs", tuple(self.eqs))
        if self.witness is not None and not self.contains(self.witness, tol=1e-9):
            raise ValueError(f"set {self.label or '<unnamed>'} is empty at its witness point")

    @property
    def nvars(self) -> int:
        polys = self.ineqs + self.eqs
        return polys[0].nvars if polys else 0

    def contains(self, point, tol: float = 0.0) -> bool:
        return (all(g.evaluate(point) >= -tol for g in self.ineqs)
                and all(abs(h.evaluate(point)) <= max(tol, 1e-12) for h in self.eqs))

    def violations(self, points: np.ndarray) -> np.ndarray:
        """Largest constraint violation at each row of ``points``."""
        pts = np.atleast_2d(points)
        worst = np.zeros(pts.shape[0])
        for g in self.ineqs:
            worst = np.maximum(worst, -g.evaluate_many(pts))
        for h in self.eqs:
            worst = np.maximum(worst, np.abs(h.evaluate_many(pts)))
        return worst

"""Finite reference measures on a bounded interval or finite point set.

A measure consists of weighted Dirac atoms plus an optional Lebesgue part
represented by a midpoint quadrature rule. Every integral in the package is
evaluated against one of these measures, with value sequences laid out as
atoms first (in location order), then grid nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ReferenceMeasure",
    "make_discrete",
    "make_continuous",
    "make_mixed",
    "integrate",
]

_GRID_COLLISION_TOL = 1e-12


@dataclass(frozen=True)
class ReferenceMeasure:
    """Finite measure: sum of positive Dirac atoms plus an optional
    Lebesgue part on (a, b) discretized by a midpoint rule.

    Attributes
    ----------
    interval : tuple or None
        Closed support interval (a, b) of the continuous part, None for a
        purely discrete measure.
    atom_locations, atom_weights : ndarray
        Atom positions (sorted, distinct) and their positive weights.
    grid, grid_weights : ndarray
        Interior quadrature nodes and weights; empty iff interval is None.
    """

    interval: tuple[float, float] | None
    atom_locations: np.ndarray
    atom_weights: np.ndarray
    grid: np.ndarray
    grid_weights: np.ndarray
    # cached totals, filled in __post_init__
    total_mass: float = field(init=False)

    def __post_init__(self):
        for name in ("atom_locations", "atom_weights", "grid", "grid_weights"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.atom_weights.size and np.any(self.atom_weights <= 0):
            raise ValueError("atom weights must be strictly positive")
        if self.grid_weights.size and np.any(self.grid_weights <= 0):
            raise ValueError("quadrature weights must be strictly positive")
        mass = float(self.atom_weights.sum() + self.grid_weights.sum())
        if not np.isfinite(mass) or mass <= 0:
            raise ValueError("total mass must be finite and positive")
        object.__setattr__(self, "total_mass", mass)

    @property
    def n_atoms(self) -> int:
        return self.atom_locations.size

    @property
    def n_grid(self) -> int:
        return self.grid.size

    @property
    def size(self) -> int:
        """Length of a value sequence aligned to this measure."""
        return self.n_atoms + self.n_grid

    @property
    def weights(self) -> np.ndarray:
        """Concatenated atom and quadrature weights (atoms first)."""
        return np.concatenate([self.atom_weights, self.grid_weights])

    @property
    def locations(self) -> np.ndarray:
        """Concatenated atom locations and grid nodes (atoms first)."""
        return np.concatenate([self.atom_locations, self.grid])

    @property
    def lebesgue_length(self) -> float:
        """Length of the continuous support, 0 for discrete measures."""
        if self.interval is None:
            return 0.0
        return self.interval[1] - self.interval[0]

    @property
    def is_mixed(self) -> bool:
        return self.n_atoms > 0 and self.n_grid > 0

    def check_values(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.size,):
            raise ValueError(
                f"value sequence has length {values.shape}, expected ({self.size},)"
            )
        return values

    def same_support(self, other: "ReferenceMeasure") -> bool:
        if self.interval != other.interval:
            return False
        return (
            np.array_equal(self.atom_locations, other.atom_locations)
            and np.array_equal(self.atom_weights, other.atom_weights)
            and np.array_equal(self.grid, other.grid)
            and np.array_equal(self.grid_weights, other.grid_weights)
        )


def make_discrete(points) -> ReferenceMeasure:
    """Build a purely discrete measure from (location, weight) pairs."""
    if not points:
        raise ValueError("a discrete measure needs at least one atom")
    locs = np.array([p[0] for p in points], dtype=float)
    weights = np.array([p[1] for p in points], dtype=float)
    if np.any(weights <= 0):
        raise ValueError("atom weights must be strictly positive")
    order = np.argsort(locs, kind="stable")
    locs, weights = locs[order], weights[order]
    if np.any(np.diff(locs) == 0):
        raise ValueError("atom locations must be distinct")
    return ReferenceMeasure(
        interval=None,
        atom_locations=locs,
        atom_weights=weights,
        grid=np.empty(0),
        grid_weights=np.empty(0),
    )


def make_mixed(a: float, b: float, atoms, grid_size: int) -> ReferenceMeasure:
    """Mixed Dirac + Lebesgue measure on [a, b].

    The continuous part uses the midpoint rule on ``grid_size`` equal cells,
    so nodes lie strictly inside (a, b) and the weights sum to b - a exactly.
    Pass an empty ``atoms`` list for the purely continuous case.
    """
    if not b > a:
        raise ValueError("interval must satisfy a < b")
    if grid_size < 4:
        raise ValueError("grid_size must be at least 4")
    if atoms:
        locs = np.array([p[0] for p in atoms], dtype=float)
        weights = np.array([p[1] for p in atoms], dtype=float)
        if np.any((locs < a) | (locs > b)):
            raise ValueError("atom locations must lie within [a, b]")
        if np.any(weights <= 0):
            raise ValueError("atom weights must be strictly positive")
        order = np.argsort(locs, kind="stable")
        locs, weights = locs[order], weights[order]
        if np.any(np.diff(locs) == 0):
            raise ValueError("atom locations must be distinct")
    else:
        locs = np.empty(0)
        weights = np.empty(0)
    h = (b - a) / grid_size
    grid = a + h * (np.arange(grid_size) + 0.5)
    if locs.size and np.min(np.abs(grid[:, None] - locs[None, :])) < _GRID_COLLISION_TOL:
        raise ValueError(
            "a quadrature node coincides with an interior atom; change grid_size"
        )
    return ReferenceMeasure(
        interval=(float(a), float(b)),
        atom_locations=locs,
        atom_weights=weights,
        grid=grid,
        grid_weights=np.full(grid_size, h),
    )


def make_continuous(a: float, b: float, grid_size: int) -> ReferenceMeasure:
    """Lebesgue measure on [a, b] (no atoms)."""
    return make_mixed(a, b, [], grid_size)


def integrate(m: ReferenceMeasure, values) -> float:
    """Integrate a value sequence against the measure."""
    values = m.check_values(values)
    return float(values @ m.weights)

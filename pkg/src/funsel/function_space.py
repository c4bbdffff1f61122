"""Curves on a shared grid with quadrature-based L2 inner products.

Everything downstream (kernel eigenbasis, score projections, coefficient
reconstruction) works on one common grid per dataset; the inner product is the
composite trapezoid realization of the L2[0,1] integral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, InvalidGridError


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Strictly increasing abscissae in [0,1] with positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _readonly(self.points))
        object.__setattr__(self, "weights", _readonly(self.weights))
        pts, w = self.points, self.weights
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidGridError("grid needs at least 2 points")
        if not np.all(np.diff(pts) > 0):
            raise InvalidGridError("grid points must be strictly increasing")
        if w.shape != pts.shape:
            raise InvalidGridError("weights must match points in length")
        if not np.all(w > 0):
            raise InvalidGridError("all quadrature weights must be positive")
        span = pts[-1] - pts[0]
        if abs(w.sum() - span) > 1e-12 * max(span, 1.0):
            raise InvalidGridError(
                f"weights sum {w.sum()!r} does not match grid span {span!r}"
            )

    @property
    def size(self) -> int:
        return self.points.size

    def matches(self, other: "Grid") -> bool:
        return self is other or (
            np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True)
class GridFunction:
    """A real-valued curve sampled on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        if self.values.shape != self.grid.points.shape:
            raise InvalidGridError("values length must equal grid length")
        if not np.all(np.isfinite(self.values)):
            raise InvalidGridError("curve values must be finite")


def trapezoid_grid(points) -> Grid:
    """Grid with composite-trapezoid weights for the given abscissae."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 1 or pts.size < 2:
        raise InvalidGridError("need at least 2 strictly increasing points")
    if not np.all(np.diff(pts) > 0):
        raise InvalidGridError("points must be strictly increasing")
    w = np.empty_like(pts)
    w[0] = (pts[1] - pts[0]) / 2
    w[-1] = (pts[-1] - pts[-2]) / 2
    if pts.size > 2:
        w[1:-1] = (pts[2:] - pts[:-2]) / 2
    return Grid(points=pts, weights=w)


def uniform_grid(size: int) -> Grid:
    """Trapezoid grid on `size` equidistant points spanning [0,1]."""
    return trapezoid_grid(np.linspace(0.0, 1.0, size))


def _require_same_grid(f: GridFunction, g: GridFunction) -> None:
    if not f.grid.matches(g.grid):
        raise GridMismatchError("curves live on different grids")


def l2_inner(f: GridFunction, g: GridFunction) -> float:
    """Quadrature inner product sum_g w_g f(t_g) g(t_g)."""
    _require_same_grid(f, g)
    return float(np.sum(f.grid.weights * f.values * g.values))


def l2_norm(f: GridFunction) -> float:
    """Quadrature L2 norm; zero exactly when the curve vanishes on the grid."""
    return float(np.sqrt(np.sum(f.grid.weights * f.values**2)))

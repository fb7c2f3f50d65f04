"""DLD unit-cell geometry.

The reference tile is a square of side ``Ds`` with a quarter post centred on
each corner. All four quarters are periodic images of one circular post, so
the solid area of a cell equals the area of a single post.

In the row-shifted array the posts of the next column sit ``epsilon`` higher,
so the cell actually used for flow solving and tracing ("tilted" cell) keeps
the left posts at ``(0, 0)`` and ``(0, Dy)`` but moves the right ones to
``(Dx, epsilon)`` and its periodic images. Both cells have the same area,
pitch and fluid fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

DEFAULT_DS = 0.4


@dataclass(frozen=True)
class UnitCellGeometry:
    F: float
    N: int
    Ds: float = DEFAULT_DS
    D0: float = field(init=False)
    epsilon: float = field(init=False)
    gap: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.F < 1.0):
            raise DomainError(f"post fraction F must lie in (0, 1), got {self.F}")
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"period number N must be a positive integer, got {self.N}")
        if not self.Ds > 0.0:
            raise DomainError(f"pitch Ds must be positive, got {self.Ds}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "D0", self.F * self.Ds)
        object.__setattr__(self, "epsilon", self.Ds / self.N)
        object.__setattr__(self, "gap", self.Ds - self.F * self.Ds)

    @property
    def Dx(self) -> float:
        return self.Ds

    @property
    def Dy(self) -> float:
        return self.Ds

    @property
    def radius(self) -> float:
        return 0.5 * self.D0

    @property
    def post_centers(self) -> tuple[tuple[float, float], ...]:
        return ((0.0, 0.0), (self.Dx, 0.0), (0.0, self.Dy), (self.Dx, self.Dy))

    def as_dict(self) -> dict:
        return {"F": self.F, "N": self.N, "Ds": self.Ds}


@dataclass(frozen=True)
class ReynoldsSpec:
    rho: float
    U: float
    L: float
    mu: float

    def __post_init__(self):
        for name in ("rho", "U", "L", "mu"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")


def make_cell(F: float, N: int, Ds: float = DEFAULT_DS) -> UnitCellGeometry:
    return UnitCellGeometry(F=F, N=N, Ds=Ds)


def reynolds(spec: ReynoldsSpec) -> float:
    return spec.rho * spec.U * spec.L / spec.mu


def _solid_distance2(cell: UnitCellGeometry, x, y):
    # squared distance to the nearest of the four corner post centres
    dx = np.minimum(x, cell.Dx - x)
    dy = np.minimum(y, cell.Dy - y)
    return dx * dx + dy * dy


def is_solid(cell: UnitCellGeometry, x: float, y: float) -> bool:
    """True when ``(x, y)`` is inside or on one of the corner posts."""
    if not (0.0 <= x <= cell.Dx and 0.0 <= y <= cell.Dy):
        raise DomainError(f"point ({x}, {y}) lies outside the unit cell")
    return bool(_solid_distance2(cell, x, y) <= cell.radius**2)


def _tilted_distance2(cell: UnitCellGeometry, x, y):
    # left column posts at k*Dy, right column at epsilon + k*Dy
    yl = y - np.round(y / cell.Dy) * cell.Dy
    yr = (y - cell.epsilon) - np.round((y - cell.epsilon) / cell.Dy) * cell.Dy
    return np.minimum(x * x + yl * yl, (cell.Dx - x) ** 2 + yr * yr)


def is_solid_tilted(cell: UnitCellGeometry, x: float, y: float) -> bool:
    """Solid test for the row-shifted cell (right posts raised by ``epsilon``)."""
    if not (0.0 <= x <= cell.Dx and 0.0 <= y <= cell.Dy):
        raise DomainError(f"point ({x}, {y}) lies outside the unit cell")
    return bool(_tilted_distance2(cell, x, y) <= cell.radius**2)


def solid_mask(cell: UnitCellGeometry, x, y, tilted: bool = False) -> np.ndarray:
    """Vectorised solid test for points already inside the cell."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d2 = _tilted_distance2(cell, x, y) if tilted else _solid_distance2(cell, x, y)
    return d2 <= cell.radius**2


def point_solid(cell: UnitCellGeometry, x: float, y: float, tilted: bool = False) -> bool:
    """Scalar solid test without bounds checking; ``y`` may lie outside [0, Dy]."""
    r2 = cell.radius * cell.radius
    yl = y - round(y / cell.Dy) * cell.Dy
    if x * x + yl * yl <= r2:
        return True
    off = cell.epsilon if tilted else 0.0
    yr = (y - off) - round((y - off) / cell.Dy) * cell.Dy
    return (cell.Dx - x) ** 2 + yr * yr <= r2


def nearest_post(cell: UnitCellGeometry, x: float, y: float,
                 tilted: bool = True) -> tuple[float, float]:
    """Centre of the post nearest to a cell-frame point; ``y`` may be unwrapped."""
    if x < 0.5 * cell.Dx:
        cy = round(y / cell.Dy) * cell.Dy
        return 0.0, cy
    off = cell.epsilon if tilted else 0.0
    cy = off + round((y - off) / cell.Dy) * cell.Dy
    return cell.Dx, cy


def fluid_fraction(cell: UnitCellGeometry) -> float:
    return 1.0 - math.pi * cell.radius**2 / (cell.Dx * cell.Dy)

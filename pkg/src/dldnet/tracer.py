"""Particle tracing, zig-zag/bumped classification and critical diameter.

Flow sources describe the row-shifted cell, where the right post column
sits one row shift ``epsilon`` above the left one. Leaving the cell at
``x = Dx`` and re-entering at ``x = 0`` therefore moves the particle down by
``epsilon`` in cell coordinates; accumulating those shifts recovers the
device-frame path. Bumped particles ride the posts (cell-frame ``y`` stays
put, device ``y`` climbs ``epsilon`` per column); zig-zag particles follow
the flow and end up one full period lower in the cell frame after ``N``
columns.

Particles are massless and move with the local fluid velocity. Finite size
enters only through the launch offset and the effective post radius
``D0/2 + Dp/2``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, NoCrossingError, SolidQueryError, TrajectoryStallError
from .flow_oracle import FlowField
from .geometry import UnitCellGeometry, nearest_post, point_solid

ZIGZAG = "zigzag"
BUMPED = "bumped"
UNDETERMINED = "undetermined"


def _reduce(cell: UnitCellGeometry, x: float, y: float, eps: float):
    # f(x + Dx, y + eps) = f(x, y)
    if x < 0.0 or x >= cell.Dx:
        k = math.floor(x / cell.Dx)
        x -= k * cell.Dx
        y -= k * eps
    return x, y % cell.Dy


class GridSource:
    """Bilinear interpolation of a gridded field in its cell periodicity."""

    def __init__(self, field_: FlowField, check_solid: bool = True):
        self.cell = field_.cell
        self.field = field_
        self.tilted = field_.tilted
        self.nx, self.ny = field_.nx, field_.ny
        self.hx, self.hy = field_.hx, field_.hy
        self.shift = field_.shift_rows
        self.eps = self.cell.epsilon if self.tilted else 0.0
        self.check_solid = check_solid
        self.spacing = min(self.hx, self.hy)
        self.vmax = float(np.max(np.hypot(field_.u, field_.v)))
        # flat python lists: scalar indexing is several times faster than numpy
        self._u = field_.u.ravel().tolist()
        self._v = field_.v.ravel().tolist()

    def _node(self, j, i):
        if i < 0:
            j += self.shift
            i += self.nx
        elif i >= self.nx:
            j -= self.shift
            i -= self.nx
        return (j % self.ny) * self.nx + i

    def __call__(self, x: float, y: float) -> tuple[float, float]:
        c = self.cell
        x, y = _reduce(c, x, y, self.eps)
        if self.check_solid and point_solid(c, x, y, self.tilted):
            raise SolidQueryError(f"velocity queried inside a post at ({x:.6g}, {y:.6g})")
        gx = x / self.hx - 0.5
        gy = y / self.hy - 0.5
        i0 = math.floor(gx)
        j0 = math.floor(gy)
        tx = gx - i0
        ty = gy - j0
        if tx < 1e-9:
            tx = 0.0
        if ty < 1e-9:
            ty = 0.0
        a, b = self._node(j0, i0), self._node(j0, i0 + 1)
        cc, d = self._node(j0 + 1, i0), self._node(j0 + 1, i0 + 1)
        w00 = (1 - tx) * (1 - ty)
        w10 = tx * (1 - ty)
        w01 = (1 - tx) * ty
        w11 = tx * ty
        U, V = self._u, self._v
        return (w00 * U[a] + w10 * U[b] + w01 * U[cc] + w11 * U[d],
                w00 * V[a] + w10 * V[b] + w01 * V[cc] + w11 * V[d])


class SurrogateSource:
    """Evaluate a trained surrogate at fixed geometry parameters.

    With ``raster`` set (the default) the surrogate is sampled once on a
    cell-centred grid and traced through bilinear interpolation like an
    oracle field; ``raster=None`` calls the network at every query.
    """

    def __init__(self, model, cell: UnitCellGeometry, raster: int | None = 256,
                 tilted: bool = True):
        self.model = model
        self.cell = cell
        self.raster = raster
        self.tilted = tilted
        self.eps = cell.epsilon if tilted else 0.0
        if raster:
            self._grid = GridSource(model.rasterize(cell, raster, raster, tilted=tilted))
            self.spacing = self._grid.spacing
            self.vmax = self._grid.vmax
        else:
            self._grid = None
            self.spacing = cell.Dx / 256
            xs = (np.arange(64) + 0.5) * cell.Dx / 64
            X, Y = np.meshgrid(xs, xs)
            u, v, _ = model.predict(X.ravel(), Y.ravel(), cell.F, cell.N)
            self.vmax = float(np.max(np.hypot(u, v)))

    def __call__(self, x: float, y: float) -> tuple[float, float]:
        if self._grid is not None:
            return self._grid(x, y)
        c = self.cell
        x, y = _reduce(c, x, y, self.eps)
        if point_solid(c, x, y, self.tilted):
            raise SolidQueryError(f"velocity queried inside a post at ({x:.6g}, {y:.6g})")
        u, v, _ = self.model.predict(np.array([x]), np.array([y]), c.F, c.N)
        return float(u[0]), float(v[0])


def velocity_at(src, x: float, y: float) -> tuple[float, float]:
    return src(x, y)


def step_rk4(src, pos: tuple[float, float], dt: float) -> tuple[float, float]:
    if dt <= 0:
        raise DomainError("dt must be positive")
    x, y = pos
    k1u, k1v = src(x, y)
    k2u, k2v = src(x + 0.5 * dt * k1u, y + 0.5 * dt * k1v)
    k3u, k3v = src(x + 0.5 * dt * k2u, y + 0.5 * dt * k2v)
    k4u, k4v = src(x + dt * k3u, y + dt * k3v)
    return (x + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u),
            y + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v))


def resolve_collision(pos, velocity, post_center, effective_radius):
    """Project ``pos`` onto the effective circle and reflect ``velocity``.

    Returns ``(projected_pos, reflected_velocity)``: the normal component of
    the velocity is reversed and the tangential one kept.
    """
    px, py = pos[0] - post_center[0], pos[1] - post_center[1]
    d = math.hypot(px, py)
    if d == 0.0:
        raise DomainError("particle centre coincides with the post centre")
    ex, ey = px / d, py / d
    proj = (post_center[0] + ex * effective_radius, post_center[1] + ey * effective_radius)
    vn = velocity[0] * ex + velocity[1] * ey
    return proj, (velocity[0] - 2.0 * vn * ex, velocity[1] - 2.0 * vn * ey)


@dataclass
class TraceOptions:
    cfl: float = 0.5            # step length as a fraction of min(grid spacing, Dp/4)
    max_steps: int = 400_000
    sliding: bool = False       # zero the normal velocity at contact instead of reversing it
    record: bool = True
    min_speed: float = 1e-9     # relative to the source's max speed
    pinned_steps: int = 2000    # consecutive steps near one point before giving up


@dataclass
class Trajectory:
    points: list = field(default_factory=list)       # (t, x_device, y_device, column)
    wrap_events: list = field(default_factory=list)  # (column index, shift applied)
    mode: str = UNDETERMINED
    displacement: float = float("nan")
    collisions: int = 0

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x_device", "y_device", "column"])
            for t, x, y, col in self.points:
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y)), int(col)])
        return path


def trace(src, cell: UnitCellGeometry, Dp: float, opts: TraceOptions | None = None,
          columns: int | None = None) -> Trajectory:
    """Trace one particle through ``columns`` (default ``N``) post columns."""
    opts = opts or TraceOptions()
    if not (0.0 < Dp < cell.gap):
        raise DomainError(f"particle diameter {Dp} must lie in (0, gap={cell.gap})")
    if not getattr(src, "tilted", True):
        raise DomainError("tracing needs a row-shifted (tilted) flow source")
    columns = cell.N if columns is None else columns
    r_eff = cell.radius + 0.5 * Dp
    ell = opts.cfl * min(src.spacing, 0.25 * Dp)
    slow = opts.min_speed * src.vmax
    eps = cell.epsilon

    x, y = 0.0, r_eff
    y_start = y
    t = 0.0
    col = 0
    traj = Trajectory()
    record = opts.record
    pinned, anchor = 0, (x, y)
    if record:
        traj.points.append((t, x, y, col))

    for _ in range(opts.max_steps):
        u, v = src(x, y)
        speed = math.hypot(u, v)
        if speed <= slow:
            raise TrajectoryStallError(
                f"particle stalled at ({x:.6g}, {y:.6g}) in column {col} (speed {speed:.3e})")
        dt = ell / speed
        for _attempt in range(8):
            try:
                xn, yn = step_rk4(src, (x, y), dt)
                break
            except SolidQueryError:
                dt *= 0.5
        else:
            raise TrajectoryStallError(f"cannot advance past ({x:.6g}, {y:.6g})")
        t += dt

        cx, cy = nearest_post(cell, xn, yn, tilted=True)
        d = math.hypot(xn - cx, yn - cy)
        if d < r_eff:
            step_vel = ((xn - x) / dt, (yn - y) / dt)
            (px, py), _ = resolve_collision((xn, yn), step_vel, (cx, cy), r_eff)
            if opts.sliding:
                xn, yn = px, py
            else:
                # reversing the normal velocity mirrors the penetration back out
                depth = (r_eff - d) / r_eff
                xn, yn = px + (px - cx) * depth, py + (py - cy) * depth
            traj.collisions += 1

        # a free particle covers two step lengths in two steps, leaving the anchor;
        # flow pushing straight into a post keeps it there indefinitely
        if math.hypot(xn - anchor[0], yn - anchor[1]) < 1.5 * ell:
            pinned += 1
            if pinned >= opts.pinned_steps:
                raise TrajectoryStallError(
                    f"particle pinned against a post at ({x:.6g}, {y:.6g}) in column {col}")
        else:
            pinned, anchor = 0, (xn, yn)

        x, y = xn, yn
        if x >= cell.Dx:
            x -= cell.Dx
            y -= eps
            traj.wrap_events.append((col, eps))
            col += 1
            if record:
                traj.points.append((t, x + col * cell.Dx, y + col * eps, col))
            if col >= columns:
                break
        elif record:
            traj.points.append((t, x + col * cell.Dx, y + col * eps, col))
    else:
        raise TrajectoryStallError(f"step budget {opts.max_steps} exhausted in column {col}")

    dy_dev = (y + columns * eps) - y_start
    traj.displacement = dy_dev
    traj.mode = BUMPED if dy_dev >= 0.5 * columns * eps else ZIGZAG
    return traj


def classify_mode(src, cell: UnitCellGeometry, Dp: float,
                  opts: TraceOptions | None = None) -> str:
    return trace(src, cell, Dp, opts or TraceOptions(record=False)).mode


@dataclass
class DcResult:
    dc: float
    bracket: tuple[float, float]
    evaluations: int
    log: list  # (Dp, mode) in evaluation order

    def to_dict(self) -> dict:
        return {
            "dc": self.dc,
            "bracket": list(self.bracket),
            "evaluations": self.evaluations,
            "log": [{"Dp": d, "mode": m} for d, m in self.log],
        }

    def write_json(self, path, extra: dict | None = None) -> Path:
        path = Path(path)
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
        return path


def critical_diameter(src, cell: UnitCellGeometry, tol: float = 1e-4,
                      opts: TraceOptions | None = None,
                      bounds: tuple[float, float] = (0.01, 0.99)) -> DcResult:
    """Bisect the particle diameter between zig-zag and bumped behaviour."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    opts = opts or TraceOptions(record=False)
    lo, hi = bounds[0] * cell.gap, bounds[1] * cell.gap
    log = []

    def mode(dp):
        m = trace(src, cell, dp, opts).mode
        log.append((dp, m))
        return m

    m_lo, m_hi = mode(lo), mode(hi)
    if m_lo != ZIGZAG or m_hi != BUMPED:
        raise NoCrossingError(
            f"no mode change in [{lo:.5g}, {hi:.5g}]: {m_lo} at low end, {m_hi} at high end",
            low_mode=m_lo, high_mode=m_hi)
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if mode(mid) == BUMPED:
            hi = mid
        else:
            lo = mid
    return DcResult(0.5 * (lo + hi), (lo, hi), len(log), log)

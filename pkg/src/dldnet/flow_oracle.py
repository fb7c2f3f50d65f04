"""Steady creeping-flow oracle for the DLD unit cell.

Stokes equations on a staggered (MAC) grid, driven by a uniform body force
equivalent to a fixed pressure drop across the cell. Posts are represented by
blocking every grid cell whose centre lies inside a post; face velocities
touching a blocked cell are held at zero. The saddle-point system is solved
with a sparse LU factorisation followed by iterative refinement, so the
discrete divergence is zero to solver precision and the column flux is the
same at every x.

By default the cell is the row-shifted ("tilted") DLD cell: periodic in y,
and periodic in x up to the row shift, ``f(x + Dx, y + eps) = f(x, y)``.
The shift must be a whole number of grid rows, so ``ny`` is rounded up to a
multiple of ``N``. Side walls of a real device forbid net lateral flow; an
unknown uniform lateral force enforces that. ``tilted=False`` solves the
plain doubly periodic corner-post tile.

Stored fields live at cell centres ``x_i = (i + 1/2) Dx/nx``; the solid mask
is the post test evaluated at those centres, i.e. exactly the blocked set.
Stored pressure is ``p_periodic + dp (1 - x/Dx)``; the small linear-in-y
part carried by the lateral force is left out so ``p`` stays y-periodic.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DomainError, ParseError, ResolutionError
from .geometry import ReynoldsSpec, UnitCellGeometry, make_cell, reynolds, solid_mask

log = logging.getLogger(__name__)

DEFAULT_DP = 0.1
DEFAULT_GRID = 256
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 500_000
MIN_GAP_CELLS = 4


@dataclass
class RawFlow:
    """Solver output in solver units (viscosity ``mu``, body force ``force``)."""

    Dx: float
    Dy: float
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray  # periodic part only
    solid: np.ndarray
    force: float
    mu: float
    residual: float
    iterations: int
    shift_rows: int = 0
    lateral_force: float = 0.0

    @property
    def nx(self) -> int:
        return self.u.shape[1]

    @property
    def ny(self) -> int:
        return self.u.shape[0]


@dataclass
class FlowField:
    cell: UnitCellGeometry
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    solid_mask: np.ndarray
    scale_meta: dict = field(default_factory=dict)

    @property
    def nx(self) -> int:
        return self.u.shape[1]

    @property
    def ny(self) -> int:
        return self.u.shape[0]

    @property
    def hx(self) -> float:
        return self.cell.Dx / self.nx

    @property
    def hy(self) -> float:
        return self.cell.Dy / self.ny

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    @property
    def y(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    @property
    def dp(self) -> float:
        return self.scale_meta["dp"]

    @property
    def tilted(self) -> bool:
        return bool(self.scale_meta.get("tilted", False))

    @property
    def shift_rows(self) -> int:
        return int(self.scale_meta.get("shift_rows", 0))

    def pressure_periodic(self) -> np.ndarray:
        """Pressure with the linear drop removed."""
        return self.p - self.dp * (1.0 - self.x[None, :] / self.cell.Dx)

    def is_solid(self, x, y) -> np.ndarray:
        """Post test in this field's cell convention; x, y inside the cell."""
        return solid_mask(self.cell, x, y, tilted=self.tilted)

    def raw(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Solver-unit (u, v, p); ``p`` includes the linear drop ``force * (Dx - x)``."""
        m = self.scale_meta
        return (
            self.u * m["u_scale"],
            self.v * m["u_scale"],
            self.p / m["p_scale"] + m["p_offset"],
        )

    def rescaled(self, u_scale: float) -> "FlowField":
        """Same field with velocities divided by a different scale."""
        if u_scale == 0:
            raise DomainError("u_scale must be non-zero")
        ratio = self.scale_meta["u_scale"] / u_scale
        meta = dict(self.scale_meta, u_scale=float(u_scale))
        return FlowField(self.cell, self.u * ratio, self.v * ratio, self.p.copy(),
                         self.solid_mask.copy(), meta)


def bilinear(arr: np.ndarray, x, y, Dx: float, Dy: float, shift_rows: int = 0,
             epsilon: float = 0.0) -> np.ndarray:
    """Interpolate a cell-centred array that satisfies ``f(x+Dx, y+eps) = f(x, y)``.

    With ``shift_rows = 0`` this is plain doubly periodic bilinear
    interpolation. At grid nodes the result equals the stored value.
    """
    ny, nx = arr.shape
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = np.floor(x / Dx)
    x = x - k * Dx
    y = y - k * epsilon
    gx = _snap(x / (Dx / nx) - 0.5)
    gy = _snap(y / (Dy / ny) - 0.5)
    i0 = np.floor(gx).astype(np.int64)
    j0 = np.floor(gy).astype(np.int64)
    tx = gx - i0
    ty = gy - j0

    def fetch(j, i):
        j = j + np.where(i < 0, shift_rows, 0) - np.where(i >= nx, shift_rows, 0)
        return arr[j % ny, i % nx]

    return ((1 - tx) * (1 - ty) * fetch(j0, i0) + tx * (1 - ty) * fetch(j0, i0 + 1)
            + (1 - tx) * ty * fetch(j0 + 1, i0) + tx * ty * fetch(j0 + 1, i0 + 1))


def _snap(g, tol=1e-9):
    # grid coordinates within rounding of a node are moved onto it
    r = np.round(g)
    return np.where(np.abs(g - r) < tol, r, g)


def interpolate(field_: FlowField, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bilinear (u, v, p) at arbitrary points, honouring the cell periodicity."""
    c = field_.cell
    eps = c.epsilon if field_.tilted else 0.0
    s = field_.shift_rows
    u = bilinear(field_.u, x, y, c.Dx, c.Dy, s, eps)
    v = bilinear(field_.v, x, y, c.Dx, c.Dy, s, eps)
    # bilinear weights reproduce the linear drop exactly away from the x seam,
    # so interior points use the stored pressure (bit-exact at nodes)
    xa = np.asarray(x, dtype=float)
    xr = xa - np.floor(xa / c.Dx) * c.Dx
    half = 0.5 * field_.hx
    seam = (xr < half) | (xr > c.Dx - half)
    p = bilinear(field_.p, x, y, c.Dx, c.Dy, s, eps)
    if np.any(seam):
        pp = bilinear(field_.pressure_periodic(), x, y, c.Dx, c.Dy, s, eps)
        p = np.where(seam, pp + field_.dp * (1.0 - xa / c.Dx), p)
    return u, v, p


def poiseuille_reference(y: float, h: float, u_max: float) -> float:
    """Fully developed channel profile, ``y`` measured from the centreline."""
    if abs(y) > h:
        raise DomainError(f"|y|={abs(y)} exceeds half-height {h}")
    return u_max * (1.0 - (y / h) ** 2)


def _neighbours(ny: int, nx: int, s: int):
    """Flat index arrays of right/left/up/down neighbours with a row-shifted x seam."""
    idx = np.arange(nx * ny).reshape(ny, nx)
    j = np.arange(ny)
    right = np.roll(idx, -1, axis=1)
    right[:, nx - 1] = idx[(j - s) % ny, 0]
    left = np.roll(idx, 1, axis=1)
    left[:, 0] = idx[(j + s) % ny, nx - 1]
    up = np.roll(idx, -1, axis=0)
    down = np.roll(idx, 1, axis=0)
    return idx.ravel(), right.ravel(), left.ravel(), up.ravel(), down.ravel()


def _assemble(solid: np.ndarray, hx: float, hy: float, mu: float, force: float,
              drag: float, walls: bool, shift_rows: int, lateral: bool):
    """Symmetric saddle-point system for the fluid unknowns.

    Unknown order: free u faces, free v faces, fluid pressures (one pinned),
    then optionally the lateral force paired with a zero-net-v constraint.
    """
    ny, nx = solid.shape
    n = nx * ny
    I, R, L, U, D = _neighbours(ny, nx, shift_rows)
    sf = solid.ravel()
    # u face k sits between cell L[k] and cell k; v face k between D[k] and k
    su = sf | sf[L]
    sv = sf | sf[D]
    if walls:
        sv = sv.copy()
        sv[:nx] = True
    fu, fv, fp = ~su, ~sv, ~sf
    if not fp.any():
        raise DomainError("no fluid cells in the domain")
    fp_eq = fp.copy()
    fp_eq[np.flatnonzero(fp)[0]] = False

    free = np.concatenate([fu, fv, fp_eq, [lateral]])
    col = np.full(free.size, -1, dtype=np.int64)
    col[free] = np.arange(free.sum())
    cu, cv, cp, cg = col[:n], col[n:2 * n], col[2 * n:3 * n], col[3 * n]

    rows, cols, vals = [], [], []

    def add(r, c, v):
        v = np.broadcast_to(v, r.shape)
        keep = (r >= 0) & (c >= 0)
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append(v[keep])

    cx, cy = mu / hx**2, mu / hy**2
    wall_rows = np.zeros(n, dtype=bool)
    if walls:
        wall_rows[:nx] = True          # below row 0
    wall_rows_top = np.zeros(n, dtype=bool)
    if walls:
        wall_rows_top[-nx:] = True     # above row ny-1

    for comp, s_self, cs, normal, tangent, cn, ct, hn, behind in (
        ("u", su, cu, (R, L), (U, D), cx, cy, hx, L),
        ("v", sv, cv, (U, D), (R, L), cy, cx, hy, D),
    ):
        r = cs[I]
        diag = np.full(n, 2 * cn + 2 * ct + drag)
        for nb in normal:
            # blocked normal neighbour: zero velocity at that face location
            add(r, cs[nb], -cn)
        for nb, edge in zip(tangent, (wall_rows_top, wall_rows)):
            blocked = s_self[nb]
            if walls and comp == "u":
                blocked = blocked | edge
            # mirror ghost value puts the wall on the blocked cell's edge
            diag = diag + np.where(blocked, ct, 0.0)
            add(r[~blocked], cs[nb][~blocked], -ct)
        add(r, r, diag)
        # pressure gradient and its transpose (negated divergence)
        add(r, cp[I], np.full(n, 1.0 / hn))
        add(r, cp[behind], np.full(n, -1.0 / hn))
        add(cp[I], r, np.full(n, 1.0 / hn))
        add(cp[behind], r, np.full(n, -1.0 / hn))

    if lateral:
        rv = cv[I]
        g = np.full(n, cg)
        add(rv, g, np.full(n, -1.0))
        add(g, rv, np.full(n, -1.0))

    m = int(free.sum())
    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    b = np.zeros(m)
    b[cu[fu]] = force
    return A, b, (cu, cv, cp, cg, fu, fv, fp_eq)


def solve_stokes(solid: np.ndarray, Dx: float, Dy: float, force: float, mu: float = 1.0,
                 drag: float = 0.0, walls: bool = False, shift_rows: int = 0,
                 lateral: bool = False, tol: float = DEFAULT_TOL,
                 max_iters: int = 20) -> RawFlow:
    """Solve the blocked-cell Stokes problem.

    ``max_iters`` bounds the iterative-refinement sweeps after the direct
    factorisation; the relative residual must fall below ``tol``.
    """
    ny, nx = solid.shape
    hx, hy = Dx / nx, Dy / ny
    A, b, (cu, cv, cp, cg, fu, fv, fp) = _assemble(
        solid, hx, hy, mu, force, drag, walls, shift_rows, lateral)
    lu = spla.splu(A, permc_spec="COLAMD")
    sol = lu.solve(b)
    bnorm = np.linalg.norm(b)
    it = 1
    res = np.linalg.norm(b - A @ sol) / bnorm
    while res >= tol and it < max_iters:
        sol += lu.solve(b - A @ sol)
        res = np.linalg.norm(b - A @ sol) / bnorm
        it += 1
    if not np.isfinite(res) or res >= tol:
        raise ConvergenceError(
            f"flow solve did not converge: residual {res:.3e} after {it} iterations",
            residual=res, iterations=it)

    n = nx * ny
    uf, vf, pf = np.zeros(n), np.zeros(n), np.zeros(n)
    uf[fu] = sol[cu[fu]]
    vf[fv] = sol[cv[fv]]
    pf[fp] = sol[cp[fp]]
    I, R, L, U, D = _neighbours(ny, nx, shift_rows)
    # face values to cell centres; blocked cells have all faces at zero
    u = 0.5 * (uf + uf[R])
    v = 0.5 * (vf + vf[U])
    fluid = ~solid.ravel()
    pf = pf - pf[fluid].mean()
    p = _fill_solid(pf, fluid, (R, L, U, D))
    g = float(sol[cg]) if lateral else 0.0
    shape = (ny, nx)
    return RawFlow(Dx, Dy, u.reshape(shape), v.reshape(shape), p.reshape(shape),
                   solid.copy(), force, mu, float(res), it, shift_rows, g)


def _fill_solid(values: np.ndarray, known: np.ndarray, neighbours) -> np.ndarray:
    """Extend values into blocked cells by repeated averaging of known neighbours."""
    values = np.where(known, values, 0.0)
    known = known.copy()
    while not known.all():
        total = np.zeros_like(values)
        count = np.zeros_like(values)
        for nb in neighbours:
            total += np.where(known[nb], values[nb], 0.0)
            count += known[nb]
        grow = ~known & (count > 0)
        if not grow.any():
            break
        values[grow] = total[grow] / count[grow]
        known = known | grow
    return values


def cell_mask(cell: UnitCellGeometry, nx: int, ny: int, tilted: bool = True) -> np.ndarray:
    x = (np.arange(nx) + 0.5) * cell.Dx / nx
    y = (np.arange(ny) + 0.5) * cell.Dy / ny
    X, Y = np.meshgrid(x, y)
    return solid_mask(cell, X, Y, tilted=tilted)


def nondimensionalize(raw: RawFlow, cell: UnitCellGeometry, dp: float = DEFAULT_DP,
                      u_scale: float | None = None, tilted: bool | None = None) -> FlowField:
    """Map solver output onto the dataset convention.

    Pressure is scaled and shifted so the inlet-line average equals ``dp``
    and the outlet-line average is zero; velocities are divided by
    ``u_scale`` (defaults to the field's own max |u|).
    """
    if u_scale is None:
        u_scale = float(np.max(np.abs(raw.u)))
    if u_scale == 0:
        raise DomainError("u_scale must be non-zero")
    if tilted is None:
        tilted = raw.shift_rows != 0
    eps = cell.epsilon if tilted else 0.0
    p_scale = dp / (raw.force * raw.Dx)
    x = (np.arange(raw.nx) + 0.5) * raw.Dx / raw.nx
    y = (np.arange(raw.ny) + 0.5) * raw.Dy / raw.ny
    # inlet and outlet lines differ only by the linear part: both averages of
    # the periodic pressure equal its average over the fluid part of x = 0
    fluid0 = ~solid_mask(cell, np.zeros_like(y), y, tilted=tilted)
    p0 = bilinear(raw.p, np.zeros_like(y), y, raw.Dx, raw.Dy, raw.shift_rows, eps)
    p_offset = float(np.mean(p0[fluid0])) if fluid0.any() else float(np.mean(p0))
    meta = {
        "dp": float(dp),
        "u_scale": float(u_scale),
        "p_scale": float(p_scale),
        "p_offset": p_offset,
        "force": raw.force,
        "lateral_force": raw.lateral_force,
        "mu": raw.mu,
        "residual": raw.residual,
        "iterations": raw.iterations,
        "tilted": bool(tilted),
        "shift_rows": int(raw.shift_rows),
    }
    p = (raw.p - p_offset) * p_scale + dp * (1.0 - x / raw.Dx)[None, :]
    X, Y = np.meshgrid(x, y)
    return FlowField(cell, raw.u / u_scale, raw.v / u_scale, p,
                     solid_mask(cell, X, Y, tilted=tilted), meta)


def grid_rows(cell: UnitCellGeometry, ny: int, tilted: bool = True) -> int:
    """Smallest row count >= ny for which the row shift is a whole number of rows."""
    if not tilted:
        return ny
    return cell.N * math.ceil(ny / cell.N)


def solve_steady(cell: UnitCellGeometry, dp: float = DEFAULT_DP, nx: int = DEFAULT_GRID,
                 ny: int = DEFAULT_GRID, tol: float = DEFAULT_TOL,
                 max_iters: int = DEFAULT_MAX_ITERS, mu: float = 1.0,
                 u_scale: float | None = None, tilted: bool = True) -> FlowField:
    if nx < 64 or ny < 64:
        raise ResolutionError(f"grid must be at least 64x64, got {nx}x{ny}")
    if tol <= 0:
        raise DomainError("tol must be positive")
    ny = grid_rows(cell, ny, tilted)
    if cell.gap < MIN_GAP_CELLS * max(cell.Dx / nx, cell.Dy / ny):
        raise ResolutionError(
            f"gap {cell.gap:.4g} spans fewer than {MIN_GAP_CELLS} grid cells at {nx}x{ny}")
    shift = ny // cell.N if tilted else 0
    raw = solve_stokes(cell_mask(cell, nx, ny, tilted), cell.Dx, cell.Dy, dp / cell.Dx,
                       mu=mu, shift_rows=shift, lateral=tilted, tol=tol,
                       max_iters=min(max_iters, 50))
    field_ = nondimensionalize(raw, cell, dp, u_scale, tilted=tilted)
    mean_u = float(np.mean(raw.u[~raw.solid]))
    field_.scale_meta["reynolds"] = reynolds(
        ReynoldsSpec(1.0, abs(mean_u) or 1e-300, cell.gap, mu))
    log.info("solved F=%.3f N=%d grid %dx%d residual %.2e", cell.F, cell.N, nx, ny,
             raw.residual)
    return field_


def solve_open_cell(Ds: float = 0.4, dp: float = DEFAULT_DP, nx: int = 64, ny: int = 64,
                    walls: bool = False, drag: float = 0.0, mu: float = 1.0,
                    tol: float = DEFAULT_TOL) -> RawFlow:
    """Post-free validation configurations.

    ``walls=True`` replaces the periodic top/bottom with no-slip walls
    (plane Poiseuille flow). A fully periodic empty box has no steady Stokes
    solution without a friction term, so ``drag`` (a Hele-Shaw style linear
    drag coefficient) must be positive in that case.
    """
    if not walls and drag <= 0:
        raise DomainError("a periodic box without posts or walls needs drag > 0")
    solid = np.zeros((ny, nx), dtype=bool)
    return solve_stokes(solid, Ds, Ds, dp / Ds, mu=mu, drag=drag, walls=walls, tol=tol)


def column_flux(field_: FlowField) -> np.ndarray:
    """Volumetric x-flux through each column of cell centres."""
    return field_.u.sum(axis=0) * field_.hy


# ---------------------------------------------------------------------------
# export

def write_field(field_: FlowField, path) -> Path:
    """CSV ``x,y,u,v,p,solid`` (row-major, y outer) plus ``<path>.json`` sidecar."""
    path = Path(path)
    X, Y = np.meshgrid(field_.x, field_.y)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "u", "v", "p", "solid"])
        for row in zip(X.ravel(), Y.ravel(), field_.u.ravel(), field_.v.ravel(),
                       field_.p.ravel(), field_.solid_mask.ravel()):
            w.writerow([repr(float(a)) for a in row[:5]] + [int(row[5])])
    meta = {
        "geometry": field_.cell.as_dict(),
        "nx": field_.nx,
        "ny": field_.ny,
        **field_.scale_meta,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_field(path) -> FlowField:
    path = Path(path)
    try:
        meta = json.loads(sidecar_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read field metadata: {exc}") from exc
    nx, ny = int(meta["nx"]), int(meta["ny"])
    cell = make_cell(**meta["geometry"])
    data = np.empty((nx * ny, 6))
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["x", "y", "u", "v", "p", "solid"]:
            raise ParseError(f"unexpected header {header}", line=1)
        k = 0
        for lineno, row in enumerate(r, start=2):
            if k >= nx * ny or len(row) != 6:
                raise ParseError("malformed field row", line=lineno)
            try:
                data[k] = [float(a) for a in row]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            k += 1
    if k != nx * ny:
        raise ParseError(f"expected {nx * ny} rows, found {k}")
    shape = (ny, nx)
    scale = {k_: v for k_, v in meta.items() if k_ not in ("geometry", "nx", "ny")}
    return FlowField(cell, data[:, 2].reshape(shape), data[:, 3].reshape(shape),
                     data[:, 4].reshape(shape), data[:, 5].reshape(shape).astype(bool), scale)

"""Training data from flow fields.

Interior samples are drawn uniformly over the fluid part of a cell and take
their targets from the bilinear interpolant of the oracle field, the same
interpolant the tracer uses. Boundary sets (post walls, inlet, outlet) feed
the soft boundary-condition loss.

Every geometry gets its own random stream derived from ``(seed, F, N)``, so
the samples of one geometry do not depend on which other geometries are in
the dataset or in which order they are processed.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError, UsageError, ValidationError
from .flow_oracle import DEFAULT_DP, FlowField, interpolate, sidecar_path
from .geometry import UnitCellGeometry, make_cell, solid_mask

COLUMNS = ("x", "y", "F", "N", "u", "v", "p")
FORMAT_VERSION = 1

DEFAULT_SAMPLES = 1000
DEFAULT_WALL = 200
DEFAULT_IO = 100

# desk-scale recipe: 12 training geometries, held-out F values for validation
DESK_TRAIN = tuple((F, N) for F in (0.35, 0.45, 0.54, 0.65) for N in (6, 9, 12))
DESK_HELDOUT = ((0.57, 10), (0.49, 8), (0.62, 11))
# full recipe: 120 geometries, 12 F values in [0.25, 0.70] times N = 5..14
PAPER_TRAIN = tuple((round(float(F), 4), N) for F in np.linspace(0.25, 0.70, 12)
                    for N in range(5, 15))


@dataclass(frozen=True)
class SampleRecord:
    x: float
    y: float
    F: float
    N: int
    u: float
    v: float
    p: float


@dataclass
class BoundarySets:
    wall_points: np.ndarray
    inlet_points: np.ndarray
    outlet_points: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("wall_points", "inlet_points", "outlet_points")}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundarySets":
        def arr(key):
            a = np.asarray(d[key], dtype=float)
            return a.reshape(-1, 2)
        return cls(arr("wall_points"), arr("inlet_points"), arr("outlet_points"))

    def __eq__(self, other):
        if not isinstance(other, BoundarySets):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("wall_points", "inlet_points", "outlet_points"))


@dataclass
class Dataset:
    """Samples as an ``(n, 7)`` array with columns ``x, y, F, N, u, v, p``."""

    table: np.ndarray
    boundary: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float).reshape(-1, len(COLUMNS))

    def __len__(self) -> int:
        return self.table.shape[0]

    @property
    def records(self) -> list[SampleRecord]:
        return [_record(row) for row in self.table]

    @property
    def geometries(self) -> list[tuple[float, int]]:
        return [(float(F), int(N)) for F, N in self.meta.get("geometries", [])]

    def column(self, name: str) -> np.ndarray:
        return self.table[:, COLUMNS.index(name)]

    def rows_for(self, F: float, N: int) -> np.ndarray:
        sel = (self.table[:, 2] == F) & (self.table[:, 3] == N)
        return self.table[sel]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.table, other.table) and self.meta == other.meta
                and self.boundary.keys() == other.boundary.keys()
                and all(self.boundary[k] == other.boundary[k] for k in self.boundary))


def _record(row) -> SampleRecord:
    x, y, F, N, u, v, p = (float(a) for a in row)
    return SampleRecord(x, y, F, int(N), u, v, p)


def geometry_key(F: float, N: int) -> str:
    return f"{float(F)!r}/{int(N)}"


def geometry_rng(seed: int, F: float, N: int, stream: int) -> np.random.Generator:
    """Independent stream per (seed, geometry, purpose)."""
    f_bits = int(np.float64(F).view(np.uint64))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, f_bits & 0xFFFFFFFF,
                                 f_bits >> 32, int(N), int(stream)])
    return np.random.default_rng(ss)


def sample_array(field_: FlowField, n: int, seed: int) -> np.ndarray:
    """``(n, 7)`` samples uniform over the fluid region (rejection sampling)."""
    if n < 1:
        raise DomainError("sample count must be at least 1")
    c = field_.cell
    rng = geometry_rng(seed, c.F, c.N, 0)
    xs, ys = [], []
    have = 0
    while have < n:
        m = max(64, int(1.5 * (n - have)) + 16)
        x = rng.uniform(0.0, c.Dx, m)
        y = rng.uniform(0.0, c.Dy, m)
        keep = ~field_.is_solid(x, y)
        xs.append(x[keep])
        ys.append(y[keep])
        have += int(keep.sum())
    x = np.concatenate(xs)[:n]
    y = np.concatenate(ys)[:n]
    u, v, p = interpolate(field_, x, y)
    return np.column_stack([x, y, np.full(n, c.F), np.full(n, float(c.N)), u, v, p])


def sample_points(field_: FlowField, n: int, seed: int) -> list[SampleRecord]:
    return [_record(row) for row in sample_array(field_, n, seed)]


def boundary_sets(cell: UnitCellGeometry, n_wall: int = DEFAULT_WALL, n_io: int = DEFAULT_IO,
                  seed: int = 0, tilted: bool = True) -> BoundarySets:
    """Wall points on the post arcs, inlet (x=0) and outlet (x=Dx) fluid points.

    The left column of posts contributes the arcs facing into the cell
    (angles in [-pi/2, pi/2] about ``(0, 0)``), the right column the arcs
    facing back (angles in [pi/2, 3pi/2] about ``(Dx, eps)``). ``y`` is folded
    into [0, Dy).
    """
    if n_wall < 1 or n_io < 1:
        raise DomainError("boundary point counts must be at least 1")
    rng = geometry_rng(seed, cell.F, cell.N, 1)
    R = cell.radius
    off = cell.epsilon if tilted else 0.0
    n_left = n_wall // 2
    theta = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, n_wall)
    theta[n_left:] += math.pi
    cx = np.where(np.arange(n_wall) < n_left, 0.0, cell.Dx)
    cy = np.where(np.arange(n_wall) < n_left, 0.0, off)
    wx = cx + R * np.cos(theta)
    wy = np.mod(cy + R * np.sin(theta), cell.Dy)
    wall = np.column_stack([wx, wy])

    span = cell.Dy - 2.0 * R
    yi = R + span * _open_uniform(rng, n_io)
    yo = np.mod(off + R + span * _open_uniform(rng, n_io), cell.Dy)
    inlet = np.column_stack([np.zeros(n_io), yi])
    outlet = np.column_stack([np.full(n_io, cell.Dx), yo])
    return BoundarySets(wall, inlet, outlet)


def _open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    # uniform on the open interval (0, 1) so points never touch a post
    t = rng.uniform(0.0, 1.0, n)
    return np.where(t == 0.0, 0.5, t)


def _geometry_part(args):
    field_, n, seed, n_wall, n_io = args
    c = field_.cell
    return sample_array(field_, n, seed), boundary_sets(c, n_wall, n_io, seed, field_.tilted)


def build_dataset(fields: list[FlowField], n_per: int = DEFAULT_SAMPLES, seed: int = 0,
                  n_wall: int = DEFAULT_WALL, n_io: int = DEFAULT_IO,
                  workers: int = 1) -> Dataset:
    """Samples and boundary sets for every field.

    Velocities keep each field's own normalisation (max |u| = 1 per
    geometry); the scales are recorded in ``meta["u_scales"]``.
    """
    if not fields:
        raise UsageError("no flow fields supplied")
    keys = [(f.cell.F, f.cell.N) for f in fields]
    if len(set(keys)) != len(keys):
        raise UsageError("duplicate geometry in field list")
    dps = {f.dp for f in fields}
    if len(dps) != 1:
        raise UsageError(f"fields disagree on the pressure drop: {sorted(dps)}")
    jobs = [(f, n_per, seed, n_wall, n_io) for f in fields]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_geometry_part, jobs))
    else:
        parts = [_geometry_part(j) for j in jobs]
    table = np.concatenate([p[0] for p in parts])
    boundary = {geometry_key(F, N): p[1] for (F, N), p in zip(keys, parts)}
    meta = {
        "version": FORMAT_VERSION,
        "dp": float(dps.pop()),
        "u_scales": [float(f.scale_meta["u_scale"]) for f in fields],
        "seed": int(seed),
        "geometries": [[float(F), int(N)] for F, N in keys],
        "Ds": float(fields[0].cell.Ds),
        "tilted": bool(fields[0].tilted),
        "samples_per_geometry": int(n_per),
        "grid": [int(fields[0].nx), int(fields[0].ny)],
    }
    return Dataset(table, boundary, meta)


def validate(ds: Dataset) -> None:
    """Raise ValidationError naming the first record outside the fluid region."""
    t = ds.table
    if not np.all(np.isfinite(t)):
        bad = int(np.argmax(~np.all(np.isfinite(t), axis=1)))
        raise ValidationError(f"record {bad} has non-finite values", line=bad + 2)
    Ds = float(ds.meta.get("Ds", 0.4))
    tilted = bool(ds.meta.get("tilted", True))
    seen = set()
    for F, N in {(float(F), int(N)) for F, N in t[:, 2:4]}:
        try:
            cell = make_cell(F, N, Ds)
        except DomainError as exc:
            raise ValidationError(f"invalid geometry F={F} N={N}: {exc}") from exc
        idx = np.flatnonzero((t[:, 2] == F) & (t[:, 3] == N))
        x, y = t[idx, 0], t[idx, 1]
        outside = (x < 0) | (x > cell.Dx) | (y < 0) | (y > cell.Dy)
        inside = outside | solid_mask(cell, np.clip(x, 0, cell.Dx), np.clip(y, 0, cell.Dy),
                                      tilted=tilted)
        if inside.any():
            k = int(idx[np.argmax(inside)])
            what = "outside the cell" if outside[np.argmax(inside)] else "inside a post"
            raise ValidationError(
                f"record {k} (x={t[k, 0]!r}, y={t[k, 1]!r}, F={F}, N={N}) lies {what}",
                line=k + 2)
    for k, row in enumerate(map(tuple, t[:, :4])):
        if row in seen:
            raise ValidationError(f"record {k} duplicates an earlier (geometry, x, y)",
                                  line=k + 2)
        seen.add(row)


def write_dataset(ds: Dataset, path) -> Path:
    """CSV of samples plus ``<path>.json`` holding metadata and boundary sets."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in ds.table:
            vals = [repr(float(a)) for a in row]
            vals[3] = str(int(row[3]))
            w.writerow(vals)
    side = {
        "meta": ds.meta,
        "boundary": {k: b.to_dict() for k, b in ds.boundary.items()},
    }
    sidecar_path(path).write_text(json.dumps(side, indent=1, sort_keys=True))
    return path


def read_dataset(path, check: bool = True) -> Dataset:
    path = Path(path)
    try:
        side = json.loads(sidecar_path(path).read_text())
        meta = side["meta"]
        boundary = {k: BoundarySets.from_dict(v) for k, v in side["boundary"].items()}
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"cannot read dataset metadata: {exc}") from exc
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open dataset: {exc}") from exc
    with fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(header) != COLUMNS:
            raise ParseError(f"unexpected header {header}", line=1)
        for lineno, row in enumerate(r, start=2):
            if len(row) != len(COLUMNS):
                raise ParseError(f"expected {len(COLUMNS)} fields, got {len(row)}", line=lineno)
            try:
                rows.append([float(a) for a in row])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
    ds = Dataset(np.array(rows, dtype=float).reshape(-1, len(COLUMNS)), boundary, meta)
    if check:
        validate(ds)
    return ds


def split_by_geometry(ds: Dataset, held_out: list[tuple[float, int]]) -> tuple[Dataset, Dataset]:
    """Partition a dataset into (kept, held-out) by geometry."""
    ho = {(float(F), int(N)) for F, N in held_out}
    mask = np.array([(float(F), int(N)) in ho for F, N in ds.table[:, 2:4]], dtype=bool)

    def part(sel, keep_geo):
        geos = [g for g in ds.meta.get("geometries", []) if keep_geo((g[0], g[1]))]
        meta = dict(ds.meta, geometries=geos)
        if "u_scales" in ds.meta:
            meta["u_scales"] = [s for g, s in zip(ds.meta["geometries"], ds.meta["u_scales"])
                                if keep_geo((g[0], g[1]))]
        bnd = {geometry_key(*g): ds.boundary[geometry_key(*g)] for g in geos
               if geometry_key(*g) in ds.boundary}
        return Dataset(ds.table[sel], bnd, meta)

    return (part(~mask, lambda g: (float(g[0]), int(g[1])) not in ho),
            part(mask, lambda g: (float(g[0]), int(g[1])) in ho))

"""Evaluation: R^2, critical-diameter error, periodicity scans, sweep tables."""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DLDError, DomainError
from .flow_oracle import FlowField, interpolate
from .geometry import UnitCellGeometry
from .tracer import GridSource, SurrogateSource, TraceOptions, critical_diameter

FIELDS = ("u", "v", "p")
DEFAULT_PROBES = 200


def r2(truth, pred) -> float:
    truth = np.asarray(truth, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if truth.size == 0 or truth.shape != pred.shape:
        raise DomainError("r2 needs two non-empty sequences of equal length")
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise DomainError("r2 undefined: truth has zero variance")
    return 1.0 - float(np.sum((truth - pred) ** 2)) / ss_tot


def dc_percent_error(dc_true: float, dc_pred: float) -> float:
    if dc_true == 0:
        raise DomainError("dc_true must be non-zero")
    return abs(dc_true - dc_pred) / abs(dc_true) * 100.0


def periodicity_scan(model, cell: UnitCellGeometry, n_x: int = DEFAULT_PROBES) -> dict:
    """``|f(x, 0) - f(x, Dy)|`` at ``n_x`` uniform x probes, per field avg and max.

    The two rows are evaluated in separate, identically shaped calls so the
    comparison is between identical computations.
    """
    if n_x < 2:
        raise DomainError("n_x must be at least 2")
    x = np.linspace(0.0, cell.Dx, n_x)
    lo = model.predict(x, np.zeros(n_x), cell.F, cell.N)
    hi = model.predict(x, np.full(n_x, cell.Dy), cell.F, cell.N)
    out = {}
    for name, a, b in zip(FIELDS, lo, hi):
        d = np.abs(np.asarray(a) - np.asarray(b))
        out[name] = {"avg": float(d.mean()), "max": float(d.max())}
    return out


class FieldModel:
    """Wrap a flow field so it answers ``predict`` like a surrogate."""

    variant = "field"

    def __init__(self, field_: FlowField):
        self.field = field_
        self.cell = field_.cell

    def predict(self, x, y, F, N, normalized=False):
        if (F, N) != (self.cell.F, self.cell.N):
            raise DomainError("field model queried at a different geometry")
        return interpolate(self.field, x, y)

    def rasterize(self, cell, nx=256, ny=256, tilted=True):
        if cell != self.cell or nx != self.field.nx:
            raise DomainError("field model rasterised at a different geometry or grid")
        return self.field


def _check_geometry(truth: FlowField, model) -> None:
    cell = getattr(model, "cell", None)
    if cell is not None and cell != truth.cell:
        raise DomainError(f"model geometry {cell} differs from field geometry {truth.cell}")
    norms = getattr(model, "norms", None)
    if norms is not None and abs(norms["Dx"] - truth.cell.Dx) > 1e-12:
        raise DomainError(f"model trained for Ds={norms['Dx']}, field has Ds={truth.cell.Dx}")


def field_error_map(truth: FlowField, model) -> dict:
    """Per-node |error| for u, v, p; solid nodes are NaN (excluded)."""
    _check_geometry(truth, model)
    X, Y = np.meshgrid(truth.x, truth.y)
    pred = model.predict(X.ravel(), Y.ravel(), truth.cell.F, truth.cell.N)
    maps = {}
    for name, t, p in zip(FIELDS, (truth.u, truth.v, truth.p), pred):
        err = np.abs(np.asarray(p).reshape(t.shape) - t)
        maps[name] = np.where(truth.solid_mask, np.nan, err)
    return maps


def write_error_maps(maps: dict, directory, prefix: str = "error") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, arr in maps.items():
        path = directory / f"{prefix}_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in arr:
                w.writerow(["nan" if np.isnan(a) else repr(float(a)) for a in row])
        paths.append(path)
    return paths


def field_r2(truth: FlowField, model) -> dict:
    """R^2 per field: velocities over all nodes (zero inside posts), pressure on fluid."""
    _check_geometry(truth, model)
    X, Y = np.meshgrid(truth.x, truth.y)
    u, v, p = (np.asarray(a).reshape(truth.u.shape)
               for a in model.predict(X.ravel(), Y.ravel(), truth.cell.F, truth.cell.N))
    fluid = ~truth.solid_mask
    u = np.where(fluid, u, 0.0)
    v = np.where(fluid, v, 0.0)
    return {"u": r2(truth.u, u), "v": r2(truth.v, v), "p": r2(truth.p[fluid], p[fluid])}


def model_id(model) -> str:
    if hasattr(model, "subnets"):
        from .surrogate import model_to_dict
        blob = json.dumps(model_to_dict(model), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
    return type(model).__name__


def oracle_dc(field_: FlowField, tol: float = 1e-4, opts: TraceOptions | None = None) -> float:
    return critical_diameter(GridSource(field_), field_.cell, tol, opts).dc


def evaluate_geometry(model, truth: FlowField, dc_true: float | None = None,
                      tol: float = 1e-4, opts: TraceOptions | None = None,
                      n_probes: int = DEFAULT_PROBES) -> dict:
    cell = truth.cell
    if dc_true is None:
        dc_true = oracle_dc(truth, tol, opts)
    src = SurrogateSource(model, cell, raster=truth.nx, tilted=truth.tilted)
    dc_pred = critical_diameter(src, cell, tol, opts).dc
    row = {"F": cell.F, "N": cell.N}
    row.update({f"r2_{k}": v for k, v in field_r2(truth, model).items()})
    row.update(dc_true=dc_true, dc_pred=dc_pred, dc_error=dc_percent_error(dc_true, dc_pred))
    row["periodicity"] = periodicity_scan(model, cell, n_probes)
    return row


@dataclass
class EvalReport:
    model_id: str
    dataset_id: str
    variant: str
    rows: list = field(default_factory=list)
    by_F: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    periodicity: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    def write_csv(self, path) -> Path:
        """Table: one row per F (averaged over N) and a final aggregate row."""
        path = Path(path)
        cols = ("r2_u", "r2_v", "r2_p", "dc_error")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("F", "n_geometries") + cols)
            for r in self.by_F:
                w.writerow([repr(r["F"]), r["count"]] + [repr(r[c]) for c in cols])
            if self.aggregate:
                w.writerow(["all", self.aggregate["count"]]
                           + [repr(self.aggregate[c]) for c in cols])
        return path


def _eval_job(args):
    model, truth, dc_true, tol, opts, n_probes = args
    return evaluate_geometry(model, truth, dc_true, tol, opts, n_probes)


def sweep_report(geometries, model, fields: dict, dc_true: dict | None = None,
                 tol: float = 1e-4, opts: TraceOptions | None = None,
                 dataset_id: str = "", n_probes: int = DEFAULT_PROBES,
                 workers: int = 1) -> EvalReport:
    """Evaluate ``model`` on every geometry that has an oracle field.

    ``fields`` maps ``(F, N)`` to a FlowField; geometries without one are
    listed in ``skipped``. ``dc_true`` optionally supplies cached oracle Dc.
    """
    dc_true = dc_true or {}
    jobs, skipped = [], []
    for F, N in geometries:
        key = (float(F), int(N))
        truth = fields.get(key)
        if truth is None:
            skipped.append({"F": key[0], "N": key[1], "reason": "no oracle field"})
            continue
        jobs.append((model, truth, dc_true.get(key), tol, opts, n_probes))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_eval_job, jobs))
    else:
        results = []
        for job in jobs:
            try:
                results.append(_eval_job(job))
            except DLDError as exc:
                c = job[1].cell
                skipped.append({"F": c.F, "N": c.N, "reason": f"{type(exc).__name__}: {exc}"})
    report = EvalReport(model_id(model), dataset_id, getattr(model, "variant", "unknown"),
                        rows=results, skipped=skipped)
    _aggregate(report)
    return report


def _mean_rows(rows: list) -> dict:
    out = {"count": len(rows)}
    for c in ("r2_u", "r2_v", "r2_p", "dc_error"):
        out[c] = float(np.mean([r[c] for r in rows]))
    return out


def _aggregate(report: EvalReport) -> None:
    rows = report.rows
    if not rows:
        return
    for F in sorted({r["F"] for r in rows}):
        report.by_F.append({"F": F, **_mean_rows([r for r in rows if r["F"] == F])})
    report.aggregate = _mean_rows(rows)
    per = {}
    for name in FIELDS:
        per[name] = {"avg": float(np.mean([r["periodicity"][name]["avg"] for r in rows])),
                     "max": float(np.max([r["periodicity"][name]["max"] for r in rows]))}
    report.periodicity = per


def comparison_table(reports: dict, path) -> Path:
    """CSV comparing several models: one row per (model, F) plus aggregates."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "variant", "F", "r2_u", "r2_v", "r2_p", "dc_error"))
        for name, rep in reports.items():
            for r in rep.by_F + ([dict(rep.aggregate, F="all")] if rep.aggregate else []):
                F = r["F"] if isinstance(r["F"], str) else repr(r["F"])
                w.writerow([name, rep.variant, F] + [repr(r[c]) for c in
                                                      ("r2_u", "r2_v", "r2_p", "dc_error")])
    return path

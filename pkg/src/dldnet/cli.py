"""Command-line workflows.

Every artifact-producing command writes a ``manifest.json`` (or
``<output>.manifest.json``) recording the resolved configuration, seeds,
paths, version and wall-clock time. Exit codes: 2 usage/domain problems,
3 numerical failures, 4 I/O and parse errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .dataset import (DEFAULT_IO, DEFAULT_SAMPLES, DEFAULT_WALL, DESK_HELDOUT, DESK_TRAIN,
                      PAPER_TRAIN, build_dataset, read_dataset, write_dataset)
from .errors import DLDError, UsageError
from .flow_oracle import DEFAULT_DP, DEFAULT_GRID, DEFAULT_TOL, read_field, solve_steady, \
    write_field
from .geometry import make_cell
from .metrics import (FieldModel, comparison_table, field_error_map, oracle_dc,
                      periodicity_scan, sweep_report, write_error_maps, evaluate_geometry)
from .surrogate import TrainConfig, canonical_variant, load_model, save_model, train
from .tracer import (GridSource, SurrogateSource, TraceOptions, critical_diameter, trace)

log = logging.getLogger("dldnet")


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    version: str = __version__
    wall_clock: float = 0.0

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str))
        return path


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _finish(args, t0, inputs, outputs, out: Path, seeds=None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    m = RunManifest(args.command, cfg, seeds or {}, [str(p) for p in inputs],
                    [str(p) for p in outputs], wall_clock=round(time.time() - t0, 3))
    m.write(_manifest_path(out))


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _floats(text: str) -> list[float]:
    return [float(a) for a in text.split(",") if a.strip()]


def _ints(text: str) -> list[int]:
    return [int(a) for a in text.split(",") if a.strip()]


def _source(args, cell):
    """Velocity source from --model or --field."""
    if getattr(args, "model", None):
        return SurrogateSource(load_model(_existing(args.model, "model")), cell,
                               raster=args.grid)
    if getattr(args, "field", None):
        f = read_field(_existing(args.field, "field"))
        if (f.cell.F, f.cell.N) != (cell.F, cell.N):
            raise UsageError(f"field is for F={f.cell.F} N={f.cell.N}, not F={cell.F} N={cell.N}")
        return GridSource(f)
    return GridSource(solve_steady(cell, args.dp, args.grid, args.grid))


# ---------------------------------------------------------------------------
# commands

def _solve_one(job):
    F, N, Ds, dp, grid, tol, out = job
    f = solve_steady(make_cell(F, N, Ds), dp, grid, grid, tol)
    write_field(f, out)
    return out


def cmd_gen(args) -> int:
    t0 = time.time()
    out = Path(args.out)
    if args.recipe:
        geos = {"desk": DESK_TRAIN + DESK_HELDOUT, "paper": PAPER_TRAIN + DESK_HELDOUT}[
            "paper" if args.paper_scale else args.recipe]
        out.mkdir(parents=True, exist_ok=True)
        jobs = [(F, N, args.ds, args.dp, args.grid, args.tol, out / f"field_F{F}_N{N}.csv")
                for F, N in geos]
        if args.workers > 1:
            with ProcessPoolExecutor(args.workers) as ex:
                outputs = list(ex.map(_solve_one, jobs))
        else:
            outputs = [_solve_one(j) for j in jobs]
        _finish(args, t0, [], outputs, out)
        print(f"wrote {len(outputs)} fields to {out}")
        return 0
    if args.f is None or args.n is None:
        raise UsageError("gen needs --f and --n (or --recipe)")
    _solve_one((args.f, args.n, args.ds, args.dp, args.grid, args.tol, out))
    _finish(args, t0, [], [out], out)
    print(f"wrote {out}")
    return 0


def cmd_dataset(args) -> int:
    t0 = time.time()
    paths = []
    for item in args.fields:
        p = _existing(item, "field")
        paths += sorted(p.glob("field_*.csv")) if p.is_dir() else [p]
    if not paths:
        raise UsageError("no field files found")
    fields_ = [read_field(p) for p in paths]
    if args.exclude_heldout:
        ho = set(DESK_HELDOUT)
        fields_ = [f for f in fields_ if (f.cell.F, f.cell.N) not in ho]
    ds = build_dataset(fields_, args.samples, args.seed, args.wall, args.io, args.workers)
    out = write_dataset(ds, args.out)
    _finish(args, t0, paths, [out], out, {"seed": args.seed})
    print(f"wrote {len(ds)} samples over {len(fields_)} geometries to {out}")
    return 0


def cmd_train(args) -> int:
    t0 = time.time()
    data = _existing(args.data, "dataset")
    ds = read_dataset(data)
    base = TrainConfig.paper_scale() if args.paper_scale else TrainConfig()
    over = {"seed": args.seed}
    for name in ("epochs", "batch", "lr0", "lambda_periodic"):
        if getattr(args, name) is not None:
            over[name] = getattr(args, name)
    over["dp"] = float(ds.meta.get("dp", base.dp))
    cfg = TrainConfig(**{**asdict(base), **over})
    variant = canonical_variant(args.variant)
    model, hist = train(ds, cfg, variant,
                        progress=(lambda e, r: log.info("epoch %d total %.4e", e, r["total"])))
    out = save_model(model, args.out)
    hpath = hist.write_csv(Path(args.out).with_name(Path(args.out).stem + ".history.csv"))
    _finish(args, t0, [data], [out, hpath], out, {"seed": args.seed})
    print(f"trained {variant}: final total loss {hist.rows[-1]['total']:.4e}; wrote {out}")
    return 0


def cmd_eval(args) -> int:
    t0 = time.time()
    model = load_model(_existing(args.model, "model"))
    truth = read_field(_existing(args.field, "field"))
    row = evaluate_geometry(model, truth, tol=args.tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(row, indent=2, sort_keys=True))
    outputs = [out / "eval.json"]
    outputs += write_error_maps(field_error_map(truth, model), out)
    _finish(args, t0, [args.model, args.field], outputs, out)
    print(json.dumps({k: row[k] for k in ("r2_u", "r2_v", "r2_p", "dc_error")}))
    return 0


def cmd_dc(args) -> int:
    t0 = time.time()
    cell = make_cell(args.f, args.n, args.ds)
    res = critical_diameter(_source(args, cell), cell, args.tol,
                            TraceOptions(cfl=args.cfl, record=False))
    extra = {"F": args.f, "N": args.n, "source": args.model or args.field or "oracle"}
    if args.out:
        out = res.write_json(args.out, extra)
        _finish(args, t0, [p for p in (args.model, args.field) if p], [out], out)
    print(json.dumps({"dc": res.dc, "bracket": list(res.bracket)}))
    return 0


def cmd_trace(args) -> int:
    t0 = time.time()
    cell = make_cell(args.f, args.n, args.ds)
    traj = trace(_source(args, cell), cell, args.diameter, TraceOptions(cfl=args.cfl),
                 columns=args.columns)
    out = traj.write_csv(args.out)
    _finish(args, t0, [p for p in (args.model, args.field) if p], [out], out)
    print(json.dumps({"mode": traj.mode, "displacement": traj.displacement,
                      "collisions": traj.collisions}))
    return 0


def cmd_periodicity(args) -> int:
    t0 = time.time()
    model = load_model(_existing(args.model, "model"))
    Fs = _floats(args.f) if args.f else [g[0] for g in DESK_HELDOUT + DESK_TRAIN[::3]]
    Ns = _ints(args.n) if args.n else [g[1] for g in DESK_HELDOUT + DESK_TRAIN[::3]]
    if len(Fs) != len(Ns):
        raise UsageError("--f and --n lists must have equal length")
    scans = []
    for F, N in zip(Fs, Ns):
        scans.append({"F": F, "N": N,
                      **periodicity_scan(model, make_cell(F, N, model.norms["Dx"]), args.probes)})
    summary = {k: {"avg": sum(s[k]["avg"] for s in scans) / len(scans),
                   "max": max(s[k]["max"] for s in scans)} for k in ("u", "v", "p")}
    doc = {"variant": model.variant, "probes": args.probes, "geometries": scans,
           "summary": summary}
    if args.out:
        out = Path(args.out)
        out.write_text(json.dumps(doc, indent=2, sort_keys=True))
        _finish(args, t0, [args.model], [out], out)
    print(json.dumps(summary))
    return 0


def cmd_sweep(args) -> int:
    t0 = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields_ = {}
    paths = []
    for item in args.fields:
        p = _existing(item, "field")
        paths += sorted(p.glob("field_*.csv")) if p.is_dir() else [p]
    for p in paths:
        f = read_field(p)
        fields_[(f.cell.F, f.cell.N)] = f
    if args.geometries:
        geos = [(float(F), int(N)) for F, N in
                (g.split(":") for g in args.geometries.split(","))]
    else:
        geos = sorted(fields_)
    dc_true = {}
    for g in geos:
        if g in fields_:
            dc_true[g] = oracle_dc(fields_[g], args.tol)
    reports, outputs = {}, []
    for mpath in args.models.split(","):
        model = load_model(_existing(mpath, "model"))
        rep = sweep_report(geos, model, fields_, dc_true, args.tol,
                           dataset_id=args.dataset_id, workers=args.workers)
        name = Path(mpath).stem
        reports[name] = rep
        outputs += [rep.write_json(out / f"{name}.json"), rep.write_csv(out / f"{name}.csv")]
    outputs.append(comparison_table(reports, out / "comparison.csv"))
    _finish(args, t0, [*args.models.split(","), *map(str, paths)], outputs, out)
    for name, rep in reports.items():
        agg = rep.aggregate
        if agg:
            print(f"{name} ({rep.variant}): mean Dc error {agg['dc_error']:.3f}% "
                  f"R2 u {agg['r2_u']:.4f} v {agg['r2_v']:.4f} p {agg['r2_p']:.4f}")
        else:
            print(f"{name} ({rep.variant}): no geometries evaluated")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dldnet", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--paper-scale", action="store_true",
                       help="full-scale preset (120 geometries, 1000 epochs, batch 2000)")
        p.add_argument("--workers", type=int, default=1)

    def geometry(p):
        p.add_argument("--f", type=float, required=True)
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--ds", type=float, default=0.4)

    p = sub.add_parser("gen", help="solve the unit-cell flow and write a field file")
    p.add_argument("--f", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--ds", type=float, default=0.4)
    p.add_argument("--dp", type=float, default=DEFAULT_DP)
    p.add_argument("--grid", type=int, default=DEFAULT_GRID)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--recipe", choices=("desk", "paper"),
                   help="solve every geometry of a recipe into the --out directory")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("dataset", help="sample training data from field files")
    p.add_argument("--fields", nargs="+", required=True, help="field files or directories")
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--wall", type=int, default=DEFAULT_WALL)
    p.add_argument("--io", type=int, default=DEFAULT_IO)
    p.add_argument("--exclude-heldout", action="store_true")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a surrogate")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", default="periodic",
                   choices=("periodic", "soft", "baseline", "periodic_layer", "soft_periodic"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--lambda-periodic", type=float)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="R2, Dc error and error maps against one oracle field")
    p.add_argument("--model", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_eval)

    for name, func, helptext in (("dc", cmd_dc, "critical diameter by bisection"),
                                 ("trace", cmd_trace, "trace one particle")):
        p = sub.add_parser(name, help=helptext)
        geometry(p)
        p.add_argument("--model")
        p.add_argument("--field")
        p.add_argument("--grid", type=int, default=DEFAULT_GRID)
        p.add_argument("--dp", type=float, default=DEFAULT_DP, help="pressure drop")
        p.add_argument("--cfl", type=float, default=0.5)
        if name == "dc":
            p.add_argument("--tol", type=float, default=1e-4)
            p.add_argument("--out")
        else:
            p.add_argument("--diameter", type=float, required=True)
            p.add_argument("--columns", type=int)
            p.add_argument("--out", required=True)
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("periodicity", help="top/bottom boundary mismatch of a surrogate")
    p.add_argument("--model", required=True)
    p.add_argument("--f", help="comma-separated F values")
    p.add_argument("--n", help="comma-separated N values")
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_periodicity)

    p = sub.add_parser("sweep", help="comparative evaluation of several models")
    p.add_argument("--models", required=True, help="comma-separated checkpoints")
    p.add_argument("--fields", nargs="+", required=True, help="field files or directories")
    p.add_argument("--geometries", help="comma-separated F:N pairs (default: all fields)")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--dataset-id", default="")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DLDError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

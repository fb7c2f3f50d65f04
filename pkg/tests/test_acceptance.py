"""Acceptance criteria 1-8, each at its stated tolerance.

Every test appends a ``criterion k: PASS|FAIL ...`` line to the acceptance
log (printed in the terminal summary) before asserting. The desk-scale
fields, dataset and models are built once per module; the full module takes
roughly 40 minutes on one CPU core.
"""

import time

import numpy as np
import pytest

from dldnet.cli import main
from dldnet.dataset import DESK_HELDOUT, DESK_TRAIN, build_dataset, write_dataset
from dldnet.flow_oracle import (column_flux, poiseuille_reference, sidecar_path, solve_open_cell,
                                solve_steady)
from dldnet.geometry import make_cell
from dldnet.metrics import oracle_dc, periodicity_scan, sweep_report
from dldnet.neural import DenseLayer, backward, forward, periodic_features
from dldnet.surrogate import TrainConfig, build_model, train

pytestmark = pytest.mark.acceptance

CAPTIONS = {(0.57, 10): 0.0466, (0.49, 8): 0.0705, (0.62, 11): 0.0361}


def verdict(log, k, ok, detail):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}"
    log.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared desk-scale artifacts

@pytest.fixture(scope="module")
def desk_fields():
    return {(F, N): solve_steady(make_cell(F, N)) for F, N in DESK_TRAIN + DESK_HELDOUT}


@pytest.fixture(scope="module")
def desk_dataset(desk_fields):
    return build_dataset([desk_fields[g] for g in DESK_TRAIN], 1000, seed=0)


@pytest.fixture(scope="module")
def heldout_dc(desk_fields):
    return {g: oracle_dc(desk_fields[g]) for g in DESK_HELDOUT}


_models = {}
_train_seconds = {}


@pytest.fixture(scope="module")
def desk_model(desk_dataset):
    def get(variant):
        if variant not in _models:
            t0 = time.time()
            _models[variant] = train(desk_dataset, TrainConfig(epochs=200, batch=256, seed=0),
                                     variant)[0]
            _train_seconds[variant] = time.time() - t0
        return _models[variant]
    return get


# ---------------------------------------------------------------------------

def test_criterion_1_exact_periodicity(acceptance_log):
    geos = [(0.3, 5), (0.45, 8), (0.5, 10), (0.57, 10), (0.62, 11), (0.7, 14)]
    worst = 0.0
    probes = 0
    for seed in (0, 1):
        model = build_model("periodic_layer", seed=seed)
        for F, N in geos:
            scan = periodicity_scan(model, make_cell(F, N), 200)
            worst = max(worst, max(scan[k]["max"] for k in "uvp"))
            probes += 200
    verdict(acceptance_log, 1, worst == 0.0 and probes >= 1000,
            f"max |f(x,0)-f(x,Dy)| = {worst!r} over {probes} probes, {len(geos)} geometries")


def test_criterion_2_ablation_sign(acceptance_log, desk_model):
    soft = desk_model("soft_periodic")
    periodic = desk_model("periodic_layer")
    geos = list(DESK_HELDOUT) + [DESK_TRAIN[0], DESK_TRAIN[-1]]
    s_avg = {k: 0.0 for k in "uvp"}
    p_max = 0.0
    for F, N in geos:
        cell = make_cell(F, N)
        s = periodicity_scan(soft, cell)
        p = periodicity_scan(periodic, cell)
        for k in "uvp":
            s_avg[k] += s[k]["avg"] / len(geos)
            p_max = max(p_max, p[k]["max"])
    minutes = sum(_train_seconds.get(v, 0.0) for v in ("soft_periodic", "periodic_layer")) / 60
    ok = max(s_avg.values()) > 1e-4 and p_max == 0.0 and minutes <= 30
    detail = ("soft avg mismatch " + ", ".join(f"{k}={v:.3e}" for k, v in s_avg.items())
              + f"; periodic max {p_max!r}; training {minutes:.1f} min")
    verdict(acceptance_log, 2, ok, detail)


def _fd_relative_error(layers, inp, h=1e-5):
    rng = np.random.default_rng(0)
    out, cache = forward(layers, inp)
    G = rng.normal(size=out.shape)
    grads, _ = backward(layers, cache, G)
    worst = 0.0
    for layer, (dW, db) in zip(layers, grads):
        for p, g in ((layer.weights, dW), (layer.bias, db)):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                a = np.sum(G * forward(layers, inp)[0])
                p[idx] = old - h
                b = np.sum(G * forward(layers, inp)[0])
                p[idx] = old
                fd = (a - b) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6))
    return worst


def _fd_subnet(model, h=1e-5):
    rng = np.random.default_rng(1)
    x, y = rng.uniform(0, 0.4, (2, 6))
    coords, geo = model.inputs(x, y, 0.5, 10)
    worst = 0.0
    for net in model.subnets:
        o, c = net.forward(coords, geo)
        G = rng.normal(size=o.shape)
        grads = net.backward(c, G)
        for p, g in zip(net.params(), grads):
            for idx in list(np.ndindex(p.shape))[:40]:
                old = p[idx]
                p[idx] = old + h
                a = np.sum(G * net.forward(coords, geo)[0])
                p[idx] = old - h
                b = np.sum(G * net.forward(coords, geo)[0])
                p[idx] = old
                fd = (a - b) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6))
    return worst


def test_criterion_3_gradient_correctness(acceptance_log):
    rng = np.random.default_rng(3)
    errs = {}
    for act in ("swish", "tanh", "identity"):
        layers = [DenseLayer.init(4, 6, act, rng), DenseLayer.init(6, 3, act, rng)]
        errs[act] = _fd_relative_error(layers, rng.normal(size=(5, 4)))
    xy = rng.uniform(0, 0.4, (5, 2))
    layers = [DenseLayer.init(3, 8, "tanh", rng), DenseLayer.init(8, 2, "identity", rng)]
    errs["periodic"] = _fd_relative_error(layers, periodic_features(xy[:, 0], xy[:, 1], 0.4))
    for variant in ("periodic_layer", "soft_periodic", "baseline"):
        errs[variant] = _fd_subnet(build_model(variant, seed=2, width=12, depth=3,
                                               base_width=10))
    worst = max(errs.values())
    verdict(acceptance_log, 3, worst <= 1e-5,
            "max relative error " + ", ".join(f"{k}={v:.1e}" for k, v in errs.items()))


def test_criterion_4_oracle_validity(acceptance_log):
    h = 0.2
    raw = solve_open_cell(0.4, 0.1, nx=64, ny=128, walls=True)
    y = (np.arange(128) + 0.5) * 0.4 / 128 - h
    ref = np.array([poiseuille_reference(a, h, (0.1 / 0.4) * h * h / 2) for a in y])
    prof = raw.u.mean(axis=1)
    l2 = np.linalg.norm(prof - ref) / np.linalg.norm(ref)
    box = solve_open_cell(0.4, 0.1, nx=64, ny=64, drag=1.0)
    uniform = np.ptp(box.u) / box.u.mean()
    vmax = np.abs(box.v).max() / box.u.mean()
    f = solve_steady(make_cell(0.5, 10))
    flux = column_flux(f)
    mass = np.ptp(flux) / abs(flux.mean())
    ok = l2 <= 0.01 and uniform < 1e-9 and vmax < 1e-9 and mass <= 1e-3
    verdict(acceptance_log, 4, ok,
            f"channel L2 {l2:.2e}; open cell u spread {uniform:.1e}, |v| {vmax:.1e}; "
            f"flux variation {mass:.1e}")


def test_criterion_5_accuracy_ordering(acceptance_log, desk_fields, desk_model, heldout_dc):
    reports = {v: sweep_report(DESK_HELDOUT, desk_model(v), desk_fields, heldout_dc)
               for v in ("periodic_layer", "baseline")}
    per, base = reports["periodic_layer"], reports["baseline"]
    per_err = per.aggregate.get("dc_error", float("inf"))
    # a geometry where a model yields no Dc (e.g. a particle pinned against a
    # post by spurious inflow) is a failed prediction, ranked worst
    base_err = base.aggregate.get("dc_error", float("inf"))
    common = {(r["F"], r["N"]) for r in base.rows}
    per_common = np.mean([r["dc_error"] for r in per.rows if (r["F"], r["N"]) in common]
                         or [0.0])
    ok = not per.skipped and per_err <= 5.0 and per_common < base_err
    failed = "; ".join(f"F={r['F']} N={r['N']}: {r['reason']}" for r in base.skipped)
    verdict(acceptance_log, 5, ok,
            f"mean held-out Dc error periodic_layer {per_err:.2f}% "
            f"({len(per.rows)}/{len(DESK_HELDOUT)} geometries) vs baseline {base_err:.2f}% "
            f"({len(base.rows)}/{len(DESK_HELDOUT)} geometries"
            + (f"; no Dc for {failed}" if failed else "") + ")")


def test_criterion_6_dc_trends(acceptance_log):
    def dc(F, N):
        field_ = solve_steady(make_cell(F, N))
        t = time.time()
        return oracle_dc(field_), time.time() - t

    by_n = [dc(0.5, N) for N in (5, 8, 10, 12)]
    by_f = [dc(F, 10) for F in (0.3, 0.4)] + [by_n[2]] + [dc(0.6, 10)]
    n_vals = [v for v, _ in by_n]
    f_vals = [v for v, _ in by_f]
    slowest = max(t for _, t in by_n + by_f)
    ok = (all(a > b for a, b in zip(n_vals, n_vals[1:]))
          and all(a > b for a, b in zip(f_vals, f_vals[1:])) and slowest <= 60)
    verdict(acceptance_log, 6, ok,
            f"Dc vs N {[round(v, 5) for v in n_vals]}; Dc vs F {[round(v, 5) for v in f_vals]};"
            f" slowest Dc {slowest:.0f} s")


def test_criterion_7_caption_plausibility(acceptance_log, heldout_dc):
    parts, ok = [], True
    for g, ref in CAPTIONS.items():
        dev = heldout_dc[g] / ref - 1
        ok &= abs(dev) <= 0.20
        parts.append(f"F={g[0]} N={g[1]} Dc {heldout_dc[g]:.4f} vs {ref} ({dev:+.1%})")
    verdict(acceptance_log, 7, ok, "; ".join(parts))


def _pipeline(d):
    d.mkdir()
    steps = [
        ["gen", "--f", "0.5", "--n", "10", "--grid", "64", "--out", str(d / "field_F0.5_N10.csv")],
        ["gen", "--f", "0.45", "--n", "8", "--grid", "64", "--out", str(d / "field_F0.45_N8.csv")],
        ["dataset", "--fields", str(d), "--samples", "300", "--seed", "7", "--out",
         str(d / "ds.csv")],
        ["train", "--data", str(d / "ds.csv"), "--variant", "periodic", "--epochs", "3",
         "--batch", "100", "--seed", "7", "--out", str(d / "model.json")],
        ["sweep", "--models", str(d / "model.json"), "--fields", str(d), "--tol", "1e-3",
         "--out", str(d / "report")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    names = ["field_F0.5_N10.csv", "ds.csv", "model.json", "model.history.csv",
             "report/model.json", "report/model.csv", "report/comparison.csv"]
    files = {n: (d / n).read_bytes() for n in names}
    files["ds.csv.json"] = sidecar_path(d / "ds.csv").read_bytes()
    return files


def test_criterion_8_determinism(acceptance_log, tmp_path):
    a = _pipeline(tmp_path / "run1")
    b = _pipeline(tmp_path / "run2")
    differing = [k for k in a if a[k] != b[k]]
    verdict(acceptance_log, 8, not differing,
            f"{len(a) - len(differing)}/{len(a)} artifacts byte-identical"
            + (f"; differing: {differing}" if differing else ""))

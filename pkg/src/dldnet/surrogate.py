"""Neural surrogate for the unit-cell flow.

Three independent sub-networks map ``(x, y, F, N)`` to ``u``, ``v`` and ``p``.

``periodic_layer``
    ``[x/Dx, sin(2 pi y/Dy), cos(2 pi y/Dy)]`` -> 64 tanh units, concatenated
    with ``(F, N/14)`` -> 7 x 64 Swish -> 1 linear output. ``y`` reaches the
    network only through the trig features, so outputs are exactly
    ``Dy``-periodic.
``soft_periodic``
    Same shape but raw ``y/Dy`` input and a Swish first stage; periodicity is
    only encouraged through a mismatch penalty in the loss.
``baseline``
    ``(x/Dx, y/Dy, F, N/14)`` -> 3 x 50 Swish -> 1 linear output.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import Dataset, geometry_key
from .errors import (ConfigurationError, ParseError, TrainingDivergedError, UsageError,
                     VariantMismatchError, VersionMismatchError)
from .flow_oracle import DEFAULT_DP, FlowField, grid_rows
from .geometry import UnitCellGeometry, make_cell, solid_mask
from .neural import DenseLayer, OptimizerState, adam_step, backward, forward, lr_at, \
    periodic_features

log = logging.getLogger(__name__)

VARIANTS = ("periodic_layer", "soft_periodic", "baseline")
VARIANT_ALIASES = {"periodic": "periodic_layer", "soft": "soft_periodic",
                   "baseline": "baseline"}
OUTPUTS = ("u", "v", "p")
CHECKPOINT_VERSION = 1
N_NORM = 14.0


def canonical_variant(name: str) -> str:
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ConfigurationError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return name


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    epochs: int = 200
    batch: int = 256
    lambda_data: float = 1.0
    lambda_wall: float = 1.0
    lambda_inlet_v: float = 1.0
    lambda_p_io: float = 1.0
    lambda_periodic: float = 1.0
    dp: float = DEFAULT_DP
    seed: int = 0
    bc_batch: int = 128
    n_pairs: int = 128
    harmonics: int = 1
    decay_every: int = 50
    decay_factor: float = 0.5

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigurationError("lr0 must be positive")
        if self.epochs < 1 or self.batch < 1 or self.bc_batch < 1 or self.n_pairs < 1:
            raise ConfigurationError("epochs, batch and point counts must be at least 1")
        for name in ("lambda_data", "lambda_wall", "lambda_inlet_v", "lambda_p_io",
                     "lambda_periodic"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.harmonics < 1:
            raise ConfigurationError("harmonics must be at least 1")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        return cls(**{"epochs": 1000, "batch": 2000, **overrides})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class SubNet:
    """Coordinate stage (``head``) followed by the trunk fed ``[head, F, N]``."""

    head: list
    trunk: list

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.head + self.trunk for p in layer.params()]

    def forward(self, coords: np.ndarray, geo: np.ndarray):
        if self.head:
            h, hcache = forward(self.head, coords)
            z = np.concatenate([h, geo], axis=1)
        else:
            hcache = None
            z = np.concatenate([coords, geo], axis=1)
        out, tcache = forward(self.trunk, z)
        return out[:, 0], (hcache, tcache)

    def backward(self, cache, out_grad: np.ndarray) -> list[np.ndarray]:
        hcache, tcache = cache
        tgrads, gz = backward(self.trunk, tcache, out_grad[:, None])
        grads = []
        if self.head:
            width = self.head[-1].n_out
            hgrads, _ = backward(self.head, hcache, gz[:, :width])
            for dW, db in hgrads:
                grads += [dW, db]
        for dW, db in tgrads:
            grads += [dW, db]
        return grads


@dataclass
class SurrogateModel:
    variant: str
    subnets: list
    norms: dict
    config: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def Dy(self) -> float:
        return self.norms["Dy"]

    @property
    def dp(self) -> float:
        return float(self.config.get("dp", DEFAULT_DP))

    def params(self) -> list[np.ndarray]:
        return [p for net in self.subnets for p in net.params()]

    def inputs(self, x, y, F, N, normalized: bool = False):
        """Coordinate features and geometry columns for a batch of points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        x, y = np.broadcast_arrays(x, y)
        nn = self.norms
        xs = x / nn["Dx"]
        if self.variant == "periodic_layer":
            coords = periodic_features(xs, y, nn["Dy"], int(nn.get("harmonics", 1)))
        else:
            coords = np.stack([xs, y / nn["Dy"]], axis=-1)
        Nn = np.asarray(N, dtype=float) if normalized else np.asarray(N, dtype=float) / nn["N"]
        Fn = np.asarray(F, dtype=float) / nn["F"]
        geo = np.stack(np.broadcast_arrays(Fn, Nn, x)[:2], axis=-1).reshape(-1, 2)
        return coords.reshape(-1, coords.shape[-1]), geo

    def predict(self, x, y, F, N, normalized: bool = False):
        """``(u, v, p)`` arrays at the given points; scalars broadcast."""
        coords, geo = self.inputs(x, y, F, N, normalized)
        return tuple(net.forward(coords, geo)[0] for net in self.subnets)

    def rasterize(self, cell: UnitCellGeometry, nx: int = 256, ny: int = 256,
                  tilted: bool = True) -> FlowField:
        """Sample the surrogate at cell centres; velocities zeroed inside posts."""
        ny = grid_rows(cell, ny, tilted)
        xs = (np.arange(nx) + 0.5) * cell.Dx / nx
        ys = (np.arange(ny) + 0.5) * cell.Dy / ny
        X, Y = np.meshgrid(xs, ys)
        u, v, p = (a.reshape(ny, nx) for a in self.predict(X.ravel(), Y.ravel(), cell.F, cell.N))
        solid = solid_mask(cell, X, Y, tilted=tilted)
        u = np.where(solid, 0.0, u)
        v = np.where(solid, 0.0, v)
        meta = {"dp": self.dp, "u_scale": 1.0, "p_scale": 1.0, "p_offset": 0.0,
                "tilted": bool(tilted), "shift_rows": ny // cell.N if tilted else 0,
                "source": f"surrogate:{self.variant}"}
        return FlowField(cell, u, v, p, solid, meta)


def build_model(variant: str, seed: int = 0, Ds: float = 0.4, harmonics: int = 1,
                config: dict | None = None, width: int = 64, depth: int = 7,
                base_width: int = 50, base_depth: int = 3) -> SurrogateModel:
    """Freshly initialised model; each sub-network draws from its own stream."""
    variant = canonical_variant(variant)
    streams = np.random.SeedSequence(int(seed)).spawn(len(OUTPUTS))
    nets = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        if variant == "baseline":
            head = []
            trunk = [DenseLayer.init(4, base_width, "swish", rng)]
            trunk += [DenseLayer.init(base_width, base_width, "swish", rng)
                      for _ in range(base_depth - 1)]
            trunk.append(DenseLayer.init(base_width, 1, "identity", rng))
        else:
            if variant == "periodic_layer":
                head = [DenseLayer.init(1 + 2 * harmonics, width, "tanh", rng)]
            else:
                head = [DenseLayer.init(2, width, "swish", rng)]
            trunk = [DenseLayer.init(width + 2, width, "swish", rng)]
            trunk += [DenseLayer.init(width, width, "swish", rng) for _ in range(depth - 1)]
            trunk.append(DenseLayer.init(width, 1, "identity", rng))
        nets.append(SubNet(head, trunk))
    norms = {"Dx": float(Ds), "Dy": float(Ds), "F": 1.0, "N": N_NORM,
             "harmonics": int(harmonics)}
    return SurrogateModel(variant, nets, norms, dict(config or {}), int(seed))


# ---------------------------------------------------------------------------
# losses

def _weights(weights) -> dict:
    if weights is None:
        weights = TrainConfig()
    if isinstance(weights, TrainConfig):
        weights = asdict(weights)
    return weights


def data_loss(model: SurrogateModel, batch) -> float:
    """Mean over records of squared errors summed over u, v, p."""
    t = batch.table if isinstance(batch, Dataset) else np.asarray(batch, dtype=float)
    t = t.reshape(-1, 7)
    if t.shape[0] == 0:
        raise UsageError("data loss needs a non-empty batch")
    u, v, p = model.predict(t[:, 0], t[:, 1], t[:, 2], t[:, 3])
    return float(np.mean((u - t[:, 4]) ** 2 + (v - t[:, 5]) ** 2 + (p - t[:, 6]) ** 2))


def bc_loss(model: SurrogateModel, bounds, dp: float, F: float, N: int,
            weights=None) -> float:
    """Weighted boundary penalty: no-slip walls, v = 0 at the inlet, p = dp / 0."""
    w = _weights(weights)
    if min(len(bounds.wall_points), len(bounds.inlet_points), len(bounds.outlet_points)) == 0:
        raise UsageError("boundary sets must be non-empty")
    wu, wv, _ = model.predict(bounds.wall_points[:, 0], bounds.wall_points[:, 1], F, N)
    _, iv, ip = model.predict(bounds.inlet_points[:, 0], bounds.inlet_points[:, 1], F, N)
    _, _, op = model.predict(bounds.outlet_points[:, 0], bounds.outlet_points[:, 1], F, N)
    return float(w["lambda_wall"] * np.mean(wu**2 + wv**2)
                 + w["lambda_inlet_v"] * np.mean(iv**2)
                 + w["lambda_p_io"] * (np.mean((ip - dp) ** 2) + np.mean(op**2)))


def soft_periodicity_loss(model, cell: UnitCellGeometry, n_pairs: int = 128, seed: int = 0,
                          allow_periodic: bool = False) -> float:
    """Mean over pairs and fields of ``(f(x, 0) - f(x, Dy))^2``.

    Refused for the periodic_layer variant, where it is identically zero,
    unless ``allow_periodic`` is set (used to check that very fact).
    """
    if model.variant == "periodic_layer" and not allow_periodic:
        raise UsageError("soft periodicity loss is meaningless for the periodic_layer variant")
    if n_pairs < 1:
        raise UsageError("n_pairs must be at least 1")
    x = np.random.default_rng(seed).uniform(0.0, cell.Dx, n_pairs)
    lo = model.predict(x, np.zeros_like(x), cell.F, cell.N)
    hi = model.predict(x, np.full_like(x, cell.Dy), cell.F, cell.N)
    return float(np.mean([np.mean((a - b) ** 2) for a, b in zip(lo, hi)]))


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainingHistory:
    rows: list = field(default_factory=list)

    COLUMNS = ("epoch", "lr", "data_loss", "bc_loss", "periodicity_loss", "total")

    def append(self, **row):
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])
        return path


def _boundary_pool(ds: Dataset):
    """Stack every geometry's boundary points with their (F, N) columns."""
    pools = {"wall": [], "inlet": [], "outlet": []}
    for F, N in ds.geometries:
        b = ds.boundary.get(geometry_key(F, N))
        if b is None:
            continue
        for name, pts in (("wall", b.wall_points), ("inlet", b.inlet_points),
                          ("outlet", b.outlet_points)):
            g = np.tile([F, N], (len(pts), 1))
            pools[name].append(np.column_stack([pts, g]))
    return {k: (np.concatenate(v) if v else np.empty((0, 4))) for k, v in pools.items()}


def train(ds: Dataset, cfg: TrainConfig | None = None, variant: str = "periodic_layer",
          model: SurrogateModel | None = None, progress=None):
    """Adam on data + boundary (+ soft periodicity) loss; returns ``(model, history)``.

    Each step evaluates every sub-network once on the stacked rows
    ``[data batch | wall | inlet | outlet | pairs at y=0 | pairs at y=Dy]``
    and backpropagates the per-row output gradients of the total loss.
    """
    cfg = cfg or TrainConfig()
    variant = canonical_variant(variant)
    n = len(ds)
    if n == 0:
        raise UsageError("cannot train on an empty dataset")
    if cfg.batch > n:
        raise ConfigurationError(f"batch {cfg.batch} exceeds dataset size {n}")
    Ds = float(ds.meta.get("Ds", 0.4))
    if model is None:
        model = build_model(variant, cfg.seed, Ds, cfg.harmonics, asdict(cfg))
    elif model.variant != variant:
        raise VariantMismatchError(f"model is {model.variant}, asked to train {variant}")
    model.config = asdict(cfg)
    dp = cfg.dp
    soft = variant == "soft_periodic" and cfg.lambda_periodic > 0
    pool = _boundary_pool(ds)
    use_bc = all(len(v) for v in pool.values())
    geos = np.array(ds.geometries or sorted({(float(F), int(N)) for F, N in ds.table[:, 2:4]}),
                    dtype=float)

    params = model.params()
    opt = OptimizerState(lr=cfg.lr0)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 1]))
    hist = TrainingHistory()
    table = ds.table
    nb_w = min(cfg.bc_batch, len(pool["wall"])) if use_bc else 0
    nb_io = min(max(cfg.bc_batch // 2, 1), len(pool["inlet"]), len(pool["outlet"])) if use_bc else 0
    npair = cfg.n_pairs if soft else 0

    for epoch in range(cfg.epochs):
        opt.lr = lr_at(epoch, cfg.lr0, cfg.decay_factor, cfg.decay_every)
        order = rng.permutation(n)
        sums = np.zeros(3)
        steps = 0
        for start in range(0, n - cfg.batch + 1, cfg.batch):
            rows = table[order[start:start + cfg.batch]]
            B = len(rows)
            parts = [rows[:, :4]]
            if use_bc:
                parts.append(pool["wall"][rng.integers(0, len(pool["wall"]), nb_w)])
                parts.append(pool["inlet"][rng.integers(0, len(pool["inlet"]), nb_io)])
                parts.append(pool["outlet"][rng.integers(0, len(pool["outlet"]), nb_io)])
            if npair:
                g = geos[rng.integers(0, len(geos), npair)]
                px = rng.uniform(0.0, Ds, npair)
                parts.append(np.column_stack([px, np.zeros(npair), g]))
                parts.append(np.column_stack([px, np.full(npair, Ds), g]))
            X = np.concatenate(parts)
            coords, geo = model.inputs(X[:, 0], X[:, 1], X[:, 2], X[:, 3])

            outs, caches = [], []
            for net in model.subnets:
                o, c = net.forward(coords, geo)
                outs.append(o)
                caches.append(c)
            grads_out = [np.zeros_like(o) for o in outs]

            # data term
            d = slice(0, B)
            ld = 0.0
            for k in range(3):
                r = outs[k][d] - rows[:, 4 + k]
                ld += np.mean(r * r)
                grads_out[k][d] += cfg.lambda_data * 2.0 * r / B
            lb = 0.0
            off = B
            if use_bc:
                w = slice(off, off + nb_w)
                i = slice(off + nb_w, off + nb_w + nb_io)
                o = slice(off + nb_w + nb_io, off + nb_w + 2 * nb_io)
                off += nb_w + 2 * nb_io
                uw, vw = outs[0][w], outs[1][w]
                vi, pi, po = outs[1][i], outs[2][i], outs[2][o]
                lb = (cfg.lambda_wall * np.mean(uw**2 + vw**2)
                      + cfg.lambda_inlet_v * np.mean(vi**2)
                      + cfg.lambda_p_io * (np.mean((pi - dp) ** 2) + np.mean(po**2)))
                grads_out[0][w] += cfg.lambda_wall * 2.0 * uw / nb_w
                grads_out[1][w] += cfg.lambda_wall * 2.0 * vw / nb_w
                grads_out[1][i] += cfg.lambda_inlet_v * 2.0 * vi / nb_io
                grads_out[2][i] += cfg.lambda_p_io * 2.0 * (pi - dp) / nb_io
                grads_out[2][o] += cfg.lambda_p_io * 2.0 * po / nb_io
            lp = 0.0
            if npair:
                a = slice(off, off + npair)
                b = slice(off + npair, off + 2 * npair)
                for k in range(3):
                    diff = outs[k][a] - outs[k][b]
                    lp += np.mean(diff * diff) / 3.0
                    g = cfg.lambda_periodic * 2.0 * diff / (3.0 * npair)
                    grads_out[k][a] += g
                    grads_out[k][b] -= g

            total = cfg.lambda_data * ld + lb + cfg.lambda_periodic * lp
            if not math.isfinite(total):
                raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}",
                                            epoch=epoch)
            grads = []
            for net, c, g in zip(model.subnets, caches, grads_out):
                grads += net.backward(c, g)
            adam_step(opt, params, grads)
            sums += (ld, lb, lp)
            steps += 1
        ld, lb, lp = sums / max(steps, 1)
        total = cfg.lambda_data * ld + lb + cfg.lambda_periodic * lp
        hist.append(epoch=epoch, lr=float(opt.lr), data_loss=float(ld), bc_loss=float(lb),
                    periodicity_loss=float(lp), total=float(total))
        if not all(np.isfinite(p).all() for p in params):
            raise TrainingDivergedError(f"parameters became non-finite at epoch {epoch}",
                                        epoch=epoch)
        if progress is not None:
            progress(epoch, hist.rows[-1])
    return model, hist


# ---------------------------------------------------------------------------
# checkpoints

def _layer_dict(layer: DenseLayer) -> dict:
    return {"in": layer.n_in, "out": layer.n_out, "activation": layer.activation,
            "weights": layer.weights.ravel().tolist(), "bias": layer.bias.tolist()}


def _layer_from(d: dict) -> DenseLayer:
    W = np.array(d["weights"], dtype=float).reshape(int(d["out"]), int(d["in"]))
    return DenseLayer(W, np.array(d["bias"], dtype=float), d["activation"])


def model_to_dict(model: SurrogateModel) -> dict:
    return {
        "format": "dldnet-surrogate",
        "version": CHECKPOINT_VERSION,
        "variant": model.variant,
        "outputs": list(OUTPUTS),
        "norms": model.norms,
        "config": model.config,
        "seed": model.seed,
        "subnets": [{"head": [_layer_dict(l) for l in net.head],
                     "trunk": [_layer_dict(l) for l in net.trunk]} for net in model.subnets],
    }


def save_model(model: SurrogateModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model), sort_keys=True))
    return path


def load_model(path, expect_variant: str | None = None) -> SurrogateModel:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read checkpoint: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"corrupted checkpoint: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(d, dict) or d.get("format") != "dldnet-surrogate":
        raise ParseError("not a surrogate checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {d.get('version')} != supported {CHECKPOINT_VERSION}")
    if expect_variant is not None and d.get("variant") != canonical_variant(expect_variant):
        raise VariantMismatchError(
            f"checkpoint holds a {d.get('variant')} model, expected "
            f"{canonical_variant(expect_variant)}")
    try:
        nets = [SubNet([_layer_from(l) for l in s["head"]], [_layer_from(l) for l in s["trunk"]])
                for s in d["subnets"]]
        model = SurrogateModel(canonical_variant(d["variant"]), nets, d["norms"],
                               d.get("config", {}), int(d.get("seed", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}") from exc
    if len(nets) != len(OUTPUTS):
        raise ParseError(f"expected {len(OUTPUTS)} sub-networks, found {len(nets)}")
    return model


def geometry_cell(model: SurrogateModel, F: float, N: int) -> UnitCellGeometry:
    return make_cell(F, N, model.norms["Dx"])

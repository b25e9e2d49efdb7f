"""Landmarks-to-weights regression network (three ablation variants) with
hand-derived gradients, Adam, and the training loop."""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .errors import InputNotAligned, InvalidArgument, NumericFailure
from .groups import GroupSpec, RegionPartition
from .landmarks import N_LANDMARKS

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
INPUT_SCALE = 128.0
ALIGNED_BOUNDS = (-32.0, 160.0)
BUFFERS = ("norm.mean", "norm.std")  # untrained input standardization


class Variant(str, Enum):
    NO_GROUPING = "none"
    CONV_GROUPING = "conv"
    FULL_GROUPING = "full"


@dataclass(frozen=True)
class LayerSizes:
    conv_channels: tuple = (16, 32)
    kernel: int = 3
    region_features: int = 32
    group_hidden: int = 64
    group_features: int = 32
    head_hidden: int = 16
    conv_mlp_hidden: tuple = (128,)
    mlp_hidden: tuple = (256, 128)


@dataclass(frozen=True)
class NetworkSpec:
    variant: Variant
    target_names: tuple
    partition: RegionPartition = field(default_factory=RegionPartition)
    group_spec: GroupSpec = None
    sizes: LayerSizes = field(default_factory=LayerSizes)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "target_names", tuple(self.target_names))
        if self.variant is Variant.FULL_GROUPING:
            if self.group_spec is None:
                raise InvalidArgument("full grouping needs a group spec")
            self.group_spec.validate(self.partition, self.target_names)

    @property
    def K(self):
        return len(self.target_names)

    @classmethod
    def for_rig(cls, rig, variant, sizes=None):
        return cls(Variant(variant), tuple(rig.target_names), rig.partition, rig.group_spec, sizes or LayerSizes())

    @property
    def sources(self):
        """Feature nodes feeding the heads: every region, then every group."""
        return list(self.partition.regions) + list(self.group_spec.groups)

    def to_dict(self):
        return {
            "variant": self.variant.value,
            "target_names": list(self.target_names),
            "regions": self.partition.to_dict(),
            "group_spec": self.group_spec.to_dict() if self.group_spec else None,
            "sizes": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.sizes).items()},
        }

    @classmethod
    def from_dict(cls, d):
        sizes = {k: tuple(v) if isinstance(v, list) else v for k, v in d["sizes"].items()}
        return cls(
            Variant(d["variant"]),
            tuple(d["target_names"]),
            RegionPartition(d["regions"]),
            GroupSpec.from_dict(d["group_spec"]) if d.get("group_spec") else None,
            LayerSizes(**sizes),
        )


# --- parameter layout -----------------------------------------------------

def param_shapes(spec):
    """Ordered {name: (shape, fan_in, fan_out)}; names ending in '.b' are biases."""
    sz = spec.sizes
    shapes = {}

    def dense(name, n_in, n_out):
        shapes[f"{name}.w"] = ((n_in, n_out), n_in, n_out)
        shapes[f"{name}.b"] = ((n_out,), n_in, n_out)

    def conv(name, c_in, c_out):
        k = sz.kernel
        shapes[f"{name}.w"] = ((k * c_in, c_out), k * c_in, k * c_out)
        shapes[f"{name}.b"] = ((c_out,), k * c_in, k * c_out)

    if spec.variant is Variant.NO_GROUPING:
        dims = [2 * N_LANDMARKS, *sz.mlp_hidden, spec.K]
        for i in range(len(dims) - 1):
            dense(f"mlp.{i}", dims[i], dims[i + 1])
        return shapes

    c1, c2 = sz.conv_channels
    for r, idx in spec.partition.regions.items():
        conv(f"region.{r}.conv0", 2, c1)
        conv(f"region.{r}.conv1", c1, c2)
        dense(f"region.{r}.fc", c2 * len(idx), sz.region_features)

    if spec.variant is Variant.CONV_GROUPING:
        dims = [sz.region_features * len(spec.partition.regions), *sz.conv_mlp_hidden, spec.K]
        for i in range(len(dims) - 1):
            dense(f"mlp.{i}", dims[i], dims[i + 1])
        return shapes

    if sz.group_features != sz.region_features:
        raise InvalidArgument("full grouping needs group_features == region_features (shared head input)")
    for g, members in spec.group_spec.groups.items():
        dense(f"group.{g}.fc0", sz.region_features * len(members), sz.group_hidden)
        dense(f"group.{g}.fc1", sz.group_hidden, sz.group_features)
    K, F, H = spec.K, sz.region_features, sz.head_hidden
    # heads are stacked along a leading target axis
    shapes["heads.fc0.w"] = ((K, F, H), F, H)
    shapes["heads.fc0.b"] = ((K, H), F, H)
    shapes["heads.fc1.w"] = ((K, H), H, 1)
    shapes["heads.fc1.b"] = ((K,), H, 1)
    return shapes


def glorot_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_params(spec, seed=0):
    """Glorot-uniform weights, zero biases.

    The two ``norm.*`` buffers map aligned pixels to network input as
    ``(x - mean) / std``; they start at (0, 128) and are not trained.
    """
    rng = np.random.default_rng(seed)
    params = {
        "norm.mean": np.zeros((N_LANDMARKS, 2)),
        "norm.std": np.full((N_LANDMARKS, 2), INPUT_SCALE),
    }
    for name, (shape, fan_in, fan_out) in param_shapes(spec).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            a = glorot_bound(fan_in, fan_out)
            params[name] = rng.uniform(-a, a, size=shape)
    return params


def trainable(params):
    return {k: v for k, v in params.items() if k not in BUFFERS}


def count_params(params):
    return int(sum(p.size for p in trainable(params).values()))


def fit_normalization(params, X, floor=1e-3):
    """Copy of ``params`` whose input buffers standardize ``X`` per coordinate."""
    out = dict(params)
    out["norm.mean"] = X.mean(axis=0)
    out["norm.std"] = np.maximum(X.std(axis=0), floor)
    return out


def flatten(tree):
    return np.concatenate([v.ravel() for v in tree.values()])


def unflatten(flat, like):
    out, i = {}, 0
    for k, v in like.items():
        out[k] = flat[i:i + v.size].reshape(v.shape).copy()
        i += v.size
    return out


def check_params(params, spec):
    shapes = {k: ((N_LANDMARKS, 2), 0, 0) for k in BUFFERS}
    shapes.update(param_shapes(spec))
    if list(params) != list(shapes):
        raise InvalidArgument("parameter names do not match the network spec")
    for name, (shape, _, _) in shapes.items():
        if params[name].shape != shape:
            raise InvalidArgument(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# --- layers ---------------------------------------------------------------

def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _dleaky(x, slope):
    return np.where(x > 0, 1.0, slope)


LOGIT_CLIP = 36.0  # float64 sigmoid stays strictly inside (0, 1) up to here


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.clip(x, -LOGIT_CLIP, LOGIT_CLIP)))


def _im2col(x, k):
    """(B, n, C) -> (B, n, k*C) windows with zero padding, ordered (tap, channel)."""
    pad = k // 2
    n = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    return np.concatenate([xp[:, j:j + n, :] for j in range(k)], axis=2)


def _col2im(dcols, k, c):
    pad = k // 2
    B, n, _ = dcols.shape
    dxp = np.zeros((B, n + 2 * pad, c))
    for j in range(k):
        dxp[:, j:j + n, :] += dcols[:, :, j * c:(j + 1) * c]
    return dxp[:, pad:pad + n, :]


# --- forward / backward ---------------------------------------------------

def _prep(params, lms):
    x = np.asarray(lms, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (N_LANDMARKS, 2):
        raise InvalidArgument(f"expected (B, 68, 2) landmarks, got {x.shape}")
    return (x - params["norm.mean"]) / params["norm.std"]


def _mlp_forward(params, prefix, h, n_layers, slope, cache):
    for i in range(n_layers):
        z = h @ params[f"{prefix}.{i}.w"] + params[f"{prefix}.{i}.b"]
        cache[f"{prefix}.{i}"] = (h, z)
        h = _leaky(z, slope) if i < n_layers - 1 else z
    return h


def _mlp_backward(params, prefix, dout, n_layers, slope, cache, grads):
    d = dout
    for i in reversed(range(n_layers)):
        h, z = cache[f"{prefix}.{i}"]
        if i < n_layers - 1:
            d = d * _dleaky(z, slope)
        grads[f"{prefix}.{i}.w"] = h.T @ d
        grads[f"{prefix}.{i}.b"] = d.sum(axis=0)
        d = d @ params[f"{prefix}.{i}.w"].T
    return d


def _region_forward(params, spec, x, slope, cache):
    sz = spec.sizes
    feats = {}
    for r, idx in spec.partition.regions.items():
        h = x[:, idx, :]
        for li in range(len(sz.conv_channels)):
            name = f"region.{r}.conv{li}"
            cols = _im2col(h, sz.kernel)
            z = cols @ params[f"{name}.w"] + params[f"{name}.b"]
            cache[name] = (cols, z, h.shape[2])
            h = _leaky(z, slope)
        flat = h.reshape(h.shape[0], -1)
        z = flat @ params[f"region.{r}.fc.w"] + params[f"region.{r}.fc.b"]
        cache[f"region.{r}.fc"] = (flat, z, h.shape)
        feats[r] = _leaky(z, slope)
    return feats


def _region_backward(params, spec, dfeats, slope, cache, grads):
    sz = spec.sizes
    for r in spec.partition.regions:
        flat, z, hshape = cache[f"region.{r}.fc"]
        d = dfeats[r] * _dleaky(z, slope)
        grads[f"region.{r}.fc.w"] = flat.T @ d
        grads[f"region.{r}.fc.b"] = d.sum(axis=0)
        d = (d @ params[f"region.{r}.fc.w"].T).reshape(hshape)
        for li in reversed(range(len(sz.conv_channels))):
            name = f"region.{r}.conv{li}"
            cols, z, c_in = cache[name]
            d = d * _dleaky(z, slope)
            B, n, c_out = d.shape
            grads[f"{name}.w"] = cols.reshape(B * n, -1).T @ d.reshape(B * n, c_out)
            grads[f"{name}.b"] = d.sum(axis=(0, 1))
            if li > 0:
                d = _col2im(d @ params[f"{name}.w"].T, sz.kernel, c_in)


def _forward(params, spec, x, slope):
    """Logits (B, K) and a cache for the backward pass."""
    cache = {}
    B = x.shape[0]
    if spec.variant is Variant.NO_GROUPING:
        n = len(spec.sizes.mlp_hidden) + 1
        return _mlp_forward(params, "mlp", x.reshape(B, -1), n, slope, cache), cache

    feats = _region_forward(params, spec, x, slope, cache)
    if spec.variant is Variant.CONV_GROUPING:
        h = np.concatenate([feats[r] for r in spec.partition.regions], axis=1)
        n = len(spec.sizes.conv_mlp_hidden) + 1
        return _mlp_forward(params, "mlp", h, n, slope, cache), cache

    for g, members in spec.group_spec.groups.items():
        h = np.concatenate([feats[m] for m in members], axis=1)
        z0 = h @ params[f"group.{g}.fc0.w"] + params[f"group.{g}.fc0.b"]
        a0 = _leaky(z0, slope)
        z1 = a0 @ params[f"group.{g}.fc1.w"] + params[f"group.{g}.fc1.b"]
        cache[f"group.{g}"] = (h, z0, a0, z1)
        feats[g] = _leaky(z1, slope)

    sources = spec.sources
    src_idx = np.array([sources.index(spec.group_spec.target_source[t]) for t in spec.target_names])
    F = np.stack([feats[s] for s in sources], axis=1)  # (B, S, F)
    hin = F[:, src_idx, :]  # (B, K, F)
    z0 = np.einsum("bkf,kfh->bkh", hin, params["heads.fc0.w"]) + params["heads.fc0.b"]
    a0 = _leaky(z0, slope)
    logits = np.einsum("bkh,kh->bk", a0, params["heads.fc1.w"]) + params["heads.fc1.b"]
    cache["heads"] = (src_idx, len(sources), hin, z0, a0)
    return logits, cache


def _backward(params, spec, cache, dlogits, slope):
    grads = {}
    if spec.variant is Variant.NO_GROUPING:
        _mlp_backward(params, "mlp", dlogits, len(spec.sizes.mlp_hidden) + 1, slope, cache, grads)
        return grads

    regions = list(spec.partition.regions)
    fdim = spec.sizes.region_features
    if spec.variant is Variant.CONV_GROUPING:
        dh = _mlp_backward(params, "mlp", dlogits, len(spec.sizes.conv_mlp_hidden) + 1, slope, cache, grads)
        dfeats = {r: dh[:, i * fdim:(i + 1) * fdim] for i, r in enumerate(regions)}
        _region_backward(params, spec, dfeats, slope, cache, grads)
        return grads

    src_idx, n_src, hin, z0, a0 = cache["heads"]
    grads["heads.fc1.w"] = np.einsum("bk,bkh->kh", dlogits, a0)
    grads["heads.fc1.b"] = dlogits.sum(axis=0)
    dz0 = dlogits[:, :, None] * params["heads.fc1.w"][None] * _dleaky(z0, slope)
    grads["heads.fc0.w"] = np.einsum("bkf,bkh->kfh", hin, dz0)
    grads["heads.fc0.b"] = dz0.sum(axis=0)
    dhin = np.einsum("bkh,kfh->bkf", dz0, params["heads.fc0.w"])
    dF = np.zeros((dhin.shape[0], n_src, dhin.shape[2]))
    np.add.at(dF, (slice(None), src_idx), dhin)

    sources = spec.sources
    dfeats = {s: dF[:, i] for i, s in enumerate(sources)}
    for g, members in spec.group_spec.groups.items():
        h, gz0, ga0, gz1 = cache[f"group.{g}"]
        d = dfeats[g] * _dleaky(gz1, slope)
        grads[f"group.{g}.fc1.w"] = ga0.T @ d
        grads[f"group.{g}.fc1.b"] = d.sum(axis=0)
        d = (d @ params[f"group.{g}.fc1.w"].T) * _dleaky(gz0, slope)
        grads[f"group.{g}.fc0.w"] = h.T @ d
        grads[f"group.{g}.fc0.b"] = d.sum(axis=0)
        dh = d @ params[f"group.{g}.fc0.w"].T
        for i, m in enumerate(members):
            dfeats[m] = dfeats[m] + dh[:, i * fdim:(i + 1) * fdim]
    _region_backward(params, spec, {r: dfeats[r] for r in regions}, slope, cache, grads)
    return grads


def forward(params, spec, lms, slope=1e-2):
    """Weights in (0, 1) for one (68, 2) landmark set or a (B, 68, 2) batch."""
    check_params(params, spec)
    single = np.ndim(lms) == 2
    logits, _ = _forward(params, spec, _prep(params, lms), slope)
    out = _sigmoid(logits)
    return out[0] if single else out


def loss(pred, gt, active_weight=0.1):
    """MSE over all targets plus ``active_weight`` x MSE over targets active in ``gt``."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise InvalidArgument(f"shape mismatch: {pred.shape} vs {gt.shape}")
    value, _ = _loss_and_dpred(np.atleast_2d(pred), np.atleast_2d(gt), active_weight)
    return value


def _loss_and_dpred(pred, gt, active_weight):
    """Batch-mean loss and its gradient w.r.t. ``pred``, both (B, K)."""
    B, K = pred.shape
    err = pred - gt
    mask = gt > 0
    n_active = mask.sum(axis=1)
    denom = np.maximum(n_active, 1)
    per = (err ** 2).mean(axis=1) + active_weight * ((err ** 2) * mask).sum(axis=1) / denom
    dpred = (2.0 * err / K + active_weight * 2.0 * err * mask / denom[:, None]) / B
    return float(per.mean()), dpred


def _check_finite(tree, what):
    for name, v in tree.items():
        if not np.all(np.isfinite(v)):
            raise NumericFailure(f"non-finite {what} in tensor {name}", tensor=name)


def grad(params, spec, lms, gt, active_weight=0.1, slope=1e-2, workers=1):
    """Mean loss over a batch and its exact gradient w.r.t. every parameter."""
    check_params(params, spec)
    x = _prep(params, lms)
    gt = np.atleast_2d(np.asarray(gt, dtype=float))
    B = x.shape[0]
    if B == 0:
        raise InvalidArgument("empty batch")
    if gt.shape != (B, spec.K):
        raise InvalidArgument(f"targets have shape {gt.shape}, expected {(B, spec.K)}")
    if workers > 1 and B > 1:
        return _parallel_grad(params, spec, x, gt, active_weight, slope, workers)
    return _grad_core(params, spec, x, gt, active_weight, slope)


def _grad_core(params, spec, x, gt, active_weight, slope):
    logits, cache = _forward(params, spec, x, slope)
    pred = _sigmoid(logits)
    value, dpred = _loss_and_dpred(pred, gt, active_weight)
    if not np.isfinite(value):
        raise NumericFailure("non-finite loss", tensor="loss")
    grads = _backward(params, spec, cache, dpred * pred * (1.0 - pred), slope)
    grads = {k: grads[k] for k in params if k not in BUFFERS}
    _check_finite(grads, "gradient")
    return value, grads


def _parallel_grad(params, spec, x, gt, active_weight, slope, workers):
    chunks = np.array_split(np.arange(x.shape[0]), min(workers, x.shape[0]))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: _grad_core(params, spec, x[c], gt[c], active_weight, slope), chunks))
    B = x.shape[0]
    value = sum(len(c) * v for c, (v, _) in zip(chunks, parts)) / B
    grads = {k: sum(len(c) * g[k] for c, (_, g) in zip(chunks, parts)) / B for k in trainable(params)}
    return value, grads


# --- optimization ---------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-5
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-10
    weight_decay: float = 1e-7
    batch: int = 16
    epochs: int = 20
    lr_gamma: float = 0.5
    lr_step: int = 3
    seed: int = 0
    active_loss_weight: float = 0.1
    leaky_slope: float = 1e-2
    val_fraction: float = 0.1
    split_seed: int = 0
    workers: int = 1
    standardize: bool = True

    def __post_init__(self):
        for name in ("lr0", "beta1", "beta2", "eps", "lr_gamma", "active_loss_weight", "leaky_slope"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.weight_decay < 0:
            raise InvalidArgument("weight_decay must be non-negative")
        if self.batch < 1 or self.epochs < 1 or self.lr_step < 1:
            raise InvalidArgument("batch, epochs and lr_step must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise InvalidArgument("val_fraction must lie in (0, 1)")


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        params = trainable(params)
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state, cfg, lr):
    """One Adam update with L2 weight decay folded into the gradient. Returns new (params, state)."""
    t = state.step + 1
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    new_p, new_m, new_v = dict(params), {}, {}
    for k, g in grads.items():
        p = params[k]
        g = g + cfg.weight_decay * p
        m = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


def lr_schedule(cfg, epoch):
    if epoch < 0:
        raise InvalidArgument("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_gamma ** (epoch // cfg.lr_step)


@dataclass
class TrainReport:
    seed: int
    variant: str
    dataset_hash: str
    initial_val_loss: float
    epochs: list = field(default_factory=list)  # dicts: epoch, lr, train_loss, val_loss

    @property
    def final_val_loss(self):
        return self.epochs[-1]["val_loss"]

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def split_indices(n, cfg):
    """(train, validation) index arrays; depends only on ``n`` and ``cfg.split_seed``."""
    perm = np.random.default_rng(np.random.SeedSequence([int(cfg.split_seed), n])).permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def evaluate_loss(params, spec, X, Y, cfg, chunk=1024):
    total = 0.0
    for i in range(0, len(X), chunk):
        pred = _sigmoid(_forward(params, spec, _prep(params, X[i:i + chunk]), cfg.leaky_slope)[0])
        value, _ = _loss_and_dpred(pred, Y[i:i + chunk], cfg.active_loss_weight)
        total += value * len(pred)
    return total / len(X)


def train(X, Y, spec, cfg, dataset_hash="", params=None, progress=None):
    """Mini-batch Adam on (aligned landmarks, weights). Deterministic given ``cfg.seed``.

    Returns the trained parameters and a per-epoch report. The validation split
    is taken with ``cfg.split_seed`` so variants trained with different seeds
    share the same held-out samples.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) != len(Y):
        raise InvalidArgument("landmark and weight counts differ")
    if len(X) < 2 * cfg.batch:
        raise InvalidArgument(f"dataset has {len(X)} samples; need at least {2 * cfg.batch}")
    if Y.shape[1] != spec.K:
        raise InvalidArgument(f"weights have {Y.shape[1]} targets, network expects {spec.K}")

    tr, va = split_indices(len(X), cfg)
    Xtr, Ytr, Xva, Yva = X[tr], Y[tr], X[va], Y[va]
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 1]))
    if params is None:
        params = init_params(spec, np.random.SeedSequence([int(cfg.seed), 0]))
        if cfg.standardize:
            params = fit_normalization(params, Xtr)
    state = AdamState.zeros_like(params)
    report = TrainReport(cfg.seed, spec.variant.value, dataset_hash,
                         evaluate_loss(params, spec, Xva, Yva, cfg))

    for epoch in range(cfg.epochs):
        lr = lr_schedule(cfg, epoch)
        order = rng.permutation(len(Xtr))
        batch_losses = []
        for i in range(0, len(order), cfg.batch):
            b = order[i:i + cfg.batch]
            value, g = grad(params, spec, Xtr[b], Ytr[b], cfg.active_loss_weight, cfg.leaky_slope, cfg.workers)
            params, state = adam_step(params, g, state, cfg, lr)
            batch_losses.append(value * len(b))
        train_loss = sum(batch_losses) / len(order)
        val_loss = evaluate_loss(params, spec, Xva, Yva, cfg)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NumericFailure(f"non-finite loss at epoch {epoch}", tensor="loss")
        report.epochs.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_loss": val_loss})
        log.info("epoch %d lr %.3g train %.6f val %.6f", epoch, lr, train_loss, val_loss)
        if progress:
            progress(report.epochs[-1])
    return params, report


def predict(params, spec, lms, slope=1e-2):
    """Inference entry point: ``forward`` after checking the input looks aligned."""
    x = np.asarray(lms, dtype=float)
    lo, hi = ALIGNED_BOUNDS
    pts = x.reshape(-1, 2)
    if not np.isfinite(pts).all() or pts.min() < lo or pts.max() > hi:
        raise InputNotAligned(f"landmarks fall outside [{lo}, {hi}]^2; align them to the template first")
    return forward(params, spec, x, slope)


# --- persistence ----------------------------------------------------------

def params_to_dict(params, spec):
    return {
        "format_version": FORMAT_VERSION,
        "variant": spec.variant.value,
        "spec": spec.to_dict(),
        "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.items()},
    }


def params_from_dict(d):
    if d.get("format_version") != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported params format_version {d.get('format_version')}")
    spec = NetworkSpec.from_dict(d["spec"])
    params = {k: np.asarray(t["data"], dtype=float).reshape(t["shape"]) for k, t in d["tensors"].items()}
    check_params(params, spec)
    _check_finite(params, "parameter")
    return params, spec


def save_params(params, spec, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(params_to_dict(params, spec), f)


def load_params(path):
    with open(path, encoding="utf-8") as f:
        return params_from_dict(json.load(f))


def params_hash(params):
    h = hashlib.sha256()
    for k, v in params.items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(v).tobytes())
    return h.hexdigest()

"""Desk-scale convolutional network with one shared convolutional stack
and one fully-connected stream per view group.

The streams take turns training (round-robin over groups, one minibatch
each); because the convolutional parameters are a single shared block,
every stream's turn tunes them, which is exactly the inheritance scheme
the round-robin schedule is meant to realize: stream i would inherit the
conv layers stream i-1 just updated, and the first stream of an
iteration those of the last stream of the previous one. Sharing one
block makes that copy chain an identity.

Everything is plain numpy in 64-bit master parameters, with analytic
backpropagation verified against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import serialize


# ---------------------------------------------------------------------------
# Architecture description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvLayerSpec:
    filters: int
    kernel: int
    stride: int = 1
    padding: int = 0
    pool: bool = False  # 2x max-pool after the rectifier


@dataclass(frozen=True)
class ArchSpec:
    """Network shape: conv chain on a square single-channel input, then
    dense hidden layers (rectified, dropout-eligible), then class logits.
    The last hidden layer is the designated feature layer."""

    input_size: int = 32
    conv: tuple[ConvLayerSpec, ...] = (
        ConvLayerSpec(filters=8, kernel=5, stride=1, padding=2, pool=True),
        ConvLayerSpec(filters=16, kernel=3, stride=1, padding=1, pool=True),
    )
    hidden: tuple[int, ...] = (64,)

    def __post_init__(self):
        if self.input_size < 1:
            raise ValueError("input_size must be >= 1")
        if not self.hidden:
            raise ValueError("at least one hidden dense layer required")
        self.conv_output_dim()  # validates the shape chain

    def conv_shapes(self) -> list[tuple[int, int]]:
        """(channels, side) after each conv layer."""
        side = self.input_size
        channels = 1
        shapes = []
        for spec in self.conv:
            side = (side + 2 * spec.padding - spec.kernel) // spec.stride + 1
            if side < 1:
                raise ValueError(f"conv layer {spec} shrinks the map to nothing")
            if spec.pool:
                side = side // 2
                if side < 1:
                    raise ValueError(f"pooling after {spec} leaves no pixels")
            channels = spec.filters
            shapes.append((channels, side))
        return shapes

    def conv_output_dim(self) -> int:
        if not self.conv:
            return self.input_size * self.input_size
        channels, side = self.conv_shapes()[-1]
        return channels * side * side

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 8
    iters: int = 100
    seed: int = 0
    dropout: float = 0.5
    precision: str = "f64"

    def __post_init__(self):
        if min(self.learning_rate, self.momentum, self.weight_decay) < 0:
            raise ValueError("rates must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class ConvLayer:
    weight: np.ndarray  # (F, C, K, K)
    bias: np.ndarray  # (F,)
    spec: ConvLayerSpec


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    rectify: bool
    dropout: bool


@dataclass
class ConvStack:
    layers: list[ConvLayer]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out


@dataclass
class FcStack:
    layers: list[DenseLayer]
    feature_index: int  # which layer's (rectified) output is the feature

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out


@dataclass
class MultiStreamModel:
    shared: ConvStack
    streams: list[FcStack]
    arch: ArchSpec
    num_classes: int

    @property
    def num_groups(self) -> int:
        return len(self.streams)

    def conv_params_via_stream(self, group_id: int) -> list[np.ndarray]:
        """The conv parameter block as seen when computing through a given
        stream. One shared block backs every stream, so these views must
        always agree across group ids."""
        if not 0 <= group_id < self.num_groups:
            raise ValueError(f"group_id {group_id} out of range")
        return self.shared.params()

    def param_blocks(self, group_id: int) -> list[np.ndarray]:
        """Shared conv parameters followed by the group's dense ones, in
        declaration order. These are live references."""
        return self.conv_params_via_stream(group_id) + self.streams[group_id].params()


def init_model(
    arch: ArchSpec, num_groups: int, num_classes: int, seed: int
) -> MultiStreamModel:
    """Seeded He initialization: weights ~ N(0, sqrt(2/fan_in)), biases 0.
    Streams are drawn sequentially from one generator, so the whole model
    is a deterministic function of the seed."""
    if num_groups < 1:
        raise ValueError("num_groups must be >= 1")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = np.random.default_rng(seed)

    conv_layers = []
    in_channels = 1
    for spec in arch.conv:
        fan_in = in_channels * spec.kernel * spec.kernel
        weight = rng.normal(
            0.0, math.sqrt(2.0 / fan_in), size=(spec.filters, in_channels, spec.kernel, spec.kernel)
        )
        conv_layers.append(ConvLayer(weight, np.zeros(spec.filters), spec))
        in_channels = spec.filters
    shared = ConvStack(conv_layers)

    streams = []
    for _ in range(num_groups):
        layers = []
        in_dim = arch.conv_output_dim()
        for width in arch.hidden:
            weight = rng.normal(0.0, math.sqrt(2.0 / in_dim), size=(width, in_dim))
            layers.append(DenseLayer(weight, np.zeros(width), rectify=True, dropout=True))
            in_dim = width
        weight = rng.normal(0.0, math.sqrt(2.0 / in_dim), size=(num_classes, in_dim))
        layers.append(DenseLayer(weight, np.zeros(num_classes), rectify=False, dropout=False))
        streams.append(FcStack(layers, feature_index=len(arch.hidden) - 1))

    return MultiStreamModel(shared, streams, arch, num_classes)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _im2col_indices(channels, height, width, kernel, stride):
    out_h = (height - kernel) // stride + 1
    out_w = (width - kernel) // stride + 1
    c_idx = np.repeat(np.arange(channels), kernel * kernel).reshape(-1, 1)
    ky = np.tile(np.repeat(np.arange(kernel), kernel), channels).reshape(-1, 1)
    kx = np.tile(np.tile(np.arange(kernel), kernel), channels).reshape(-1, 1)
    oy = stride * np.repeat(np.arange(out_h), out_w).reshape(1, -1)
    ox = stride * np.tile(np.arange(out_w), out_h).reshape(1, -1)
    return c_idx, ky + oy, kx + ox, out_h, out_w


def _conv_forward(layer: ConvLayer, x: np.ndarray, cache: list | None):
    spec = layer.spec
    pad = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    n, c, h, w = xp.shape
    c_idx, y_idx, x_idx, out_h, out_w = _im2col_indices(c, h, w, spec.kernel, spec.stride)
    cols = xp[:, c_idx, y_idx, x_idx]  # (N, C*K*K, L)
    w_mat = layer.weight.reshape(spec.filters, -1).astype(x.dtype, copy=False)
    pre = np.matmul(w_mat, cols) + layer.bias.astype(x.dtype, copy=False)[:, None]
    pre = pre.reshape(n, spec.filters, out_h, out_w)
    mask = pre > 0
    out = pre * mask

    pool_arg = None
    pooled_shape = None
    if spec.pool:
        ph, pw = out_h // 2, out_w // 2
        windows = (
            out[:, :, : 2 * ph, : 2 * pw]
            .reshape(n, spec.filters, ph, 2, pw, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, spec.filters, ph, pw, 4)
        )
        pool_arg = windows.argmax(axis=-1)
        pooled_shape = (out_h, out_w)
        out = np.take_along_axis(windows, pool_arg[..., None], axis=-1)[..., 0]

    if cache is not None:
        cache.append((xp.shape, cols, mask, pool_arg, pooled_shape, (c_idx, y_idx, x_idx)))
    return out


def _conv_backward(layer: ConvLayer, dout: np.ndarray, cache_entry):
    spec = layer.spec
    xp_shape, cols, mask, pool_arg, pooled_shape, idx = cache_entry
    n = dout.shape[0]

    if spec.pool:
        out_h, out_w = pooled_shape
        ph, pw = out_h // 2, out_w // 2
        d_windows = np.zeros((n, spec.filters, ph, pw, 4), dtype=dout.dtype)
        np.put_along_axis(d_windows, pool_arg[..., None], dout[..., None], axis=-1)
        d_full = np.zeros((n, spec.filters, out_h, out_w), dtype=dout.dtype)
        d_full[:, :, : 2 * ph, : 2 * pw] = (
            d_windows.reshape(n, spec.filters, ph, pw, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, spec.filters, 2 * ph, 2 * pw)
        )
        dout = d_full

    dpre = (dout * mask).reshape(n, spec.filters, -1)  # (N, F, L)
    db = dpre.sum(axis=(0, 2))
    dw = np.einsum("nfl,ncl->fc", dpre, cols).reshape(layer.weight.shape)
    w_mat = layer.weight.reshape(spec.filters, -1).astype(dout.dtype, copy=False)
    dcols = np.matmul(w_mat.T, dpre)  # (N, C*K*K, L)

    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    c_idx, y_idx, x_idx = idx
    np.add.at(dxp, (np.arange(n)[:, None, None], c_idx, y_idx, x_idx), dcols)
    pad = spec.padding
    dx = dxp[:, :, pad:xp_shape[2] - pad, pad:xp_shape[3] - pad] if pad else dxp
    return dx, dw, db


def _dense_forward(layer: DenseLayer, x, dropout_rate, rng, cache: list | None):
    w = layer.weight.astype(x.dtype, copy=False)
    pre = x @ w.T + layer.bias.astype(x.dtype, copy=False)
    mask = None
    if layer.rectify:
        mask = pre > 0
        out = pre * mask
    else:
        out = pre
    keep = None
    activation = out
    if layer.dropout and dropout_rate > 0 and rng is not None:
        # inverted scaling: inference needs no rescale
        keep = (rng.random(out.shape) >= dropout_rate) / (1.0 - dropout_rate)
        out = out * keep.astype(out.dtype)
    if cache is not None:
        cache.append((x, mask, keep))
    return out, activation


def _dense_backward(layer: DenseLayer, dout, cache_entry):
    x, mask, keep = cache_entry
    if keep is not None:
        dout = dout * keep.astype(dout.dtype)
    if mask is not None:
        dout = dout * mask
    dw = dout.T @ x
    db = dout.sum(axis=0)
    dx = dout @ layer.weight.astype(dout.dtype, copy=False)
    return dx, dw, db


def _forward_batch(
    model: MultiStreamModel,
    group_id: int,
    images: np.ndarray,
    *,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    dtype=np.float64,
    caches: dict | None = None,
):
    """Run a (N, H, W) image batch through the shared conv stack and one
    stream. Returns (logits, feature activations)."""
    if not 0 <= group_id < model.num_groups:
        raise ValueError(f"group_id {group_id} out of range")
    images = np.asarray(images, dtype=dtype)
    if images.ndim == 2:
        images = images[None]
    size = model.arch.input_size
    if images.shape[1:] != (size, size):
        raise ValueError(f"expected {size}x{size} images, got {images.shape[1:]}")

    x = images[:, None, :, :]
    conv_cache = [] if caches is not None else None
    for layer in model.shared.layers:
        x = _conv_forward(layer, x, conv_cache)
    n = x.shape[0]
    x = x.reshape(n, -1)

    stream = model.streams[group_id]
    fc_cache = [] if caches is not None else None
    feature = None
    for i, layer in enumerate(stream.layers):
        x, activation = _dense_forward(layer, x, dropout_rate, rng, fc_cache)
        if i == stream.feature_index:
            feature = activation
    if caches is not None:
        caches["conv"] = conv_cache
        caches["fc"] = fc_cache
    return x, feature


def forward(model: MultiStreamModel, group_id: int, image: np.ndarray):
    """Inference pass for one normalized image: (logits, feature). Dropout
    is never applied here."""
    logits, feature = _forward_batch(model, group_id, np.asarray(image))
    return logits[0], feature[0]


def extract_feature(model: MultiStreamModel, group_id: int, image: np.ndarray) -> np.ndarray:
    """Activations of the designated feature layer (inference mode)."""
    return forward(model, group_id, image)[1]


def prepare_image(pixels: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resize to size x size and scale to [0, 1]."""
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    ys = (np.arange(size) * h) // size
    xs = (np.arange(size) * w) // size
    return pixels[np.ix_(ys, xs)].astype(np.float64) / 255.0


def loss_and_grads(
    model: MultiStreamModel,
    group_id: int,
    images,
    labels,
    cfg: TrainConfig,
    mask_seed: int = 0,
):
    """Mean softmax cross-entropy plus L2 weight decay over the shared
    conv block and the chosen stream, with gradients for exactly those
    parameters (ordered as model.param_blocks(group_id)). Dropout masks
    are drawn from a generator seeded by (cfg.seed, mask_seed), so the
    loss is a deterministic function of its arguments."""
    images = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    labels = np.asarray(labels)
    if images.shape[0] != labels.shape[0] or images.shape[0] == 0:
        raise ValueError("batch images and labels must align and be non-empty")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError("label out of range")
    dtype = np.float32 if cfg.precision == "f32" else np.float64
    rng = np.random.default_rng([cfg.seed, mask_seed]) if cfg.dropout > 0 else None

    caches: dict = {}
    logits, _ = _forward_batch(
        model,
        group_id,
        images.astype(dtype),
        dropout_rate=cfg.dropout,
        rng=rng,
        dtype=dtype,
        caches=caches,
    )
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(log_probs[np.arange(n), labels].mean())
    probs = np.exp(log_probs)
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    stream = model.streams[group_id]
    fc_grads: list[np.ndarray] = []
    d = dlogits
    for layer, entry in zip(reversed(stream.layers), reversed(caches["fc"])):
        d, dw, db = _dense_backward(layer, d, entry)
        fc_grads = [dw.astype(np.float64), db.astype(np.float64)] + fc_grads

    channels, side = (
        model.arch.conv_shapes()[-1] if model.arch.conv else (1, model.arch.input_size)
    )
    d = d.reshape(n, channels, side, side)
    conv_grads: list[np.ndarray] = []
    for layer, entry in zip(reversed(model.shared.layers), reversed(caches["conv"])):
        d, dw, db = _conv_backward(layer, d, entry)
        conv_grads = [dw.astype(np.float64), db.astype(np.float64)] + conv_grads

    grads = conv_grads + fc_grads
    if cfg.weight_decay > 0:
        blocks = model.param_blocks(group_id)
        for g, p in zip(grads, blocks):
            g += cfg.weight_decay * p
        loss += 0.5 * cfg.weight_decay * sum(float((p * p).sum()) for p in blocks)
    return loss, grads


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

def init_velocity(model: MultiStreamModel) -> dict[str, list[np.ndarray]]:
    vel = {"shared": [np.zeros_like(p) for p in model.shared.params()]}
    for g, stream in enumerate(model.streams):
        vel[f"stream{g}"] = [np.zeros_like(p) for p in stream.params()]
    return vel


def sgd_step(
    model: MultiStreamModel,
    group_id: int,
    grads: list[np.ndarray],
    cfg: TrainConfig,
    velocity: dict[str, list[np.ndarray]],
) -> None:
    """Classical momentum update v <- mu*v - lr*g; p <- p + v, applied to
    the shared conv block and the chosen stream only (in place)."""
    blocks = model.param_blocks(group_id)
    vels = velocity["shared"] + velocity[f"stream{group_id}"]
    if len(grads) != len(blocks):
        raise ValueError("gradient list does not match parameter blocks")
    for p, v, g in zip(blocks, vels, grads):
        v *= cfg.momentum
        v -= cfg.learning_rate * g
        p += v


def train_round_robin(
    model: MultiStreamModel,
    per_group_datasets: list[list[tuple[list[np.ndarray], int]]],
    cfg: TrainConfig,
    on_step=None,
):
    """Round-robin training: per outer iteration, every group in order
    draws one minibatch from its own dataset and updates the shared conv
    block plus its own stream.

    Each dataset item is (candidate_images, label); one candidate is
    chosen per draw (whole-video versus temporal-segment augmentation).
    Returns (model, trace) with one (iteration, group, loss) triple per
    update. Deterministic for a fixed seed.
    """
    if len(per_group_datasets) != model.num_groups:
        raise ValueError("need exactly one dataset per group")
    for g, dataset in enumerate(per_group_datasets):
        if not dataset:
            raise ValueError(f"dataset for group {g} is empty")
    rng = np.random.default_rng([cfg.seed, 1])
    velocity = init_velocity(model)
    trace = []
    step = 0
    for iteration in range(cfg.iters):
        for group_id in range(model.num_groups):
            dataset = per_group_datasets[group_id]
            picks = rng.integers(0, len(dataset), size=cfg.batch_size)
            images = []
            labels = []
            for item_idx in picks:
                candidates, label = dataset[int(item_idx)]
                images.append(candidates[int(rng.integers(0, len(candidates)))])
                labels.append(label)
            loss, grads = loss_and_grads(
                model, group_id, images, labels, cfg, mask_seed=step
            )
            sgd_step(model, group_id, grads, cfg, velocity)
            trace.append((iteration, group_id, loss))
            if on_step is not None:
                on_step(iteration, group_id, model)
            step += 1
    return model, trace


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def finite_difference_check(
    model: MultiStreamModel,
    group_id: int,
    images,
    labels,
    cfg: TrainConfig,
    h: float = 1e-5,
    tiny: float = 1e-8,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences over every parameter entry. Entries where both sides are
    below `tiny` are skipped (denominator noise)."""
    _, grads = loss_and_grads(model, group_id, images, labels, cfg, mask_seed=0)
    blocks = model.param_blocks(group_id)
    worst = 0.0
    for block, grad in zip(blocks, grads):
        flat = block.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_and_grads(model, group_id, images, labels, cfg, mask_seed=0)
            flat[i] = orig - h
            down, _ = loss_and_grads(model, group_id, images, labels, cfg, mask_seed=0)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            analytic = gflat[i]
            if abs(analytic) < tiny and abs(numeric) < tiny:
                continue
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
            worst = max(worst, rel)
    return worst


def random_tiny_model(seed: int):
    """A small random architecture plus a random batch, for gradient
    checks. Varies kernel size, stride, padding, pooling, depth, and the
    number of dense layers with the seed."""
    rng = np.random.default_rng(seed)
    size = int(rng.integers(6, 11))
    conv = []
    channels_choices = [2, 3]
    for _ in range(int(rng.integers(1, 3))):
        kernel = int(rng.choice([3, 5]))
        if kernel >= size:
            kernel = 3
        conv.append(
            ConvLayerSpec(
                filters=int(rng.choice(channels_choices)),
                kernel=kernel,
                stride=int(rng.choice([1, 2])),
                padding=int(rng.integers(0, 2)),
                pool=bool(rng.integers(0, 2)),
            )
        )
    hidden = tuple(int(rng.integers(3, 7)) for _ in range(int(rng.integers(1, 3))))
    while True:
        try:
            arch = ArchSpec(input_size=size, conv=tuple(conv), hidden=hidden)
            break
        except ValueError:
            conv = conv[:-1]  # chain shrank to nothing; drop a layer
            if not conv:
                arch = ArchSpec(input_size=size, conv=(), hidden=hidden)
                break
    num_classes = int(rng.integers(2, 5))
    num_groups = int(rng.integers(1, 4))
    model = init_model(arch, num_groups, num_classes, seed=seed)
    # jitter the (zero-initialized) biases: a dead rectifier channel would
    # otherwise park pre-activations exactly on the kink, where finite
    # differences are meaningless
    for stack in [model.shared.params()] + [s.params() for s in model.streams]:
        for block in stack[1::2]:
            block += rng.normal(0.0, 0.1, size=block.shape)
    batch = rng.uniform(0.0, 1.0, size=(int(rng.integers(1, 4)), size, size))
    labels = rng.integers(0, num_classes, size=batch.shape[0])
    group_id = int(rng.integers(0, num_groups))
    return model, group_id, batch, labels


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _arch_to_meta(arch: ArchSpec) -> dict:
    return {
        "input_size": arch.input_size,
        "conv": [
            [s.filters, s.kernel, s.stride, s.padding, int(s.pool)] for s in arch.conv
        ],
        "hidden": list(arch.hidden),
    }


def _arch_from_meta(meta: dict) -> ArchSpec:
    return ArchSpec(
        input_size=int(meta["input_size"]),
        conv=tuple(
            ConvLayerSpec(f, k, s, p, bool(pl)) for f, k, s, p, pl in meta["conv"]
        ),
        hidden=tuple(int(w) for w in meta["hidden"]),
    )


def save_model(model: MultiStreamModel, path) -> None:
    """Checkpoint: header describing the architecture plus every parameter
    block (shared conv first, then each stream) as little-endian 64-bit
    floats. Round-trips bit-exactly."""
    blocks = model.shared.params()
    for stream in model.streams:
        blocks += stream.params()
    meta = {
        "kind": "minicnn",
        "arch": _arch_to_meta(model.arch),
        "num_groups": model.num_groups,
        "num_classes": model.num_classes,
    }
    serialize.write_blocks(path, meta, blocks)


def load_model(path) -> MultiStreamModel:
    meta, blocks = serialize.read_blocks(path)
    if meta.get("kind") != "minicnn":
        raise ValueError(f"{path}: not a model checkpoint")
    arch = _arch_from_meta(meta["arch"])
    model = init_model(arch, int(meta["num_groups"]), int(meta["num_classes"]), seed=0)
    targets = model.shared.params()
    for stream in model.streams:
        targets += stream.params()
    if len(targets) != len(blocks):
        raise ValueError(f"{path}: checkpoint block count mismatch")
    for target, block in zip(targets, blocks):
        if target.shape != block.shape:
            raise ValueError(f"{path}: checkpoint block shape mismatch")
        target[...] = block
    return model

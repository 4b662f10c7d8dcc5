"""Minimal deterministic neural-network engine.

Two reference families are supported: a fully-connected network with four
sigmoid hidden layers, and a three-stage convolutional network (5x5 kernels,
same padding, 2x2 max pooling) with a 64-unit fully-connected head.  Forward,
backward and SGD are implemented directly on numpy arrays; convolutions go
through an im2col/matmul path so desk-scale training stays fast on a CPU.

Everything is deterministic: networks are built from an explicit seed, and
training shuffles with a generator derived from that seed, so the same
(config, seed, data, hyperparameters) always yields bit-identical parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

CONV_KERNEL = 5  # fixed kernel size for all conv layers
_SHUFFLE_SALT = 0x9E3779B9  # decorrelates the shuffle stream from weight init

PARAMETERIZED_KINDS = ("fully_connected", "conv2d")


@dataclass(frozen=True)
class LayerSpec:
    """One layer in a network: kind plus the dims that kind needs."""

    kind: str  # fully_connected | conv2d | maxpool2x2 | relu | sigmoid | softmax
    in_dim: int = 0
    out_dim: int = 0
    in_channels: int = 0
    out_channels: int = 0

    def __post_init__(self):
        if self.kind == "fully_connected" and (self.in_dim < 1 or self.out_dim < 1):
            raise ValueError(f"fully_connected layer needs positive dims, got {self}")
        if self.kind == "conv2d" and (self.in_channels < 1 or self.out_channels < 1):
            raise ValueError(f"conv2d layer needs positive channel counts, got {self}")


@dataclass
class TrainConfig:
    """SGD hyperparameters with stall-triggered decay and early stopping."""

    learning_rate: float = 0.1
    batch_size: int = 100
    max_epochs: int = 50
    early_stop_patience: int = 5  # consecutive non-improving epochs tolerated
    lr_decay: float = 0.5  # multiplied into the lr on every stalled epoch

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be non-negative")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")


@dataclass(frozen=True)
class SizeConfig:
    """One point of the size sweep: hidden width (fcdnn) or feature maps (cnn)."""

    family: str
    fcdnn_hidden: int | None = None
    cnn_maps: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.family == "fcdnn":
            if self.fcdnn_hidden is None or self.cnn_maps is not None:
                raise ValueError("fcdnn size takes fcdnn_hidden only")
            if self.fcdnn_hidden < 1:
                raise ValueError("fcdnn_hidden must be positive")
        elif self.family == "cnn":
            if self.cnn_maps is None or self.fcdnn_hidden is not None:
                raise ValueError("cnn size takes cnn_maps only")
            if any(m < 1 for m in self.cnn_maps):
                raise ValueError("cnn feature map counts must be positive")
        else:
            raise ValueError(f"unknown family {self.family!r}")

    @property
    def label(self) -> str:
        if self.family == "fcdnn":
            return str(self.fcdnn_hidden)
        return "-".join(str(m) for m in self.cnn_maps)

    @property
    def layer_size(self) -> int:
        """Scalar size used as the x-axis of performance curves."""
        if self.family == "fcdnn":
            return self.fcdnn_hidden
        return self.cnn_maps[2]


@dataclass
class Network:
    """Ordered layer specs plus one weight/bias tensor per parameterized layer."""

    specs: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_shape: tuple[int, ...]
    n_outputs: int
    seed: int
    dtype: np.dtype = field(default=np.dtype(np.float32))

    def __post_init__(self):
        self.dtype = np.dtype(self.dtype)
        expected = [s for s in self.specs if s.kind in PARAMETERIZED_KINDS]
        if len(expected) != len(self.weights) or len(expected) != len(self.biases):
            raise ValueError("one weight and bias tensor per parameterized layer")
        for spec, w, b in zip(expected, self.weights, self.biases):
            if spec.kind == "fully_connected":
                want_w, want_b = (spec.in_dim, spec.out_dim), (spec.out_dim,)
            else:
                want_w = (spec.out_channels, spec.in_channels, CONV_KERNEL, CONV_KERNEL)
                want_b = (spec.out_channels,)
            if w.shape != want_w or b.shape != want_b:
                raise ValueError(f"parameter shapes {w.shape}/{b.shape} do not match {spec}")

    def copy(self) -> "Network":
        return replace(
            self,
            specs=list(self.specs),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def param_layer_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.specs) if s.kind in PARAMETERIZED_KINDS]


def _glorot_uniform(rng: np.random.Generator, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def build_fcdnn(
    n_hidden: int,
    n_inputs: int = 1353,
    n_outputs: int = 61,
    seed: int = 0,
    dtype=np.float32,
) -> Network:
    """Four sigmoid hidden layers of n_hidden units plus a softmax output layer."""
    if n_hidden < 1 or n_inputs < 1 or n_outputs < 1:
        raise ValueError("all dimensions must be >= 1")
    dtype = np.dtype(dtype)
    rng = np.random.Generator(np.random.PCG64(seed))
    dims = [n_inputs] + [n_hidden] * 4 + [n_outputs]
    specs: list[LayerSpec] = []
    weights, biases = [], []
    for i in range(5):
        specs.append(LayerSpec("fully_connected", in_dim=dims[i], out_dim=dims[i + 1]))
        specs.append(LayerSpec("sigmoid") if i < 4 else LayerSpec("softmax"))
        weights.append(_glorot_uniform(rng, (dims[i], dims[i + 1]), dims[i], dims[i + 1], dtype))
        biases.append(np.zeros(dims[i + 1], dtype=dtype))
    return Network(specs, weights, biases, (n_inputs,), n_outputs, seed, dtype)


def build_cnn(
    maps: tuple[int, int, int],
    input_shape: tuple[int, int, int] = (3, 32, 32),
    fc_units: int = 64,
    n_outputs: int = 10,
    seed: int = 0,
    dtype=np.float32,
) -> Network:
    """Three conv(5x5, same padding)+relu+maxpool stages, then fc+relu, fc+softmax.

    Same padding keeps each conv output at its input's spatial size, so the
    spatial dims are halved only by the pools (32 -> 16 -> 8 -> 4 by default).
    """
    m1, m2, m3 = maps
    if min(m1, m2, m3) < 1:
        raise ValueError("feature map counts must be >= 1")
    in_ch, h, w = input_shape
    if h % 8 != 0 or w % 8 != 0:
        raise ValueError("input spatial dims must be divisible by 8 (three 2x2 pools)")
    dtype = np.dtype(dtype)
    rng = np.random.Generator(np.random.PCG64(seed))
    specs: list[LayerSpec] = []
    weights, biases = [], []
    chans = [in_ch, m1, m2, m3]
    for i in range(3):
        specs += [
            LayerSpec("conv2d", in_channels=chans[i], out_channels=chans[i + 1]),
            LayerSpec("relu"),
            LayerSpec("maxpool2x2"),
        ]
        k2 = CONV_KERNEL * CONV_KERNEL
        fan_in, fan_out = chans[i] * k2, chans[i + 1] * k2
        weights.append(
            _glorot_uniform(
                rng, (chans[i + 1], chans[i], CONV_KERNEL, CONV_KERNEL), fan_in, fan_out, dtype
            )
        )
        biases.append(np.zeros(chans[i + 1], dtype=dtype))
    flat = m3 * (h // 8) * (w // 8)
    for in_dim, out_dim, act in ((flat, fc_units, "relu"), (fc_units, n_outputs, "softmax")):
        specs += [LayerSpec("fully_connected", in_dim=in_dim, out_dim=out_dim), LayerSpec(act)]
        weights.append(_glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim, dtype))
        biases.append(np.zeros(out_dim, dtype=dtype))
    return Network(specs, weights, biases, tuple(input_shape), n_outputs, seed, dtype)


def build_network(size: SizeConfig, n_inputs: int, n_outputs: int, seed: int,
                  input_shape: tuple[int, ...] | None = None, dtype=np.float32) -> Network:
    """Build either family from a SizeConfig and dataset dimensions."""
    if size.family == "fcdnn":
        return build_fcdnn(size.fcdnn_hidden, n_inputs, n_outputs, seed, dtype)
    shape = input_shape if input_shape is not None else (3, 32, 32)
    return build_cnn(size.cnn_maps, shape, n_outputs=n_outputs, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C*K*K, H*W) patches of the same-padded 5x5 window,
    assembled by 25 contiguous slice copies (fast on CPU)."""
    n, c, h, w = x.shape
    p = CONV_KERNEL // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, CONV_KERNEL, CONV_KERNEL, h, w), dtype=x.dtype)
    for u in range(CONV_KERNEL):
        for v in range(CONV_KERNEL):
            cols[:, :, u, v] = xp[:, :, u:u + h, v:v + w]
    return cols.reshape(n, c * CONV_KERNEL * CONV_KERNEL, h * w)


def _col2im(dcols: np.ndarray, x_shape) -> np.ndarray:
    """Scatter-add the adjoint of _im2col back onto the padded input."""
    n, c, h, w = x_shape
    p = CONV_KERNEL // 2
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    dc = dcols.reshape(n, c, CONV_KERNEL, CONV_KERNEL, h, w)
    for u in range(CONV_KERNEL):
        for v in range(CONV_KERNEL):
            dxp[:, :, u:u + h, v:v + w] += dc[:, :, u, v]
    return dxp[:, :, p:p + h, p:p + w]


def _conv_forward(x, w, b):
    n, _, h, wd = x.shape
    cols = _im2col(x)
    wmat = w.reshape(w.shape[0], -1)  # (out_ch, C*K*K)
    out = np.matmul(wmat, cols)  # (N, out_ch, H*W)
    out += b[:, None]
    return out.reshape(n, w.shape[0], h, wd), cols


def _conv_backward(dout, cols, x_shape, w):
    n = x_shape[0]
    out_ch = w.shape[0]
    dout2 = dout.reshape(n, out_ch, -1)
    dw = np.matmul(dout2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dout2.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(out_ch, -1).T, dout2)  # (N, C*K*K, H*W)
    dx = _col2im(dcols, x_shape)
    return dx, dw, db


def _maxpool_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool2x2 needs even spatial dims")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)  # first max wins: deterministic under ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(dout, idx, x_shape):
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return dx


def _check_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=net.dtype)
    if batch.ndim < 2 or batch.shape[1:] != net.input_shape:
        raise ValueError(
            f"batch shape {batch.shape[1:]} does not match network input {net.input_shape}"
        )
    return batch


def _forward(net: Network, batch: np.ndarray):
    """Returns (activations, caches); activations[-1] are output probabilities."""
    x = _check_batch(net, batch)
    acts = [x]
    caches = []
    p = 0
    for spec in net.specs:
        if spec.kind == "fully_connected":
            x2 = x.reshape(x.shape[0], -1)
            x = x2 @ net.weights[p] + net.biases[p]
            caches.append(("fc", x2, p))
            p += 1
        elif spec.kind == "conv2d":
            x, cols = _conv_forward(x, net.weights[p], net.biases[p])
            caches.append(("conv", cols, acts[-1].shape, p))
            p += 1
        elif spec.kind == "maxpool2x2":
            x, idx = _maxpool_forward(x)
            caches.append(("pool", idx, acts[-1].shape))
        elif spec.kind == "relu":
            x = np.maximum(x, 0)
            caches.append(("relu",))
        elif spec.kind == "sigmoid":
            x = _sigmoid(x)
            caches.append(("sigmoid",))
        elif spec.kind == "softmax":
            caches.append(("softmax", x))  # cache logits for the fused CE gradient
            x = _softmax(x)
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
        acts.append(x)
    return acts, caches


def forward(net: Network, batch: np.ndarray) -> list[np.ndarray]:
    """Per-layer activations; the last entry holds the output probabilities."""
    acts, _ = _forward(net, batch)
    return acts


def loss_and_gradients(net: Network, batch: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and gradients per weight/bias tensor."""
    if net.specs[-1].kind != "softmax":
        raise ValueError("cross-entropy loss requires a softmax output layer")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != np.asarray(batch).shape[0]:
        raise ValueError("labels must be a vector with one entry per sample")
    if labels.min() < 0 or labels.max() >= net.n_outputs:
        raise ValueError(f"labels must lie in [0, {net.n_outputs})")
    acts, caches = _forward(net, batch)
    n = labels.shape[0]

    logits = caches[-1][1].astype(np.float64)
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    loss = float(np.mean(lse - logits[np.arange(n), labels]))

    grad = acts[-1].copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    grad = grad.astype(net.dtype)

    gw = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    for i in range(len(net.specs) - 2, -1, -1):  # softmax+CE already folded into grad
        cache = caches[i]
        kind = cache[0]
        if kind == "fc":
            _, x2, p = cache
            gw[p] = x2.T @ grad
            gb[p] = grad.sum(axis=0)
            grad = (grad @ net.weights[p].T).reshape(acts[i].shape)
        elif kind == "conv":
            _, cols, x_shape, p = cache
            grad, gw[p], gb[p] = _conv_backward(grad, cols, x_shape, net.weights[p])
        elif kind == "pool":
            grad = _maxpool_backward(grad, cache[1], cache[2])
        elif kind == "relu":
            grad = grad * (acts[i + 1] > 0)
        elif kind == "sigmoid":
            a = acts[i + 1]
            grad = grad * a * (1.0 - a)
        else:  # pragma: no cover - softmax is always last
            raise AssertionError("unexpected cache below the softmax layer")
    return loss, gw, gb


def sgd_update(net: Network, grads_w, grads_b, lr: float) -> Network:
    """In-place p <- p - lr * g on every parameter tensor."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for w, g in zip(net.weights, grads_w):
        if w.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        w -= np.asarray(lr * g, dtype=w.dtype)
    for b, g in zip(net.biases, grads_b):
        if b.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        b -= np.asarray(lr * g, dtype=b.dtype)
    return net


def count_parameters(net: Network) -> int:
    return int(sum(w.size for w in net.weights) + sum(b.size for b in net.biases))


def fcdnn_param_formula(n_hidden: float, n_inputs: int = 1353, n_outputs: int = 61) -> float:
    """Closed-form parameter count of the four-hidden-layer family; exact at
    integer widths and a smooth interpolant at fractional ones."""
    n = float(n_hidden)
    return (n_inputs * n + n) + 3 * (n * n + n) + (n_outputs * n + n_outputs)


def cnn_param_formula(last_maps: float, input_shape=(3, 32, 32), fc_units: int = 64,
                      n_outputs: int = 10) -> float:
    """Closed-form count for the (s/2, s/2, s) feature-map pattern of the sweep."""
    s = float(last_maps)
    k2 = CONV_KERNEL * CONV_KERNEL
    in_ch, h, w = input_shape
    half = s / 2.0
    conv = (in_ch * k2 * half + half) + (half * k2 * half + half) + (half * k2 * s + s)
    flat = s * (h // 8) * (w // 8)
    return conv + (flat * fc_units + fc_units) + (fc_units * n_outputs + n_outputs)


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def _batches(n_samples: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n_samples)
    for start in range(0, n_samples, batch_size):
        yield order[start:start + batch_size]


def evaluate(net: Network, dataset, batch_size: int = 256) -> float:
    """Fraction of samples whose argmax prediction (ties -> lowest class index)
    differs from the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    wrong = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.features[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        probs = _forward(net, x)[0][-1]
        wrong += int(np.count_nonzero(probs.argmax(axis=1) != y))
    return wrong / len(dataset)


class _StallSchedule:
    """Two-phase schedule: constant lr until early_stop_patience consecutive
    non-improving epochs, then decay the lr every epoch and stop at the first
    epoch of the decay phase that fails to improve the best error."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = cfg.learning_rate
        self.best_err = np.inf
        self.stall = 0
        self.decaying = False

    def update(self, err: float) -> tuple[bool, bool]:
        """Returns (improved, stop)."""
        improved = err < self.best_err
        if improved:
            self.best_err = err
            self.stall = 0
        else:
            self.stall += 1
        if self.decaying:
            if not improved:
                return improved, True
            self.lr *= self.cfg.lr_decay
        elif self.stall >= self.cfg.early_stop_patience:
            self.decaying = True
            self.lr *= self.cfg.lr_decay
        return improved, False


def train(net: Network, train_set, valid_set, cfg: TrainConfig):
    """Minibatch SGD with per-epoch validation; returns the parameters from the
    best validation epoch (not the last) and the per-epoch validation history.

    The learning rate stays constant until validation stalls for
    cfg.early_stop_patience consecutive epochs, then decays by cfg.lr_decay
    per epoch; the run stops at the first non-improving epoch of the decay
    phase (or at cfg.max_epochs).
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ValueError("datasets must be non-empty")
    net = net.copy()
    if cfg.max_epochs == 0:
        return net, []
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([net.seed, _SHUFFLE_SALT])))
    schedule = _StallSchedule(cfg)
    best_params = None
    history: list[float] = []
    for _ in range(cfg.max_epochs):
        for idx in _batches(len(train_set), cfg.batch_size, rng):
            loss, gw, gb = loss_and_gradients(net, train_set.features[idx], train_set.labels[idx])
            sgd_update(net, gw, gb, schedule.lr)
        err = evaluate(net, valid_set)
        history.append(err)
        improved, stop = schedule.update(err)
        if improved:
            best_params = ([w.copy() for w in net.weights], [b.copy() for b in net.biases])
        if stop:
            break
    if best_params is not None:
        net.weights, net.biases = best_params
    return net, history

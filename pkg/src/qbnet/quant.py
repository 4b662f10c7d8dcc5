"""Symmetric weight quantization to 2^n - 1 levels.

An n-bit quantizer has M = 2^n - 1 levels k * delta with integer
k in [-(M-1)/2, (M-1)/2] (ternary for n=2, 7 levels for n=3, ...).  The per
layer step size delta is chosen by grid search to minimize the L2 error
between the float weights and their quantized values.  Two deployment paths
are provided: direct quantization of a trained float network, and retraining
with full-precision shadow ("master") weights where every minibatch runs
forward/backward through the quantized view and the SGD update lands on the
master.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTensorError
from .nn import Network, TrainConfig, _batches, evaluate, loss_and_gradients, sgd_update

STEP_GRID_POINTS = 1000


def levels_for_bits(bits: int) -> int:
    if bits < 2:
        raise ValueError("bit width must be >= 2")
    return 2 ** bits - 1


@dataclass(frozen=True)
class QuantizerSpec:
    """Bit width plus the per-layer step sizes chosen for one network."""

    bits: int
    step_sizes: tuple[float, ...]

    def __post_init__(self):
        levels_for_bits(self.bits)
        if any(d <= 0 for d in self.step_sizes):
            raise ValueError("all step sizes must be positive")

    @property
    def levels(self) -> int:
        return levels_for_bits(self.bits)


def quantize_tensor(w: np.ndarray, delta: float, m: int) -> np.ndarray:
    """delta * clip(round-half-away-from-zero(w / delta), +-(m-1)/2), elementwise."""
    if delta <= 0:
        raise ValueError("step size must be positive")
    if m < 3 or m % 2 == 0:
        raise ValueError("level count must be odd and >= 3")
    w = np.asarray(w)
    k_max = (m - 1) // 2
    t = w.astype(np.float64) / delta
    k = np.sign(t) * np.floor(np.abs(t) + 0.5)
    np.clip(k, -k_max, k_max, out=k)
    return (delta * k).astype(w.dtype)


def level_indices(w_quantized: np.ndarray, delta: float) -> np.ndarray:
    """Recover the integer level index k of each already-quantized weight."""
    k = np.rint(w_quantized.astype(np.float64) / delta)
    return k.astype(np.int32)


def _snap_significand(delta: float, m: int, significand_bits: int) -> float:
    """Round delta so that delta * k is exactly representable in the weights'
    storage precision for every level index |k| <= (m-1)/2.

    Reserving bit_length(k_max) significand bits for the index (none when
    k_max is 1) keeps quantized weights exactly on the grid in storage, which
    makes re-quantizing an already-quantized layer a bit-exact identity.  The
    perturbation is at most 2^-budget relative, orders of magnitude below the
    search grid's spacing.
    """
    k_max = (m - 1) // 2
    budget = significand_bits - (k_max.bit_length() if k_max > 1 else 0)
    mantissa, exponent = np.frexp(delta)
    scale = float(2 ** budget)
    return float(np.ldexp(np.rint(mantissa * scale) / scale, exponent))


def optimize_step_size(w: np.ndarray, m: int, grid_points: int = STEP_GRID_POINTS) -> float:
    """Step size minimizing sum((w - Q(w))^2) over a uniform grid of candidates
    in (0, 2*max|w| / ((m-1)/2)].

    The squared error is evaluated exactly for every candidate, but through
    bucketed prefix sums over sorted |w| instead of re-quantizing the tensor
    1000 times: with bin j holding the values that round to level j,
    SSE(delta) = sum(w^2) - 2*delta*sum_j(j*S1_j) + delta^2*sum_j(j^2*N_j).
    The winning candidate is snapped to the significand budget that makes
    quantized float32 weights sit exactly on the grid.
    """
    if m < 3 or m % 2 == 0:
        raise ValueError("level count must be odd and >= 3")
    w = np.asarray(w)
    significand_bits = (np.finfo(w.dtype).nmant + 1) if np.issubdtype(w.dtype, np.floating) else 53
    a = np.sort(np.abs(w.astype(np.float64)).ravel())
    if a.size == 0 or a[-1] == 0.0:
        raise DegenerateTensorError("all-zero tensor has no defined step size")
    k_max = (m - 1) // 2
    deltas = (2.0 * a[-1] / k_max) * (np.arange(1, grid_points + 1) / grid_points)

    p1 = np.concatenate(([0.0], np.cumsum(a)))
    total_sq = float(a @ a)
    n = a.size

    js = np.arange(1, k_max + 1, dtype=np.float64)
    # bin j of candidate g starts at |w| = deltas[g] * (j - 0.5)
    bounds = deltas[:, None] * (js - 0.5)
    starts = np.searchsorted(a, bounds, side="left")
    ends = np.concatenate((starts[:, 1:], np.full((grid_points, 1), n, dtype=starts.dtype)), axis=1)
    s1 = p1[ends] - p1[starts]
    cnt = (ends - starts).astype(np.float64)
    lin = (js * s1).sum(axis=1)
    quad = (js * js * cnt).sum(axis=1)
    sse = total_sq - 2.0 * deltas * lin + deltas * deltas * quad
    return _snap_significand(float(deltas[int(np.argmin(sse))]), m, significand_bits)


def _layer_step_sizes(net: Network, m: int, substitute_degenerate: bool) -> list[float]:
    deltas = []
    for w in net.weights:
        try:
            deltas.append(optimize_step_size(w, m))
        except DegenerateTensorError:
            if not substitute_degenerate:
                raise
            deltas.append(1.0)
    return deltas


def _quantize_network(net: Network, deltas, m: int) -> Network:
    qnet = net.copy()
    qnet.weights = [quantize_tensor(w, d, m) for w, d in zip(net.weights, deltas)]
    return qnet


def direct_quantize(net: Network, bits: int) -> tuple[Network, QuantizerSpec]:
    """Quantize every parameterized layer's weights in place of training.

    Each layer gets its own L2-optimal step size; biases stay full precision.
    """
    m = levels_for_bits(bits)
    deltas = _layer_step_sizes(net, m, substitute_degenerate=False)
    return _quantize_network(net, deltas, m), QuantizerSpec(bits, tuple(deltas))


@dataclass
class ShadowState:
    """Retraining state: a full-precision master plus its quantized view."""

    master: Network
    bits: int
    step_sizes: list[float]

    def quantized_view(self) -> Network:
        return _quantize_network(self.master, self.step_sizes, levels_for_bits(self.bits))


def retrain(net: Network, bits: int, train_set, valid_set, cfg: TrainConfig):
    """Quantization-aware retraining with shadow weights.

    Every minibatch: quantize the master, run forward/backward through the
    quantized view, and apply the SGD update to the master.  Step sizes are
    re-optimized from the master once per epoch.  Returns the quantized
    network from the best validation epoch, its quantizer spec, and the
    validation history.  With max_epochs=0 this degenerates to direct
    quantization.
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ValueError("datasets must be non-empty")
    m = levels_for_bits(bits)
    state = ShadowState(net.copy(), bits, _layer_step_sizes(net, m, substitute_degenerate=False))
    from .nn import _SHUFFLE_SALT, _StallSchedule  # same schedule as float training

    best = (np.inf, state.master.copy(), list(state.step_sizes))
    history: list[float] = []
    if cfg.max_epochs > 0:
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([net.seed, _SHUFFLE_SALT]))
        )
        schedule = _StallSchedule(cfg)
        for epoch in range(cfg.max_epochs):
            if epoch > 0:
                state.step_sizes = _layer_step_sizes(state.master, m, substitute_degenerate=True)
            for idx in _batches(len(train_set), cfg.batch_size, rng):
                qview = state.quantized_view()
                _, gw, gb = loss_and_gradients(
                    qview, train_set.features[idx], train_set.labels[idx]
                )
                sgd_update(state.master, gw, gb, schedule.lr)
            err = evaluate(state.quantized_view(), valid_set)
            history.append(err)
            improved, stop = schedule.update(err)
            if improved:
                best = (err, state.master.copy(), list(state.step_sizes))
            if stop:
                break
    _, master, deltas = best
    qnet = _quantize_network(master, deltas, m)
    return qnet, QuantizerSpec(bits, tuple(deltas)), history

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbnet import nn
from qbnet.errors import DegenerateTensorError
from qbnet.quant import (QuantizerSpec, ShadowState, direct_quantize, levels_for_bits,
                         optimize_step_size, quantize_tensor, retrain)

finite_floats = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False, width=64)
tensors = st.lists(finite_floats, min_size=1, max_size=64).map(np.array)
deltas = st.floats(min_value=1e-3, max_value=10.0, allow_nan=False)
level_counts = st.integers(min_value=1, max_value=8).map(lambda k: 2 * k + 1)


def brute_force_step_size(w, m, grid=1000):
    """Independent step-size search: re-quantize at every candidate."""
    a = np.abs(np.asarray(w, dtype=np.float64)).ravel()
    k_max = (m - 1) // 2
    candidates = (2.0 * a.max() / k_max) * (np.arange(1, grid + 1) / grid)
    best, best_delta = np.inf, None
    for d in candidates:
        k = np.minimum(np.floor(a / d + 0.5), k_max)
        r = a - d * k
        sse = float(r @ r)
        if sse < best:
            best, best_delta = sse, d
    return best_delta


class TestQuantizeTensor:
    def test_spec_example_ternary(self):
        out = quantize_tensor(np.array([0.5, -0.2, 0.05]), 0.4, 3)
        assert np.allclose(out, [0.4, -0.4, 0.0])

    def test_spec_example_clipping(self):
        assert quantize_tensor(np.array([0.94]), 0.1, 7)[0] == pytest.approx(0.3)

    def test_zeros_fixed_point(self):
        for delta, m in ((0.1, 3), (2.0, 7), (0.33, 15)):
            assert not quantize_tensor(np.zeros(10), delta, m).any()

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            quantize_tensor(np.ones(3), 0.0, 3)
        with pytest.raises(ValueError):
            quantize_tensor(np.ones(3), 0.5, 4)

    @given(tensors, deltas, level_counts)
    @settings(max_examples=200, deadline=None)
    def test_idempotence(self, w, delta, m):
        once = quantize_tensor(w, delta, m)
        assert np.array_equal(quantize_tensor(once, delta, m), once)

    @given(tensors, deltas, level_counts)
    @settings(max_examples=200, deadline=None)
    def test_odd_symmetry(self, w, delta, m):
        assert np.array_equal(quantize_tensor(-w, delta, m), -quantize_tensor(w, delta, m))

    @given(tensors, deltas, level_counts)
    @settings(max_examples=200, deadline=None)
    def test_level_cardinality_and_grid(self, w, delta, m):
        q = quantize_tensor(w, delta, m)
        assert len(np.unique(q)) <= m
        k = q.astype(np.float64) / delta
        assert np.all(np.abs(k - np.rint(k)) < 1e-9)
        assert np.abs(np.rint(k)).max() <= (m - 1) // 2

    @given(tensors, deltas, level_counts)
    @settings(max_examples=200, deadline=None)
    def test_monotonicity(self, w, delta, m):
        order = np.argsort(w, kind="stable")
        q = quantize_tensor(w, delta, m)
        assert np.all(np.diff(q[order]) >= 0)


class TestOptimizeStepSize:
    def test_symmetric_pair_exact(self):
        w = np.array([0.7, -0.7] * 8)
        delta = optimize_step_size(w, 3)
        assert delta == pytest.approx(0.7)
        assert np.array_equal(quantize_tensor(w, delta, 3), w)

    def test_single_point(self):
        assert optimize_step_size(np.array([1.0]), 3) == pytest.approx(1.0)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(123)
        w = rng.standard_normal(1000)
        mine = optimize_step_size(w, 3)
        oracle = brute_force_step_size(w, 3, grid=100_000)
        coarse_spacing = 2.0 * np.abs(w).max() / 1 / 1000
        assert abs(mine - oracle) <= coarse_spacing

    def test_all_zero_signals_degenerate(self):
        with pytest.raises(DegenerateTensorError):
            optimize_step_size(np.zeros(5), 3)

    def test_own_grid_optimality(self):
        rng = np.random.default_rng(7)
        for m in (3, 7, 31):
            w = rng.standard_normal(rng.integers(10, 400)) * rng.uniform(0.2, 4.0)
            best = optimize_step_size(w, m)
            k_max = (m - 1) // 2
            grid = (2.0 * np.abs(w).max() / k_max) * (np.arange(1, 1001) / 1000)

            def sse(d):
                r = w - quantize_tensor(w, d, m)
                return float(r @ r)

            best_sse = sse(best)
            assert all(best_sse <= sse(d) + 1e-15 for d in grid)


class TestDirectQuantize:
    def test_ternary_three_values_per_layer(self, trained_small_net):
        qnet, spec = direct_quantize(trained_small_net, 2)
        assert spec.levels == 3
        for w, d in zip(qnet.weights, spec.step_sizes):
            values = np.unique(w)
            assert len(values) <= 3
            assert set(np.rint(values / d).astype(int)) <= {-1, 0, 1}

    def test_idempotence_on_fixture(self, trained_small_net):
        q1, spec1 = direct_quantize(trained_small_net, 3)
        q2, spec2 = direct_quantize(q1, 3)
        assert spec1.step_sizes == pytest.approx(spec2.step_sizes)
        for a, b in zip(q1.weights, q2.weights):
            assert np.array_equal(a, b)

    def test_biases_untouched(self, trained_small_net):
        qnet, _ = direct_quantize(trained_small_net, 2)
        for qb, fb in zip(qnet.biases, trained_small_net.biases):
            assert np.array_equal(qb, fb)

    def test_high_bits_small_output_deviation(self, trained_small_net, overfit_frames):
        qnet, spec = direct_quantize(trained_small_net, 12)
        for w, qw, d in zip(trained_small_net.weights, qnet.weights, spec.step_sizes):
            assert np.abs(w - qw).max() <= d / 2 + 1e-7
        probs_f = nn.forward(trained_small_net, overfit_frames.features)[-1]
        probs_q = nn.forward(qnet, overfit_frames.features)[-1]
        assert np.abs(probs_f - probs_q).max() < 1e-2

    def test_bits_below_two_rejected(self, trained_small_net):
        with pytest.raises(ValueError):
            direct_quantize(trained_small_net, 1)


class TestRetrain:
    def test_zero_epochs_equals_direct(self, trained_small_net, overfit_frames):
        cfg = nn.TrainConfig(max_epochs=0)
        qnet, spec, history = retrain(trained_small_net, 2, overfit_frames, overfit_frames, cfg)
        dnet, dspec = direct_quantize(trained_small_net, 2)
        assert history == []
        assert spec.step_sizes == dspec.step_sizes
        for a, b in zip(qnet.weights, dnet.weights):
            assert np.array_equal(a, b)

    def test_retrain_beats_direct_on_overfit_fixture(self, trained_small_net, overfit_frames):
        cfg = nn.TrainConfig(learning_rate=0.3, batch_size=20, max_epochs=40,
                             early_stop_patience=40, lr_decay=1.0)
        qnet, _, _ = retrain(trained_small_net, 2, overfit_frames, overfit_frames, cfg)
        dnet, _ = direct_quantize(trained_small_net, 2)
        assert nn.evaluate(qnet, overfit_frames) <= nn.evaluate(dnet, overfit_frames)

    def test_output_respects_level_constraint(self, trained_small_net, overfit_frames):
        cfg = nn.TrainConfig(learning_rate=0.3, batch_size=20, max_epochs=5,
                             early_stop_patience=5, lr_decay=1.0)
        for bits in (2, 3):
            qnet, spec, _ = retrain(trained_small_net, bits, overfit_frames, overfit_frames, cfg)
            k_max = (spec.levels - 1) // 2
            for w, d in zip(qnet.weights, spec.step_sizes):
                values = np.unique(w)
                assert len(values) <= spec.levels
                k = np.rint(values.astype(np.float64) / d).astype(int)
                assert np.abs(k).max() <= k_max
                # symmetric grid about zero
                assert np.allclose(np.sort(values), -np.sort(-values)[::-1])

    def test_shadow_state_view_matches_master(self, trained_small_net):
        _, spec = direct_quantize(trained_small_net, 2)
        state = ShadowState(trained_small_net.copy(), 2, list(spec.step_sizes))
        view = state.quantized_view()
        for vw, mw, d in zip(view.weights, state.master.weights, state.step_sizes):
            assert np.array_equal(vw, quantize_tensor(mw, d, 3))

    def test_deterministic(self, trained_small_net, overfit_frames):
        cfg = nn.TrainConfig(learning_rate=0.3, batch_size=20, max_epochs=4,
                             early_stop_patience=4, lr_decay=1.0)
        a = retrain(trained_small_net, 2, overfit_frames, overfit_frames, cfg)
        b = retrain(trained_small_net, 2, overfit_frames, overfit_frames, cfg)
        assert a[2] == b[2]
        for wa, wb in zip(a[0].weights, b[0].weights):
            assert np.array_equal(wa, wb)


class TestQuantizerSpec:
    def test_levels(self):
        assert levels_for_bits(2) == 3
        assert levels_for_bits(3) == 7
        assert QuantizerSpec(4, (0.1, 0.2)).levels == 15

    def test_validation(self):
        with pytest.raises(ValueError):
            QuantizerSpec(1, (0.1,))
        with pytest.raises(ValueError):
            QuantizerSpec(2, (0.0,))

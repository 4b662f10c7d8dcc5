import numpy as np
import pytest

from qbnet import data, nn


def fd_gradient_check(net, x, y, eps=1e-4, tol=1e-4):
    """Central finite differences vs backprop; returns worst relative error."""
    _, gw, gb = nn.loss_and_gradients(net, x, y)
    worst = 0.0
    for arrs, grads in ((net.weights, gw), (net.biases, gb)):
        for a, g in zip(arrs, grads):
            flat, gf = a.ravel(), np.asarray(g).ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                lp = nn.loss_and_gradients(net, x, y)[0]
                flat[i] = orig - eps
                lm = nn.loss_and_gradients(net, x, y)[0]
                flat[i] = orig
                fd = (lp - lm) / (2 * eps)
                worst = max(worst, abs(fd - gf[i]) / max(abs(fd), abs(gf[i]), 1e-8))
    assert worst < tol, f"worst relative gradient error {worst}"
    return worst


@pytest.fixture(scope="session")
def small_frames():
    """Separable 2-class fixture: 20 samples, 10 features."""
    return data.synth_frames(20, n_features=10, n_classes=2, class_separation=8.0, seed=5)


@pytest.fixture(scope="session")
def overfit_frames():
    """100-sample fixture for quantization retraining comparisons."""
    return data.synth_frames(100, n_features=20, n_classes=4, class_separation=3.0, seed=11)


@pytest.fixture(scope="session")
def trained_small_net(overfit_frames):
    net = nn.build_fcdnn(32, n_inputs=20, n_outputs=4, seed=2)
    cfg = nn.TrainConfig(learning_rate=0.5, batch_size=20, max_epochs=60,
                         early_stop_patience=60, lr_decay=1.0)
    trained, _ = nn.train(net, overfit_frames, overfit_frames, cfg)
    return trained

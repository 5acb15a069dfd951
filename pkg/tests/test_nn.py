import math

import numpy as np
import pytest

from cyclicfl import nn
from cyclicfl.errors import DivergenceError
from cyclicfl.rng import substream


def random_batch(rng, n, d, classes):
    return nn.Batch(rng.standard_normal((n, d)), rng.integers(0, classes, size=n))


def test_param_count():
    spec = nn.ModelSpec(4, (8,), 3)
    assert spec.param_count == 4 * 8 + 8 + 8 * 3 + 3
    assert nn.ModelSpec(5, (), 2).param_count == 5 * 2 + 2
    assert nn.ModelSpec(3, (4, 5), 2).param_count == (3 * 4 + 4) + (4 * 5 + 5) + (5 * 2 + 2)


def test_spec_validation():
    with pytest.raises(ValueError):
        nn.ModelSpec(0, (), 2)
    with pytest.raises(ValueError):
        nn.ModelSpec(3, (), 1)
    with pytest.raises(ValueError):
        nn.ModelSpec(3, (4, 4, 4), 2)
    with pytest.raises(ValueError):
        nn.ModelSpec(3, (), 2, activation="sigmoid")


def test_init_variance_and_zero_bias():
    # fixed draw: empirical weight variance within 30% of 2/fan_in per layer
    spec = nn.ModelSpec(4, (8,), 3, "relu")
    params = nn.init_params(spec, seed=1)
    for w, b in nn.unpack_params(spec, params):
        target = 2.0 / w.shape[0]
        assert abs(w.var() - target) <= 0.3 * target
        assert np.all(b == 0.0)


def test_init_deterministic():
    spec = nn.ModelSpec(6, (5,), 3, "tanh")
    assert np.array_equal(nn.init_params(spec, 4), nn.init_params(spec, 4))
    assert not np.array_equal(nn.init_params(spec, 4), nn.init_params(spec, 5))


def test_identity_layer_forward():
    # square linear layer with W = I, b = 0 passes features through
    spec = nn.ModelSpec(3, (), 3)
    params = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    batch = nn.Batch(np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]]), np.array([0, 1]))
    logits, hidden = nn.forward(spec, params, batch)
    assert np.array_equal(logits, batch.features)
    assert hidden is batch.features


def test_forward_matches_hand_computation():
    spec = nn.ModelSpec(2, (3,), 2, "tanh")
    rng = substream(11, "test")
    params = rng.standard_normal(spec.param_count)
    x = rng.standard_normal((1, 2))
    layers = nn.unpack_params(spec, params)
    (w0, b0), (w1, b1) = layers
    h = [math.tanh(sum(x[0][i] * w0[i, j] for i in range(2)) + b0[j]) for j in range(3)]
    out = [sum(h[j] * w1[j, k] for j in range(3)) + b1[k] for k in range(2)]
    logits, hidden = nn.forward(spec, params, nn.Batch(x, np.array([0])))
    assert np.allclose(logits[0], out, rtol=0, atol=1e-14)
    assert np.allclose(hidden[0], h, rtol=0, atol=1e-14)


def test_zero_params_loss_is_log_num_classes():
    for classes in (2, 3, 7):
        spec = nn.ModelSpec(4, (5,), classes)
        params = np.zeros(spec.param_count)
        batch = random_batch(substream(0, "b", classes), 9, 4, classes)
        loss, _ = nn.loss_and_grad(spec, params, batch)
        assert abs(loss - math.log(classes)) < 1e-12


def test_softmax_shift_invariance():
    # adding one constant to every output bias leaves loss and grad alone
    spec = nn.ModelSpec(5, (6,), 4)
    rng = substream(3, "shift")
    params = rng.standard_normal(spec.param_count) * 0.5
    shifted = params.copy()
    shifted[-spec.output_dim:] += 7.25
    batch = random_batch(rng, 8, 5, 4)
    loss_a, grad_a = nn.loss_and_grad(spec, params, batch)
    loss_b, grad_b = nn.loss_and_grad(spec, shifted, batch)
    assert abs(loss_a - loss_b) < 1e-12
    assert np.max(np.abs(grad_a - grad_b)) < 1e-12


def test_batch_mean_linearity():
    spec = nn.ModelSpec(4, (6,), 3)
    rng = substream(9, "lin")
    params = rng.standard_normal(spec.param_count) * 0.3
    a = random_batch(rng, 5, 4, 3)
    b = random_batch(rng, 11, 4, 3)
    both = nn.Batch(
        np.vstack([a.features, b.features]), np.concatenate([a.labels, b.labels])
    )
    la = nn.mean_loss(spec, params, a)
    lb = nn.mean_loss(spec, params, b)
    lab = nn.mean_loss(spec, params, both)
    assert abs(lab - (5 * la + 11 * lb) / 16) < 1e-12


@pytest.mark.parametrize("hidden,activation", [((), "relu"), ((7,), "relu"), ((6, 5), "tanh"), ((5,), "tanh")])
def test_grad_matches_finite_difference(hidden, activation):
    spec = nn.ModelSpec(4, hidden, 3, activation)
    rng = substream(17, "fd", len(hidden))
    params = rng.standard_normal(spec.param_count) * 0.6
    batch = random_batch(rng, 6, 4, 3)
    _, grad = nn.loss_and_grad(spec, params, batch)
    fd = nn.fd_gradient(spec, params, batch)
    assert np.max(np.abs(grad - fd)) / (1.0 + np.max(np.abs(grad))) < 1e-4


def test_fd_central_difference_is_tight_on_smooth_model():
    # tiny smooth model: central differences land within ~1e-10 of analytic
    spec = nn.ModelSpec(2, (), 2)
    params = np.array([0.05, -0.02, 0.01, 0.03, 0.0, 0.0])
    batch = nn.Batch(np.array([[0.5, -0.25]]), np.array([1]))
    _, grad = nn.loss_and_grad(spec, params, batch)
    fd = nn.fd_gradient(spec, params, batch)
    assert np.max(np.abs(grad - fd)) < 1e-10


def test_fd_rejects_zero_eps():
    spec = nn.ModelSpec(2, (), 2)
    batch = nn.Batch(np.ones((1, 2)), np.array([0]))
    with pytest.raises(ValueError):
        nn.fd_gradient(spec, np.zeros(spec.param_count), batch, eps=0.0)


def test_loss_and_grad_deterministic():
    spec = nn.ModelSpec(5, (8,), 4)
    rng = substream(2, "det")
    params = rng.standard_normal(spec.param_count)
    batch = random_batch(rng, 12, 5, 4)
    l1, g1 = nn.loss_and_grad(spec, params, batch)
    l2, g2 = nn.loss_and_grad(spec, params, batch)
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_evaluate_accuracy_and_tie_break():
    spec = nn.ModelSpec(3, (), 3)
    # zero params: all logits zero, argmax resolves to class 0
    params = np.zeros(spec.param_count)

    class Probe:
        features = np.eye(3)
        labels = np.array([0, 1, 2])

    acc, loss = nn.evaluate(spec, params, Probe)
    assert acc == pytest.approx(1.0 / 3.0)
    assert loss == pytest.approx(math.log(3.0))


def test_evaluate_matches_manual_argmax():
    spec = nn.ModelSpec(4, (6,), 3)
    rng = substream(21, "eval")
    params = rng.standard_normal(spec.param_count)
    feats = rng.standard_normal((40, 4))
    labels = rng.integers(0, 3, size=40)

    class Probe:
        features = feats

    Probe.labels = labels
    logits, _ = nn.forward(spec, params, nn.Batch(feats, labels))
    expected = float(np.mean(np.argmax(logits, axis=1) == labels))
    acc, _ = nn.evaluate(spec, params, Probe)
    assert acc == expected


def test_dimension_mismatch_raises():
    spec = nn.ModelSpec(4, (), 2)
    batch = nn.Batch(np.ones((2, 3)), np.array([0, 1]))
    with pytest.raises(ValueError):
        nn.forward(spec, np.zeros(spec.param_count), batch)
    with pytest.raises(ValueError):
        nn.unpack_params(spec, np.zeros(spec.param_count + 1))


def test_label_out_of_range_raises():
    spec = nn.ModelSpec(3, (), 2)
    batch = nn.Batch(np.ones((2, 3)), np.array([0, 2]))
    with pytest.raises(ValueError):
        nn.loss_and_grad(spec, np.zeros(spec.param_count), batch)


def test_non_finite_params_raise_divergence():
    spec = nn.ModelSpec(3, (4,), 2)
    params = np.zeros(spec.param_count)
    params[0] = np.nan
    batch = nn.Batch(np.ones((2, 3)), np.array([0, 1]))
    with pytest.raises(DivergenceError):
        nn.loss_and_grad(spec, params, batch)


def test_batch_validation():
    with pytest.raises(ValueError):
        nn.Batch(np.ones((0, 3)), np.array([], dtype=int))
    with pytest.raises(ValueError):
        nn.Batch(np.ones((2, 3)), np.array([0, -1]))
    with pytest.raises(ValueError):
        nn.Batch(np.ones(3), np.array([0]))

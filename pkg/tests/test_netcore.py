import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsecert.netcore import (
    CheckpointError, DegenerateLayerError, Network, ShapeError, empirical_risk, forward,
    forward_batch, load_checkpoint, margin, margins, normalize_layers, output_margins, predict,
    save_checkpoint, threshold_loss, zeros_like,
)
from sparsecert.sparse import reduced_row_norm

from conftest import random_net


def test_network_validation():
    with pytest.raises(ShapeError):
        Network([np.ones((3, 2))])  # K = 0
    with pytest.raises(ShapeError):
        Network([np.ones((3, 2)), np.ones((2, 4))])  # broken chain
    with pytest.raises(ShapeError):
        Network([np.ones((3, 2)), np.ones((1, 3))])  # one class
    with pytest.raises(ShapeError):
        Network([np.full((3, 2), np.nan), np.ones((2, 3))])
    net = Network([np.ones((3, 2)), np.ones((4, 3))])
    assert net.dims == [2, 3, 4] and net.depth == 1 and net.num_params == 18


def test_layers_are_immutable():
    net = Network([np.ones((3, 2)), np.ones((2, 3))])
    with pytest.raises(ValueError):
        net.layers[0][0, 0] = 5.0


def test_forward_zero_weights(rng):
    net = zeros_like(random_net(rng, [4, 5, 3]))
    tr = forward(net, rng.standard_normal(4))
    assert all(np.all(a == 0) for a in tr.activations[1:])
    assert np.all(tr.output == 0)


def test_forward_identity_relu():
    x = np.array([1.5, -2.0, 0.0, 3.0])
    tr = forward(Network([np.eye(4), np.ones((2, 4))]), x)
    np.testing.assert_array_equal(tr.activations[1], np.maximum(x, 0))


def test_forward_matches_hand_rolled_chain(rng):
    dims = [5, 7, 6, 4]
    net = random_net(rng, dims)
    x = rng.standard_normal(5)
    h = x
    for w in net.layers[:-1]:
        h = np.array([max(sum(w[i, j] * h[j] for j in range(len(h))), 0.0) for i in range(w.shape[0])])
    out = np.array([sum(net.layers[-1][i, j] * h[j] for j in range(len(h))) for i in range(4)])
    tr = forward(net, x)
    np.testing.assert_allclose(tr.output, out, rtol=1e-12)
    for k in range(1, 3):
        assert np.all(tr.activations[k] >= 0)
        np.testing.assert_array_equal(tr.activations[k], np.maximum(tr.preactivations[k - 1], 0))


def test_forward_shape_error(rng):
    net = random_net(rng, [3, 4, 2])
    with pytest.raises(ShapeError):
        forward(net, np.ones(4))
    with pytest.raises(ShapeError):
        forward_batch(net, np.ones((2, 4)))


def test_margin_examples():
    assert output_margins([2, 0.5, -1], [0])[0] == 1.5
    assert output_margins([0.3, 0.3, 0.3], [2])[0] == 0.0


def test_margin_brute_force(rng):
    net = random_net(rng, [4, 6, 5])
    X = rng.standard_normal((30, 4))
    y = rng.integers(0, 5, 30)
    out = forward_batch(net, X)[2]
    for i in range(30):
        best = max(out[i, j] for j in range(5) if j != y[i])
        assert margins(net, X, y)[i] == pytest.approx(out[i, y[i]] - best, rel=1e-14)
        assert margin(net, X[i], y[i]) == pytest.approx(out[i, y[i]] - best, rel=1e-14)


def test_threshold_loss_boundary():
    net = Network([np.eye(3), np.array([[2.0, 0, 0], [0.5, 0, 0]])])
    x = np.array([1.0, 0, 0])  # output (2, 0.5), margin 1.5 for y = 0
    assert threshold_loss(net, x, 0, 0.0) == 0
    assert threshold_loss(net, x, 0, 1.5) == 0
    assert threshold_loss(net, x, 0, 1.6) == 1
    with pytest.raises(ValueError):
        threshold_loss(net, x, 0, -0.1)


def test_empirical_risk(rng):
    net = random_net(rng, [3, 5, 3])
    X = rng.standard_normal((50, 3))
    y = rng.integers(0, 3, 50)
    for g in [0.0, 0.5, 2.0]:
        direct = sum(threshold_loss(net, X[i], int(y[i]), g) for i in range(50)) / 50
        assert empirical_risk(net, X, y, g) == direct
    m = margins(net, X, y)
    assert empirical_risk(net, X, y, 0.0) <= empirical_risk(net, X, y, 1.0)
    assert empirical_risk(net, X, y, m.max() + 1) == 1.0
    with pytest.raises(ValueError):
        empirical_risk(net, X[:0], y[:0], 0.1)


def test_normalize_layers(rng):
    net = random_net(rng, [6, 5, 4, 3])
    s_prev = [0, 2, 1]
    normed, scales = normalize_layers(net, s_prev)
    for w, s in zip(normed.layers, s_prev):
        assert abs(reduced_row_norm(w, s) - 1.0) <= 8 * np.finfo(float).eps
    for w0, w1, c in zip(net.layers, normed.layers, scales):
        np.testing.assert_allclose(w1 * c, w0, rtol=1e-15)
    X = rng.standard_normal((100, 6))
    np.testing.assert_array_equal(predict(net, X), predict(normed, X))


def test_normalize_examples(rng):
    w = rng.standard_normal((3, 4))
    w /= reduced_row_norm(w, 0)
    net = Network([w, 5 * w.T])
    normed, scales = normalize_layers(net, [0, 0])
    assert scales[0] == pytest.approx(1.0, abs=1e-15)
    assert scales[1] == pytest.approx(5 * reduced_row_norm(w.T, 0))
    with pytest.raises(DegenerateLayerError):
        normalize_layers(Network([np.zeros((3, 4)), w.T]), [0, 0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_margin_lipschitz_and_homogeneity(seed, c):
    rng = np.random.default_rng(seed)
    h = random_net(rng, [4, 5, 3])
    h2 = Network([w + 0.1 * rng.standard_normal(w.shape) for w in h.layers])
    X = rng.standard_normal((10, 4))
    y = rng.integers(0, 3, 10)
    o1, o2 = forward_batch(h, X)[2], forward_batch(h2, X)[2]
    lhs = np.abs(output_margins(o2, y) - output_margins(o1, y))
    assert np.all(lhs <= 2 * np.abs(o2 - o1).max(axis=1) + 1e-12)
    # loss ordering
    assert np.all((output_margins(o1, y) < 0) <= (output_margins(o1, y) < 0.3))
    scaled = h.scaled([c, 1.0])
    np.testing.assert_allclose(forward_batch(scaled, X)[2], c * o1, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(predict(scaled, X), predict(h, X))


def test_checkpoint_roundtrip(tmp_path, rng):
    net = random_net(rng, [4, 6, 3])
    p = tmp_path / "n.spnet"
    save_checkpoint(net, p)
    data = p.read_bytes()
    assert data[:7] == b"SPNET1\0"
    assert load_checkpoint(p) == net
    save_checkpoint(net, tmp_path / "again.spnet")
    assert (tmp_path / "again.spnet").read_bytes() == data


def test_checkpoint_errors(tmp_path, rng):
    net = random_net(rng, [4, 6, 3])
    p = tmp_path / "n.spnet"
    save_checkpoint(net, p)
    data = p.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXNET1\0" + data[7:])
    with pytest.raises(CheckpointError, match="offset 0"):
        load_checkpoint(tmp_path / "magic")
    (tmp_path / "trunc").write_bytes(data[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "trunc")
    (tmp_path / "tail").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "tail")
    bad = Network([np.ones((3, 2)), np.ones((2, 3))])
    save_checkpoint(bad, tmp_path / "b")
    raw = bytearray((tmp_path / "b").read_bytes())
    raw[11 + 8 + 48 + 4 : 11 + 8 + 48 + 8] = (4).to_bytes(4, "little")  # cols of layer 2 -> 4
    raw = bytes(raw[: 11 + 8 + 48 + 8]) + b"\0" * (2 * 4 * 8)
    (tmp_path / "chain").write_bytes(raw)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "chain")

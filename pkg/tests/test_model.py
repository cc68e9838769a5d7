import mpmath
import numpy as np
import pytest

from gradorth.linalg import NumericError
from gradorth.model import (GradientRecord, LayerSpec, Network, _forward_full, accuracy,
                            all_layer_gradients, conv, conv_layer_gradient, dense,
                            forward, im2col, last_layer_gradient, load_network,
                            mean_loss, one_hot, save_network, softmax_probs, train_sgd)
from gradorth.rng import SplitMix64

from oracles import assert_gradients_close, fd_gradient, span_residual


def _identity_net(d, loss="mse"):
    return Network(layers=[dense(d, d, has_bias=False)], loss=loss,
                   weights=[np.eye(d)])


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        dense(0, 3)
    with pytest.raises(ValueError):
        dense(2, 3, activation="tanh")
    with pytest.raises(ValueError):
        conv(1, 2, 5, 4, 4)  # kernel larger than input
    with pytest.raises(ValueError):
        LayerSpec(kind="pool")


def test_network_validation():
    with pytest.raises(ValueError, match="layer 1"):
        Network(layers=[dense(3, 4), dense(5, 2)], loss="mse")
    with pytest.raises(ValueError, match="final layer"):
        Network(layers=[dense(3, 2, activation="relu")], loss="mse")
    with pytest.raises(ValueError, match="position 0"):
        Network(layers=[dense(4, 4), conv(1, 1, 2, 2, 2)], loss="mse")
    with pytest.raises(ValueError):
        Network(layers=[dense(3, 2)], loss="hinge")


def test_forward_identity_weights_pass_through():
    net = _identity_net(3)
    x = np.array([0.5, -1.0, 2.0])
    logits, reps = forward(net, x)
    assert (logits == x).all()
    assert len(reps) == 1 and (reps[0] == x).all()


def test_forward_hand_example():
    net = Network(layers=[dense(2, 2, has_bias=False)], loss="mse",
                  weights=[np.array([[1.0, 1.0], [0.0, 1.0]])])
    logits, _ = forward(net, [1.0, 2.0])
    assert (logits == np.array([3.0, 2.0])).all()


def test_forward_matches_straight_line_oracle():
    net = Network(layers=[dense(4, 5, "relu"), dense(5, 3)], loss="cross_entropy", seed=6)
    x = np.array(SplitMix64(2).normals(4))
    w0, w1 = net.weights
    hidden = np.maximum(w0 @ np.append(x, 1.0), 0.0)
    expected = w1 @ np.append(hidden, 1.0)
    logits, reps = forward(net, x)
    assert np.abs(logits - expected).max() <= 1e-12
    assert (reps[0] == np.append(x, 1.0)).all()
    assert np.abs(reps[1] - np.append(hidden, 1.0)).max() <= 1e-12


def test_forward_rejects_bad_input():
    net = _identity_net(3)
    with pytest.raises(ValueError):
        forward(net, [1.0, 2.0])
    with pytest.raises(ValueError):
        forward(net, [1.0, np.nan, 0.0])


def test_softmax_symmetry_and_stability():
    assert np.abs(softmax_probs([0.0, 0.0]) - 0.5).max() <= 1e-15
    big = softmax_probs([1000.0, 0.0])
    assert np.isfinite(big).all()
    assert big[0] > 0.999999 and abs(big.sum() - 1.0) <= 1e-12


def test_softmax_matches_high_precision_oracle():
    logits = np.array(SplitMix64(3).normals(5)) * 3.0
    with mpmath.workdps(60):
        exps = [mpmath.exp(mpmath.mpf(repr(float(v)))) for v in logits]
        total = mpmath.fsum(exps)
        expected = np.array([float(e / total) for e in exps])
    assert np.abs(softmax_probs(logits) - expected).max() <= 1e-12


def test_one_hot():
    out = one_hot([2, 0], 3)
    assert (out == np.array([[0, 0, 1], [1, 0, 0]], dtype=float)).all()
    with pytest.raises(ValueError):
        one_hot([3], 3)


def test_last_layer_gradient_zero_when_prediction_matches():
    net = _identity_net(2, loss="mse")
    x = np.array([1.0, -2.0])
    grad = last_layer_gradient(net, x, x)  # theta x = y exactly
    assert (grad == 0.0).all()

    ce = _identity_net(3, loss="cross_entropy")
    x = np.array([0.3, -0.1, 0.4])
    grad = last_layer_gradient(ce, x, softmax_probs(x))  # self-label
    assert np.abs(grad).max() <= 1e-16


def test_last_layer_gradient_outer_product_form():
    net = Network(layers=[dense(2, 2, has_bias=False)], loss="mse",
                  weights=[np.eye(2)])
    grad = last_layer_gradient(net, [1.0, 2.0], [0.0, 0.0])
    # error = x, so gradient = x x^T
    assert (grad == np.array([[1.0, 2.0], [2.0, 4.0]])).all()


def test_cross_entropy_target_must_be_probability_vector():
    net = _identity_net(2, loss="cross_entropy")
    with pytest.raises(ValueError, match="probability"):
        last_layer_gradient(net, [1.0, 2.0], [0.4, 0.4])
    with pytest.raises(ValueError):
        last_layer_gradient(net, [1.0, 2.0], [1.0, 0.0, 0.0])


def test_gradients_match_finite_differences_random_nets():
    rng = np.random.default_rng(0)
    for trial in range(30):
        loss = "mse" if trial % 2 == 0 else "cross_entropy"
        d_in = int(rng.integers(2, 5))
        d_out = int(rng.integers(2, 4))
        net = Network(layers=[dense(d_in, d_out, has_bias=bool(trial % 3))],
                      loss=loss, seed=trial)
        x = rng.normal(size=d_in)
        if loss == "cross_entropy":
            y = one_hot([int(rng.integers(0, d_out))], d_out)[0]
        else:
            y = rng.normal(size=d_out)
        analytic = last_layer_gradient(net, x, y)
        assert_gradients_close(analytic, fd_gradient(net, 0, x, y))


def test_all_layer_gradients_last_entry_matches_closed_form():
    net = Network(layers=[dense(4, 6, "relu"), dense(6, 3)], loss="cross_entropy", seed=1)
    x = np.array(SplitMix64(8).normals(4))
    y = one_hot([1], 3)[0]
    record = all_layer_gradients(net, x, y)
    assert isinstance(record, GradientRecord)
    direct = last_layer_gradient(net, x, y)
    assert np.abs(record.gradients[-1] - direct).max() <= 1e-12
    for grad, w in zip(record.gradients, net.weights):
        assert grad.shape == w.shape


def test_two_layer_identity_chain_rule():
    net = Network(layers=[dense(2, 2, has_bias=False), dense(2, 2, has_bias=False)],
                  loss="mse", seed=5)
    w0, w1 = net.weights
    x = np.array([0.7, -1.3])
    y = np.array([0.2, 0.4])
    err = w1 @ (w0 @ x) - y
    record = all_layer_gradients(net, x, y)
    assert np.abs(record.gradients[1] - np.outer(err, w0 @ x)).max() <= 1e-12
    assert np.abs(record.gradients[0] - np.outer(w1.T @ err, x)).max() <= 1e-12


def test_three_layer_relu_matches_finite_differences():
    rng = np.random.default_rng(2)
    for trial in range(8):
        net = Network(layers=[dense(3, 5, "relu"), dense(5, 4, "relu"), dense(4, 2)],
                      loss="cross_entropy" if trial % 2 else "mse", seed=trial + 10)
        for _ in range(20):  # keep preactivations away from the relu kink
            x = rng.normal(size=3)
            _, _, pre = _forward_full(net, x)
            if min(np.abs(p).min() for p in pre) > 1e-3:
                break
        y = one_hot([trial % 2], 2)[0] if trial % 2 else rng.normal(size=2)
        record = all_layer_gradients(net, x, y)
        for layer in range(3):
            assert_gradients_close(record.gradients[layer], fd_gradient(net, layer, x, y))


def test_batch_gradient_span_property():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(2, 9))
        net = Network(layers=[dense(6, 3, has_bias=False)], loss="mse", seed=0)
        xs = rng.normal(size=(n, 6))
        ys = rng.normal(size=(n, 3))
        per_sample = [last_layer_gradient(net, x, y) for x, y in zip(xs, ys)]
        summed = sum(per_sample)
        errs = np.vstack([net.weights[0] @ x - y for x, y in zip(xs, ys)])
        direct = errs.T @ xs  # sum of outer products in one product
        assert np.abs(summed - direct).max() <= 1e-10
        assert span_residual(summed, xs) <= 1e-8


def test_im2col_single_patch():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out = im2col(x, 2)
    assert out.shape == (1, 4)
    assert (out[0] == np.array([1.0, 2.0, 3.0, 4.0])).all()


def test_im2col_enumerates_overlapping_patches():
    x = np.arange(9.0).reshape(1, 3, 3)
    out = im2col(x, 2)
    assert out.shape == (4, 4)
    expected = np.array([
        [0.0, 1.0, 3.0, 4.0],
        [1.0, 2.0, 4.0, 5.0],
        [3.0, 4.0, 6.0, 7.0],
        [4.0, 5.0, 7.0, 8.0],
    ])
    assert (out == expected).all()


def test_im2col_shape_example_and_errors():
    assert im2col(np.zeros((1, 4, 4)), 3).shape == (4, 9)
    with pytest.raises(ValueError):
        im2col(np.zeros((1, 2, 2)), 3)
    with pytest.raises(ValueError):
        im2col(np.zeros((2, 2)), 1)


def test_conv_via_im2col_matches_nested_loop_convolution():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 5, 5))
    kernel = rng.normal(size=(3, 2, 3, 3))  # (out_channels, in_channels, k, k)
    theta = kernel.reshape(3, -1).T  # (in_channels*k*k, out_channels)
    out = im2col(x, 3) @ theta  # (9 positions, 3 channels)
    direct = np.zeros((3, 3, 3))
    for c_o in range(3):
        for i in range(3):
            for j in range(3):
                direct[c_o, i, j] = float((x[:, i:i + 3, j:j + 3] * kernel[c_o]).sum())
    assert np.abs(out.T.reshape(3, 3, 3) - direct).max() <= 1e-12


def test_conv_layer_gradient_shapes_and_trivia():
    x_col = np.random.default_rng(5).normal(size=(4, 8))
    assert (conv_layer_gradient(x_col, np.zeros((4, 3))) == 0.0).all()
    patch = np.random.default_rng(6).normal(size=(1, 8))
    omega = np.array([[2.0, -1.0]])
    out = conv_layer_gradient(patch, omega)
    assert np.abs(out - np.outer(patch[0], omega[0])).max() <= 1e-15
    with pytest.raises(ValueError):
        conv_layer_gradient(np.zeros((4, 8)), np.zeros((5, 3)))


def test_conv_network_gradient_matches_finite_differences():
    net = Network(layers=[conv(2, 2, 3, 5, 5, activation="relu"),
                          dense(2 * 3 * 3, 2)], loss="mse", seed=7)
    rng = np.random.default_rng(8)
    x = rng.normal(size=2 * 5 * 5)
    y = rng.normal(size=2)
    record = all_layer_gradients(net, x, y)
    for layer in range(2):
        assert_gradients_close(record.gradients[layer], fd_gradient(net, layer, x, y))


def test_train_sgd_zero_epochs_freezes_without_change():
    net = Network(layers=[dense(3, 2)], loss="mse", seed=0)
    before = [w.copy() for w in net.weights]
    frozen = train_sgd(net, (np.zeros((4, 3)), np.zeros((4, 2))), epochs=0)
    assert frozen.frozen and not net.frozen
    for w0, w1 in zip(before, frozen.weights):
        assert (w0 == w1).all()


def test_train_sgd_learns_linear_regression():
    xs = np.linspace(-1.0, 1.0, 32).reshape(-1, 1)
    ys = 2.0 * xs
    net = Network(layers=[dense(1, 1, has_bias=False)], loss="mse", seed=0)
    trained = train_sgd(net, (xs, ys), lr=0.5, epochs=200, batch=8, seed=0)
    assert abs(trained.weights[0][0, 0] - 2.0) <= 1e-3


def test_train_sgd_two_blob_accuracy(blob_pipeline):
    train, _, _, trained = blob_pipeline
    assert accuracy(trained, train) >= 0.95
    assert mean_loss(trained, train) < 0.5


def test_train_sgd_is_deterministic():
    data = (np.array(SplitMix64(11).normals(40)).reshape(10, 4),
            one_hot([i % 2 for i in range(10)], 2))
    runs = []
    for _ in range(2):
        net = Network(layers=[dense(4, 2)], loss="cross_entropy", seed=3)
        runs.append(train_sgd(net, data, lr=0.1, epochs=5, batch=4, seed=9).weights)
    for w0, w1 in zip(*runs):
        assert (w0 == w1).all()


def test_train_sgd_rejects_frozen_and_bad_args():
    net = Network(layers=[dense(2, 2)], loss="mse", seed=0).freeze()
    with pytest.raises(ValueError, match="frozen"):
        train_sgd(net, (np.zeros((2, 2)), np.zeros((2, 2))))
    fresh = Network(layers=[dense(2, 2)], loss="mse", seed=0)
    with pytest.raises(ValueError):
        train_sgd(fresh, (np.zeros((2, 2)), np.zeros((2, 2))), batch=0)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_train_sgd_aborts_on_divergence_with_location():
    xs = np.ones((8, 1)) * 10.0
    ys = np.ones((8, 1))
    net = Network(layers=[dense(1, 1, has_bias=False)], loss="mse", seed=0)
    with pytest.raises(NumericError, match="epoch"):
        train_sgd(net, (xs, ys), lr=1e12, epochs=50, batch=4, seed=0)


def test_frozen_network_rejects_weight_mutation():
    net = Network(layers=[dense(2, 2)], loss="mse", seed=0).freeze()
    with pytest.raises(ValueError):
        net.weights[0][0, 0] = 5.0


def test_network_roundtrip_bitwise(tmp_path):
    net = Network(layers=[conv(1, 2, 2, 3, 3, activation="relu"), dense(8, 2)],
                  loss="cross_entropy", seed=4).freeze()
    path = tmp_path / "net.gonet"
    save_network(net, path)
    back = load_network(path)
    assert back.frozen
    assert back.loss == net.loss and back.seed == net.seed
    assert [l for l in back.layers] == [l for l in net.layers]
    for w0, w1 in zip(net.weights, back.weights):
        assert (w0 == w1).all()
    twice = tmp_path / "net2.gonet"
    save_network(back, twice)
    assert path.read_bytes() == twice.read_bytes()

import json
import math

import numpy as np
import pytest

from helpers import finite_difference_errors, random_two_stack_net
from ppba import nn
from ppba.attack import AttackModelSpec, build_attack_model
from ppba.authsys import BaClassifierSpec, build_classifier


def _logit_net(n):
    """Identity dense layer feeding a softmax: outputs softmax(input)."""
    net = nn.NeuralNet(n, [nn.dense(n), nn.SOFTMAX], 0)
    net.layers[0].params["W"] = np.eye(n)
    return net


def test_softmax_uniform_for_equal_logits():
    p = nn.predict(_logit_net(4), np.full(4, 2.5))
    np.testing.assert_allclose(p, np.full((1, 4), 0.25))


def test_softmax_closed_form():
    p = nn.predict(_logit_net(2), np.array([0.0, math.log(3.0)]))
    np.testing.assert_allclose(p, [[0.25, 0.75]], atol=1e-12)


def test_softmax_rows_sum_to_one_and_positive():
    net = build_classifier(BaClassifierSpec(5), 7, seed=1)
    p = nn.predict(net, np.random.default_rng(0).normal(size=(20, 7)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p > 0)


def test_inference_dropout_is_identity():
    outs = []
    for rate in (0.0, 0.3, 0.9):
        net = nn.NeuralNet(3, [nn.dense(4), nn.dropout(rate), nn.dense(2), nn.SOFTMAX], 5)
        outs.append(net.forward(np.ones((2, 3))))
    np.testing.assert_array_equal(outs[0], outs[1])
    np.testing.assert_array_equal(outs[0], outs[2])


def test_predict_requires_softmax_head():
    with pytest.raises(ValueError):
        nn.predict(nn.NeuralNet(2, [nn.dense(2), nn.SIGMOID]), np.zeros(2))


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        _logit_net(3).forward(np.zeros((1, 4)))


def test_net_needs_exactly_one_terminal_head():
    with pytest.raises(ValueError):
        nn.NeuralNet(2, [nn.dense(2)])
    with pytest.raises(ValueError):
        nn.NeuralNet(2, [nn.SOFTMAX, nn.dense(2), nn.SOFTMAX])


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        nn.dropout(1.0)
    with pytest.raises(ValueError):
        nn.dense(0)


def test_mse_perfect_prediction_has_zero_loss_and_gradient():
    net = nn.NeuralNet(3, [nn.dense(2), nn.SIGMOID], 0)
    X = np.random.default_rng(1).normal(size=(4, 3))
    Y = net.forward(X)
    value, grads = nn.loss_and_grad(net, X, Y, "mean_squared_error", training=False)
    assert value == 0.0
    assert all(np.all(g == 0) for layer in grads for g in layer.values())


def test_cross_entropy_of_uniform_prediction_is_log_n():
    n = 6
    value, _ = nn.loss_value(np.full((3, n), 1 / n), np.eye(n)[:3], "cross_entropy")
    assert value == pytest.approx(math.log(n))


@pytest.mark.parametrize("head", ["softmax", "sigmoid"])
@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(head, seed):
    net, X, Y, loss = random_two_stack_net(seed, head)
    errors = finite_difference_errors(net, X, Y, loss, seed=seed)
    assert max(errors.values()) <= 1e-3, errors


def test_batch_norm_inference_has_no_cross_row_leakage():
    net = build_classifier(BaClassifierSpec(3), 4, seed=2)
    X = np.random.default_rng(3).normal(size=(10, 4))
    nn.train(net, X, np.eye(3)[np.arange(10) % 3], nn.TrainConfig(epochs=2, batch_size=4))
    batch = net.forward(X)
    rows = np.vstack([net.forward(x) for x in X])
    np.testing.assert_allclose(batch, rows, rtol=0, atol=1e-14)


def test_dropout_preserves_expectation():
    layer = nn.Dropout(5, 0.1)
    x = np.arange(1.0, 6.0)[None, :]
    rng = np.random.default_rng(0)
    mean = np.mean([layer.forward(x, True, rng) for _ in range(10_000)], axis=0)
    np.testing.assert_allclose(mean, x, rtol=0.01)


def _toy_separable():
    X = np.array([[0, 0], [0, 1], [1, 0], [0.4, 0.3],
                  [2, 2], [2, 3], [3, 2], [2.6, 2.4]], dtype=float)
    Y = np.eye(2)[[0, 0, 0, 0, 1, 1, 1, 1]]
    return X, Y


def test_separable_toy_problem_reaches_full_accuracy():
    X, Y = _toy_separable()
    net = nn.NeuralNet(2, [nn.dense(2), nn.SOFTMAX], seed=0)
    hist = nn.train(net, X, Y, nn.TrainConfig(learning_rate=0.01, batch_size=4, epochs=200))
    assert max(hist.accuracy) == 1.0
    _, acc = nn.evaluate(net, X, Y, "cross_entropy")
    assert acc == 1.0


def test_zero_learning_rate_leaves_weights_unchanged():
    X, Y = _toy_separable()
    net = nn.NeuralNet(2, [nn.dense(3), nn.dense(2), nn.SOFTMAX], seed=1)
    before = net.get_weights()
    hist = nn.train(net, X, Y, nn.TrainConfig(learning_rate=0.0, batch_size=8, epochs=5))
    for a, b in zip(before, net.get_weights()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(hist.loss, hist.loss[0], rtol=1e-12)


def test_training_is_deterministic_under_seed():
    X = np.random.default_rng(0).normal(size=(40, 5))
    Y = np.eye(3)[np.arange(40) % 3]
    runs = []
    for _ in range(2):
        net = build_classifier(BaClassifierSpec(3, stack_widths=(8, 8)), 5, seed=4)
        hist = nn.train(net, X, Y, nn.TrainConfig(epochs=4, batch_size=8, seed=9), (X, Y))
        runs.append((hist.to_dict(), net.get_weights()))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        np.testing.assert_array_equal(a, b)


def test_early_stopping_on_plateau():
    X = np.zeros((16, 2))
    Y = np.full((16, 1), 0.5)
    net = nn.NeuralNet(2, [nn.dense(1), nn.SIGMOID], 0)
    cfg = nn.TrainConfig(loss="mean_squared_error", epochs=100, patience=3, min_delta=1e-5)
    hist = nn.train(net, X, Y, cfg, (X, Y))
    assert hist.stopped_early and hist.epochs_run < 100


def test_divergence_reports_epoch():
    X = np.random.default_rng(0).normal(size=(8, 2))
    net = nn.NeuralNet(2, [nn.dense(4), nn.dense(2), nn.SOFTMAX], 0)
    with pytest.raises(nn.TrainingDivergedError) as info, np.errstate(all="ignore"):
        nn.train(net, X, np.eye(2)[[0, 1] * 4],
                 nn.TrainConfig(learning_rate=1e308, batch_size=2, epochs=3))
    assert info.value.epoch == 1


def test_train_config_validation():
    with pytest.raises(ValueError):
        nn.TrainConfig(loss="hinge")
    with pytest.raises(ValueError):
        nn.TrainConfig(batch_size=0)


def test_save_load_round_trip_is_bitwise(tmp_path):
    net = build_classifier(BaClassifierSpec(4), 6, seed=3)
    X = np.random.default_rng(2).normal(size=(12, 6))
    nn.train(net, X, np.eye(4)[np.arange(12) % 4], nn.TrainConfig(epochs=2))
    nn.save(net, tmp_path / "m.json")
    again = nn.load(tmp_path / "m.json")
    np.testing.assert_array_equal(nn.predict(net, X), nn.predict(again, X))
    assert again.train_config["epochs"] == 2


def test_load_truncated_file(tmp_path):
    net = build_classifier(BaClassifierSpec(2), 3)
    nn.save(net, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "m.json").write_text(text[: len(text) // 2])
    with pytest.raises(nn.ModelFileError):
        nn.load(tmp_path / "m.json")


def test_load_rejects_bad_shapes(tmp_path):
    obj = nn.to_dict(build_classifier(BaClassifierSpec(2), 3))
    obj["layers"][0]["state"]["W"] = [[0.0]]
    (tmp_path / "m.json").write_text(json.dumps(obj))
    with pytest.raises(nn.ModelFileError):
        nn.load(tmp_path / "m.json")


def test_loaded_model_with_other_input_dim_fails_at_forward(tmp_path):
    nn.save(build_classifier(BaClassifierSpec(2), 3), tmp_path / "m.json")
    with pytest.raises(ValueError):
        nn.load(tmp_path / "m.json").forward(np.zeros((1, 5)))


@pytest.mark.parametrize("build, total, trainable", [
    (lambda: build_classifier(BaClassifierSpec(68, "plain"), 33), 347_076, 344_516),
    (lambda: build_classifier(BaClassifierSpec(155), 56), 31_323, 30_811),
    (lambda: build_attack_model(AttackModelSpec(30, 33)), 143_009, 141_473),
])
def test_reference_parameter_counts(build, total, trainable):
    assert build().n_params() == (total, trainable)

"""Shared oracles for the test suite."""

import numpy as np

from ppba import nn


def rel_error(a, b, floor=1e-6) -> float:
    """||a - b|| / (||a|| + ||b||) with an absolute floor on the denominator.

    The floor matters for tensors whose true gradient is zero (a dense bias
    feeding batch norm): there both sides are rounding noise.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def finite_difference_errors(net, X, Y, loss, seed=0, h=1e-5):
    """Relative error between backprop and central differences, per tensor.

    Every loss evaluation reseeds the dropout generator, so masks stay fixed
    while parameters are perturbed. Returns {(layer_index, kind, name): error};
    the input gradient is reported under name "input".
    """
    def loss_at():
        out = net.forward(X, training=True, rng=np.random.default_rng(seed))
        return nn.loss_value(out, Y, loss)[0]

    out = net.forward(X, training=True, rng=np.random.default_rng(seed))
    _, grad_out = nn.loss_value(out, Y, loss)
    grad_in = net.backward(grad_out)
    analytic = {(i, layer.kind, name): layer.grads[name].copy()
                for i, layer in enumerate(net.layers) for name in layer.params}

    errors = {}
    for i, layer in enumerate(net.layers):
        for name, p in layer.params.items():
            numeric = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss_at()
                p[idx] = old - h
                down = loss_at()
                p[idx] = old
                numeric[idx] = (up - down) / (2 * h)
            errors[(i, layer.kind, name)] = rel_error(analytic[(i, layer.kind, name)], numeric)

    numeric_in = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        old = X[idx]
        X[idx] = old + h
        up = loss_at()
        X[idx] = old - h
        down = loss_at()
        X[idx] = old
        numeric_in[idx] = (up - down) / (2 * h)
    errors[(-1, "network", "input")] = rel_error(grad_in, numeric_in)
    return errors


def random_two_stack_net(seed, head="softmax"):
    """dense -> BN -> ReLU -> dropout, twice, then dense -> head, random widths."""
    rng = np.random.default_rng(seed)
    d_in = int(rng.integers(3, 7))
    widths = [int(w) for w in rng.integers(3, 7, size=2)]
    d_out = int(rng.integers(2, 5))
    rate = float(rng.uniform(0.1, 0.4))
    specs = []
    for w in widths:
        specs += [nn.dense(w), nn.BATCH_NORM, nn.RELU, nn.dropout(rate)]
    specs += [nn.dense(d_out), nn.SOFTMAX if head == "softmax" else nn.SIGMOID]
    net = nn.NeuralNet(d_in, specs, seed)
    # non-trivial affine parameters so their gradients are exercised
    for layer in net.layers:
        if layer.kind == "batch_norm":
            layer.params["gamma"] = rng.uniform(0.5, 1.5, layer.in_dim)
            layer.params["beta"] = rng.normal(0.0, 0.2, layer.in_dim)
        if layer.kind == "dense":
            layer.params["b"] = rng.normal(0.0, 0.1, layer.out_dim)
    X = rng.normal(size=(8, d_in))
    if head == "softmax":
        Y = np.eye(d_out)[rng.integers(0, d_out, size=8)]
        loss = "cross_entropy"
    else:
        Y = rng.uniform(size=(8, d_out))
        loss = "mean_squared_error"
    return net, X, Y, loss


def identity_classifier(n_classes, gain=10.0):
    """A softmax net whose argmax equals the argmax of its input row."""
    net = nn.NeuralNet(n_classes, [nn.dense(n_classes), nn.SOFTMAX], 0)
    net.layers[0].params["W"] = gain * np.eye(n_classes)
    net.layers[0].params["b"] = np.zeros(n_classes)
    return net

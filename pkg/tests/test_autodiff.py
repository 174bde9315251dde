import hashlib

import numpy as np
import pytest

from filtrank.autodiff import (
    AutodiffError, Graph, LossNotScalar, NonFiniteValue, ShapeMismatch,
    grad_check, load_checkpoint, save_checkpoint,
)

RNG = np.random.default_rng(1234)


def test_relu_forward():
    g = Graph()
    x = g.placeholder("x")
    y = g.relu(x)
    acts = g.forward({"x": np.array([-1.0, 0.0, 2.0], np.float32)})
    assert np.array_equal(acts[y], np.array([0.0, 0.0, 2.0], np.float32))


def test_sq_norm_of_basis_vector():
    g = Graph()
    x = g.placeholder("x")
    y = g.sq_norm(x)
    e = np.zeros(128, np.float32)
    e[17] = 1.0
    assert float(g.forward({"x": e})[y]) == 1.0


def test_identity_convolution():
    g = Graph()
    x = g.placeholder("x")
    w = np.zeros((3, 3, 1, 1), np.float32)
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    wn = g.parameter("w", w)
    bn = g.parameter("b", np.zeros(3, np.float32))
    y = g.conv2d(x, wn, bn, stride=1, pad=0)
    inp = RNG.random((2, 3, 5, 5)).astype(np.float32)
    out = g.forward({"x": inp})[y]
    assert np.allclose(out, inp, atol=1e-6)


def test_backward_of_sq_norm_is_2f():
    g = Graph(np.float64)
    f = g.parameter("f", RNG.standard_normal(16))
    loss = g.sq_norm(f)
    acts = g.forward({})
    grads = g.backward(acts, loss)
    assert np.allclose(grads.params["f"], 2.0 * g.params["f"])


def test_constant_wrt_parameter_gives_zero_gradient():
    g = Graph(np.float64)
    x = g.placeholder("x")
    unused = g.parameter("unused", RNG.standard_normal(4))
    loss = g.sq_norm(x)
    acts = g.forward({"x": RNG.standard_normal(5)})
    grads = g.backward(acts, loss)
    assert np.array_equal(grads.params["unused"], np.zeros(4))


def test_three_layer_net_matches_finite_differences():
    g = Graph(np.float64)
    x = g.placeholder("x")
    w1 = g.parameter("w1", RNG.standard_normal((12, 10)) * 0.5)
    b1 = g.parameter("b1", RNG.standard_normal(10) * 0.1)
    h1 = g.relu(g.fully_connected(x, w1, b1))
    w2 = g.parameter("w2", RNG.standard_normal((10, 6)) * 0.5)
    b2 = g.parameter("b2", RNG.standard_normal(6) * 0.1)
    h2 = g.relu(g.fully_connected(h1, w2, b2))
    w3 = g.parameter("w3", RNG.standard_normal((6, 3)) * 0.5)
    b3 = g.parameter("b3", np.zeros(3))
    loss = g.sq_norm(g.fully_connected(h2, w3, b3))
    err = grad_check(g, {"x": RNG.standard_normal((4, 12))}, loss,
                     n_samples=150, rng=np.random.default_rng(0))
    assert err < 1e-4


def test_linear_layer_grad_error_tiny():
    g = Graph(np.float64)
    x = g.placeholder("x")
    w = g.parameter("w", RNG.standard_normal((8, 5)))
    b = g.parameter("b", RNG.standard_normal(5))
    loss = g.sq_norm(g.fully_connected(x, w, b))
    err = grad_check(g, {"x": RNG.standard_normal((3, 8))}, loss,
                     n_samples=45, rng=np.random.default_rng(1))
    assert err < 1e-7


@pytest.mark.parametrize("op", [
    "conv2d", "maxpool", "relu", "fully_connected", "softmax_xent",
    "sq_norm", "sub", "add", "concat", "spp", "lrn", "scale",
])
def test_each_op_kind_passes_grad_check(op):
    rng = np.random.default_rng(hash(op) % 2**31)
    g = Graph(np.float64)
    x = g.placeholder("x")
    w = g.parameter("w", rng.standard_normal((4, 3, 3, 3)) * 0.4)
    b = g.parameter("b", rng.standard_normal(4) * 0.1)
    base = g.conv2d(x, w, b, stride=1, pad=1)  # (N, 4, 6, 6)
    inputs = {"x": rng.standard_normal((2, 3, 6, 6))}
    if op == "conv2d":
        out = base
    elif op == "maxpool":
        out = g.maxpool(base, 2, 2)
    elif op == "relu":
        out = g.relu(base)
    elif op == "fully_connected":
        w2 = g.parameter("w2", rng.standard_normal((4 * 6 * 6, 7)) * 0.3)
        b2 = g.parameter("b2", np.zeros(7))
        out = g.fully_connected(base, w2, b2)
    elif op == "softmax_xent":
        w2 = g.parameter("w2", rng.standard_normal((4 * 6 * 6, 8)) * 0.3)
        b2 = g.parameter("b2", np.zeros(8))
        logits = g.fully_connected(base, w2, b2)
        labels = g.placeholder("labels")
        inputs["labels"] = np.array([1, 6])
        loss = g.softmax_xent(logits, labels)
        err = grad_check(g, inputs, loss, n_samples=80, rng=rng)
        assert err < 1e-6, err
        return
    elif op == "sq_norm":
        out = base
    elif op == "sub":
        out = g.sub(base, g.relu(base))
    elif op == "add":
        out = g.add(base, g.relu(base))
    elif op == "concat":
        w2 = g.parameter("w2", rng.standard_normal((4 * 6 * 6, 5)) * 0.3)
        b2 = g.parameter("b2", np.zeros(5))
        fc = g.fully_connected(base, w2, b2)
        out = g.concat(fc, g.relu(fc))
    elif op == "spp":
        out = g.spp(base, 3)
    elif op == "lrn":
        out = g.lrn(base, size=3, alpha=1e-2, beta=0.75)
    elif op == "scale":
        out = g.scale(base, -1.7)
    loss = g.sq_norm(out)
    err = grad_check(g, inputs, loss, n_samples=80, rng=rng)
    assert err < 1e-6, f"{op}: {err}"


def test_relu_subgradient_zero_at_kink():
    # at exactly 0 the backward rule uses the 0 subgradient
    g = Graph(np.float64)
    x = g.parameter("x", np.array([0.0, 1.0, -1.0]))
    loss = g.sq_norm(g.relu(x))
    acts = g.forward({})
    grads = g.backward(acts, loss)
    assert grads.params["x"][0] == 0.0
    assert grads.params["x"][1] == 2.0
    assert grads.params["x"][2] == 0.0


def test_spp_output_length_independent_of_input_size():
    g = Graph()
    x = g.placeholder("x")
    s = g.spp(x, 3)
    for side in (7, 13, 20):
        out = g.forward({"x": RNG.random((2, 5, side, side)).astype(np.float32)})[s]
        assert out.shape == (2, 5 * (1 + 4 + 9))


def test_concat_adjoint_splits_exactly():
    g = Graph(np.float64)
    a = g.parameter("a", RNG.standard_normal((3, 4)))
    b = g.parameter("b", RNG.standard_normal((3, 6)))
    loss = g.sq_norm(g.concat(a, b))
    acts = g.forward({})
    grads = g.backward(acts, loss)
    assert grads.params["a"].shape == (3, 4)
    assert grads.params["b"].shape == (3, 6)
    assert np.allclose(grads.params["a"], 2 * g.params["a"])
    assert np.allclose(grads.params["b"], 2 * g.params["b"])


def test_forward_deterministic():
    g = Graph()
    x = g.placeholder("x")
    w = g.parameter("w", RNG.standard_normal((4, 3, 3, 3)).astype(np.float32))
    b = g.parameter("b", np.zeros(4, np.float32))
    y = g.sq_norm(g.lrn(g.maxpool(g.relu(g.conv2d(x, w, b, 1, 1)), 2, 2)))
    inp = {"x": RNG.random((2, 3, 8, 8)).astype(np.float32)}
    v1 = g.forward(inp)[y]
    v2 = g.forward(inp)[y]
    assert np.array_equal(v1, v2)


def test_loss_must_be_scalar():
    g = Graph()
    x = g.placeholder("x")
    y = g.relu(x)
    acts = g.forward({"x": np.ones((2, 3), np.float32)})
    with pytest.raises(LossNotScalar):
        g.backward(acts, y)


def test_nonfinite_input_rejected():
    g = Graph()
    x = g.placeholder("x")
    g.relu(x)
    with pytest.raises(NonFiniteValue):
        g.forward({"x": np.array([1.0, np.nan], np.float32)})


def test_shape_mismatch_raises():
    g = Graph()
    a = g.placeholder("a")
    b = g.placeholder("b")
    s = g.add(a, b)
    with pytest.raises(ShapeMismatch):
        g.forward({"a": np.ones((2, 3), np.float32), "b": np.ones((3, 2), np.float32)})


def test_grad_check_requires_float64():
    g = Graph(np.float32)
    f = g.parameter("f", np.ones(3, np.float32))
    loss = g.sq_norm(f)
    with pytest.raises(AutodiffError):
        grad_check(g, {}, loss)


def test_checkpoint_bit_exact_round_trip(tmp_path):
    tensors = {
        "a/w": RNG.standard_normal((7, 3)).astype(np.float32),
        "a/b": RNG.standard_normal(3),
        "c": np.arange(5, dtype=np.int64),
    }
    meta = {"epoch": 2, "config": {"lr": 0.01}}
    p = tmp_path / "ck.bin"
    save_checkpoint(p, tensors, meta)
    loaded, meta2 = load_checkpoint(p)
    assert meta2 == meta
    for k, v in tensors.items():
        assert loaded[k].dtype == v.dtype
        assert np.array_equal(loaded[k], v)
    # re-saving the loaded tensors reproduces identical bytes
    p2 = tmp_path / "ck2.bin"
    save_checkpoint(p2, loaded, meta2)
    assert hashlib.sha256(p.read_bytes()).digest() == hashlib.sha256(p2.read_bytes()).digest()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(AutodiffError):
        load_checkpoint(p)

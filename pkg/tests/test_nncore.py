import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inrsynth.errors import InvalidArgumentError, NumericError, StateError
from inrsynth.nncore import (BCE_EPS, BatchNorm, Linear, MaxPoolSet, ParamStore, ReLU, Sequential, Sigmoid, Sine,
                             adam_init, adam_step, bce, grad_check, load_ckpt, maxpool_set, mse, save_ckpt,
                             sine_forward, softmax_xent)


def test_sine_zero_weights():
    out = sine_forward(np.array([0.3, -0.7]), np.zeros((4, 2)), np.zeros(4))
    assert np.array_equal(out, np.zeros(4))


def test_sine_scalar_case():
    out = sine_forward(np.array([0.2]), np.array([[0.1]]), np.array([0.0]), omega0=30.0)
    assert out[0] == pytest.approx(0.564642, abs=1e-6)


def test_sine_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        sine_forward(np.ones(3), np.ones((2, 2)), np.zeros(2))


@given(st.integers(0, 2**31))
def test_sine_output_range(seed):
    r = np.random.default_rng(seed)
    out = sine_forward(r.normal(size=(5, 3)), r.normal(size=(4, 3)) * 10, r.normal(size=4))
    assert np.all(np.abs(out) <= 1.0)


def test_bce_values():
    assert bce(1.0, 1.0) == pytest.approx(-math.log(1 - BCE_EPS), rel=1e-12)
    assert bce(0.5, 0.0) == pytest.approx(0.693147, abs=1e-6)
    assert bce(0.5, 1.0) == pytest.approx(0.693147, abs=1e-6)
    assert bce(0.0, 1.0) == pytest.approx(16.1181, abs=1e-4)


@given(st.floats(0, 1), st.sampled_from([0.0, 1.0]))
def test_bce_non_negative(p, y):
    assert bce(p, y) >= 0


def _store(params, buffers=None, mode="train"):
    return ParamStore({k: np.asarray(v, np.float64) for k, v in params.items()}, buffers, mode)


def test_linear_l2_hand_gradient():
    layer = Linear("fc", 2, 2)
    store = _store({"fc.W": [[1.0, 2.0], [3.0, -1.0]], "fc.b": [0.5, -0.5]})
    x = np.array([[2.0, 1.0]])
    y, cache = layer.forward(store, x)
    assert y.tolist() == [[4.5, 4.5]]
    _, grads = layer.backward(store, cache, y - np.array([[1.0, 1.0]]))
    assert grads["fc.W"].tolist() == [[7.0, 3.5], [7.0, 3.5]]
    assert grads["fc.b"].tolist() == [3.5, 3.5]


def test_zero_upstream_gives_zero_grads(rng):
    net = Sequential([Sine("a", 3, 5, first=True), Linear("b", 5, 4), BatchNorm("bn", 4), ReLU(), Linear("c", 4, 2),
                      Sigmoid()])
    store = ParamStore(net.init(rng, np.float64), net.buffers(np.float64))
    y, cache = net.forward(store, rng.normal(size=(6, 3)))
    dx, grads = net.backward(store, cache, np.zeros_like(y))
    assert all(not np.any(g) for g in grads.values())
    assert not np.any(dx)


def test_backward_without_forward():
    with pytest.raises(StateError):
        Linear("a", 2, 2).backward(_store({"a.W": np.eye(2), "a.b": np.zeros(2)}), None, np.ones((1, 2)))


def _seq_loss(net, x, buffers, target=None, mode="train"):
    def fn(params):
        store = ParamStore(params, dict(buffers), mode)
        y, cache = net.forward(store, x)
        t = np.zeros_like(y) if target is None else target
        loss = 0.5 * float(np.sum((y - t) ** 2))
        _, grads = net.backward(store, cache, y - t)
        return loss, grads

    return fn


def _random_net(kind, rng):
    fi, fo = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    if kind == "linear":
        layers = [Linear("l", fi, fo)]
    elif kind == "sine":
        layers = [Sine("s0", fi, fo, first=True), Sine("s1", fo, fo)]
    elif kind == "relu":
        layers = [Linear("l", fi, fo), ReLU(), Linear("m", fo, 2)]
    elif kind == "sigmoid":
        layers = [Linear("l", fi, fo), Sigmoid()]
    elif kind == "batchnorm":
        # squashing first: a bias feeding batch norm directly has an exactly-zero gradient
        layers = [Linear("l", fi, fo), Sigmoid(), BatchNorm("bn", fo), Linear("m", fo, 2)]
    else:
        layers = [Linear("l", fi, fo), ReLU(), MaxPoolSet(), Linear("m", fo, 2)]
    return Sequential(layers), fi


KINDS = ["linear", "sine", "relu", "sigmoid", "batchnorm", "maxpool_set"]


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(20))
def test_layer_grad_check(kind, seed):
    rng = np.random.default_rng(seed)
    net, fi = _random_net(kind, rng)
    params = net.init(rng, np.float64)
    for k in params:
        # perturb in proportion to the init scale; sine layers start with tiny weights
        scale = np.abs(params[k]).max() or 1.0
        params[k] = params[k] + 0.1 * scale * rng.normal(size=params[k].shape)
    shape = (3, int(rng.integers(2, 5)), fi) if kind == "maxpool_set" else (int(rng.integers(2, 7)), fi)
    x = rng.normal(size=shape)
    target = rng.normal(size=net.forward(ParamStore(params, net.buffers(np.float64)), x)[0].shape)
    report = grad_check(_seq_loss(net, x, net.buffers(np.float64), target), params, tol=1e-4)
    assert report.passed, str(report)


def test_batchnorm_eval_grad_check(rng):
    net = Sequential([Linear("l", 3, 4), BatchNorm("bn", 4), Linear("m", 4, 2)])
    params = net.init(rng, np.float64)
    buffers = {"bn.running_mean": rng.normal(size=4), "bn.running_var": rng.uniform(0.5, 2, 4)}
    report = grad_check(_seq_loss(net, rng.normal(size=(5, 3)), buffers, mode="eval"), params, tol=1e-4)
    assert report.passed, str(report)


def test_input_gradient_matches_finite_difference(rng):
    net = Sequential([Sine("s", 3, 4, first=True), Linear("l", 4, 1)])
    store = ParamStore(net.init(rng, np.float64))
    x = rng.uniform(-1, 1, size=(1, 3))
    y, cache = net.forward(store, x)
    dx, _ = net.backward(store, cache, np.ones_like(y))
    h = 1e-6
    for j in range(3):
        e = np.zeros_like(x)
        e[0, j] = h
        num = (net.forward(store, x + e)[0] - net.forward(store, x - e)[0]).item() / (2 * h)
        assert dx[0, j] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_identity_network_tight_tolerance(rng):
    net = Sequential([Linear("id", 3, 3)])
    params = {"id.W": np.eye(3), "id.b": np.zeros(3)}
    report = grad_check(_seq_loss(net, rng.normal(size=(4, 3)), {}, rng.normal(size=(4, 3))), params, tol=1e-6)
    assert report.passed, str(report)


def test_grad_check_flags_corrupted_gradient(rng):
    net = Sequential([Sine("s", 2, 3, first=True), Linear("l", 3, 1)])
    x, target = rng.normal(size=(4, 2)), rng.normal(size=(4, 1))
    good = _seq_loss(net, x, {}, target)

    def corrupted(params):
        loss, grads = good(params)
        return loss, {k: 1.1 * g for k, g in grads.items()}

    params = net.init(rng, np.float64)
    assert grad_check(good, params).passed
    assert not grad_check(corrupted, params).passed


def test_five_point_stencil_on_cubic():
    def fn(p):
        x = p["x"]
        return float(np.sum(x**3)), {"x": 3 * x**2}

    x = np.array([0.5, -2.0, 3.0])
    assert grad_check(fn, {"x": x}, tol=1e-9, step=1e-3, order=4).passed
    assert not grad_check(fn, {"x": x}, tol=1e-9, step=1e-3, order=2).passed
    with pytest.raises(ValueError):
        grad_check(fn, {"x": x}, order=3)


def test_grad_check_non_finite_loss():
    with pytest.raises(NumericError):
        grad_check(lambda p: (float("nan"), {}), {"a": np.ones(1)})


def test_batchnorm_train_statistics(rng):
    bn = BatchNorm("bn", 5)
    store = ParamStore(bn.init(rng, np.float64), bn.buffers(np.float64))
    y, _ = bn.forward(store, 3.0 * rng.normal(size=(256, 5)) + 2.0)
    assert np.all(np.abs(y.mean(axis=0)) < 1e-5)
    assert np.all(np.abs(y.var(axis=0) - 1.0) < 1e-5)


def test_batchnorm_eval_is_deterministic_affine(rng):
    bn = BatchNorm("bn", 3)
    store = ParamStore(bn.init(rng, np.float64), {"bn.running_mean": np.array([1.0, 0.0, -1.0]),
                                                   "bn.running_var": np.array([4.0, 1.0, 0.25])}, "eval")
    x = rng.normal(size=(7, 3))
    y1, _ = bn.forward(store, x)
    y2, _ = bn.forward(store, x[:3])
    assert np.array_equal(y1[:3], y2)
    np.testing.assert_allclose(y1, (x - [1.0, 0.0, -1.0]) / np.sqrt(np.array([4.0, 1.0, 0.25]) + 1e-5))


def test_maxpool_set_cases():
    assert maxpool_set([[1.0, 2.0]]).tolist() == [1.0, 2.0]
    assert maxpool_set([[1.0, 0.0], [0.0, 1.0]]).tolist() == [1.0, 1.0]
    with pytest.raises(InvalidArgumentError):
        maxpool_set(np.zeros((0, 2)))


@given(st.permutations(list(range(6))), st.integers(0, 1000))
def test_maxpool_set_permutation_invariant(perm, seed):
    rows = np.random.default_rng(seed).normal(size=(6, 4))
    assert np.array_equal(maxpool_set(rows), maxpool_set(rows[list(perm)]))


def test_adam_zero_gradient_fixed_point(rng):
    params = {"w": rng.normal(size=(3, 2)).astype(np.float32)}
    state = adam_init(params, lr=1e-3)
    for _ in range(3):
        new, state = adam_step(params, {"w": np.zeros((3, 2), np.float32)}, state)
        assert np.array_equal(new["w"], params["w"])


def test_adam_first_step_magnitude():
    params = {"w": np.array([0.0])}
    new, state = adam_step(params, {"w": np.array([1.0])}, adam_init(params, lr=1e-3))
    # bias-corrected m/sqrt(v) is exactly 1 on the first step
    assert new["w"][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_value_semantics_and_determinism(rng):
    params = {"w": rng.normal(size=4)}
    grads = {"w": rng.normal(size=4)}
    snapshot = params["w"].copy()
    a, sa = adam_step(params, grads, adam_init(params))
    b, sb = adam_step(params, grads, adam_init(params))
    assert np.array_equal(params["w"], snapshot)
    assert np.array_equal(a["w"], b["w"]) and np.array_equal(sa.m["w"], sb.m["w"])


def test_adam_rejects_non_finite():
    params = {"w": np.zeros(2)}
    with pytest.raises(NumericError) as exc:
        adam_step(params, {"w": np.array([np.inf, 0.0])}, adam_init(params))
    assert exc.value.name == "w"


def test_mse_and_softmax_gradients(rng):
    pred, tgt = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    loss, g = mse(pred, tgt)
    assert loss >= 0 and loss == pytest.approx(np.mean((pred - tgt) ** 2))
    logits, labels = rng.normal(size=(5, 3)), rng.integers(0, 3, 5)

    def fn(p):
        loss, g = softmax_xent(p["z"], labels)
        return loss, {"z": g}

    assert grad_check(fn, {"z": logits}).passed


def test_checkpoint_round_trip(tmp_path, rng):
    arrays = {"a.W": rng.normal(size=(3, 2)).astype(np.float32), "scalar": np.float32(2.5),
              "uni/ç": np.arange(4, dtype=np.float32)}
    save_ckpt(tmp_path / "m.ckpt", arrays)
    back = load_ckpt(tmp_path / "m.ckpt")
    assert list(back) == list(arrays)
    for k in arrays:
        assert np.array_equal(back[k], np.asarray(arrays[k]))
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:8] == b"CKPT1\0\0\0"
    (tmp_path / "bad.ckpt").write_bytes(raw[:-3])
    with pytest.raises(Exception, match="truncated"):
        load_ckpt(tmp_path / "bad.ckpt")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_siren_init_bounds(seed):
    rng = np.random.default_rng(seed)
    first = Sine("a", 3, 16, first=True).init(rng)
    hidden = Sine("b", 16, 16).init(rng)
    assert np.abs(first["a.W"]).max() <= 1 / 3
    assert np.abs(hidden["b.W"]).max() <= math.sqrt(6 / 16) / 30

import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from streamnorm.errors import ContractError, ParameterError, UnseenTimestepError
from streamnorm.gradcheck import layer_grads, max_errors, model_grads
from streamnorm.layers import Activation, Conv2D, Dense, Pool, Sequential, SoftmaxLoss, log_softmax
from streamnorm.lpstats import LpConfig
from streamnorm.models import arch_a, arch_b, arch_c, arch_d, parse_layers
from streamnorm.norm import NormConfig, StreamHyper
from streamnorm.partition import preset
from streamnorm.recurrent import CharLM, GRUCell, RecurrentNorm, RNNCell, one_hot, unroll_forward
from streamnorm.tensor import Rng


def reduction_norm(binding_scheme="BN"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return NormConfig("streaming", preset(binding_scheme), LpConfig(2, "A"), StreamHyper.gbn_reduction())


# ---- feedforward layers

def test_dense_identity_weights(rng):
    layer = Dense(4, 4, bias=True)
    layer.params["W"][:] = np.eye(4)
    x = rng.normal(size=(3, 1, 1, 4))
    assert_array_equal(layer.forward(x), x)


def test_dense_flattens_spatial_input(rng):
    layer = Dense(12, 5)
    assert layer.forward(rng.normal(size=(2, 2, 2, 3))).shape == (2, 1, 1, 5)
    with pytest.raises(ContractError):
        layer.forward(rng.normal(size=(2, 1, 1, 3)))


def test_1x1_conv_is_per_position_dense(rng):
    conv = Conv2D(3, 5, kernel=1, rng=Rng(1))
    conv.params["b"][:] = rng.normal(size=5)
    fc = Dense(3, 5)
    fc.params["W"][:] = conv.params["W"][0, 0]
    fc.params["b"][:] = conv.params["b"]
    x = rng.normal(size=(2, 4, 4, 3))
    expected = fc.forward(x.reshape(-1, 1, 1, 3)).reshape(2, 4, 4, 5)
    assert_allclose(conv.forward(x), expected, rtol=1e-13, atol=1e-14)


def test_conv_matches_direct_loop(rng):
    conv = Conv2D(2, 3, kernel=3, stride=2, pad=1, rng=Rng(2))
    x = rng.normal(size=(1, 5, 5, 2))
    y = conv.forward(x)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    W, b = conv.params["W"], conv.params["b"]
    oy, ox = conv.output_hw(5, 5)
    assert y.shape == (1, oy, ox, 3)
    for i in range(oy):
        for j in range(ox):
            patch = xp[0, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            assert_allclose(y[0, i, j], np.einsum("abc,abcd->d", patch, W) + b, rtol=1e-12)


@pytest.mark.parametrize("layer,shape", [
    (Dense(6, 4), (3, 1, 2, 3)),
    (Conv2D(2, 3, 3, rng=Rng(1)), (2, 4, 4, 2)),
    (Conv2D(2, 3, 3, stride=2, rng=Rng(1)), (2, 5, 5, 2)),
    (Conv2D(2, 2, 2, pad=0, rng=Rng(1)), (1, 3, 3, 2)),
    (Pool(2, "max"), (2, 4, 4, 2)),
    (Pool(2, "avg"), (2, 4, 4, 2)),
    (Activation("relu"), (2, 2, 2, 3)),
    (Activation("tanh"), (2, 2, 2, 3)),
    (Activation("sigmoid"), (2, 2, 2, 3)),
])
def test_layer_gradients(layer, shape, rng):
    x = rng.normal(size=shape)
    out = layer.forward(x)
    layer.clear_cache()
    errs = max_errors(layer_grads(layer, x, rng.normal(size=out.shape)))
    assert max(errs.values()) < 1e-5, errs


def test_pool_rejects_indivisible(rng):
    with pytest.raises(ContractError):
        Pool(2).forward(rng.normal(size=(1, 3, 4, 1)))
    with pytest.raises(ParameterError):
        Pool(2, "median")


def test_softmax_loss_value_and_gradient(rng):
    logits = rng.normal(size=(5, 1, 1, 4))
    labels = np.array([0, 3, 1, 1, 2])
    loss = SoftmaxLoss()
    value = loss.forward(logits, labels)
    assert_allclose(value, -log_softmax(logits.reshape(5, 4))[np.arange(5), labels].mean())
    g = loss.backward()
    assert_allclose(g.reshape(5, 4).sum(axis=1), 0.0, atol=1e-15)
    with pytest.raises(ContractError):
        loss.forward(logits, np.array([0, 1, 2, 3, 4]))


def test_backward_without_forward():
    with pytest.raises(ContractError):
        Dense(2, 2).backward(np.zeros((1, 1, 1, 2)))


def test_eval_mode_caches_nothing(rng):
    net = Sequential([Dense(3, 3), Activation("relu")]).eval()
    net.forward(rng.normal(size=(2, 1, 1, 3)))
    assert all(not m._cache for m in net.modules())


# ---- recurrent bindings and cells

def test_store_counts():
    for T in (1, 4, 7):
        ts = RecurrentNorm(NormConfig("batch"), "time_specific")
        sh = RecurrentNorm(reduction_norm(), "shared")
        x = np.random.default_rng(0).normal(size=(4, 1, 1, 3))
        for t in range(T):
            ts.forward(x, t)
            sh.forward(x, t)
        assert ts.store_count == T
        assert sh.store_count == 1


def test_unseen_timestep_in_eval():
    rn = RecurrentNorm(NormConfig("batch"), "time_specific")
    x = np.random.default_rng(0).normal(size=(4, 1, 1, 3))
    for t in range(3):
        rn.forward(x, t)
    rn.eval()
    rn.forward(x, 2)
    with pytest.raises(UnseenTimestepError):
        rn.forward(x, 3)


def test_unknown_binding():
    with pytest.raises(ParameterError):
        RecurrentNorm(NormConfig(), "per_layer")


def test_rnn_zero_weights_give_zero_state():
    cell = RNNCell(3, 4, NormConfig("sample", preset("LN"), LpConfig(2, "C", 1e-5)))
    for m, k in cell.parameters():
        if k == "W":
            m.params[k][:] = 0.0
    hs = unroll_forward(cell, [np.ones((2, 1, 1, 3))] * 3, np.zeros((2, 1, 1, 4)))
    for h in hs:
        assert_array_equal(h, 0.0)


def test_identity_norm_rnn_is_vanilla_rnn(rng):
    cell = RNNCell(3, 4, NormConfig("none"), rng=Rng(5))
    Wx, Wh = cell.x_branch.w.params["W"], cell.h_branch.w.params["W"]
    xs = [rng.normal(size=(2, 1, 1, 3)) for _ in range(4)]
    h = np.zeros((2, 4))
    hs = unroll_forward(cell, xs, np.zeros((2, 1, 1, 4)))
    for x, got in zip(xs, hs):
        h = np.tanh(x.reshape(2, 3) @ Wx + h @ Wh)
        assert np.max(np.abs(got.reshape(2, 4) - h)) < 1e-12


def test_two_step_rnn_matches_hand_unroll(rng):
    """Constant input, identity norm: loss equals a 2-layer feedforward computation."""
    lm = CharLM(3, hidden=4, cell="rnn", norm=NormConfig("none"), rng=Rng(9))
    ids = np.array([[1, 1]])
    targets = np.array([[2, 0]])
    loss = lm.forward_loss((ids, targets))
    Wx, Wh = lm.cell.x_branch.w.params["W"], lm.cell.h_branch.w.params["W"]
    Wo, bo = lm.out.params["W"], lm.out.params["b"]
    x = np.eye(3)[1]
    h1 = np.tanh(x @ Wx)
    h2 = np.tanh(x @ Wx + h1 @ Wh)
    lp1 = log_softmax((h1 @ Wo + bo)[None])[0]
    lp2 = log_softmax((h2 @ Wo + bo)[None])[0]
    assert_allclose(loss, -(lp1[2] + lp2[0]) / 2, rtol=1e-12)


def test_shared_binding_frozen_estimate_is_time_invariant(rng):
    cell = RNNCell(3, 4, reduction_norm(), "shared", rng=Rng(1))
    unroll_forward(cell, [rng.normal(size=(4, 1, 1, 3)) for _ in range(3)], np.zeros((4, 1, 1, 4)))
    cell.eval()
    x, h = rng.normal(size=(4, 1, 1, 3)), rng.normal(size=(4, 1, 1, 4))
    assert_array_equal(cell.step(x, h, 0), cell.step(x, h, 5))


def _gru_with_gate_bias(value, rng):
    cell = GRUCell(3, 4, NormConfig("sample", preset("LN"), LpConfig(2, "A")), rng=Rng(3))
    cell.xz.bg.params["bias"][:] = value
    return cell


def test_gru_update_gate_open(rng):
    cell = _gru_with_gate_bias(50.0, rng)
    x, h = rng.normal(size=(2, 1, 1, 3)), rng.normal(size=(2, 1, 1, 4))
    out = cell.step(x, h)
    h_new = cell._cache[-1][3]
    assert_allclose(out, h_new, atol=1e-12)


def test_gru_update_gate_closed(rng):
    cell = _gru_with_gate_bias(-1000.0, rng)
    x, h = rng.normal(size=(2, 1, 1, 3)), rng.normal(size=(2, 1, 1, 4))
    assert_array_equal(cell.step(x, h), h)


def test_gru_state_is_convex_combination(rng):
    cell = GRUCell(3, 5, NormConfig("batch"), "time_specific", rng=Rng(4))
    h = rng.normal(size=(6, 1, 1, 5))
    for t in range(4):
        out = cell.step(rng.normal(size=(6, 1, 1, 3)), h, t)
        h_new = cell._cache[-1][3]
        lo, hi = np.minimum(h, h_new), np.maximum(h, h_new)
        assert np.all(out >= lo - 1e-15) and np.all(out <= hi + 1e-15)
        h = out


def _lm_batch(rng, n=3, T=3, vocab=5):
    ids = rng.integers(0, vocab, size=(n, T + 1))
    return ids[:, :-1], ids[:, 1:]


@pytest.mark.parametrize("cell", ["rnn", "gru"])
@pytest.mark.parametrize("norm,binding", [
    (NormConfig("batch"), "time_specific"),
    (NormConfig("batch"), "shared"),
    (NormConfig("sample", preset("LN")), "shared"),
    (None, "time_specific"),
])
def test_recurrent_gradients(cell, norm, binding, rng):
    norm = norm if norm is not None else reduction_norm()
    lm = CharLM(5, hidden=4, cell=cell, norm=norm, binding=binding, rng=Rng(7))
    errs = max_errors(model_grads(lm, _lm_batch(rng)))
    assert max(errs.values()) < 1e-4, errs


def test_gru_two_step_gradient(rng):
    lm = CharLM(4, hidden=3, cell="gru", norm=reduction_norm(), binding="time_specific", rng=Rng(8))
    errs = max_errors(model_grads(lm, _lm_batch(rng, T=2, vocab=4)))
    assert max(errs.values()) < 1e-4


def test_one_hot():
    assert_array_equal(one_hot(np.array([2, 0]), 3).reshape(2, 3), [[0, 0, 1], [1, 0, 0]])


def test_charlm_carries_hidden_state(rng):
    lm = CharLM(5, hidden=4, norm=NormConfig("sample", preset("LN")), rng=Rng(1))
    batch = _lm_batch(rng)
    a = lm.forward_loss(batch)
    b = lm.forward_loss(batch)
    assert a != b
    lm.begin_epoch()
    assert lm.forward_loss(batch) == a


# ---- architectures

def _classify_batch(rng, shape, n=4, classes=3):
    return rng.normal(size=(n,) + shape), rng.integers(0, classes, size=n)


def test_arch_c_with_one_step_is_arch_b(rng):
    x = rng.normal(size=(4, 8, 8, 3))
    b = arch_b((8, 8, 3), 5, (4, 6), NormConfig("batch"), Rng(3))
    c = arch_c((8, 8, 3), 5, 1, 1, (4, 6), NormConfig("batch"), "shared", Rng(3))
    assert_array_equal(b.forward(x), c.forward(x))


@pytest.mark.parametrize("build", [
    lambda n: arch_a((1, 1, 6), 3, (5, 4), n, Rng(1)),
    lambda n: arch_b((4, 4, 2), 3, (3, 4), n, Rng(1)),
    lambda n: arch_c((4, 4, 2), 3, 2, 2, (3, 3), n, "time_specific", Rng(1)),
    lambda n: arch_d((4, 4, 2), 3, 2, (2, 3), n, "time_specific", Rng(1)),
])
def test_architecture_gradients(build, rng):
    model = build(NormConfig("batch"))
    x, y = _classify_batch(rng, _in_shape(model))
    errs = max_errors(model_grads(model, (x, y)))
    assert max(errs.values()) < 1e-4, errs


def _in_shape(model):
    from streamnorm.layers import Conv2D as _C
    for m in model.modules():
        if isinstance(m, Dense):
            return (1, 1, m.n_in)
        if isinstance(m, _C):
            return (4, 4, m.c_in)
    raise AssertionError


def test_arch_d_streaming_reduction_gradients(rng):
    model = arch_d((4, 4, 2), 3, 2, (2, 2), reduction_norm(), "time_specific", Rng(2))
    x, y = _classify_batch(rng, (4, 4, 2))
    assert max(max_errors(model_grads(model, (x, y))).values()) < 1e-4


def test_shared_streaming_is_not_exact_over_time(rng):
    # later visits of a shared layer see statistics of earlier ones
    lm = CharLM(4, hidden=3, cell="rnn", norm=reduction_norm(), binding="shared", rng=Rng(8))
    assert max(max_errors(model_grads(lm, _lm_batch(rng, vocab=4))).values()) > 1e-3


def test_arch_c_store_counts():
    model = arch_c((4, 4, 2), 3, 3, 2, (2, 2), NormConfig("batch"), "time_specific", Rng(0))
    model.forward(np.random.default_rng(0).normal(size=(4, 4, 4, 2)))
    counts = [m.store_count for m in model.modules() if isinstance(m, RecurrentNorm)]
    assert sorted(counts) == [1, 2]


def test_parse_layers(rng):
    model = parse_layers(["conv:4:3", "norm", "bias_gain", "relu", "pool:avg", "fc:6", "tanh"],
                         (4, 4, 2), 3, NormConfig("batch"), Rng(0))
    assert model.forward(rng.normal(size=(2, 4, 4, 2))).shape == (2, 1, 1, 3)
    with pytest.raises(Exception):
        parse_layers(["bogus"], (1, 1, 2), 2)


def test_classifier_evaluate_perfect_memorization():
    x = np.eye(4).reshape(4, 1, 1, 4)
    model = parse_layers(["bias_gain"], (1, 1, 4), 4, NormConfig("none"))
    model.body.layers[0].params["gamma"][:] = 100.0
    loss, err = model.evaluate([(x, np.arange(4))])
    assert err == 0.0 and loss < 1e-10

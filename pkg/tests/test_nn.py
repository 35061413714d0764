import math

import numpy as np
import pytest

from bouncenet import nn
from bouncenet.dataset import NormalizationStats
from bouncenet.nn import (AdamState, CellState, LstmLayerParams, ModelParams, adam_update, backward,
                          clip_gradients, finite_diff_gradient, forward, global_norm, init_params,
                          load_checkpoint, loss, lstm_cell_step, max_relative_error,
                          save_checkpoint, sigmoid, softmax)


def small_problem(seed, N=3, T=12, D=3, H=8, dropout=0.0):
    rng = np.random.default_rng(seed)
    params = init_params(D, H, 2, dropout, seed=seed, scale=0.5)
    for a in params.arrays().values():  # non-trivial biases and peepholes
        a += rng.uniform(-0.3, 0.3, size=a.shape)
    X = rng.normal(size=(N, T, D))
    L = rng.integers(T // 2, T + 1, size=N)
    y = rng.integers(0, 2, size=N)
    return params, X, L, y


def analytic(params, X, L, y, window=None, reduction="mean"):
    _, tape = forward(X, L, params, mode="train" if params.dropout_rate else "eval",
                      rng=np.random.default_rng(0))
    return backward(tape, y, params, window, reduction)


def test_zero_parameter_fixed_point():
    layer = LstmLayerParams.zeros(3, 4)
    out = lstm_cell_step(np.array([0.3, -1.0, 2.0]), CellState(np.zeros(4), np.zeros(4)), layer)
    np.testing.assert_array_equal(out.c, 0.0)
    np.testing.assert_array_equal(out.h, 0.0)


def test_forget_bias_hand_evaluation():
    layer = LstmLayerParams.zeros(1, 1)
    layer.b_f[...] = 20.0
    out = lstm_cell_step(np.zeros(1), CellState(np.zeros(1), np.ones(1)), layer)
    assert out.c[0] == pytest.approx(sigmoid(20.0), abs=1e-15)
    assert out.c[0] == pytest.approx(0.9999999979, abs=1e-10)
    assert out.h[0] == pytest.approx(0.5 * math.tanh(out.c[0]), abs=1e-15)
    assert out.h[0] == pytest.approx(0.38080, abs=1e-5)


def _straight_line_cell(x, h, c, p):
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    H = len(h)
    i = [sig(sum(p.W_ix[j, k] * x[k] for k in range(len(x))) +
             sum(p.W_im[j, k] * h[k] for k in range(H)) + p.W_ic[j] * c[j] + p.b_i[j]) for j in range(H)]
    f = [sig(sum(p.W_fx[j, k] * x[k] for k in range(len(x))) +
             sum(p.W_fm[j, k] * h[k] for k in range(H)) + p.W_fc[j] * c[j] + p.b_f[j]) for j in range(H)]
    g = [math.tanh(sum(p.W_cx[j, k] * x[k] for k in range(len(x))) +
                   sum(p.W_cm[j, k] * h[k] for k in range(H)) + p.b_c[j]) for j in range(H)]
    cn = [f[j] * c[j] + i[j] * g[j] for j in range(H)]
    o = [sig(sum(p.W_ox[j, k] * x[k] for k in range(len(x))) +
             sum(p.W_om[j, k] * h[k] for k in range(H)) + p.W_oc[j] * cn[j] + p.b_o[j]) for j in range(H)]
    return [o[j] * math.tanh(cn[j]) for j in range(H)], cn


def test_cell_matches_straight_line_evaluation():
    rng = np.random.default_rng(4)
    layer = LstmLayerParams.zeros(3, 5)
    for name in layer.__dataclass_fields__:
        getattr(layer, name)[...] = rng.normal(size=getattr(layer, name).shape)
    x, h, c = rng.normal(size=3), rng.normal(size=5), rng.normal(size=5)
    out = lstm_cell_step(x, CellState(h, c), layer)
    h_ref, c_ref = _straight_line_cell(x, h, c, layer)
    np.testing.assert_allclose(out.h, h_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.c, c_ref, rtol=0, atol=1e-12)


def test_forward_matches_cell_loop():
    params, X, L, _ = small_problem(1, N=2, T=7)
    logits, tape = forward(X, L, params)
    for n in range(2):
        states = [CellState(np.zeros(8), np.zeros(8)) for _ in params.layers]
        for t in range(L[n]):
            inp = X[n, t]
            for k, layer in enumerate(params.layers):
                states[k] = lstm_cell_step(inp, states[k], layer)
                inp = states[k].h
        ref = params.head_W @ states[-1].h + params.head_b
        np.testing.assert_allclose(logits[n], ref, rtol=0, atol=1e-12)


def test_zero_network_uniform():
    params = ModelParams.zeros(3, 6)
    logits, _ = forward(np.ones((10, 3)), 10, params)
    np.testing.assert_array_equal(logits, 0.0)
    np.testing.assert_allclose(softmax(logits), [0.5, 0.5])


def test_padding_invariance_exact():
    params, X, _, _ = small_problem(2, N=1, T=100)
    seq = X[0]
    padded = np.zeros((100, 3))
    padded[:40] = seq[:40]
    a, _ = forward(padded, 40, params)
    b, _ = forward(seq[:40], 40, params)
    np.testing.assert_array_equal(a, b)


def test_eval_determinism_and_bounded_h():
    params, X, L, _ = small_problem(3)
    a, tape = forward(X, L, params)
    b, _ = forward(X, L, params)
    np.testing.assert_array_equal(a, b)
    for lt in tape.layers:
        assert np.all(np.abs(lt.h) <= 1.0)


def test_train_mode_dropout_mask():
    params, X, L, _ = small_problem(5, dropout=0.8)
    _, tape = forward(X, L, params, mode="train", rng=np.random.default_rng(1))
    vals = np.unique(tape.dropout_mask)
    assert set(vals.tolist()) <= {0.0, 1.0 / (1.0 - 0.8)}
    np.testing.assert_array_equal(tape.features, tape.readout * tape.dropout_mask)
    with pytest.raises(ValueError):
        forward(X, L, params, mode="train")


def test_forward_errors():
    params = ModelParams.zeros(3, 4)
    with pytest.raises(ValueError):
        forward(np.zeros((5, 3)), 0, params)
    with pytest.raises(ValueError):
        forward(np.zeros((5, 2)), 5, params)
    with pytest.raises(ValueError):
        forward(np.zeros((5, 3)), 6, params)


def test_loss_values():
    assert loss([0.0, 0.0], 0) == pytest.approx(math.log(2), abs=1e-15)
    assert loss([0.0, 0.0], 1) == pytest.approx(math.log(2), abs=1e-15)
    assert loss([math.log(2), 0.0], 0) == pytest.approx(-math.log(2 / 3), abs=1e-15)
    assert loss([3.0 + 50, -1.0 + 50], 1) == pytest.approx(loss([3.0, -1.0], 1), abs=1e-13)
    assert np.isfinite(loss([1000.0, -1000.0], 1))


def test_softmax_sums_to_one_and_shift_invariant():
    z = np.random.default_rng(0).normal(size=(20, 2)) * 30
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(z + 7.5), p, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    params, X, L, y = small_problem(seed)
    err = max_relative_error(analytic(params, X, L, y), finite_diff_gradient(X, L, y, params))
    assert err < 1e-4


def test_head_gradient_closed_form():
    params, X, L, y = small_problem(7)
    logits, tape = forward(X, L, params)
    p = softmax(logits)
    p[np.arange(len(y)), y] -= 1.0
    hand_W = p.T @ tape.readout / len(y)
    hand_b = p.sum(axis=0) / len(y)
    fd = finite_diff_gradient(X, L, y, params)
    np.testing.assert_allclose(fd.head_W, hand_W, rtol=0, atol=1e-10)
    np.testing.assert_allclose(fd.head_b, hand_b, rtol=0, atol=1e-10)


def test_finite_difference_second_order():
    params, X, L, y = small_problem(8, N=1, T=5, H=3)
    exact = analytic(params, X, L, y)
    e1 = max(np.max(np.abs(a - b)) for a, b in
             zip(finite_diff_gradient(X, L, y, params, 1e-2).arrays().values(),
                 exact.arrays().values()))
    e2 = max(np.max(np.abs(a - b)) for a, b in
             zip(finite_diff_gradient(X, L, y, params, 5e-3).arrays().values(),
                 exact.arrays().values()))
    assert 3.0 < e1 / e2 < 5.0


def test_truncation_zero_is_one_step_gradient():
    """Window 0: only the final step's cell sees gradient, earlier states are constants."""
    params, X, L, y = small_problem(9, N=1, T=10)
    L = np.array([7])
    _, tape = forward(X, L, params)
    got = backward(tape, y, params, truncation_window=0)
    t = L[0] - 1
    prev = [CellState(lt.h[t, 0].copy(), lt.c[t, 0].copy()) for lt in tape.layers]

    def one_step(p):
        inp = X[0, t]
        for k, layer in enumerate(p.layers):
            inp = lstm_cell_step(inp, prev[k], layer).h
        return loss(p.head_W @ inp + p.head_b, y)

    work = params.copy()
    for (name, arr), g in zip(work.arrays().items(), got.arrays().values()):
        flat = arr.reshape(-1)
        fd = np.empty(flat.size)
        for j in range(flat.size):
            o = flat[j]
            flat[j] = o + 1e-6
            up = one_step(work)
            flat[j] = o - 1e-6
            down = one_step(work)
            flat[j] = o
            fd[j] = (up - down) / 2e-6
        np.testing.assert_allclose(g.reshape(-1), fd, rtol=1e-5, atol=1e-9, err_msg=name)
    full = backward(tape, y, params, None)
    np.testing.assert_array_equal(got.head_W, full.head_W)
    np.testing.assert_array_equal(got.head_b, full.head_b)


def test_truncation_windows_beyond_length_agree():
    params, X, L, y = small_problem(10)
    _, tape = forward(X, L, params)
    full = backward(tape, y, params, None)
    for w in (int(L.max()), int(L.max()) + 5, 100):
        g = backward(tape, y, params, w)
        for a, b in zip(g.arrays().values(), full.arrays().values()):
            np.testing.assert_array_equal(a, b)
    short = backward(tape, y, params, 2)
    assert max_relative_error(short, full) > 1e-6


def test_dropout_mask_respected_in_gradient():
    params, X, L, y = small_problem(11, dropout=0.5)
    mask = np.random.default_rng(3).integers(0, 2, size=(len(L), 8)) * 2.0
    _, tape = forward(X, L, params, mode="train", dropout_mask=mask)
    g = backward(tape, y, params)
    # a readout unit masked out for every sample gets no head gradient
    dropped_everywhere = np.all(mask == 0, axis=0)
    assert np.all(g.head_W[:, dropped_everywhere] == 0)
    # matches finite differences of the masked loss
    work = params.copy()

    def f():
        logits, _ = forward(X, L, work, mode="train", dropout_mask=mask)
        return loss(logits, y)

    arr = work.layers[0].W_cx.reshape(-1)
    for j in range(0, arr.size, 5):
        o = arr[j]
        arr[j] = o + 1e-5
        up = f()
        arr[j] = o - 1e-5
        down = f()
        arr[j] = o
        assert g.layers[0].W_cx.reshape(-1)[j] == pytest.approx((up - down) / 2e-5, rel=1e-4, abs=1e-9)


def test_duplicated_sample_sums_to_twice():
    params, X, L, y = small_problem(12, N=1)
    one = analytic(params, X, L, y, reduction="sum")
    two = analytic(params, np.concatenate([X, X]), np.r_[L, L], np.r_[y, y], reduction="sum")
    for a, b in zip(one.arrays().values(), two.arrays().values()):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-15)


def test_backward_rejects_mismatch():
    params, X, L, y = small_problem(13)
    _, tape = forward(X, L, params)
    with pytest.raises(ValueError):
        backward(tape, y[:1], params)
    with pytest.raises(ValueError):
        backward(tape, y, init_params(3, 5, 2, 0.0))


def test_adam_zero_gradient():
    params = init_params(3, 4, 2, seed=1)
    before = params.copy()
    adam_update(params, params.zeros_like(), AdamState.for_params(params))
    for a, b in zip(params.arrays().values(), before.arrays().values()):
        np.testing.assert_array_equal(a, b)
    # existing moments decay geometrically
    state = AdamState.for_params(params)
    state.m["head.b"][...] = 1.0
    state.v["head.b"][...] = 1.0
    adam_update(params, params.zeros_like(), state, learning_rate=0.0)
    np.testing.assert_allclose(state.m["head.b"], 0.9)
    np.testing.assert_allclose(state.v["head.b"], 0.999)


def test_adam_first_step_is_sign():
    params = init_params(3, 4, 2, seed=1)
    grads = params.zeros_like()
    rng = np.random.default_rng(0)
    for g in grads.arrays().values():
        g[...] = (rng.choice([-1.0, 1.0], size=g.shape) * rng.uniform(0.5, 2.0, size=g.shape)
                  * 10.0 ** rng.integers(-2, 3, size=g.shape))
    before = params.copy()
    adam_update(params, grads, AdamState.for_params(params), learning_rate=1e-3)
    for p, b, g in zip(params.arrays().values(), before.arrays().values(), grads.arrays().values()):
        np.testing.assert_allclose(p - b, -1e-3 * np.sign(g), rtol=1e-4)


def test_adam_constant_gradient_steady_state():
    params = ModelParams.zeros(1, 1)
    grads = params.zeros_like()
    grads.head_b[...] = [0.3, -2.0]
    state = AdamState.for_params(params)
    for _ in range(2000):
        prev = params.head_b.copy()
        adam_update(params, grads, state, learning_rate=0.01)
    np.testing.assert_allclose(params.head_b - prev, [-0.01, 0.01], rtol=1e-6)


def test_adam_rejects_non_finite():
    params = init_params(3, 4, 2)
    grads = params.zeros_like()
    grads.layers[1].b_o[2] = np.nan
    before = params.copy()
    with pytest.raises(nn.NonFiniteGradientError, match="layer2.b_o"):
        adam_update(params, grads, AdamState.for_params(params))
    for a, b in zip(params.arrays().values(), before.arrays().values()):
        np.testing.assert_array_equal(a, b)


def test_clipping():
    params = init_params(3, 4, 2)
    grads = params.zeros_like()
    grads.head_b[...] = [30.0, 40.0]
    assert clip_gradients(grads, 5.0) == pytest.approx(50.0)
    assert global_norm(grads) == pytest.approx(5.0)
    np.testing.assert_allclose(grads.head_b, [3.0, 4.0])


def test_init_recipe():
    p = init_params(3, 64, 2, seed=0)
    assert p.layers[0].W_ix.shape == (64, 3) and p.layers[1].W_im.shape == (64, 64)
    assert p.head_W.shape == (2, 64)
    for name, a in p.arrays().items():
        if name.endswith(".b_f"):
            np.testing.assert_array_equal(a, 1.0)
        elif ".b_" in name or name == "head.b":
            np.testing.assert_array_equal(a, 0.0)
        else:
            assert np.all(np.abs(a) <= 0.08)
    with pytest.raises(ValueError):
        ModelParams.zeros(3, 4, dropout_rate=1.0)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    params, *_ = small_problem(14, dropout=0.8)
    stats = NormalizationStats((0.5, 0.25, 1.125))
    save_checkpoint(tmp_path / "m.ckpt", params, stats, {"dims": "xyz"})
    back, std, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert std == stats.std and meta == {"dims": "xyz"}
    assert back.dropout_rate == params.dropout_rate
    for (n1, a), (n2, b) in zip(params.arrays().items(), back.arrays().items()):
        assert n1 == n2
        assert a.tobytes() == b.tobytes()

import numpy as np
import pytest

from kgpathrec import autodiff as ad
from kgpathrec.autodiff import ParamStore, Tape, adam_step, gradient_check
from kgpathrec.errors import DivergenceError


def test_softmax_symmetry():
    t = Tape()
    out = ad.softmax(t.leaf([0.0, 0.0, 0.0]))
    assert np.allclose(out.value, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_sigmoid_at_zero():
    t = Tape()
    out = ad.sigmoid(t.leaf(np.zeros(())))
    assert float(out.value) == 0.5


def test_kl_identity_case():
    t = Tape()
    p = t.leaf([0.2, 0.3, 0.5])
    q = t.leaf([0.2, 0.3, 0.5])
    assert float(ad.kl_div(p, q).value) == 0.0


def test_softmax_valid_distribution_for_large_inputs():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.uniform(-50, 50, size=rng.integers(1, 12))
        t = Tape(trace=False)
        p = ad.softmax(t.leaf(x)).value
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-9


def test_kl_nonnegative_and_zero_iff_equal():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 8))
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        t = Tape(trace=False)
        val = float(ad.kl_div(t.leaf(p), t.leaf(q)).value)
        assert val >= 0.0
        if np.all(np.abs(p - q) <= 1e-12):
            assert val == 0.0
        same = float(ad.kl_div(t.leaf(p), t.leaf(p)).value)
        assert same == 0.0


def test_kl_zero_probability_terms_contribute_zero():
    t = Tape(trace=False)
    p = t.leaf([0.0, 1.0])
    q = t.leaf([0.5, 0.5])
    val = float(ad.kl_div(p, q).value)
    assert np.isclose(val, np.log(2.0))


def test_kl_rejects_non_distribution():
    t = Tape()
    with pytest.raises(ValueError):
        ad.kl_div(t.leaf([0.5, 0.6]), t.leaf([0.5, 0.5]))
    with pytest.raises(ValueError):
        ad.kl_div(t.leaf([0.5, 0.5]), t.leaf([-0.1, 1.1]))


def test_leaky_relu_slope_range():
    t = Tape()
    with pytest.raises(ValueError):
        ad.leaky_relu(t.leaf([1.0]), slope=1.5)
    with pytest.raises(ValueError):
        ad.leaky_relu(t.leaf([1.0]), slope=0.0)


def test_shape_mismatch_raises():
    t = Tape()
    with pytest.raises(ValueError):
        ad.add(t.leaf([1.0, 2.0]), t.leaf([1.0]))
    with pytest.raises(ValueError):
        ad.matvec(t.leaf(np.eye(3)), t.leaf([1.0, 2.0]))


def test_backward_linear_case():
    # loss = sum(W x) with x fixed: dloss/dW[i, j] = x[j]
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 4))
    x = rng.normal(size=4)
    t = Tape()
    wv = t.leaf(w, name="w")
    loss = ad.vsum(ad.matvec(wv, t.leaf(x)))
    grads = t.backward(loss)
    assert np.allclose(grads["w"], np.tile(x, (3, 1)))


def test_backward_unused_parameter_zero_gradient():
    t = Tape()
    used = t.leaf([1.0, 2.0], name="used")
    t.leaf(np.ones((2, 2)), name="unused")
    grads = t.backward(ad.vsum(used))
    assert np.allclose(grads["used"], 1.0)
    assert np.all(grads["unused"] == 0.0)
    assert grads["unused"].shape == (2, 2)


def test_backward_requires_scalar_loss():
    t = Tape()
    v = t.leaf([1.0, 2.0], name="v")
    with pytest.raises(ValueError):
        t.backward(v)


def test_record_consumed_once():
    t = Tape()
    v = t.leaf([1.0, 2.0], name="v")
    loss = ad.vsum(v)
    t.backward(loss)
    with pytest.raises(ValueError):
        t.backward(loss)


def test_replay_is_bit_identical():
    rng = np.random.default_rng(3)
    t = Tape()
    w = t.leaf(rng.normal(size=(4, 6)))
    x = t.leaf(rng.normal(size=6))
    h = ad.tanh(ad.matvec(w, x))
    p = ad.softmax(h)
    loss = ad.kl_div(p, p)
    del loss
    replayed = t.replay()
    for node, new in zip(t.nodes, replayed):
        assert np.array_equal(np.asarray(node.value), np.asarray(new))


def test_untraced_tape_matches_traced_values():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(3, 3))
    x = rng.normal(size=3)

    def run(trace):
        t = Tape(trace=trace)
        return ad.softmax(ad.sigmoid(ad.matvec(t.leaf(w), t.leaf(x)))).value

    assert np.array_equal(run(True), run(False))


# -- lstm -------------------------------------------------------------------


def _lstm_store(hidden, input_dim, fill=0.0):
    params = {}
    for gate, shape in ad.lstm_param_shapes(hidden, input_dim).items():
        params[gate] = np.full(shape, fill)
    return params


def test_lstm_zero_params_zero_state():
    t = Tape()
    params = {k: t.leaf(v) for k, v in _lstm_store(3, 2).items()}
    h, c = ad.lstm_cell(t.leaf(np.zeros(3)), t.leaf(np.zeros(3)),
                        t.leaf([0.7, -1.3]), params)
    assert np.allclose(h.value, 0.0)
    assert np.allclose(c.value, 0.0)


def test_lstm_one_dim_analytic():
    # all weights 1, biases 0, zero state, zero input -> hidden 0
    t = Tape()
    raw = _lstm_store(1, 1, fill=1.0)
    raw.update({k: np.zeros(1) for k in ("bi", "bf", "bo", "bc")})
    params = {k: t.leaf(v) for k, v in raw.items()}
    h, _ = ad.lstm_cell(t.leaf(np.zeros(1)), t.leaf(np.zeros(1)),
                        t.leaf([0.0]), params)
    assert float(h.value[0]) == 0.0


def test_lstm_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    raw = {k: rng.normal(scale=0.5, size=shape)
           for k, shape in ad.lstm_param_shapes(3, 2).items()}
    raw["h0"] = rng.normal(size=3)
    raw["c0"] = rng.normal(size=3)
    raw["x"] = rng.normal(size=2)

    def fn(t, vs):
        h, c = ad.lstm_cell(vs["h0"], vs["c0"], vs["x"],
                            {k: vs[k] for k in ad.LSTM_GATES})
        return ad.mean(ad.concat(h, c))

    assert gradient_check(fn, raw, epsilon=1e-4) < 1e-3


def test_lstm_dimension_mismatch():
    t = Tape()
    params = {k: t.leaf(v) for k, v in _lstm_store(3, 2).items()}
    with pytest.raises(ValueError):
        ad.lstm_cell(t.leaf(np.zeros(3)), t.leaf(np.zeros(3)),
                     t.leaf(np.zeros(5)), params)


# -- adam -------------------------------------------------------------------


def test_adam_zero_gradient_keeps_parameters():
    store = ParamStore()
    store.add("w", [1.0, -2.0])
    before = store["w"].copy()
    adam_step(store, {"w": np.zeros(2)}, lr=0.1)
    assert np.array_equal(store["w"], before)
    assert store.step == 1


def test_adam_first_step_magnitude():
    store = ParamStore()
    store.add("w", np.zeros(()))
    adam_step(store, {"w": np.ones(())}, lr=0.1)
    assert np.isclose(float(store["w"]), -0.1, atol=1e-6)


def test_adam_reduces_quadratic_loss_monotonically():
    store = ParamStore()
    store.add("w", [3.0, -2.0])
    target = np.array([1.0, 1.0])
    losses = []
    for _ in range(10):
        diff = store["w"] - target
        losses.append(float(diff @ diff))
        adam_step(store, {"w": 2.0 * diff}, lr=0.05)
    diff = store["w"] - target
    losses.append(float(diff @ diff))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_rejects_non_finite_gradient():
    store = ParamStore()
    store.add("w", [0.0])
    with pytest.raises(DivergenceError):
        adam_step(store, {"w": np.array([np.nan])}, lr=0.1)


def test_param_store_copy_is_independent():
    store = ParamStore()
    store.add("w", [1.0])
    snap = store.copy()
    adam_step(store, {"w": np.ones(1)}, lr=0.1)
    assert float(snap["w"][0]) == 1.0
    assert snap.step == 0


# -- gradient_check ---------------------------------------------------------


def test_gradient_check_analytic_sigmoid():
    rng = np.random.default_rng(2)
    params = {"w": rng.normal(size=4), "x": rng.normal(size=4)}

    def fn(t, vs):
        return ad.sigmoid(ad.dot(vs["w"], vs["x"]))

    assert gradient_check(fn, params, epsilon=1e-4) < 1e-6


def test_gradient_check_detects_nondeterminism():
    state = {"count": 0}

    def fn(t, vs):
        state["count"] += 1
        return ad.scale(ad.vsum(vs["w"]), float(state["count"]))

    with pytest.raises(ValueError):
        gradient_check(fn, {"w": np.ones(2)})


def test_gradient_check_epsilon_range():
    def fn(t, vs):
        return ad.vsum(vs["w"])

    with pytest.raises(ValueError):
        gradient_check(fn, {"w": np.ones(2)}, epsilon=0.5)


def test_gradient_check_coordinate_sampling_is_seeded():
    rng = np.random.default_rng(9)
    params = {"w": rng.normal(size=(40, 40))}

    def fn(t, vs):
        return ad.mean(ad.tanh(ad.matvec(vs["w"], t.leaf(np.ones(40)))))

    a = gradient_check(fn, params, max_coords=100, seed=5)
    b = gradient_check(fn, params, max_coords=100, seed=5)
    assert a == b
    assert a < 1e-3


def test_composed_network_gradients_match_finite_differences():
    rng = np.random.default_rng(21)
    for trial in range(5):
        d = int(rng.integers(2, 5))
        params = {
            "w1": rng.normal(scale=0.7, size=(d, d)),
            "w2": rng.normal(scale=0.7, size=(d, d)),
            "b": rng.normal(size=d),
            "x": rng.normal(size=d),
        }

        def fn(t, vs):
            h = ad.leaky_relu(ad.add(ad.matvec(vs["w1"], vs["x"]), vs["b"]),
                              slope=0.2)
            z = ad.softmax(ad.matvec(vs["w2"], h))
            target = t.leaf(np.full(d, 1.0 / d))
            return ad.kl_div(target, z)

        assert gradient_check(fn, params, epsilon=1e-4, seed=trial) < 1e-3


def test_vecmat_matches_finite_differences():
    rng = np.random.default_rng(30)
    params = {"x": rng.normal(size=3), "w": rng.normal(size=(3, 5))}

    def fn(t, vs):
        return ad.mean(ad.tanh(ad.vecmat(vs["x"], vs["w"])))

    assert gradient_check(fn, params, epsilon=1e-4) < 1e-3

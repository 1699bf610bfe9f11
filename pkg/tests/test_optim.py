import numpy as np
import pytest

from src.autodiff import Gradient, ShapeMismatchError
from src.optim import AdamState, adam_step


def test_zero_gradient_keeps_parameters():
    params = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(AdamState(), params, Gradient({"w": np.zeros(2)}))
    np.testing.assert_array_equal(new["w"], params["w"])
    assert state.t == 1


def test_first_step_is_learning_rate_times_sign():
    params = {"w": np.array([0.0])}
    new, _ = adam_step(AdamState(learning_rate=0.1), params, Gradient({"w": np.array([4.0])}))
    assert new["w"][0] == pytest.approx(-0.1, abs=1e-8)


def test_weight_decay_is_added_to_gradient():
    params = {"w": np.array([1.0])}
    new, _ = adam_step(AdamState(learning_rate=1e-4), params, Gradient({"w": np.array([0.0])}), decay=0.01)
    assert new["w"][0] == pytest.approx(1.0 - 1e-4 * 0.01 / (0.01 + 1e-8), rel=1e-12)
    assert new["w"][0] == pytest.approx(0.9999, abs=1e-8)


def test_per_parameter_decay_mapping():
    params = {"W0": np.array([1.0]), "b1": np.array([1.0])}
    grads = Gradient({"W0": np.zeros(1), "b1": np.zeros(1)})
    new, _ = adam_step(AdamState(), params, grads, decay={"W0": 0.01})
    assert new["W0"][0] < 1.0
    assert new["b1"][0] == 1.0


def test_first_step_sign_is_opposite_to_gradient(rng):
    g = rng.normal(size=(4, 3))
    g[0, 0] = 0.0
    params = {"w": np.zeros((4, 3))}
    new, _ = adam_step(AdamState(), params, Gradient({"w": g}))
    np.testing.assert_array_equal(np.sign(new["w"]), -np.sign(g))


def test_first_step_scale_invariance(rng):
    g = rng.choice([-1.0, 1.0], size=5) * rng.uniform(0.5, 2.0, size=5)
    params = {"w": rng.normal(size=5)}
    state = AdamState()
    a, _ = adam_step(state, params, Gradient({"w": g}))
    b, _ = adam_step(state, params, Gradient({"w": 37.0 * g}))
    assert np.max(np.abs(a["w"] - b["w"])) <= 10 * state.eps * state.learning_rate


def test_moments_and_counter():
    params = {"w": np.array([0.5])}
    state = AdamState()
    for expected_t in range(1, 4):
        params, state = adam_step(state, params, Gradient({"w": np.array([-1.0])}))
        assert state.t == expected_t
        assert np.all(state.u["w"] >= 0)
        assert state.m["w"].shape == params["w"].shape


def test_state_is_not_mutated():
    state = AdamState()
    adam_step(state, {"w": np.ones(2)}, Gradient({"w": np.ones(2)}))
    assert state.t == 0
    assert state.m == {}


def test_deterministic_updates(rng):
    params = {"w": rng.normal(size=(3, 3))}
    grads = Gradient({"w": rng.normal(size=(3, 3))})
    a, sa = adam_step(AdamState(), params, grads, decay=0.01)
    b, sb = adam_step(AdamState(), params, grads, decay=0.01)
    assert a["w"].tobytes() == b["w"].tobytes()
    assert sa.u["w"].tobytes() == sb.u["w"].tobytes()


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        adam_step(AdamState(), {"w": np.ones(2)}, Gradient({"w": np.ones(3)}))


def test_negative_decay_rejected():
    with pytest.raises(ValueError):
        adam_step(AdamState(), {"w": np.ones(1)}, Gradient({"w": np.ones(1)}), decay=-1.0)

import numpy as np
import pytest

from leapts.errors import ShapeError
from leapts.optim import ParamStore, adam_step


def make_store(**arrays) -> ParamStore:
    store = ParamStore()
    for name, arr in arrays.items():
        store.add(name, arr)
    return store


def test_zero_gradients_leave_parameters_unchanged():
    store = make_store(w=np.array([1.0, -2.0]))
    adam_step(store, {"w": np.zeros(2)}, lr=0.1)
    assert np.array_equal(store["w"].data, [1.0, -2.0])
    assert store.step == 1


def test_first_step_is_minus_lr_bias_corrected():
    lr = 1e-3
    store = make_store(w=np.array([0.5]))
    adam_step(store, {"w": np.array([1.0])}, lr=lr)
    assert store["w"].data[0] == pytest.approx(0.5 - lr, abs=1e-9)


def test_identical_params_stay_identical():
    store = make_store(a=np.array([0.3, 0.3]), b=np.array([0.3, 0.3]))
    for _ in range(5):
        g = np.array([0.7, 0.7])
        adam_step(store, {"a": g, "b": g}, lr=0.01)
    assert np.array_equal(store["a"].data, store["b"].data)
    assert store["a"].data[0] == store["a"].data[1]


def test_missing_gradient_key_rejected():
    store = make_store(w=np.zeros(2), v=np.zeros(2))
    with pytest.raises(KeyError, match="missing gradient.*'v'"):
        adam_step(store, {"w": np.zeros(2)}, lr=0.1)


def test_unknown_gradient_key_rejected():
    store = make_store(w=np.zeros(2))
    with pytest.raises(KeyError, match="unknown"):
        adam_step(store, {"w": np.zeros(2), "ghost": np.zeros(2)}, lr=0.1)


def test_gradient_shape_mismatch_rejected():
    store = make_store(w=np.zeros(2))
    with pytest.raises(ShapeError):
        adam_step(store, {"w": np.zeros(3)}, lr=0.1)


def test_adam_matches_hand_rollout():
    beta1, beta2, eps, lr = 0.9, 0.999, 1e-8, 0.05
    store = make_store(w=np.array([1.0]))
    grads = [0.4, -1.2, 0.3]
    m = v = 0.0
    w = 1.0
    for t, g in enumerate(grads, start=1):
        adam_step(store, {"w": np.array([g])}, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        w -= lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
        assert store["w"].data[0] == pytest.approx(w, abs=1e-14)


def test_state_dict_roundtrip():
    store = make_store(w=np.array([[1.0, 2.0]]), b=np.array([3.0]))
    snap = store.state_dict()
    adam_step(store, {"w": np.ones((1, 2)), "b": np.ones(1)}, lr=0.5)
    assert not np.array_equal(store["w"].data, snap["w"])
    store.load_state_dict(snap)
    assert np.array_equal(store["w"].data, snap["w"])
    assert np.array_equal(store["b"].data, snap["b"])

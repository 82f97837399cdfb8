from functools import partial

import numpy as np
import pytest

from hpmrec.errors import NumericalError
from hpmrec.model import MODALITIES, forward
from hpmrec.optim import AdamState, adam_step, backward, clip_gradients, grad_check, tiny_problem

VARIANTS = [
    {},
    {"encoder_mode": "mlp", "d": 4},
    {"encoder_mode": "split", "d": 8},
    {"no_mi": True},
    {"no_prompt": True},
    {"no_ssl": True},
    {"sign_align": "literal"},
    {"ssl_on": "bar"},
    {"layer_agg": "mean"},
    {"item_graph_norm": "none"},
    {"ssl_batch_only": True},
    {"freeze_alpha": True},
    {"n_exp": 0},
    {"n_exp": 2},
]


@pytest.mark.parametrize("overrides", VARIANTS, ids=lambda o: ",".join(f"{k}={v}" for k, v in o.items()) or "default")
def test_gradients_match_finite_differences(overrides):
    report = grad_check(partial(tiny_problem, **overrides), tolerance=1e-4)
    assert report["passed"], report["failed"]
    assert all(p["checked"] > 0 for p in report["parameters"].values())


def test_corrupted_gradient_is_named():
    def broken(trace, params, inputs, batch, hp):
        grads = backward(trace, params, inputs, batch, hp)
        grads["prompt.visual"] = grads["prompt.visual"] * 1.01
        return grads

    report = grad_check(gradient_fn=broken)
    assert not report["passed"]
    assert report["failed"] == ["prompt.visual"]


def test_report_is_reproducible():
    assert grad_check(seed=3) == grad_check(seed=3)


def grads_for(**overrides):
    params, inputs, hp, batch = tiny_problem(0, **overrides)
    return backward(forward(params, inputs, hp), params, inputs, batch, hp)


def test_no_mi_eps_gradient_is_exactly_zero():
    assert not grads_for(no_mi=True)["eps"].any()


def test_zero_ssl_weight_removes_ssl_from_prompt_gradients():
    a = grads_for(ssl_weight=0.0)
    b = grads_for(no_ssl=True, explicit_prompt=False)
    for m in MODALITIES:
        assert np.array_equal(a[f"prompt.{m}"], b[f"prompt.{m}"])


def test_ssl_contribution_is_linear_in_weight():
    base = grads_for(ssl_weight=0.0)
    one = grads_for(ssl_weight=0.25)
    two = grads_for(ssl_weight=0.5)
    for m in MODALITIES:
        k = f"prompt.{m}"
        np.testing.assert_allclose(two[k] - base[k], 2 * (one[k] - base[k]), atol=1e-14)


def test_frozen_inputs_get_no_gradients():
    grads = grads_for()
    params, _, _, _ = tiny_problem(0)
    assert set(grads) == set(params)


# -- Adam --------------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState.zeros_like(p), lr=1e-3)
    assert p["w"][0] == pytest.approx(-1e-3, rel=1e-7)


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([0.5, -2.0])}
    state = AdamState.zeros_like(p)
    for _ in range(5):
        adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    assert p["w"].tolist() == [0.5, -2.0]


def test_adam_two_steps_match_hand_rolled():
    lr, b1, b2, eps, g = 0.01, 0.9, 0.999, 1e-8, 0.3
    p = {"w": np.array([1.0])}
    state = AdamState.zeros_like(p)
    adam_step(p, {"w": np.array([g])}, state, lr)
    adam_step(p, {"w": np.array([g])}, state, lr)
    w, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert abs(p["w"][0] - w) <= 1e-12
    assert state.t == 2


def test_adam_skip_leaves_parameter():
    p = {"a": np.array([1.0]), "b": np.array([1.0])}
    adam_step(p, {"a": np.array([1.0]), "b": np.array([1.0])}, AdamState.zeros_like(p), 0.1, skip={"b"})
    assert p["b"][0] == 1.0 and p["a"][0] < 1.0


def test_adam_rejects_non_finite():
    p = {"w": np.array([1.0]), "eps": np.array([0.1])}
    with pytest.raises(NumericalError, match="eps"):
        adam_step(p, {"w": np.array([1.0]), "eps": np.array([np.nan])}, AdamState.zeros_like(p), 0.1)
    assert p["w"][0] == 1.0


def test_clip_gradients():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_gradients(g, 1.0) == pytest.approx(5.0)
    assert np.sqrt(g["a"][0] ** 2 + g["b"][0] ** 2) == pytest.approx(1.0)
    small = {"a": np.array([0.1])}
    clip_gradients(small, 1.0)
    assert small["a"][0] == 0.1


def test_gradcheck_rejects_float32():
    with pytest.raises(ValueError):
        grad_check(partial(tiny_problem, dtype="float32"))

import numpy as np
import pytest

from tabrebal.errors import NonFiniteGradient
from tabrebal.nn import ParamSet
from tabrebal.optim import adam_init, adam_step, clamp_params


def _single_param(value) -> ParamSet:
    ps = ParamSet()
    ps.add("x", np.asarray(value, dtype=float))
    return ps


def test_zero_gradient_leaves_parameters_unchanged():
    ps = _single_param([1.0, -2.0, 3.0])
    before = ps["x"].value.copy()
    state = adam_init(ps)
    adam_step(ps, [np.zeros(3)], state, lr=0.1)
    assert np.array_equal(ps["x"].value, before)
    assert np.all(state.m[0] == 0.0)
    assert np.all(state.v[0] == 0.0)


def test_first_step_matches_hand_computed_update():
    """Constant gradient g on a scalar: first step follows the bias-corrected
    moment formula, which is ~ -lr*sign(g)."""
    g = 0.37
    lr = 1e-2
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    ps = _single_param([0.0])
    state = adam_init(ps)
    adam_step(ps, [np.array([g])], state, lr=lr)
    m_hat = (1 - beta1) * g / (1 - beta1)
    v_hat = (1 - beta2) * g * g / (1 - beta2)
    expected = -lr * m_hat / (np.sqrt(v_hat) + eps)
    assert ps["x"].value[0] == pytest.approx(expected, rel=1e-12)
    assert ps["x"].value[0] == pytest.approx(-lr * np.sign(g), rel=1e-6)


def test_identical_runs_produce_identical_trajectories():
    def run():
        rng = np.random.default_rng(42)
        ps = _single_param(rng.normal(size=4))
        state = adam_init(ps)
        trace = []
        for _ in range(25):
            grad = rng.normal(size=4)
            adam_step(ps, [grad], state, lr=3e-3)
            trace.append(ps["x"].value.copy())
        return np.array(trace)

    assert np.array_equal(run(), run())


def test_nonfinite_gradient_aborts_with_diagnostics():
    ps = _single_param([1.0])
    state = adam_init(ps)
    with pytest.raises(NonFiniteGradient, match="epoch 3"):
        adam_step(ps, [np.array([np.nan])], state, lr=0.1, context="epoch 3 step 1")
    assert ps["x"].value[0] == 1.0  # untouched


def test_finite_inputs_never_produce_nonfinite_parameters():
    rng = np.random.default_rng(0)
    ps = _single_param(rng.normal(size=8))
    state = adam_init(ps)
    for _ in range(200):
        adam_step(ps, [rng.normal(size=8) * 1e6], state, lr=0.5)
    assert np.isfinite(ps["x"].value).all()


class TestClamp:
    def test_entries_within_bound_are_unchanged(self):
        ps = _single_param([0.005, -0.003])
        clamp_params(ps, 0.01)
        assert np.array_equal(ps["x"].value, [0.005, -0.003])

    def test_entry_at_twice_bound_clips_to_bound(self):
        ps = _single_param([0.02])
        clamp_params(ps, 0.01)
        assert ps["x"].value[0] == 0.01

    def test_random_params_scan_max_abs_equals_bound(self):
        rng = np.random.default_rng(9)
        ps = _single_param(rng.normal(size=500))
        clamp_params(ps, 0.01)
        # scan oracle over every entry
        assert max(abs(float(v)) for v in ps["x"].value) == pytest.approx(0.01)
        assert np.all(np.abs(ps["x"].value) <= 0.01)

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from metaplastic.neuromodulation import (
    GLOBAL,
    POST,
    PRE,
    EligibilityParams,
    EligibilityState,
    IndexingMismatchError,
    ModulationSignal,
    apply_modulation,
    eligibility_step,
    response_function,
)
from metaplastic.neuron import ShapeMismatchError

finite = st.floats(-3, 3, allow_nan=False)


def test_conservation_with_unit_gamma():
    E = EligibilityState(np.full((2, 3), 0.4), np.full((2, 3), -0.2))
    p = EligibilityParams(gamma=1.0, alpha_e=1.0)
    for _ in range(100):
        E = eligibility_step(E, np.zeros((2, 3)), np.zeros((2, 3)), p)
    np.testing.assert_array_equal(E.E_plus, 0.4)
    np.testing.assert_array_equal(E.E_minus, -0.2)


def test_geometric_decay_after_single_increment():
    p = EligibilityParams(gamma=0.9, alpha_e=1.0)
    E = eligibility_step(EligibilityState.zeros((1, 1)), np.ones((1, 1)), -np.ones((1, 1)), p)
    for t in range(1, 40):
        E = eligibility_step(E, np.zeros((1, 1)), np.zeros((1, 1)), p)
        assert E.E_plus[0, 0] == pytest.approx(0.9**t, rel=1e-12)
        assert E.E_minus[0, 0] == pytest.approx(-(0.9**t), rel=1e-12)


def test_zero_accumulation_rate():
    p = EligibilityParams(gamma=0.5, alpha_e=0.0)
    E = EligibilityState(np.ones((2, 2)), np.ones((2, 2)))
    rng = np.random.default_rng(0)
    for _ in range(60):
        E = eligibility_step(E, rng.random((2, 2)), -rng.random((2, 2)), p)
    assert np.all(np.abs(E.E_plus) < 1e-15)


def test_eligibility_validation():
    with pytest.raises(ValueError):
        EligibilityParams(gamma=1.2)
    with pytest.raises(ShapeMismatchError):
        eligibility_step(EligibilityState.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)), EligibilityParams())


def test_zero_modulation_is_bit_identical():
    rng = np.random.default_rng(1)
    W = rng.random((4, 3))
    E = EligibilityState(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
    for idx, n in ((GLOBAL, 1), (POST, 3), (PRE, 4)):
        out = apply_modulation(W, E, ModulationSignal(np.zeros(n), np.zeros(n), idx))
        assert np.array_equal(out, W)


def test_unit_global_modulation_adds_potentiation_trace():
    W = np.full((3, 3), 0.25)
    E = EligibilityState(np.eye(3), np.zeros((3, 3)))
    out = apply_modulation(W, E, ModulationSignal(np.ones(1), np.ones(1), GLOBAL))
    np.testing.assert_array_equal(out - W, np.eye(3))


def test_indexing_selects_axis():
    W = np.zeros((2, 3))
    E = EligibilityState(np.ones((2, 3)), np.zeros((2, 3)))
    pre = apply_modulation(W, E, ModulationSignal(np.array([1.0, 2.0]), np.zeros(2), PRE))
    post = apply_modulation(W, E, ModulationSignal(np.array([1.0, 2.0, 3.0]), np.zeros(3), POST))
    np.testing.assert_array_equal(pre, [[1, 1, 1], [2, 2, 2]])
    np.testing.assert_array_equal(post, [[1, 2, 3], [1, 2, 3]])


def test_batched_pre_modulation():
    W = np.zeros((2, 3, 4))
    E = EligibilityState(np.ones((2, 3, 4)), np.zeros((2, 3, 4)))
    m = np.arange(6.0).reshape(2, 3)
    out = apply_modulation(W, E, ModulationSignal(m, np.zeros((2, 3)), PRE))
    np.testing.assert_array_equal(out, np.broadcast_to(m[:, :, None], (2, 3, 4)))


def test_indexing_mismatch():
    E = EligibilityState.zeros((2, 3))
    with pytest.raises(IndexingMismatchError):
        apply_modulation(np.zeros((2, 3)), E, ModulationSignal(np.zeros(3), np.zeros(3), PRE))
    with pytest.raises(IndexingMismatchError):
        apply_modulation(np.zeros((2, 3)), E, ModulationSignal(np.zeros(2), np.zeros(2), POST))
    with pytest.raises(ValueError):
        ModulationSignal(0.0, 0.0, "diagonal")


def test_clamp_bounds_result():
    W = np.array([[0.9, 0.1]])
    E = EligibilityState(np.array([[1.0, 0.0]]), np.array([[0.0, -1.0]]))
    out = apply_modulation(W, E, ModulationSignal(np.ones(1), np.ones(1), GLOBAL), clamp=(0.0, 1.0))
    np.testing.assert_array_equal(out, [[1.0, 0.0]])


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite),
       arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite))
def test_negating_modulation_negates_delta(ep, em, mp, mm):
    W = np.zeros((3, 4))
    E = EligibilityState(ep, em)
    up = apply_modulation(W, E, ModulationSignal(mp, mm, PRE))
    down = apply_modulation(W, E, ModulationSignal(-mp, -mm, PRE))
    np.testing.assert_allclose(up, -down, rtol=0, atol=1e-12)


@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (2, 3), elements=finite),
       st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_modulated_update_is_separable_in_channels(ep, em, a, b, c):
    # W' - W = m+ E+ + m- E-, so the two channels contribute independently and linearly
    W = np.zeros((2, 3))
    E = EligibilityState(ep, em)
    both = apply_modulation(W, E, ModulationSignal(np.array([a * c]), np.array([b * c]), GLOBAL))
    np.testing.assert_allclose(both, c * (a * ep + b * em), rtol=1e-12, atol=1e-12)


def test_response_function_identity_and_zero():
    sig = response_function(0.7, np.ones(4))
    assert sig.indexing == POST
    np.testing.assert_array_equal(sig.m_plus, 0.7)
    np.testing.assert_array_equal(response_function(0.0, np.array([3.0, -2.0])).m_minus, 0.0)


@given(st.floats(-3, 3).filter(lambda m: abs(m) > 1e-6), st.lists(st.sampled_from([-1.0, 1.0]), min_size=1, max_size=10))
def test_response_function_sign_pattern(M, b):
    b = np.array(b)
    sig = response_function(M, b, h=np.tanh)
    np.testing.assert_array_equal(np.sign(sig.m_plus), np.sign(b * M))

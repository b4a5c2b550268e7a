#!/usr/bin/env python3
"""
Tests for the numpy BiLSTM: cell arithmetic, direction handling and gradients.
"""

import numpy as np
import pytest

from ml.bilstm_absa import LstmParams, bilstm_backward, bilstm_forward, init_lstm_params, lstm_cell
from ml.errors_absa import ArgumentError


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _zero_params(D, H):
    return LstmParams(np.zeros((4 * H, D)), np.zeros((4 * H, H)), np.zeros(4 * H))


def _random_pair(D, H, seed):
    rng = np.random.default_rng(seed)
    fwd = LstmParams(rng.normal(0, 0.5, (4 * H, D)), rng.normal(0, 0.5, (4 * H, H)), rng.normal(0, 0.5, 4 * H))
    bwd = LstmParams(rng.normal(0, 0.5, (4 * H, D)), rng.normal(0, 0.5, (4 * H, H)), rng.normal(0, 0.5, 4 * H))
    return fwd, bwd, rng


def _reference_direction(X, params):
    """Step-by-step loop over lstm_cell."""
    H = params.hidden_size
    h, c = np.zeros(H), np.zeros(H)
    out = []
    for x in X:
        h, c = lstm_cell(x, h, c, params)
        out.append(h)
    return np.array(out)


# ============================================================
# CELL
# ============================================================

def test_zero_params_zero_state():
    h, c = lstm_cell(np.ones(3), np.zeros(2), np.zeros(2), _zero_params(3, 2))
    np.testing.assert_array_equal(h, np.zeros(2))
    np.testing.assert_array_equal(c, np.zeros(2))


def test_zero_params_carried_cell():
    h, c = lstm_cell(np.ones(3), np.zeros(2), np.ones(2), _zero_params(3, 2))
    np.testing.assert_allclose(c, 0.5 * np.ones(2), rtol=0, atol=1e-15)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5) * np.ones(2), rtol=0, atol=1e-15)


def test_single_unit_hand_step():
    # gate order i, f, g, o
    params = LstmParams(W=np.array([[0.5], [-0.5], [1.0], [2.0]]),
                        U=np.array([[0.1], [0.2], [0.3], [0.4]]),
                        b=np.array([0.0, 1.0, 0.0, -1.0]))
    x, h, c = np.array([1.0]), np.array([0.5]), np.array([0.2])
    i = _sigmoid(0.5 + 0.05)
    f = _sigmoid(-0.5 + 0.1 + 1.0)
    g = np.tanh(1.0 + 0.15)
    o = _sigmoid(2.0 + 0.2 - 1.0)
    c_expected = f * 0.2 + i * g
    h_expected = o * np.tanh(c_expected)
    h_new, c_new = lstm_cell(x, h, c, params)
    np.testing.assert_allclose(c_new, [c_expected], rtol=1e-14)
    np.testing.assert_allclose(h_new, [h_expected], rtol=1e-14)


def test_cell_shape_check():
    with pytest.raises(ArgumentError):
        lstm_cell(np.ones(4), np.zeros(2), np.zeros(2), _zero_params(3, 2))


def test_init_forget_bias():
    params = init_lstm_params(5, 3, np.random.default_rng(0))
    np.testing.assert_array_equal(params.b, [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])
    assert np.all(np.abs(params.W) <= 1 / np.sqrt(3))


# ============================================================
# FORWARD
# ============================================================

def test_single_step_concatenates_directions():
    fwd, bwd, rng = _random_pair(4, 3, seed=1)
    X = rng.normal(size=(1, 4))
    features = bilstm_forward(X, fwd, bwd)
    h_f, _ = lstm_cell(X[0], np.zeros(3), np.zeros(3), fwd)
    h_b, _ = lstm_cell(X[0], np.zeros(3), np.zeros(3), bwd)
    np.testing.assert_allclose(features.matrix[0], np.concatenate([h_f, h_b]), rtol=1e-13)


def test_matches_step_by_step_reference():
    fwd, bwd, rng = _random_pair(5, 2, seed=2)
    X = rng.normal(size=(3, 5))
    features = bilstm_forward(X, fwd, bwd)
    expected = np.hstack([_reference_direction(X, fwd), _reference_direction(X[::-1], bwd)[::-1]])
    np.testing.assert_allclose(features.matrix, expected, rtol=1e-12, atol=1e-14)


def test_reversal_symmetry():
    fwd, bwd, rng = _random_pair(4, 3, seed=3)
    X = rng.normal(size=(5, 4))
    original = bilstm_forward(X, fwd, bwd).matrix
    mirrored = bilstm_forward(X[::-1].copy(), bwd, fwd).matrix
    np.testing.assert_allclose(mirrored, np.hstack([original[::-1, 3:], original[::-1, :3]]), rtol=1e-12)


def test_hidden_states_bounded_and_deterministic():
    fwd, bwd, rng = _random_pair(6, 4, seed=4)
    X = rng.normal(0, 2, size=(7, 6))
    a = bilstm_forward(X, fwd, bwd).matrix
    b = bilstm_forward(X, fwd, bwd).matrix
    assert np.all(np.abs(a) < 1.0)
    np.testing.assert_array_equal(a, b)


def test_empty_input_rejected():
    fwd, bwd, _ = _random_pair(4, 3, seed=5)
    with pytest.raises(ArgumentError):
        bilstm_forward(np.zeros((0, 4)), fwd, bwd)


# ============================================================
# BACKWARD
# ============================================================

def _relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def _numeric_grad(f, array, eps=1e-5):
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        original = array[idx]
        array[idx] = original + eps
        plus = f()
        array[idx] = original - eps
        minus = f()
        array[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def test_zero_upstream_gives_zero_gradients():
    fwd, bwd, rng = _random_pair(4, 3, seed=6)
    X = rng.normal(size=(4, 4))
    dX, (g_f, g_b) = bilstm_backward(X, fwd, bwd, np.zeros((4, 6)))
    assert not np.any(dX)
    for grads in (g_f, g_b):
        for value in grads.tensors().values():
            assert not np.any(value)


def test_gradients_match_finite_differences():
    T, H, D = 4, 3, 5
    fwd, bwd, rng = _random_pair(D, H, seed=7)
    X = rng.normal(size=(T, D))
    upstream = rng.normal(size=(T, 2 * H))

    def loss():
        return float(np.sum(bilstm_forward(X, fwd, bwd).matrix * upstream))

    dX, (g_f, g_b) = bilstm_backward(X, fwd, bwd, upstream)
    assert _relative_error(dX, _numeric_grad(loss, X)) <= 1e-4
    for params, grads in ((fwd, g_f), (bwd, g_b)):
        for name, tensor in params.tensors().items():
            assert _relative_error(grads.tensors()[name], _numeric_grad(loss, tensor)) <= 1e-4, name


def test_last_token_gradient_reaches_first_input():
    fwd, bwd, rng = _random_pair(4, 3, seed=8)
    X = rng.normal(size=(5, 4))
    upstream = np.zeros((5, 6))
    upstream[-1] = 1.0
    dX, _ = bilstm_backward(X, fwd, bwd, upstream)
    assert np.linalg.norm(dX[0]) > 0


def test_upstream_shape_check():
    fwd, bwd, rng = _random_pair(4, 3, seed=9)
    with pytest.raises(ArgumentError):
        bilstm_backward(rng.normal(size=(3, 4)), fwd, bwd, np.zeros((3, 5)))


if __name__ == '__main__':
    raise SystemExit(pytest.main([__file__, '-v']))

#!/usr/bin/env python3
"""
Single-layer bidirectional LSTM with analytic gradients (numpy, float64).

Gate rows of W, U and b are stacked in the order
    input (i), forget (f), cell candidate (g), output (o)
each block H rows tall:

    a = W x_t + U h_{t-1} + b
    i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o);  g = tanh(a_g)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

Both directions start from zero h and c. Output row t is h_fwd(t) ++ h_bwd(t).
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from ml.errors_absa import ArgumentError

GATE_ORDER = ('input', 'forget', 'cell', 'output')


@dataclass
class LstmParams:
    W: np.ndarray  # 4H x D_in
    U: np.ndarray  # 4H x H
    b: np.ndarray  # 4H

    def __post_init__(self):
        H4 = self.W.shape[0]
        if H4 % 4 or self.U.shape != (H4, H4 // 4) or self.b.shape != (H4,):
            raise ArgumentError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def tensors(self) -> Dict[str, np.ndarray]:
        return {'W': self.W, 'U': self.U, 'b': self.b}

    @classmethod
    def zeros_like(cls, other: 'LstmParams') -> 'LstmParams':
        return cls(np.zeros_like(other.W), np.zeros_like(other.U), np.zeros_like(other.b))


def init_lstm_params(input_dim: int, hidden_size: int, rng: np.random.Generator) -> LstmParams:
    """Uniform +-1/sqrt(H) weights, zero bias except forget gate bias = 1."""
    bound = 1.0 / np.sqrt(hidden_size)
    H = hidden_size
    W = rng.uniform(-bound, bound, size=(4 * H, input_dim))
    U = rng.uniform(-bound, bound, size=(4 * H, H))
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    return LstmParams(W=W, U=U, b=b)


def _split_gates(a: np.ndarray, H: int):
    return a[..., :H], a[..., H:2 * H], a[..., 2 * H:3 * H], a[..., 3 * H:]


def lstm_cell(x: np.ndarray, h: np.ndarray, c: np.ndarray, params: LstmParams) -> Tuple[np.ndarray, np.ndarray]:
    """One LSTM step; returns (h', c')."""
    H = params.hidden_size
    if x.shape != (params.input_dim,) or h.shape != (H,) or c.shape != (H,):
        raise ArgumentError(
            f"lstm_cell got x{x.shape} h{h.shape} c{c.shape} for D_in={params.input_dim}, H={H}"
        )
    a_i, a_f, a_g, a_o = _split_gates(params.W @ x + params.U @ h + params.b, H)
    c_new = expit(a_f) * c + expit(a_i) * np.tanh(a_g)
    h_new = expit(a_o) * np.tanh(c_new)
    return h_new, c_new


def _run_direction(X: np.ndarray, params: LstmParams) -> Dict[str, np.ndarray]:
    """Left-to-right pass over X keeping everything the backward pass needs."""
    T = X.shape[0]
    H = params.hidden_size
    XW = X @ params.W.T + params.b
    hs = np.zeros((T + 1, H))
    cs = np.zeros((T + 1, H))
    gates = np.zeros((T, 4 * H))
    for t in range(T):
        a = XW[t] + params.U @ hs[t]
        a_i, a_f, a_g, a_o = _split_gates(a, H)
        i, f, g, o = expit(a_i), expit(a_f), np.tanh(a_g), expit(a_o)
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gates[t] = np.concatenate([i, f, g, o])
    return {'X': X, 'hs': hs, 'cs': cs, 'gates': gates}


def _backprop_direction(cache: Dict[str, np.ndarray], params: LstmParams, dH: np.ndarray):
    """Gradients for one direction given dLoss/dh_t for every step (in processing order)."""
    X, hs, cs, gates = cache['X'], cache['hs'], cache['cs'], cache['gates']
    T = X.shape[0]
    H = params.hidden_size
    dA = np.zeros((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in reversed(range(T)):
        i, f, g, o = _split_gates(gates[t], H)
        tanh_c = np.tanh(cs[t + 1])
        # output gradient plus what flowed back from step t+1
        dh = dH[t] + dh_next
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        # pre-activation gradients, gate order (i, f, g, o)
        dA[t] = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * cs[t] * f * (1.0 - f),
            dc * i * (1.0 - g ** 2),
            dh * tanh_c * o * (1.0 - o),
        ])
        # carry into step t-1
        dc_next = dc * f
        dh_next = params.U.T @ dA[t]

    # Accumulate parameter gradients over all steps
    grads = LstmParams(W=dA.T @ X, U=dA.T @ hs[:-1], b=dA.sum(axis=0))
    return dA @ params.W, grads


@dataclass(frozen=True)
class FeatureSequence:
    matrix: np.ndarray  # T x 2H
    cache: Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]] = field(repr=False, compare=False)

    @property
    def hidden_size(self) -> int:
        return self.matrix.shape[1] // 2


def _check_inputs(inputs: np.ndarray, fwd: LstmParams, bwd: LstmParams):
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ArgumentError(f"BiLSTM input must be a nonempty T x D_in matrix, got shape {inputs.shape}")
    for name, params in (('forward', fwd), ('backward', bwd)):
        if params.input_dim != inputs.shape[1]:
            raise ArgumentError(f"{name} LSTM expects D_in={params.input_dim}, input has {inputs.shape[1]}")
    if fwd.hidden_size != bwd.hidden_size:
        raise ArgumentError(f"direction hidden sizes differ: {fwd.hidden_size} vs {bwd.hidden_size}")


def bilstm_forward(inputs: np.ndarray, fwd: LstmParams, bwd: LstmParams) -> FeatureSequence:
    _check_inputs(inputs, fwd, bwd)
    fwd_cache = _run_direction(inputs, fwd)
    bwd_cache = _run_direction(inputs[::-1], bwd)
    matrix = np.hstack([fwd_cache['hs'][1:], bwd_cache['hs'][1:][::-1]])
    return FeatureSequence(matrix=matrix, cache=(fwd_cache, bwd_cache))


def bilstm_backward(
    inputs: np.ndarray,
    fwd: LstmParams,
    bwd: LstmParams,
    upstream: np.ndarray,
    features: Optional[FeatureSequence] = None,
) -> Tuple[np.ndarray, Tuple[LstmParams, LstmParams]]:
    """
    Backpropagate dLoss/dfeatures through both directions.

    Args:
        inputs: T x D_in input matrix
        fwd, bwd: Direction parameters
        upstream: T x 2H gradient of the loss w.r.t. the feature matrix
        features: Output of bilstm_forward on the same inputs (recomputed if None)

    Returns:
        (dLoss/dinputs T x D_in, (forward param grads, backward param grads))
    """
    _check_inputs(inputs, fwd, bwd)
    H = fwd.hidden_size
    if upstream.shape != (inputs.shape[0], 2 * H):
        raise ArgumentError(f"upstream gradient shape {upstream.shape}, expected {(inputs.shape[0], 2 * H)}")
    # Reuse the forward caches when the caller has them
    if features is None:
        features = bilstm_forward(inputs, fwd, bwd)
    fwd_cache, bwd_cache = features.cache

    # Forward direction sees columns :H in order; backward sees H: reversed
    dx_fwd, g_fwd = _backprop_direction(fwd_cache, fwd, upstream[:, :H])
    dx_bwd, g_bwd = _backprop_direction(bwd_cache, bwd, upstream[::-1, H:])
    # Input gradients from both directions, back in sentence order
    return dx_fwd + dx_bwd[::-1], (g_fwd, g_bwd)

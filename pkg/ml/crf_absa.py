#!/usr/bin/env python3
"""
Linear-chain CRF over the B/I/O aspect labels.

Scores are unnormalized log-potentials:

    score(y) = start[y_1] + sum_t E[t, y_t] + sum_t A[y_t, y_{t+1}] + end[y_T]

and training normalizes globally over all L^T labelings (log Z from the
forward algorithm). Label order is fixed as (B, I, O); checkpoints record
it and refuse to load under a different order.
"""

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from ml.errors_absa import ArgumentError

LABELS = ('B', 'I', 'O')
LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}
N_LABELS = len(LABELS)
B, I, O = (LABEL_INDEX[label] for label in LABELS)

LabelSeq = Sequence[Union[str, int]]


@dataclass
class CrfParams:
    W_e: np.ndarray    # L x 2H emission projection
    b_e: np.ndarray    # L
    A: np.ndarray      # L x L, A[y, y'] scores y -> y'
    start: np.ndarray  # L
    end: np.ndarray    # L
    forbid_oi: bool = False

    def __post_init__(self):
        L = N_LABELS
        if (self.W_e.ndim != 2 or self.W_e.shape[0] != L or self.b_e.shape != (L,)
                or self.A.shape != (L, L) or self.start.shape != (L,) or self.end.shape != (L,)):
            raise ArgumentError(
                f"CRF shapes W_e{self.W_e.shape} b_e{self.b_e.shape} A{self.A.shape} "
                f"start{self.start.shape} end{self.end.shape} do not match {L} labels"
            )

    @property
    def feature_dim(self) -> int:
        return self.W_e.shape[1]

    @property
    def transitions(self) -> np.ndarray:
        """A with the O -> I entry set to -inf when forbid_oi is on."""
        if not self.forbid_oi:
            return self.A
        masked = self.A.copy()
        masked[O, I] = -np.inf
        return masked

    def tensors(self) -> Dict[str, np.ndarray]:
        return {'W_e': self.W_e, 'b_e': self.b_e, 'A': self.A, 'start': self.start, 'end': self.end}


def init_crf_params(feature_dim: int, rng: np.random.Generator, forbid_oi: bool = False) -> CrfParams:
    """Xavier-uniform emission projection; zero bias, transitions and boundary scores."""
    bound = np.sqrt(6.0 / (feature_dim + N_LABELS))
    return CrfParams(
        W_e=rng.uniform(-bound, bound, size=(N_LABELS, feature_dim)),
        b_e=np.zeros(N_LABELS),
        A=np.zeros((N_LABELS, N_LABELS)),
        start=np.zeros(N_LABELS),
        end=np.zeros(N_LABELS),
        forbid_oi=forbid_oi,
    )


def label_ids(labels: LabelSeq) -> np.ndarray:
    """Map 'B'/'I'/'O' (or ints) to label indices."""
    try:
        return np.array([LABEL_INDEX[y] if isinstance(y, str) else int(y) for y in labels], dtype=np.int64)
    except KeyError as e:
        raise ArgumentError(f"unknown label {e.args[0]!r}; expected one of {LABELS}")


def label_names(ids: Sequence[int]) -> Tuple[str, ...]:
    return tuple(LABELS[int(i)] for i in ids)


# ============================================================
# EMISSIONS
# ============================================================

def project_emissions(features: np.ndarray, params: CrfParams) -> np.ndarray:
    """T x L emission scores: row t = W_e features[t] + b_e."""
    if features.ndim != 2 or features.shape[1] != params.feature_dim:
        raise ArgumentError(f"features shape {features.shape}, CRF expects T x {params.feature_dim}")
    return features @ params.W_e.T + params.b_e


def emission_backward(
    features: np.ndarray,
    grad_emissions: np.ndarray,
    params: CrfParams,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dLoss/dfeatures, dLoss/dW_e, dLoss/db_e)."""
    if grad_emissions.shape != (features.shape[0], N_LABELS):
        raise ArgumentError(f"emission gradient shape {grad_emissions.shape} for {features.shape[0]} tokens")
    return grad_emissions @ params.W_e, grad_emissions.T @ features, grad_emissions.sum(axis=0)


def _check_emissions(emissions: np.ndarray):
    if emissions.ndim != 2 or emissions.shape[1] != N_LABELS or emissions.shape[0] == 0:
        raise ArgumentError(f"emissions must be T x {N_LABELS} with T >= 1, got {emissions.shape}")


# ============================================================
# SCORING / PARTITION
# ============================================================

def sequence_score(emissions: np.ndarray, labels: LabelSeq, params: CrfParams) -> float:
    _check_emissions(emissions)
    y = label_ids(labels)
    if len(y) != emissions.shape[0]:
        raise ArgumentError(f"{len(y)} labels for {emissions.shape[0]} emission rows")
    trans = params.transitions
    score = params.start[y[0]] + emissions[np.arange(len(y)), y].sum() + params.end[y[-1]]
    if len(y) > 1:
        score += trans[y[:-1], y[1:]].sum()
    return float(score)


def _forward(emissions: np.ndarray, trans: np.ndarray, start: np.ndarray) -> np.ndarray:
    T = emissions.shape[0]
    alpha = np.empty((T, N_LABELS))
    alpha[0] = start + emissions[0]
    for t in range(1, T):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + trans, axis=0) + emissions[t]
    return alpha


def _backward(emissions: np.ndarray, trans: np.ndarray, end: np.ndarray) -> np.ndarray:
    T = emissions.shape[0]
    beta = np.empty((T, N_LABELS))
    beta[-1] = end
    for t in range(T - 2, -1, -1):
        beta[t] = logsumexp(trans + (emissions[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(emissions: np.ndarray, params: CrfParams) -> float:
    """log Z over all labelings, forward algorithm in log space."""
    _check_emissions(emissions)
    alpha = _forward(emissions, params.transitions, params.start)
    return float(logsumexp(alpha[-1] + params.end))


def crf_marginals(emissions: np.ndarray, params: CrfParams) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Forward-backward marginals.

    Returns:
        (T x L per-position marginals, (T-1) x L x L pairwise marginals, log Z)
    """
    _check_emissions(emissions)
    trans = params.transitions
    alpha = _forward(emissions, trans, params.start)
    beta = _backward(emissions, trans, params.end)
    log_z = logsumexp(alpha[-1] + params.end)
    unary = np.exp(alpha + beta - log_z)
    pairwise = np.exp(
        alpha[:-1, :, None] + trans[None, :, :] + (emissions[1:] + beta[1:])[:, None, :] - log_z
    )
    return unary, pairwise, float(log_z)


@dataclass
class CrfGrads:
    emissions: np.ndarray
    A: np.ndarray
    start: np.ndarray
    end: np.ndarray


def nll_loss(emissions: np.ndarray, gold: LabelSeq, params: CrfParams) -> Tuple[float, CrfGrads]:
    """
    Negative log-likelihood of the gold labeling and its exact gradients.

    dLoss/dE[t, y] = P(y_t = y) - [gold_t = y]; transition and boundary
    gradients are expected minus observed counts.
    """
    _check_emissions(emissions)
    y = label_ids(gold)
    T = emissions.shape[0]
    if len(y) != T:
        raise ArgumentError(f"{len(y)} gold labels for {T} emission rows")

    # Loss: log Z minus the gold path score
    unary, pairwise, log_z = crf_marginals(emissions, params)
    loss = log_z - sequence_score(emissions, y, params)

    # Emissions: marginals minus gold one-hot
    onehot = np.zeros((T, N_LABELS))
    onehot[np.arange(T), y] = 1.0
    d_emissions = unary - onehot

    # Transitions: expected minus observed pair counts
    d_A = pairwise.sum(axis=0)
    np.subtract.at(d_A, (y[:-1], y[1:]), 1.0)
    if params.forbid_oi:
        d_A[O, I] = 0.0

    # Boundaries
    d_start = unary[0] - onehot[0]
    d_end = unary[-1] - onehot[-1]
    return float(loss), CrfGrads(emissions=d_emissions, A=d_A, start=d_start, end=d_end)


# ============================================================
# DECODING
# ============================================================

def viterbi_decode(emissions: np.ndarray, params: CrfParams) -> Tuple[Tuple[str, ...], float]:
    """
    Highest-scoring labeling.

    Ties resolve to the lowest label index (B < I < O) at every step
    because np.argmax returns the first maximum.
    """
    _check_emissions(emissions)
    trans = params.transitions
    T = emissions.shape[0]
    delta = params.start + emissions[0]
    backptr = np.zeros((T, N_LABELS), dtype=np.int64)
    for t in range(1, T):
        candidates = delta[:, None] + trans
        backptr[t] = np.argmax(candidates, axis=0)
        delta = candidates[backptr[t], np.arange(N_LABELS)] + emissions[t]

    path = [int(np.argmax(delta + params.end))]
    for t in range(T - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return label_names(path), sequence_score(emissions, path, params)

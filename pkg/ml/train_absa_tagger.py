#!/usr/bin/env python3
"""
Training loop for the BiLSTM-CRF aspect tagger.

Per-sentence updates (batch size 1) with SGD or Adam, global-norm gradient
clipping, optional early stopping on dev weighted F1, and an end-to-end
finite-difference gradient check.

Usage (library):
    from ml.train_absa_tagger import TrainConfig, train
    best_model, history = train(train_instances, dev_instances, model, TrainConfig(epochs=50))
"""

import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from ml.errors_absa import ArgumentError, ConfigError, TrainingDivergedError
from ml.features_absa import TaggingInstance
from ml.metrics_absa import span_exact_match, token_prf
from ml.tagger_absa import Gradient, SparseRows, TaggerModel, grad_sq_norm

logger = logging.getLogger(__name__)

OPTIMIZERS = ('sgd', 'adam')


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    optimizer: str = 'adam'
    clip_norm: float = 5.0
    seed: int = 13
    patience: int = 10
    shuffle: bool = True
    dev_fraction: float = 0.0
    target_f1: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> 'TrainConfig':
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        # 0 is accepted so a run can be checked for side effects without updates
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be >= 0 (0 disables clipping), got {self.clip_norm}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ConfigError(f"dev_fraction must be in [0, 1), got {self.dev_fraction}")
        if not 0.0 <= self.target_f1 <= 1.0:
            raise ConfigError(f"target_f1 must be in [0, 1] (0 disables), got {self.target_f1}")
        return self

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> 'TrainConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys {unknown}")
        return cls(**values).validate()


# ============================================================
# OPTIMIZERS
# ============================================================

class Sgd:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, Gradient]):
        lr = self.learning_rate
        for name, grad in grads.items():
            param = params[name]
            if isinstance(grad, SparseRows):
                param[grad.ids] -= lr * grad.values
            else:
                param -= lr * grad


class Adam:
    """
    Adam with lazy updates for row-sparse gradients: only rows present in a
    gradient have their moments and values touched.
    """

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, Gradient]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        # bias corrections for the zero-initialized moments
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        lr = self.learning_rate
        for name, grad in grads.items():
            param = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            m, v = self.m[name], self.v[name]
            if isinstance(grad, SparseRows):
                rows = grad.ids
                m[rows] = b1 * m[rows] + (1.0 - b1) * grad.values
                v[rows] = b2 * v[rows] + (1.0 - b2) * grad.values ** 2
                param[rows] -= lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + self.eps)
            else:
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * grad ** 2
                param -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(tcfg: TrainConfig):
    if tcfg.optimizer == 'sgd':
        return Sgd(tcfg.learning_rate)
    return Adam(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)


def clip_gradients(grads: Dict[str, Gradient], max_norm: float) -> Tuple[Dict[str, Gradient], float]:
    """Scale all gradients so their joint L2 norm is at most max_norm (0 disables)."""
    norm = float(np.sqrt(sum(grad_sq_norm(g) for g in grads.values())))
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    clipped = {
        name: g.scaled(factor) if isinstance(g, SparseRows) else g * factor
        for name, g in grads.items()
    }
    return clipped, norm


# ============================================================
# TRAINING
# ============================================================

def evaluate_model(model: TaggerModel, instances: Sequence[TaggingInstance]) -> Dict[str, float]:
    """Token and span scores of the model's Viterbi output on instances."""
    gold = [inst.labeled() for inst in instances]
    pred = [inst.labeled(model.predict(inst)) for inst in instances]
    report = token_prf(gold, pred)
    return {
        'weighted_f1': report.weighted_f1,
        'macro_f1_all': report.macro_f1_all,
        'macro_f1_bi': report.macro_f1_bi,
        'span_f1': span_exact_match(gold, pred).f1,
    }


def _check_training_data(instances: Sequence[TaggingInstance], name: str):
    for inst in instances:
        if len(inst) == 0:
            raise ArgumentError(f"{name} sentence {inst.sentence_id} has no tokens")
        if not inst.labeled().is_well_formed():
            raise ArgumentError(f"{name} sentence {inst.sentence_id} has ill-formed BIO labels {inst.labels}")


def train(
    train_data: Sequence[TaggingInstance],
    dev_data: Optional[Sequence[TaggingInstance]],
    model: TaggerModel,
    tcfg: TrainConfig,
    verbose: bool = False,
) -> Tuple[TaggerModel, List[Dict[str, float]]]:
    """
    Train a copy of `model` with per-sentence updates.

    Args:
        train_data: Labeled training sentences
        dev_data: Optional dev sentences for early stopping on weighted F1
            (patience, or tcfg.target_f1 once reached)
        model: Starting model (not modified)
        tcfg: Training settings
        verbose: Show an epoch progress bar

    Returns:
        (best-dev model, or the final model without dev data; per-epoch history)

    Raises:
        TrainingDivergedError: a sentence produced a non-finite loss
    """
    # Validate inputs
    tcfg.validate()
    if not train_data:
        raise ArgumentError("training data is empty")
    _check_training_data(train_data, 'training')
    if dev_data:
        _check_training_data(dev_data, 'dev')

    # Work on a copy so the caller's model stays untouched
    work = model.copy()
    params = work.parameters()
    optimizer = make_optimizer(tcfg)
    rng = np.random.default_rng(tcfg.seed)

    history: List[Dict[str, float]] = []
    best_model, best_f1, best_epoch = None, -np.inf, 0
    epochs_without_gain = 0

    # ============================================================
    # EPOCH LOOP
    # ============================================================
    progress = tqdm(range(1, tcfg.epochs + 1), disable=not verbose, ncols=100, desc="Training")
    for epoch in progress:
        order = rng.permutation(len(train_data)) if tcfg.shuffle else np.arange(len(train_data))
        total = 0.0
        for idx in order:
            inst = train_data[idx]
            # Forward + backward on one sentence
            loss, grads = work.loss_and_grads(inst)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, inst.sentence_id, loss)
            # Clip, then update
            grads, _ = clip_gradients(grads, tcfg.clip_norm)
            optimizer.step(params, grads)
            total += loss

        record = {'epoch': epoch, 'train_loss': total / len(train_data)}

        # Dev evaluation and best-model tracking
        reached_target = False
        if dev_data:
            scores = evaluate_model(work, dev_data)
            record.update({f"dev_{k}": v for k, v in scores.items()})
            if scores['weighted_f1'] > best_f1:
                best_model, best_f1, best_epoch = work.copy(), scores['weighted_f1'], epoch
                epochs_without_gain = 0
            else:
                epochs_without_gain += 1
            reached_target = tcfg.target_f1 > 0 and scores['weighted_f1'] >= tcfg.target_f1
        history.append(record)
        progress.set_postfix(loss=f"{record['train_loss']:.4f}")

        # Stopping rules
        if reached_target:
            logger.info("Dev weighted F1 %.4f reached target %.2f at epoch %d",
                        best_f1, tcfg.target_f1, epoch)
            break
        if dev_data and epochs_without_gain >= tcfg.patience:
            logger.warning("Early stopping at epoch %d (best dev weighted F1 %.4f at epoch %d)",
                           epoch, best_f1, best_epoch)
            break

    if dev_data:
        logger.info("Best dev weighted F1 %.4f at epoch %d", best_f1, best_epoch)
        return best_model, history
    return work, history


def history_frame(history: Sequence[Dict[str, float]]) -> pd.DataFrame:
    return pd.DataFrame(list(history)).set_index('epoch') if history else pd.DataFrame()


# ============================================================
# GRADIENT CHECK
# ============================================================

def gradient_check_report(model: TaggerModel, instance: TaggingInstance, eps: float = 1e-5) -> Dict[str, float]:
    """
    Relative error ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)
    per trainable tensor, using central differences.

    Embedding tables are checked on the rows the sentence looks up; frozen
    tables have no entry.
    """
    work = model.copy()
    params = work.parameters()
    _, grads = work.loss_and_grads(instance)

    report = {}
    for name, grad in grads.items():
        param = params[name]
        if isinstance(grad, SparseRows):
            analytic = grad.values
            positions = [(int(r), c) for r in grad.ids for c in range(param.shape[1])]
        else:
            analytic = grad
            positions = list(np.ndindex(param.shape))

        numeric = np.zeros(len(positions))
        for k, pos in enumerate(positions):
            original = param[pos]
            param[pos] = original + eps
            plus = work.loss(instance)
            param[pos] = original - eps
            minus = work.loss(instance)
            param[pos] = original
            numeric[k] = (plus - minus) / (2.0 * eps)

        a = np.asarray(analytic, dtype=np.float64).ravel()
        denom = max(np.linalg.norm(a) + np.linalg.norm(numeric), 1e-12)
        report[name] = float(np.linalg.norm(a - numeric) / denom)
    return report


def full_gradient_check(model: TaggerModel, instance: TaggingInstance, eps: float = 1e-5) -> float:
    """Largest per-tensor relative error between analytic and finite-difference gradients."""
    return max(gradient_check_report(model, instance, eps).values())

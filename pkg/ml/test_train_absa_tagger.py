#!/usr/bin/env python3
"""
Tests for the training loop, optimizers and the end-to-end gradient check.
"""

import numpy as np
import pytest

from ml.deptree_absa import UPOS_TAGS
from ml.errors_absa import ArgumentError, ConfigError, TrainingDivergedError
from ml.features_absa import TaggingInstance, build_vocab
from ml.pipeline_absa import build_instances, make_synthetic_corpus
from ml.tagger_absa import SparseRows, TaggerConfig, TaggerModel
from ml.train_absa_tagger import (
    Adam,
    Sgd,
    TrainConfig,
    clip_gradients,
    evaluate_model,
    full_gradient_check,
    gradient_check_report,
    history_frame,
    train,
)

VOCAB = [f"w{i}" for i in range(12)]


def _random_labels(rng, T):
    labels = []
    for _ in range(T):
        choices = ['B', 'O'] + (['I'] if labels and labels[-1] != 'O' else [])
        labels.append(choices[rng.integers(len(choices))])
    return tuple(labels)


def _random_instance(rng, sid='r0', T=None):
    T = T or int(rng.integers(2, 6))
    return TaggingInstance(
        sentence_id=sid,
        tokens=tuple(VOCAB[k] for k in rng.integers(len(VOCAB), size=T)),
        labels=_random_labels(rng, T),
        pos_tags=tuple(UPOS_TAGS[k] for k in rng.integers(len(UPOS_TAGS), size=T)),
        levels=tuple(int(k) for k in rng.integers(0, 4, size=T)),
    )


def _model(seed=0, **overrides):
    values = dict(word_dim=5, pos_dim=2, pe_dim=4, hidden_size=3, seed=seed)
    values.update(overrides)
    return TaggerModel.build(TaggerConfig(**values), word_vocab=VOCAB)


# ============================================================
# GRADIENT CHECK
# ============================================================

GRADCHECK_CASES = [
    (use_pos, mode)
    for use_pos in (False, True)
    for mode in ('none', 'sequential', 'tree')
]


@pytest.mark.parametrize('use_pos,position_mode', GRADCHECK_CASES)
def test_gradient_check_random_models(use_pos, position_mode):
    rng = np.random.default_rng(GRADCHECK_CASES.index((use_pos, position_mode)))
    for trial in range(4):
        model = _model(seed=trial, use_pos=use_pos, position_mode=position_mode)
        instance = _random_instance(rng, sid=f"g{trial}")
        report = gradient_check_report(model, instance, eps=1e-5)
        assert max(report.values()) <= 1e-4, report
        assert ('pos_embeddings' in report) == use_pos


def test_gradient_check_stable_when_eps_halves():
    rng = np.random.default_rng(11)
    model = _model(seed=3, use_pos=True, position_mode='tree')
    instance = _random_instance(rng, T=4)
    coarse = full_gradient_check(model, instance, eps=1e-5)
    fine = full_gradient_check(model, instance, eps=5e-6)
    assert fine <= 4 * max(coarse, 1e-9)


def test_gradient_check_skips_frozen_tables():
    rng = np.random.default_rng(12)
    model = _model(use_pos=True, freeze_word=True, freeze_pos=True)
    report = gradient_check_report(model, _random_instance(rng))
    assert 'word_embeddings' not in report and 'pos_embeddings' not in report
    assert 'crf.A' in report


def test_gradient_check_leaves_model_untouched():
    rng = np.random.default_rng(13)
    model = _model()
    before = {k: v.copy() for k, v in model.parameters().items()}
    gradient_check_report(model, _random_instance(rng))
    for name, value in model.parameters().items():
        np.testing.assert_array_equal(value, before[name])


# ============================================================
# OPTIMIZERS / CLIPPING
# ============================================================

def test_clip_gradients_scales_to_max_norm():
    grads = {'a': np.array([3.0, 0.0]), 'b': SparseRows(np.array([0]), np.array([[0.0, 4.0]]))}
    clipped, norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(clipped['a'], [0.6, 0.0])
    np.testing.assert_allclose(clipped['b'].values, [[0.0, 0.8]])

    same, _ = clip_gradients(grads, 0.0)
    assert same is grads


def test_sgd_sparse_update_touches_only_listed_rows():
    params = {'emb': np.ones((3, 2))}
    Sgd(0.5).step(params, {'emb': SparseRows(np.array([1]), np.array([[2.0, 2.0]]))})
    np.testing.assert_array_equal(params['emb'], [[1, 1], [0, 0], [1, 1]])


def test_adam_first_step_moves_by_learning_rate():
    params = {'w': np.zeros(3)}
    Adam(0.01).step(params, {'w': np.array([1.0, -2.0, 0.0])})
    np.testing.assert_allclose(params['w'], [-0.01, 0.01, 0.0], atol=1e-9)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(optimizer='rmsprop').validate()
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({'epoch': 3})
    with pytest.raises(ConfigError):
        TrainConfig(target_f1=1.2).validate()
    assert TrainConfig(learning_rate=0.0).validate().learning_rate == 0.0


# ============================================================
# TRAINING
# ============================================================

def test_zero_learning_rate_leaves_parameters_bit_identical():
    rng = np.random.default_rng(20)
    data = [_random_instance(rng, sid=f"z{i}") for i in range(5)]
    model = _model(use_pos=True, position_mode='tree')
    for optimizer in ('sgd', 'adam'):
        trained, history = train(data, None, model, TrainConfig(epochs=3, learning_rate=0.0, optimizer=optimizer))
        for name, value in model.parameters().items():
            np.testing.assert_array_equal(trained.parameters()[name], value)
        assert history[-1]['train_loss'] == pytest.approx(history[0]['train_loss'], rel=1e-12)


def test_same_seed_same_history():
    rng = np.random.default_rng(21)
    data = [_random_instance(rng, sid=f"d{i}") for i in range(6)]
    tcfg = TrainConfig(epochs=4, learning_rate=0.01, seed=5)
    _, first = train(data, None, _model(), tcfg)
    _, second = train(data, None, _model(), tcfg)
    assert first == second


def test_input_model_is_not_modified():
    rng = np.random.default_rng(22)
    model = _model()
    before = model.parameters()['crf.W_e'].copy()
    train([_random_instance(rng)], None, model, TrainConfig(epochs=2, learning_rate=0.1))
    np.testing.assert_array_equal(model.parameters()['crf.W_e'], before)


@pytest.mark.parametrize('optimizer', ['sgd', 'adam'])
def test_one_step_updates_only_looked_up_rows(optimizer):
    instance = TaggingInstance('one', ('w1', 'w3', 'w1', 'w7'), ('O', 'B', 'I', 'O'),
                               pos_tags=('DET', 'NOUN', 'NOUN', 'VERB'), levels=(1, 2, 2, 0))
    model = _model(use_pos=True, position_mode='tree')
    trained, _ = train([instance], None, model, TrainConfig(epochs=1, learning_rate=0.01, optimizer=optimizer))

    for name, table, keys in (
        ('word_embeddings', model.word_table, instance.tokens),
        ('pos_embeddings', model.pos_table, instance.pos_tags),
    ):
        looked_up = set(table.lookup_ids(keys).tolist())
        before = model.parameters()[name]
        after = trained.parameters()[name]
        changed = {int(r) for r in np.flatnonzero(np.any(after != before, axis=1))}
        assert changed == looked_up, name


def test_overfits_single_sentence():
    instance = TaggingInstance('one', ('w1', 'w2', 'w3', 'w4'), ('O', 'B', 'I', 'O'))
    model = _model(word_dim=6, hidden_size=6)
    trained, history = train([instance], None, model, TrainConfig(epochs=200, learning_rate=0.02, optimizer='adam'))
    losses = [h['train_loss'] for h in history]
    assert losses[-1] < losses[9]
    assert losses[-1] < 0.2
    assert trained.predict(instance) == instance.labels


def test_small_sgd_steps_descend():
    rng = np.random.default_rng(23)
    data = [_random_instance(rng, sid=f"s{i}") for i in range(20)]
    _, history = train(data, None, _model(), TrainConfig(epochs=8, learning_rate=1e-4, optimizer='sgd',
                                                          shuffle=False, clip_norm=0.0))
    losses = [h['train_loss'] for h in history]
    violations = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
    assert violations <= 1


def test_learns_synthetic_corpus():
    corpus, _ = make_synthetic_corpus(n_sentences=50, seed=13)
    instances, _ = build_instances(corpus)
    vocab = build_vocab(inst.tokens for inst in instances)
    model = TaggerModel.build(TaggerConfig(word_dim=8, hidden_size=8, seed=1), word_vocab=vocab)
    trained, history = train(instances, None, model, TrainConfig(epochs=30, learning_rate=0.01))
    assert evaluate_model(trained, instances)['weighted_f1'] >= 0.95
    assert history[-1]['train_loss'] < history[0]['train_loss']


def _epochs_to_target(instances, vocab, position_mode='none', seed=1, target=0.95, epochs=200):
    # default architecture and optimizer; only the stopping rule is set
    model = TaggerModel.build(TaggerConfig(position_mode=position_mode, seed=seed), word_vocab=vocab)
    _, history = train(instances, instances, model,
                       TrainConfig(epochs=epochs, patience=epochs, target_f1=target))
    return next((h['epoch'] for h in history if h['dev_weighted_f1'] >= target), None), history


@pytest.fixture(scope='module')
def synthetic_instances():
    corpus, trees = make_synthetic_corpus(n_sentences=50, seed=13)
    instances, _ = build_instances(corpus, trees)
    return instances, build_vocab(inst.tokens for inst in instances)


def test_default_settings_fit_synthetic_corpus(synthetic_instances):
    instances, vocab = synthetic_instances
    reached, history = _epochs_to_target(instances, vocab)
    assert reached is not None and reached <= 200
    # training stops at the first epoch that reaches the target
    assert history[-1]['epoch'] == reached


def test_tree_positions_do_not_slow_convergence(synthetic_instances):
    instances, vocab = synthetic_instances
    plain, _ = _epochs_to_target(instances, vocab, 'none')
    tree, _ = _epochs_to_target(instances, vocab, 'tree')
    assert plain is not None and tree is not None
    assert tree <= plain


def test_target_f1_needs_dev_data():
    rng = np.random.default_rng(25)
    data = [_random_instance(rng, sid=f"n{i}") for i in range(3)]
    _, history = train(data, None, _model(), TrainConfig(epochs=4, learning_rate=0.01, target_f1=0.5))
    assert len(history) == 4


def test_dev_history_and_early_stopping():
    rng = np.random.default_rng(24)
    data = [_random_instance(rng, sid=f"t{i}") for i in range(4)]
    best, history = train(data, data, _model(), TrainConfig(epochs=50, learning_rate=0.0, patience=2))
    # nothing changes with lr 0, so the first epoch stays best
    assert len(history) == 3
    assert 'dev_weighted_f1' in history[0]
    frame = history_frame(history)
    assert list(frame.index) == [1, 2, 3]
    assert best is not None


def test_diverged_loss_raises():
    instance = TaggingInstance('x', ('w1', 'w2'), ('B', 'O'))
    model = _model()
    model.crf.W_e[:] = np.nan
    with pytest.raises(TrainingDivergedError) as exc:
        train([instance], None, model, TrainConfig(epochs=1))
    assert exc.value.sentence_id == 'x'


def test_rejects_bad_training_data():
    with pytest.raises(ArgumentError):
        train([], None, _model(), TrainConfig(epochs=1))
    with pytest.raises(ArgumentError):
        train([TaggingInstance('bad', ('w1',), ('I',))], None, _model(), TrainConfig(epochs=1))


if __name__ == '__main__':
    raise SystemExit(pytest.main([__file__, '-v']))

"""
Trainer tests
Data preparation, stage runs, frozen-block invariance, reports and determinism
"""

import json
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from temporal_lab.audio_synth import Corpus, CorpusSpec
from temporal_lab.dataset_builder import HELDOUT_POOL, STAGE_A, STAGE_B, epoch_batches
from temporal_lab.encoder import FROZEN_NAMES, TRAINABLE_NAMES, EncoderConfig, load_checkpoint
from temporal_lab.errors import ConfigError
from temporal_lab.settings import RunConfig
from temporal_lab.trainer import (FeatureCache, TrainConfig, TrainReport, Trainer, initial_params, prepare_data,
                                  run_two_stage, train_stage)

SMALL_CORPUS = CorpusSpec(num_classes=5, clip_duration=0.25, clips_per_class=3, heldout_clips=1)
SMALL_ENCODER = EncoderConfig(hidden_dim=32, base_dim=16, embed_dim=8, token_dim=8)


def _run_config(**train):
    settings = dict(epochs_a=1, epochs_b=1, batch_size=2, learning_rate=1e-2)
    settings.update(train)
    return RunConfig(corpus=SMALL_CORPUS, encoder=SMALL_ENCODER, train=TrainConfig(**settings), seed=0)


def _data(run_cfg):
    return prepare_data(Corpus(run_cfg.corpus), run_cfg.train, run_cfg.seed_for('split'))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(stages='BA').validate()
    with pytest.raises(ConfigError):
        TrainConfig(epochs_b=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(optimizer='rmsprop').validate()
    with pytest.raises(ConfigError):
        TrainConfig(split_ratio=1.0).validate()
    TrainConfig().validate()


def test_prepare_data_shares_held_out_pairs_between_stages():
    data = _data(_run_config())
    assert {item.key for item in data.stage_a_test} == data.test_keys
    assert not {item.key for item in data.stage_b_train} & data.test_keys
    assert all(item.pool == HELDOUT_POOL for item in data.stage_b_test + data.stage_a_test)
    assert len(data.test_keys) == 10 - int(np.floor(0.7 * 10))


def test_feature_cache_builds_block_batches():
    run_cfg = _run_config()
    data = _data(run_cfg)
    params = initial_params(run_cfg, data)
    cache = FeatureCache(params, data.vocab)
    batch = next(epoch_batches(STAGE_B, data.stage_b_train, 2, 0))
    base = cache.base_batch(batch)
    assert base.h_a.shape == (3 * batch.n, SMALL_ENCODER.base_dim)
    assert base.h_c.shape == base.h_a.shape
    assert base.block_sizes == (batch.n,) * 3

    batch_a = next(epoch_batches(STAGE_A, data.stage_a_train, 2, 0))
    base_a = cache.base_batch(batch_a)
    assert base_a.block_sizes == (batch_a.n, batch_a.n)
    assert len(base_a.single_classes) == len(base_a.dual_pairs) == batch_a.n


def test_zero_learning_rate_keeps_parameters():
    run_cfg = _run_config(learning_rate=0.0)
    data = _data(run_cfg)
    params = initial_params(run_cfg, data)
    trained, report = train_stage(STAGE_B, params, data, run_cfg.train, run_cfg.loss)
    for name in TRAINABLE_NAMES:
        np.testing.assert_array_equal(trained.trainable[name], params.trainable[name])
    assert trained.checkpoint_id() == params.checkpoint_id()
    assert [r.epoch for r in report.records] == [0, 1]


def test_training_moves_only_the_trainable_block():
    run_cfg = _run_config()
    data = _data(run_cfg)
    params = initial_params(run_cfg, data)
    frozen_before = {name: params.frozen[name].copy() for name in FROZEN_NAMES}
    trained, _ = train_stage(STAGE_B, params, data, run_cfg.train, run_cfg.loss)
    for name in FROZEN_NAMES:
        np.testing.assert_array_equal(trained.frozen[name], frozen_before[name])
    assert any(not np.array_equal(trained.trainable[name], params.trainable[name]) for name in TRAINABLE_NAMES)
    # train_stage works on a copy
    assert params.checkpoint_id() == initial_params(run_cfg, data).checkpoint_id()


def test_trainer_records_and_callbacks():
    run_cfg = _run_config(epochs_b=2)
    data = _data(run_cfg)
    seen = []
    trainer = Trainer(initial_params(run_cfg, data), data, run_cfg.train, run_cfg.loss,
                      batch_seed=1, eval_seed=2, on_epoch=seen.append)
    report = trainer.train_stage(STAGE_B, TrainReport())
    assert [r.epoch for r in report.records] == [0, 1, 2]
    assert seen == report.records
    assert all(np.isfinite(r.train_loss) and np.isfinite(r.heldout_loss) for r in report.records)
    assert report.stage_checkpoints[STAGE_B] == trainer.params.checkpoint_id()


def test_two_stage_run_writes_checkpoints_and_curves():
    run_cfg = _run_config()
    with tempfile.TemporaryDirectory() as tmp:
        run = run_two_stage(run_cfg, out_dir=tmp)
        assert set(run.checkpoints) == {'A', 'B', 'final'}
        for path in run.checkpoints.values():
            assert os.path.exists(path)
        final = load_checkpoint(run.checkpoints['final'])
        assert final.checkpoint_id() == run.report.final_checkpoint_id
        assert final.meta['fingerprint'] == run_cfg.fingerprint()
        assert final.meta['seeds'] == run_cfg.resolved_seeds()

        curves = pd.read_csv(os.path.join(tmp, 'loss_curves.csv'))
        assert list(curves['stage']) == ['A', 'A', 'B', 'B']
        with open(os.path.join(tmp, 'train_report.json'), 'r', encoding='utf-8') as f:
            saved = TrainReport.from_dict(json.load(f))
        assert saved.final_checkpoint_id == run.report.final_checkpoint_id

    assert list(run.report.stage_checkpoints) == ['A', 'B']
    assert run.report.curve('A', 'epoch') == [0, 1]
    assert run.report.parameter_counts['trainable'] == 2 * (16 * 8 + 8)


def test_stage_b_only_run():
    run = run_two_stage(_run_config(stages='B'))
    assert {r.stage for r in run.report.records} == {STAGE_B}
    assert run.checkpoints == {}


def test_runs_are_deterministic():
    first = run_two_stage(_run_config())
    second = run_two_stage(_run_config())
    assert first.report.final_checkpoint_id == second.report.final_checkpoint_id
    assert first.report.curve('B') == second.report.curve('B')
    other = run_two_stage(replace(_run_config(), seed=1))
    assert other.report.final_checkpoint_id != first.report.final_checkpoint_id


def test_sgd_optimizer_runs():
    run = run_two_stage(_run_config(optimizer='sgd', stages='B'))
    assert np.isfinite(run.report.final_heldout_loss)


def test_default_run_halves_stage_a_loss():
    """Default toy config, seed 0: both held-out curves fall over the first five epochs"""
    run_cfg = RunConfig(seed=0)
    run = run_two_stage(run_cfg)
    report = run.report

    stage_a = report.curve(STAGE_A)
    assert len(stage_a) == run_cfg.train.epochs_a + 1
    assert stage_a[-1] <= 0.5 * stage_a[0]

    for stage in (STAGE_A, STAGE_B):
        heldout = report.curve(stage, 'heldout_loss')[:6]
        assert all(later < earlier for earlier, later in zip(heldout, heldout[1:])), (stage, heldout)

    initial = initial_params(run_cfg, run.data)
    for name in FROZEN_NAMES:
        np.testing.assert_array_equal(run.params.frozen[name], initial.frozen[name])
    assert 0.05 <= report.parameter_counts['trainable_fraction'] <= 0.15


@pytest.mark.slow
def test_training_lowers_the_training_loss():
    run_cfg = _run_config(stages='B', epochs_b=20, batch_size=4, learning_rate=1e-2)
    run = run_two_stage(run_cfg)
    curve = run.report.curve('B')
    assert curve[-1] < curve[0]


def main():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("Trainer Test Suite")
    print("=" * 60)

    tests = [obj for name, obj in sorted(globals().items()) if name.startswith('test_') and callable(obj)]
    failed = 0
    for test in tests:
        try:
            test()
            print(f"  ✓ {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"  ✗ {test.__name__}: {e}")

    print(f"\n{len(tests) - failed}/{len(tests)} tests passed")
    return 0 if failed == 0 else 1


if __name__ == '__main__':
    sys.exit(main())

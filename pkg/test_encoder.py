"""
Encoder tests
Band features, pooling, parameter freezing and checkpoints
"""

import os
import sys
import tempfile

import numpy as np
import pytest

from temporal_lab.audio_synth import CorpusSpec, Waveform, concat, synth_clip
from temporal_lab.caption_gen import Vocabulary, tokenize
from temporal_lab.encoder import (FROZEN_NAMES, TRAINABLE_NAMES, EncoderConfig, EncoderModel, FeatureConfig,
                                  band_filterbank, encode_audio, encode_text, extract_features, init_params,
                                  l2_normalize, load_checkpoint, pool_sequence, save_checkpoint)
from temporal_lab.errors import ConfigError, DataIOError, NumericError, PreconditionError

SPEC = CorpusSpec(num_classes=4, clip_duration=0.5, sample_rate=8000, seed=0)
NAMES = SPEC.resolved_class_names()
SMALL = EncoderConfig(hidden_dim=32, base_dim=16, embed_dim=8, token_dim=8)


def _params(seed=0):
    vocab = Vocabulary.build(NAMES)
    return init_params(seed, len(vocab), FeatureConfig(), SMALL), vocab


def test_feature_shape():
    clip = synth_clip(0, 0, SPEC)
    cfg = FeatureConfig()
    features = extract_features(clip, cfg)
    expected_frames = 1 + (len(clip) - cfg.n_fft) // cfg.hop_length
    assert features.values.shape == (cfg.n_bands, expected_frames)
    assert np.all(features.values >= 0.0)


def test_silence_gives_zero_features():
    silence = Waveform(np.zeros(4000), 8000, (0,))
    assert np.allclose(extract_features(silence, FeatureConfig()).values, 0.0)


def test_short_clip_is_rejected():
    with pytest.raises(PreconditionError):
        extract_features(Waveform(np.zeros(100), 8000, (0,)), FeatureConfig())


def test_filterbank_has_unit_peaks():
    bank = band_filterbank(8000, FeatureConfig())
    assert bank.shape == (32, 257)
    assert np.all(bank.max(axis=1) <= 1.0 + 1e-12)
    assert np.all(bank.max(axis=1) > 0.0)


def test_feature_config_validation():
    with pytest.raises(ConfigError):
        FeatureConfig(hop_length=0).validate()
    with pytest.raises(ConfigError):
        FeatureConfig(pooling='max').validate()


def test_position_pooling_sees_order():
    x = np.arange(12, dtype=float).reshape(4, 3)
    reordered = x[::-1]
    np.testing.assert_allclose(pool_sequence(x, 'mean'), pool_sequence(reordered, 'mean'))
    assert not np.allclose(pool_sequence(x, 'mean+position'), pool_sequence(reordered, 'mean+position'))
    assert pool_sequence(x, 'mean+position').shape == (6,)


def test_concat_orders_embed_differently():
    params, _ = _params()
    a, b = synth_clip(0, 0, SPEC), synth_clip(1, 0, SPEC)
    cfg = params.feature_cfg
    z_ab = encode_audio(extract_features(concat(a, b), cfg), params)
    z_ba = encode_audio(extract_features(concat(b, a), cfg), params)
    assert not np.allclose(z_ab, z_ba)


def test_embeddings_are_unit_norm():
    params, vocab = _params()
    z_a = encode_audio(extract_features(synth_clip(2, 0, SPEC), params.feature_cfg), params)
    z_c = encode_text(tokenize('dog before pig', vocab), params)
    assert z_a.shape == z_c.shape == (SMALL.embed_dim,)
    assert abs(np.linalg.norm(z_a) - 1.0) < 1e-12
    assert abs(np.linalg.norm(z_c) - 1.0) < 1e-12


def test_empty_text_is_rejected():
    params, _ = _params()
    with pytest.raises(PreconditionError):
        encode_text([], params)


def test_l2_normalize_zero_vector():
    with pytest.raises(NumericError):
        l2_normalize(np.zeros(4))


def test_frozen_block_is_read_only():
    params, _ = _params()
    assert set(params.frozen) == set(FROZEN_NAMES)
    assert set(params.trainable) == set(TRAINABLE_NAMES)
    with pytest.raises(ValueError):
        params.frozen['audio_w1'][0, 0] = 1.0
    with pytest.raises(TypeError):
        params.frozen['audio_w1'] = np.zeros(1)


def test_trainable_fraction_is_small():
    vocab = Vocabulary.build(NAMES)
    counts = init_params(0, len(vocab)).counts()
    assert counts['trainable'] == 2 * (128 * 32 + 32)
    assert counts['trainable_fraction'] < 0.1


def test_copy_shares_frozen_and_copies_trainable():
    params, _ = _params()
    clone = params.copy()
    assert clone.frozen['audio_w1'] is params.frozen['audio_w1']
    clone.trainable['phi_w'][0, 0] += 1.0
    assert clone.trainable['phi_w'][0, 0] != params.trainable['phi_w'][0, 0]


def test_init_is_seeded():
    a, _ = _params(3)
    b, _ = _params(3)
    c, _ = _params(4)
    assert a.checkpoint_id() == b.checkpoint_id()
    assert a.checkpoint_id() != c.checkpoint_id()


def test_checkpoint_round_trip_is_bit_exact():
    params, vocab = _params()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'checkpoint.npz')
        save_checkpoint(path, params, {'vocabulary': vocab.token_to_id, 'class_names': NAMES, 'gamma': 5.0})
        loaded = load_checkpoint(path)
        model = EncoderModel.from_checkpoint(path)
    for name in FROZEN_NAMES:
        np.testing.assert_array_equal(loaded.frozen[name], params.frozen[name])
    for name in TRAINABLE_NAMES:
        np.testing.assert_array_equal(loaded.trainable[name], params.trainable[name])
    assert loaded.checkpoint_id() == params.checkpoint_id()
    assert loaded.feature_cfg == params.feature_cfg
    assert model.gamma == 5.0
    assert model.class_names == NAMES
    np.testing.assert_allclose(model.embed_text('dog before pig'),
                               encode_text(tokenize('dog before pig', vocab), params))


def test_load_checkpoint_errors():
    with tempfile.TemporaryDirectory() as tmp:
        with pytest.raises(DataIOError):
            load_checkpoint(os.path.join(tmp, 'missing.npz'))
        params, _ = _params()
        path = os.path.join(tmp, 'no_vocab.npz')
        save_checkpoint(path, params)
        with pytest.raises(DataIOError):
            EncoderModel.from_checkpoint(path)


def main():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("Encoder Test Suite")
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

"""
Audio synthesis tests
Signatures, clip determinism, composition operators and WAV I/O
"""

import os
import sys
import tempfile

import numpy as np
import pytest
import soundfile as sf

from temporal_lab import audio_synth
from temporal_lab.audio_synth import (Corpus, CorpusSpec, Waveform, apply_time_inversion, class_signature,
                                      concat, overlay, read_wav, split_halves, synth_clip, write_wav)
from temporal_lab.errors import ConfigError, DataIOError, PreconditionError, WavFormatError

SPEC = CorpusSpec(num_classes=6, clip_duration=0.25, sample_rate=8000, seed=3)


def test_synth_clip_is_deterministic():
    """Equal (class, instance, spec) give bit-identical clips"""
    a = synth_clip(2, 1, SPEC)
    b = synth_clip(2, 1, SPEC)
    assert np.array_equal(a.samples, b.samples)
    assert a.class_ids == (2,)
    assert a.relation == audio_synth.SINGLE
    assert len(a) == SPEC.samples_per_clip == 2000


def test_synth_clip_varies_with_instance_and_seed():
    base = synth_clip(2, 0, SPEC)
    assert not np.array_equal(base.samples, synth_clip(2, 1, SPEC).samples)
    other_seed = CorpusSpec(num_classes=6, clip_duration=0.25, sample_rate=8000, seed=4)
    assert not np.array_equal(base.samples, synth_clip(2, 0, other_seed).samples)


def test_peak_amplitude_bound():
    for class_id in range(SPEC.num_classes):
        for instance in range(3):
            clip = synth_clip(class_id, instance, SPEC)
            assert 0.0 < clip.peak <= audio_synth.PEAK_AMPLITUDE + 1e-12


def test_class_signatures_are_distinct():
    spec = CorpusSpec(num_classes=50, seed=0)
    seen = set()
    for class_id in range(50):
        signature = class_signature(class_id, spec)
        key = tuple(sorted(signature.frequencies))
        assert key not in seen
        seen.add(key)
        assert all(spec.f_min <= f <= spec.sample_rate / 2 for f in signature.frequencies)


def test_signature_rejects_out_of_range_class():
    with pytest.raises(PreconditionError):
        class_signature(SPEC.num_classes, SPEC)


def test_spectral_energy_sits_on_signature_frequencies():
    """The strongest spectral peak of a clip lies near one of its three tones"""
    spec = CorpusSpec(num_classes=4, clip_duration=1.0, sample_rate=8000, seed=0)
    clip = synth_clip(1, 0, spec)
    spectrum = np.abs(np.fft.rfft(clip.samples))
    freqs = np.fft.rfftfreq(len(clip), 1.0 / spec.sample_rate)
    peak_freq = freqs[int(np.argmax(spectrum))]
    tones = class_signature(1, spec).frequencies
    assert min(abs(peak_freq - f) / f for f in tones) < 0.03


def test_concat_and_time_inversion():
    a = synth_clip(0, 0, SPEC)
    b = synth_clip(1, 0, SPEC)
    ab = concat(a, b)
    assert ab.relation == audio_synth.CONCAT
    assert ab.class_ids == (0, 1)
    assert len(ab) == 2 * len(a)
    np.testing.assert_array_equal(ab.samples[:len(a)], a.samples)

    ba = apply_time_inversion((a, b))
    assert ba.class_ids == (1, 0)
    np.testing.assert_array_equal(ba.samples[:len(b)], b.samples)
    # events keep their internal direction
    np.testing.assert_array_equal(ba.samples[len(b):], a.samples)

    # involution on concatenations
    np.testing.assert_array_equal(apply_time_inversion(apply_time_inversion(ab)).samples, ab.samples)


def test_split_halves_recovers_events():
    a = synth_clip(3, 1, SPEC)
    b = synth_clip(4, 1, SPEC)
    first, second = split_halves(concat(a, b))
    np.testing.assert_array_equal(first.samples, a.samples)
    np.testing.assert_array_equal(second.samples, b.samples)
    with pytest.raises(PreconditionError):
        split_halves(a)


def test_overlay_is_peak_limited_mean():
    a = synth_clip(0, 0, SPEC)
    b = synth_clip(1, 0, SPEC)
    mixed = overlay(a, b)
    assert mixed.relation == audio_synth.OVERLAY
    assert len(mixed) == len(a)
    assert mixed.peak <= audio_synth.PEAK_AMPLITUDE + 1e-12
    np.testing.assert_allclose(mixed.samples, 0.5 * (a.samples + b.samples))


def test_overlay_rejects_unequal_lengths():
    a = synth_clip(0, 0, SPEC)
    short = CorpusSpec(num_classes=6, clip_duration=0.2, sample_rate=8000, seed=3)
    with pytest.raises(PreconditionError):
        overlay(a, synth_clip(1, 0, short))


def test_waveform_validation():
    with pytest.raises(PreconditionError):
        Waveform(np.array([0.0, 1.5]), 8000, (0,))
    with pytest.raises(PreconditionError):
        Waveform(np.array([0.0, np.nan]), 8000, (0,))
    with pytest.raises(PreconditionError):
        Waveform(np.zeros(4), 8000, (0,), audio_synth.CONCAT)
    w = Waveform(np.zeros(4), 8000, (0,))
    assert not w.samples.flags.writeable


def test_wav_round_trip_within_one_quantisation_step():
    clip = concat(synth_clip(0, 0, SPEC), synth_clip(5, 0, SPEC))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'clip.wav')
        write_wav(path, clip)
        info = sf.info(path)
        assert info.channels == 1
        assert info.subtype == 'PCM_16'
        loaded = read_wav(path)
    assert loaded.sample_rate == clip.sample_rate
    assert len(loaded) == len(clip)
    assert np.max(np.abs(loaded.samples - clip.samples)) <= 1.0 / audio_synth.PCM16_SCALE
    assert loaded.relation == audio_synth.CONCAT
    assert loaded.class_ids == (0, 5)


def test_read_wav_errors():
    with tempfile.TemporaryDirectory() as tmp:
        with pytest.raises(DataIOError):
            read_wav(os.path.join(tmp, 'missing.wav'))

        garbage = os.path.join(tmp, 'garbage.wav')
        with open(garbage, 'wb') as f:
            f.write(b'not a wav file at all')
        with pytest.raises(WavFormatError):
            read_wav(garbage)

        stereo = os.path.join(tmp, 'stereo.wav')
        sf.write(stereo, np.zeros((100, 2)), 8000, subtype='PCM_16')
        with pytest.raises(WavFormatError):
            read_wav(stereo)

        float_wav = os.path.join(tmp, 'float.wav')
        sf.write(float_wav, np.zeros(100), 8000, subtype='FLOAT')
        with pytest.raises(WavFormatError):
            read_wav(float_wav)


def test_read_wav_rejects_truncated_file():
    clip = synth_clip(1, 0, SPEC)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'clip.wav')
        write_wav(path, clip)
        with open(path, 'rb') as f:
            data = f.read()
        with open(path, 'wb') as f:
            f.write(data[:len(data) // 2])
        with pytest.raises(WavFormatError):
            read_wav(path)

        headerless = os.path.join(tmp, 'headerless.wav')
        with open(headerless, 'wb') as f:
            f.write(data[:10])
        with pytest.raises(WavFormatError):
            read_wav(headerless)


def test_corpus_instances_and_manifest():
    corpus = Corpus(CorpusSpec(num_classes=4, clip_duration=0.25, clips_per_class=4, heldout_clips=1))
    assert corpus.train_instances == [0, 1, 2]
    assert corpus.heldout_instances == [3]
    assert corpus.clip(1, 2) is corpus.clip(1, 2)
    manifest = corpus.manifest()
    assert len(manifest['clips']) == 16
    assert sum(c['split'] == 'heldout' for c in manifest['clips']) == 4
    assert corpus.class_names == ['dog', 'rooster', 'pig', 'cow']


def test_class_names_beyond_built_in_list():
    spec = CorpusSpec(num_classes=52)
    names = spec.resolved_class_names()
    assert names[49] == 'hand_saw'
    assert names[50:] == ['class_50', 'class_51']


def test_corpus_spec_validation():
    with pytest.raises(ConfigError):
        CorpusSpec(num_classes=1).validate()
    with pytest.raises(ConfigError):
        CorpusSpec(clips_per_class=2, heldout_clips=2).validate()
    with pytest.raises(ConfigError):
        CorpusSpec(num_classes=2, class_names=['Dog', 'cat']).validate()


def main():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("Audio Synthesis Test Suite")
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

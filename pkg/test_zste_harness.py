"""
Zero-shot evaluation tests
Prompt sets, the oracle and random calibration models, chance levels and reports
"""

import os
import sys
import tempfile

import numpy as np
import pytest

from temporal_lab.audio_synth import Corpus, CorpusSpec, concat, overlay
from temporal_lab.caption_gen import temporal_caption
from temporal_lab.errors import ConfigError, DataIOError, PreconditionError
from temporal_lab.zste_harness import (REPORT_KEYS, EvalConfig, EvalSet, OracleModel, PromptSet,
                                       RandomEmbeddingModel, ZsteHarness, ZsteReport, build_report,
                                       caption_facts, chance_interval, chance_levels, clip_facts, evaluate,
                                       monte_carlo_chance, predict, role_facts, task1, top_k, zs_classify)

CORPUS = Corpus(CorpusSpec(num_classes=6, clip_duration=0.25, clips_per_class=3, heldout_clips=1, seed=2))
PAIRS = [(0, 1), (2, 4), (3, 5)]
NAMES = CORPUS.class_names


def _harness(model=None, seed=0, cfg=None):
    return ZsteHarness(model or OracleModel(NAMES), EvalSet(CORPUS, PAIRS), cfg or EvalConfig(), seed)


def test_predict_and_top_k_break_ties_low():
    probs = np.array([0.2, 0.4, 0.4])
    assert predict(probs) == 1
    assert top_k(probs, 2) == [1, 2]
    assert top_k(np.array([0.25, 0.25, 0.25, 0.25]), 2) == [0, 1]


def test_zs_classify_is_a_distribution():
    model = RandomEmbeddingModel(dim=8, seed=0)
    probs = zs_classify(CORPUS.clip(0, 2), ['dog before cat', 'The sound of a dog'], model)
    assert probs.shape == (2,)
    assert probs.sum() == pytest.approx(1.0)
    with pytest.raises(PreconditionError):
        zs_classify(CORPUS.clip(0, 2), [], model)


def test_prompt_set_validation():
    prompts = (temporal_caption(0, 1, 'before', NAMES),)
    with pytest.raises(PreconditionError):
        PromptSet((), frozenset({0}), '3A')
    with pytest.raises(PreconditionError):
        PromptSet(prompts, frozenset({1}), '3A')


def test_facts_agree_between_clips_and_captions():
    a, b = CORPUS.clip(1, 2), CORPUS.clip(4, 2)
    assert clip_facts(concat(a, b)) == caption_facts(temporal_caption(1, 4, 'before', NAMES))
    assert clip_facts(concat(a, b)) == caption_facts(temporal_caption(4, 1, 'after', NAMES))
    assert clip_facts(overlay(a, b)) == caption_facts(temporal_caption(4, 1, 'while', NAMES))
    assert role_facts(clip_facts(a)) == frozenset()


def test_eval_set_clips():
    eval_set = EvalSet(CORPUS, [(4, 2), (2, 4), (0, 1)])
    assert eval_set.pairs == [(0, 1), (2, 4)]
    assert len(eval_set.singles()) == CORPUS.num_classes * len(CORPUS.heldout_instances)
    concats = eval_set.concats()
    assert [w.class_ids for _, w in concats] == [(0, 1), (1, 0), (2, 4), (4, 2)]
    assert all(w.relation == 'overlay' for _, w in eval_set.overlays())
    with pytest.raises(PreconditionError):
        EvalSet(CORPUS, [])


def test_eval_set_limited_is_seeded():
    eval_set = EvalSet(CORPUS, [(0, 1), (0, 2), (1, 3), (2, 5), (3, 4)])
    limited = eval_set.limited(2, seed=4)
    assert len(limited.pairs) == 2
    assert set(limited.pairs) <= set(eval_set.pairs)
    assert limited.pairs == eval_set.limited(2, seed=4).pairs
    assert eval_set.limited(None, seed=4) is eval_set


def test_oracle_is_perfect_on_every_task():
    results = _harness().run()
    for result in results.values():
        for key, accuracy in result.accuracies.items():
            assert accuracy == 1.0, key
    assert results['3'].counts == {'3A': 2 * len(PAIRS), '3B': len(PAIRS)}
    assert results['4'].counts == {'4A': 3 * len(PAIRS), '4B': 3 * len(PAIRS)}


def test_task3_swapped_prompts_still_score_the_oracle():
    assert _harness().task3(swap_classes=True).accuracies == {'3A': 1.0, '3B': 1.0}


def test_distractor_prompts():
    harness = _harness(seed=3)
    a, b = 2, 4
    correct = harness.temporal_prompts(a, b)
    distractors = harness._distractor_prompts(('concat', a, b), a, b)
    assert len(distractors) == 3
    for original, distractor in zip(correct, distractors):
        assert distractor.relation == original.relation
        kept = [x == y for x, y in zip(original.class_ids, distractor.class_ids)]
        assert kept.count(True) == 1
        absent = [c for c in distractor.class_ids if c not in (a, b)]
        assert len(absent) == 1
    assert distractors == harness._distractor_prompts(('concat', a, b), a, b)


def test_simultaneous_prompts():
    harness = _harness(seed=1)
    prompt_set = harness._simultaneous_prompts(('overlay', 0, 1), 0, 1)
    assert len(prompt_set.prompts) == min(50, 6 * 5)
    assert len(set(prompt_set.texts)) == len(prompt_set.texts)
    correct = {prompt_set.prompts[k].class_ids for k in prompt_set.correct}
    assert correct == {(0, 1), (1, 0)}
    others = [p for k, p in enumerate(prompt_set.prompts) if k not in prompt_set.correct]
    assert all(set(p.class_ids) != {0, 1} for p in others)


def test_task4_needs_four_classes():
    small = Corpus(CorpusSpec(num_classes=3, clip_duration=0.25, clips_per_class=2))
    harness = ZsteHarness(OracleModel(small.class_names), EvalSet(small, [(0, 1)]))
    with pytest.raises(PreconditionError):
        harness.task4()


def test_chance_levels():
    levels = chance_levels(10, task5b_prompts=50)
    assert set(levels) == set(REPORT_KEYS)
    assert levels['1A'].mean == pytest.approx(0.1)
    assert levels['2A'].mean == pytest.approx(1 / 45)
    assert levels['2B'].mean == pytest.approx(17 / 45)
    assert levels['3A'].mean == pytest.approx(1 / 3)
    assert levels['4A'].mean == pytest.approx(1 / 6)
    assert levels['4B'].mean == pytest.approx(1 / 3)
    assert levels['5A'].mean == pytest.approx(0.5)
    assert levels['5B'].mean == pytest.approx(2 / 50)


def test_monte_carlo_agrees_with_analytic_chance():
    levels = chance_levels(10)
    assert monte_carlo_chance(6, 2, 1, trials=200000)[0] == pytest.approx(levels['4B'].mean, abs=0.01)
    assert monte_carlo_chance(4, 2, 2, trials=200000, partial=True)[0] == pytest.approx(levels['5A'].mean, abs=0.01)
    assert monte_carlo_chance(10, 2, 2, trials=200000)[0] == pytest.approx(levels['2A'].mean, abs=0.005)


def test_chance_interval_contains_the_mean():
    levels = chance_levels(10)
    low, high = chance_interval(levels['3A'], 90)
    assert low < 1 / 3 < high
    low, high = chance_interval(levels['5A'], 90)
    assert low < 0.5 < high
    with pytest.raises(PreconditionError):
        chance_interval(levels['1A'], 0)


def _random_model_report(model_seed: int):
    corpus = Corpus(CorpusSpec(num_classes=10, clip_duration=0.25, clips_per_class=2, seed=5))
    eval_set = EvalSet(corpus, [(i, j) for i in range(10) for j in range(i + 1, 10)])
    return evaluate(RandomEmbeddingModel(dim=32, seed=model_seed), eval_set, EvalConfig(chance_trials=1000), seed=0)


def test_random_model_scores_near_chance():
    report = _random_model_report(7)
    levels = chance_levels(10)
    assert list(report.accuracies) == list(REPORT_KEYS)
    for key, accuracy in report.accuracies.items():
        low, high = chance_interval(levels[key], report.counts[key], level=0.99)
        assert low <= accuracy <= high, (key, accuracy, low, high)


def test_random_model_mean_over_five_seeds():
    reports = [_random_model_report(seed) for seed in range(5)]
    levels = chance_levels(10)
    for key in REPORT_KEYS:
        n_clips = sum(r.counts[key] for r in reports)
        mean = sum(r.accuracies[key] * r.counts[key] for r in reports) / n_clips
        low, high = chance_interval(levels[key], n_clips, level=0.99)
        assert low <= mean <= high, (key, mean, low, high)


def test_module_level_task_functions():
    assert task1(OracleModel(NAMES), EvalSet(CORPUS, PAIRS)) == 1.0


def test_eval_config_validation():
    with pytest.raises(ConfigError):
        EvalConfig(tasks=[6]).validate()
    with pytest.raises(ConfigError):
        EvalConfig(distractors=2).validate()
    with pytest.raises(ConfigError):
        EvalConfig(task1_prompt='label').validate()
    with pytest.raises(ConfigError):
        EvalConfig(max_pairs=0).validate()


def test_build_report_checks_results():
    results = _harness().run([1, 3])
    report = build_report(results, seed=0, tasks=[1, 3], num_classes=6, cfg=EvalConfig(chance_trials=1000))
    assert list(report.accuracies) == ['1A', '3A', '3B']
    assert report.chance['1A'] == pytest.approx(1 / 6)
    with pytest.raises(PreconditionError):
        build_report(results, seed=0, tasks=[1, 2])


def test_evaluate_and_report_round_trip():
    cfg = EvalConfig(chance_trials=1000, max_pairs=2)
    report = evaluate(OracleModel(NAMES), EvalSet(CORPUS, PAIRS), cfg, seed=3,
                      checkpoint_id='abc', fingerprint='f' * 64, model_name='oracle')
    assert list(report.accuracies) == list(REPORT_KEYS)
    assert report.counts['1A'] == 6
    assert report.counts['3B'] == 2
    assert report.metadata['chance_monte_carlo']['4B'] == pytest.approx(1 / 3, abs=0.06)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'report.json')
        report.save(path, os.path.join(tmp, 'report.csv'))
        assert ZsteReport.load(path) == report
        assert os.path.exists(os.path.join(tmp, 'report.csv'))
        with pytest.raises(DataIOError):
            ZsteReport.load(os.path.join(tmp, 'missing.json'))


def main():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("Zero-Shot Evaluation Test Suite")
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

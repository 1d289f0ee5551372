"""
Dataset builder tests
Pair enumeration, item sets, the pair-level split and batch structure
"""

import os
import sys
import tempfile

import numpy as np
import pytest

from temporal_lab import audio_synth
from temporal_lab.audio_synth import Corpus, CorpusSpec
from temporal_lab.dataset_builder import (HELDOUT_POOL, STAGE_A, STAGE_B, build_stage_a_items,
                                          build_stage_b_items, enumerate_pairs, epoch_batches, heldout_pairs,
                                          make_batch, read_manifest, split, write_manifest)
from temporal_lab.errors import PreconditionError

CORPUS = Corpus(CorpusSpec(num_classes=6, clip_duration=0.25, clips_per_class=3, heldout_clips=1, seed=1))


def test_enumerate_pairs():
    pairs = enumerate_pairs(4)
    assert len(pairs) == 12
    assert len(set(pairs)) == 12
    assert all(i != j for i, j in pairs)
    assert pairs[:3] == [(0, 1), (0, 2), (0, 3)]
    with pytest.raises(PreconditionError):
        enumerate_pairs(1)


def test_stage_b_item_count_and_relations():
    items = build_stage_b_items(CORPUS)
    k = CORPUS.num_classes
    assert len(items) == 3 * k * (k - 1)
    relations = {item.relation for item in items}
    assert relations == {'before', 'after', 'while'}


def test_item_audio_matches_caption():
    items = {(item.relation, item.pair): item for item in build_stage_b_items(CORPUS)}
    before = items[('before', (1, 4))]
    after = items[('after', (1, 4))]
    while_ = items[('while', (1, 4))]
    assert before.audio.relation == audio_synth.CONCAT
    assert before.audio.class_ids == (1, 4)
    # "1 after 4" plays class 4 first
    assert after.audio.class_ids == (4, 1)
    assert while_.audio.relation == audio_synth.OVERLAY
    assert before.caption.text == 'rooster before frog'


def test_stage_a_items():
    items = build_stage_a_items(CORPUS, mode='both')
    k = CORPUS.num_classes
    assert len(items) == 2 * k * (k - 1)
    either = build_stage_a_items(CORPUS, mode='either', seed=5)
    assert len(either) == k * (k - 1)
    assert either == build_stage_a_items(CORPUS, mode='either', seed=5)


def test_split_is_pair_level_and_disjoint():
    items = build_stage_b_items(CORPUS)
    train, test = split(items, 0.7, seed=0)
    train_keys = {item.key for item in train}
    test_keys = {item.key for item in test}
    assert not train_keys & test_keys
    assert len(train_keys) == int(np.floor(0.7 * 15))
    assert len(train) + len(test) == len(items)
    # both orders and every relation of a pair land on the same side
    for item in test:
        assert item.key in test_keys


def test_split_is_deterministic_and_seeded():
    items = build_stage_b_items(CORPUS)
    a = split(items, 0.7, seed=0)
    b = split(items, 0.7, seed=0)
    c = split(items, 0.7, seed=1)
    assert [i.item_id for i in a[1]] == [i.item_id for i in b[1]]
    assert {i.key for i in a[1]} != {i.key for i in c[1]}


def test_split_classes_holdout():
    items = build_stage_b_items(CORPUS)
    train, test = split(items, 0.7, seed=0, holdout='classes')
    train_classes = {c for item in train for c in item.key}
    assert len(train_classes) == int(np.floor(0.7 * 6))
    for item in test:
        assert not set(item.key) <= train_classes


def test_split_rejects_empty_side():
    small = Corpus(CorpusSpec(num_classes=2, clip_duration=0.25, clips_per_class=2))
    with pytest.raises(PreconditionError):
        split(build_stage_b_items(small), 0.7, seed=0)
    with pytest.raises(PreconditionError):
        split(build_stage_b_items(CORPUS), 1.0, seed=0)


def test_heldout_pairs_match_split():
    _, test = split(build_stage_b_items(CORPUS), 0.7, seed=3)
    assert heldout_pairs(CORPUS, 0.7, 3) == sorted({item.key for item in test})


def test_heldout_items_use_heldout_clips():
    item = build_stage_b_items(CORPUS)[0]
    assert item.instance() in CORPUS.train_instances
    assert item.on_pool(HELDOUT_POOL).instance() in CORPUS.heldout_instances


def test_stage_b_batch_structure():
    batch = make_batch(STAGE_B, build_stage_b_items(CORPUS), n=4, seed=0)
    assert batch.n == 4
    assert list(batch.blocks) == ['forward', 'reversed', 'overlaid']
    for f, r, o in zip(*batch.blocks.values()):
        assert f.relation in ('before', 'after')
        assert r.relation == f.relation
        assert r.pair == (f.pair[1], f.pair[0])
        assert o.relation == 'while'
        assert o.pair == f.pair
    assert len({f.key for f in batch.blocks['forward']}) == 4


def test_stage_a_batch_rows_share_a_class():
    batch = make_batch(STAGE_A, build_stage_a_items(CORPUS), n=5, seed=2)
    for single, dual in zip(batch.blocks['singles'], batch.blocks['duals']):
        assert single.relation == 'single'
        assert dual.relation == 'dual'
        assert single.pair[0] in dual.pair


def test_make_batch_needs_enough_pairs():
    with pytest.raises(PreconditionError):
        make_batch(STAGE_B, build_stage_b_items(CORPUS), n=16, seed=0)


def test_epoch_uses_every_lead_once():
    items = build_stage_b_items(CORPUS)
    batches = list(epoch_batches(STAGE_B, items, n=4, seed=7))
    leads = [item.item_id for b in batches for item in b.blocks['forward']]
    expected = [item.item_id for item in items if item.relation in ('before', 'after')]
    assert sorted(leads) == sorted(expected)
    assert all(b.n <= 4 for b in batches)
    again = [item.item_id for b in epoch_batches(STAGE_B, items, n=4, seed=7) for item in b.blocks['forward']]
    assert again == leads


def test_manifest_round_trip():
    items = build_stage_b_items(CORPUS)[:9]
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'stage_b.jsonl')
        write_manifest(path, items)
        loaded = read_manifest(path, CORPUS)
    assert [item.item_id for item in loaded] == [item.item_id for item in items]
    assert loaded[0].caption == items[0].caption
    np.testing.assert_array_equal(loaded[0].audio.samples, items[0].audio.samples)


def main():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("Dataset Builder Test Suite")
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

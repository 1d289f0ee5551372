"""
Dataset Builder Module
Class-pair enumeration, stage A / stage B item sets, the pair-level
train/test split and block-structured training batches
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import audio_synth
from .audio_synth import Corpus, Waveform
from .caption_gen import (AFTER, BEFORE, DUAL, SINGLE, WHILE, Caption, caption_from_dict,
                          dual_caption, single_caption, temporal_caption)
from .errors import DataIOError, PreconditionError

logger = logging.getLogger(__name__)

STAGE_A = 'A'
STAGE_B = 'B'
STAGES = (STAGE_A, STAGE_B)

TRAIN_POOL = 'train'
HELDOUT_POOL = 'heldout'

STAGE_BLOCKS = {
    STAGE_A: ('singles', 'duals'),
    STAGE_B: ('forward', 'reversed', 'overlaid'),
}

# caption relation -> waveform relation
_AUDIO_RELATION = {
    SINGLE: audio_synth.SINGLE,
    DUAL: audio_synth.CONCAT,
    BEFORE: audio_synth.CONCAT,
    AFTER: audio_synth.CONCAT,
    WHILE: audio_synth.OVERLAY,
}


def enumerate_pairs(num_classes: int) -> List[Tuple[int, int]]:
    """All ordered pairs (i, j) with i != j, i-major"""
    if num_classes < 2:
        raise PreconditionError(f"Need at least 2 classes to form pairs, got {num_classes}")
    return [(i, j) for i in range(num_classes) for j in range(num_classes) if i != j]


def pair_key(pair: Sequence[int]) -> Tuple[int, int]:
    """Unordered key of a class pair"""
    a, b = pair
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class CompositeSample:
    """
    An (audio, caption) training or evaluation item

    The audio is rendered on demand from the corpus clips; ``source_pair`` is
    the ordered class pair the item was built from and decides its split side.
    """

    relation: str
    pair: Tuple[int, ...]
    caption: Caption
    source_pair: Tuple[int, int]
    pool: str = TRAIN_POOL
    corpus: Optional[Corpus] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.relation not in _AUDIO_RELATION:
            raise PreconditionError(f"Unknown item relation '{self.relation}'")
        if self.relation != self.caption.relation:
            raise PreconditionError(
                f"Item relation '{self.relation}' disagrees with caption relation '{self.caption.relation}'"
            )
        if self.pool not in (TRAIN_POOL, HELDOUT_POOL):
            raise PreconditionError(f"Unknown clip pool '{self.pool}'")

    @property
    def item_id(self) -> str:
        return f"{self.relation}_{'_'.join(str(c) for c in self.pair)}_{self.source_pair[0]}_{self.source_pair[1]}"

    @property
    def key(self) -> Tuple[int, int]:
        return pair_key(self.source_pair)

    def instance(self) -> int:
        if self.corpus is None:
            raise PreconditionError("Item is not attached to a corpus")
        instances = (self.corpus.train_instances if self.pool == TRAIN_POOL
                     else self.corpus.heldout_instances)
        a, b = self.key
        return instances[(a * self.corpus.num_classes + b) % len(instances)]

    @property
    def audio(self) -> Waveform:
        inst = self.instance()
        clip = lambda c: self.corpus.clip(c, inst)  # noqa: E731
        if self.relation == SINGLE:
            return clip(self.pair[0])
        i, j = self.pair
        if self.relation == WHILE:
            return audio_synth.overlay(clip(i), clip(j))
        if self.relation == AFTER:
            return audio_synth.concat(clip(j), clip(i))
        return audio_synth.concat(clip(i), clip(j))

    @property
    def audio_relation(self) -> str:
        return _AUDIO_RELATION[self.relation]

    def on_pool(self, pool: str) -> 'CompositeSample':
        return replace(self, pool=pool)

    def to_record(self, wav_path: Optional[str] = None) -> Dict:
        return {
            'item_id': self.item_id,
            'pair': list(self.pair),
            'source_pair': list(self.source_pair),
            'relation': self.relation,
            'pool': self.pool,
            'caption': self.caption.text,
            'caption_meta': self.caption.to_dict(),
            'wav_path': wav_path,
        }


def build_stage_a_items(corpus: Corpus, mode: str = 'both', seed: int = 0) -> List[CompositeSample]:
    """
    Stage A items: per ordered pair (i, j) a single of class i and a dual i -> j

    Args:
        corpus: Clip source
        mode: 'both' keeps the single and the dual of every pair; 'either'
            keeps one of them per pair, chosen with a seeded coin
        seed: Seed for the 'either' coin

    Returns:
        Item list in pair enumeration order
    """
    if mode not in ('both', 'either'):
        raise PreconditionError(f"Unknown stage A mode '{mode}'")
    names = corpus.class_names
    coin = np.random.default_rng(seed)
    items = []
    for i, j in enumerate_pairs(corpus.num_classes):
        single = CompositeSample(SINGLE, (i,), single_caption(i, names), (i, j), corpus=corpus)
        dual = CompositeSample(DUAL, (i, j), dual_caption(i, j, names), (i, j), corpus=corpus)
        if mode == 'both':
            items.extend([single, dual])
        else:
            items.append(single if coin.random() < 0.5 else dual)
    return items


def build_stage_b_items(corpus: Corpus) -> List[CompositeSample]:
    """Stage B items: before, after and while for every ordered pair, 3K(K-1) in total"""
    names = corpus.class_names
    items = []
    for i, j in enumerate_pairs(corpus.num_classes):
        for tau in (BEFORE, AFTER, WHILE):
            items.append(CompositeSample(tau, (i, j), temporal_caption(i, j, tau, names), (i, j),
                                         corpus=corpus))
    return items


def split(items: Sequence[CompositeSample], ratio: float, seed: int,
          holdout: str = 'pairs') -> Tuple[List[CompositeSample], List[CompositeSample]]:
    """
    Partition items on unordered class pairs

    With holdout='pairs' floor(ratio * P) of the P unordered pairs go to train.
    With holdout='classes' floor(ratio * K) classes are training classes and a
    pair is a training pair only when both of its classes are.

    Args:
        items: Items to split
        ratio: Training share in (0, 1)
        seed: Shuffle seed
        holdout: 'pairs' or 'classes'

    Returns:
        (train, test) item lists, each in input order
    """
    if not 0.0 < ratio < 1.0:
        raise PreconditionError(f"Split ratio must be in (0, 1), got {ratio}")
    keys = sorted({item.key for item in items})
    rng = np.random.default_rng(seed)

    if holdout == 'pairs':
        order = rng.permutation(len(keys))
        n_train = int(math.floor(ratio * len(keys)))
        train_keys = {keys[k] for k in order[:n_train]}
    elif holdout == 'classes':
        classes = sorted({c for key in keys for c in key})
        order = rng.permutation(len(classes))
        train_classes = {classes[k] for k in order[:int(math.floor(ratio * len(classes)))]}
        train_keys = {key for key in keys if key[0] in train_classes and key[1] in train_classes}
    else:
        raise PreconditionError(f"Unknown holdout mode '{holdout}'")

    if not train_keys or len(train_keys) == len(keys):
        raise PreconditionError(
            f"Split of {len(keys)} pairs at ratio {ratio} leaves one side empty"
        )
    train = [item for item in items if item.key in train_keys]
    test = [item for item in items if item.key not in train_keys]
    logger.debug(f"Split {len(keys)} pairs into {len(train_keys)} train / {len(keys) - len(train_keys)} test")
    return train, test


def heldout_pairs(corpus: Corpus, ratio: float, seed: int, holdout: str = 'pairs') -> List[Tuple[int, int]]:
    """Unordered class pairs on the test side of split() for this corpus"""
    _, test = split(build_stage_b_items(corpus), ratio, seed, holdout)
    return sorted({item.key for item in test})


@dataclass(frozen=True)
class TrainingBatch:
    """Block-structured batch; row r of every block derives from one class pair"""

    stage: str
    blocks: Dict[str, Tuple[CompositeSample, ...]]

    def __post_init__(self):
        if self.stage not in STAGES:
            raise PreconditionError(f"Unknown stage '{self.stage}'")
        names = STAGE_BLOCKS[self.stage]
        if tuple(self.blocks) != names:
            raise PreconditionError(f"Stage {self.stage} batches have blocks {names}")
        sizes = {len(block) for block in self.blocks.values()}
        if len(sizes) != 1 or 0 in sizes:
            raise PreconditionError("Batch blocks must be non-empty and equally sized")
        lead = self.blocks[names[-1] if self.stage == STAGE_A else 'forward']
        if len({item.key for item in lead}) != len(lead):
            raise PreconditionError("A batch block repeats an underlying class pair")
        if self.stage == STAGE_B:
            for f, r, o in zip(self.blocks['forward'], self.blocks['reversed'], self.blocks['overlaid']):
                if r.pair != (f.pair[1], f.pair[0]) or r.relation != f.relation:
                    raise PreconditionError(f"reversed item {r.item_id} is not the inversion of {f.item_id}")
                if o.relation != WHILE or o.pair != f.pair:
                    raise PreconditionError(f"overlaid item {o.item_id} is not the overlay of {f.item_id}")

    @property
    def n(self) -> int:
        return len(next(iter(self.blocks.values())))

    @property
    def items(self) -> List[CompositeSample]:
        return [item for block in self.blocks.values() for item in block]


class _BatchIndex:
    """Lookup tables that turn a lead item into its aligned batch row"""

    def __init__(self, stage: str, items: Sequence[CompositeSample]):
        if stage not in STAGES:
            raise PreconditionError(f"Unknown stage '{stage}'")
        self.stage = stage
        self.by_relation_pair = {(item.relation, item.pair): item for item in items}
        lead_relations = (DUAL,) if stage == STAGE_A else (BEFORE, AFTER)
        self.leads = [item for item in items if item.relation in lead_relations]
        self.singles_by_class: Dict[int, CompositeSample] = {}
        self.singles_by_source: Dict[Tuple[int, int], CompositeSample] = {}
        for item in items:
            if item.relation == SINGLE:
                self.singles_by_source.setdefault(item.source_pair, item)
                self.singles_by_class.setdefault(item.pair[0], item)

    def leads_by_key(self) -> Dict[Tuple[int, int], List[CompositeSample]]:
        grouped: Dict[Tuple[int, int], List[CompositeSample]] = {}
        for item in self.leads:
            grouped.setdefault(item.key, []).append(item)
        return grouped

    def row(self, lead: CompositeSample) -> Tuple[CompositeSample, ...]:
        if self.stage == STAGE_A:
            single = (self.singles_by_source.get(lead.source_pair)
                      or self.singles_by_class.get(lead.pair[0])
                      or self.singles_by_class.get(lead.pair[1]))
            if single is None:
                raise PreconditionError(f"No single item shares a class with {lead.item_id}")
            return single, lead
        i, j = lead.pair
        reversed_item = self.by_relation_pair.get((lead.relation, (j, i)))
        overlaid_item = self.by_relation_pair.get((WHILE, (i, j)))
        if reversed_item is None or overlaid_item is None:
            raise PreconditionError(f"Missing inversion or overlay variant for {lead.item_id}")
        return lead, reversed_item, overlaid_item

    def assemble(self, leads: Sequence[CompositeSample]) -> TrainingBatch:
        rows = [self.row(lead) for lead in leads]
        names = STAGE_BLOCKS[self.stage]
        blocks = {name: tuple(row[b] for row in rows) for b, name in enumerate(names)}
        return TrainingBatch(stage=self.stage, blocks=blocks)


def make_batch(stage: str, items: Sequence[CompositeSample], n: int, seed: int) -> TrainingBatch:
    """
    Sample one batch of n rows without replacement

    Stage B rows are (forward, reversed, overlaid) where forward is a before or
    after item, reversed is the same relation on the swapped pair and overlaid
    is the while item of the forward pair. Stage A rows are (single, dual).

    Args:
        stage: 'A' or 'B'
        items: Item pool (one split side)
        n: Rows per block
        seed: Sampling seed

    Returns:
        TrainingBatch with n rows on n distinct unordered pairs
    """
    if n < 1:
        raise PreconditionError(f"Batch size must be positive, got {n}")
    index = _BatchIndex(stage, items)
    grouped = index.leads_by_key()
    if len(grouped) < n:
        raise PreconditionError(
            f"Stage {stage} batch of {n} rows needs {n} distinct class pairs, only {len(grouped)} available"
        )
    rng = np.random.default_rng(seed)
    keys = sorted(grouped)
    chosen = rng.choice(len(keys), size=n, replace=False)
    leads = []
    for k in chosen:
        candidates = grouped[keys[k]]
        leads.append(candidates[int(rng.integers(len(candidates)))])
    return index.assemble(leads)


def epoch_batches(stage: str, items: Sequence[CompositeSample], n: int, seed: int) -> Iterator[TrainingBatch]:
    """
    Yield the batches of one epoch

    Every lead item is used exactly once. Leads are dealt in rounds that take at
    most one lead per unordered pair, and each round is cut into near-equal
    batches of at most n rows, so no batch repeats a pair.
    """
    if n < 1:
        raise PreconditionError(f"Batch size must be positive, got {n}")
    index = _BatchIndex(stage, items)
    grouped = index.leads_by_key()
    if not grouped:
        raise PreconditionError(f"No stage {stage} lead items to batch")
    rng = np.random.default_rng(seed)
    keys = sorted(grouped)
    queues = {key: [grouped[key][k] for k in rng.permutation(len(grouped[key]))] for key in keys}
    rounds = max(len(queue) for queue in queues.values())
    for r in range(rounds):
        round_leads = [queues[key][r] for key in keys if r < len(queues[key])]
        order = rng.permutation(len(round_leads))
        for chunk in np.array_split(order, math.ceil(len(round_leads) / n)):
            yield index.assemble([round_leads[k] for k in chunk])


def write_manifest(path: str, items: Sequence[CompositeSample],
                   wav_paths: Optional[Dict[str, str]] = None):
    """Write items as JSON lines {item_id, pair, relation, caption, wav_path, ...}"""
    try:
        with open(path, 'w', encoding='utf-8') as f:
            for item in items:
                f.write(json.dumps(item.to_record((wav_paths or {}).get(item.item_id))) + '\n')
    except OSError as e:
        raise DataIOError(f"Failed to write manifest {path}: {e}") from e


def read_manifest(path: str, corpus: Optional[Corpus] = None) -> List[CompositeSample]:
    """Read a JSON-lines manifest back into items, optionally attached to a corpus"""
    items = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    items.append(CompositeSample(
                        relation=record['relation'],
                        pair=tuple(record['pair']),
                        caption=caption_from_dict(record['caption_meta']),
                        source_pair=tuple(record['source_pair']),
                        pool=record.get('pool', TRAIN_POOL),
                        corpus=corpus,
                    ))
                except (ValueError, KeyError) as e:
                    raise DataIOError(f"{path}:{line_no}: bad manifest record: {e}") from e
    except OSError as e:
        raise DataIOError(f"Failed to read manifest {path}: {e}") from e
    return items

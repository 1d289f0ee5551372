"""
Zero-Shot Temporal Evaluation Module
Five-task zero-shot evaluation suite, calibration models and chance levels
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import softmax

from . import audio_synth
from .audio_synth import Corpus, Waveform
from .caption_gen import (Caption, order_prompt, parse_caption, simultaneous_prompt,
                          sound_of_prompt, temporal_caption)
from .errors import ConfigError, DataIOError, PreconditionError

logger = logging.getLogger(__name__)

REPORT_KEYS = ('1A', '2A', '2B', '2C', '2D', '3A', '3B', '4A', '4B', '5A', '5B')
TASK_KEYS = {
    1: ('1A',),
    2: ('2A', '2B', '2C', '2D'),
    3: ('3A', '3B'),
    4: ('4A', '4B'),
    5: ('5A', '5B'),
}


@dataclass
class EvalConfig:
    """Zero-shot evaluation options"""

    tasks: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    task1_prompt: str = 'sound_of'
    distractors: int = 3
    task5b_prompts: int = 50
    chance_trials: int = 100000
    max_pairs: Optional[int] = None

    def validate(self):
        unknown = set(self.tasks) - set(TASK_KEYS)
        if unknown or not self.tasks:
            raise ConfigError(f"tasks must be a non-empty subset of 1..5, got {self.tasks}")
        if self.task1_prompt not in ('sound_of', 'this_is'):
            raise ConfigError("task1_prompt must be 'sound_of' or 'this_is'")
        if self.distractors != 3:
            raise ConfigError("Task 4 builds one distractor per correct-pair prompt, so distractors must be 3")
        if self.task5b_prompts < 3:
            raise ConfigError("task5b_prompts must be >= 3")
        if self.chance_trials < 1:
            raise ConfigError("chance_trials must be positive")
        if self.max_pairs is not None and self.max_pairs < 1:
            raise ConfigError("max_pairs must be positive")


class ZeroShotModel(Protocol):
    gamma: float

    def embed_audio(self, w: Waveform) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class PromptSet:
    prompts: Tuple[Caption, ...]
    correct: FrozenSet[int]
    task: str

    def __post_init__(self):
        if not self.prompts:
            raise PreconditionError("Prompt set is empty")
        if len(self.correct) not in (1, 2) or not all(0 <= k < len(self.prompts) for k in self.correct):
            raise PreconditionError(f"Invalid correct indices {sorted(self.correct)}")

    @property
    def texts(self) -> List[str]:
        return [p.text for p in self.prompts]


def zs_classify(audio: Union[Waveform, np.ndarray], prompt_set: Union[PromptSet, Sequence[str]],
                model: ZeroShotModel) -> np.ndarray:
    """
    Softmax over gamma-scaled cosine similarities of one clip against prompts

    Args:
        audio: Waveform, or its precomputed unit embedding
        prompt_set: PromptSet or plain prompt texts
        model: Object with gamma, embed_audio and embed_text

    Returns:
        Probability vector aligned with the prompts
    """
    texts = prompt_set.texts if isinstance(prompt_set, PromptSet) else list(prompt_set)
    if not texts:
        raise PreconditionError("Cannot classify against an empty prompt set")
    z_a = audio if isinstance(audio, np.ndarray) else model.embed_audio(audio)
    z_c = np.stack([model.embed_text(t) for t in texts])
    return softmax(model.gamma * (z_c @ z_a))


def predict(probs: np.ndarray) -> int:
    """Argmax with ties going to the lowest index"""
    return int(np.argmax(probs))


def top_k(probs: np.ndarray, k: int) -> List[int]:
    """Indices of the k largest probabilities; ties go to the lowest index"""
    return [int(i) for i in np.argsort(-probs, kind='stable')[:k]]


# (class, role) facts shared by the oracle and Task 4B
PRESENT, FIRST, SECOND, SIMULTANEOUS = 'present', 'first', 'second', 'simultaneous'


def clip_facts(w: Waveform) -> FrozenSet[Tuple[int, str]]:
    if w.relation == audio_synth.SINGLE:
        return frozenset({(w.class_ids[0], PRESENT)})
    a, b = w.class_ids
    if w.relation == audio_synth.CONCAT:
        return frozenset({(a, PRESENT), (b, PRESENT), (a, FIRST), (b, SECOND)})
    return frozenset({(a, PRESENT), (b, PRESENT), (a, SIMULTANEOUS), (b, SIMULTANEOUS)})


def caption_facts(cap: Caption) -> FrozenSet[Tuple[int, str]]:
    ids = cap.class_ids
    present = {(c, PRESENT) for c in ids}
    if cap.template in ('single', 'sound_of', 'this_is'):
        return frozenset(present)
    if cap.template in ('dual', 'before'):
        return frozenset(present | {(ids[0], FIRST), (ids[1], SECOND)})
    if cap.template == 'after':
        return frozenset(present | {(ids[1], FIRST), (ids[0], SECOND)})
    if cap.template in ('while', 'simultaneous'):
        return frozenset(present | {(c, SIMULTANEOUS) for c in ids})
    return frozenset(present | {(ids[0], cap.template)})


def role_facts(facts: Iterable[Tuple[int, str]]) -> FrozenSet[Tuple[int, str]]:
    return frozenset(f for f in facts if f[1] != PRESENT)


class OracleModel:
    """
    Label-aware test double: clips and prompts embed as normalised indicator
    vectors over (class, role) facts
    """

    ROLES = (PRESENT, FIRST, SECOND, SIMULTANEOUS)

    def __init__(self, class_names: Sequence[str], gamma: float = 10.0):
        self.class_names = list(class_names)
        self.gamma = gamma

    def _vector(self, facts: Iterable[Tuple[int, str]]) -> np.ndarray:
        v = np.zeros(len(self.ROLES) * len(self.class_names))
        for class_id, role in facts:
            v[self.ROLES.index(role) * len(self.class_names) + class_id] = 1.0
        return v / np.linalg.norm(v)

    def embed_audio(self, w: Waveform) -> np.ndarray:
        return self._vector(clip_facts(w))

    def embed_text(self, text: str) -> np.ndarray:
        return self._vector(caption_facts(parse_caption(text, self.class_names)))


class RandomEmbeddingModel:
    """Uniform random scorer: every distinct input maps to a seeded random unit vector"""

    def __init__(self, dim: int = 32, seed: int = 0, gamma: float = 10.0):
        self.dim = dim
        self.seed = seed
        self.gamma = gamma

    def _vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        rng = np.random.default_rng([self.seed, int.from_bytes(digest[:8], 'little')])
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed_audio(self, w: Waveform) -> np.ndarray:
        return self._vector(b'audio' + w.samples.tobytes() + repr(w.class_ids).encode())

    def embed_text(self, text: str) -> np.ndarray:
        return self._vector(b'text' + text.encode('utf-8'))


class EvalSet:
    """Held-out clips of the evaluation: single clips of every class and held-out pairs"""

    def __init__(self, corpus: Corpus, pairs: Iterable[Tuple[int, int]]):
        self.corpus = corpus
        self.pairs = sorted({(min(p), max(p)) for p in pairs})
        if not self.pairs:
            raise PreconditionError("Evaluation needs at least one held-out pair")
        self._clips: Dict[Tuple, Waveform] = {}

    def limited(self, max_pairs: Optional[int], seed: int) -> 'EvalSet':
        if max_pairs is None or max_pairs >= len(self.pairs):
            return self
        picks = np.random.default_rng(seed).choice(len(self.pairs), size=max_pairs, replace=False)
        return EvalSet(self.corpus, [self.pairs[k] for k in sorted(picks)])

    @property
    def class_names(self) -> List[str]:
        return self.corpus.class_names

    def _instance(self, a: int, b: int) -> int:
        instances = self.corpus.heldout_instances
        return instances[(a * self.corpus.num_classes + b) % len(instances)]

    def singles(self) -> List[Tuple[Tuple, Waveform]]:
        return [(('single', c, inst), self.corpus.clip(c, inst))
                for c in range(self.corpus.num_classes) for inst in self.corpus.heldout_instances]

    def concats(self) -> List[Tuple[Tuple, Waveform]]:
        clips = []
        for a, b in self.pairs:
            inst = self._instance(a, b)
            for first, second in ((a, b), (b, a)):
                key = ('concat', first, second)
                if key not in self._clips:
                    self._clips[key] = audio_synth.concat(self.corpus.clip(first, inst),
                                                          self.corpus.clip(second, inst))
                clips.append((key, self._clips[key]))
        return clips

    def overlays(self) -> List[Tuple[Tuple, Waveform]]:
        clips = []
        for a, b in self.pairs:
            key = ('overlay', a, b)
            if key not in self._clips:
                inst = self._instance(a, b)
                self._clips[key] = audio_synth.overlay(self.corpus.clip(a, inst), self.corpus.clip(b, inst))
            clips.append((key, self._clips[key]))
        return clips


@dataclass
class TaskResult:
    accuracies: Dict[str, float]
    counts: Dict[str, int]
    scores: Dict[str, List[float]] = field(default_factory=dict, repr=False)


class ZsteHarness:
    """Runs the evaluation tasks of one model over one EvalSet"""

    def __init__(self, model: ZeroShotModel, eval_set: EvalSet,
                 cfg: Optional[EvalConfig] = None, seed: int = 0):
        self.model = model
        self.eval_set = eval_set
        self.cfg = cfg or EvalConfig()
        self.seed = seed
        self.names = eval_set.class_names
        self._audio: Dict[Tuple, np.ndarray] = {}

    def _embed(self, key: Tuple, w: Waveform) -> np.ndarray:
        if key not in self._audio:
            self._audio[key] = self.model.embed_audio(w)
        return self._audio[key]

    def _classify(self, key: Tuple, w: Waveform, prompt_set: PromptSet) -> np.ndarray:
        return zs_classify(self._embed(key, w), prompt_set, self.model)

    def _rng(self, task: str, key: Tuple) -> np.random.Generator:
        digest = hashlib.sha256(f"{task}:{key}".encode()).digest()
        return np.random.default_rng([self.seed, int.from_bytes(digest[:8], 'little')])

    def class_prompts(self) -> Tuple[Caption, ...]:
        return tuple(sound_of_prompt(c, self.names, self.cfg.task1_prompt) for c in range(len(self.names)))

    def task1(self) -> TaskResult:
        """Single held-out clips against one prompt per class"""
        prompts = self.class_prompts()
        scores = []
        for key, w in self.eval_set.singles():
            prompt_set = PromptSet(prompts, frozenset({w.class_ids[0]}), '1A')
            scores.append(float(predict(self._classify(key, w, prompt_set)) in prompt_set.correct))
        return _result({'1A': scores})

    def task2(self) -> TaskResult:
        """Two-event clips against one prompt per class; top-2 scored order-free"""
        prompts = self.class_prompts()
        scores: Dict[str, List[float]] = {k: [] for k in TASK_KEYS[2]}
        for clips, exact_key, any_key in ((self.eval_set.concats(), '2A', '2B'),
                                          (self.eval_set.overlays(), '2C', '2D')):
            for key, w in clips:
                prompt_set = PromptSet(prompts, frozenset(w.class_ids), exact_key)
                hits = len(set(top_k(self._classify(key, w, prompt_set), 2)) & prompt_set.correct)
                scores[exact_key].append(float(hits == 2))
                scores[any_key].append(float(hits >= 1))
        return _result(scores)

    def temporal_prompts(self, a: int, b: int) -> Tuple[Caption, ...]:
        """'a before b', 'b before a', 'a while b'"""
        return (temporal_caption(a, b, 'before', self.names),
                temporal_caption(b, a, 'before', self.names),
                temporal_caption(a, b, 'while', self.names))

    def _exact_temporal(self, w: Waveform, prompts: Sequence[Caption]) -> int:
        facts = role_facts(clip_facts(w))
        matches = [k for k, p in enumerate(prompts) if role_facts(caption_facts(p)) == facts]
        if len(matches) != 1:
            raise PreconditionError(f"Clip {w.class_ids} has {len(matches)} exact temporal prompts")
        return matches[0]

    def task3(self, swap_classes: bool = False) -> TaskResult:
        """
        Composite clips against the three temporal prompts of their pair

        Args:
            swap_classes: Build the prompts from (b, a) instead of (a, b)
        """
        scores: Dict[str, List[float]] = {k: [] for k in TASK_KEYS[3]}
        for clips, task_key in ((self.eval_set.concats(), '3A'), (self.eval_set.overlays(), '3B')):
            for key, w in clips:
                a, b = sorted(w.class_ids)
                if swap_classes:
                    a, b = b, a
                prompts = self.temporal_prompts(a, b)
                prompt_set = PromptSet(prompts, frozenset({self._exact_temporal(w, prompts)}), task_key)
                scores[task_key].append(float(predict(self._classify(key, w, prompt_set)) in prompt_set.correct))
        return _result(scores)

    def _distractor_prompts(self, key: Tuple, a: int, b: int) -> Tuple[Caption, ...]:
        """Each correct-pair temporal prompt with one slot replaced by a class absent from the clip"""
        rng = self._rng('4', key)
        others = [c for c in range(len(self.names)) if c not in (a, b)]
        replaced = []
        for prompt in self.temporal_prompts(a, b):
            slots = list(prompt.class_ids)
            slots[int(rng.integers(2))] = others[int(rng.integers(len(others)))]
            replaced.append(temporal_caption(slots[0], slots[1], prompt.relation, self.names))
        return tuple(replaced)

    def task4(self) -> TaskResult:
        """
        Composite clips against 3 correct-pair and 3 distractor temporal prompts

        4A counts the exactly correct prompt; 4B counts any prompt that agrees
        with the clip on at least one (class, role) fact.
        """
        if len(self.names) < 4:
            raise PreconditionError("Task 4 needs at least 4 classes for distractors")
        scores: Dict[str, List[float]] = {k: [] for k in TASK_KEYS[4]}
        for key, w in self.eval_set.concats() + self.eval_set.overlays():
            a, b = sorted(w.class_ids)
            prompts = self.temporal_prompts(a, b) + self._distractor_prompts(key, a, b)
            prompt_set = PromptSet(prompts, frozenset({self._exact_temporal(w, prompts[:3])}), '4A')
            choice = predict(self._classify(key, w, prompt_set))
            scores['4A'].append(float(choice in prompt_set.correct))
            shared = role_facts(caption_facts(prompts[choice])) & role_facts(clip_facts(w))
            scores['4B'].append(float(bool(shared)))
        return _result(scores)

    def task5(self) -> TaskResult:
        """
        5A: first/second-sound prompts on concatenations; 5B: simultaneous-sound
        prompts with seeded distractor pairs on overlays. Top-2 selection scores
        1, 0.5 or 0.
        """
        scores: Dict[str, List[float]] = {k: [] for k in TASK_KEYS[5]}
        for key, w in self.eval_set.concats():
            a, b = sorted(w.class_ids)
            first, second = w.class_ids
            prompts = (order_prompt(a, 'first', self.names), order_prompt(b, 'first', self.names),
                       order_prompt(a, 'second', self.names), order_prompt(b, 'second', self.names))
            correct = frozenset({prompts.index(order_prompt(first, 'first', self.names)),
                                 prompts.index(order_prompt(second, 'second', self.names))})
            prompt_set = PromptSet(prompts, correct, '5A')
            chosen = set(top_k(self._classify(key, w, prompt_set), 2))
            scores['5A'].append(len(chosen & correct) / 2.0)

        for key, w in self.eval_set.overlays():
            prompt_set = self._simultaneous_prompts(key, *w.class_ids)
            chosen = set(top_k(self._classify(key, w, prompt_set), 2))
            scores['5B'].append(len(chosen & prompt_set.correct) / 2.0)
        return _result(scores)

    def _simultaneous_prompts(self, key: Tuple, a: int, b: int) -> PromptSet:
        rng = self._rng('5B', key)
        k = len(self.names)
        candidates = [(x, y) for x in range(k) for y in range(k) if x != y and {x, y} != {a, b}]
        n_distractors = min(self.cfg.task5b_prompts - 2, len(candidates))
        picks = rng.choice(len(candidates), size=n_distractors, replace=False)
        pairs = [(a, b), (b, a)] + [candidates[p] for p in picks]
        order = rng.permutation(len(pairs))
        prompts = tuple(simultaneous_prompt(*pairs[o], self.names) for o in order)
        correct = frozenset(int(np.flatnonzero(order == k)[0]) for k in (0, 1))
        return PromptSet(prompts, correct, '5B')

    def run(self, tasks: Optional[Sequence[int]] = None) -> Dict[str, TaskResult]:
        runners = {1: self.task1, 2: self.task2, 3: self.task3, 4: self.task4, 5: self.task5}
        results = {}
        for task in tasks or self.cfg.tasks:
            logger.info(f"Running zero-shot task {task}")
            results[str(task)] = runners[task]()
        return results


def _result(scores: Dict[str, List[float]]) -> TaskResult:
    for key, values in scores.items():
        if not values:
            raise PreconditionError(f"Task {key} has no evaluation clips")
    return TaskResult(
        accuracies={k: float(np.mean(v)) for k, v in scores.items()},
        counts={k: len(v) for k, v in scores.items()},
        scores=scores,
    )


def task1(model: ZeroShotModel, eval_set: EvalSet, cfg: Optional[EvalConfig] = None, seed: int = 0) -> float:
    return ZsteHarness(model, eval_set, cfg, seed).task1().accuracies['1A']


def task2(model: ZeroShotModel, eval_set: EvalSet, cfg: Optional[EvalConfig] = None, seed: int = 0) -> Dict[str, float]:
    return ZsteHarness(model, eval_set, cfg, seed).task2().accuracies


def task3(model: ZeroShotModel, eval_set: EvalSet, cfg: Optional[EvalConfig] = None, seed: int = 0) -> Dict[str, float]:
    return ZsteHarness(model, eval_set, cfg, seed).task3().accuracies


def task4(model: ZeroShotModel, eval_set: EvalSet, cfg: Optional[EvalConfig] = None, seed: int = 0) -> Dict[str, float]:
    return ZsteHarness(model, eval_set, cfg, seed).task4().accuracies


def task5(model: ZeroShotModel, eval_set: EvalSet, cfg: Optional[EvalConfig] = None, seed: int = 0) -> Dict[str, float]:
    return ZsteHarness(model, eval_set, cfg, seed).task5().accuracies


@dataclass(frozen=True)
class Chance:
    """Per-clip score distribution of a uniform random scorer"""

    mean: float
    variance: float
    bernoulli: bool = True


def chance_levels(num_classes: int, task5b_prompts: int = 50) -> Dict[str, Chance]:
    """
    Analytic chance levels

    Task 4B is 1/3: of the six candidates only the exact prompt and its own
    distractor keep a (class, role) fact of the clip.
    """
    k = num_classes
    pairs = math.comb(k, 2)
    two_correct = 1.0 / pairs
    any_correct = 1.0 - math.comb(k - 2, 2) / pairs
    n5 = min(task5b_prompts, 2 + k * (k - 1) - 2)
    p_both_5b = 1.0 / math.comb(n5, 2)
    p_one_5b = 2.0 * (n5 - 2) / math.comb(n5, 2)

    def scored(p_both: float, p_one: float) -> Chance:
        mean = p_both + 0.5 * p_one
        return Chance(mean, p_both + 0.25 * p_one - mean ** 2, bernoulli=False)

    return {
        '1A': Chance(1.0 / k, (1.0 / k) * (1 - 1.0 / k)),
        '2A': Chance(two_correct, two_correct * (1 - two_correct)),
        '2B': Chance(any_correct, any_correct * (1 - any_correct)),
        '2C': Chance(two_correct, two_correct * (1 - two_correct)),
        '2D': Chance(any_correct, any_correct * (1 - any_correct)),
        '3A': Chance(1 / 3, 2 / 9),
        '3B': Chance(1 / 3, 2 / 9),
        '4A': Chance(1 / 6, 5 / 36),
        '4B': Chance(1 / 3, 2 / 9),
        '5A': scored(1 / 6, 4 / 6),
        '5B': scored(p_both_5b, p_one_5b),
    }


def monte_carlo_chance(n_prompts: int, correct: int, top: int, trials: int = 100000,
                       seed: int = 0, partial: bool = False) -> Tuple[float, float]:
    """
    Simulated per-clip score of random rankings

    Args:
        n_prompts: Candidates per clip
        correct: Number of correct candidates (indices 0 .. correct - 1)
        top: How many top-ranked candidates are selected
        trials: Simulated clips
        seed: RNG seed
        partial: Score the fraction of correct picks instead of all-or-nothing

    Returns:
        (mean, variance) of the per-clip score
    """
    rng = np.random.default_rng(seed)
    ranks = np.argsort(rng.random((trials, n_prompts)), axis=1)[:, :top]
    hits = (ranks < correct).sum(axis=1)
    scores = hits / top if partial else (hits == min(correct, top)).astype(float)
    return float(scores.mean()), float(scores.var())


def chance_interval(chance: Chance, n_clips: int, level: float = 0.99) -> Tuple[float, float]:
    """Central interval of the accuracy a random scorer reaches over n_clips clips"""
    if n_clips < 1:
        raise PreconditionError("n_clips must be positive")
    if chance.bernoulli:
        low, high = stats.binom.interval(level, n_clips, chance.mean)
        return float(low) / n_clips, float(high) / n_clips
    half = stats.norm.ppf(0.5 + level / 2) * math.sqrt(chance.variance / n_clips)
    return chance.mean - half, chance.mean + half


@dataclass
class ZsteReport:
    """Accuracies per subtask with the provenance of the run"""

    accuracies: Dict[str, float]
    counts: Dict[str, int]
    seed: int
    checkpoint_id: Optional[str] = None
    fingerprint: Optional[str] = None
    model: str = 'checkpoint'
    chance: Dict[str, float] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ZsteReport':
        return cls(**data)

    def to_frame(self) -> pd.DataFrame:
        row = {'model': self.model, 'seed': self.seed, 'checkpoint_id': self.checkpoint_id,
               'fingerprint': self.fingerprint}
        row.update({k: self.accuracies[k] for k in REPORT_KEYS if k in self.accuracies})
        return pd.DataFrame([row])

    def save(self, json_path: str, csv_path: Optional[str] = None):
        try:
            with open(json_path, 'w', encoding='utf-8') as f:
                f.write(self.to_json())
            if csv_path:
                self.to_frame().to_csv(csv_path, index=False)
        except OSError as e:
            raise DataIOError(f"Failed to write evaluation report: {e}") from e

    @classmethod
    def load(cls, path: str) -> 'ZsteReport':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return cls.from_dict(json.load(f))
        except (OSError, ValueError) as e:
            raise DataIOError(f"Failed to read evaluation report {path}: {e}") from e


def build_report(results: Dict[str, TaskResult], seed: int, tasks: Sequence[int] = (1, 2, 3, 4, 5),
                 checkpoint_id: Optional[str] = None, fingerprint: Optional[str] = None,
                 model: str = 'checkpoint', num_classes: Optional[int] = None,
                 cfg: Optional[EvalConfig] = None) -> ZsteReport:
    """
    Collect task results into one report

    Raises:
        PreconditionError: A requested task has no result
    """
    accuracies: Dict[str, float] = {}
    counts: Dict[str, int] = {}
    for task in tasks:
        result = results.get(str(task))
        if result is None or any(k not in result.accuracies for k in TASK_KEYS[task]):
            raise PreconditionError(f"Missing results for task {task}")
        accuracies.update(result.accuracies)
        counts.update(result.counts)
    for key, value in accuracies.items():
        if not 0.0 <= value <= 1.0:
            raise PreconditionError(f"Accuracy {key}={value} outside [0, 1]")

    cfg = cfg or EvalConfig()
    chance: Dict[str, float] = {}
    simulated: Dict[str, float] = {}
    if num_classes is not None:
        chance = {k: c.mean for k, c in chance_levels(num_classes, cfg.task5b_prompts).items()
                  if k in accuracies}
        if '4B' in accuracies:
            simulated['4B'] = monte_carlo_chance(6, 2, 1, cfg.chance_trials, seed)[0]
        if '5B' in accuracies:
            n5 = min(cfg.task5b_prompts, num_classes * (num_classes - 1))
            simulated['5B'] = monte_carlo_chance(n5, 2, 2, cfg.chance_trials, seed, partial=True)[0]
    return ZsteReport(
        accuracies={k: accuracies[k] for k in REPORT_KEYS if k in accuracies},
        counts={k: counts[k] for k in REPORT_KEYS if k in counts},
        seed=seed,
        checkpoint_id=checkpoint_id,
        fingerprint=fingerprint,
        model=model,
        chance=chance,
        metadata={
            'task3_split': '3A scores concatenated clips, 3B overlaid clips',
            'task4_clips': 'concatenated clips in both orders and overlaid clips',
            'task4b_rule': 'argmax prompt shares at least one (class, role) fact with the clip',
            'task5b_distractors': 'ordered pairs drawn uniformly without replacement per clip',
            'task1_prompt': cfg.task1_prompt,
            'chance_monte_carlo': simulated,
        },
    )


def evaluate(model: ZeroShotModel, eval_set: EvalSet, cfg: Optional[EvalConfig] = None, seed: int = 0,
             checkpoint_id: Optional[str] = None, fingerprint: Optional[str] = None,
             model_name: str = 'checkpoint') -> ZsteReport:
    """
    Run the configured tasks and build their report

    Args:
        model: Zero-shot model under test
        eval_set: Held-out clips and pairs
        cfg: Evaluation options; max_pairs subsamples the pairs with seed
        seed: Evaluation seed
        checkpoint_id: Identifier of the evaluated parameters
        fingerprint: Run-config fingerprint
        model_name: 'checkpoint', 'oracle' or 'random'

    Returns:
        ZsteReport
    """
    cfg = cfg or EvalConfig()
    cfg.validate()
    eval_set = eval_set.limited(cfg.max_pairs, seed)
    results = ZsteHarness(model, eval_set, cfg, seed).run()
    report = build_report(results, seed, cfg.tasks, checkpoint_id, fingerprint, model_name,
                          len(eval_set.class_names), cfg)
    logger.info("Zero-shot accuracies: " + ", ".join(f"{k}={v:.3f}" for k, v in report.accuracies.items()))
    return report

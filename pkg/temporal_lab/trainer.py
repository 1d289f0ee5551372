"""
Trainer Module
Two-stage post-training of the trainable projections: stage A (single vs dual
sounds) followed by stage B (temporal order)
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from .audio_synth import Corpus
from .caption_gen import Vocabulary, tokenize
from .dataset_builder import (HELDOUT_POOL, STAGE_A, STAGE_B, CompositeSample, TrainingBatch,
                              build_stage_a_items, build_stage_b_items, epoch_batches, split)
from .encoder import (TRAINABLE_NAMES, EncoderParams, audio_base, extract_features, init_params,
                      save_checkpoint, text_base)
from .errors import ConfigError, DataIOError, NumericError
from .tnce_loss import BaseBatch, LossCoefficients, loss_and_grad

if TYPE_CHECKING:
    from .settings import RunConfig

logger = logging.getLogger(__name__)

STAGE_ORDERS = {'AB': (STAGE_A, STAGE_B), 'B': (STAGE_B,)}
OPTIMIZERS = ('adam', 'sgd')


@dataclass
class TrainConfig:
    """Training protocol; epochs are per stage and batch_size is rows per block"""

    stages: str = 'AB'
    epochs_a: int = 30
    epochs_b: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-4
    optimizer: str = 'adam'
    split_ratio: float = 0.7
    holdout: str = 'pairs'
    stage_a_mode: str = 'both'

    def validate(self):
        if self.stages not in STAGE_ORDERS:
            raise ConfigError(f"stages must be one of {sorted(STAGE_ORDERS)}, got '{self.stages}'")
        if self.epochs_a < 1 or self.epochs_b < 1:
            raise ConfigError("epochs per stage must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must be in (0, 1)")
        if self.holdout not in ('pairs', 'classes'):
            raise ConfigError("holdout must be 'pairs' or 'classes'")
        if self.stage_a_mode not in ('both', 'either'):
            raise ConfigError("stage_a_mode must be 'both' or 'either'")

    def epochs(self, stage: str) -> int:
        return self.epochs_a if stage == STAGE_A else self.epochs_b


@dataclass
class EpochRecord:
    stage: str
    epoch: int
    train_loss: float
    heldout_loss: float
    wall_time: float


@dataclass
class TrainReport:
    """Per-epoch curves of every stage run, in order"""

    records: List[EpochRecord] = field(default_factory=list)
    stage_checkpoints: Dict[str, str] = field(default_factory=dict)
    final_checkpoint_id: Optional[str] = None
    fingerprint: Optional[str] = None
    parameter_counts: Dict[str, float] = field(default_factory=dict)

    def curve(self, stage: str, column: str = 'train_loss') -> List[float]:
        return [getattr(r, column) for r in self.records if r.stage == stage]

    @property
    def final_heldout_loss(self) -> Optional[float]:
        return self.records[-1].heldout_loss if self.records else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'records': [asdict(r) for r in self.records],
            'stage_checkpoints': self.stage_checkpoints,
            'final_checkpoint_id': self.final_checkpoint_id,
            'fingerprint': self.fingerprint,
            'parameter_counts': self.parameter_counts,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainReport':
        return cls(
            records=[EpochRecord(**r) for r in data['records']],
            stage_checkpoints=dict(data.get('stage_checkpoints', {})),
            final_checkpoint_id=data.get('final_checkpoint_id'),
            fingerprint=data.get('fingerprint'),
            parameter_counts=dict(data.get('parameter_counts', {})),
        )

    def curves_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records],
                            columns=['stage', 'epoch', 'train_loss', 'heldout_loss', 'wall_time'])

    def save(self, json_path: str, csv_path: Optional[str] = None):
        try:
            with open(json_path, 'w', encoding='utf-8') as f:
                json.dump(self.to_dict(), f, indent=2)
            if csv_path:
                self.curves_frame().to_csv(csv_path, index=False)
        except OSError as e:
            raise DataIOError(f"Failed to write training report: {e}") from e


@dataclass
class TrainingData:
    """Corpus, vocabulary and the pair-level splits of both stages"""

    corpus: Corpus
    vocab: Vocabulary
    stage_a_train: List[CompositeSample]
    stage_a_test: List[CompositeSample]
    stage_b_train: List[CompositeSample]
    stage_b_test: List[CompositeSample]

    def items(self, stage: str, side: str) -> List[CompositeSample]:
        if stage == STAGE_A:
            return self.stage_a_train if side == 'train' else self.stage_a_test
        return self.stage_b_train if side == 'train' else self.stage_b_test

    @property
    def test_keys(self) -> set:
        return {item.key for item in self.stage_b_test}


def prepare_data(corpus: Corpus, cfg: TrainConfig, split_seed: int) -> TrainingData:
    """
    Build both item sets and split them with one seed, so the two stages share
    the same held-out pairs; test items draw their audio from held-out clips
    """
    stage_a = build_stage_a_items(corpus, mode=cfg.stage_a_mode, seed=split_seed)
    stage_b = build_stage_b_items(corpus)
    a_train, a_test = split(stage_a, cfg.split_ratio, split_seed, cfg.holdout)
    b_train, b_test = split(stage_b, cfg.split_ratio, split_seed, cfg.holdout)
    logger.info(f"Prepared {len(a_train)}/{len(a_test)} stage A and {len(b_train)}/{len(b_test)} "
                f"stage B train/test items")
    return TrainingData(
        corpus=corpus,
        vocab=Vocabulary.build(corpus.class_names),
        stage_a_train=a_train,
        stage_a_test=[item.on_pool(HELDOUT_POOL) for item in a_test],
        stage_b_train=b_train,
        stage_b_test=[item.on_pool(HELDOUT_POOL) for item in b_test],
    )


def calibration_features(data: TrainingData, feature_cfg) -> list:
    """Features of every training-instance single clip"""
    corpus = data.corpus
    return [extract_features(corpus.clip(c, inst), feature_cfg)
            for c in range(corpus.num_classes) for inst in corpus.train_instances]


class FeatureCache:
    """Frozen-base outputs per item; valid for as long as the frozen block is, i.e. forever"""

    def __init__(self, params: EncoderParams, vocab: Vocabulary):
        self.params = params
        self.vocab = vocab
        self._audio: Dict[Tuple[str, str], np.ndarray] = {}
        self._text: Dict[str, np.ndarray] = {}

    def audio(self, item: CompositeSample) -> np.ndarray:
        key = (item.item_id, item.pool)
        if key not in self._audio:
            features = extract_features(item.audio, self.params.feature_cfg)
            self._audio[key] = audio_base(features, self.params)
        return self._audio[key]

    def text(self, item: CompositeSample) -> np.ndarray:
        text = item.caption.text
        if text not in self._text:
            self._text[text] = text_base(tokenize(text, self.vocab), self.params)
        return self._text[text]

    def base_batch(self, batch: TrainingBatch) -> BaseBatch:
        items = batch.items
        sizes = tuple(len(block) for block in batch.blocks.values())
        singles, duals = (), ()
        if batch.stage == STAGE_A:
            singles = tuple(item.pair[0] for item in batch.blocks['singles'])
            duals = tuple(tuple(item.pair) for item in batch.blocks['duals'])
        return BaseBatch(
            stage=batch.stage,
            h_a=np.stack([self.audio(item) for item in items]),
            h_c=np.stack([self.text(item) for item in items]),
            block_sizes=sizes,
            single_classes=singles,
            dual_pairs=duals,
            item_ids=tuple(item.item_id for item in items),
        )


class Trainer:
    """Optimises the trainable projections of one EncoderParams in place"""

    def __init__(self, params: EncoderParams, data: TrainingData, cfg: TrainConfig,
                 coeffs: LossCoefficients, batch_seed: int, eval_seed: int,
                 on_epoch: Optional[Callable[[EpochRecord], None]] = None):
        self.params = params
        self.data = data
        self.cfg = cfg
        self.coeffs = coeffs
        self.batch_seed = batch_seed
        self.eval_seed = eval_seed
        self.on_epoch = on_epoch
        self.cache = FeatureCache(params, data.vocab)
        self.tensors = {name: torch.from_numpy(params.trainable[name]) for name in TRAINABLE_NAMES}
        for tensor in self.tensors.values():
            tensor.requires_grad_(True)

    def _make_optimizer(self) -> torch.optim.Optimizer:
        tensors = [self.tensors[name] for name in TRAINABLE_NAMES]
        if self.cfg.optimizer == 'sgd':
            return torch.optim.SGD(tensors, lr=self.cfg.learning_rate)
        return torch.optim.Adam(tensors, lr=self.cfg.learning_rate)

    def _heldout_batches(self, stage: str) -> List[BaseBatch]:
        test = self.data.items(stage, 'test')
        return [self.cache.base_batch(b) for b in epoch_batches(stage, test, self.cfg.batch_size, self.eval_seed)]

    def mean_loss(self, batches: Sequence[BaseBatch]) -> float:
        """Loss per anchor row over a fixed set of batches"""
        total, rows = 0.0, 0
        for base in batches:
            loss, _ = loss_and_grad(base, self.params, self.coeffs)
            total += loss
            rows += base.h_a.shape[0]
        return total / rows

    def _epoch_seed(self, stage: str, epoch: int) -> List[int]:
        return [self.batch_seed, ord(stage), epoch]

    def train_stage(self, stage: str, report: TrainReport) -> TrainReport:
        """
        Run every epoch of one stage; the optimizer state starts fresh

        Args:
            stage: 'A' or 'B'
            report: Report the epoch records are appended to

        Returns:
            The same report
        """
        train_items = self.data.items(stage, 'train')
        heldout = self._heldout_batches(stage)
        optimizer = self._make_optimizer()
        n = self.cfg.batch_size

        start = time.perf_counter()
        initial_batches = [self.cache.base_batch(b)
                           for b in epoch_batches(stage, train_items, n, self._epoch_seed(stage, 1))]
        self._record(report, EpochRecord(stage, 0, self.mean_loss(initial_batches),
                                         self.mean_loss(heldout), time.perf_counter() - start))

        for epoch in range(1, self.cfg.epochs(stage) + 1):
            start = time.perf_counter()
            total, rows = 0.0, 0
            for b, batch in enumerate(epoch_batches(stage, train_items, n, self._epoch_seed(stage, epoch))):
                base = self.cache.base_batch(batch)
                try:
                    loss, grads = loss_and_grad(base, self.params, self.coeffs)
                except NumericError as e:
                    raise NumericError(f"Stage {stage} diverged at epoch {epoch}, batch {b}: {e}") from e
                self._step(optimizer, grads)
                total += loss
                rows += base.h_a.shape[0]
            record = EpochRecord(stage, epoch, total / rows, self.mean_loss(heldout),
                                 time.perf_counter() - start)
            if not (np.isfinite(record.train_loss) and np.isfinite(record.heldout_loss)):
                raise NumericError(f"Stage {stage} produced a non-finite loss at epoch {epoch}")
            self._record(report, record)
        report.stage_checkpoints[stage] = self.params.checkpoint_id()
        return report

    def _step(self, optimizer: torch.optim.Optimizer, grads: Dict[str, np.ndarray]):
        if self.cfg.learning_rate == 0.0:
            return
        optimizer.zero_grad()
        for name, tensor in self.tensors.items():
            tensor.grad = torch.from_numpy(grads[name])
        optimizer.step()

    def _record(self, report: TrainReport, record: EpochRecord):
        report.records.append(record)
        logger.info(f"Stage {record.stage} epoch {record.epoch}: train {record.train_loss:.4f}, "
                    f"held-out {record.heldout_loss:.4f} ({record.wall_time:.2f}s)")
        if self.on_epoch:
            self.on_epoch(record)


def train_stage(stage: str, params: EncoderParams, data: TrainingData, cfg: TrainConfig,
                coeffs: LossCoefficients, batch_seed: int = 0, eval_seed: int = 0,
                on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> Tuple[EncoderParams, TrainReport]:
    """
    Train one stage starting from a copy of params

    Returns:
        (trained params, report of this stage); the frozen block is shared
        with the input params and never changes
    """
    cfg.validate()
    coeffs.validate()
    params = params.copy()
    report = Trainer(params, data, cfg, coeffs, batch_seed, eval_seed, on_epoch).train_stage(stage, TrainReport())
    report.final_checkpoint_id = params.checkpoint_id()
    report.parameter_counts = params.counts()
    return params, report


@dataclass
class TrainingRun:
    params: EncoderParams
    report: TrainReport
    data: TrainingData
    checkpoints: Dict[str, str] = field(default_factory=dict)


def checkpoint_meta(run_cfg: 'RunConfig', data: TrainingData) -> Dict[str, Any]:
    return {
        'vocabulary': data.vocab.token_to_id,
        'class_names': data.corpus.class_names,
        'gamma': run_cfg.loss.gamma,
        'fingerprint': run_cfg.fingerprint(),
        'corpus': asdict(run_cfg.corpus),
        'train': asdict(run_cfg.train),
        'seeds': run_cfg.resolved_seeds(),
    }


def initial_params(run_cfg: 'RunConfig', data: TrainingData) -> EncoderParams:
    calibration = calibration_features(data, run_cfg.features)
    return init_params(run_cfg.seed_for('init'), len(data.vocab), run_cfg.features,
                       run_cfg.encoder, calibration)


def run_two_stage(run_cfg: 'RunConfig', out_dir: Optional[str] = None,
                  on_epoch: Optional[Callable[[EpochRecord], None]] = None,
                  data: Optional[TrainingData] = None) -> TrainingRun:
    """
    Stage A then stage B (or stage B alone); stage B starts from stage A's output

    Args:
        run_cfg: Resolved run configuration
        out_dir: Where checkpoints and reports go; nothing is written when omitted
        on_epoch: Called with every epoch record
        data: Prepared data to reuse; built from run_cfg when omitted

    Returns:
        TrainingRun with the final params and the combined report
    """
    cfg = run_cfg.train
    cfg.validate()
    run_cfg.loss.validate()
    if data is None:
        data = prepare_data(Corpus(run_cfg.corpus), cfg, run_cfg.seed_for('split'))
    params = initial_params(run_cfg, data)

    report = TrainReport(fingerprint=run_cfg.fingerprint())
    trainer = Trainer(params, data, cfg, run_cfg.loss, run_cfg.seed_for('batch'),
                      run_cfg.seed_for('eval'), on_epoch)
    meta = checkpoint_meta(run_cfg, data)
    checkpoints: Dict[str, str] = {}
    for stage in STAGE_ORDERS[cfg.stages]:
        logger.info(f"Starting stage {stage} ({cfg.epochs(stage)} epochs)")
        trainer.train_stage(stage, report)
        if out_dir:
            path = f"{out_dir}/checkpoint_{stage}.npz"
            save_checkpoint(path, params, dict(meta, stage=stage))
            checkpoints[stage] = path

    report.final_checkpoint_id = params.checkpoint_id()
    report.parameter_counts = params.counts()
    if out_dir:
        final = f"{out_dir}/checkpoint.npz"
        save_checkpoint(final, params, dict(meta, stage=cfg.stages[-1]))
        checkpoints['final'] = final
        report.save(f"{out_dir}/train_report.json", f"{out_dir}/loss_curves.csv")
    return TrainingRun(params=params, report=report, data=data, checkpoints=checkpoints)

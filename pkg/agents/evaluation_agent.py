"""
Evaluation Agent Module
Runs the zero-shot temporal evaluation against a checkpoint or a calibration model
"""

import os
from typing import Any, Dict, Optional, Tuple

from temporal_lab.audio_synth import Corpus, CorpusSpec
from temporal_lab.dataset_builder import heldout_pairs
from temporal_lab.encoder import EncoderModel
from temporal_lab.errors import ConfigError, DataIOError, LabError
from temporal_lab.zste_harness import EvalSet, OracleModel, RandomEmbeddingModel, ZsteReport, evaluate
from .base_agent import BaseAgent

MODEL_KINDS = ('checkpoint', 'oracle', 'random')


def build_eval_set(corpus_spec: CorpusSpec, split_ratio: float, split_seed: int, holdout: str) -> EvalSet:
    """EvalSet over the pairs a training run with these settings held out"""
    corpus = Corpus(corpus_spec)
    return EvalSet(corpus, heldout_pairs(corpus, split_ratio, split_seed, holdout))


class EvaluationAgent(BaseAgent):
    """Agent that scores one model on the held-out pairs"""

    def initialize(self) -> bool:
        try:
            self.config.eval.validate()
            self.initialized = True
            return True
        except LabError as e:
            self._fail("Invalid evaluation configuration", e)
            return False

    def _checkpoint_setup(self, path: str) -> Tuple[EncoderModel, EvalSet]:
        """Model and held-out pairs as recorded in the checkpoint metadata"""
        model = EncoderModel.from_checkpoint(path)
        meta = model.params.meta
        try:
            corpus_spec = CorpusSpec(**meta['corpus'])
            train = meta['train']
            split_seed = int(meta['seeds']['split'])
        except (KeyError, TypeError) as e:
            raise DataIOError(f"Checkpoint {path} lacks corpus/split metadata: {e}") from e
        eval_set = build_eval_set(corpus_spec, train['split_ratio'], split_seed, train['holdout'])
        return model, eval_set

    def process(self, data: Dict[str, Any]) -> Optional[ZsteReport]:
        """
        Evaluate and write the report

        Args:
            data: {'model': 'checkpoint'|'oracle'|'random', 'checkpoint': path or None,
                   'report': JSON path or None}

        Returns:
            ZsteReport, or None on failure
        """
        if not self.initialized:
            return self._not_initialized()

        kind = data.get('model', 'checkpoint')
        try:
            if kind not in MODEL_KINDS:
                raise ConfigError(f"model must be one of {MODEL_KINDS}, got '{kind}'")
            cfg = self.config
            checkpoint_id = None
            if kind == 'checkpoint':
                if not data.get('checkpoint'):
                    raise ConfigError("--checkpoint is required for model 'checkpoint'")
                model, eval_set = self._checkpoint_setup(data['checkpoint'])
                checkpoint_id = model.params.checkpoint_id()
                fingerprint = model.params.meta.get('fingerprint')
            else:
                eval_set = build_eval_set(cfg.corpus, cfg.train.split_ratio, cfg.seed_for('split'),
                                          cfg.train.holdout)
                fingerprint = cfg.fingerprint()
                if kind == 'oracle':
                    model = OracleModel(eval_set.class_names, cfg.loss.gamma)
                else:
                    model = RandomEmbeddingModel(cfg.encoder.embed_dim, cfg.seed_for('eval'), cfg.loss.gamma)

            self.logger.info(f"Evaluating {kind} model on {len(eval_set.pairs)} held-out pairs")
            report = evaluate(model, eval_set, cfg.eval, cfg.seed_for('eval'), checkpoint_id,
                              fingerprint, kind)

            if data.get('report'):
                path = data['report']
                os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
                report.save(path, os.path.splitext(path)[0] + '.csv')
                self.logger.info(f"Report written to {path}")
            return report

        except LabError as e:
            return self._fail("Evaluation failed", e)
        except OSError as e:
            return self._fail("Evaluation failed", DataIOError(str(e)))

    def shutdown(self):
        self.logger.info("Evaluation agent shutdown")

"""
Corpus Agent Module
Materialises the synthetic corpus: single-clip WAVs, the corpus manifest, the
caption vocabulary and the stage A / stage B item manifests
"""

import json
import os
from typing import Any, Dict, Optional

from temporal_lab.audio_synth import Corpus, write_wav
from temporal_lab.caption_gen import Vocabulary
from temporal_lab.dataset_builder import build_stage_a_items, build_stage_b_items, heldout_pairs, write_manifest
from temporal_lab.errors import DataIOError, LabError
from .base_agent import BaseAgent


class CorpusAgent(BaseAgent):
    """Agent that writes a corpus directory for one run config"""

    def __init__(self, config: Any):
        """
        Initialize Corpus Agent

        Args:
            config: Resolved RunConfig
        """
        super().__init__(config)
        self.corpus: Optional[Corpus] = None

    def initialize(self) -> bool:
        try:
            self.corpus = Corpus(self.config.corpus)
            self.logger.info(f"Corpus of {self.corpus.num_classes} classes, "
                             f"{self.config.corpus.clips_per_class} clips per class")
            self.initialized = True
            return True
        except LabError as e:
            self._fail("Failed to initialize corpus agent", e)
            return False

    def process(self, data: Dict[str, Any]) -> Optional[Dict[str, Any]]:
        """
        Write the corpus directory

        Args:
            data: {'out_dir': str, 'write_composites': bool}

        Returns:
            Summary of written files and counts, or None on failure
        """
        if not self.initialized:
            return self._not_initialized()

        out_dir = data['out_dir']
        try:
            clip_dir = os.path.join(out_dir, 'clips')
            os.makedirs(clip_dir, exist_ok=True)

            clip_paths = {}
            for class_id in range(self.corpus.num_classes):
                for instance in range(self.config.corpus.clips_per_class):
                    name = f"{class_id:03d}_{self.corpus.class_names[class_id]}_{instance}.wav"
                    path = os.path.join(clip_dir, name)
                    write_wav(path, self.corpus.clip(class_id, instance))
                    clip_paths[(class_id, instance)] = os.path.relpath(path, out_dir)
            self.logger.info(f"Wrote {len(clip_paths)} single clips to {clip_dir}")

            manifest = self.corpus.manifest(clip_paths)
            manifest['fingerprint'] = self.config.fingerprint()
            self._write_json(os.path.join(out_dir, 'corpus.json'), manifest)

            vocab = Vocabulary.build(self.corpus.class_names)
            vocab.save(os.path.join(out_dir, 'vocabulary.json'))

            train_cfg = self.config.train
            split_seed = self.config.seed_for('split')
            stage_a = build_stage_a_items(self.corpus, train_cfg.stage_a_mode, split_seed)
            stage_b = build_stage_b_items(self.corpus)

            manifests = {}
            for stage, items in (('A', stage_a), ('B', stage_b)):
                wav_paths = self._write_composites(out_dir, stage, items) if data.get('write_composites') else {}
                path = os.path.join(out_dir, f"stage_{stage.lower()}.jsonl")
                write_manifest(path, items, wav_paths)
                manifests[stage] = path

            test_pairs = heldout_pairs(self.corpus, train_cfg.split_ratio, split_seed, train_cfg.holdout)
            self._write_json(os.path.join(out_dir, 'split.json'), {
                'holdout': train_cfg.holdout,
                'split_ratio': train_cfg.split_ratio,
                'test_pairs': [list(p) for p in test_pairs],
            })

            summary = {
                'out_dir': out_dir,
                'clips': len(clip_paths),
                'stage_a_items': len(stage_a),
                'stage_b_items': len(stage_b),
                'test_pairs': len(test_pairs),
                'vocabulary_size': len(vocab),
                'manifests': manifests,
            }
            self.logger.info(f"Corpus written: {summary['stage_a_items']} stage A and "
                             f"{summary['stage_b_items']} stage B items")
            return summary

        except LabError as e:
            return self._fail("Failed to generate corpus", e)
        except OSError as e:
            return self._fail("Failed to generate corpus", DataIOError(str(e)))

    def _write_composites(self, out_dir: str, stage: str, items) -> Dict[str, str]:
        composite_dir = os.path.join(out_dir, f"composites_{stage.lower()}")
        os.makedirs(composite_dir, exist_ok=True)
        paths = {}
        for item in items:
            path = os.path.join(composite_dir, f"{item.item_id}.wav")
            write_wav(path, item.audio)
            paths[item.item_id] = os.path.relpath(path, out_dir)
        return paths

    def _write_json(self, path: str, data: Dict[str, Any]):
        try:
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=2)
        except OSError as e:
            raise DataIOError(f"Failed to write {path}: {e}") from e

    def shutdown(self):
        self.corpus = None
        self.logger.info("Corpus agent shutdown")

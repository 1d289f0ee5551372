"""
Sweep Agent Module
Coefficient ablation: trains and evaluates every (alphas, stages) cell over
several seeds and aggregates mean and standard deviation per cell
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from temporal_lab.audio_synth import Corpus
from temporal_lab.encoder import EncoderModel
from temporal_lab.errors import ConfigError, DataIOError, LabError
from temporal_lab.trainer import TrainingData, prepare_data, run_two_stage
from temporal_lab.zste_harness import REPORT_KEYS, EvalSet, evaluate
from .base_agent import BaseAgent

# (alpha_st, alpha_ct, alpha_so, alpha_co, beta)
SWEEP_GRID = (
    (0, 0, 0, 0, 1),
    (1, 0, 1, 0, 1),
    (0, 1, 0, 1, 1),
    (1, 1, 1, 1, 1),
)
SWEEP_STAGES = ('B', 'AB')
CELL_COLUMNS = ['stages', 'alpha_st', 'alpha_ct', 'alpha_so', 'alpha_co', 'beta']
METRIC_COLUMNS = list(REPORT_KEYS)
# not a zero-shot task; reported after every accuracy column
DIAGNOSTIC_COLUMNS = ['diag_heldout_loss']


def cell_config(run_cfg: Any, stages: str, alphas: Sequence[float], seed: int) -> Any:
    """
    Run config of one sweep cell and seed

    The corpus, split and evaluation sub-seeds stay those of run_cfg, so
    every cell trains and scores on the same pairs; seed drives
    initialisation and batching.
    """
    fixed = {name: run_cfg.seed_for(name) for name in ('corpus', 'split', 'eval')}
    return replace(
        run_cfg,
        seed=seed,
        seeds=fixed,
        train=replace(run_cfg.train, stages=stages),
        loss=run_cfg.loss.with_alphas(*alphas[:4], beta=alphas[4]),
    )


def run_cell(run_cfg: Any, stages: str, alphas: Sequence[float], seed: int,
             data: Optional[TrainingData] = None) -> Dict[str, Any]:
    """Train and evaluate one (cell, seed); module level so worker processes can run it"""
    cfg = cell_config(run_cfg, stages, alphas, seed)
    cfg.validate()
    run = run_two_stage(cfg, data=data)
    model = EncoderModel(run.params, run.data.vocab, cfg.loss.gamma)
    eval_set = EvalSet(run.data.corpus, sorted(run.data.test_keys))
    report = evaluate(model, eval_set, cfg.eval, cfg.seed_for('eval'),
                      run.report.final_checkpoint_id, cfg.fingerprint(), 'checkpoint')
    row: Dict[str, Any] = dict(zip(CELL_COLUMNS, (stages, *alphas)))
    row['seed'] = seed
    row.update(report.accuracies)
    row['diag_heldout_loss'] = run.report.final_heldout_loss
    return row


def aggregate(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    """
    Mean and standard deviation of every metric per cell, cells in first-seen order

    Returns:
        DataFrame with the cell columns, 'seeds', the subtask accuracy means,
        their '<subtask>_std' columns, then the diagnostic columns and their
        standard deviations
    """
    frame = pd.DataFrame(rows)
    grouped = frame.groupby(CELL_COLUMNS, sort=False)
    blocks = [grouped['seed'].count().rename('seeds')]
    for names in (METRIC_COLUMNS, DIAGNOSTIC_COLUMNS):
        present = [m for m in names if m in frame.columns]
        if present:
            blocks.append(grouped[present].mean())
            blocks.append(grouped[present].std(ddof=1).fillna(0.0).add_suffix('_std'))
    return pd.concat(blocks, axis=1).reset_index()


class SweepAgent(BaseAgent):
    """Agent that runs the coefficient ablation grid"""

    def __init__(self, config: Any, on_row=None):
        super().__init__(config)
        self.on_row = on_row

    def initialize(self) -> bool:
        try:
            self.config.train.validate()
            self.config.eval.validate()
            self.initialized = True
            return True
        except LabError as e:
            self._fail("Invalid sweep configuration", e)
            return False

    def cells(self) -> List[Tuple[str, Tuple[float, ...]]]:
        return [(stages, alphas) for alphas in SWEEP_GRID for stages in SWEEP_STAGES]

    def process(self, data: Dict[str, Any]) -> Optional[pd.DataFrame]:
        """
        Run the grid

        Args:
            data: {'out': CSV path, 'seeds': int, 'jobs': int}

        Returns:
            Aggregated DataFrame (also written to data['out']), or None on failure
        """
        if not self.initialized:
            return self._not_initialized()

        n_seeds = int(data.get('seeds', 3))
        jobs = int(data.get('jobs', 1))
        try:
            if n_seeds < 1 or jobs < 1:
                raise ConfigError("--seeds and --jobs must be positive")
            seeds = [self.config.seed + k for k in range(n_seeds)]
            tasks = [(stages, alphas, seed) for stages, alphas in self.cells() for seed in seeds]
            self.logger.info(f"Sweeping {len(self.cells())} cells x {n_seeds} seeds with {jobs} job(s)")

            rows = []
            if jobs == 1:
                shared = prepare_data(Corpus(self.config.corpus), self.config.train,
                                      self.config.seed_for('split'))
                for stages, alphas, seed in tasks:
                    row = run_cell(self.config, stages, alphas, seed, shared)
                    rows.append(self._collect(row))
            else:
                with ProcessPoolExecutor(max_workers=jobs) as executor:
                    futures = [executor.submit(run_cell, self.config, stages, alphas, seed)
                               for stages, alphas, seed in tasks]
                    for future in futures:
                        rows.append(self._collect(future.result()))

            table = aggregate(rows)
            out = data.get('out')
            if out:
                os.makedirs(os.path.dirname(out) or '.', exist_ok=True)
                table.to_csv(out, index=False)
                self.logger.info(f"Sweep table written to {out}")
            return table

        except LabError as e:
            return self._fail("Sweep failed", e)
        except OSError as e:
            return self._fail("Sweep failed", DataIOError(str(e)))

    def _collect(self, row: Dict[str, Any]) -> Dict[str, Any]:
        self.logger.info(f"Cell {row['stages']} alphas "
                         f"{[row[c] for c in CELL_COLUMNS[1:]]} seed {row['seed']} done")
        if self.on_row:
            self.on_row(row)
        return row

    def shutdown(self):
        self.logger.info("Sweep agent shutdown")

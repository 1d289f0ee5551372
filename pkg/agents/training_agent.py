"""
Training Agent Module
Runs two-stage post-training and writes checkpoints and loss curves
"""

import os
from typing import Any, Callable, Dict, Optional

from temporal_lab.errors import DataIOError, LabError
from temporal_lab.trainer import EpochRecord, run_two_stage
from .base_agent import BaseAgent


class TrainingAgent(BaseAgent):
    """Agent that trains the projection heads for one run config"""

    def __init__(self, config: Any, on_epoch: Optional[Callable[[EpochRecord], None]] = None):
        """
        Initialize Training Agent

        Args:
            config: Resolved RunConfig
            on_epoch: Called with every epoch record (the session log hooks in here)
        """
        super().__init__(config)
        self.on_epoch = on_epoch

    def initialize(self) -> bool:
        try:
            self.config.train.validate()
            self.config.loss.validate()
            self.initialized = True
            return True
        except LabError as e:
            self._fail("Invalid training configuration", e)
            return False

    def process(self, data: Dict[str, Any]) -> Optional[Dict[str, Any]]:
        """
        Train and save

        Args:
            data: {'out_dir': str}

        Returns:
            {'checkpoint', 'checkpoints', 'report', 'final_heldout_loss', 'checkpoint_id'}
            or None on failure
        """
        if not self.initialized:
            return self._not_initialized()

        out_dir = data['out_dir']
        try:
            os.makedirs(out_dir, exist_ok=True)
            self.logger.info(f"Training stages {self.config.train.stages} into {out_dir}")
            run = run_two_stage(self.config, out_dir=out_dir, on_epoch=self.on_epoch)
            return {
                'checkpoint': run.checkpoints['final'],
                'checkpoints': run.checkpoints,
                'report': os.path.join(out_dir, 'train_report.json'),
                'final_heldout_loss': run.report.final_heldout_loss,
                'checkpoint_id': run.report.final_checkpoint_id,
            }
        except LabError as e:
            return self._fail("Training failed", e)
        except OSError as e:
            return self._fail("Training failed", DataIOError(str(e)))

    def shutdown(self):
        self.logger.info("Training agent shutdown")

"""
Logging Agent Module
Session log of one CLI invocation: the command, training epochs, evaluations,
gradient checks, sweep cells and errors, one JSON object per line
"""

import json
import os
from collections import Counter
from dataclasses import asdict, is_dataclass
from datetime import datetime
from typing import Any, Dict, Optional

from .base_agent import BaseAgent

# event type -> config switch that gates it
EVENT_SWITCHES = {
    'epoch': 'log_epochs',
    'evaluation': 'log_evaluations',
    'sweep_cell': 'log_evaluations',
}


class LoggingAgent(BaseAgent):
    """Appends run events to logs/session_<id>.jsonl"""

    def __init__(self, config: Dict[str, Any]):
        """
        Args:
            config: The `logging` section (enabled, log_dir, log_epochs, log_evaluations)
        """
        super().__init__(config)
        self.enabled = config.get('enabled', True)
        self.log_dir = config.get('log_dir', 'logs')
        self.switches = {name: config.get(name, True) for name in set(EVENT_SWITCHES.values())}
        self.session_id = datetime.now().strftime('%Y%m%d_%H%M%S')
        self.log_file: Optional[str] = None
        self.event_counts: Counter = Counter()

    def initialize(self) -> bool:
        self.initialized = True
        if not self.enabled:
            self.logger.info("Session log disabled")
            return True

        try:
            os.makedirs(self.log_dir, exist_ok=True)
            self.log_file = os.path.join(self.log_dir, f"session_{self.session_id}.jsonl")
            self._append({'type': 'session_start', 'session_id': self.session_id})
        except OSError as e:
            self.initialized = False
            self.log_file = None
            self._fail("Cannot open session log", e)
            return False

        self.logger.info(f"Session log: {self.log_file}")
        return True

    def wants(self, event_type: str) -> bool:
        """Whether an event of this type is written"""
        switch = EVENT_SWITCHES.get(event_type)
        return switch is None or bool(self.switches[switch])

    def process(self, event: Dict[str, Any]) -> bool:
        """
        Write one event

        Returns:
            bool: False when the log is disabled or the write failed; filtered
            events count as handled
        """
        if not (self.initialized and self.enabled and self.log_file):
            return False
        event_type = event.get('type', 'unknown')
        if not self.wants(event_type):
            return True
        try:
            self._append(event)
        except OSError as e:
            self._fail("Session log write failed", e)
            return False
        self.event_counts[event_type] += 1
        return True

    def _append(self, event: Dict[str, Any]):
        entry = {'timestamp': datetime.now().isoformat()}
        entry.update(event)
        with open(self.log_file, 'a', encoding='utf-8') as f:
            f.write(json.dumps(entry, default=_jsonable) + '\n')

    def log_command(self, command: str, arguments: Dict[str, Any], fingerprint: Optional[str] = None):
        self.process({'type': 'command', 'command': command, 'arguments': arguments,
                      'fingerprint': fingerprint})

    def log_epoch(self, record: Any):
        """Trainer callback: one EpochRecord"""
        self.process(dict(asdict(record), type='epoch'))

    def log_evaluation(self, report: Any):
        self.process({
            'type': 'evaluation',
            'model': report.model,
            'checkpoint_id': report.checkpoint_id,
            'fingerprint': report.fingerprint,
            'accuracies': report.accuracies,
            'counts': report.counts,
        })

    def log_grad_check(self, row: Dict[str, Any]):
        self.process(dict(row, type='grad_check'))

    def log_sweep_cell(self, row: Dict[str, Any]):
        self.process(dict(row, type='sweep_cell'))

    def log_error(self, message: str, context: Optional[Dict[str, Any]] = None):
        event = {'type': 'error', 'message': message}
        if context:
            event['context'] = context
        self.process(event)

    def shutdown(self):
        if self.enabled and self.initialized and self.log_file:
            try:
                self._append({'type': 'session_end', 'session_id': self.session_id,
                              'events': dict(self.event_counts)})
            except OSError as e:
                self._fail("Session log close failed", e)
        self.logger.info("Logging agent shutdown")

    def get_session_log_path(self) -> Optional[str]:
        return self.log_file if self.initialized else None


def _jsonable(value: Any) -> Any:
    """json.dumps fallback for numpy scalars, dataclasses and paths"""
    if is_dataclass(value) and not isinstance(value, type):
        return asdict(value)
    if hasattr(value, 'item'):
        return value.item()
    return str(value)

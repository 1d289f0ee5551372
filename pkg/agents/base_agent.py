"""
Base Agent Class
Common lifecycle of the command agents: initialize, process one request,
shutdown
"""

from abc import ABC, abstractmethod
from typing import Any, Dict, Optional
import logging

from temporal_lab.errors import LabError


class BaseAgent(ABC):
    """
    Abstract base class for all agents in the system

    process() never raises for library errors: it returns None and keeps the
    exception in last_error, which the orchestrator maps to an exit code.
    """

    def __init__(self, config: Any):
        """
        Args:
            config: RunConfig, or a plain section dictionary for the logger
        """
        self.config = config
        self.logger = logging.getLogger(self.__class__.__name__)
        self.initialized = False
        self.last_error: Optional[Exception] = None

    @abstractmethod
    def initialize(self) -> bool:
        """Validate the config section the agent needs; False on failure"""

    @abstractmethod
    def process(self, request: Any) -> Any:
        """
        Run the command

        Args:
            request: Command arguments as a dictionary

        Returns:
            Command result, or None on failure (see last_error)
        """

    @abstractmethod
    def shutdown(self):
        pass

    def _fail(self, message: str, error: Exception) -> None:
        self.last_error = error
        self.logger.error(f"{message}: {error}")
        return None

    def _not_initialized(self) -> None:
        return self._fail(f"{self.__class__.__name__} used before initialize()",
                          LabError("agent not initialized"))

    def get_status(self) -> Dict[str, Any]:
        config = self.config.to_dict() if hasattr(self.config, 'to_dict') else self.config
        return {
            'name': self.__class__.__name__,
            'initialized': self.initialized,
            'last_error': f"{type(self.last_error).__name__}: {self.last_error}" if self.last_error else None,
            'config': config,
        }

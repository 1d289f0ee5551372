"""
Agent Architecture for the Temporal Audio-Text Lab
One agent per command: corpus generation, training, evaluation, gradient
checks and sweeps, plus the session logger
"""

from .base_agent import BaseAgent

# Import agents individually so torch/pandas load only for the commands that need them
__all__ = [
    'BaseAgent',
    'CorpusAgent',
    'TrainingAgent',
    'EvaluationAgent',
    'GradCheckAgent',
    'SweepAgent',
    'LoggingAgent'
]


def __getattr__(name):
    """Lazy import of agents to avoid loading all dependencies"""
    if name == 'CorpusAgent':
        from .corpus_agent import CorpusAgent
        return CorpusAgent
    elif name == 'TrainingAgent':
        from .training_agent import TrainingAgent
        return TrainingAgent
    elif name == 'EvaluationAgent':
        from .evaluation_agent import EvaluationAgent
        return EvaluationAgent
    elif name == 'GradCheckAgent':
        from .grad_check_agent import GradCheckAgent
        return GradCheckAgent
    elif name == 'SweepAgent':
        from .sweep_agent import SweepAgent
        return SweepAgent
    elif name == 'LoggingAgent':
        from .logging_agent import LoggingAgent
        return LoggingAgent
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

"""
Temporal Audio-Text Lab
Two-stage temporal contrastive post-training and zero-shot temporal evaluation
on a synthetic sound-event corpus
"""

__version__ = "1.0.0"

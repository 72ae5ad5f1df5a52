"""
Training callbacks for fda-ggann.
"""
from .base import TrainingCallback
from .builtin import LoggingCallback, MetricsCsvWriter
from .registry import CallbackList

__all__ = ['TrainingCallback', 'CallbackList', 'LoggingCallback', 'MetricsCsvWriter']

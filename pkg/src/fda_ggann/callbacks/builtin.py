"""
Built-in callbacks: metrics.csv streaming and per-epoch log lines.
"""
import csv
from pathlib import Path
from typing import TYPE_CHECKING, Union

from ..logger import get_logger
from ..utils import format_float
from .base import TrainingCallback

if TYPE_CHECKING:
    from ..trainer import FitResult, Metrics

logger = get_logger("trainer")

METRICS_HEADER = ["epoch", "split", "loss", "accuracy", "seconds"]


class MetricsCsvWriter(TrainingCallback):
    """Appends one metrics.csv row per evaluated split; the header is written on creation."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(METRICS_HEADER)

    def on_epoch_end(self, metrics: 'Metrics') -> None:
        with open(self.path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(metrics.csv_row())


class LoggingCallback(TrainingCallback):
    """Logs a line per split per epoch and a summary when training stops."""

    def on_epoch_end(self, metrics: 'Metrics') -> None:
        logger.info(f"epoch {metrics.epoch} {metrics.split}: loss={format_float(metrics.loss)} "
                    f"accuracy={format_float(metrics.accuracy)}")

    def on_train_end(self, result: 'FitResult') -> None:
        reason = "early stop" if result.stopped_early else "completed"
        logger.info(f"Training {reason} after {result.epochs_run} epoch(s); "
                    f"best valid accuracy {format_float(result.best_valid_accuracy)} at epoch {result.best_epoch}")

"""
Callback dispatch for the trainer.
"""
from typing import TYPE_CHECKING, Iterable, List, Optional

from ..logger import get_logger
from .base import TrainingCallback

if TYPE_CHECKING:
    from ..trainer import FitResult, Metrics

logger = get_logger("trainer")


class CallbackList:
    """Dispatches hooks to callbacks in registration order; a failing callback is logged, not raised."""

    def __init__(self, callbacks: Optional[Iterable[TrainingCallback]] = None):
        self.callbacks: List[TrainingCallback] = list(callbacks or [])

    def register(self, callback: TrainingCallback) -> None:
        """Register a new callback."""
        self.callbacks.append(callback)
        logger.debug(f"Registered callback: {callback.name}")

    def __len__(self) -> int:
        return len(self.callbacks)

    # Hooks
    def on_epoch_start(self, epoch: int, lr: float) -> None:
        for callback in self.callbacks:
            try:
                callback.on_epoch_start(epoch, lr)
            except Exception as e:
                logger.error(f"Error in callback {callback.name}.on_epoch_start: {e}")

    def on_batch_end(self, epoch: int, batch: int, num_batches: int, loss: float) -> None:
        for callback in self.callbacks:
            try:
                callback.on_batch_end(epoch, batch, num_batches, loss)
            except Exception as e:
                logger.error(f"Error in callback {callback.name}.on_batch_end: {e}")

    def on_epoch_end(self, metrics: 'Metrics') -> None:
        for callback in self.callbacks:
            try:
                callback.on_epoch_end(metrics)
            except Exception as e:
                logger.error(f"Error in callback {callback.name}.on_epoch_end: {e}")

    def on_train_end(self, result: 'FitResult') -> None:
        for callback in self.callbacks:
            try:
                callback.on_train_end(result)
            except Exception as e:
                logger.error(f"Error in callback {callback.name}.on_train_end: {e}")

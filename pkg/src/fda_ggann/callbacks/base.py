"""
Base class for training callbacks.
"""
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from ..trainer import FitResult, Metrics


class TrainingCallback:
    """Hooks called by the trainer; every hook is optional."""

    @property
    def name(self) -> str:
        """Name of the callback."""
        return self.__class__.__name__

    def on_epoch_start(self, epoch: int, lr: float) -> None:
        """Called before the first batch of an epoch."""
        pass

    def on_batch_end(self, epoch: int, batch: int, num_batches: int, loss: float) -> None:
        """Called after each optimizer step."""
        pass

    def on_epoch_end(self, metrics: 'Metrics') -> None:
        """Called once per split evaluated at the end of an epoch."""
        pass

    def on_train_end(self, result: 'FitResult') -> None:
        """Called when training stops."""
        pass

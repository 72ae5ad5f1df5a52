import logging

from src.fda_ggann.callbacks import CallbackList, LoggingCallback, MetricsCsvWriter, TrainingCallback
from src.fda_ggann.trainer import FitResult, Metrics


class Broken(TrainingCallback):
    def on_epoch_end(self, metrics):
        raise RuntimeError("boom")


class Recorder(TrainingCallback):
    def __init__(self):
        self.events = []

    def on_epoch_start(self, epoch, lr):
        self.events.append(("start", epoch))

    def on_epoch_end(self, metrics):
        self.events.append((metrics.split, metrics.epoch))


def _metrics(split="train", epoch=0):
    return Metrics(epoch=epoch, split=split, loss=0.5, accuracy=0.75)


class TestCallbackList:

    def test_dispatch_in_order(self):
        recorder = Recorder()
        callbacks = CallbackList([recorder])
        callbacks.on_epoch_start(0, 0.1)
        callbacks.on_epoch_end(_metrics())
        assert recorder.events == [("start", 0), ("train", 0)]

    def test_failing_callback_is_logged(self, caplog):
        recorder = Recorder()
        callbacks = CallbackList([Broken()])
        callbacks.register(recorder)
        assert len(callbacks) == 2
        with caplog.at_level(logging.ERROR, logger="fda_ggann.trainer"):
            callbacks.on_epoch_end(_metrics())
        assert recorder.events == [("train", 0)]
        assert "Broken.on_epoch_end" in caplog.text


class TestBuiltin:

    def test_metrics_csv(self, tmp_path):
        path = tmp_path / "out" / "metrics.csv"
        writer = MetricsCsvWriter(path)
        writer.on_epoch_end(_metrics("train", 0))
        writer.on_epoch_end(_metrics("valid", 0))
        assert path.read_text().splitlines() == [
            "epoch,split,loss,accuracy,seconds",
            "0,train,0.5,0.75,0",
            "0,valid,0.5,0.75,0",
        ]

    def test_logging_callback(self, caplog):
        callback = LoggingCallback()
        result = FitResult(params=None, history=[], best_epoch=2, best_valid_accuracy=0.9,
                           epochs_run=5, stopped_early=True)
        with caplog.at_level(logging.INFO, logger="fda_ggann.trainer"):
            callback.on_epoch_end(_metrics("valid", 4))
            callback.on_train_end(result)
        assert "epoch 4 valid" in caplog.text
        assert "early stop after 5 epoch(s)" in caplog.text

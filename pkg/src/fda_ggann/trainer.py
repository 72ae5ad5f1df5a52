"""
Training loop: cross-entropy with L2, bias-corrected Adam, linear learning-rate
decay, validation-based early stopping and accuracy evaluation.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .callbacks import CallbackList, TrainingCallback
from .config import ModelConfig, TrainConfig
from .exceptions import EmptySplit, LabelOutOfRange
from .ggann import GGANNModel, GraphBatch
from .graph_builder import FdaGraph
from .logger import get_logger
from .tensor import ParamStore, Tape, Tensor, clip_min, gather_rows, log, log_softmax, reduce_sum, reshape, scale
from .utils import format_float

logger = get_logger("trainer")

EVAL_BATCH = 64
PROB_FLOOR = float(np.finfo(np.float64).tiny)


@dataclass
class Metrics:
    epoch: int
    split: str
    loss: float
    accuracy: float
    per_class: Dict[int, float] = field(default_factory=dict)
    one_vs_rest: Dict[int, float] = field(default_factory=dict)
    seconds: float = 0.0
    count: int = 0

    def class_summary(self) -> Tuple[float, float, float]:
        """(average, minimum, maximum) of the per-class accuracies."""
        if not self.per_class:
            return (self.accuracy, self.accuracy, self.accuracy)
        values = list(self.per_class.values())
        return (float(np.mean(values)), float(min(values)), float(max(values)))

    def csv_row(self) -> List[str]:
        return [str(self.epoch), self.split, format_float(self.loss),
                format_float(self.accuracy), format_float(self.seconds)]


@dataclass
class FitResult:
    params: ParamStore
    history: List[Metrics]
    best_epoch: int
    best_valid_accuracy: float
    epochs_run: int
    stopped_early: bool
    # wall time spent inside train_step, always measured
    step_seconds: float = 0.0


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def regularized_names(params: ParamStore, l2_all: bool = False) -> List[str]:
    """Weight matrices under L2; embeddings and initial edge states only with ``l2_all``."""
    names = []
    for name, tensor in params.items():
        if tensor.data.ndim != 2:
            continue
        if not l2_all and (name.startswith("embed.") or name == "edge.h0"):
            continue
        names.append(name)
    return names


def l2_value(params: ParamStore, lam: float, l2_all: bool = False) -> float:
    return lam * float(np.sum([np.sum(params[n].data ** 2) for n in regularized_names(params, l2_all)]))


def cross_entropy(probs: Tensor, labels: Union[int, Sequence[int], np.ndarray],
                  logits: Optional[Tensor] = None) -> Tensor:
    """Sum over rows of -log(probs[row, label]).

    With ``logits`` the log-probabilities come from a max-shifted log-softmax, so a
    saturated prediction still gives a finite loss and gradient. Without them the
    probabilities are floored at the smallest positive float.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits is not None:
        log_probs = log_softmax(logits)
    else:
        log_probs = log(clip_min(probs, PROB_FLOOR))
    table = log_probs.data if log_probs.data.ndim == 2 else log_probs.data[None, :]
    rows, classes = table.shape
    flat = reshape(log_probs, (rows * classes,))
    picked = gather_rows(flat, np.arange(rows) * classes + labels)
    return scale(reduce_sum(picked), -1.0)


def loss(probs: Tensor, true_class: Union[int, Sequence[int]], params: ParamStore, lam: float,
         l2_all: bool = False, logits: Optional[Tensor] = None) -> Tensor:
    """-log(probs[true]) + lam * sum of squared weights (mean over rows when batched)."""
    labels = np.atleast_1d(np.asarray(true_class, dtype=np.int64))
    ce = scale(cross_entropy(probs, labels, logits=logits), 1.0 / labels.shape[0])
    if lam == 0.0:
        return ce
    penalty = [reduce_sum(params[n] * params[n]) for n in regularized_names(params, l2_all)]
    total = ce
    for term in penalty:
        total = total + scale(term, lam)
    return total


def adam_step(params: ParamStore, grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update in place."""
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, tensor in params.items():
        grad = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - beta1) * grad if m is None else beta1 * m + (1.0 - beta1) * grad
        v = (1.0 - beta2) * grad * grad if v is None else beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        tensor.data = tensor.data - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


def lr_at(epoch: int, epochs: int, l: float, F: float) -> float:  # noqa: E741
    """Linear decay from ``l`` at epoch 0 to ``l * F`` at the last epoch."""
    if epochs <= 1:
        return l
    return l * (1.0 - (1.0 - F) * epoch / (epochs - 1))


def check_labels(graphs: Sequence[FdaGraph], num_classes: int) -> None:
    for graph in graphs:
        if graph.label is None or not 0 <= graph.label < num_classes:
            raise LabelOutOfRange(graph.label, num_classes)


def make_batches(order: np.ndarray, graphs: Sequence[FdaGraph], batch_graphs: int,
                 batch_nodes: Optional[int] = None) -> List[List[int]]:
    """Split a shuffled index order into batches by graph count or by node budget."""
    if batch_nodes is None:
        return [[int(i) for i in order[start:start + batch_graphs]] for start in range(0, len(order), batch_graphs)]
    batches: List[List[int]] = []
    current: List[int] = []
    nodes = 0
    for index in order:
        size = graphs[index].num_nodes
        if current and nodes + size > batch_nodes:
            batches.append(current)
            current, nodes = [], 0
        current.append(int(index))
        nodes += size
    if current:
        batches.append(current)
    return batches


def evaluate(model: GGANNModel, graphs: Sequence[FdaGraph], split: str = "test",
             epoch: int = 0, batch_size: int = EVAL_BATCH) -> Metrics:
    """
    Argmax accuracy, mean cross-entropy, per-class and one-vs-rest accuracy.
    Dropout is off, so the result does not depend on the dropout rate.

    Raises:
        EmptySplit: ``graphs`` is empty.
    """
    if not graphs:
        raise EmptySplit(split)
    check_labels(graphs, model.config.num_classes)
    predictions: List[np.ndarray] = []
    total_loss = 0.0
    for start in range(0, len(graphs), batch_size):
        chunk = graphs[start:start + batch_size]
        result = model.forward(chunk)
        total_loss += cross_entropy(result.probs, [g.label for g in chunk], logits=result.logits).item()
        predictions.append(np.argmax(result.probs.data, axis=1))
    predicted = np.concatenate(predictions)
    labels = np.asarray([g.label for g in graphs], dtype=np.int64)
    correct = predicted == labels
    per_class = {int(c): float(np.mean(correct[labels == c])) for c in np.unique(labels)}
    one_vs_rest = {int(c): float(np.mean((predicted == c) == (labels == c)))
                   for c in range(model.config.num_classes)}
    return Metrics(epoch=epoch, split=split, loss=total_loss / len(graphs),
                   accuracy=float(np.mean(correct)), per_class=per_class,
                   one_vs_rest=one_vs_rest, count=len(graphs))


class Trainer:
    """Fits a GGANNModel; serial mode (workers=1) is bit-reproducible under a fixed seed."""

    def __init__(self, model_config: ModelConfig, train_config: TrainConfig,
                 callbacks: Optional[Sequence[TrainingCallback]] = None,
                 params: Optional[ParamStore] = None):
        self.model_config = model_config.validate()
        self.config = train_config.validate()
        self.model = GGANNModel(model_config, params=params, seed=train_config.seed)
        self.callbacks = CallbackList(callbacks)
        self.state = AdamState()

    def _micro_batch(self, graphs: Sequence[FdaGraph], batch_size: int,
                     rng: np.random.Generator) -> Tuple[float, int, List[np.ndarray]]:
        """Data loss and gradients of one micro-batch, scaled for a batch of ``batch_size``."""
        params = self.model.params
        batch = GraphBatch.from_graphs(graphs, self.model_config.bidirectional)
        with Tape() as tape:
            result = self.model.forward(batch, train=True, rho=self.config.dropout_rho, rng=rng)
            data_loss = scale(cross_entropy(result.probs, batch.labels, logits=result.logits), 1.0 / batch_size)
        grads = tape.gradients(data_loss, [params[n] for n in params.names()])
        correct = int(np.sum(np.argmax(result.probs.data, axis=1) == batch.labels))
        return data_loss.item(), correct, grads

    def train_step(self, graphs: Sequence[FdaGraph], lr: float, epoch: int, batch_index: int,
                   pool: Optional[ThreadPoolExecutor] = None) -> Tuple[float, int]:
        """One optimizer step over a batch; returns (loss, correct predictions)."""
        params = self.model.params
        size = self.config.micro_batch
        chunks = [graphs[i:i + size] for i in range(0, len(graphs), size)]
        rngs = [np.random.default_rng([self.config.seed, epoch, batch_index, i]) for i in range(len(chunks))]
        if pool is not None and len(chunks) > 1:
            outputs = list(pool.map(lambda args: self._micro_batch(args[0], len(graphs), args[1]),
                                    zip(chunks, rngs)))
        else:
            outputs = [self._micro_batch(chunk, len(graphs), rng) for chunk, rng in zip(chunks, rngs)]

        names = params.names()
        total = {name: np.zeros_like(params[name].data) for name in names}
        batch_loss, correct = 0.0, 0
        for chunk_loss, chunk_correct, grads in outputs:
            batch_loss += chunk_loss
            correct += chunk_correct
            for name, grad in zip(names, grads):
                total[name] += grad
        lam = self.config.l2_lambda
        if lam > 0.0:
            for name in regularized_names(params, self.config.l2_all):
                total[name] += 2.0 * lam * params[name].data
            batch_loss += l2_value(params, lam, self.config.l2_all)
        adam_step(params, total, self.state, lr, self.config.beta1, self.config.beta2, self.config.eps)
        return batch_loss, correct

    def fit(self, train: Sequence[FdaGraph], valid: Sequence[FdaGraph]) -> FitResult:
        """
        Train with per-epoch shuffling seeded by (seed, epoch), keeping the
        parameters of the best validation accuracy.

        Raises:
            EmptySplit: ``train`` or ``valid`` is empty.
            LabelOutOfRange: A graph label is missing or not below num_classes.
        """
        cfg = self.config
        if not train:
            raise EmptySplit("train")
        if not valid:
            raise EmptySplit("valid")
        check_labels(train, self.model_config.num_classes)
        check_labels(valid, self.model_config.num_classes)

        history: List[Metrics] = []
        best_params = self.model.params.copy()
        best_accuracy, best_epoch, waited = -1.0, 0, 0
        stopped_early = False
        epochs_run = 0
        step_seconds = 0.0
        pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        logger.info(f"Training on {len(train)} graph(s), validating on {len(valid)}; "
                    f"{len(self.model.params)} parameter tensors, {self.model.params.num_values()} values")
        try:
            for epoch in range(cfg.epochs):
                started = time.perf_counter()
                lr = lr_at(epoch, cfg.epochs, cfg.lr, cfg.decay_F)
                self.callbacks.on_epoch_start(epoch, lr)
                order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
                batches = make_batches(order, train, cfg.batch_graphs, cfg.batch_nodes)
                weighted_loss, correct = 0.0, 0
                for index, members in enumerate(batches):
                    graphs = [train[i] for i in members]
                    step_started = time.perf_counter()
                    batch_loss, batch_correct = self.train_step(graphs, lr, epoch, index, pool)
                    step_seconds += time.perf_counter() - step_started
                    weighted_loss += batch_loss * len(graphs)
                    correct += batch_correct
                    self.callbacks.on_batch_end(epoch, index, len(batches), batch_loss)
                train_seconds = time.perf_counter() - started if cfg.record_wall_time else 0.0
                train_metrics = Metrics(epoch=epoch, split="train", loss=weighted_loss / len(train),
                                        accuracy=correct / len(train), seconds=train_seconds,
                                        count=len(train))
                history.append(train_metrics)
                self.callbacks.on_epoch_end(train_metrics)

                started = time.perf_counter()
                valid_metrics = evaluate(self.model, valid, split="valid", epoch=epoch)
                if cfg.record_wall_time:
                    valid_metrics.seconds = time.perf_counter() - started
                history.append(valid_metrics)
                self.callbacks.on_epoch_end(valid_metrics)
                epochs_run = epoch + 1

                if valid_metrics.accuracy > best_accuracy:
                    best_accuracy, best_epoch, waited = valid_metrics.accuracy, epoch, 0
                    best_params = self.model.params.copy()
                else:
                    waited += 1
                    if waited >= cfg.patience:
                        logger.info(f"Early stopping at epoch {epoch}: no validation improvement "
                                    f"for {cfg.patience} epoch(s)")
                        stopped_early = True
                        break
        finally:
            if pool is not None:
                pool.shutdown()

        self.model.params.assign(best_params)
        result = FitResult(params=self.model.params, history=history, best_epoch=best_epoch,
                           best_valid_accuracy=best_accuracy, epochs_run=epochs_run,
                           stopped_early=stopped_early, step_seconds=step_seconds)
        self.callbacks.on_train_end(result)
        return result


def fit(train: Sequence[FdaGraph], valid: Sequence[FdaGraph], cfg: TrainConfig, model_cfg: ModelConfig,
        callbacks: Optional[Sequence[TrainingCallback]] = None) -> FitResult:
    """Functional entry point around Trainer.fit."""
    return Trainer(model_cfg, cfg, callbacks=callbacks).fit(train, valid)

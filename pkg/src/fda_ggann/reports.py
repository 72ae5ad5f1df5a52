"""
Experiment drivers and report writers: edge-type ablation, model and
representation comparison, node-kind embeddings with k-means, readout
attention and the hidden-size sweep. Every report is a CSV with a header row.
"""
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .ast_nodes import NodeKind
from .callbacks import TrainingCallback
from .config import ModelConfig, RunConfig, TrainConfig
from .exceptions import CheckpointError, ConfigError, EmptySplit, FDAError, TooFewPoints
from .ggann import GGANNModel, param_shapes
from .graph_builder import EdgeType, FdaGraph, ast_only, drop_edge_type
from .logger import get_logger
from .tensor import load_checkpoint, save_checkpoint
from .trainer import EVAL_BATCH, FitResult, Metrics, Trainer, evaluate
from .utils import write_csv

logger = get_logger("reports")

GraphSplits = Dict[str, Sequence[FdaGraph]]
Transform = Callable[[FdaGraph], FdaGraph]

DEFAULT_CLUSTERS = 5


# Checkpoints

def save_model(path: Union[str, Path], model: GGANNModel, train_config: Optional[TrainConfig] = None,
               extra: Optional[Dict] = None) -> None:
    """Checkpoint with the model and training configuration embedded; ``extra`` adds data provenance."""
    run = RunConfig(model=model.config, train=train_config or TrainConfig())
    config = {"model": asdict(run.model), "train": asdict(run.train)}
    config.update(extra or {})
    save_checkpoint(path, model.params, config)


def load_model(path: Union[str, Path]) -> Tuple[GGANNModel, Dict]:
    """
    Rebuild a model from a checkpoint written by save_model.

    Raises:
        CheckpointError: Unreadable file or parameters that do not fit the stored configuration.
    """
    params, config = load_checkpoint(path)
    try:
        model_config = ModelConfig(**config.get("model", {})).validate()
    except (TypeError, ConfigError) as e:
        raise CheckpointError(f"checkpoint {path} has an invalid model configuration: {e}")
    expected = param_shapes(model_config)
    if set(expected) != set(params.names()) or any(params[n].shape != s for n, s in expected.items()):
        raise CheckpointError(f"checkpoint {path} parameters do not match its model configuration")
    return GGANNModel(model_config, params=params), config


# Shared training driver

@dataclass
class VariantResult:
    name: str
    fit: FitResult
    test: Metrics


def train_variant(name: str, splits: GraphSplits, model_config: ModelConfig, train_config: TrainConfig,
                  transform: Optional[Transform] = None,
                  callbacks: Optional[Sequence[TrainingCallback]] = None) -> VariantResult:
    """Train on transformed train/valid graphs and evaluate on the transformed test graphs."""
    def prepared(split: str) -> List[FdaGraph]:
        graphs = list(splits.get(split, []))
        return [transform(g) for g in graphs] if transform else graphs

    logger.info(f"Training variant {name}")
    trainer = Trainer(model_config, train_config, callbacks=callbacks)
    fit = trainer.fit(prepared("train"), prepared("valid"))
    test = evaluate(trainer.model, prepared("test"), split="test", epoch=fit.best_epoch)
    return VariantResult(name=name, fit=fit, test=test)


def _task_columns(num_classes: int) -> List[str]:
    return [f"task_{c}" for c in range(num_classes)]


# Ablation

ABLATION_HEADER = ["variant", "accuracy", "average", "minimum", "maximum"]


@dataclass
class AblationRow:
    variant: str
    accuracy: Optional[float]
    per_task: Dict[int, float] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class AblationReport:
    rows: List[AblationRow]

    def baseline(self) -> AblationRow:
        return self.rows[0]

    def header(self, num_classes: int) -> List[str]:
        return ABLATION_HEADER + _task_columns(num_classes) + ["error"]

    def csv_rows(self, num_classes: int) -> List[List[object]]:
        rows: List[List[object]] = []
        for row in self.rows:
            if row.accuracy is None:
                rows.append([row.variant, "", "", "", ""] + [""] * num_classes + [row.error or ""])
                continue
            values = list(row.per_task.values()) or [row.accuracy]
            rows.append([row.variant, row.accuracy, float(np.mean(values)), float(min(values)),
                         float(max(values))]
                        + [row.per_task.get(c, "") for c in range(num_classes)] + [""])
        return rows


def ablation_variants() -> List[Tuple[str, Optional[Transform]]]:
    """The full graph followed by one variant per dropped edge type."""
    variants: List[Tuple[str, Optional[Transform]]] = [("none", None)]
    for edge_type in EdgeType:
        variants.append((edge_type.name, lambda g, t=edge_type: drop_edge_type(g, t)))
    return variants


def run_ablation(splits: GraphSplits, model_config: ModelConfig, train_config: TrainConfig,
                 out_path: Optional[Union[str, Path]] = None) -> AblationReport:
    """
    Train one model per variant with identical seeds and configuration.
    A failing variant is logged and recorded; the others still run.
    """
    rows = []
    for name, transform in ablation_variants():
        try:
            result = train_variant(name, splits, model_config, train_config, transform)
        except FDAError as e:
            logger.warning(f"Ablation variant {name} failed: {e}")
            rows.append(AblationRow(variant=name, accuracy=None, error=str(e)))
            continue
        rows.append(AblationRow(variant=name, accuracy=result.test.accuracy, per_task=result.test.per_class))
    report = AblationReport(rows=rows)
    if out_path is not None:
        write_csv(out_path, report.header(model_config.num_classes), report.csv_rows(model_config.num_classes))
    return report


# Model x representation comparison

COMPARE_HEADER = ["model", "representation", "average", "minimum", "maximum", "accuracy"]


@dataclass
class CompareRow:
    model: str
    representation: str
    average: float
    minimum: float
    maximum: float
    accuracy: float

    def csv_row(self) -> List[object]:
        return [self.model, self.representation, self.average, self.minimum, self.maximum, self.accuracy]


def compare(splits: GraphSplits, model_config: ModelConfig, train_config: TrainConfig,
            out_path: Optional[Union[str, Path]] = None) -> List[CompareRow]:
    """Train {ggann, ggnn} x {fda, ast} with shared seeds."""
    rows = []
    for mode in ("ggann", "ggnn"):
        for representation, transform in (("fda", None), ("ast", ast_only)):
            result = train_variant(f"{mode}/{representation}", splits, replace(model_config, mode=mode),
                                   train_config, transform)
            average, minimum, maximum = result.test.class_summary()
            rows.append(CompareRow(mode, representation, average, minimum, maximum, result.test.accuracy))
    if out_path is not None:
        write_csv(out_path, COMPARE_HEADER, [row.csv_row() for row in rows])
    return rows


# k-means

@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int


def _plus_plus(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    chosen = [int(rng.integers(n))]
    closest = np.sum((vectors - vectors[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            index = int(rng.choice(n, p=closest / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            index = int(rng.choice(remaining))
        chosen.append(index)
        closest = np.minimum(closest, np.sum((vectors - vectors[index]) ** 2, axis=1))
    return vectors[chosen].copy()


def kmeans(vectors: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """
    Lloyd's algorithm from k-means++ seeds. Stops when assignments repeat or
    after ``max_iter`` rounds; an emptied cluster keeps its previous centroid.

    Raises:
        TooFewPoints: Fewer vectors than clusters.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if k < 1 or n < k:
        raise TooFewPoints(n, k)
    rng = np.random.default_rng(seed)
    centroids = _plus_plus(vectors, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        distances = np.sum((vectors[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        updated = np.argmin(distances, axis=1)
        if np.array_equal(updated, assignments):
            break
        assignments = updated
        for cluster in range(k):
            members = vectors[assignments == cluster]
            if members.shape[0]:
                centroids[cluster] = members.mean(axis=0)
    inertia = float(np.sum((vectors - centroids[assignments]) ** 2))
    return KMeansResult(assignments=assignments, centroids=centroids, inertia=inertia, iterations=iterations)


# Embeddings and attention

@dataclass
class EmbeddingReport:
    kinds: List[NodeKind]
    counts: List[int]
    vectors: np.ndarray
    clusters: np.ndarray
    graph_ids: List[str]
    graph_vectors: np.ndarray


def export_embeddings(model: GGANNModel, graphs: Sequence[FdaGraph], out_path: Union[str, Path],
                      graphs_out: Optional[Union[str, Path]] = None, k: int = DEFAULT_CLUSTERS,
                      seed: int = 0) -> EmbeddingReport:
    """
    Mean final hidden state per node kind over ``graphs``, clustered with
    k-means (k capped at the number of kinds seen). Per-graph embeddings are
    the pre-softmax readout sums.

    Raises:
        EmptySplit: ``graphs`` is empty.
    """
    if not graphs:
        raise EmptySplit("embedding")
    d = model.config.d
    sums = np.zeros((model.config.num_kinds, d))
    counts = np.zeros(model.config.num_kinds, dtype=np.int64)
    graph_vectors = []
    for start in range(0, len(graphs), EVAL_BATCH):
        chunk = graphs[start:start + EVAL_BATCH]
        batch = model.batch(chunk)
        result = model.forward(batch)
        np.add.at(sums, batch.kinds, result.node_states.data)
        np.add.at(counts, batch.kinds, 1)
        graph_vectors.append(result.logits.data)
    seen = [int(c) for c in np.flatnonzero(counts)]
    vectors = sums[seen] / counts[seen][:, None]
    clusters = kmeans(vectors, min(k, len(seen)), seed=seed).assignments
    report = EmbeddingReport(
        kinds=[NodeKind(c) for c in seen],
        counts=[int(counts[c]) for c in seen],
        vectors=vectors,
        clusters=clusters,
        graph_ids=[g.source_id for g in graphs],
        graph_vectors=np.concatenate(graph_vectors),
    )
    header = ["kind", "count"] + [f"h_{i}" for i in range(d)] + ["cluster"]
    write_csv(out_path, header, [
        [kind.name, count] + [float(v) for v in vector] + [int(cluster)]
        for kind, count, vector, cluster in zip(report.kinds, report.counts, report.vectors, report.clusters)
    ])
    if graphs_out is not None:
        labels = [g.label if g.label is not None else "" for g in graphs]
        write_csv(graphs_out, ["source_id", "label"] + [f"logit_{c}" for c in range(model.config.num_classes)], [
            [source_id, label] + [float(v) for v in vector]
            for source_id, label, vector in zip(report.graph_ids, labels, report.graph_vectors)
        ])
    logger.info(f"Embeddings for {len(seen)} node kind(s) written to {out_path}")
    return report


@dataclass
class AttentionRow:
    node: int
    kind: NodeKind
    gate: float


def export_attention(model: GGANNModel, graph: FdaGraph,
                     out_path: Optional[Union[str, Path]] = None) -> List[AttentionRow]:
    """One row per node: id, kind and readout gate value."""
    result = model.forward([graph])
    rows = [AttentionRow(node=i, kind=NodeKind(kind), gate=float(gate))
            for i, (kind, gate) in enumerate(zip(graph.kinds, result.gates.data))]
    if out_path is not None:
        write_csv(out_path, ["node", "kind", "gate"], [[r.node, r.kind.name, r.gate] for r in rows])
    return rows


# Hidden-size sweep

SWEEP_HEADER = ["d", "train_graphs_per_second", "eval_graphs_per_second", "train_loss", "test_loss",
                "test_accuracy"]


@dataclass
class SweepRow:
    d: int
    train_rate: float
    eval_rate: float
    train_loss: float
    test_loss: float
    test_accuracy: float

    def csv_row(self) -> List[object]:
        return [self.d, self.train_rate, self.eval_rate, self.train_loss, self.test_loss, self.test_accuracy]


def sweep_d(splits: GraphSplits, d_list: Sequence[int], model_config: ModelConfig, train_config: TrainConfig,
            out_path: Optional[Union[str, Path]] = None) -> List[SweepRow]:
    """
    Throughput and final losses for each hidden size.

    Raises:
        ConfigError: ``d_list`` is empty.
    """
    if not d_list:
        raise ConfigError("sweep needs at least one d value")
    rows = []
    for d in d_list:
        result = train_variant(f"d={d}", splits, replace(model_config, d=d), train_config)
        # optimizer steps only; per-epoch validation is excluded
        train_seconds = result.fit.step_seconds
        train_rows = [m for m in result.fit.history if m.split == "train"]
        trained = sum(m.count for m in train_rows)

        model = GGANNModel(replace(model_config, d=d), params=result.fit.params)
        started = time.perf_counter()
        test = evaluate(model, list(splits["test"]), split="test")
        eval_seconds = time.perf_counter() - started

        rows.append(SweepRow(
            d=d,
            train_rate=trained / train_seconds if train_seconds > 0 else 0.0,
            eval_rate=len(splits["test"]) / eval_seconds if eval_seconds > 0 else 0.0,
            train_loss=train_rows[-1].loss,
            test_loss=test.loss,
            test_accuracy=test.accuracy,
        ))
        logger.info(f"d={d}: {rows[-1].train_rate:.1f} train graphs/s, test accuracy {test.accuracy:.3f}")
    if out_path is not None:
        write_csv(out_path, SWEEP_HEADER, [row.csv_row() for row in rows])
    return rows

import csv
import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest

from src.fda_ggann import trainer as trainer_module
from src.fda_ggann.ast_nodes import NodeKind
from src.fda_ggann.config import ModelConfig, SynthConfig, TrainConfig
from src.fda_ggann.corpus import build_graphs, split
from src.fda_ggann.exceptions import CheckpointError, ConfigError, TooFewPoints
from src.fda_ggann.ggann import GGANNModel
from src.fda_ggann.graph_builder import EdgeType
from src.fda_ggann.reports import (
    ABLATION_HEADER,
    COMPARE_HEADER,
    ablation_variants,
    compare,
    export_attention,
    export_embeddings,
    kmeans,
    load_model,
    run_ablation,
    save_model,
    sweep_d,
)
from src.fda_ggann.synth import synthesize
from src.fda_ggann.tensor import save_checkpoint


@pytest.fixture(scope="module")
def splits():
    programs = synthesize(SynthConfig(num_tasks=2, per_task=5, seed=1))
    parts = split(programs, seed=1)
    return {name: build_graphs(members) for name, members in parts.as_dict().items()}


@pytest.fixture
def model_config():
    return ModelConfig(d=4, T=1, num_classes=2)


@pytest.fixture
def train_config():
    return TrainConfig(epochs=1, batch_graphs=4, seed=2)


def _read(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestKMeans:

    def test_separated_clusters(self):
        rng = np.random.default_rng(0)
        points = np.concatenate([rng.normal(0.0, 0.1, (10, 2)), rng.normal(10.0, 0.1, (10, 2))])
        result = kmeans(points, 2, seed=3)
        assert len(set(result.assignments[:10])) == 1
        assert len(set(result.assignments[10:])) == 1
        assert result.assignments[0] != result.assignments[10]

    def test_one_cluster_per_point(self):
        points = np.arange(8.0).reshape(4, 2)
        result = kmeans(points, 4)
        assert result.inertia == pytest.approx(0.0)
        assert sorted(result.assignments.tolist()) == [0, 1, 2, 3]

    def test_deterministic(self):
        points = np.random.default_rng(1).normal(size=(30, 3))
        assert np.array_equal(kmeans(points, 3, seed=5).assignments, kmeans(points, 3, seed=5).assignments)

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            kmeans(np.zeros((2, 3)), 3)


class TestExports:

    def test_attention(self, tmp_path, splits, model_config):
        graph = splits["train"][0]
        rows = export_attention(GGANNModel(model_config, seed=0), graph, tmp_path / "attn.csv")
        assert len(rows) == graph.num_nodes
        assert all(0.0 < r.gate < 1.0 for r in rows)
        lines = _read(tmp_path / "attn.csv")
        assert lines[0] == ["node", "kind", "gate"]
        assert len(lines) == graph.num_nodes + 1

    def test_embeddings(self, tmp_path, splits, model_config):
        graphs = splits["train"]
        report = export_embeddings(GGANNModel(model_config, seed=0), graphs, tmp_path / "kinds.csv",
                                   graphs_out=tmp_path / "graphs.csv", k=3)
        assert len(report.kinds) <= len(NodeKind)
        assert sum(report.counts) == sum(g.num_nodes for g in graphs)
        assert set(report.clusters.tolist()) <= {0, 1, 2}
        kinds = _read(tmp_path / "kinds.csv")
        assert kinds[0] == ["kind", "count", "h_0", "h_1", "h_2", "h_3", "cluster"]
        graph_rows = _read(tmp_path / "graphs.csv")
        assert graph_rows[0] == ["source_id", "label", "logit_0", "logit_1"]
        assert len(graph_rows) == len(graphs) + 1


class TestCheckpoint:

    def test_round_trip(self, tmp_path, splits, model_config):
        model = GGANNModel(model_config, seed=4)
        path = tmp_path / "model.json"
        save_model(path, model, TrainConfig(epochs=3), extra={"tasks": ["a", "b"]})
        loaded, config = load_model(path)
        assert loaded.config == model_config
        assert config["train"]["epochs"] == 3 and config["tasks"] == ["a", "b"]
        graph = splits["test"][0]
        assert np.array_equal(loaded.forward(graph).probs.data, model.forward(graph).probs.data)

    def test_parameters_must_fit_config(self, tmp_path, model_config):
        path = tmp_path / "model.json"
        model = GGANNModel(model_config, seed=0)
        save_checkpoint(path, model.params, {"model": {"d": 6, "T": 1, "num_classes": 2}})
        with pytest.raises(CheckpointError):
            load_model(path)


class TestExperiments:

    def test_variants(self):
        names = [name for name, _ in ablation_variants()]
        assert names == ["none"] + [t.name for t in EdgeType]

    def test_ablation(self, tmp_path, splits, model_config, train_config):
        report = run_ablation(splits, model_config, train_config, tmp_path / "ablation.csv")
        assert len(report.rows) == 8
        assert report.baseline().variant == "none"
        rows = _read(tmp_path / "ablation.csv")
        assert rows[0] == ABLATION_HEADER + ["task_0", "task_1", "error"]
        assert len(rows) == 9

    def test_compare(self, tmp_path, splits, model_config, train_config):
        rows = compare(splits, model_config, train_config, tmp_path / "compare.csv")
        assert [(r.model, r.representation) for r in rows] == \
            [("ggann", "fda"), ("ggann", "ast"), ("ggnn", "fda"), ("ggnn", "ast")]
        assert all(r.minimum <= r.average <= r.maximum for r in rows)
        assert _read(tmp_path / "compare.csv")[0] == COMPARE_HEADER

    def test_sweep(self, tmp_path, splits, model_config, train_config):
        rows = sweep_d(splits, [2, 4], model_config, train_config, tmp_path / "sweep.csv")
        assert [r.d for r in rows] == [2, 4]
        assert all(r.train_rate > 0 for r in rows)
        with pytest.raises(ConfigError):
            sweep_d(splits, [], model_config, train_config)

    def test_sweep_rate_excludes_validation(self, splits, model_config, train_config, monkeypatch):
        ticks = itertools.count()
        monkeypatch.setattr(trainer_module, "time", SimpleNamespace(perf_counter=lambda: float(next(ticks))))
        (row,) = sweep_d(splits, [2], model_config, train_config)
        steps = math.ceil(len(splits["train"]) / train_config.batch_graphs)
        assert row.train_rate == pytest.approx(len(splits["train"]) / steps)

import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest

from src.fda_ggann import trainer as trainer_module
from src.fda_ggann.config import ModelConfig, TrainConfig
from src.fda_ggann.exceptions import EmptySplit, LabelOutOfRange
from src.fda_ggann.ggann import GGANNModel, init_params
from src.fda_ggann.graph_builder import build_fda
from src.fda_ggann.parser import parse_source
from src.fda_ggann.synth import TEMPLATES
from src.fda_ggann.tensor import ParamStore, Tape, Tensor, softmax
from src.fda_ggann.trainer import (
    AdamState,
    Trainer,
    adam_step,
    cross_entropy,
    evaluate,
    fit,
    l2_value,
    loss,
    lr_at,
    make_batches,
    regularized_names,
)

PROGRAMS = [
    "int main(){ int a = 1; return a; }",
    "int main(){ int s = 0; for (int i = 0; i < 4; i++) { s = s + i; } return s; }",
    "int f(int x){ return x * 2; } int main(){ return f(3); }",
    "int main(){ int a = 5; if (a > 2) { a = a - 1; } return a; }",
]


@pytest.fixture
def graphs():
    return [build_fda(parse_source(source), label=i % 2, source_id=f"p{i}") for i, source in enumerate(PROGRAMS)]


@pytest.fixture
def tiny_model():
    return ModelConfig(d=4, T=2, num_classes=2)


def _tiny_train(**overrides):
    values = dict(epochs=2, batch_graphs=2, micro_batch=1, lr=0.01, dropout_rho=0.5, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


class TestLoss:

    def test_uniform_two_classes_is_ln2(self):
        value = loss(Tensor([0.5, 0.5]), 0, ParamStore(), 0.0)
        assert value.item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_zero_weights_give_pure_cross_entropy(self):
        params = ParamStore()
        params.add("readout.g.W", np.zeros((3, 2)))
        value = loss(Tensor([0.25, 0.75]), 1, params, 0.0005)
        assert value.item() == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_confident_prediction_leaves_penalty(self):
        params = ParamStore()
        params.add("gru.W_z", np.full((2, 2), 0.5))
        value = loss(Tensor([1.0, 0.0]), 0, params, 0.1)
        assert value.item() == pytest.approx(0.1 * 4 * 0.25)

    def test_saturated_logits_give_finite_loss_and_gradient(self):
        logits = Tensor([[0.0, 800.0]], requires_grad=True)
        with Tape() as tape:
            value = loss(softmax(logits), [0], ParamStore(), 0.0, logits=logits)
        (grad,) = tape.gradients(value, [logits])
        assert value.item() == pytest.approx(800.0)
        np.testing.assert_allclose(grad, [[-1.0, 1.0]])

    def test_saturated_probabilities_are_floored(self):
        logits = Tensor([[0.0, 800.0]], requires_grad=True)
        with Tape() as tape:
            value = cross_entropy(softmax(logits), [0])
        (grad,) = tape.gradients(value, [logits])
        assert np.isfinite(value.item())
        assert np.all(np.isfinite(grad))

    def test_regularized_names(self):
        params = init_params(ModelConfig(d=4, num_classes=2), 0)
        names = regularized_names(params)
        assert "gru.W_z" in names and "readout.f.W2" in names
        assert "gru.b_z" not in names
        assert "embed.kinds" not in names and "edge.h0" not in names
        everything = regularized_names(params, l2_all=True)
        assert "embed.kinds" in everything and "edge.h0" in everything
        assert l2_value(params, 0.5, l2_all=True) > l2_value(params, 0.5)


class TestAdam:

    def _store(self, value):
        store = ParamStore()
        store.add("w", np.array([value]))
        return store

    def test_first_step_moves_by_learning_rate(self):
        store = ParamStore()
        store.add("w", np.array([1.0, 1.0, 1.0]))
        adam_step(store, {"w": np.array([3.0, -0.02, 250.0])}, AdamState(), lr=0.01)
        np.testing.assert_allclose(store["w"].data, [0.99, 1.01, 0.99], rtol=1e-6)

    def test_zero_gradient_is_a_no_op(self):
        store = self._store(2.5)
        adam_step(store, {"w": np.zeros(1)}, AdamState(), lr=0.1)
        assert store["w"].data[0] == 2.5

    def test_two_steps_match_scalar_trace(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        store, state = self._store(1.0), AdamState()
        theta, m, v = 1.0, 0.0, 0.0
        for t, g in enumerate([0.5, -0.25], start=1):
            adam_step(store, {"w": np.array([g])}, state, lr, b1, b2, eps)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        assert state.step == 2
        assert store["w"].data[0] == pytest.approx(theta, rel=1e-12)

    def test_weight_decay_shrinks_every_matrix(self):
        params = init_params(ModelConfig(d=4, num_classes=2), 1)
        lam = 0.0005
        names = regularized_names(params)
        before = {n: np.linalg.norm(params[n].data) for n in names}
        grads = {n: np.zeros_like(t.data) for n, t in params.items()}
        for n in names:
            grads[n] = 2.0 * lam * params[n].data
        adam_step(params, grads, AdamState(), lr=1e-4)
        for n in names:
            assert np.linalg.norm(params[n].data) < before[n]


class TestSchedule:

    def test_endpoints(self):
        assert lr_at(0, 100, 0.0001, 0.1) == 0.0001
        assert lr_at(99, 100, 0.0001, 0.1) == pytest.approx(0.00001)

    def test_midpoint(self):
        assert lr_at(1, 3, 0.001, 0.1) == pytest.approx(0.00055)

    def test_single_epoch(self):
        assert lr_at(0, 1, 0.01, 0.1) == 0.01

    def test_non_increasing(self):
        rates = [lr_at(e, 50, 0.001, 0.3) for e in range(50)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))


class TestBatching:

    def test_by_graph_count(self, graphs):
        assert make_batches(np.array([3, 1, 0, 2]), graphs, 3) == [[3, 1, 0], [2]]

    def test_by_node_budget(self, graphs):
        sizes = [g.num_nodes for g in graphs]
        batches = make_batches(np.arange(4), graphs, 32, batch_nodes=sizes[0] + sizes[1])
        assert batches[0] == [0, 1]
        assert sorted(i for b in batches for i in b) == [0, 1, 2, 3]

    def test_oversized_graph_gets_own_batch(self, graphs):
        assert make_batches(np.arange(2), graphs, 32, batch_nodes=1) == [[0], [1]]


class TestFit:

    def test_one_epoch_one_graph(self, graphs, tiny_model):
        result = Trainer(tiny_model, _tiny_train(epochs=1)).fit(graphs[:1], graphs[1:2])
        assert [(m.epoch, m.split) for m in result.history] == [(0, "train"), (0, "valid")]
        assert result.epochs_run == 1
        assert all(m.seconds == 0.0 for m in result.history)

    def test_reproducible(self, graphs, tiny_model):
        first = Trainer(tiny_model, _tiny_train()).fit(graphs, graphs[:2])
        second = Trainer(tiny_model, _tiny_train()).fit(graphs, graphs[:2])
        assert [m.csv_row() for m in first.history] == [m.csv_row() for m in second.history]
        assert [m.loss for m in first.history] == [m.loss for m in second.history]
        for name, tensor in first.params.items():
            assert np.array_equal(tensor.data, second.params[name].data)

    def test_workers_match_serial(self, graphs, tiny_model):
        serial = Trainer(tiny_model, _tiny_train()).fit(graphs, graphs[:2])
        threaded = Trainer(tiny_model, _tiny_train(workers=2)).fit(graphs, graphs[:2])
        for a, b in zip(serial.history, threaded.history):
            assert a.loss == pytest.approx(b.loss, rel=1e-12)

    def test_early_stopping(self, graphs, tiny_model):
        result = Trainer(tiny_model, _tiny_train(epochs=20, patience=1, lr=1e-12)).fit(graphs, graphs)
        assert result.stopped_early
        assert result.epochs_run == 2
        assert result.best_epoch == 0

    def test_step_seconds_cover_only_optimizer_steps(self, graphs, tiny_model, monkeypatch):
        ticks = itertools.count()
        monkeypatch.setattr(trainer_module, "time", SimpleNamespace(perf_counter=lambda: float(next(ticks))))
        result = Trainer(tiny_model, _tiny_train()).fit(graphs, graphs[:2])
        # 2 epochs x 2 batches, one tick per step
        assert result.step_seconds == 4.0

    def test_functional_entry_point(self, graphs, tiny_model):
        result = fit(graphs, graphs[:2], _tiny_train(), tiny_model)
        expected = Trainer(tiny_model, _tiny_train()).fit(graphs, graphs[:2])
        assert [m.loss for m in result.history] == [m.loss for m in expected.history]

    def test_label_out_of_range(self, graphs, tiny_model):
        bad = graphs[0].with_label(5)
        with pytest.raises(LabelOutOfRange):
            Trainer(tiny_model, _tiny_train()).fit([bad], graphs[:1])
        with pytest.raises(LabelOutOfRange):
            Trainer(tiny_model, _tiny_train()).fit([graphs[0].with_label(None)], graphs[:1])

    def test_empty_split(self, graphs, tiny_model):
        with pytest.raises(EmptySplit):
            Trainer(tiny_model, _tiny_train()).fit([], graphs)
        with pytest.raises(EmptySplit):
            Trainer(tiny_model, _tiny_train()).fit(graphs, [])

    def test_separable_templates(self):
        corpus = []
        for label, name in enumerate(("sum", "bubble_sort")):
            graph = build_fda(parse_source(TEMPLATES[name]), label=label)
            corpus.extend([graph] * 30)
        train = corpus[:18] + corpus[30:48]
        valid = corpus[18:24] + corpus[48:54]
        config = TrainConfig(epochs=30, batch_graphs=8, lr=0.01, dropout_rho=0.0, patience=30, seed=1)
        result = Trainer(ModelConfig(d=8, T=2, num_classes=2), config).fit(train, valid)
        assert result.best_valid_accuracy == 1.0


class TestEvaluate:

    def test_all_correct(self, graphs, tiny_model):
        model = GGANNModel(tiny_model, seed=0)
        model.params["readout.g.b"].data[:] = [100.0, 0.0]
        metrics = evaluate(model, [g.with_label(0) for g in graphs])
        assert metrics.accuracy == 1.0
        assert metrics.per_class == {0: 1.0}
        assert metrics.one_vs_rest == {0: 1.0, 1: 1.0}

    def test_per_class_weighted_average(self, graphs, tiny_model):
        metrics = evaluate(GGANNModel(tiny_model, seed=4), graphs)
        labels = [g.label for g in graphs]
        weighted = sum(metrics.per_class[c] * labels.count(c) for c in metrics.per_class) / len(graphs)
        assert weighted == pytest.approx(metrics.accuracy)
        average, minimum, maximum = metrics.class_summary()
        assert minimum <= average <= maximum

    def test_deterministic_regardless_of_dropout(self, graphs, tiny_model):
        model = GGANNModel(tiny_model, seed=2)
        assert evaluate(model, graphs).loss == evaluate(model, graphs).loss

    def test_empty(self, tiny_model):
        with pytest.raises(EmptySplit):
            evaluate(GGANNModel(tiny_model), [])

    def test_csv_row_format(self):
        from src.fda_ggann.trainer import Metrics
        assert Metrics(epoch=3, split="valid", loss=0.1234567, accuracy=0.5).csv_row() == \
            ["3", "valid", "0.123457", "0.5", "0"]

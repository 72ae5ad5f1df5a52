import numpy as np
import pytest

from src.fda_ggann.exceptions import CheckpointError, NonScalarLoss, ShapeMismatch
from src.fda_ggann.tensor import (
    ParamStore,
    Tape,
    Tensor,
    bmv,
    clip_min,
    concat,
    finite_difference,
    gather_rows,
    glorot_init,
    load_checkpoint,
    log_softmax,
    matmul,
    reduce_sum,
    reshape,
    save_checkpoint,
    scatter_add,
    segment_softmax,
    sigmoid,
    softmax,
    tanh,
)


def _param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class TestGradients:

    def test_product_rule(self):
        a, b = _param([2.0, 3.0]), _param([5.0, 7.0])
        with Tape() as tape:
            loss = reduce_sum(a * b)
        grad_a, grad_b = tape.gradients(loss, [a, b])
        np.testing.assert_allclose(grad_a, [5.0, 7.0])
        np.testing.assert_allclose(grad_b, [2.0, 3.0])

    def test_shared_input_accumulates(self):
        a = _param([3.0])
        with Tape() as tape:
            loss = reduce_sum(a * a + a)
        (grad,) = tape.gradients(loss, [a])
        np.testing.assert_allclose(grad, [7.0])

    def test_unused_tensor_gets_zero(self):
        a, unused = _param([1.0]), _param([[1.0, 2.0]])
        with Tape() as tape:
            loss = reduce_sum(a * 2.0)
        assert np.array_equal(tape.gradients(loss, [unused])[0], np.zeros((1, 2)))

    def test_non_scalar_loss(self):
        a = _param([1.0, 2.0])
        with Tape() as tape:
            out = a * 2.0
        with pytest.raises(NonScalarLoss):
            tape.gradients(out, [a])

    def test_no_recording_outside_tape(self):
        a = _param([1.0])
        with Tape() as tape:
            pass
        reduce_sum(a * a)
        assert len(tape) == 0

    def test_matmul_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        a, b = _param(rng.normal(size=(3, 4))), _param(rng.normal(size=(4, 2)))

        def loss_value():
            return float(np.sum(np.tanh(a.data @ b.data)))

        with Tape() as tape:
            loss = reduce_sum(tanh(matmul(a, b)))
        grad_a, grad_b = tape.gradients(loss, [a, b])
        for index in [(0, 0), (1, 3), (2, 2)]:
            assert grad_a[index] == pytest.approx(finite_difference(loss_value, a, index), rel=1e-6)
        for index in [(0, 1), (3, 0)]:
            assert grad_b[index] == pytest.approx(finite_difference(loss_value, b, index), rel=1e-6)

    def test_bmv_and_reshape(self):
        rng = np.random.default_rng(1)
        flat, vecs = _param(rng.normal(size=(2, 9))), _param(rng.normal(size=(2, 3)))

        def loss_value():
            mats = flat.data.reshape(2, 3, 3)
            return float(np.sum(sigmoid_np(np.einsum("lij,lj->li", mats, vecs.data))))

        with Tape() as tape:
            loss = reduce_sum(sigmoid(bmv(reshape(flat, (2, 3, 3)), vecs)))
        grad_flat, grad_vecs = tape.gradients(loss, [flat, vecs])
        assert grad_flat[1, 4] == pytest.approx(finite_difference(loss_value, flat, (1, 4)), rel=1e-6)
        assert grad_vecs[0, 2] == pytest.approx(finite_difference(loss_value, vecs, (0, 2)), rel=1e-6)

    def test_gather_scatter_adjoint(self):
        table = _param(np.arange(6.0).reshape(3, 2))
        with Tape() as tape:
            rows = gather_rows(table, [0, 2, 0])
            loss = reduce_sum(scatter_add(rows, [1, 1, 0], 2))
        (grad,) = tape.gradients(loss, [table])
        np.testing.assert_allclose(grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])

    def test_log_softmax_matches_finite_difference(self):
        x = _param(np.random.default_rng(2).normal(size=(2, 3)))
        weights = Tensor(np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]]))

        def loss_value():
            shifted = x.data - x.data.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            return float(np.sum(logp * weights.data))

        with Tape() as tape:
            loss = reduce_sum(log_softmax(x) * weights)
        (grad,) = tape.gradients(loss, [x])
        for index in [(0, 0), (0, 2), (1, 1)]:
            assert grad[index] == pytest.approx(finite_difference(loss_value, x, index), rel=1e-6)

    def test_saturated_log_softmax_stays_finite(self):
        x = _param([[0.0, 800.0]])
        with Tape() as tape:
            loss = reduce_sum(log_softmax(x) * Tensor([[-1.0, 0.0]]))
        (grad,) = tape.gradients(loss, [x])
        assert loss.item() == pytest.approx(800.0)
        np.testing.assert_allclose(grad, [[-1.0, 1.0]])

    def test_clip_min_blocks_gradient_below_floor(self):
        a = _param([0.0, 0.5])
        with Tape() as tape:
            out = clip_min(a, 0.1)
            loss = reduce_sum(out * 3.0)
        np.testing.assert_allclose(out.data, [0.1, 0.5])
        np.testing.assert_allclose(tape.gradients(loss, [a])[0], [0.0, 3.0])


def sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestOps:

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            _param(np.ones((2, 3))) + _param(np.ones((3, 2)))
        with pytest.raises(ShapeMismatch):
            matmul(_param(np.ones((2, 3))), _param(np.ones((2, 3))))

    def test_bias_broadcast(self):
        out = _param(np.zeros((2, 3))) + _param([1.0, 2.0, 3.0])
        np.testing.assert_allclose(out.data, [[1.0, 2.0, 3.0]] * 2)

    def test_softmax_rows_sum_to_one(self):
        probs = softmax(Tensor(np.array([[1000.0, 1000.0], [0.0, -50.0]])))
        np.testing.assert_allclose(probs.data.sum(axis=1), [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(probs.data[0], [0.5, 0.5])

    def test_segment_softmax(self):
        alpha = segment_softmax(Tensor([1.0, 2.0, 3.0, 0.5]), [0, 0, 2, 2], 3)
        totals = np.zeros(3)
        np.add.at(totals, [0, 0, 2, 2], alpha.data)
        np.testing.assert_allclose(totals, [1.0, 0.0, 1.0], atol=1e-12)

    def test_segment_softmax_single_member(self):
        assert segment_softmax(Tensor([42.0]), [0], 1).data[0] == 1.0

    def test_concat_splits_gradient(self):
        a, b = _param(np.ones((2, 1))), _param(np.ones((2, 2)))
        weights = Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        with Tape() as tape:
            loss = reduce_sum(concat([a, b]) * weights)
        grad_a, grad_b = tape.gradients(loss, [a, b])
        np.testing.assert_allclose(grad_a, [[1.0], [4.0]])
        np.testing.assert_allclose(grad_b, [[2.0, 3.0], [5.0, 6.0]])

    def test_glorot_bounds_and_seed(self):
        w = glorot_init((30, 20), seed=[7, 1])
        bound = np.sqrt(6.0 / 50.0)
        assert np.all(np.abs(w.data) <= bound)
        assert np.array_equal(w.data, glorot_init((30, 20), seed=[7, 1]).data)
        assert not np.array_equal(w.data, glorot_init((30, 20), seed=[7, 2]).data)


class TestParamStore:

    @pytest.fixture
    def store(self):
        store = ParamStore()
        store.add("b.W", np.ones((2, 2)))
        store.add("a.b", np.zeros(2))
        return store

    def test_sorted_names(self, store):
        assert store.names() == ["a.b", "b.W"]
        assert store.num_values() == 6

    def test_duplicate_name(self, store):
        with pytest.raises(KeyError):
            store.add("a.b", np.zeros(2))

    def test_backward_accumulates(self, store):
        for _ in range(2):
            with Tape() as tape:
                loss = reduce_sum(store["b.W"] * 3.0)
            tape.backward(loss, store)
        np.testing.assert_allclose(store.grads["b.W"], np.full((2, 2), 6.0))
        store.zero_grad()
        assert not store.grads["b.W"].any()

    def test_copy_is_independent(self, store):
        clone = store.copy()
        clone["b.W"].data[0, 0] = 9.0
        assert store["b.W"].data[0, 0] == 1.0
        store.assign(clone)
        assert store["b.W"].data[0, 0] == 9.0


class TestCheckpoint:

    def test_round_trip(self, tmp_path):
        store = ParamStore()
        store.add("w", np.arange(6.0).reshape(2, 3) / 7.0)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, store, {"model": {"d": 3}})
        loaded, config = load_checkpoint(path, {"w": (2, 3)})
        assert np.array_equal(loaded["w"].data, store["w"].data)
        assert config == {"model": {"d": 3}}
        assert not list(tmp_path.glob("*.tmp"))

    def test_shape_mismatch(self, tmp_path):
        store = ParamStore()
        store.add("w", np.zeros((2, 3)))
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, store, {})
        with pytest.raises(CheckpointError):
            load_checkpoint(path, {"w": (3, 2)})

    def test_unreadable(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

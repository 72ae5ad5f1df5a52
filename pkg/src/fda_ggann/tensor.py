"""
Dense tensors with a recording tape for reverse-mode gradients.

Operations record themselves on the active ``Tape`` when at least one input
requires a gradient. A tape belongs to one thread; open one per micro-batch.

    with Tape() as tape:
        loss = model_loss(...)
    grads = tape.gradients(loss, [w1, w2])
"""
import contextvars
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import CheckpointError, NonScalarLoss, ShapeMismatch
from .logger import get_logger
from .schema import CHECKPOINT_SCHEMA, validate_document

logger = get_logger("tensor")

CHECKPOINT_VERSION = 1

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]
Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: contextvars.ContextVar[Optional['Tape']] = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    """A float64 array that may take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: 'TensorLike') -> 'Tensor':
        return add(self, other)

    def __radd__(self, other: 'TensorLike') -> 'Tensor':
        return add(other, self)

    def __sub__(self, other: 'TensorLike') -> 'Tensor':
        return sub(self, other)

    def __rsub__(self, other: 'TensorLike') -> 'Tensor':
        return sub(other, self)

    def __mul__(self, other: 'TensorLike') -> 'Tensor':
        return mul(self, other)

    def __rmul__(self, other: 'TensorLike') -> 'Tensor':
        return mul(other, self)

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        return matmul(self, other)

    def __neg__(self) -> 'Tensor':
        return scale(self, -1.0)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: Tuple[Tensor, ...], backward: Backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of recorded operations; creation order is topological order."""

    def __init__(self) -> None:
        self.records: List[_Record] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> 'Tape':
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
        """
        Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

        Tensors the loss does not depend on get zero gradients.

        Raises:
            NonScalarLoss: ``loss`` holds more than one value.
        """
        if loss.data.size != 1:
            raise NonScalarLoss(loss.shape)
        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for record in reversed(self.records):
            out_grad = grads.get(id(record.output))
            if out_grad is None:
                continue
            for tensor, grad in zip(record.inputs, record.backward(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]

    def backward(self, loss: Tensor, store: 'ParamStore') -> None:
        """Accumulate d(loss)/d(param) into ``store.grads``."""
        names = store.names()
        for name, grad in zip(names, self.gradients(loss, [store[name] for name in names])):
            store.grads[name] += grad


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...], backward: Backward) -> Tensor:
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    tape = _ACTIVE_TAPE.get()
    if needs_grad and tape is not None:
        tape.records.append(_Record(out, inputs, backward))
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    """Equal shapes, a scalar, or a bias whose shape is the other's trailing dims."""
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sb) < len(sa) and sa[-len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[-len(sa):] == sa:
        return
    raise ShapeMismatch(sa, sb, op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return grad.sum(axis=tuple(range(grad.ndim - len(shape))))


# Elementwise

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, factor: float) -> Tensor:
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def clip_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); clamped entries pass no gradient."""
    mask = a.data >= floor
    return _result(np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


def apply_mask(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant mask (no gradient flows to the mask)."""
    if mask.shape != a.shape:
        raise ShapeMismatch(a.shape, mask.shape, "apply_mask")
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def dropout(a: Tensor, rho: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rho``, scale survivors by 1/(1-rho)."""
    if rho <= 0.0:
        return a
    keep = rng.random(a.shape) >= rho
    return apply_mask(a, keep / (1.0 - rho))


# Linear algebra and shape

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(a.shape, b.shape, "matmul")
    if b.data.ndim == 1:
        return _result(a.data @ b.data, (a, b),
                       lambda g: (np.outer(g, b.data), a.data.T @ g))
    return _result(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def bmv(mats: Tensor, vecs: Tensor) -> Tensor:
    """Batched matrix-vector product: out[l] = mats[l] @ vecs[l]."""
    if (mats.data.ndim != 3 or vecs.data.ndim != 2 or mats.shape[0] != vecs.shape[0]
            or mats.shape[2] != vecs.shape[1]):
        raise ShapeMismatch(mats.shape, vecs.shape, "bmv")
    return _result(np.einsum("lij,lj->li", mats.data, vecs.data), (mats, vecs),
                   lambda g: (np.einsum("li,lj->lij", g, vecs.data),
                              np.einsum("lij,li->lj", mats.data, g)))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(a.shape, (), "transpose")
    return _result(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(tuple(shape))
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch(tensors[0].shape, tensors[-1].shape, "concat")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def reduce_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(out, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return _result(out, (a,),
                   lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))



def log_softmax(a: Tensor) -> Tensor:
    """log(softmax(a)) over the last axis without forming the probabilities."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)
    return _result(out, (a,), lambda g: (g - probs * g.sum(axis=-1, keepdims=True),))


# Index operations

def slice_rows(a: Tensor, start: int, end: int) -> Tensor:
    """Rows start..end-1 of ``a``."""

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(a.data)
        grad[start:end] = g
        return (grad,)

    return _result(a.data[start:end], (a,), backward)


def row_scale(values: Tensor, weights: Tensor) -> Tensor:
    """out[l] = weights[l] * values[l] for 2-D ``values`` and 1-D ``weights``."""
    if values.data.ndim != 2 or weights.shape != values.shape[:1]:
        raise ShapeMismatch(values.shape, weights.shape, "row_scale")
    w = weights.data[:, None]
    return _result(values.data * w, (values, weights),
                   lambda g: (g * w, (g * values.data).sum(axis=1)))



def gather_rows(table: Tensor, index: ArrayLike) -> Tensor:
    """Rows ``table[index]``; the embedding lookup."""
    idx = np.asarray(index, dtype=np.int64)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(table.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return _result(table.data[idx], (table,), backward)


def scatter_add(values: Tensor, index: ArrayLike, size: int) -> Tensor:
    """out[index[l]] += values[l]; rows of ``out`` with no contributor are zero."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape[0] != values.shape[0]:
        raise ShapeMismatch(values.shape, idx.shape, "scatter_add")
    out = np.zeros((size,) + values.shape[1:], dtype=np.float64)
    np.add.at(out, idx, values.data)
    return _result(out, (values,), lambda g: (g[idx],))


def segment_softmax(scores: Tensor, segment: ArrayLike, size: int) -> Tensor:
    """Softmax of 1-D ``scores`` within groups sharing a ``segment`` id."""
    seg = np.asarray(segment, dtype=np.int64)
    if scores.data.ndim != 1 or seg.shape != scores.shape:
        raise ShapeMismatch(scores.shape, seg.shape, "segment_softmax")
    peak = np.full(size, -np.inf)
    np.maximum.at(peak, seg, scores.data)
    e = np.exp(scores.data - peak[seg])
    totals = np.zeros(size)
    np.add.at(totals, seg, e)
    out = e / totals[seg]

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        dot = np.zeros(size)
        np.add.at(dot, seg, g * out)
        return (out * (g - dot[seg]),)

    return _result(out, (scores,), backward)


# Parameters

def glorot_init(shape: Sequence[int], seed: Union[int, Sequence[int]]) -> Tensor:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(shape)
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    elif len(shape) == 2:
        fan_in, fan_out = shape
    else:
        raise ShapeMismatch(shape, (), "glorot_init")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class ParamStore:
    """Named learnable tensors, iterated in lexicographic name order."""

    def __init__(self) -> None:
        self._params: Dict[str, Tensor] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: Union[Tensor, np.ndarray]) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        data = value.data if isinstance(value, Tensor) else value
        tensor = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = tensor
        self.grads[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return sorted(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for name in self.grads:
            self.grads[name] = np.zeros_like(self._params[name].data)

    def num_values(self) -> int:
        return int(np.sum([t.data.size for t in self._params.values()]))

    def copy(self) -> 'ParamStore':
        clone = ParamStore()
        for name, tensor in self.items():
            clone.add(name, tensor.data.copy())
        return clone

    def assign(self, other: 'ParamStore') -> None:
        """Overwrite values with those of a store holding the same names and shapes."""
        for name, tensor in self.items():
            if other[name].shape != tensor.shape:
                raise ShapeMismatch(tensor.shape, other[name].shape, f"assign {name}")
            tensor.data = other[name].data.copy()

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
                for name, t in self.items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Dict[str, Any]]) -> 'ParamStore':
        store = cls()
        for name in sorted(data):
            entry = data[name]
            values = np.asarray(entry["data"], dtype=np.float64)
            shape = tuple(entry["shape"])
            if values.size != int(np.prod(shape, dtype=np.int64)):
                raise CheckpointError(f"parameter {name!r}: {values.size} values for shape {shape}")
            store.add(name, values.reshape(shape))
        return store


def save_checkpoint(path: Union[str, Path], store: ParamStore, config: Dict[str, Any]) -> None:
    """Write ``{"version", "config", "params"}`` JSON atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"version": CHECKPOINT_VERSION, "config": config, "params": store.to_dict()}
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(payload, f, separators=(",", ":"))
        os.replace(tmp_name, path)
    except OSError:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info(f"Checkpoint written to {path}")


def load_checkpoint(path: Union[str, Path],
                    expected_shapes: Optional[Dict[str, Tuple[int, ...]]] = None) -> Tuple[ParamStore, Dict[str, Any]]:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: Unreadable file, unknown version, or parameter shapes
            that differ from ``expected_shapes``.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    validate_document(data, CHECKPOINT_SCHEMA, "checkpoint")
    if data["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {data['version']}")
    store = ParamStore.from_dict(data["params"])
    if expected_shapes is not None:
        if set(expected_shapes) != set(store.names()):
            raise CheckpointError("checkpoint parameters do not match the model configuration")
        for name, shape in expected_shapes.items():
            if store[name].shape != tuple(shape):
                raise CheckpointError(f"parameter {name!r} has shape {store[name].shape}, expected {tuple(shape)}")
    return store, data["config"]


def finite_difference(fn: Callable[[], float], tensor: Tensor, index: Tuple[int, ...], h: float = 1e-5) -> float:
    """Central difference of ``fn`` with respect to one coordinate of ``tensor``."""
    original = tensor.data[index]
    tensor.data[index] = original + h
    upper = fn()
    tensor.data[index] = original - h
    lower = fn()
    tensor.data[index] = original
    return (upper - lower) / (2.0 * h)

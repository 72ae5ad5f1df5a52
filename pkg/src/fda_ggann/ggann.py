"""
Gated graph attention network over FDA graphs.

Each stored edge gives a forward lane (source -> target) and, when
bidirectional, a reverse lane with its own parameters. Parameters of the
edge-state, propagation-matrix and attention nets are shared per
(edge type, direction) key.

GGANN iteration t:
    h'  = U_e(h', h_src, h_dst)                       edge states
    M   = reshape(A_key(h'), d x d) / d               dynamic propagation matrix
    a   = softmax over in-lanes of a_key(h_dst, h_src)
    m   = sum over in-lanes of a * M h_src
    h   = GRU(h, m)
GGNN iteration t:
    m   = sum over in-lanes of A_key h_src            static matrix per key
    h   = GRU(h, m)
Readout:
    logits_G = sum over nodes of sigmoid(f(h, x)) * g(h);  probs = softmax(logits)
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ModelConfig
from .exceptions import UnknownKind
from .graph_builder import EdgeType, FdaGraph
from .logger import get_logger
from .tensor import (
    ParamStore,
    Tensor,
    bmv,
    concat,
    dropout,
    gather_rows,
    glorot_init,
    matmul,
    reshape,
    row_scale,
    scale,
    scatter_add,
    segment_softmax,
    sigmoid,
    slice_rows,
    softmax,
    tanh,
    transpose,
)

logger = get_logger("model")

DIRECTIONS = ("fwd", "rev")
NUM_LANE_KEYS = len(EdgeType) * len(DIRECTIONS)


def lane_key(edge_type: int, reverse: bool) -> int:
    return int(edge_type) * 2 + int(reverse)


def lane_key_name(key: int) -> str:
    return f"{EdgeType(key // 2).name}.{DIRECTIONS[key % 2]}"


@dataclass
class GraphBatch:
    """Disjoint union of graphs; node and lane arrays are offset per graph."""
    kinds: np.ndarray
    graph_index: np.ndarray
    offsets: np.ndarray
    num_graphs: int
    labels: np.ndarray
    lane_src: np.ndarray
    lane_dst: np.ndarray
    lane_key: np.ndarray
    groups: List[Tuple[int, int, int]]
    source_ids: List[str] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return int(self.kinds.shape[0])

    @property
    def num_lanes(self) -> int:
        return int(self.lane_src.shape[0])

    @classmethod
    def from_graphs(cls, graphs: Sequence[FdaGraph], bidirectional: bool = True) -> 'GraphBatch':
        kinds: List[np.ndarray] = []
        graph_index: List[np.ndarray] = []
        lanes: List[np.ndarray] = []
        offsets = [0]
        for index, graph in enumerate(graphs):
            base = offsets[-1]
            kinds.append(np.asarray(graph.kinds, dtype=np.int64))
            graph_index.append(np.full(graph.num_nodes, index, dtype=np.int64))
            if graph.edges:
                edges = np.asarray([(e.src, e.dst, e.type) for e in graph.edges], dtype=np.int64)
                forward = np.stack([edges[:, 0] + base, edges[:, 1] + base, edges[:, 2] * 2], axis=1)
                lanes.append(forward)
                if bidirectional:
                    lanes.append(np.stack([forward[:, 1], forward[:, 0], forward[:, 2] + 1], axis=1))
            offsets.append(base + graph.num_nodes)
        lane_array = np.concatenate(lanes) if lanes else np.zeros((0, 3), dtype=np.int64)
        order = np.lexsort((lane_array[:, 1], lane_array[:, 0], lane_array[:, 2]))
        lane_array = lane_array[order]
        groups: List[Tuple[int, int, int]] = []
        if lane_array.shape[0]:
            keys, starts = np.unique(lane_array[:, 2], return_index=True)
            ends = list(starts[1:]) + [lane_array.shape[0]]
            groups = [(int(k), int(s), int(e)) for k, s, e in zip(keys, starts, ends)]
        labels = np.asarray([g.label if g.label is not None else -1 for g in graphs], dtype=np.int64)
        return cls(
            kinds=np.concatenate(kinds) if kinds else np.zeros(0, dtype=np.int64),
            graph_index=np.concatenate(graph_index) if graph_index else np.zeros(0, dtype=np.int64),
            offsets=np.asarray(offsets, dtype=np.int64),
            num_graphs=len(graphs),
            labels=labels,
            lane_src=lane_array[:, 0].copy(),
            lane_dst=lane_array[:, 1].copy(),
            lane_key=lane_array[:, 2].copy(),
            groups=groups,
            source_ids=[g.source_id for g in graphs],
        )


@dataclass
class NodeState:
    H: Tensor
    X: Tensor


@dataclass
class EdgeState:
    Hp: Tensor


@dataclass
class ForwardResult:
    """``probs``/``logits`` are [num_graphs x num_classes]; ``gates`` is per node."""
    probs: Tensor
    logits: Tensor
    node_states: Tensor
    gates: Tensor
    alphas: List[np.ndarray] = field(default_factory=list)


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Names and shapes of every learnable tensor for ``config``."""
    d, ah, eh, c = config.d, config.att_hidden, config.edge_hidden, config.num_classes
    keys = [lane_key_name(k) for k in range(NUM_LANE_KEYS)
            if config.bidirectional or k % 2 == 0]
    shapes: Dict[str, Tuple[int, ...]] = {"embed.kinds": (config.num_kinds, d)}
    if config.mode == "ggann":
        shapes.update({
            "edge.h0": (NUM_LANE_KEYS, d),
            "ue.W1": (3 * d, eh), "ue.b1": (eh,),
            "ue.W2": (eh, d), "ue.b2": (d,),
        })
        for key in keys:
            shapes.update({
                f"anet.{key}.W": (d, d * d), f"anet.{key}.b": (d * d,),
                f"attn.{key}.W1": (2 * d, ah), f"attn.{key}.b1": (ah,),
                f"attn.{key}.W2": (ah, 1), f"attn.{key}.b2": (1,),
            })
    else:
        for key in keys:
            shapes[f"ggnn.{key}.A"] = (d, d)
    for gate in ("z", "r", "h"):
        shapes.update({f"gru.W_{gate}": (d, d), f"gru.U_{gate}": (d, d), f"gru.b_{gate}": (d,)})
    shapes.update({
        "readout.f.W1": (2 * d, ah), "readout.f.b1": (ah,),
        "readout.f.W2": (ah, 1), "readout.f.b2": (1,),
        "readout.g.W": (d, c), "readout.g.b": (c,),
    })
    return shapes


def is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b")


def init_params(config: ModelConfig, seed: int) -> ParamStore:
    """Glorot-uniform weights, zero biases; each tensor seeded by (seed, position)."""
    store = ParamStore()
    for position, (name, shape) in enumerate(sorted(param_shapes(config).items())):
        if is_bias(name):
            store.add(name, np.zeros(shape))
        else:
            store.add(name, glorot_init(shape, [seed, position]))
    return store


class GGANNModel:
    """Forward computation over a ParamStore; holds no training state."""

    def __init__(self, config: ModelConfig, params: Optional[ParamStore] = None, seed: int = 0):
        self.config = config.validate()
        self.params = params if params is not None else init_params(config, seed)

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def batch(self, graphs: Union[FdaGraph, Sequence[FdaGraph], GraphBatch]) -> GraphBatch:
        if isinstance(graphs, GraphBatch):
            return graphs
        if isinstance(graphs, FdaGraph):
            graphs = [graphs]
        return GraphBatch.from_graphs(graphs, self.config.bidirectional)

    def _mlp(self, inputs: Tensor, prefix: str) -> Tensor:
        hidden = tanh(matmul(inputs, self._p(f"{prefix}.W1")) + self._p(f"{prefix}.b1"))
        return matmul(hidden, self._p(f"{prefix}.W2")) + self._p(f"{prefix}.b2")

    def _per_group(self, batch: GraphBatch, fn: Callable[[int, int, int], Tensor]) -> Tensor:
        parts = [fn(key, start, end) for key, start, end in batch.groups]
        return parts[0] if len(parts) == 1 else concat(parts, axis=0)

    def embed_nodes(self, batch: GraphBatch, train: bool = False, rho: float = 0.0,
                    rng: Optional[np.random.Generator] = None) -> NodeState:
        """x_i = embedding row of kind(i); h0 = x. Dropout on X at train time."""
        num_kinds = self.config.num_kinds
        bad = batch.kinds[(batch.kinds < 0) | (batch.kinds >= num_kinds)]
        if bad.size:
            raise UnknownKind(int(bad[0]), num_kinds)
        X = gather_rows(self._p("embed.kinds"), batch.kinds)
        if train and rho > 0.0:
            X = dropout(X, rho, rng if rng is not None else np.random.default_rng())
        return NodeState(H=X, X=X)

    def initial_edge_state(self, batch: GraphBatch) -> EdgeState:
        return EdgeState(Hp=gather_rows(self._p("edge.h0"), batch.lane_key))

    def edge_state_update(self, edges: EdgeState, nodes: NodeState, batch: GraphBatch) -> EdgeState:
        """h' <- tanh-MLP(concat(h', h_src, h_dst)) for every lane."""
        h_src = gather_rows(nodes.H, batch.lane_src)
        h_dst = gather_rows(nodes.H, batch.lane_dst)
        hidden = tanh(matmul(concat([edges.Hp, h_src, h_dst]), self._p("ue.W1")) + self._p("ue.b1"))
        return EdgeState(Hp=tanh(matmul(hidden, self._p("ue.W2")) + self._p("ue.b2")))

    def propagation_matrix(self, h_prime: Tensor, key: int) -> Tensor:
        """[L x d] edge states -> [L x d x d] matrices; M @ h_src is the lane's message."""
        d = self.config.d
        name = lane_key_name(key)
        flat = matmul(h_prime, self._p(f"anet.{name}.W")) + self._p(f"anet.{name}.b")
        return scale(reshape(flat, (h_prime.shape[0], d, d)), 1.0 / d)

    def attention_scores(self, nodes: NodeState, batch: GraphBatch) -> Tensor:
        """alpha per lane, normalized over all in-lanes of the target node."""
        h_src = gather_rows(nodes.H, batch.lane_src)
        h_dst = gather_rows(nodes.H, batch.lane_dst)

        def score(key: int, start: int, end: int) -> Tensor:
            pair = concat([slice_rows(h_dst, start, end), slice_rows(h_src, start, end)])
            return self._mlp(pair, f"attn.{lane_key_name(key)}")

        raw = self._per_group(batch, score)
        return segment_softmax(reshape(raw, (batch.num_lanes,)), batch.lane_dst, batch.num_nodes)

    def aggregate_messages(self, nodes: NodeState, batch: GraphBatch,
                           edges: Optional[EdgeState] = None, alpha: Optional[Tensor] = None) -> Tensor:
        """m_i = sum over in-lanes; GGANN weights dynamic messages by alpha, GGNN uses static A."""
        d = self.config.d
        if batch.num_lanes == 0:
            return Tensor(np.zeros((batch.num_nodes, d)))
        h_src = gather_rows(nodes.H, batch.lane_src)
        if self.config.mode == "ggnn":
            def message(key: int, start: int, end: int) -> Tensor:
                A = self._p(f"ggnn.{lane_key_name(key)}.A")
                return matmul(slice_rows(h_src, start, end), transpose(A))

            return scatter_add(self._per_group(batch, message), batch.lane_dst, batch.num_nodes)

        assert edges is not None and alpha is not None

        def dynamic(key: int, start: int, end: int) -> Tensor:
            mats = self.propagation_matrix(slice_rows(edges.Hp, start, end), key)
            return bmv(mats, slice_rows(h_src, start, end))

        messages = row_scale(self._per_group(batch, dynamic), alpha)
        return scatter_add(messages, batch.lane_dst, batch.num_nodes)

    def gru_update(self, h_prev: Tensor, m: Tensor) -> Tensor:
        p = self._p
        z = sigmoid(matmul(m, p("gru.W_z")) + matmul(h_prev, p("gru.U_z")) + p("gru.b_z"))
        r = sigmoid(matmul(m, p("gru.W_r")) + matmul(h_prev, p("gru.U_r")) + p("gru.b_r"))
        candidate = tanh(matmul(m, p("gru.W_h")) + matmul(r * h_prev, p("gru.U_h")) + p("gru.b_h"))
        return (1.0 - z) * h_prev + z * candidate

    def readout(self, H: Tensor, X: Tensor, batch: GraphBatch) -> Tuple[Tensor, Tensor, Tensor]:
        """Returns (probs, gates, logits); logits are the pre-softmax graph embedding."""
        gates = sigmoid(reshape(self._mlp(concat([H, X]), "readout.f"), (batch.num_nodes,)))
        scores = matmul(H, self._p("readout.g.W")) + self._p("readout.g.b")
        logits = scatter_add(row_scale(scores, gates), batch.graph_index, batch.num_graphs)
        return softmax(logits), gates, logits

    def forward(self, graphs: Union[FdaGraph, Sequence[FdaGraph], GraphBatch], train: bool = False,
                rho: float = 0.0, rng: Optional[np.random.Generator] = None) -> ForwardResult:
        batch = self.batch(graphs)
        nodes = self.embed_nodes(batch, train=train, rho=rho, rng=rng)
        alphas: List[np.ndarray] = []
        edges = self.initial_edge_state(batch) if self.config.mode == "ggann" and batch.num_lanes else None
        for _ in range(self.config.T):
            if self.config.mode == "ggann" and edges is not None:
                edges = self.edge_state_update(edges, nodes, batch)
                alpha = self.attention_scores(nodes, batch)
                alphas.append(alpha.data.copy())
                m = self.aggregate_messages(nodes, batch, edges, alpha)
            else:
                m = self.aggregate_messages(nodes, batch)
            nodes = NodeState(H=self.gru_update(nodes.H, m), X=nodes.X)
        probs, gates, logits = self.readout(nodes.H, nodes.X, batch)
        return ForwardResult(probs=probs, logits=logits, node_states=nodes.H, gates=gates, alphas=alphas)

    def predict(self, graphs: Iterable[FdaGraph]) -> np.ndarray:
        """Class probabilities [num_graphs x num_classes] without recording."""
        return self.forward(list(graphs)).probs.data

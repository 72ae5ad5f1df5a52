"""
FDA graph construction.

The FDA graph keeps every AST node and tree edge, and adds data-flow edges
between variable statuses (LastUse, Compute, Operand, Return, Formal) and
function-call edges (Call). Variable statuses are statement-level: one per
statement touching a variable, located at the statement's first write of it
(or its first read when it is only read).
"""
import json
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, List, NamedTuple, Optional, Set, Tuple

import networkx as nx

from .ast_nodes import LITERAL_KINDS, OPERATOR_KINDS, Ast, NodeKind
from .exceptions import ArityMismatch, EmptyProgram, NestingTooDeep, SchemaError, UnresolvedIdentifier
from .logger import get_logger
from .schema import GRAPH_SCHEMA, validate_document

logger = get_logger("graph")


class EdgeType(IntEnum):
    Ast = 0
    Operand = 1
    LastUse = 2
    Compute = 3
    Return = 4
    Formal = 5
    Call = 6


NUM_EDGE_TYPES = len(EdgeType)

_INCREMENT_OPS = frozenset({"++", "--", "post++", "post--"})


class Edge(NamedTuple):
    src: int
    dst: int
    type: int


@dataclass(frozen=True)
class VarStatus:
    """One version of a variable: the statement-level occurrence ``node``.

    ``decl`` is the declaring VarDecl/ParmVarDecl, ``unit`` the root node of the
    statement the status belongs to and ``function`` its FunctionDecl.
    """
    var: str
    ordinal: int
    node: int
    decl: int
    unit: int
    function: int


@dataclass
class FdaGraph:
    num_nodes: int
    kinds: List[int]
    edges: List[Edge]
    label: Optional[int] = None
    source_id: str = ""
    external: List[int] = field(default_factory=list)

    def edge_counts(self) -> Dict[EdgeType, int]:
        counts = Counter(edge.type for edge in self.edges)
        return {t: counts.get(int(t), 0) for t in EdgeType}

    def with_edges(self, edges: Iterable[Edge]) -> 'FdaGraph':
        return FdaGraph(num_nodes=self.num_nodes, kinds=list(self.kinds), edges=list(edges),
                        label=self.label, source_id=self.source_id, external=list(self.external))

    def with_label(self, label: Optional[int]) -> 'FdaGraph':
        copy = self.with_edges(self.edges)
        copy.label = label
        return copy

    def validate(self) -> None:
        if len(self.kinds) != self.num_nodes:
            raise SchemaError(f"graph has {self.num_nodes} nodes but {len(self.kinds)} kinds")
        seen: Set[Edge] = set()
        ast_parent: Dict[int, int] = {}
        for edge in self.edges:
            if not (0 <= edge.src < self.num_nodes and 0 <= edge.dst < self.num_nodes):
                raise SchemaError(f"edge {tuple(edge)} out of range")
            if edge.type not in EdgeType._value2member_map_:
                raise SchemaError(f"edge {tuple(edge)} has unknown type")
            if edge in seen:
                raise SchemaError(f"duplicate edge {tuple(edge)}")
            seen.add(edge)
            if edge.type == EdgeType.Ast:
                if edge.dst in ast_parent:
                    raise SchemaError(f"node {edge.dst} has two Ast parents")
                ast_parent[edge.dst] = edge.src


@dataclass
class GraphStats:
    nodes: int
    edges: int
    per_type: Dict[str, int]


def _sorted_edges(edges: Iterable[Edge]) -> List[Edge]:
    return sorted(set(edges), key=lambda e: (e.type, e.src, e.dst))


# AST edges

def build_ast_edges(ast: Ast) -> List[Edge]:
    """One Ast edge parent -> child per tree link."""
    return [Edge(node.id, child, EdgeType.Ast) for node in ast.nodes for child in node.children]


# Variable versioning

class DataFlowAnalysis:
    """Name resolution, statement units, statuses and the per-function CFG."""

    def __init__(self, ast: Ast):
        self.ast = ast
        self.parents = ast.parents()
        self.functions: Dict[str, int] = {}
        for func in ast.functions():
            self.functions.setdefault(ast.node(func).symbol or "", func)
        self.refs: Dict[int, int] = {}
        self.units: Dict[int, List[int]] = {}
        self.unit_function: Dict[int, int] = {}
        self.cfgs: Dict[int, nx.DiGraph] = {}
        self.unit_of: Dict[int, int] = {}
        for func in ast.functions():
            self._resolve_function(func)
            units: List[int] = []
            body = ast.children(func)[-1]
            self._collect_units(body, units)
            units.sort()
            self.units[func] = units
            for unit in units:
                self.unit_function[unit] = func
                for node_id in ast.walk(unit):
                    self.unit_of[node_id] = unit
            self.cfgs[func] = self._build_cfg(func)
        self.written = self._written_refs()

    # Name resolution

    def _resolve_function(self, func: int) -> None:
        scopes: List[Dict[str, int]] = [{}]
        children = self.ast.children(func)
        for param in children[:-1]:
            scopes[-1][self.ast.node(param).symbol or ""] = param
        for stmt in self.ast.children(children[-1]):
            self._resolve(stmt, scopes)

    def _scoped(self, node_id: int, scopes: List[Dict[str, int]]) -> None:
        scopes.append({})
        self._resolve(node_id, scopes)
        scopes.pop()

    def _resolve(self, node_id: int, scopes: List[Dict[str, int]]) -> None:
        node = self.ast.node(node_id)
        kind = node.kind
        if kind == NodeKind.CompoundStmt:
            scopes.append({})
            for child in node.children:
                self._resolve(child, scopes)
            scopes.pop()
        elif kind == NodeKind.ForStmt:
            scopes.append({})
            for child in node.children[:-1]:
                self._resolve(child, scopes)
            self._scoped(node.children[-1], scopes)
            scopes.pop()
        elif kind == NodeKind.IfStmt:
            self._resolve(node.children[0], scopes)
            for branch in node.children[1:]:
                self._scoped(branch, scopes)
        elif kind == NodeKind.WhileStmt:
            self._resolve(node.children[0], scopes)
            self._scoped(node.children[1], scopes)
        elif kind == NodeKind.DoStmt:
            self._scoped(node.children[0], scopes)
            self._resolve(node.children[1], scopes)
        elif kind == NodeKind.VarDecl:
            for child in node.children:
                self._resolve(child, scopes)
            scopes[-1][node.symbol or ""] = node_id
        elif kind == NodeKind.DeclRefExpr:
            for scope in reversed(scopes):
                if node.symbol in scope:
                    self.refs[node_id] = scope[node.symbol]
                    return
            raise UnresolvedIdentifier(node.symbol or "", node.line or 0)
        else:
            for child in node.children:
                self._resolve(child, scopes)

    # Statement units

    def _collect_units(self, stmt: int, units: List[int]) -> None:
        node = self.ast.node(stmt)
        kind = node.kind
        if kind == NodeKind.CompoundStmt:
            for child in node.children:
                self._collect_units(child, units)
        elif kind in (NodeKind.BreakStmt, NodeKind.ContinueStmt):
            return
        elif kind in (NodeKind.IfStmt, NodeKind.WhileStmt):
            units.append(node.children[0])
            for child in node.children[1:]:
                self._collect_units(child, units)
        elif kind == NodeKind.DoStmt:
            self._collect_units(node.children[0], units)
            units.append(node.children[1])
        elif kind == NodeKind.ForStmt:
            units.extend(node.children[:-1])
            self._collect_units(node.children[-1], units)
        else:
            units.append(stmt)

    def _written_refs(self) -> Set[int]:
        written: Set[int] = set()
        for node in self.ast.nodes:
            target: Optional[int] = None
            if node.kind == NodeKind.CompoundAssignOperator or (
                    node.kind == NodeKind.BinaryOperator and node.op == "="):
                target = node.children[0]
            elif node.kind == NodeKind.UnaryOperator and node.op in _INCREMENT_OPS:
                target = node.children[0]
            if target is None:
                continue
            target = self.strip(target)
            while self.ast.kind(target) == NodeKind.ArraySubscriptExpr:
                target = self.strip(self.ast.children(target)[0])
            if self.ast.kind(target) == NodeKind.DeclRefExpr:
                written.add(target)
        return written

    def strip(self, node_id: int) -> int:
        """Skip ImplicitCastExpr wrappers."""
        while self.ast.kind(node_id) == NodeKind.ImplicitCastExpr:
            node_id = self.ast.children(node_id)[0]
        return node_id

    def occurrences(self, unit: int) -> List[Tuple[int, int, bool]]:
        """(node, decl, is_write) for every variable occurrence in a unit, pre-order."""
        found = []
        for node_id in self.ast.walk(unit):
            kind = self.ast.kind(node_id)
            if kind == NodeKind.VarDecl:
                found.append((node_id, node_id, True))
            elif kind == NodeKind.DeclRefExpr:
                found.append((node_id, self.refs[node_id], node_id in self.written))
        return found

    # Control flow

    def _build_cfg(self, func: int) -> nx.DiGraph:
        cfg = nx.DiGraph()
        entry, exit_ = ("entry", func), ("exit", func)
        cfg.add_node(entry)
        cfg.add_node(exit_)
        loops: List[Tuple[list, list]] = []

        def link(preds: list, target) -> None:
            cfg.add_node(target)
            for pred in preds:
                cfg.add_edge(pred, target)

        def flow(stmt: int, preds: list) -> list:
            node = self.ast.node(stmt)
            kind = node.kind
            if kind == NodeKind.CompoundStmt:
                for child in node.children:
                    preds = flow(child, preds)
                return preds
            if kind == NodeKind.IfStmt:
                cond = node.children[0]
                link(preds, cond)
                out = flow(node.children[1], [cond])
                if len(node.children) == 3:
                    return out + flow(node.children[2], [cond])
                return out + [cond]
            if kind == NodeKind.WhileStmt:
                cond = node.children[0]
                link(preds, cond)
                loops.append(([], []))
                body_out = flow(node.children[1], [cond])
                breaks, continues = loops.pop()
                link(body_out + continues, cond)
                return [cond] + breaks
            if kind == NodeKind.DoStmt:
                head = ("head", stmt)
                cond = node.children[1]
                link(preds, head)
                loops.append(([], []))
                body_out = flow(node.children[0], [head])
                breaks, continues = loops.pop()
                link(body_out + continues, cond)
                link([cond], head)
                return [cond] + breaks
            if kind == NodeKind.ForStmt:
                mask = node.op or ""
                parts = dict(zip([flag for flag in "icu" if flag in mask], node.children[:-1]))
                if "i" in parts:
                    link(preds, parts["i"])
                    preds = [parts["i"]]
                head = parts.get("c", ("head", stmt))
                link(preds, head)
                loops.append(([], []))
                body_out = flow(node.children[-1], [head])
                breaks, continues = loops.pop()
                tail = body_out + continues
                if "u" in parts:
                    link(tail, parts["u"])
                    tail = [parts["u"]]
                link(tail, head)
                return ([head] if "c" in parts else []) + breaks
            if kind == NodeKind.ReturnStmt:
                link(preds, stmt)
                link([stmt], exit_)
                return []
            if kind == NodeKind.BreakStmt:
                if loops:
                    loops[-1][0].extend(preds)
                return []
            if kind == NodeKind.ContinueStmt:
                if loops:
                    loops[-1][1].extend(preds)
                return []
            link(preds, stmt)
            return [stmt]

        out = flow(self.ast.children(func)[-1], [entry])
        link(out, exit_)
        return cfg

    def reaching_units(self, unit: int, decl: int, touching: Dict[int, Set[int]]) -> Set[int]:
        """Nearest earlier units on every backward CFG path that touch ``decl``."""
        cfg = self.cfgs[self.unit_function[unit]]
        found: Set[int] = set()
        visited: Set = set()
        queue = deque(cfg.predecessors(unit))
        while queue:
            current = queue.popleft()
            if current in visited:
                continue
            visited.add(current)
            if isinstance(current, int) and decl in touching.get(current, ()):
                if current != unit:
                    found.add(current)
                continue
            queue.extend(cfg.predecessors(current))
        return found


def _statuses(analysis: DataFlowAnalysis) -> List[VarStatus]:
    ast = analysis.ast
    statuses: List[VarStatus] = []
    for func, units in analysis.units.items():
        ordinals: Counter = Counter()
        for unit in units:
            chosen: Dict[int, Tuple[int, bool]] = {}
            order: List[int] = []
            for node_id, decl, is_write in analysis.occurrences(unit):
                if decl not in chosen:
                    chosen[decl] = (node_id, is_write)
                    order.append(decl)
                elif is_write and not chosen[decl][1]:
                    chosen[decl] = (node_id, True)
            for decl in order:
                ordinals[decl] += 1
                statuses.append(VarStatus(var=ast.node(decl).symbol or "", ordinal=ordinals[decl],
                                          node=chosen[decl][0], decl=decl, unit=unit, function=func))
    return statuses


def version_variables(ast: Ast) -> List[VarStatus]:
    """
    Number the statement-level versions of every variable, per function.

    Raises:
        UnresolvedIdentifier: A variable reference has no visible declaration.
    """
    return _statuses(DataFlowAnalysis(ast))


# Data-flow edges

def build_dfg(ast: Ast, statuses: List[VarStatus]) -> List[Edge]:
    """
    Emit the LastUse, Compute, Operand, Return and Formal edges.

    Raises:
        ArityMismatch: A call passes a different number of arguments than the
            declared callee has parameters.
    """
    analysis = DataFlowAnalysis(ast)
    by_unit_decl: Dict[Tuple[int, int], VarStatus] = {(s.unit, s.decl): s for s in statuses}
    touching: Dict[int, Set[int]] = {}
    for status in statuses:
        touching.setdefault(status.unit, set()).add(status.decl)

    def status_node(node_id: int) -> int:
        """Map a DeclRefExpr to its status node; other nodes map to themselves."""
        node_id = analysis.strip(node_id)
        if ast.kind(node_id) == NodeKind.DeclRefExpr:
            return by_unit_decl[(analysis.unit_of[node_id], analysis.refs[node_id])].node
        return node_id

    edges: List[Edge] = []

    for status in statuses:
        for earlier in analysis.reaching_units(status.unit, status.decl, touching):
            edges.append(Edge(status.node, by_unit_decl[(earlier, status.decl)].node, EdgeType.LastUse))

    for node in ast.nodes:
        target_decl: Optional[int] = None
        source_root: Optional[int] = None
        if node.kind == NodeKind.VarDecl and node.children:
            target_decl, source_root = node.id, node.children[0]
        elif node.kind == NodeKind.CompoundAssignOperator or (
                node.kind == NodeKind.BinaryOperator and node.op == "="):
            lhs = analysis.strip(node.children[0])
            while ast.kind(lhs) == NodeKind.ArraySubscriptExpr:
                lhs = analysis.strip(ast.children(lhs)[0])
            if ast.kind(lhs) == NodeKind.DeclRefExpr:
                target_decl, source_root = analysis.refs[lhs], node.children[1]
        if target_decl is None or source_root is None or node.id not in analysis.unit_of:
            continue
        target = by_unit_decl[(analysis.unit_of[node.id], target_decl)].node
        for inner in ast.walk(source_root):
            kind = ast.kind(inner)
            if kind == NodeKind.DeclRefExpr:
                source = status_node(inner)
            elif kind in LITERAL_KINDS:
                source = inner
            elif kind == NodeKind.CallExpr and ast.node(inner).symbol in analysis.functions:
                source = analysis.functions[ast.node(inner).symbol or ""]
            else:
                continue
            if source != target:
                edges.append(Edge(source, target, EdgeType.Compute))

    for node in ast.nodes:
        if node.kind in OPERATOR_KINDS:
            for child in node.children:
                edges.append(Edge(node.id, status_node(child), EdgeType.Operand))
        elif node.kind == NodeKind.ReturnStmt and node.children:
            func = analysis.unit_function[node.id]
            edges.append(Edge(status_node(node.children[0]), func, EdgeType.Return))
        elif node.kind == NodeKind.CallExpr and node.symbol in analysis.functions:
            callee = analysis.functions[node.symbol or ""]
            params = ast.children(callee)[:-1]
            if len(params) != len(node.children):
                raise ArityMismatch(node.symbol or "", len(params), len(node.children))
            for arg, param in zip(node.children, params):
                edges.append(Edge(status_node(arg), param, EdgeType.Formal))

    return _sorted_edges(edges)


# Function-call edges

def external_callees(ast: Ast) -> List[str]:
    """Names of called but undefined functions, in order of first call."""
    defined = {ast.node(f).symbol for f in ast.functions()}
    names: List[str] = []
    for node_id in ast.walk():
        node = ast.node(node_id)
        if node.kind == NodeKind.CallExpr and node.symbol not in defined and node.symbol not in names:
            names.append(node.symbol or "")
    return names


def build_fcg(ast: Ast) -> List[Edge]:
    """
    Call edges caller -> callee.

    An undefined callee gets a synthetic FunctionDecl node numbered after the
    AST nodes in order of first call, hung under the TranslationUnit by an Ast edge.
    """
    defined: Dict[str, int] = {}
    for func in ast.functions():
        defined.setdefault(ast.node(func).symbol or "", func)
    external = {name: len(ast) + index for index, name in enumerate(external_callees(ast))}
    edges = [Edge(ast.root, node_id, EdgeType.Ast) for node_id in external.values()]
    for func in ast.functions():
        for node_id in ast.walk(func):
            node = ast.node(node_id)
            if node.kind == NodeKind.CallExpr:
                callee = defined.get(node.symbol or "", external.get(node.symbol or ""))
                if callee is not None:
                    edges.append(Edge(func, callee, EdgeType.Call))
    return _sorted_edges(edges)


# Integration

def build_fda(ast: Ast, label: Optional[int] = None, source_id: str = "") -> FdaGraph:
    """
    Build the FDA graph of a translation unit.

    Raises:
        EmptyProgram: The unit defines no function.
        UnresolvedIdentifier, ArityMismatch: From data-flow construction.
        NestingTooDeep: The tree is deeper than the interpreter can recurse.
    """
    if not ast.functions():
        raise EmptyProgram(source_id)
    try:
        statuses = version_variables(ast)
        external = external_callees(ast)
        edges = _sorted_edges(build_ast_edges(ast) + build_dfg(ast, statuses) + build_fcg(ast))
    except RecursionError:
        raise NestingTooDeep(source_id) from None
    num_nodes = len(ast) + len(external)
    kinds = [int(node.kind) for node in ast.nodes] + [int(NodeKind.FunctionDecl)] * len(external)
    graph = FdaGraph(num_nodes=num_nodes, kinds=kinds, edges=edges, label=label,
                     source_id=source_id, external=list(range(len(ast), num_nodes)))
    logger.debug(f"Built FDA graph {source_id or '<anon>'}: {num_nodes} nodes, {len(edges)} edges")
    return graph


def drop_edge_type(g: FdaGraph, t: EdgeType) -> FdaGraph:
    """Copy of ``g`` without edges of type ``t``."""
    return g.with_edges(e for e in g.edges if e.type != t)


def ast_only(g: FdaGraph) -> FdaGraph:
    """Copy of ``g`` keeping only the syntax-tree edges."""
    return g.with_edges(e for e in g.edges if e.type == EdgeType.Ast)


def graph_stats(g: FdaGraph) -> GraphStats:
    counts = g.edge_counts()
    return GraphStats(nodes=g.num_nodes, edges=len(g.edges),
                      per_type={t.name: counts[t] for t in EdgeType})


# JSON

def graph_to_dict(g: FdaGraph) -> dict:
    data = {
        "source_id": g.source_id,
        "label": g.label,
        "num_nodes": g.num_nodes,
        "kinds": list(g.kinds),
        "edges": [[e.src, e.dst, int(e.type)] for e in g.edges],
    }
    if g.external:
        data["external"] = list(g.external)
    return data


def graph_to_json(g: FdaGraph) -> str:
    """Canonical graph JSON: fixed key order, edges sorted (type, src, dst)."""
    return json.dumps(graph_to_dict(g), separators=(",", ":"))


def graph_from_dict(data: dict) -> FdaGraph:
    validate_document(data, GRAPH_SCHEMA, "graph")
    graph = FdaGraph(
        num_nodes=data["num_nodes"],
        kinds=list(data["kinds"]),
        edges=_sorted_edges(Edge(src, dst, t) for src, dst, t in data["edges"]),
        label=data.get("label"),
        source_id=data["source_id"],
        external=list(data.get("external", [])),
    )
    if len(graph.edges) != len(data["edges"]):
        raise SchemaError("graph has duplicate edges")
    graph.validate()
    return graph


def graph_from_json(text: str) -> FdaGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"Invalid graph format (JSON Decode Error): {e}")
    return graph_from_dict(data)

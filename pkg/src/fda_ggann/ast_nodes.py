"""
Syntax tree types for MiniC.

Node kinds follow the clang names. Identifiers and literal spellings ride on the
nodes for graph construction and printing only; nothing downstream of the graph
builder may read them.
"""
import json
import sys
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, Iterator, List, Optional

from .exceptions import SchemaError
from .schema import AST_SCHEMA, validate_document


class NodeKind(IntEnum):
    """Closed set of AST node kinds; the integer codes are serialized."""
    TranslationUnit = 0
    FunctionDecl = 1
    ParmVarDecl = 2
    VarDecl = 3
    DeclStmt = 4
    CompoundStmt = 5
    IfStmt = 6
    ForStmt = 7
    WhileStmt = 8
    DoStmt = 9
    ReturnStmt = 10
    BreakStmt = 11
    ContinueStmt = 12
    BinaryOperator = 13
    UnaryOperator = 14
    CompoundAssignOperator = 15
    ConditionalOperator = 16
    CallExpr = 17
    DeclRefExpr = 18
    IntegerLiteral = 19
    FloatingLiteral = 20
    StringLiteral = 21
    ArraySubscriptExpr = 22
    ImplicitCastExpr = 23
    # Never produced by the parser: MiniC has no goto.
    GotoStmt = 24


SYMBOL_KINDS = frozenset({
    NodeKind.FunctionDecl,
    NodeKind.ParmVarDecl,
    NodeKind.VarDecl,
    NodeKind.DeclRefExpr,
    NodeKind.CallExpr,
})

OPERATOR_KINDS = frozenset({
    NodeKind.BinaryOperator,
    NodeKind.UnaryOperator,
    NodeKind.CompoundAssignOperator,
    NodeKind.ConditionalOperator,
})

LITERAL_KINDS = frozenset({
    NodeKind.IntegerLiteral,
    NodeKind.FloatingLiteral,
    NodeKind.StringLiteral,
})

DECL_KINDS = frozenset({NodeKind.FunctionDecl, NodeKind.ParmVarDecl, NodeKind.VarDecl})


@dataclass
class AstNode:
    """One syntax tree node.

    ``op`` is the operator tag of operator nodes (``+``, ``>=``, ``+=``, ``post++``)
    and the init/cond/update presence mask ("icu" subset) of a ForStmt.
    ``type_name`` is the declared type of declarations (``int``, ``float[10]``)
    and the target type of an ImplicitCastExpr.
    """
    id: int
    kind: NodeKind
    children: List[int] = field(default_factory=list)
    symbol: Optional[str] = None
    literal: Optional[str] = None
    op: Optional[str] = None
    type_name: Optional[str] = None
    line: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"id": self.id, "kind": self.kind.name}
        if self.op is not None:
            data["op"] = self.op
        if self.symbol is not None:
            data["symbol"] = self.symbol
        if self.literal is not None:
            data["literal"] = self.literal
        if self.type_name is not None:
            data["type"] = self.type_name
        if self.line is not None:
            data["line"] = self.line
        data["children"] = list(self.children)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AstNode':
        symbol = data.get("symbol")
        return cls(
            id=data["id"],
            kind=NodeKind[data["kind"]],
            children=list(data["children"]),
            symbol=sys.intern(symbol) if symbol is not None else None,
            literal=data.get("literal"),
            op=data.get("op"),
            type_name=data.get("type"),
            line=data.get("line"),
        )


@dataclass
class Ast:
    """A syntax tree stored as a flat, pre-order numbered node list."""
    nodes: List[AstNode]
    root: int = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> AstNode:
        return self.nodes[node_id]

    def kind(self, node_id: int) -> NodeKind:
        return self.nodes[node_id].kind

    def children(self, node_id: int) -> List[int]:
        return self.nodes[node_id].children

    def walk(self, start: Optional[int] = None) -> Iterator[int]:
        """Yield node ids in pre-order (source order) starting at ``start``."""
        stack = [self.root if start is None else start]
        while stack:
            node_id = stack.pop()
            yield node_id
            stack.extend(reversed(self.nodes[node_id].children))

    def parents(self) -> Dict[int, int]:
        return {child: node.id for node in self.nodes for child in node.children}

    def functions(self) -> List[int]:
        return [c for c in self.nodes[self.root].children
                if self.nodes[c].kind == NodeKind.FunctionDecl]

    def kind_counts(self) -> Counter:
        return Counter(node.kind.name for node in self.nodes)

    def shape_signature(self) -> List[tuple]:
        """Kinds, child lists and operator tags; identical under consistent renaming."""
        return [(n.kind, tuple(n.children), n.op) for n in self.nodes]

    def validate(self) -> None:
        """Check the tree invariants, raising SchemaError on violation."""
        n = len(self.nodes)
        seen_parent: Dict[int, int] = {}
        for index, node in enumerate(self.nodes):
            if node.id != index:
                raise SchemaError(f"node at position {index} has id {node.id}")
            if (node.symbol is not None) != (node.kind in SYMBOL_KINDS):
                raise SchemaError(f"node {index} ({node.kind.name}) symbol presence is wrong")
            for child in node.children:
                if not 0 <= child < n:
                    raise SchemaError(f"node {index} has out-of-range child {child}")
                if child in seen_parent or child == self.root:
                    raise SchemaError(f"node {child} has more than one parent")
                seen_parent[child] = index
        reachable = sum(1 for _ in self.walk())
        if reachable != n:
            raise SchemaError(f"{n - reachable} node(s) unreachable from the root")


def ast_to_json(ast: Ast) -> str:
    """Serialize an Ast to canonical JSON."""
    payload = {"root": ast.root, "nodes": [node.to_dict() for node in ast.nodes]}
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def ast_from_json(text: str) -> Ast:
    """Parse canonical AST JSON back into an Ast."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"Invalid AST format (JSON Decode Error): {e}")
    validate_document(data, AST_SCHEMA, "AST")
    ast = Ast(nodes=[AstNode.from_dict(item) for item in data["nodes"]], root=data["root"])
    ast.validate()
    return ast

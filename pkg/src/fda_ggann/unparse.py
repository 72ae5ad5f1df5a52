"""
MiniC pretty-printer.

``parse_source(unparse(ast))`` rebuilds the same tree: nested operator
expressions are fully parenthesized and implicit casts are left for the parser
to re-create.
"""
from typing import List

from .ast_nodes import Ast, NodeKind

_ATOMIC = frozenset({
    NodeKind.DeclRefExpr,
    NodeKind.IntegerLiteral,
    NodeKind.FloatingLiteral,
    NodeKind.StringLiteral,
    NodeKind.CallExpr,
    NodeKind.ArraySubscriptExpr,
})

_INDENT = "    "


def _split_type(type_name: str) -> tuple:
    """'int[10]' -> ('int', '[10]')."""
    if "[" in type_name:
        base, rest = type_name.split("[", 1)
        return base, "[" + rest
    return type_name, ""


class Unparser:
    """Renders an Ast back to MiniC text."""

    def __init__(self, ast: Ast):
        self.ast = ast

    def _strip_cast(self, node_id: int) -> int:
        while self.ast.kind(node_id) == NodeKind.ImplicitCastExpr:
            node_id = self.ast.children(node_id)[0]
        return node_id

    def unit(self) -> str:
        return "\n".join(self.function(f) for f in self.ast.children(self.ast.root)) + ("\n" if self.ast.children(self.ast.root) else "")

    def function(self, node_id: int) -> str:
        node = self.ast.node(node_id)
        params = [self.param(c) for c in node.children if self.ast.kind(c) == NodeKind.ParmVarDecl]
        body = node.children[-1]
        header = f"{node.type_name} {node.symbol}({', '.join(params)}) "
        return header + "\n".join(self.statement(body, 0))

    def param(self, node_id: int) -> str:
        node = self.ast.node(node_id)
        base, suffix = _split_type(node.type_name or "int")
        return f"{base} {node.symbol}{suffix}"

    def declaration(self, node_id: int) -> str:
        declarators = []
        base = "int"
        for var_id in self.ast.children(node_id):
            var = self.ast.node(var_id)
            base, suffix = _split_type(var.type_name or "int")
            text = f"{var.symbol}{suffix}"
            if var.children:
                text += " = " + self.expression(var.children[0], top=True)
            declarators.append(text)
        return f"{base} {', '.join(declarators)}"

    def statement(self, node_id: int, depth: int) -> List[str]:
        pad = _INDENT * depth
        node = self.ast.node(node_id)
        kind = node.kind
        if kind == NodeKind.CompoundStmt:
            lines = ["{"]
            for child in node.children:
                lines.extend(_INDENT * (depth + 1) + line.lstrip(" ") if i == 0 else line
                             for i, line in enumerate(self.statement(child, depth + 1)))
            lines.append(pad + "}")
            return lines
        if kind == NodeKind.DeclStmt:
            return [pad + self.declaration(node_id) + ";"]
        if kind == NodeKind.IfStmt:
            lines = self._header(f"if ({self.expression(node.children[0], top=True)})",
                                 node.children[1], depth)
            if len(node.children) == 3:
                else_lines = self.statement(node.children[2], depth)
                lines[-1] += " else " + else_lines[0].lstrip(" ")
                lines.extend(else_lines[1:])
            return lines
        if kind == NodeKind.WhileStmt:
            return self._header(f"while ({self.expression(node.children[0], top=True)})",
                                node.children[1], depth)
        if kind == NodeKind.DoStmt:
            lines = self._header("do", node.children[0], depth)
            lines[-1] += f" while ({self.expression(node.children[1], top=True)});"
            return lines
        if kind == NodeKind.ForStmt:
            mask = node.op or ""
            parts = list(node.children[:-1])
            slots = []
            for flag in "icu":
                if flag in mask:
                    part = parts.pop(0)
                    if self.ast.kind(part) == NodeKind.DeclStmt:
                        slots.append(self.declaration(part))
                    else:
                        slots.append(self.expression(part, top=True))
                else:
                    slots.append("")
            header = f"for ({slots[0]}; {slots[1]}; {slots[2]})".replace("( ;", "(;").replace("; ;", ";;").replace("; )", ";)")
            return self._header(header, node.children[-1], depth)
        if kind == NodeKind.ReturnStmt:
            if node.children:
                return [pad + "return " + self.expression(node.children[0], top=True) + ";"]
            return [pad + "return;"]
        if kind == NodeKind.BreakStmt:
            return [pad + "break;"]
        if kind == NodeKind.ContinueStmt:
            return [pad + "continue;"]
        return [pad + self.expression(node_id, top=True) + ";"]

    def _header(self, header: str, body: int, depth: int) -> List[str]:
        pad = _INDENT * depth
        body_lines = self.statement(body, depth + 1)
        if self.ast.kind(body) == NodeKind.CompoundStmt:
            body_lines = self.statement(body, depth)
            return [pad + header + " " + body_lines[0].lstrip(" ")] + body_lines[1:]
        return [pad + header] + body_lines

    def expression(self, node_id: int, top: bool = False) -> str:
        node_id = self._strip_cast(node_id)
        node = self.ast.node(node_id)
        kind = node.kind
        if kind in (NodeKind.IntegerLiteral, NodeKind.FloatingLiteral, NodeKind.StringLiteral):
            return node.literal or ""
        if kind == NodeKind.DeclRefExpr:
            return node.symbol or ""
        if kind == NodeKind.CallExpr:
            args = ", ".join(self.expression(c, top=True) for c in node.children)
            return f"{node.symbol}({args})"
        if kind == NodeKind.ArraySubscriptExpr:
            base, index = node.children
            return f"{self.operand(base)}[{self.expression(index, top=True)}]"
        if kind == NodeKind.UnaryOperator:
            (child,) = node.children
            op = node.op or ""
            if op.startswith("post"):
                text = f"{self.operand(child)}{op[4:]}"
            else:
                text = f"{op}{self.operand(child)}"
        elif kind in (NodeKind.BinaryOperator, NodeKind.CompoundAssignOperator):
            lhs, rhs = node.children
            text = f"{self.operand(lhs)} {node.op} {self.operand(rhs)}"
        elif kind == NodeKind.ConditionalOperator:
            cond, then, other = node.children
            text = f"{self.operand(cond)} ? {self.operand(then)} : {self.operand(other)}"
        else:
            raise ValueError(f"cannot print {kind.name} as an expression")
        return text if top else f"({text})"

    def operand(self, node_id: int) -> str:
        inner = self._strip_cast(node_id)
        return self.expression(inner, top=self.ast.kind(inner) in _ATOMIC)


def unparse(ast: Ast) -> str:
    """Render an Ast as MiniC source text."""
    return Unparser(ast).unit()

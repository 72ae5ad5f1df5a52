"""
Recursive-descent parser for MiniC.

Produces an Ast whose node ids are assigned in pre-order, so child order is
source order and the same bytes always give the same ids.
"""
import functools
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, TypeVar

from .ast_nodes import Ast, AstNode, NodeKind
from .exceptions import ParseError
from .lexer import TYPE_KEYWORDS, Token, TokenKind, tokenize
from .logger import get_logger

logger = get_logger("frontend")

ASSIGN_OPS = frozenset({"=", "+=", "-=", "*=", "/=", "%=", "<<=", ">>="})

# Binary precedence levels, loosest first.
BINARY_LEVELS = [
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("<<", ">>"),
    ("+", "-"),
    ("*", "/", "%"),
]

COMPARISON_OPS = frozenset({"||", "&&", "==", "!=", "<", "<=", ">", ">="})

PREFIX_OPS = frozenset({"!", "-", "+", "++", "--"})

# Statements, assignments and prefix operators open one level each; a
# parenthesized operand costs two.
MAX_NESTING = 64

_Method = TypeVar("_Method", bound=Callable[..., "_Draft"])


@dataclass
class _Draft:
    """A node before pre-order numbering."""
    kind: NodeKind
    children: List['_Draft'] = field(default_factory=list)
    symbol: Optional[str] = None
    literal: Optional[str] = None
    op: Optional[str] = None
    type_name: Optional[str] = None
    line: Optional[int] = None
    ctype: str = "int"


def _element_type(type_name: str) -> str:
    return type_name.split("[", 1)[0]


def _nesting(method: _Method) -> _Method:
    """Count one nesting level around ``method``; too many is a ParseError."""
    @functools.wraps(method)
    def wrapper(self: "Parser", *args, **kwargs):
        if self.depth >= MAX_NESTING:
            self.error(f"at most {MAX_NESTING} nested levels")
        self.depth += 1
        try:
            return method(self, *args, **kwargs)
        finally:
            self.depth -= 1

    return wrapper  # type: ignore[return-value]


class Parser:
    """Turns a MiniC token list into an Ast."""

    def __init__(self, tokens: List[Token]):
        self.tokens = tokens
        self.pos = 0
        self.depth = 0
        self.scopes: List[Dict[str, str]] = []
        self.function_types = self._collect_function_types()

    # Token helpers

    def _collect_function_types(self) -> Dict[str, str]:
        """Pre-scan `type name (` at brace depth 0 so calls can be typed before the definition."""
        found: Dict[str, str] = {}
        depth = 0
        for i, tok in enumerate(self.tokens):
            if tok.is_op("{"):
                depth += 1
            elif tok.is_op("}"):
                depth -= 1
            elif (depth == 0 and tok.kind == TokenKind.KEYWORD and tok.text in TYPE_KEYWORDS
                  and i + 2 < len(self.tokens)
                  and self.tokens[i + 1].kind == TokenKind.IDENTIFIER
                  and self.tokens[i + 2].is_op("(")):
                found.setdefault(self.tokens[i + 1].text, tok.text)
        return found

    def peek(self, offset: int = 0) -> Optional[Token]:
        index = self.pos + offset
        return self.tokens[index] if index < len(self.tokens) else None

    def at_op(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.is_op(text)

    def at_keyword(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.is_keyword(text)

    def at_type(self) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == TokenKind.KEYWORD and tok.text in TYPE_KEYWORDS

    def advance(self) -> Token:
        tok = self.peek()
        if tok is None:
            self.error("more input")
        self.pos += 1
        return tok  # type: ignore[return-value]

    def error(self, expected: str) -> None:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else None
            line = last.line if last else 1
            col = last.col + len(last.text) if last else 1
            raise ParseError(line, col, expected, "end of input")
        raise ParseError(tok.line, tok.col, expected, tok.text)

    def expect_op(self, text: str) -> Token:
        if not self.at_op(text):
            self.error(f"'{text}'")
        return self.advance()

    def expect_keyword(self, text: str) -> Token:
        if not self.at_keyword(text):
            self.error(f"'{text}'")
        return self.advance()

    def expect_identifier(self) -> Token:
        tok = self.peek()
        if tok is None or tok.kind != TokenKind.IDENTIFIER:
            self.error("identifier")
        return self.advance()

    def expect_type(self) -> Token:
        if not self.at_type():
            self.error("type (int, float or void)")
        return self.advance()

    # Scopes

    def declare(self, name: str, type_name: str) -> None:
        self.scopes[-1][name] = type_name

    def lookup(self, name: str) -> str:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return "int"

    # Grammar

    def parse_unit(self) -> _Draft:
        unit = _Draft(NodeKind.TranslationUnit)
        while self.peek() is not None:
            unit.children.append(self.parse_function())
        return unit

    def parse_function(self) -> _Draft:
        type_tok = self.expect_type()
        name_tok = self.expect_identifier()
        func = _Draft(NodeKind.FunctionDecl, symbol=sys.intern(name_tok.text),
                      type_name=type_tok.text, line=type_tok.line)
        self.expect_op("(")
        self.scopes.append({})
        if not self.at_op(")"):
            func.children.append(self.parse_param())
            while self.at_op(","):
                self.advance()
                func.children.append(self.parse_param())
        self.expect_op(")")
        if not self.at_op("{"):
            self.error("'{'")
        func.children.append(self.parse_block(new_scope=False))
        self.scopes.pop()
        return func

    def parse_param(self) -> _Draft:
        type_tok = self.expect_type()
        if type_tok.text == "void":
            raise ParseError(type_tok.line, type_tok.col, "int or float", "void")
        name_tok = self.expect_identifier()
        type_name = type_tok.text
        if self.at_op("["):
            self.advance()
            self.expect_op("]")
            type_name += "[]"
        self.declare(name_tok.text, type_name)
        return _Draft(NodeKind.ParmVarDecl, symbol=sys.intern(name_tok.text),
                      type_name=type_name, line=name_tok.line)

    def parse_block(self, new_scope: bool = True) -> _Draft:
        open_tok = self.expect_op("{")
        block = _Draft(NodeKind.CompoundStmt, line=open_tok.line)
        if new_scope:
            self.scopes.append({})
        while not self.at_op("}"):
            if self.peek() is None:
                self.error("'}'")
            block.children.append(self.parse_statement())
        self.advance()
        if new_scope:
            self.scopes.pop()
        return block

    @_nesting
    def parse_statement(self) -> _Draft:
        tok = self.peek()
        if tok is None:
            self.error("statement")
        assert tok is not None
        if tok.is_op("{"):
            return self.parse_block()
        if self.at_type():
            decl = self.parse_declaration()
            self.expect_op(";")
            return decl
        if tok.kind == TokenKind.KEYWORD:
            handler = {
                "if": self.parse_if,
                "while": self.parse_while,
                "do": self.parse_do,
                "for": self.parse_for,
                "return": self.parse_return,
                "break": self.parse_break,
                "continue": self.parse_continue,
            }.get(tok.text)
            if handler is None:
                self.error("statement")
            return handler()  # type: ignore[misc]
        expr = self.parse_expression()
        self.expect_op(";")
        return expr

    def parse_declaration(self) -> _Draft:
        type_tok = self.expect_type()
        if type_tok.text == "void":
            raise ParseError(type_tok.line, type_tok.col, "int or float", "void")
        stmt = _Draft(NodeKind.DeclStmt, line=type_tok.line)
        stmt.children.append(self.parse_declarator(type_tok.text))
        while self.at_op(","):
            self.advance()
            stmt.children.append(self.parse_declarator(type_tok.text))
        return stmt

    def parse_declarator(self, base_type: str) -> _Draft:
        name_tok = self.expect_identifier()
        type_name = base_type
        if self.at_op("["):
            self.advance()
            size = self.peek()
            if size is None or size.kind != TokenKind.INTEGER_LITERAL:
                self.error("array size")
            type_name = f"{base_type}[{self.advance().text}]"
            self.expect_op("]")
        var = _Draft(NodeKind.VarDecl, symbol=sys.intern(name_tok.text),
                     type_name=type_name, line=name_tok.line, ctype=base_type)
        if self.at_op("="):
            self.advance()
            init = self.parse_assignment()
            var.children.append(self._convert(init, base_type))
        # Declared after the initializer: `int x = x;` refers to an outer x.
        self.declare(name_tok.text, type_name)
        return var

    def parse_if(self) -> _Draft:
        tok = self.expect_keyword("if")
        node = _Draft(NodeKind.IfStmt, line=tok.line)
        self.expect_op("(")
        node.children.append(self.parse_expression())
        self.expect_op(")")
        node.children.append(self.parse_scoped_statement())
        if self.at_keyword("else"):
            self.advance()
            node.children.append(self.parse_scoped_statement())
        return node

    def parse_while(self) -> _Draft:
        tok = self.expect_keyword("while")
        node = _Draft(NodeKind.WhileStmt, line=tok.line)
        self.expect_op("(")
        node.children.append(self.parse_expression())
        self.expect_op(")")
        node.children.append(self.parse_scoped_statement())
        return node

    def parse_do(self) -> _Draft:
        tok = self.expect_keyword("do")
        node = _Draft(NodeKind.DoStmt, line=tok.line)
        node.children.append(self.parse_scoped_statement())
        self.expect_keyword("while")
        self.expect_op("(")
        node.children.append(self.parse_expression())
        self.expect_op(")")
        self.expect_op(";")
        return node

    def parse_for(self) -> _Draft:
        tok = self.expect_keyword("for")
        node = _Draft(NodeKind.ForStmt, line=tok.line)
        mask = ""
        self.scopes.append({})
        self.expect_op("(")
        if not self.at_op(";"):
            node.children.append(self.parse_declaration() if self.at_type() else self.parse_expression())
            mask += "i"
        self.expect_op(";")
        if not self.at_op(";"):
            node.children.append(self.parse_expression())
            mask += "c"
        self.expect_op(";")
        if not self.at_op(")"):
            node.children.append(self.parse_expression())
            mask += "u"
        self.expect_op(")")
        node.children.append(self.parse_scoped_statement())
        self.scopes.pop()
        node.op = mask
        return node

    def parse_scoped_statement(self) -> _Draft:
        self.scopes.append({})
        stmt = self.parse_statement()
        self.scopes.pop()
        return stmt

    def parse_return(self) -> _Draft:
        tok = self.expect_keyword("return")
        node = _Draft(NodeKind.ReturnStmt, line=tok.line)
        if not self.at_op(";"):
            node.children.append(self.parse_expression())
        self.expect_op(";")
        return node

    def parse_break(self) -> _Draft:
        tok = self.expect_keyword("break")
        self.expect_op(";")
        return _Draft(NodeKind.BreakStmt, line=tok.line)

    def parse_continue(self) -> _Draft:
        tok = self.expect_keyword("continue")
        self.expect_op(";")
        return _Draft(NodeKind.ContinueStmt, line=tok.line)

    # Expressions

    def parse_expression(self) -> _Draft:
        return self.parse_assignment()

    @_nesting
    def parse_assignment(self) -> _Draft:
        lhs = self.parse_conditional()
        tok = self.peek()
        if tok is not None and tok.kind == TokenKind.OPERATOR and tok.text in ASSIGN_OPS:
            if lhs.kind not in (NodeKind.DeclRefExpr, NodeKind.ArraySubscriptExpr):
                raise ParseError(tok.line, tok.col, "assignable expression before " + tok.text, tok.text)
            self.advance()
            rhs = self.parse_assignment()
            kind = NodeKind.BinaryOperator if tok.text == "=" else NodeKind.CompoundAssignOperator
            rhs = self._convert(rhs, lhs.ctype)
            return _Draft(kind, [lhs, rhs], op=tok.text, line=lhs.line, ctype=lhs.ctype)
        return lhs

    def parse_conditional(self) -> _Draft:
        cond = self.parse_binary(0)
        if self.at_op("?"):
            self.advance()
            then = self.parse_assignment()
            self.expect_op(":")
            other = self.parse_conditional()
            then, other = self._balance(then, other)
            return _Draft(NodeKind.ConditionalOperator, [cond, then, other],
                          line=cond.line, ctype=then.ctype)
        return cond

    def parse_binary(self, level: int) -> _Draft:
        if level == len(BINARY_LEVELS):
            return self.parse_unary()
        lhs = self.parse_binary(level + 1)
        while True:
            tok = self.peek()
            if tok is None or tok.kind != TokenKind.OPERATOR or tok.text not in BINARY_LEVELS[level]:
                return lhs
            self.advance()
            rhs = self.parse_binary(level + 1)
            lhs, rhs = self._balance(lhs, rhs)
            ctype = "int" if tok.text in COMPARISON_OPS else lhs.ctype
            lhs = _Draft(NodeKind.BinaryOperator, [lhs, rhs], op=tok.text, line=lhs.line, ctype=ctype)

    @_nesting
    def parse_unary(self) -> _Draft:
        tok = self.peek()
        if tok is not None and tok.kind == TokenKind.OPERATOR and tok.text in PREFIX_OPS:
            self.advance()
            operand = self.parse_unary()
            if tok.text in ("++", "--") and operand.kind not in (NodeKind.DeclRefExpr, NodeKind.ArraySubscriptExpr):
                raise ParseError(tok.line, tok.col, "assignable operand of " + tok.text, tok.text)
            ctype = "int" if tok.text == "!" else operand.ctype
            return _Draft(NodeKind.UnaryOperator, [operand], op=tok.text, line=tok.line, ctype=ctype)
        return self.parse_postfix()

    def parse_postfix(self) -> _Draft:
        node = self.parse_primary()
        while True:
            if self.at_op("["):
                self.advance()
                index = self.parse_expression()
                self.expect_op("]")
                node = _Draft(NodeKind.ArraySubscriptExpr, [node, index], line=node.line,
                              ctype=_element_type(node.ctype))
            elif self.at_op("++") or self.at_op("--"):
                tok = self.advance()
                if node.kind not in (NodeKind.DeclRefExpr, NodeKind.ArraySubscriptExpr):
                    raise ParseError(tok.line, tok.col, "assignable operand of " + tok.text, tok.text)
                node = _Draft(NodeKind.UnaryOperator, [node], op="post" + tok.text,
                              line=node.line, ctype=node.ctype)
            else:
                return node

    def parse_primary(self) -> _Draft:
        tok = self.peek()
        if tok is None:
            self.error("expression")
        assert tok is not None
        if tok.kind == TokenKind.IDENTIFIER:
            self.advance()
            if self.at_op("("):
                return self.parse_call(tok)
            return _Draft(NodeKind.DeclRefExpr, symbol=sys.intern(tok.text), line=tok.line,
                          ctype=self.lookup(tok.text))
        if tok.kind == TokenKind.INTEGER_LITERAL:
            self.advance()
            return _Draft(NodeKind.IntegerLiteral, literal=tok.text, line=tok.line, ctype="int")
        if tok.kind == TokenKind.FLOAT_LITERAL:
            self.advance()
            return _Draft(NodeKind.FloatingLiteral, literal=tok.text, line=tok.line, ctype="float")
        if tok.kind == TokenKind.STRING_LITERAL:
            self.advance()
            return _Draft(NodeKind.StringLiteral, literal=tok.text, line=tok.line, ctype="string")
        if tok.is_op("("):
            self.advance()
            inner = self.parse_expression()
            self.expect_op(")")
            return inner
        self.error("expression")
        raise AssertionError("unreachable")

    def parse_call(self, name_tok: Token) -> _Draft:
        call = _Draft(NodeKind.CallExpr, symbol=sys.intern(name_tok.text), line=name_tok.line,
                      ctype=self.function_types.get(name_tok.text, "int"))
        self.expect_op("(")
        if not self.at_op(")"):
            call.children.append(self.parse_assignment())
            while self.at_op(","):
                self.advance()
                call.children.append(self.parse_assignment())
        self.expect_op(")")
        return call

    # Implicit casts

    @staticmethod
    def _castable(node: _Draft) -> bool:
        return node.kind in (NodeKind.DeclRefExpr, NodeKind.IntegerLiteral, NodeKind.FloatingLiteral)

    def _convert(self, node: _Draft, target: str) -> _Draft:
        """Wrap a variable or literal whose arithmetic type differs from ``target``."""
        target = _element_type(target)
        if (target in ("int", "float") and node.ctype in ("int", "float")
                and node.ctype != target and self._castable(node)):
            return _Draft(NodeKind.ImplicitCastExpr, [node], type_name=target,
                          line=node.line, ctype=target)
        return node

    def _balance(self, lhs: _Draft, rhs: _Draft) -> tuple:
        """Promote the int side of a mixed int/float pair."""
        if lhs.ctype == "int" and rhs.ctype == "float":
            return self._convert(lhs, "float"), rhs
        if lhs.ctype == "float" and rhs.ctype == "int":
            return lhs, self._convert(rhs, "float")
        return lhs, rhs


def _flatten(root: _Draft) -> Ast:
    nodes: List[AstNode] = []

    def visit(draft: _Draft) -> int:
        node = AstNode(id=len(nodes), kind=draft.kind, symbol=draft.symbol, literal=draft.literal,
                       op=draft.op, type_name=draft.type_name, line=draft.line)
        nodes.append(node)
        node.children = [visit(child) for child in draft.children]
        return node.id

    visit(root)
    return Ast(nodes=nodes, root=0)


def parse(tokens: List[Token]) -> Ast:
    """
    Parse a token list into an Ast rooted at a TranslationUnit.

    An empty token list yields a TranslationUnit with no children.

    Raises:
        ParseError: On a syntax error or nesting deeper than MAX_NESTING.
    """
    parser = Parser(tokens)
    try:
        ast = _flatten(parser.parse_unit())
    except RecursionError:
        parser.error("shallower nesting")
        raise
    logger.debug(f"Parsed {len(ast)} AST nodes, {len(ast.functions())} function(s)")
    return ast


def parse_source(source: str) -> Ast:
    """Tokenize and parse MiniC text."""
    return parse(tokenize(source))

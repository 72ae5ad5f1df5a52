"""
Lexer for MiniC.

A single master regular expression is matched left to right; whitespace and
comments are skipped, and the fallback patterns turn unterminated literals,
unterminated comments and stray characters into LexError.
"""
import re
from dataclasses import dataclass
from enum import Enum
from typing import List

from .exceptions import LexError
from .logger import get_logger

logger = get_logger("frontend")


class TokenKind(Enum):
    IDENTIFIER = "identifier"
    INTEGER_LITERAL = "integer-literal"
    FLOAT_LITERAL = "float-literal"
    STRING_LITERAL = "string-literal"
    KEYWORD = "keyword"
    OPERATOR = "operator"
    PUNCTUATION = "punctuation"


KEYWORDS = frozenset({
    "int", "float", "void", "if", "else", "while", "do", "for",
    "return", "break", "continue",
})

TYPE_KEYWORDS = frozenset({"int", "float", "void"})

# Order matters: longer operators first, floats before integers.
_TOKEN_SPEC = [
    ("WS", r"[ \t\r\n]+"),
    ("LINE_COMMENT", r"//[^\n]*"),
    ("BLOCK_COMMENT", r"/\*.*?\*/"),
    ("OPEN_COMMENT", r"/\*"),
    ("FLOAT", r"(?:[0-9]+\.[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?|[0-9]+[eE][+-]?[0-9]+"),
    ("INT", r"[0-9]+"),
    ("STRING", r'"(?:[^"\\\n]|\\.)*"'),
    ("OPEN_STRING", r'"'),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("OP", r"<<=|>>=|\+\+|--|\+=|-=|\*=|/=|%=|<<|>>|<=|>=|==|!=|&&|\|\||[-+*/%<>=!?:]"),
    ("PUNCT", r"[;,(){}\[\]]"),
    ("MISMATCH", r"."),
]

_MASTER = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC), re.S)

_KIND_BY_GROUP = {
    "FLOAT": TokenKind.FLOAT_LITERAL,
    "INT": TokenKind.INTEGER_LITERAL,
    "STRING": TokenKind.STRING_LITERAL,
    "OP": TokenKind.OPERATOR,
    "PUNCT": TokenKind.PUNCTUATION,
}


@dataclass(frozen=True)
class Token:
    """A lexeme with its 1-based source position."""
    kind: TokenKind
    text: str
    line: int
    col: int

    def is_op(self, text: str) -> bool:
        return self.kind in (TokenKind.OPERATOR, TokenKind.PUNCTUATION) and self.text == text

    def is_keyword(self, text: str) -> bool:
        return self.kind == TokenKind.KEYWORD and self.text == text


def tokenize(source: str) -> List[Token]:
    """
    Split MiniC source text into tokens.

    Args:
        source: Program text.

    Returns:
        Tokens in source order; comments and whitespace are dropped.

    Raises:
        LexError: On an illegal character or an unterminated string or comment.
    """
    tokens: List[Token] = []
    line = 1
    line_start = 0
    for match in _MASTER.finditer(source):
        group = match.lastgroup
        text = match.group(0)
        col = match.start() - line_start + 1

        if group == "MISMATCH":
            raise LexError(line, col, f"illegal character {text!r}")
        if group == "OPEN_COMMENT":
            raise LexError(line, col, "unterminated comment")
        if group == "OPEN_STRING":
            raise LexError(line, col, "unterminated string literal")

        if group == "IDENT":
            kind = TokenKind.KEYWORD if text in KEYWORDS else TokenKind.IDENTIFIER
            tokens.append(Token(kind, text, line, col))
        elif group in _KIND_BY_GROUP:
            tokens.append(Token(_KIND_BY_GROUP[group], text, line, col))

        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = match.start() + text.rindex("\n") + 1

    logger.debug(f"Tokenized {len(tokens)} tokens over {line} line(s)")
    return tokens

"""
Custom exceptions for fda-ggann.
"""
from typing import Optional, Sequence


class FDAError(Exception):
    """Base exception for fda-ggann errors."""
    pass


class SourceError(FDAError):
    """Raised when a MiniC source cannot be turned into a graph."""
    pass


class LexError(SourceError):
    """Raised on an illegal character or an unterminated literal/comment."""
    def __init__(self, line: int, col: int, message: str):
        self.line = line
        self.col = col
        self.message = message
        super().__init__(f"{line}:{col}: {message}")


class ParseError(SourceError):
    """Raised when the token stream does not match the MiniC grammar."""
    def __init__(self, line: int, col: int, expected: str, found: str):
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found
        super().__init__(f"{line}:{col}: expected {expected}, found {found!r}")


class UnresolvedIdentifier(SourceError):
    """Raised when a variable reference has no visible declaration."""
    def __init__(self, name: str, line: int):
        self.name = name
        self.line = line
        super().__init__(f"{line}: unresolved identifier {name!r}")


class ArityMismatch(SourceError):
    """Raised when a call site passes the wrong number of arguments."""
    def __init__(self, callee: str, expected: int, got: int):
        self.callee = callee
        self.expected = expected
        self.got = got
        super().__init__(f"call to {callee!r} expects {expected} argument(s), got {got}")


class EmptyProgram(SourceError):
    """Raised when a translation unit has no function definitions."""
    def __init__(self, source_id: str = ""):
        self.source_id = source_id
        super().__init__(f"no function definitions{': ' + source_id if source_id else ''}")


class NestingTooDeep(SourceError):
    """Raised when a syntax tree is too deep to walk."""
    def __init__(self, source_id: str = ""):
        self.source_id = source_id
        super().__init__(f"program nests too deeply to build a graph{': ' + source_id if source_id else ''}")


class ShapeMismatch(FDAError):
    """Raised when tensor shapes are incompatible for an operation."""
    def __init__(self, left: Sequence[int], right: Sequence[int], op: str):
        self.left = tuple(left)
        self.right = tuple(right)
        self.op = op
        super().__init__(f"{op}: incompatible shapes {self.left} and {self.right}")


class NonScalarLoss(FDAError):
    """Raised when backward is started from a tensor that is not a scalar."""
    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(shape)
        super().__init__(f"backward needs a scalar loss, got shape {self.shape}")


class UnknownKind(FDAError):
    """Raised when a node kind code is outside the embedding table."""
    def __init__(self, kind: int, num_kinds: int):
        self.kind = kind
        super().__init__(f"node kind {kind} outside embedding table of {num_kinds} kinds")


class LabelOutOfRange(FDAError):
    """Raised when a graph label does not fit the model's class count."""
    def __init__(self, label: Optional[int], num_classes: int):
        self.label = label
        super().__init__(f"label {label} outside [0, {num_classes})")


class EmptySplit(FDAError):
    """Raised when a split that must hold graphs is empty."""
    def __init__(self, split: str):
        self.split = split
        super().__init__(f"split {split!r} is empty")


class NoTasksFound(FDAError):
    """Raised when a corpus root holds no task directories."""
    def __init__(self, root: str):
        self.root = root
        super().__init__(f"no task directories with programs under {root}")


class CorpusIOError(FDAError):
    """Raised when a corpus path cannot be read or written."""
    def __init__(self, path: str, message: str = "I/O error"):
        self.path = path
        super().__init__(f"{message}: {path}")


class ClassTooSmall(FDAError):
    """Raised when a class has too few programs to be split."""
    def __init__(self, label: int, count: int, minimum: int = 5):
        self.label = label
        self.count = count
        super().__init__(f"class {label} has {count} program(s), need at least {minimum}")


class TooFewPoints(FDAError):
    """Raised when clustering is asked for more clusters than points."""
    def __init__(self, n: int, k: int):
        self.n = n
        self.k = k
        super().__init__(f"cannot form {k} clusters from {n} point(s)")


class CheckpointError(FDAError):
    """Raised when a checkpoint is unreadable or does not match the config."""
    pass


class ConfigError(FDAError):
    """Raised when there is a configuration error."""
    pass


class SchemaError(FDAError):
    """Raised when a JSON document does not match its schema."""
    pass

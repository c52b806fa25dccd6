"""
Exception hierarchy shared by all modules
"""
from dataclasses import dataclass
from typing import Optional, Tuple


class FedTensorError(Exception):
    """Base class for every error raised by the library"""

    kind = "error"


class ShapeError(FedTensorError, ValueError):
    """Tensor shape invariant, broadcast or rank violation"""

    kind = "shape"

    def __init__(self, message: str, axis: Optional[int] = None):
        super().__init__(message)
        self.axis = axis


TYPE_ERROR_KINDS = (
    "shape-mismatch",
    "record-axis-violation",
    "broadcast-incompatible",
    "unbound-variable",
    "arity",
    "fedfed-form",
    "extension-misuse",
)


class TypeCheckError(FedTensorError):
    """Typing failure at a subexpression

    path addresses the failing node: a tuple of argument indices from the root.
    """

    def __init__(self, kind: str, path: Tuple[int, ...], message: str):
        if kind not in TYPE_ERROR_KINDS:
            raise ValueError(f"Unknown type error kind: {kind}")
        super().__init__(f"{kind} at {format_path(path)}: {message}")
        self.kind = kind
        self.path = tuple(path)
        self.message = message


class EvaluationError(FedTensorError):
    """Semantic side condition violated during evaluation"""

    kind = "evaluation"

    def __init__(self, message: str, client: Optional[str] = None,
                 operand: Optional[int] = None):
        details = []
        if client is not None:
            details.append(f"client={client}")
        if operand is not None:
            details.append(f"operand={operand}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(message + suffix)
        self.client = client
        self.operand = operand


class ValidationError(FedTensorError):
    """Program failed validation; violations lists every finding"""

    kind = "validation"

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations) or "invalid program")


class SingularSystemError(FedTensorError):
    kind = "singular-system"


class ExtensionError(FedTensorError):
    kind = "extension"


class MechanismError(FedTensorError, ValueError):
    kind = "mechanism"


class SerializationError(FedTensorError, ValueError):
    kind = "serialization"


class TransportError(FedTensorError):
    kind = "transport"

    def __init__(self, message: str, client: Optional[str] = None):
        super().__init__(message if client is None else f"{message} (client={client})")
        self.client = client


class DocumentError(FedTensorError):
    """Interchange document failure: parse, schema or type"""

    def __init__(self, kind: str, message: str, line: Optional[int] = None,
                 column: Optional[int] = None):
        location = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{kind}{location}: {message}")
        self.kind = kind
        self.message = message
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Violation:
    """One validation finding; component is None for program-level findings"""
    kind: str
    message: str
    component: Optional[int] = None
    round: Optional[int] = None

    def __str__(self):
        where = []
        if self.round is not None:
            where.append(f"round {self.round}")
        if self.component is not None:
            where.append(f"component {self.component}")
        prefix = f"[{', '.join(where)}] " if where else ""
        return f"{prefix}{self.kind}: {self.message}"


def format_path(path) -> str:
    return "root" if not path else "root" + "".join(f".{i}" for i in path)

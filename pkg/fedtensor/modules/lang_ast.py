"""
Language AST Module
Tensor types, typing contexts, primitive symbols of the base signature,
expression trees and the client-local / shared-only classifiers.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Mapping, Tuple, Union

import numpy as np

from fedtensor.modules.errors import ShapeError
from fedtensor.modules.tensor_core import (
    Permutation,
    Shape,
    TensorValue,
    make_shape,
    validate_permutation,
)

logger = logging.getLogger(__name__)


# ============================================
# Tensor types
# ============================================

@dataclass(frozen=True)
class Sh:
    """Shared type Sh(s)"""
    shape: Shape

    def __post_init__(self):
        object.__setattr__(self, "shape", make_shape(self.shape))

    @property
    def rank(self) -> int:
        return len(self.shape)

    def __str__(self):
        return f"Sh({self.shape})"


@dataclass(frozen=True)
class Fed:
    """Federated type Fed_r(d); d is the non-record shape"""
    record_axis: int
    nonrecord_shape: Shape

    def __post_init__(self):
        object.__setattr__(self, "nonrecord_shape", make_shape(self.nonrecord_shape))
        rank = len(self.nonrecord_shape) + 1
        if not 1 <= self.record_axis <= rank:
            raise ShapeError(
                f"Record axis {self.record_axis} outside [1, {rank}] for Fed type", axis=self.record_axis)

    @property
    def rank(self) -> int:
        return len(self.nonrecord_shape) + 1

    def __str__(self):
        return f"Fed_{self.record_axis}({self.nonrecord_shape})"


TensorType = Union[Sh, Fed]
Context = Dict[str, TensorType]


# ============================================
# Base primitive signature
# ============================================

def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


UNARY_MAPS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "neg": np.negative,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "square": np.square,
    "relu": lambda x: np.maximum(x, 0.0),
    "sigmoid": _sigmoid,
}

BINARY_MAPS: Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": np.power,
}

COMPARE_MAPS: Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "lt": np.less,
    "le": np.less_equal,
    "eq": np.equal,
    "ge": np.greater_equal,
    "gt": np.greater,
}


@dataclass(frozen=True)
class AggregationSchema:
    """Family of reducers alpha_n with identity alpha_0 and a client-wise merge

    reduce aggregates along one 0-based axis; merge combines two partial
    aggregates. mergeable asserts alpha_r(X) equals the merge fold of the
    per-client aggregates.
    """
    name: str
    identity: float
    reducer: Callable[[np.ndarray, int], np.ndarray]
    merger: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mergeable: bool = True

    def reduce(self, array: np.ndarray, axis: int) -> np.ndarray:
        return np.asarray(self.reducer(array, axis), dtype=np.float64)

    def merge(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        return np.asarray(self.merger(left, right), dtype=np.float64)

    def identity_element(self, shape: Shape) -> np.ndarray:
        return np.full(shape, self.identity, dtype=np.float64)


SUM = AggregationSchema(
    "sum", 0.0,
    reducer=lambda a, axis: np.sum(a, axis=axis),
    merger=np.add,
)
MIN = AggregationSchema(
    "min", float("inf"),
    reducer=lambda a, axis: np.min(a, axis=axis, initial=np.inf),
    merger=np.minimum,
)
MAX = AggregationSchema(
    "max", float("-inf"),
    reducer=lambda a, axis: np.max(a, axis=axis, initial=-np.inf),
    merger=np.maximum,
)


@dataclass
class SignatureDescription:
    """The shipped instantiation of the base signature"""
    unary: Dict[str, Callable] = field(default_factory=lambda: dict(UNARY_MAPS))
    binary: Dict[str, Callable] = field(default_factory=lambda: dict(BINARY_MAPS))
    compare: Dict[str, Callable] = field(default_factory=lambda: dict(COMPARE_MAPS))
    schemas: Dict[str, AggregationSchema] = field(
        default_factory=lambda: {s.name: s for s in (SUM, MIN, MAX)})

    def register_schema(self, schema: AggregationSchema) -> None:
        """Add an aggregation schema; non-mergeable schemas are rejected"""
        if not schema.mergeable:
            raise ValueError(f"Aggregation schema '{schema.name}' is not mergeable")
        if schema.name in self.schemas:
            raise ValueError(f"Aggregation schema '{schema.name}' already registered")
        self.schemas[schema.name] = schema
        logger.info(f"Registered aggregation schema: {schema.name}")

    def schema(self, name: str) -> AggregationSchema:
        try:
            return self.schemas[name]
        except KeyError:
            raise ValueError(f"Unknown aggregation schema: {name}") from None

    def arity(self, symbol: "PrimitiveSymbol", registry=None) -> int:
        if isinstance(symbol, Ext):
            from fedtensor.extensions import get_registry
            return (registry or get_registry()).get(symbol.name).arity
        return symbol.arity

    def describe(self) -> Dict[str, object]:
        return {
            "unary": sorted(self.unary),
            "binary": sorted(self.binary),
            "compare": sorted(self.compare),
            "aggregations": {n: s.identity for n, s in sorted(self.schemas.items())},
            "permutations": "literal image tuples",
            "matmul": ["matmul_fed_sh", "matmul_sh_fed", "matmul_fed_fed"],
        }


SIGNATURE = SignatureDescription()


def builtin_signature() -> SignatureDescription:
    return SIGNATURE


# ============================================
# Primitive symbols
# ============================================

@dataclass(frozen=True)
class Unary:
    name: str
    arity = 1

    def __post_init__(self):
        if self.name not in SIGNATURE.unary:
            raise ValueError(f"Unknown unary primitive: {self.name}")

    def label(self):
        return self.name


@dataclass(frozen=True)
class Binary:
    name: str
    arity = 2

    def __post_init__(self):
        if self.name not in SIGNATURE.binary:
            raise ValueError(f"Unknown binary primitive: {self.name}")

    def label(self):
        return self.name


@dataclass(frozen=True)
class Compare:
    name: str
    arity = 2

    def __post_init__(self):
        if self.name not in SIGNATURE.compare:
            raise ValueError(f"Unknown comparison primitive: {self.name}")

    def label(self):
        return self.name


@dataclass(frozen=True)
class Agg:
    schema: str
    axis: int
    arity = 1

    def __post_init__(self):
        SIGNATURE.schema(self.schema)
        if int(self.axis) < 1:
            raise ValueError(f"Aggregation axis must be >= 1, got {self.axis}")

    def label(self):
        return f"{self.schema}_{self.axis}"


@dataclass(frozen=True)
class Perm:
    tau: Permutation
    arity = 1

    def __post_init__(self):
        object.__setattr__(self, "tau", validate_permutation(self.tau))

    def label(self):
        return "perm[" + ",".join(str(i) for i in self.tau) + "]"


@dataclass(frozen=True)
class MatMulFedSh:
    arity = 2

    def label(self):
        return "matmul_fed_sh"


@dataclass(frozen=True)
class MatMulShFed:
    arity = 2

    def label(self):
        return "matmul_sh_fed"


@dataclass(frozen=True)
class MatMulFedFed:
    arity = 2

    def label(self):
        return "matmul_fed_fed"


@dataclass(frozen=True, eq=False)
class Literal:
    """Shared constant; typed as Sh(shape of the value)"""
    value: TensorValue
    arity = 0

    def __post_init__(self):
        if not isinstance(self.value, TensorValue):
            object.__setattr__(self, "value", TensorValue(self.value))

    def label(self):
        if self.value.rank == 0:
            return repr(float(self.value.array))
        return f"lit{self.value.shape}"


@dataclass(frozen=True)
class Ext:
    """Registered conservative extension primitive"""
    name: str

    def label(self):
        return f"ext:{self.name}"


PrimitiveSymbol = Union[Unary, Binary, Compare, Agg, Perm, MatMulFedSh, MatMulShFed,
                        MatMulFedFed, Literal, Ext]


# ============================================
# Expressions
# ============================================

@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True, eq=False)
class Apply:
    symbol: PrimitiveSymbol
    args: Tuple["Expr", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))

    def __str__(self):
        return format_expr(self)


Expr = Union[Var, Apply]
Path = Tuple[int, ...]


def format_expr(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e.symbol, Literal) and not e.args:
        return e.symbol.label()
    return f"{e.symbol.label()}(" + ", ".join(format_expr(a) for a in e.args) + ")"


def walk(e: Expr, path: Path = ()) -> Iterator[Tuple[Path, Expr]]:
    """Pre-order traversal yielding (path, node)"""
    yield path, e
    if isinstance(e, Apply):
        for index, arg in enumerate(e.args):
            yield from walk(arg, path + (index,))


def node_at(e: Expr, path: Path) -> Expr:
    for index in path:
        if not isinstance(e, Apply) or index >= len(e.args):
            raise KeyError(f"No subexpression at path {path}")
        e = e.args[index]
    return e


def free_variables(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    names = frozenset()
    for arg in e.args:
        names |= free_variables(arg)
    return names


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace free variables by expressions"""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    return Apply(e.symbol, tuple(substitute(a, mapping) for a in e.args))


def rename(e: Expr, mapping: Mapping[str, str]) -> Expr:
    return substitute(e, {old: Var(new) for old, new in mapping.items()})


def depth(e: Expr) -> int:
    if isinstance(e, Var) or not e.args:
        return 1
    return 1 + max(depth(a) for a in e.args)


# Builders --------------------------------------------------------------

def lit(value) -> Apply:
    return Apply(Literal(TensorValue(value)))


def unary(name: str, e: Expr) -> Apply:
    return Apply(Unary(name), (e,))


def binary(name: str, left: Expr, right: Expr) -> Apply:
    return Apply(Binary(name), (left, right))


def compare(name: str, left: Expr, right: Expr) -> Apply:
    return Apply(Compare(name), (left, right))


def agg(schema: str, axis: int, e: Expr) -> Apply:
    return Apply(Agg(schema, axis), (e,))


def perm(tau, e: Expr) -> Apply:
    return Apply(Perm(tuple(tau)), (e,))


def matmul_fed_sh(left: Expr, right: Expr) -> Apply:
    return Apply(MatMulFedSh(), (left, right))


def matmul_sh_fed(left: Expr, right: Expr) -> Apply:
    return Apply(MatMulShFed(), (left, right))


def matmul_fed_fed(left: Expr, right: Expr) -> Apply:
    return Apply(MatMulFedFed(), (left, right))


def ext(name: str, *args: Expr) -> Apply:
    return Apply(Ext(name), tuple(args))


def add(a, b):
    return binary("add", a, b)


def sub(a, b):
    return binary("sub", a, b)


def mul(a, b):
    return binary("mul", a, b)


def div(a, b):
    return binary("div", a, b)


def power(a, b):
    return binary("pow", a, b)


def sum_(axis: int, e: Expr) -> Apply:
    return agg("sum", axis, e)


def square(e: Expr) -> Apply:
    return unary("square", e)


def neg(e: Expr) -> Apply:
    return unary("neg", e)


def sigmoid(e: Expr) -> Apply:
    return unary("sigmoid", e)


# ============================================
# Syntactic classifiers
# ============================================

@dataclass
class LocalityReport:
    """Result of the client-local classifier

    offending lists (path, type) of subexpressions that turn a federated
    argument into a shared result.
    """
    client_local: bool
    types: Dict[Path, TensorType]
    offending: List[Tuple[Path, TensorType]] = field(default_factory=list)

    def __bool__(self):
        return self.client_local


def is_client_local(ctx: Context, e: Expr, registry=None) -> LocalityReport:
    """True iff no subexpression with a federated argument produces a shared type"""
    from fedtensor.modules.typechecker import TypeChecker

    checker = TypeChecker(registry)
    annotations = checker.annotate(ctx, e)
    types = {path: annotations[id(node)] for path, node in walk(e)}
    offending = []
    for path, node in walk(e):
        if not isinstance(node, Apply):
            continue
        has_fed_arg = any(isinstance(types[path + (i,)], Fed) for i in range(len(node.args)))
        if has_fed_arg and isinstance(types[path], Sh):
            offending.append((path, types[path]))
    if offending:
        logger.debug(f"Expression {format_expr(e)} is not client-local at {[p for p, _ in offending]}")
    return LocalityReport(client_local=not offending, types=types, offending=offending)


def is_shared_only(ctx: Context, e: Expr) -> bool:
    """True iff every free variable of e has shared type"""
    from fedtensor.modules.errors import TypeCheckError

    for name in sorted(free_variables(e)):
        if name not in ctx:
            raise TypeCheckError("unbound-variable", (), f"Variable '{name}' is not bound")
        if isinstance(ctx[name], Fed):
            return False
    return True

"""
Type Checker Module
Syntax-directed typing of expressions: broadcast rules, record-axis exposure
discipline, symbolic shapes and the three matrix-product forms.
"""
import logging
from typing import Dict, Optional, Sequence, Tuple

from fedtensor.modules.errors import ShapeError, TypeCheckError
from fedtensor.modules.lang_ast import (
    Agg,
    Apply,
    Binary,
    Compare,
    Context,
    Expr,
    Ext,
    Fed,
    Literal,
    MatMulFedFed,
    MatMulFedSh,
    MatMulShFed,
    Path,
    Perm,
    Sh,
    TensorType,
    Unary,
    Var,
    walk,
)
from fedtensor.modules.tensor_core import broadcast_shape, permute_shape

logger = logging.getLogger(__name__)


class _RecordMarker:
    """The star entry of a symbolic shape"""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "*"


STAR = _RecordMarker()

SymbolicShape = Tuple[object, ...]


def symbolic_shape(t: Fed) -> SymbolicShape:
    """Non-record dims with the star marker inserted at the record axis"""
    d = t.nonrecord_shape
    return tuple(d[:t.record_axis - 1]) + (STAR,) + tuple(d[t.record_axis - 1:])


def erase_marker(sigma: Sequence) -> Fed:
    """Inverse of symbolic_shape; requires exactly one star"""
    positions = [i for i, entry in enumerate(sigma, start=1) if entry is STAR]
    if len(positions) != 1:
        raise ValueError(f"Symbolic shape {tuple(sigma)} must contain exactly one record marker")
    return Fed(positions[0], tuple(entry for entry in sigma if entry is not STAR))


def _record_agnostic_failure(s: Sequence[int], t: Fed) -> Optional[Tuple[str, str]]:
    """None when compatible, else (error kind, message)"""
    sigma = symbolic_shape(t)
    if len(s) > len(sigma):
        return ("broadcast-incompatible",
                f"shared shape {tuple(s)} has higher rank than federated type {t}")
    padded = (1,) * (len(sigma) - len(s)) + tuple(s)
    for axis, (extent, entry) in enumerate(zip(padded, sigma), start=1):
        if entry is STAR:
            if extent != 1:
                return ("record-axis-violation",
                        f"shared shape {tuple(s)} has extent {extent} on record axis {axis} of {t}")
        elif extent not in (1, entry):
            return ("broadcast-incompatible",
                    f"shared shape {tuple(s)} is incompatible with {t} at axis {axis}")
    return None


def record_agnostic_compatible(s: Sequence[int], t: Fed) -> bool:
    return _record_agnostic_failure(s, t) is None


def _delete_axis(t: Fed, j: int, path: Path) -> Fed:
    if not 1 <= j <= t.rank:
        raise TypeCheckError("shape-mismatch", path, f"axis {j} out of range for {t}")
    if j == t.record_axis:
        raise TypeCheckError(
            "record-axis-violation", path, f"axis {j} is the record axis of {t}")
    sigma = symbolic_shape(t)
    return erase_marker(sigma[:j - 1] + sigma[j:])


def delete_axis(t: Fed, j: int) -> Fed:
    """Remove non-record axis j, relocating the record axis"""
    return _delete_axis(t, j, ())


def _permute_type(t: Fed, tau, path: Path) -> Fed:
    if len(tau) != t.rank:
        raise TypeCheckError(
            "shape-mismatch", path, f"permutation {tuple(tau)} does not match rank {t.rank} of {t}")
    return erase_marker(permute_shape(symbolic_shape(t), tau))


def permute_type(t: Fed, tau) -> Fed:
    """Fed type with the record axis moved to tau(r)"""
    return _permute_type(t, tau, ())


class TypeChecker:
    """Typing relation over a context, with extensions resolved from a registry"""

    def __init__(self, registry=None):
        if registry is None:
            from fedtensor.extensions import get_registry
            registry = get_registry()
        self.registry = registry

    def typecheck(self, ctx: Context, e: Expr) -> TensorType:
        return self.annotate(ctx, e)[id(e)]

    def annotate(self, ctx: Context, e: Expr) -> Dict[int, TensorType]:
        """Types of every node, keyed by node identity"""
        types: Dict[int, TensorType] = {}
        self._infer(ctx, e, (), types)
        return types

    def _infer(self, ctx: Context, e: Expr, path: Path, types: Dict[int, TensorType]) -> TensorType:
        if isinstance(e, Var):
            if e.name not in ctx:
                raise TypeCheckError("unbound-variable", path, f"variable '{e.name}' is not bound")
            result = ctx[e.name]
        else:
            expected = self._arity(e.symbol, path)
            if len(e.args) != expected:
                raise TypeCheckError(
                    "arity", path,
                    f"{e.symbol.label()} takes {expected} argument(s), got {len(e.args)}")
            arg_types = [self._infer(ctx, arg, path + (i,), types) for i, arg in enumerate(e.args)]
            result = self._apply_rule(e.symbol, arg_types, path)
        types[id(e)] = result
        return result

    def _arity(self, symbol, path: Path) -> int:
        if isinstance(symbol, Ext):
            return self._extension(symbol.name, path).arity
        return symbol.arity

    def _extension(self, name: str, path: Path):
        if name not in self.registry:
            raise TypeCheckError("extension-misuse", path, f"extension '{name}' is not registered")
        return self.registry.get(name)

    def _apply_rule(self, symbol, args: Sequence[TensorType], path: Path) -> TensorType:
        if isinstance(symbol, Literal):
            return Sh(symbol.value.shape)
        if isinstance(symbol, Unary):
            return args[0]
        if isinstance(symbol, (Binary, Compare)):
            return self._elementwise(args[0], args[1], path)
        if isinstance(symbol, Agg):
            return self._aggregate(symbol.axis, args[0], path)
        if isinstance(symbol, Perm):
            t = args[0]
            if isinstance(t, Fed):
                return _permute_type(t, symbol.tau, path)
            if len(symbol.tau) != t.rank:
                raise TypeCheckError(
                    "shape-mismatch", path,
                    f"permutation {symbol.tau} does not match rank {t.rank} of {t}")
            return Sh(permute_shape(t.shape, symbol.tau))
        if isinstance(symbol, MatMulFedSh):
            return self._matmul_fed_sh(args[0], args[1], path)
        if isinstance(symbol, MatMulShFed):
            return self._matmul_sh_fed(args[0], args[1], path)
        if isinstance(symbol, MatMulFedFed):
            return self._matmul_fed_fed(args[0], args[1], path)
        if isinstance(symbol, Ext):
            return self._extension_rule(symbol.name, args, path)
        raise TypeCheckError("arity", path, f"unknown primitive symbol {symbol!r}")

    @staticmethod
    def _elementwise(left: TensorType, right: TensorType, path: Path) -> TensorType:
        if isinstance(left, Sh) and isinstance(right, Sh):
            try:
                return Sh(broadcast_shape(left.shape, right.shape))
            except ShapeError as exc:
                raise TypeCheckError("broadcast-incompatible", path, str(exc)) from None
        if isinstance(left, Fed) and isinstance(right, Fed):
            if left.record_axis != right.record_axis:
                raise TypeCheckError(
                    "record-axis-violation", path,
                    f"federated operands {left} and {right} have different record axes")
            if left.nonrecord_shape != right.nonrecord_shape:
                raise TypeCheckError(
                    "shape-mismatch", path,
                    f"federated operands {left} and {right} have different non-record shapes")
            return left
        fed, shared = (left, right) if isinstance(left, Fed) else (right, left)
        failure = _record_agnostic_failure(shared.shape, fed)
        if failure is not None:
            raise TypeCheckError(failure[0], path, failure[1])
        return fed

    @staticmethod
    def _aggregate(j: int, t: TensorType, path: Path) -> TensorType:
        if isinstance(t, Sh):
            if not 1 <= j <= t.rank:
                raise TypeCheckError("shape-mismatch", path, f"axis {j} out of range for {t}")
            return Sh(t.shape[:j - 1] + t.shape[j:])
        if j == t.record_axis:
            return Sh(t.nonrecord_shape)
        return _delete_axis(t, j, path)

    @staticmethod
    def _matmul_fed_sh(left: TensorType, right: TensorType, path: Path) -> TensorType:
        if not (isinstance(left, Fed) and left.record_axis == 1 and len(left.nonrecord_shape) == 1):
            raise TypeCheckError("shape-mismatch", path, f"left operand {left} is not Fed_1((p,))")
        if not (isinstance(right, Sh) and right.rank == 2):
            raise TypeCheckError("shape-mismatch", path, f"right operand {right} is not Sh((p, q))")
        if left.nonrecord_shape[0] != right.shape[0]:
            raise TypeCheckError(
                "shape-mismatch", path, f"contracted extents differ: {left} vs {right}")
        return Fed(1, (right.shape[1],))

    @staticmethod
    def _matmul_sh_fed(left: TensorType, right: TensorType, path: Path) -> TensorType:
        if not (isinstance(left, Sh) and left.rank == 2):
            raise TypeCheckError("shape-mismatch", path, f"left operand {left} is not Sh((q, p))")
        if not (isinstance(right, Fed) and right.record_axis == 2 and len(right.nonrecord_shape) == 1):
            raise TypeCheckError("shape-mismatch", path, f"right operand {right} is not Fed_2((p,))")
        if left.shape[1] != right.nonrecord_shape[0]:
            raise TypeCheckError(
                "shape-mismatch", path, f"contracted extents differ: {left} vs {right}")
        return Fed(2, (left.shape[0],))

    @staticmethod
    def _matmul_fed_fed(left: TensorType, right: TensorType, path: Path) -> TensorType:
        if not (isinstance(left, Fed) and left.record_axis == 2 and len(left.nonrecord_shape) == 1):
            raise TypeCheckError("fedfed-form", path, f"left operand {left} is not Fed_2((a,))")
        if not (isinstance(right, Fed) and right.record_axis == 1 and len(right.nonrecord_shape) == 1):
            raise TypeCheckError("fedfed-form", path, f"right operand {right} is not Fed_1((b,))")
        return Sh((left.nonrecord_shape[0], right.nonrecord_shape[0]))

    def _extension_rule(self, name: str, args: Sequence[TensorType], path: Path) -> TensorType:
        primitive = self._extension(name, path)
        has_fed = any(isinstance(t, Fed) for t in args)
        if primitive.kind == "shared-only" and has_fed:
            raise TypeCheckError(
                "extension-misuse", path, f"shared-only extension '{name}' received a federated argument")
        try:
            result = primitive.infer_type(tuple(args))
        except (ValueError, ShapeError) as exc:
            raise TypeCheckError("extension-misuse", path, f"{name}: {exc}") from None
        if has_fed and not isinstance(result, Fed):
            raise TypeCheckError(
                "extension-misuse", path, f"client-local extension '{name}' produced shared type {result}")
        return result


def typecheck(ctx: Context, e: Expr, registry=None) -> TensorType:
    return TypeChecker(registry).typecheck(ctx, e)


def exposure_nodes(ctx: Context, e: Expr, registry=None):
    """(path, node) of every shared-typed node with a federated argument"""
    types = TypeChecker(registry).annotate(ctx, e)
    found = []
    for path, node in walk(e):
        if isinstance(node, Apply) and isinstance(types[id(node)], Sh):
            if any(isinstance(types[id(arg)], Fed) for arg in node.args):
                found.append((path, node))
    return found

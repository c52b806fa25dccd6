"""
Evaluator Module
Distributed evaluation over federated environments, centralized reference
evaluation on virtual global tensors, and the consistency check between them.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Union

import numpy as np

from fedtensor.configs.config import Config
from fedtensor.modules.errors import EvaluationError, ExtensionError, FedTensorError
from fedtensor.modules.lang_ast import (
    SIGNATURE,
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
    Perm,
    Sh,
    TensorType,
    Unary,
    Var,
)
from fedtensor.modules.tensor_core import (
    FederatedValue,
    Federation,
    TensorValue,
    permute_array,
    virtual_global,
)
from fedtensor.modules.typechecker import TypeChecker

logger = logging.getLogger(__name__)

Value = Union[TensorValue, FederatedValue]


@dataclass
class Environment:
    """Variable bindings; every federated binding uses the same federation"""
    bindings: Dict[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        federation = None
        for name, value in self.bindings.items():
            if isinstance(value, FederatedValue):
                if federation is None:
                    federation = value.federation
                elif value.federation != federation:
                    raise EvaluationError(
                        f"Binding '{name}' uses federation {value.federation.clients}, "
                        f"expected {federation.clients}")
            elif not isinstance(value, TensorValue):
                raise EvaluationError(f"Binding '{name}' is neither a tensor nor a federated value")
        self.federation: Optional[Federation] = federation

    def context(self) -> Context:
        ctx: Context = {}
        for name, value in self.bindings.items():
            if isinstance(value, FederatedValue):
                ctx[name] = Fed(value.record_axis, value.nonrecord_shape)
            else:
                ctx[name] = Sh(value.shape)
        return ctx

    def extend(self, **bindings: Value) -> "Environment":
        merged = dict(self.bindings)
        merged.update(bindings)
        return Environment(merged)

    def __getitem__(self, name: str) -> Value:
        return self.bindings[name]


@dataclass
class _Federated:
    """Per-client arrays in federation order"""
    record_axis: int
    arrays: List[np.ndarray]


@dataclass
class CentralResult:
    tensor: TensorValue
    type: TensorType

    @property
    def federated(self) -> bool:
        return isinstance(self.type, Fed)


@dataclass
class ConsistencyReport:
    max_abs: float
    max_rel: float
    tol: float
    passed: bool
    kind: str
    nonfinite_mismatch: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "max_abs_deviation": self.max_abs,
            "max_rel_deviation": self.max_rel,
            "tol": self.tol,
            "passed": self.passed,
            "nonfinite_mismatch": self.nonfinite_mismatch,
        }


def _elementwise_map(symbol) -> Callable:
    if isinstance(symbol, Unary):
        return SIGNATURE.unary[symbol.name]
    if isinstance(symbol, Binary):
        return SIGNATURE.binary[symbol.name]
    compare = SIGNATURE.compare[symbol.name]
    return lambda a, b: compare(a, b).astype(np.float64)


class Evaluator:
    """Both semantics of the language over one extension registry"""

    def __init__(self, registry=None, max_workers: Optional[int] = None):
        self.checker = TypeChecker(registry)
        self.registry = self.checker.registry
        self.max_workers = max_workers if max_workers is not None else Config.MAX_WORKERS

    # ------------------------------------------------------------------
    # Distributed semantics
    # ------------------------------------------------------------------

    def eval_distributed(self, env: Environment, e: Expr) -> Value:
        types = self.checker.annotate(env.context(), e)
        with np.errstate(all="ignore"):
            result = self._distributed(env, e, types)
        return self._wrap(env, result, types[id(e)])

    def _wrap(self, env: Environment, result, result_type: TensorType) -> Value:
        if isinstance(result, _Federated):
            return FederatedValue(env.federation, result.record_axis, result_type.nonrecord_shape,
                                  tuple(TensorValue(a) for a in result.arrays))
        return TensorValue(result)

    def _per_client(self, fn: Callable[[int], np.ndarray], n: int) -> List[np.ndarray]:
        if self.max_workers > 1 and n > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                return list(pool.map(fn, range(n)))
        return [fn(i) for i in range(n)]

    def _distributed(self, env: Environment, e: Expr, types: Dict[int, TensorType]):
        if isinstance(e, Var):
            value = env[e.name]
            if isinstance(value, FederatedValue):
                return _Federated(value.record_axis, [v.array for v in value.locals])
            return value.array

        symbol = e.symbol
        if isinstance(symbol, Literal):
            return symbol.value.array
        args = [self._distributed(env, arg, types) for arg in e.args]
        result_type = types[id(e)]
        clients = env.federation.clients if env.federation is not None else ()

        if isinstance(symbol, (Unary, Binary, Compare)):
            fn = _elementwise_map(symbol)
            feds = [a for a in args if isinstance(a, _Federated)]
            if not feds:
                return fn(*args)
            if len(feds) == 2:
                for i, client in enumerate(clients):
                    if args[0].arrays[i].shape != args[1].arrays[i].shape:
                        raise EvaluationError(
                            f"Local shapes {args[0].arrays[i].shape} and {args[1].arrays[i].shape} differ",
                            client=client, operand=1)

            def local(i):
                operands = [a.arrays[i] if isinstance(a, _Federated) else a for a in args]
                return np.asarray(fn(*operands), dtype=np.float64)
            return _Federated(feds[0].record_axis, self._per_client(local, len(clients)))

        if isinstance(symbol, Agg):
            schema = SIGNATURE.schema(symbol.schema)
            x = args[0]
            if not isinstance(x, _Federated):
                return schema.reduce(x, symbol.axis - 1)
            partials = self._per_client(lambda i: schema.reduce(x.arrays[i], symbol.axis - 1), len(clients))
            if symbol.axis == x.record_axis:
                merged = partials[0]
                for partial in partials[1:]:
                    merged = schema.merge(merged, partial)
                return merged
            return _Federated(result_type.record_axis, partials)

        if isinstance(symbol, Perm):
            x = args[0]
            if not isinstance(x, _Federated):
                return permute_array(x, symbol.tau)
            return _Federated(result_type.record_axis,
                              [permute_array(a, symbol.tau) for a in x.arrays])

        if isinstance(symbol, MatMulFedSh):
            x, s = args
            return _Federated(1, self._per_client(lambda i: np.matmul(x.arrays[i], s), len(clients)))

        if isinstance(symbol, MatMulShFed):
            s, x = args
            return _Federated(2, self._per_client(lambda i: np.matmul(s, x.arrays[i]), len(clients)))

        if isinstance(symbol, MatMulFedFed):
            x, z = args
            for i, client in enumerate(clients):
                if x.arrays[i].shape[1] != z.arrays[i].shape[0]:
                    raise EvaluationError(
                        f"Local record counts differ: {x.arrays[i].shape[1]} vs {z.arrays[i].shape[0]}",
                        client=client, operand=1)
            products = self._per_client(lambda i: np.matmul(x.arrays[i], z.arrays[i]), len(clients))
            total = products[0]
            for product in products[1:]:
                total = total + product
            return total

        if isinstance(symbol, Ext):
            return self._distributed_extension(symbol.name, args, e, types, clients)

        raise EvaluationError(f"No semantics for symbol {symbol!r}")

    def _distributed_extension(self, name, args, e: Apply, types, clients):
        primitive = self.registry.get(name)
        arg_types = tuple(types[id(arg)] for arg in e.args)
        feds = [a for a in args if isinstance(a, _Federated)]
        if not feds:
            return np.asarray(primitive.ordinary(args, arg_types), dtype=np.float64)
        if primitive.kind != "client-local":
            raise ExtensionError(f"Shared-only extension '{name}' received a federated value")

        def local(i):
            counts = {a.arrays[i].shape[a.record_axis - 1] for a in feds}
            if len(counts) > 1:
                raise EvaluationError(f"Local record counts differ in '{name}': {sorted(counts)}",
                                      client=clients[i])
            operands = [a.arrays[i] if isinstance(a, _Federated) else a for a in args]
            try:
                return np.asarray(primitive.apply_local(clients[i], operands, arg_types), dtype=np.float64)
            except FedTensorError:
                raise
            except (ValueError, ArithmeticError) as exc:
                raise EvaluationError(f"Extension '{name}' failed: {exc}", client=clients[i]) from exc
        return _Federated(types[id(e)].record_axis, self._per_client(local, len(clients)))

    # ------------------------------------------------------------------
    # Centralized reference semantics
    # ------------------------------------------------------------------

    def eval_centralized(self, env: Environment, e: Expr) -> CentralResult:
        """Evaluate on virtual global tensors with ordinary tensor operations"""
        types = self.checker.annotate(env.context(), e)
        arrays = {
            name: (virtual_global(v).array if isinstance(v, FederatedValue) else v.array)
            for name, v in env.bindings.items()
        }
        with np.errstate(all="ignore"):
            result = self._centralized(arrays, e, types)
        return CentralResult(TensorValue(result), types[id(e)])

    def _centralized(self, arrays: Mapping[str, np.ndarray], e: Expr, types) -> np.ndarray:
        if isinstance(e, Var):
            return arrays[e.name]
        symbol = e.symbol
        if isinstance(symbol, Literal):
            return symbol.value.array
        args = [self._centralized(arrays, arg, types) for arg in e.args]

        if isinstance(symbol, (Unary, Binary, Compare)):
            try:
                return np.asarray(_elementwise_map(symbol)(*args), dtype=np.float64)
            except ValueError as exc:
                raise EvaluationError(f"Ordinary {symbol.label()} failed: {exc}") from None
        if isinstance(symbol, Agg):
            return SIGNATURE.schema(symbol.schema).reduce(args[0], symbol.axis - 1)
        if isinstance(symbol, Perm):
            return permute_array(args[0], symbol.tau)
        if isinstance(symbol, (MatMulFedSh, MatMulShFed, MatMulFedFed)):
            left, right = args
            if left.shape[1] != right.shape[0]:
                raise EvaluationError(
                    f"Ordinary {symbol.label()} contracted extents differ: {left.shape} vs {right.shape}")
            return np.matmul(left, right)
        if isinstance(symbol, Ext):
            primitive = self.registry.get(symbol.name)
            arg_types = tuple(types[id(arg)] for arg in e.args)
            return np.asarray(primitive.ordinary(args, arg_types), dtype=np.float64)
        raise EvaluationError(f"No semantics for symbol {symbol!r}")

    # ------------------------------------------------------------------
    # Consistency
    # ------------------------------------------------------------------

    def check_consistency(self, env: Environment, e: Expr, tol: Optional[float] = None) -> ConsistencyReport:
        """Compare the distributed result (through vglob when federated) with the centralized one"""
        tol = Config.CONSISTENCY_TOL if tol is None else tol
        distributed = self.eval_distributed(env, e)
        central = self.eval_centralized(env, e)
        if isinstance(distributed, FederatedValue):
            kind = "federated"
            actual = virtual_global(distributed).array
        else:
            kind = "shared"
            actual = distributed.array
        report = compare_arrays(actual, central.tensor.array, tol)
        report.kind = kind
        if not report.passed:
            logger.warning(f"Consistency check failed for {e}: rel={report.max_rel:.3e}")
        return report


def compare_arrays(actual: np.ndarray, expected: np.ndarray, tol: float) -> ConsistencyReport:
    """Max absolute and relative deviation; non-finite entries must coincide exactly"""
    if actual.shape != expected.shape:
        return ConsistencyReport(float("inf"), float("inf"), tol, False, "shape-mismatch")
    nan_match = np.array_equal(np.isnan(actual), np.isnan(expected))
    inf_actual = np.isinf(actual)
    inf_match = np.array_equal(inf_actual, np.isinf(expected)) and np.array_equal(
        actual[inf_actual], expected[inf_actual])
    finite = np.isfinite(actual) & np.isfinite(expected)
    if np.any(finite):
        max_abs = float(np.max(np.abs(actual[finite] - expected[finite])))
        scale = max(1.0, float(np.max(np.abs(expected[finite]))))
    else:
        max_abs, scale = 0.0, 1.0
    max_rel = max_abs / scale
    nonfinite_mismatch = not (nan_match and inf_match)
    passed = (not nonfinite_mismatch) and max_rel <= tol
    return ConsistencyReport(max_abs, max_rel, tol, passed, "shared", nonfinite_mismatch)


def eval_distributed(env: Environment, e: Expr) -> Value:
    return Evaluator().eval_distributed(env, e)


def eval_centralized(env: Environment, e: Expr) -> CentralResult:
    return Evaluator().eval_centralized(env, e)


def check_consistency(env: Environment, e: Expr, tol: Optional[float] = None) -> ConsistencyReport:
    return Evaluator().check_consistency(env, e, tol)

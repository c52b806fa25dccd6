"""
Random Programs Module
Generators of random well-typed expressions, single primitive applications,
one-round programs, federated data and ill-typed programs. Shared by the
test suite and the selfcheck command.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fedtensor.modules.evaluator import Environment
from fedtensor.modules.factorizer import AggForm, MatForm, OneRoundProgram
from fedtensor.modules.lang_ast import (
    Agg,
    Apply,
    Context,
    Expr,
    Fed,
    MatMulFedFed,
    MatMulFedSh,
    MatMulShFed,
    Sh,
    TensorType,
    Var,
    agg,
    binary,
    compare,
    ext,
    lit,
    matmul_fed_fed,
    matmul_fed_sh,
    matmul_sh_fed,
    perm,
    unary,
    walk,
)
from fedtensor.modules.tensor_core import (
    FederatedValue,
    Federation,
    TensorValue,
    insert_record_axis,
    permute_shape,
)
from fedtensor.modules.typechecker import STAR, permute_type, symbolic_shape

logger = logging.getLogger(__name__)

# Maps that keep magnitudes moderate under composition
SAFE_UNARY = ("neg", "abs", "relu", "sigmoid", "square")
SAFE_BINARY = ("add", "sub", "mul")
COMPARISONS = ("lt", "le", "eq", "ge", "gt")
SCHEMAS = ("sum", "min", "max")

PRIMITIVE_FAMILIES = (
    "unary", "binary-shared", "binary-fed-fed", "binary-fed-shared", "compare",
    "agg-record", "agg-nonrecord", "agg-shared", "perm", "matmul-fed-sh", "matmul-sh-fed",
    "matmul-fed-fed",
)


class RandomProgramGenerator:
    """Random typed programs and data; deterministic for a given numpy Generator"""

    def __init__(self, rng: np.random.Generator, max_depth: int = 5, max_rank: int = 3,
                 max_dim: int = 4, max_clients: int = 4, max_records: int = 5):
        self.rng = rng
        self.max_depth = max_depth
        self.max_rank = max_rank
        self.max_dim = max_dim
        self.max_clients = max_clients
        self.max_records = max_records

    # ------------------------------------------------------------------
    # Types and data
    # ------------------------------------------------------------------

    def choice(self, options: Sequence):
        return options[int(self.rng.integers(len(options)))]

    def shape(self, rank: int) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.rng.integers(1, self.max_dim + 1, size=rank))

    def fed_type(self, rank: Optional[int] = None) -> Fed:
        rank = rank if rank is not None else int(self.rng.integers(1, self.max_rank + 1))
        return Fed(int(self.rng.integers(1, rank + 1)), self.shape(rank - 1))

    def sh_type(self, rank: Optional[int] = None) -> Sh:
        rank = rank if rank is not None else int(self.rng.integers(0, self.max_rank + 1))
        return Sh(self.shape(rank))

    def federation(self) -> Federation:
        n = int(self.rng.integers(1, self.max_clients + 1))
        return Federation(tuple(f"c{i + 1}" for i in range(n)))

    def record_counts(self, federation: Federation) -> List[int]:
        return [int(n) for n in self.rng.integers(0, self.max_records + 1, size=len(federation))]

    def tensor(self, shape) -> TensorValue:
        return TensorValue(self.rng.uniform(-1.0, 1.0, size=tuple(shape)))

    def federated(self, t: Fed, federation: Federation, counts: Sequence[int]) -> FederatedValue:
        arrays = [self.rng.uniform(-1.0, 1.0, size=insert_record_axis(t.nonrecord_shape, t.record_axis, n))
                  for n in counts]
        return FederatedValue.from_arrays(federation, t.record_axis, arrays, t.nonrecord_shape)

    def environment(self, ctx: Context, federation: Optional[Federation] = None,
                    counts: Optional[Sequence[int]] = None) -> Environment:
        """Random values for a context; federated bindings share one set of record counts"""
        federation = federation or self.federation()
        counts = counts if counts is not None else self.record_counts(federation)
        bindings = {}
        for name, t in ctx.items():
            bindings[name] = self.federated(t, federation, counts) if isinstance(t, Fed) else self.tensor(t.shape)
        return Environment(bindings)

    # ------------------------------------------------------------------
    # Shapes compatible with a type
    # ------------------------------------------------------------------

    def shared_operand_shape(self, t: TensorType) -> Tuple[int, ...]:
        """A shape that broadcasts against t without changing it"""
        if isinstance(t, Sh):
            full = t.shape
        else:
            full = tuple(1 if entry is STAR else entry for entry in symbolic_shape(t))
        drop = int(self.rng.integers(0, len(full) + 1))
        suffix = full[drop:]
        return tuple(1 if self.rng.random() < 0.3 else d for d in suffix)

    # ------------------------------------------------------------------
    # Expressions
    # ------------------------------------------------------------------

    def _step(self, e: Expr, t: TensorType, ctx: Context, client_local: bool) -> Tuple[Expr, TensorType]:
        """One random typed construction on top of (e, t)"""
        options = ["unary", "binary-literal", "binary-self", "compare"]
        if t.rank >= 1:
            options.append("agg")
        if t.rank >= 2:
            options.append("perm")
        if isinstance(t, Fed) and t.rank == 2:
            options.append("matmul")
        if isinstance(t, Sh) and t.rank == 2:
            options.append("shared-matmul")
        if isinstance(t, Fed) and t.record_axis == 1 and t.rank == 2:
            options.append("ext")
        kind = self.choice(options)

        if kind == "unary":
            return unary(self.choice(SAFE_UNARY), e), t
        if kind in ("binary-literal", "compare"):
            operand = lit(self.tensor(self.shared_operand_shape(t)).array)
            left, right = (e, operand) if self.rng.random() < 0.5 else (operand, e)
            node = (binary(self.choice(SAFE_BINARY), left, right) if kind == "binary-literal"
                    else compare(self.choice(COMPARISONS), left, right))
            return node, t
        if kind == "binary-self":
            same = [n for n, v in ctx.items() if v == t]
            other = Var(self.choice(same)) if same else unary(self.choice(SAFE_UNARY), e)
            return binary(self.choice(SAFE_BINARY), e, other), t
        if kind == "agg":
            schema = self.choice(SCHEMAS)
            if isinstance(t, Sh):
                j = int(self.rng.integers(1, t.rank + 1))
                return agg(schema, j, e), Sh(t.shape[:j - 1] + t.shape[j:])
            candidates = [j for j in range(1, t.rank + 1) if j != t.record_axis]
            if not client_local:
                candidates.append(t.record_axis)
            if not candidates:
                return unary(self.choice(SAFE_UNARY), e), t
            j = self.choice(candidates)
            if j == t.record_axis:
                return agg(schema, j, e), Sh(t.nonrecord_shape)
            sigma = symbolic_shape(t)
            remaining = sigma[:j - 1] + sigma[j:]
            axis = remaining.index(STAR) + 1
            return agg(schema, j, e), Fed(axis, tuple(d for d in remaining if d is not STAR))
        if kind == "perm":
            tau = tuple(int(i) + 1 for i in self.rng.permutation(t.rank))
            if isinstance(t, Fed):
                return perm(tau, e), permute_type(t, tau)
            return perm(tau, e), Sh(permute_shape(t.shape, tau))
        if kind == "matmul":
            p = t.nonrecord_shape[0]
            q = int(self.rng.integers(1, self.max_dim + 1))
            if t.record_axis == 1:
                if client_local or self.rng.random() < 0.5:
                    return matmul_fed_sh(e, lit(self.tensor((p, q)).array)), Fed(1, (q,))
                return matmul_fed_fed(perm((2, 1), e), e), Sh((p, p))
            if client_local or self.rng.random() < 0.5:
                return matmul_sh_fed(lit(self.tensor((q, p)).array), e), Fed(2, (q,))
            return matmul_fed_fed(e, perm((2, 1), e)), Sh((p, p))
        if kind == "shared-matmul":
            c = int(self.rng.integers(1, self.max_dim + 1))
            return ext("shared-matmul", e, lit(self.tensor((t.shape[1], c)).array)), Sh((t.shape[0], c))
        # client-local extensions on Fed_1((m,))
        m = t.nonrecord_shape[0]
        names = ["per-record-outer"] if m < 2 else ["project-features", "project-response", "per-record-outer"]
        name = self.choice(names)
        if name == "project-features":
            return ext(name, e), Fed(1, (m - 1,))
        if name == "project-response":
            return ext(name, e), Fed(1, ())
        return ext(name, e), Fed(1, (m, m))

    def expression(self, ctx: Context, depth: Optional[int] = None, start: Optional[str] = None,
                   client_local: bool = False) -> Tuple[Expr, TensorType]:
        """Random well-typed expression built by forward construction from a context variable"""
        depth = depth if depth is not None else int(self.rng.integers(1, self.max_depth + 1))
        name = start if start is not None else self.choice(sorted(ctx))
        e, t = Var(name), ctx[name]
        for _ in range(depth - 1):
            candidate, candidate_type = self._step(e, t, ctx, client_local)
            if candidate_type.rank > self.max_rank:
                continue
            if client_local and isinstance(t, Fed) and not isinstance(candidate_type, Fed):
                continue
            e, t = candidate, candidate_type
        return e, t

    def client_local_expression(self, ctx: Context, start: str, depth: Optional[int] = None):
        """Federated-typed client-local expression rooted at a federated variable"""
        return self.expression(ctx, depth, start, client_local=True)

    # ------------------------------------------------------------------
    # Single primitive applications
    # ------------------------------------------------------------------

    def application(self, family: str) -> Tuple[Environment, Expr]:
        """One primitive applied to random arguments of a random admissible type"""
        x = Var("x")
        if family == "unary":
            t = self.fed_type() if self.rng.random() < 0.7 else self.sh_type()
            return self.environment({"x": t}), unary(self.choice(SAFE_UNARY + ("exp",)), x)
        if family == "binary-shared":
            t = self.sh_type()
            s = self.shared_operand_shape(t)
            return self.environment({"x": t, "s": Sh(s)}), binary(self.choice(SAFE_BINARY + ("div",)), x, Var("s"))
        if family == "binary-fed-fed":
            t = self.fed_type()
            return self.environment({"x": t, "z": t}), binary(self.choice(SAFE_BINARY), x, Var("z"))
        if family == "binary-fed-shared":
            t = self.fed_type()
            s = Sh(self.shared_operand_shape(t))
            args = (x, Var("s")) if self.rng.random() < 0.5 else (Var("s"), x)
            return self.environment({"x": t, "s": s}), binary(self.choice(SAFE_BINARY), *args)
        if family == "compare":
            t = self.fed_type()
            s = Sh(self.shared_operand_shape(t))
            return self.environment({"x": t, "s": s}), compare(self.choice(COMPARISONS), x, Var("s"))
        if family == "agg-record":
            t = self.fed_type()
            return self.environment({"x": t}), agg(self.choice(SCHEMAS), t.record_axis, x)
        if family == "agg-nonrecord":
            t = self.fed_type(int(self.rng.integers(2, self.max_rank + 1)))
            j = self.choice([j for j in range(1, t.rank + 1) if j != t.record_axis])
            return self.environment({"x": t}), agg(self.choice(SCHEMAS), j, x)
        if family == "agg-shared":
            t = self.sh_type(int(self.rng.integers(1, self.max_rank + 1)))
            return self.environment({"x": t}), agg(self.choice(SCHEMAS), int(self.rng.integers(1, t.rank + 1)), x)
        if family == "perm":
            t = self.fed_type(int(self.rng.integers(1, self.max_rank + 1)))
            tau = tuple(int(i) + 1 for i in self.rng.permutation(t.rank))
            return self.environment({"x": t}), perm(tau, x)
        if family == "matmul-fed-sh":
            p, q = self.shape(2)
            return (self.environment({"x": Fed(1, (p,)), "s": Sh((p, q))}),
                    Apply(MatMulFedSh(), (x, Var("s"))))
        if family == "matmul-sh-fed":
            p, q = self.shape(2)
            return (self.environment({"x": Fed(2, (p,)), "s": Sh((q, p))}),
                    Apply(MatMulShFed(), (Var("s"), x)))
        if family == "matmul-fed-fed":
            a, b = self.shape(2)
            return (self.environment({"x": Fed(2, (a,)), "z": Fed(1, (b,))}),
                    matmul_fed_fed(x, Var("z")))
        raise ValueError(f"Unknown primitive family: {family}")

    def extension_application(self, name: str) -> Tuple[Environment, Expr]:
        x = Var("x")
        if name == "project-features" or name == "project-response":
            m = int(self.rng.integers(2, self.max_dim + 2))
            return self.environment({"x": Fed(1, (m,))}), ext(name, x)
        if name == "per-record-scale":
            p = int(self.rng.integers(1, self.max_dim + 1))
            return self.environment({"w": Fed(1, ()), "x": Fed(1, (p,))}), ext(name, Var("w"), x)
        if name == "per-record-outer":
            p = int(self.rng.integers(1, self.max_dim + 1))
            return self.environment({"x": Fed(1, (p,))}), ext(name, x)
        if name == "record-ones":
            return self.environment({"x": self.fed_type()}), ext(name, x)
        if name == "shared-matmul":
            a, b, c = self.shape(3)
            return self.environment({"x": Sh((a, b)), "s": Sh((b, c))}), ext(name, x, Var("s"))
        if name == "solve":
            p = int(self.rng.integers(1, self.max_dim + 1))
            env = Environment({
                "a": TensorValue(self.rng.uniform(-1.0, 1.0, size=(p, p)) + p * np.eye(p)),
                "b": self.tensor((p,)),
            })
            return env, ext(name, Var("a"), Var("b"))
        raise ValueError(f"No random application for extension '{name}'")

    # ------------------------------------------------------------------
    # Programs
    # ------------------------------------------------------------------

    def one_round_program(self, input_type: Optional[Fed] = None,
                          max_components: int = 3) -> OneRoundProgram:
        input_type = input_type or self.fed_type()
        ctx = {"x": input_type}
        q = int(self.rng.integers(1, max_components + 1))
        components = []
        outputs: List[Sh] = []
        for _ in range(q):
            e, t = self.client_local_expression(ctx, "x", int(self.rng.integers(1, 4)))
            if t.record_axis == 1 and t.rank == 2 and self.rng.random() < 0.3:
                components.append(MatForm(perm((2, 1), e), e))
                outputs.append(Sh((t.nonrecord_shape[0],) * 2))
            else:
                components.append(AggForm(e, self.choice(SCHEMAS)))
                outputs.append(Sh(t.nonrecord_shape))
        names = [f"y{i}" for i in range(1, q + 1)]
        decoder_ctx = dict(zip(names, outputs))
        decoder, decoder_t = self.expression(decoder_ctx, int(self.rng.integers(1, 3)), start="y1")
        for name, t in zip(names[1:], outputs[1:]):
            scalar = Var(name)
            for _ in range(t.rank):
                scalar = agg("sum", 1, scalar)
            decoder = binary("add", decoder, scalar)
        return OneRoundProgram("x", input_type, tuple(components), decoder)

    # ------------------------------------------------------------------
    # Ill-typed programs
    # ------------------------------------------------------------------

    def forbidden_program(self) -> Tuple[Context, Expr, str]:
        """An expression violating one typing rule, and the expected error kind"""
        kind = self.choice(["record-broadcast", "record-axes", "nonrecord", "fedfed", "shared-ext",
                            "unbound", "arity"])
        x = Var("x")
        if kind == "record-broadcast":
            t = self.fed_type()
            sigma = list(symbolic_shape(t))
            r = sigma.index(STAR)
            shape = [1 if entry is STAR else entry for entry in sigma]
            shape[r] = int(self.rng.integers(2, self.max_dim + 2))
            return {"x": t, "s": Sh(tuple(shape))}, binary("add", x, Var("s")), "record-axis-violation"
        if kind == "record-axes":
            rank = int(self.rng.integers(2, self.max_rank + 1))
            t = self.fed_type(rank)
            other = Fed(t.record_axis % rank + 1, t.nonrecord_shape)
            return {"x": t, "z": other}, binary("mul", x, Var("z")), "record-axis-violation"
        if kind == "nonrecord":
            t = self.fed_type(2)
            other = Fed(t.record_axis, (t.nonrecord_shape[0] + 1,))
            return {"x": t, "z": other}, binary("sub", x, Var("z")), "shape-mismatch"
        if kind == "fedfed":
            a = int(self.rng.integers(1, self.max_dim + 1))
            return {"x": Fed(1, (a,))}, matmul_fed_fed(x, x), "fedfed-form"
        if kind == "shared-ext":
            p = int(self.rng.integers(1, self.max_dim + 1))
            return ({"x": Fed(1, (p,)), "b": Sh((p,))}, ext("solve", x, Var("b")), "extension-misuse")
        if kind == "unbound":
            return {"x": self.fed_type()}, binary("add", x, Var("missing")), "unbound-variable"
        return {"x": self.fed_type()}, Apply(unary("neg", x).symbol, (x, x)), "arity"


def exposure_violations(types: Dict[int, TensorType], e: Expr) -> List[Expr]:
    """Shared-from-federated nodes that are neither record-axis aggregations nor MatMulFedFed"""
    bad = []
    for _, node in walk(e):
        if not isinstance(node, Apply) or not isinstance(types[id(node)], Sh):
            continue
        fed_args = [types[id(a)] for a in node.args if isinstance(types[id(a)], Fed)]
        if not fed_args:
            continue
        symbol = node.symbol
        if isinstance(symbol, Agg) and symbol.axis == fed_args[0].record_axis:
            continue
        if isinstance(symbol, MatMulFedFed):
            continue
        bad.append(node)
    return bad


def default_generator(seed: int = 0, **kwargs) -> RandomProgramGenerator:
    return RandomProgramGenerator(np.random.default_rng(seed), **kwargs)


__all__ = [
    "RandomProgramGenerator",
    "PRIMITIVE_FAMILIES",
    "default_generator",
    "exposure_violations",
]

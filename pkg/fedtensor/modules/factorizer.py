"""
Factorizer Module
One-round and iterative typed programs, their validation, and extraction of
encode / merge / decode plans over a fixed-size shared state.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from fedtensor.configs.config import Config
from fedtensor.modules.errors import (
    EvaluationError,
    FedTensorError,
    TypeCheckError,
    ValidationError,
    Violation,
)
from fedtensor.modules.evaluator import Environment, Evaluator
from fedtensor.modules.lang_ast import (
    SIGNATURE,
    AggregationSchema,
    Expr,
    Fed,
    Sh,
    TensorType,
    Var,
    agg,
    div,
    ext,
    free_variables,
    is_client_local,
    lit,
    matmul_fed_fed,
    mul,
    perm,
    rename,
    square,
    sub,
    substitute,
)
from fedtensor.modules.tensor_core import (
    FederatedValue,
    Federation,
    Shape,
    TensorValue,
    shape_size,
)

logger = logging.getLogger(__name__)


# ============================================
# Program structure
# ============================================

@dataclass(frozen=True, eq=False)
class AggForm:
    """g = alpha_r(e) with e client-local and r the record axis of e's type"""
    expr: Expr
    schema: str = "sum"


@dataclass(frozen=True, eq=False)
class MatForm:
    """g = a b with a : Fed_2((m,)) and b : Fed_1((n,)), both client-local"""
    left: Expr
    right: Expr


Component = Union[AggForm, MatForm]


def default_state_names(q: int) -> Tuple[str, ...]:
    return tuple(f"y{i}" for i in range(1, q + 1))


@dataclass(eq=False)
class OneRoundProgram:
    input_name: str
    input_type: Fed
    components: Tuple[Component, ...]
    decoder: Expr
    state_names: Optional[Tuple[str, ...]] = None
    shared_inputs: Dict[str, Sh] = field(default_factory=dict)

    def __post_init__(self):
        self.components = tuple(self.components)
        if self.state_names is None:
            self.state_names = default_state_names(len(self.components))
        self.state_names = tuple(self.state_names)

    def input_context(self) -> Dict[str, TensorType]:
        ctx: Dict[str, TensorType] = dict(self.shared_inputs)
        ctx[self.input_name] = self.input_type
        return ctx


@dataclass(eq=False)
class Round:
    components: Tuple[Component, ...]
    decoder: Expr
    state_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        self.components = tuple(self.components)
        if self.state_names is None:
            self.state_names = default_state_names(len(self.components))
        self.state_names = tuple(self.state_names)


@dataclass(eq=False)
class IterativeProgram:
    """theta_{t+1} = h_t(g_{t,1}(X, theta_t), ..., theta_t) for t = 0..T-1

    theta_shapes optionally declares tau_0..tau_T; when omitted the shapes
    follow from theta0 and each decoder's output type.
    """
    input_name: str
    input_type: Fed
    theta_name: str
    theta0: TensorValue
    rounds: Tuple[Round, ...]
    shared_inputs: Dict[str, Sh] = field(default_factory=dict)
    theta_shapes: Optional[Tuple[Shape, ...]] = None

    def __post_init__(self):
        self.rounds = tuple(self.rounds)
        if not isinstance(self.theta0, TensorValue):
            self.theta0 = TensorValue(self.theta0)

    @property
    def num_rounds(self) -> int:
        return len(self.rounds)

    def round_program(self, t: int, theta_shape: Shape) -> OneRoundProgram:
        shared = dict(self.shared_inputs)
        shared[self.theta_name] = Sh(theta_shape)
        r = self.rounds[t]
        return OneRoundProgram(self.input_name, self.input_type, r.components, r.decoder,
                               r.state_names, shared)


# ============================================
# Validation
# ============================================

def _component_output(component: Component, ctx, checker, index: int,
                      round_index: Optional[int], violations: List[Violation]) -> Optional[Sh]:
    """Type-check one component; returns its output type or None after recording violations"""

    def report(kind, message):
        violations.append(Violation(kind, message, component=index, round=round_index))

    def client_local(e: Expr, what: str) -> Optional[Fed]:
        try:
            t = checker.typecheck(ctx, e)
        except TypeCheckError as exc:
            report("type-error", f"{what}: {exc}")
            return None
        if not isinstance(t, Fed):
            report("not-federated", f"{what} has shared type {t}")
            return None
        locality = is_client_local(ctx, e, checker.registry)
        if not locality:
            paths = ", ".join(str(p) for p, _ in locality.offending)
            report("not-client-local", f"{what} converts federated data to shared at {paths}")
            return None
        return t

    if isinstance(component, AggForm):
        schema = SIGNATURE.schemas.get(component.schema)
        if schema is None:
            report("unknown-schema", f"aggregation schema '{component.schema}' is not registered")
            return None
        if not schema.mergeable:
            report("non-mergeable-schema", f"aggregation schema '{component.schema}' is not mergeable")
            return None
        t = client_local(component.expr, "encoder")
        return Sh(t.nonrecord_shape) if t is not None else None

    left = client_local(component.left, "left factor")
    right = client_local(component.right, "right factor")
    if left is None or right is None:
        return None
    if not (left.record_axis == 2 and len(left.nonrecord_shape) == 1):
        report("fedfed-form", f"left factor has type {left}, expected Fed_2((m,))")
        return None
    if not (right.record_axis == 1 and len(right.nonrecord_shape) == 1):
        report("fedfed-form", f"right factor has type {right}, expected Fed_1((n,))")
        return None
    return Sh((left.nonrecord_shape[0], right.nonrecord_shape[0]))


def _validate_components(input_name: str, input_type: Fed, components, decoder: Expr,
                         state_names, shared_inputs: Mapping[str, Sh], checker,
                         round_index: Optional[int] = None) -> Tuple[List[Violation], Optional[Sh]]:
    violations: List[Violation] = []
    if not components:
        violations.append(Violation("no-components", "a program needs at least one component",
                                    round=round_index))
        return violations, None
    if len(state_names) != len(components):
        violations.append(Violation(
            "state-names", f"{len(state_names)} state names for {len(components)} components",
            round=round_index))
        return violations, None
    reserved = set(shared_inputs) | {input_name}
    if len(set(state_names)) != len(state_names) or reserved & set(state_names):
        violations.append(Violation(
            "name-clash", f"state names {state_names} clash with each other or with inputs",
            round=round_index))
        return violations, None
    if not isinstance(input_type, Fed):
        violations.append(Violation("input-type", f"input type {input_type} is not federated",
                                    round=round_index))
        return violations, None

    ctx = dict(shared_inputs)
    ctx[input_name] = input_type
    outputs = [_component_output(c, ctx, checker, i, round_index, violations)
               for i, c in enumerate(components, start=1)]

    if input_name in free_variables(decoder):
        violations.append(Violation(
            "decoder-not-shared-only", f"decoder references the federated input '{input_name}'",
            round=round_index))
        return violations, None
    if any(o is None for o in outputs):
        return violations, None

    decoder_ctx = dict(shared_inputs)
    decoder_ctx.update(zip(state_names, outputs))
    try:
        out_type = checker.typecheck(decoder_ctx, decoder)
    except TypeCheckError as exc:
        violations.append(Violation("decoder-type-error", str(exc), round=round_index))
        return violations, None
    return violations, out_type


def validate_one_round(p: OneRoundProgram, registry=None) -> List[Violation]:
    """Every finding, each tagged with its 1-based component index where applicable"""
    checker = Evaluator(registry).checker
    violations, _ = _validate_components(p.input_name, p.input_type, p.components, p.decoder,
                                         p.state_names, p.shared_inputs, checker)
    return violations


def decoder_type(p: OneRoundProgram, registry=None) -> Sh:
    checker = Evaluator(registry).checker
    violations, out_type = _validate_components(p.input_name, p.input_type, p.components, p.decoder,
                                                p.state_names, p.shared_inputs, checker)
    if violations:
        raise ValidationError(violations)
    return out_type


def validate_iterative(p: IterativeProgram, registry=None) -> List[Violation]:
    """Per-round validation in the theta-enlarged context; rounds are 0-based"""
    checker = Evaluator(registry).checker
    violations: List[Violation] = []
    if p.num_rounds < 1:
        return [Violation("no-rounds", "an iterative program needs at least one round")]
    if p.theta_name == p.input_name or p.theta_name in p.shared_inputs:
        return [Violation("name-clash", f"state name '{p.theta_name}' clashes with an input")]
    if p.theta_shapes is not None and len(p.theta_shapes) != p.num_rounds + 1:
        return [Violation("state-shapes",
                          f"{len(p.theta_shapes)} state shapes declared for {p.num_rounds} rounds")]
    theta_shape = p.theta0.shape
    if p.theta_shapes is not None and tuple(p.theta_shapes[0]) != theta_shape:
        violations.append(Violation(
            "state-shape", f"theta0 has shape {theta_shape}, declared {tuple(p.theta_shapes[0])}", round=0))
    for t, r in enumerate(p.rounds):
        shared = dict(p.shared_inputs)
        shared[p.theta_name] = Sh(theta_shape)
        round_violations, out_type = _validate_components(
            p.input_name, p.input_type, r.components, r.decoder, r.state_names, shared, checker, t)
        violations.extend(round_violations)
        if out_type is None:
            break
        if p.theta_shapes is not None and out_type.shape != tuple(p.theta_shapes[t + 1]):
            violations.append(Violation(
                "state-shape",
                f"decoder output {out_type} differs from declared state shape {tuple(p.theta_shapes[t + 1])}",
                round=t))
            break
        theta_shape = out_type.shape
    return violations


def check_round_memory(p: IterativeProgram, registry=None) -> List[Violation]:
    """Only theta crosses round boundaries: decoders see state, theta and shared inputs only"""
    violations: List[Violation] = []
    for t, r in enumerate(p.rounds):
        allowed = set(r.state_names) | {p.theta_name} | set(p.shared_inputs)
        names = free_variables(r.decoder)
        if p.input_name in names:
            violations.append(Violation(
                "federated-in-decoder", f"decoder reads the federated input '{p.input_name}'", round=t))
        stray = sorted(names - allowed - {p.input_name})
        if stray:
            violations.append(Violation(
                "carried-state", f"decoder reads {stray}, which are not round state", round=t))
        for i, component in enumerate(r.components, start=1):
            exprs = (component.expr,) if isinstance(component, AggForm) else (component.left, component.right)
            for e in exprs:
                extra = sorted(free_variables(e) - {p.input_name, p.theta_name} - set(p.shared_inputs))
                if extra:
                    violations.append(Violation(
                        "carried-state", f"encoder reads {extra} from outside the round", component=i, round=t))
    violations.extend(validate_iterative(p, registry))
    return violations


# ============================================
# Plans
# ============================================

@dataclass(frozen=True)
class MergeMonoid:
    """Commutative monoid on a state component"""
    name: str
    identity: float
    combine: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def identity_element(self, shape: Shape) -> np.ndarray:
        return np.full(shape, self.identity, dtype=np.float64)


MATRIX_ADD = MergeMonoid("matrix-add", 0.0, np.add)


def schema_monoid(schema: AggregationSchema) -> MergeMonoid:
    """The merge and identity a registered aggregation schema declares"""
    return MergeMonoid(schema.name, schema.identity, schema.merge)


def merge_monoids() -> Dict[str, MergeMonoid]:
    """Every merge a plan can use: one per registered schema, plus matrix-add"""
    monoids = {name: schema_monoid(schema) for name, schema in sorted(SIGNATURE.schemas.items())}
    monoids[MATRIX_ADD.name] = MATRIX_ADD
    return monoids


def _single_client_env(client: str, record_axis: int, nonrecord: Shape, local: TensorValue,
                       input_name: str, shared: Mapping[str, TensorValue]) -> Environment:
    fed = FederatedValue(Federation((client,)), record_axis, nonrecord, (local,))
    bindings = dict(shared)
    bindings[input_name] = fed
    return Environment(bindings)


@dataclass(eq=False)
class PlanComponent:
    name: str
    form: Component
    state_shape: Shape
    merge: MergeMonoid
    record_axis: Optional[int] = None

    @property
    def size(self) -> int:
        return shape_size(self.state_shape)

    def encode(self, evaluator: Evaluator, env: Environment) -> np.ndarray:
        """Client message phi_n(X^(c)) computed on a one-client environment"""
        client = env.federation.clients[0]
        if isinstance(self.form, AggForm):
            local = evaluator.eval_distributed(env, self.form.expr).locals[0].array
            return SIGNATURE.schema(self.form.schema).reduce(local, self.record_axis - 1)
        a = evaluator.eval_distributed(env, self.form.left).locals[0].array
        b = evaluator.eval_distributed(env, self.form.right).locals[0].array
        if a.shape[1] != b.shape[0]:
            raise EvaluationError(
                f"Local record counts differ in component '{self.name}': {a.shape[1]} vs {b.shape[0]}",
                client=client)
        return np.matmul(a, b)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "form": "agg" if isinstance(self.form, AggForm) else "mat",
            "state_shape": list(self.state_shape),
            "merge": self.merge.name,
            "identity": self.merge.identity,
            "elements": self.size,
        }


@dataclass(eq=False)
class SharedStatePlan:
    """sigma(X) = psi(merge over clients of phi_{n_c}(X^(c)))

    Exposes the combiner protocol: create_accumulator, add_input,
    merge_accumulators and extract_output.
    """
    input_name: str
    input_type: Fed
    components: Tuple[PlanComponent, ...]
    decoder: Expr
    shared_types: Dict[str, Sh] = field(default_factory=dict)
    registry: object = None

    def __post_init__(self):
        self._evaluator = Evaluator(self.registry)

    @property
    def state_names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.components)

    @property
    def state_dimension(self) -> int:
        return sum(c.size for c in self.components)

    @property
    def state_shapes(self) -> Tuple[Shape, ...]:
        return tuple(c.state_shape for c in self.components)

    def create_accumulator(self) -> List[np.ndarray]:
        return [c.merge.identity_element(c.state_shape) for c in self.components]

    def encode(self, client: str, local: TensorValue,
               shared: Optional[Mapping[str, TensorValue]] = None) -> List[np.ndarray]:
        env = _single_client_env(client, self.input_type.record_axis, self.input_type.nonrecord_shape,
                                 local, self.input_name, shared or {})
        with np.errstate(all="ignore"):
            return [np.asarray(c.encode(self._evaluator, env), dtype=np.float64) for c in self.components]

    def add_input(self, accumulator: Sequence[np.ndarray], message: Sequence[np.ndarray]) -> List[np.ndarray]:
        return [c.merge.combine(a, m)
                for c, a, m in zip(self.components, accumulator, message, strict=True)]

    def merge_accumulators(self, accumulators: Sequence[Sequence[np.ndarray]]) -> List[np.ndarray]:
        """Fold in the given order, starting from the first accumulator"""
        accumulators = list(accumulators)
        if not accumulators:
            return self.create_accumulator()
        merged = [np.asarray(a) for a in accumulators[0]]
        for acc in accumulators[1:]:
            merged = self.add_input(merged, acc)
        return merged

    def extract_output(self, state: Sequence[np.ndarray],
                       shared: Optional[Mapping[str, TensorValue]] = None) -> TensorValue:
        bindings = dict(shared or {})
        for c, value in zip(self.components, state):
            bindings[c.name] = TensorValue(value)
        return self._evaluator.eval_distributed(Environment(bindings), self.decoder)

    def check_input(self, X: FederatedValue, shared: Optional[Mapping[str, TensorValue]] = None) -> None:
        if X.record_axis != self.input_type.record_axis or X.nonrecord_shape != self.input_type.nonrecord_shape:
            raise EvaluationError(
                f"Input of type Fed_{X.record_axis}({X.nonrecord_shape}) does not match plan input {self.input_type}")
        shared = shared or {}
        for name, t in self.shared_types.items():
            if name not in shared:
                raise EvaluationError(f"Missing shared input '{name}'")
            if shared[name].shape != t.shape:
                raise EvaluationError(f"Shared input '{name}' has shape {shared[name].shape}, expected {t.shape}")

    def client_messages(self, X: FederatedValue,
                        shared: Optional[Mapping[str, TensorValue]] = None) -> List[List[np.ndarray]]:
        self.check_input(X, shared)
        clients = list(X.items())

        def encode_one(item):
            client, local = item
            return self.encode(client, local, shared)

        if Config.MAX_WORKERS > 1 and len(clients) > 1:
            with ThreadPoolExecutor(max_workers=Config.MAX_WORKERS) as pool:
                return list(pool.map(encode_one, clients))
        return [encode_one(item) for item in clients]

    def merged_state(self, X: FederatedValue,
                     shared: Optional[Mapping[str, TensorValue]] = None) -> List[np.ndarray]:
        return self.merge_accumulators(self.client_messages(X, shared))

    def summary(self) -> dict:
        from fedtensor.modules.fed_sim import encoded_state_size

        return {
            "input": {"name": self.input_name, "type": str(self.input_type)},
            "shared_inputs": {n: str(t) for n, t in self.shared_types.items()},
            "components": [c.describe() for c in self.components],
            "state_elements": self.state_dimension,
            "state_bytes": encoded_state_size(self.state_shapes),
        }


def extract_plan(p: OneRoundProgram, registry=None) -> SharedStatePlan:
    """Encoders evaluate each component locally and reduce along its record axis"""
    violations = validate_one_round(p, registry)
    if violations:
        raise ValidationError(violations)
    checker = Evaluator(registry).checker
    ctx = p.input_context()
    components = []
    for name, form in zip(p.state_names, p.components):
        if isinstance(form, AggForm):
            t = checker.typecheck(ctx, form.expr)
            monoid = schema_monoid(SIGNATURE.schema(form.schema))
            components.append(PlanComponent(name, form, t.nonrecord_shape, monoid, t.record_axis))
        else:
            left = checker.typecheck(ctx, form.left)
            right = checker.typecheck(ctx, form.right)
            shape = (left.nonrecord_shape[0], right.nonrecord_shape[0])
            components.append(PlanComponent(name, form, shape, MATRIX_ADD))
    plan = SharedStatePlan(p.input_name, p.input_type, tuple(components), p.decoder,
                           dict(p.shared_inputs), registry)
    logger.debug(f"Extracted plan with {len(components)} component(s), state dimension {plan.state_dimension}")
    return plan


def run_plan(plan: SharedStatePlan, X: FederatedValue,
             shared: Optional[Mapping[str, TensorValue]] = None) -> TensorValue:
    """Encode per client, merge in federation order, decode"""
    state = plan.merged_state(X, shared)
    return plan.extract_output(state, shared)


def realize_program(plan: SharedStatePlan) -> OneRoundProgram:
    """Re-assemble a plan into the one-round program that induces it"""
    return OneRoundProgram(plan.input_name, plan.input_type, tuple(c.form for c in plan.components),
                           plan.decoder, plan.state_names, dict(plan.shared_types))


def assemble_expression(p: OneRoundProgram, registry=None) -> Expr:
    """The single expression h(g_1, ..., g_q)"""
    checker = Evaluator(registry).checker
    ctx = p.input_context()
    mapping = {}
    for name, form in zip(p.state_names, p.components):
        if isinstance(form, AggForm):
            axis = checker.typecheck(ctx, form.expr).record_axis
            mapping[name] = agg(form.schema, axis, form.expr)
        else:
            mapping[name] = matmul_fed_fed(form.left, form.right)
    return substitute(p.decoder, mapping)


def compose_programs(programs: Sequence[OneRoundProgram], post: Expr,
                     names: Sequence[str]) -> OneRoundProgram:
    """H(h_1(...), ..., h_l(...)) as one program; names[j] stands for program j's output in H"""
    if not programs or len(programs) != len(names):
        raise ValueError("compose_programs needs one name per program and at least one program")
    first = programs[0]
    components: List[Component] = []
    state_names: List[str] = []
    shared: Dict[str, Sh] = {}
    decoders = {}
    for j, program in enumerate(programs, start=1):
        if program.input_name != first.input_name or program.input_type != first.input_type:
            raise ValueError(f"Program {j} has a different input declaration")
        for name, t in program.shared_inputs.items():
            if shared.setdefault(name, t) != t:
                raise ValueError(f"Shared input '{name}' declared with different types")
        renamed = {old: f"z{j}_{old}" for old in program.state_names}
        components.extend(program.components)
        state_names.extend(renamed.values())
        decoders[names[j - 1]] = rename(program.decoder, renamed)
    return OneRoundProgram(first.input_name, first.input_type, tuple(components),
                           substitute(post, decoders), tuple(state_names), shared)


@dataclass
class RoundTrace:
    round: int
    theta: TensorValue
    merged_state: Tuple[TensorValue, ...]
    theta_next: TensorValue


@dataclass
class IterativeResult:
    theta: TensorValue
    trace: List[RoundTrace]


def run_iterative(p: IterativeProgram, X: FederatedValue,
                  shared: Optional[Mapping[str, TensorValue]] = None, registry=None,
                  callback: Optional[Callable[[RoundTrace], None]] = None) -> IterativeResult:
    """Execute every round through its extracted plan with theta_t bound as a shared input"""
    shared = dict(shared or {})
    cache: Dict[Tuple[int, Shape], SharedStatePlan] = {}
    theta = p.theta0
    trace: List[RoundTrace] = []
    for t, r in enumerate(p.rounds):
        key = (id(r), theta.shape)
        try:
            plan = cache.get(key)
            if plan is None:
                plan = extract_plan(p.round_program(t, theta.shape), registry)
                cache[key] = plan
            bindings = dict(shared)
            bindings[p.theta_name] = theta
            state = plan.merged_state(X, bindings)
            theta_next = plan.extract_output(state, bindings)
        except FedTensorError as exc:
            exc.round = t
            exc.add_note(f"raised in round {t}")
            raise
        entry = RoundTrace(t, theta, tuple(TensorValue(s) for s in state), theta_next)
        trace.append(entry)
        if callback is not None:
            callback(entry)
        logger.info(f"Round {t} complete")
        theta = theta_next
    return IterativeResult(theta, trace)


def run_iterative_centralized(p: IterativeProgram, X: FederatedValue,
                              shared: Optional[Mapping[str, TensorValue]] = None,
                              registry=None) -> List[TensorValue]:
    """Reference trajectory theta_0..theta_T from each round's assembled expression on vglob"""
    evaluator = Evaluator(registry)
    theta = p.theta0
    trajectory = [theta]
    for t in range(p.num_rounds):
        expr = assemble_expression(p.round_program(t, theta.shape), registry)
        bindings = dict(shared or {})
        bindings[p.input_name] = X
        bindings[p.theta_name] = theta
        theta = evaluator.eval_centralized(Environment(bindings), expr).tensor
        trajectory.append(theta)
    return trajectory


# ============================================
# Standard statistics
# ============================================

SCALAR_INPUT = Fed(1, ())


def sum_program(input_type: Fed = SCALAR_INPUT, name: str = "x") -> OneRoundProgram:
    return OneRoundProgram(name, input_type, (AggForm(Var(name), "sum"),), Var("y1"))


def count_program(input_type: Fed = SCALAR_INPUT, name: str = "x") -> OneRoundProgram:
    """Number of records, finite or not"""
    return OneRoundProgram(name, input_type, (AggForm(ext("record-ones", Var(name)), "sum"),), Var("y1"))


def min_program(input_type: Fed = SCALAR_INPUT, name: str = "x") -> OneRoundProgram:
    return OneRoundProgram(name, input_type, (AggForm(Var(name), "min"),), Var("y1"))


def max_program(input_type: Fed = SCALAR_INPUT, name: str = "x") -> OneRoundProgram:
    return OneRoundProgram(name, input_type, (AggForm(Var(name), "max"),), Var("y1"))


def mean_program(input_type: Fed = SCALAR_INPUT, name: str = "x") -> OneRoundProgram:
    return compose_programs([sum_program(input_type, name), count_program(input_type, name)],
                            div(Var("s"), Var("n")), ["s", "n"])


def second_moment_program(input_type: Fed = SCALAR_INPUT, name: str = "x") -> OneRoundProgram:
    squares = OneRoundProgram(name, input_type, (AggForm(square(Var(name)), "sum"),), Var("y1"))
    return compose_programs([squares, count_program(input_type, name)],
                            div(Var("q"), Var("n")), ["q", "n"])


def variance_program(input_type: Fed = SCALAR_INPUT, name: str = "x") -> OneRoundProgram:
    """Population variance E[x^2] - E[x]^2 from sum, sum of squares and count"""
    return compose_programs([mean_program(input_type, name), second_moment_program(input_type, name)],
                            sub(Var("m2"), square(Var("m1"))), ["m1", "m2"])


def gram_program(p: int, name: str = "x") -> OneRoundProgram:
    """X^T X for X : Fed_1((p,))"""
    x = Var(name)
    return OneRoundProgram(name, Fed(1, (p,)), (MatForm(perm((2, 1), x), x),), Var("y1"))


def cross_program(p: int, name: str = "x") -> OneRoundProgram:
    """X^T y for packed records Fed_1((p+1,)): features then response"""
    x = Var(name)
    features_t = perm((2, 1), ext("project-features", x))
    selector = np.zeros(p + 1)
    selector[p] = 1.0
    decoder = agg("sum", 2, mul(Var("y1"), lit(selector)))
    return OneRoundProgram(name, Fed(1, (p + 1,)), (MatForm(features_t, x),), decoder)

"""
Documents Module
JSON interchange for programs and data: pydantic schemas, loading with
parse/schema errors located by line and column, building executable
programs and environments, and saving them back.
"""
import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Literal as TypingLiteral, Optional, Union

from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, model_validator

from fedtensor.modules.errors import DocumentError, ShapeError, ValidationError
from fedtensor.modules.evaluator import Environment
from fedtensor.modules.factorizer import (
    AggForm,
    IterativeProgram,
    MatForm,
    OneRoundProgram,
    Round,
    decoder_type,
    validate_iterative,
)
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
from fedtensor.modules.tensor_core import FederatedValue, Federation, TensorValue, remove_axis, shape_size
from fedtensor.modules.typechecker import TypeChecker

logger = logging.getLogger(__name__)

DOCUMENT_VERSION = 1

MATMUL_OPS = {
    "matmul_fed_sh": MatMulFedSh,
    "matmul_sh_fed": MatMulShFed,
    "matmul_fed_fed": MatMulFedFed,
}


# ============================================
# Schemas
# ============================================

class TensorSpec(BaseModel):
    shape: List[int] = Field(default_factory=list)
    data: List[float]

    @model_validator(mode="after")
    def check_size(self):
        if any(d < 0 for d in self.shape):
            raise ValueError(f"negative extent in shape {self.shape}")
        if len(self.data) != shape_size(self.shape):
            raise ValueError(f"shape {self.shape} needs {shape_size(self.shape)} values, got {len(self.data)}")
        return self

    def to_value(self) -> TensorValue:
        return TensorValue.from_flat(self.shape, self.data)

    @classmethod
    def from_value(cls, value: TensorValue) -> "TensorSpec":
        return cls(shape=list(value.shape), data=value.to_flat())


class TypeSpec(BaseModel):
    kind: TypingLiteral["sh", "fed"]
    shape: List[int] = Field(default_factory=list)
    record_axis: Optional[int] = None

    @model_validator(mode="after")
    def check_record_axis(self):
        if self.record_axis is not None and not 1 <= self.record_axis <= len(self.shape) + 1:
            raise ValueError(f"record_axis {self.record_axis} outside 1..{len(self.shape) + 1}")
        return self

    def to_type(self) -> TensorType:
        if self.kind == "sh":
            return Sh(tuple(self.shape))
        return Fed(1 if self.record_axis is None else self.record_axis, tuple(self.shape))

    @classmethod
    def from_type(cls, t: TensorType) -> "TypeSpec":
        if isinstance(t, Fed):
            return cls(kind="fed", shape=list(t.nonrecord_shape), record_axis=t.record_axis)
        return cls(kind="sh", shape=list(t.shape))


class ExprNode(BaseModel):
    var: Optional[str] = None
    op: Optional[str] = None
    axis: Optional[int] = None
    tau: Optional[List[int]] = None
    name: Optional[str] = None
    lit: Optional[TensorSpec] = None
    args: List["ExprNode"] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_form(self):
        forms = [self.var is not None, self.op is not None, self.lit is not None]
        if sum(forms) != 1:
            raise ValueError("an expression node needs exactly one of 'var', 'op' or 'lit'")
        return self


ExprNode.model_rebuild()


class ComponentSpec(BaseModel):
    form: TypingLiteral["agg", "mat"]
    aggregation: str = "sum"
    expr: Optional[ExprNode] = None
    left: Optional[ExprNode] = None
    right: Optional[ExprNode] = None

    @model_validator(mode="after")
    def check_fields(self):
        if self.form == "agg" and self.expr is None:
            raise ValueError("an 'agg' component needs 'expr'")
        if self.form == "mat" and (self.left is None or self.right is None):
            raise ValueError("a 'mat' component needs 'left' and 'right'")
        return self


class RoundSpec(BaseModel):
    components: List[ComponentSpec]
    decoder: ExprNode
    state_names: Optional[List[str]] = None
    repeat: int = Field(default=1, ge=1)


class ProgramDocument(BaseModel):
    version: int = DOCUMENT_VERSION
    kind: TypingLiteral["expr", "one-round", "iterative"]
    inputs: Dict[str, TypeSpec]
    body: Optional[ExprNode] = None
    components: Optional[List[ComponentSpec]] = None
    decoder: Optional[ExprNode] = None
    state_names: Optional[List[str]] = None
    theta: Optional[str] = None
    theta0: Optional[TensorSpec] = None
    rounds: Optional[List[RoundSpec]] = None

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.version != DOCUMENT_VERSION:
            raise ValueError(f"unsupported document version {self.version}")
        if self.kind == "expr" and self.body is None:
            raise ValueError("an 'expr' program needs 'body'")
        if self.kind == "one-round" and (self.components is None or self.decoder is None):
            raise ValueError("a 'one-round' program needs 'components' and 'decoder'")
        if self.kind == "iterative" and (self.theta is None or self.theta0 is None or not self.rounds):
            raise ValueError("an 'iterative' program needs 'theta', 'theta0' and 'rounds'")
        if self.kind != "expr":
            federated = [n for n, t in self.inputs.items() if t.kind == "fed"]
            if len(federated) != 1:
                raise ValueError(f"'{self.kind}' programs need exactly one federated input, got {federated}")
        return self


class ClientData(BaseModel):
    id: str
    tensors: Dict[str, TensorSpec]


class DataDocument(BaseModel):
    version: int = DOCUMENT_VERSION
    clients: List[ClientData]
    record_axes: Dict[str, int] = Field(default_factory=dict)
    shared: Dict[str, TensorSpec] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_clients(self):
        if not self.clients:
            raise ValueError("a federation needs at least one client")
        ids = [c.id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate client ids {ids}")
        names = set(self.clients[0].tensors)
        for client in self.clients[1:]:
            if set(client.tensors) != names:
                raise ValueError(f"client '{client.id}' has tensors {sorted(client.tensors)}, "
                                 f"expected {sorted(names)}")
        for name in names:
            axis = self.record_axes.get(name, 1)
            shapes = []
            for client in self.clients:
                shape = client.tensors[name].shape
                if not 1 <= axis <= len(shape):
                    raise ValueError(f"tensor '{name}' of client '{client.id}' has no axis {axis}")
                shapes.append(tuple(remove_axis(shape, axis)))
            if len(set(shapes)) != 1:
                raise ValueError(f"federated tensor '{name}' has mismatched non-record shapes {shapes}")
        return self


# ============================================
# Parsing
# ============================================

def _parse_json(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError("parse", exc.msg, line=exc.lineno, column=exc.colno) from None


def _schema_error(exc: PydanticValidationError) -> DocumentError:
    first = exc.errors()[0]
    location = ".".join(str(p) for p in first.get("loc", ()))
    message = first.get("msg", str(exc))
    return DocumentError("schema", f"{location}: {message}" if location else message)


def load_program(text: str, check: bool = True) -> ProgramDocument:
    """Parse, validate the schema and (when check is set) the program's typing"""
    raw = _parse_json(text)
    try:
        doc = ProgramDocument.model_validate(raw)
    except PydanticValidationError as exc:
        raise _schema_error(exc) from None
    built = build_program(doc)
    if check:
        check_program(built)
    return doc


def load_data(text: str) -> DataDocument:
    raw = _parse_json(text)
    try:
        return DataDocument.model_validate(raw)
    except PydanticValidationError as exc:
        raise _schema_error(exc) from None


def load_tensor(text: str) -> TensorValue:
    """A standalone {"shape": [...], "data": [...]} document"""
    raw = _parse_json(text)
    try:
        return TensorSpec.model_validate(raw).to_value()
    except PydanticValidationError as exc:
        raise _schema_error(exc) from None


def _dump(model: BaseModel) -> str:
    # json keeps +/-Infinity, which literal identities need
    return json.dumps(model.model_dump(exclude_none=True), indent=2)


def save_program(doc: ProgramDocument) -> str:
    return _dump(doc)


def save_data(doc: DataDocument) -> str:
    return _dump(doc)


# ============================================
# Expressions
# ============================================

def node_to_expr(node: ExprNode) -> Expr:
    if node.var is not None:
        return Var(node.var)
    if node.lit is not None:
        return Apply(Literal(node.lit.to_value()))
    args = tuple(node_to_expr(a) for a in node.args)
    op = node.op
    try:
        if op in SIGNATURE.unary:
            return Apply(Unary(op), args)
        if op in SIGNATURE.binary:
            return Apply(Binary(op), args)
        if op in SIGNATURE.compare:
            return Apply(Compare(op), args)
        if op in SIGNATURE.schemas:
            if node.axis is None:
                raise DocumentError("schema", f"aggregation '{op}' needs 'axis'")
            return Apply(Agg(op, node.axis), args)
        if op == "perm":
            if node.tau is None:
                raise DocumentError("schema", "'perm' needs 'tau'")
            return Apply(Perm(tuple(node.tau)), args)
        if op in MATMUL_OPS:
            return Apply(MATMUL_OPS[op](), args)
        if op == "ext":
            if not node.name:
                raise DocumentError("schema", "'ext' needs 'name'")
            return Apply(Ext(node.name), args)
    except (ValueError, ShapeError) as exc:
        raise DocumentError("schema", f"op '{op}': {exc}") from None
    raise DocumentError("schema", f"unknown op '{op}'")


def expr_to_node(e: Expr) -> ExprNode:
    if isinstance(e, Var):
        return ExprNode(var=e.name)
    symbol = e.symbol
    args = [expr_to_node(a) for a in e.args]
    if isinstance(symbol, Literal):
        return ExprNode(lit=TensorSpec.from_value(symbol.value))
    if isinstance(symbol, (Unary, Binary, Compare)):
        return ExprNode(op=symbol.name, args=args)
    if isinstance(symbol, Agg):
        return ExprNode(op=symbol.schema, axis=symbol.axis, args=args)
    if isinstance(symbol, Perm):
        return ExprNode(op="perm", tau=list(symbol.tau), args=args)
    if isinstance(symbol, Ext):
        return ExprNode(op="ext", name=symbol.name, args=args)
    for op, cls in MATMUL_OPS.items():
        if isinstance(symbol, cls):
            return ExprNode(op=op, args=args)
    raise DocumentError("schema", f"cannot serialize symbol {symbol!r}")


# ============================================
# Programs
# ============================================

@dataclass(eq=False)
class ExprProgram:
    context: Context
    body: Expr


BuiltProgram = Union[ExprProgram, OneRoundProgram, IterativeProgram]


def _component(spec: ComponentSpec):
    if spec.form == "agg":
        return AggForm(node_to_expr(spec.expr), spec.aggregation)
    return MatForm(node_to_expr(spec.left), node_to_expr(spec.right))


def _split_inputs(doc: ProgramDocument):
    fed_name = next(n for n, t in doc.inputs.items() if t.kind == "fed")
    shared = {n: t.to_type() for n, t in doc.inputs.items() if t.kind == "sh"}
    return fed_name, doc.inputs[fed_name].to_type(), shared


def build_program(doc: ProgramDocument) -> BuiltProgram:
    try:
        if doc.kind == "expr":
            ctx = {name: t.to_type() for name, t in doc.inputs.items()}
            return ExprProgram(ctx, node_to_expr(doc.body))
        fed_name, fed_type, shared = _split_inputs(doc)
        if doc.kind == "one-round":
            return OneRoundProgram(fed_name, fed_type, tuple(_component(c) for c in doc.components),
                                   node_to_expr(doc.decoder),
                                   tuple(doc.state_names) if doc.state_names else None, shared)
        rounds = []
        for spec in doc.rounds:
            r = Round(tuple(_component(c) for c in spec.components), node_to_expr(spec.decoder),
                      tuple(spec.state_names) if spec.state_names else None)
            rounds.extend([r] * spec.repeat)
        return IterativeProgram(fed_name, fed_type, doc.theta, doc.theta0.to_value(), tuple(rounds), shared)
    except ShapeError as exc:
        raise DocumentError("schema", str(exc)) from None


def check_program(program: BuiltProgram, registry=None) -> TensorType:
    """Type of the program output; raises TypeCheckError or ValidationError"""
    if isinstance(program, ExprProgram):
        return TypeChecker(registry).typecheck(program.context, program.body)
    if isinstance(program, OneRoundProgram):
        return decoder_type(program, registry)
    violations = validate_iterative(program, registry)
    if violations:
        raise ValidationError(violations)
    shape = program.theta0.shape
    for t in range(program.num_rounds):
        shape = decoder_type(program.round_program(t, shape), registry).shape
    return Sh(shape)


def _round_spec(components, decoder, state_names) -> RoundSpec:
    return RoundSpec(components=[_component_spec(c) for c in components],
                     decoder=expr_to_node(decoder), state_names=list(state_names))


def _component_spec(c) -> ComponentSpec:
    if isinstance(c, AggForm):
        return ComponentSpec(form="agg", aggregation=c.schema, expr=expr_to_node(c.expr))
    return ComponentSpec(form="mat", left=expr_to_node(c.left), right=expr_to_node(c.right))


def program_to_document(program: BuiltProgram) -> ProgramDocument:
    """Inverse of build_program; consecutive identical rounds collapse into one repeated entry"""
    if isinstance(program, ExprProgram):
        return ProgramDocument(kind="expr", body=expr_to_node(program.body),
                               inputs={n: TypeSpec.from_type(t) for n, t in program.context.items()})
    inputs = {program.input_name: TypeSpec.from_type(program.input_type)}
    inputs.update({n: TypeSpec.from_type(t) for n, t in program.shared_inputs.items()})
    if isinstance(program, OneRoundProgram):
        spec = _round_spec(program.components, program.decoder, program.state_names)
        return ProgramDocument(kind="one-round", inputs=inputs, components=spec.components,
                               decoder=spec.decoder, state_names=spec.state_names)
    rounds: List[RoundSpec] = []
    previous = None
    for r in program.rounds:
        if r is previous:
            rounds[-1].repeat += 1
            continue
        rounds.append(_round_spec(r.components, r.decoder, r.state_names))
        previous = r
    return ProgramDocument(kind="iterative", inputs=inputs, theta=program.theta_name,
                           theta0=TensorSpec.from_value(program.theta0), rounds=rounds)


# ============================================
# Data
# ============================================

def to_environment(doc: DataDocument) -> Environment:
    federation = Federation(tuple(c.id for c in doc.clients))
    bindings = {}
    try:
        for name in doc.clients[0].tensors:
            axis = doc.record_axes.get(name, 1)
            arrays = [c.tensors[name].to_value().array for c in doc.clients]
            bindings[name] = FederatedValue.from_arrays(federation, axis, arrays)
        for name, spec in doc.shared.items():
            if name in bindings:
                raise DocumentError("schema", f"'{name}' is both federated and shared")
            bindings[name] = spec.to_value()
    except ShapeError as exc:
        raise DocumentError("schema", str(exc)) from None
    return Environment(bindings)


def environment_to_document(env: Environment) -> DataDocument:
    federated = {n: v for n, v in env.bindings.items() if isinstance(v, FederatedValue)}
    shared = {n: TensorSpec.from_value(v) for n, v in env.bindings.items() if isinstance(v, TensorValue)}
    clients = []
    if env.federation is not None:
        for client in env.federation:
            clients.append(ClientData(id=client, tensors={
                n: TensorSpec.from_value(v.local(client)) for n, v in federated.items()}))
    return DataDocument(clients=clients, shared=shared,
                        record_axes={n: v.record_axis for n, v in federated.items()})


def value_to_json(value) -> dict:
    """Result payload for tensors and federated values"""
    if isinstance(value, FederatedValue):
        return {
            "kind": "federated",
            "record_axis": value.record_axis,
            "clients": {c: TensorSpec.from_value(v).model_dump() for c, v in value.items()},
        }
    return {"kind": "shared", **TensorSpec.from_value(value).model_dump()}

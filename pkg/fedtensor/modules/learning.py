"""
Learning Module
Losses with per-record gradient (and curvature) expressions, gradient
programs, server-side optimizer decoders and the packed-record regression
models.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from fedtensor.extensions.arrangements import identity_literal
from fedtensor.extensions.linalg import solve as lu_solve
from fedtensor.modules.evaluator import Environment, Evaluator
from fedtensor.modules.factorizer import (
    AggForm,
    IterativeProgram,
    OneRoundProgram,
    Round,
    RoundTrace,
    extract_plan,
    run_iterative,
    run_plan,
)
from fedtensor.modules.lang_ast import (
    Expr,
    Fed,
    Sh,
    Var,
    add,
    div,
    ext,
    lit,
    mul,
    power,
    sigmoid,
    square,
    sub,
    substitute,
    sum_,
    unary,
)
from fedtensor.modules.tensor_core import FederatedValue, Shape, TensorValue, virtual_global

logger = logging.getLogger(__name__)

OPTIMIZERS = ("gd", "momentum", "adam", "damped-newton")

Schedule = Union[float, Sequence[float], Callable[[int], float]]


@dataclass(eq=False)
class RepresentableLoss:
    """Per-record loss with a per-record parameter gradient and optional curvature block

    loss : Fed_1(()), gradient : Fed_1(theta_shape), curvature : Fed_1((p,p)).
    """
    name: str
    input_type: Fed
    theta_shape: Shape
    loss: Expr
    gradient: Optional[Expr] = None
    curvature: Optional[Expr] = None
    input_name: str = "x"
    theta_name: str = "theta"
    params: Dict[str, float] = field(default_factory=dict)

    def context(self):
        return {self.input_name: self.input_type, self.theta_name: Sh(self.theta_shape)}

    def environment(self, X: FederatedValue, theta: TensorValue) -> Environment:
        return Environment({self.input_name: X, self.theta_name: theta})


@dataclass
class OptimizerSpec:
    """Server-side update rule; eta and damping accept a constant, a list or a callable of t"""
    kind: str = "gd"
    eta: Schedule = 0.1
    beta: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    damping: Schedule = 0.0

    def __post_init__(self):
        if self.kind == "newton":
            self.kind = "damped-newton"
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"Unknown optimizer '{self.kind}'; expected one of {OPTIMIZERS}")

    @staticmethod
    def _at(schedule: Schedule, t: int) -> float:
        if callable(schedule):
            return float(schedule(t))
        if isinstance(schedule, (list, tuple, np.ndarray)):
            return float(schedule[t])
        return float(schedule)

    def eta_at(self, t: int) -> float:
        return self._at(self.eta, t)

    def damping_at(self, t: int) -> float:
        return self._at(self.damping, t)

    @property
    def state_rows(self) -> int:
        return {"gd": 1, "momentum": 2, "adam": 3, "damped-newton": 1}[self.kind]


# ============================================
# Example losses
# ============================================

def _linear_predictor(x: Var, theta: Var):
    features = ext("project-features", x)
    response = ext("project-response", x)
    return features, response, sum_(2, mul(features, theta))


def _softplus(z: Expr) -> Expr:
    """log(1 + exp(z)) as relu(z) + log(1 + exp(-|z|)), finite for every finite z"""
    tail = unary("log", add(unary("exp", unary("neg", unary("abs", z))), lit(1.0)))
    return add(unary("relu", z), tail)


def build_logistic(p: int, input_name: str = "x", theta_name: str = "theta") -> RepresentableLoss:
    """log(1 + exp(z)) - y z with z = x_feat . theta; gradient (rho(z) - y) x_feat"""
    if p < 1:
        raise ValueError(f"Feature dimension must be >= 1, got {p}")
    x, theta = Var(input_name), Var(theta_name)
    features, response, z = _linear_predictor(x, theta)
    loss = sub(_softplus(z), mul(response, z))
    gradient = ext("per-record-scale", sub(sigmoid(z), response), features)
    return RepresentableLoss("logistic", Fed(1, (p + 1,)), (p,), loss, gradient,
                             input_name=input_name, theta_name=theta_name)


def build_gaussian_linear(p: int, sigma2: float = 1.0, input_name: str = "x",
                          theta_name: str = "theta") -> RepresentableLoss:
    """(y - z)^2 / (2 sigma^2); gradient (z - y) x_feat / sigma^2; curvature x x^T / sigma^2"""
    if p < 1:
        raise ValueError(f"Feature dimension must be >= 1, got {p}")
    if not sigma2 > 0:
        raise ValueError(f"sigma^2 must be positive, got {sigma2}")
    x, theta = Var(input_name), Var(theta_name)
    features, response, z = _linear_predictor(x, theta)
    loss = div(square(sub(response, z)), lit(2.0 * sigma2))
    gradient = ext("per-record-scale", div(sub(z, response), lit(sigma2)), features)
    curvature = div(ext("per-record-outer", features), lit(sigma2))
    return RepresentableLoss("gaussian", Fed(1, (p + 1,)), (p,), loss, gradient, curvature,
                             input_name=input_name, theta_name=theta_name, params={"sigma2": sigma2})


# ============================================
# Gradient programs
# ============================================

def gradient_component(loss: RepresentableLoss) -> AggForm:
    """Sum over the record axis of the per-record gradient, merged by addition"""
    if loss.gradient is None:
        raise ValueError(f"Loss '{loss.name}' has no gradient expression")
    return AggForm(loss.gradient, "sum")


def gradient_program(loss: RepresentableLoss) -> OneRoundProgram:
    return OneRoundProgram(loss.input_name, loss.input_type, (gradient_component(loss),), Var("y1"),
                           shared_inputs={loss.theta_name: Sh(loss.theta_shape)})


def loss_program(loss: RepresentableLoss) -> OneRoundProgram:
    return OneRoundProgram(loss.input_name, loss.input_type, (AggForm(loss.loss, "sum"),), Var("y1"),
                           shared_inputs={loss.theta_name: Sh(loss.theta_shape)})


def evaluate_loss(loss: RepresentableLoss, X: FederatedValue, theta: TensorValue, registry=None) -> TensorValue:
    """Total loss over the federation through its one-round plan"""
    plan = extract_plan(loss_program(loss), registry)
    return run_plan(plan, X, {loss.theta_name: theta})


def finite_diff_gradient(loss: RepresentableLoss, X: FederatedValue, theta: TensorValue,
                         h: float = 1e-6, registry=None) -> TensorValue:
    """Central differences of the centrally evaluated total loss"""
    if not h > 0:
        raise ValueError(f"Step h must be positive, got {h}")
    evaluator = Evaluator(registry)
    total = sum_(1, loss.loss)
    base = np.array(theta.array, dtype=np.float64)

    def total_loss(values: np.ndarray) -> float:
        env = loss.environment(X, TensorValue(values))
        return float(evaluator.eval_centralized(env, total).tensor.array)

    grad = np.zeros(base.size)
    for j in range(base.size):
        step = np.zeros(base.size)
        step[j] = h
        plus = total_loss((base.ravel() + step).reshape(base.shape))
        minus = total_loss((base.ravel() - step).reshape(base.shape))
        grad[j] = (plus - minus) / (2.0 * h)
    return TensorValue(grad.reshape(base.shape))


# ============================================
# Optimizer programs
# ============================================

def _row_selector(row: int, rows: int, theta_rank: int) -> np.ndarray:
    selector = np.zeros((rows,) + (1,) * theta_rank)
    selector[row] = 1.0
    return selector


def _row(state: Expr, row: int, rows: int, theta_rank: int) -> Expr:
    """Row `row` of a stacked state Sh((rows,) + tau)"""
    return sum_(1, mul(state, lit(_row_selector(row, rows, theta_rank))))


def _stack(parts: Sequence[Expr], theta_rank: int) -> Expr:
    rows = len(parts)
    stacked = mul(lit(_row_selector(0, rows, theta_rank)), parts[0])
    for row in range(1, rows):
        stacked = add(stacked, mul(lit(_row_selector(row, rows, theta_rank)), parts[row]))
    return stacked


def initial_state(opt: OptimizerSpec, theta0: TensorValue) -> TensorValue:
    if opt.state_rows == 1:
        return theta0
    zeros = np.zeros_like(theta0.array)
    return TensorValue(np.stack([theta0.array] + [zeros] * (opt.state_rows - 1)))


def parameter_of(opt: OptimizerSpec, state: TensorValue) -> TensorValue:
    """P_t: the model parameter inside the optimizer state"""
    if opt.state_rows == 1:
        return state
    return TensorValue(state.array[0])


def build_optimizer_program(loss: RepresentableLoss, opt: OptimizerSpec, rounds: int,
                            theta0: TensorValue) -> IterativeProgram:
    """Iterative program whose decoders apply the optimizer update to the merged gradient"""
    if rounds < 1:
        raise ValueError(f"Need at least one round, got {rounds}")
    if not isinstance(theta0, TensorValue):
        theta0 = TensorValue(theta0)
    if theta0.shape != tuple(loss.theta_shape):
        raise ValueError(f"theta0 has shape {theta0.shape}, loss expects {tuple(loss.theta_shape)}")
    gradient = gradient_component(loss).expr
    k = len(loss.theta_shape)
    rows = opt.state_rows

    if rows == 1:
        state_name = loss.theta_name
        theta = Var(state_name)
        encoder = gradient
    else:
        state_name = "state"
        theta = _row(Var(state_name), 0, rows, k)
        encoder = substitute(gradient, {loss.theta_name: theta})

    cache: Dict[tuple, Round] = {}

    def build_round(t: int) -> Round:
        eta = opt.eta_at(t)
        g = Var("y1")
        if opt.kind == "gd":
            key = (eta,)
            decoder = lambda: sub(theta, mul(lit(eta), g))
            components = (AggForm(encoder, "sum"),)
        elif opt.kind == "momentum":
            key = (eta,)

            def decoder():
                velocity = add(mul(lit(opt.beta), _row(Var(state_name), 1, rows, k)), g)
                return _stack([sub(theta, mul(lit(eta), velocity)), velocity], k)
            components = (AggForm(encoder, "sum"),)
        elif opt.kind == "adam":
            key = (eta, t)

            def decoder():
                m = add(mul(lit(opt.beta1), _row(Var(state_name), 1, rows, k)), mul(lit(1.0 - opt.beta1), g))
                w = add(mul(lit(opt.beta2), _row(Var(state_name), 2, rows, k)),
                        mul(lit(1.0 - opt.beta2), square(g)))
                m_hat = div(m, sub(lit(1.0), power(lit(opt.beta1), lit(float(t + 1)))))
                w_hat = div(w, sub(lit(1.0), power(lit(opt.beta2), lit(float(t + 1)))))
                step = div(m_hat, add(unary("sqrt", w_hat), lit(opt.eps_adam)))
                return _stack([sub(theta, mul(lit(eta), step)), m, w], k)
            components = (AggForm(encoder, "sum"),)
        else:
            if loss.curvature is None:
                raise ValueError(f"Loss '{loss.name}' has no curvature block for damped Newton")
            if k != 1:
                raise ValueError("Damped Newton needs a vector parameter")
            damping = opt.damping_at(t)
            key = (eta, damping)
            p = loss.theta_shape[0]

            def decoder():
                system = add(Var("y2"), identity_literal(p, damping))
                return sub(theta, mul(lit(eta), ext("solve", system, g)))
            components = (AggForm(encoder, "sum"), AggForm(loss.curvature, "sum"))

        if key not in cache:
            cache[key] = Round(components, decoder())
        return cache[key]

    program = IterativeProgram(loss.input_name, loss.input_type, state_name, initial_state(opt, theta0),
                               tuple(build_round(t) for t in range(rounds)))
    logger.debug(f"Built {opt.kind} program: {rounds} rounds, {len(cache)} distinct round(s)")
    return program


@dataclass
class TrainingResult:
    theta: TensorValue
    state: TensorValue
    records: List[dict]


def train(loss: RepresentableLoss, opt: OptimizerSpec, rounds: int, X: FederatedValue,
          theta0: TensorValue, registry=None, with_loss: bool = True) -> TrainingResult:
    """Run the optimizer program and record theta (and total loss) per round"""
    program = build_optimizer_program(loss, opt, rounds, theta0)
    records: List[dict] = []

    def record(entry: RoundTrace):
        theta = parameter_of(opt, entry.theta_next)
        row = {"round": entry.round + 1, "theta": theta.to_flat()}
        if with_loss:
            row["loss"] = float(evaluate_loss(loss, X, theta, registry).array)
        records.append(row)

    result = run_iterative(program, X, registry=registry, callback=record)
    return TrainingResult(parameter_of(opt, result.theta), result.theta, records)


# ============================================
# Reference solvers
# ============================================

def solve(A: TensorValue, b: TensorValue) -> TensorValue:
    """Dense solve by LU with partial pivoting"""
    return TensorValue(lu_solve(np.asarray(A.array), np.asarray(b.array)))


def _reference_gradient(loss: RepresentableLoss, data: np.ndarray, theta: np.ndarray) -> np.ndarray:
    features, response = data[:, :-1], data[:, -1]
    z = features @ theta
    if loss.name == "logistic":
        return features.T @ (np.exp(-np.logaddexp(0.0, -z)) - response)
    return features.T @ (z - response) / loss.params["sigma2"]


def centralized_reference_trajectory(loss: RepresentableLoss, opt: OptimizerSpec, data: np.ndarray,
                                     theta0: np.ndarray, rounds: int) -> List[np.ndarray]:
    """Plain numpy loop on the concatenated data; returns theta_0..theta_T"""
    if loss.name not in ("logistic", "gaussian"):
        raise ValueError(f"No reference loop for loss '{loss.name}'")
    data = np.asarray(data, dtype=np.float64)
    theta = np.array(theta0, dtype=np.float64)
    velocity = np.zeros_like(theta)
    m = np.zeros_like(theta)
    w = np.zeros_like(theta)
    trajectory = [theta.copy()]
    for t in range(rounds):
        g = _reference_gradient(loss, data, theta)
        eta = opt.eta_at(t)
        if opt.kind == "gd":
            theta = theta - eta * g
        elif opt.kind == "momentum":
            velocity = opt.beta * velocity + g
            theta = theta - eta * velocity
        elif opt.kind == "adam":
            m = opt.beta1 * m + (1.0 - opt.beta1) * g
            w = opt.beta2 * w + (1.0 - opt.beta2) * g ** 2
            m_hat = m / (1.0 - np.power(opt.beta1, float(t + 1)))
            w_hat = w / (1.0 - np.power(opt.beta2, float(t + 1)))
            theta = theta - eta * (m_hat / (np.sqrt(w_hat) + opt.eps_adam))
        else:
            if loss.name != "gaussian":
                raise ValueError("Reference Newton steps need the Gaussian curvature")
            features = data[:, :-1]
            C = features.T @ features / loss.params["sigma2"]
            theta = theta - eta * np.linalg.solve(C + opt.damping_at(t) * np.eye(len(theta)), g)
        trajectory.append(theta.copy())
    return trajectory


def federated_to_global(X: FederatedValue) -> np.ndarray:
    return np.array(virtual_global(X).array)

"""
Privacy Module
Gaussian and Laplace noise at the three integration points of a plan:
per-client messages (local), the merged state, or the decoded output.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import List, Mapping, Optional, Sequence

import numpy as np

from fedtensor.configs.config import Config
from fedtensor.modules.errors import EvaluationError, MechanismError
from fedtensor.modules.factorizer import IterativeProgram, SharedStatePlan, extract_plan
from fedtensor.modules.tensor_core import FederatedValue, TensorValue

logger = logging.getLogger(__name__)

MECHANISM_KINDS = ("gaussian-central", "laplace-central", "gaussian-local")
PLACEMENTS = ("per-client-message", "merged-state", "decoded-output")
ADDITIVE_MERGES = ("sum", "matrix-add")


def calibrate_gaussian_sigma(epsilon: float, delta: float, sensitivity: float) -> float:
    """sigma = sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon"""
    if not epsilon > 0:
        raise MechanismError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise MechanismError(f"delta must lie in (0, 1), got {delta}")
    if not sensitivity > 0:
        raise MechanismError(f"sensitivity must be positive, got {sensitivity}")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def calibrate_laplace_scale(epsilon: float, sensitivity: float) -> float:
    """b = sensitivity / epsilon"""
    if not epsilon > 0:
        raise MechanismError(f"epsilon must be positive, got {epsilon}")
    if not sensitivity > 0:
        raise MechanismError(f"sensitivity must be positive, got {sensitivity}")
    return sensitivity / epsilon


@dataclass
class MechanismSpec:
    """Noise mechanism; scale is calibrated from (epsilon, delta, sensitivity) when omitted"""
    kind: str
    placement: str
    scale: Optional[float] = None
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    sensitivity: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MECHANISM_KINDS:
            raise MechanismError(f"Unknown mechanism kind '{self.kind}'")
        if self.placement not in PLACEMENTS:
            raise MechanismError(f"Unknown placement '{self.placement}'")
        local = self.kind.endswith("-local")
        if local != (self.placement == "per-client-message"):
            raise MechanismError(
                f"Placement '{self.placement}' is not allowed for mechanism '{self.kind}'")
        if self.scale is None:
            if self.epsilon is None or self.sensitivity is None:
                raise MechanismError("Give either a noise scale or epsilon and sensitivity")
            if self.kind.startswith("laplace"):
                self.scale = calibrate_laplace_scale(self.epsilon, self.sensitivity)
            else:
                if self.delta is None:
                    raise MechanismError("Gaussian calibration needs delta")
                self.scale = calibrate_gaussian_sigma(self.epsilon, self.delta, self.sensitivity)
        self.scale = float(self.scale)
        if not self.scale >= 0:
            raise MechanismError(f"Noise scale must be >= 0, got {self.scale}")

    @property
    def local(self) -> bool:
        return self.placement == "per-client-message"

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "placement": self.placement,
            "scale": self.scale,
            "seed": self.seed,
            "rng": Config.RNG_ALGORITHM,
        }


def central_generator(spec: MechanismSpec) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))


def client_generators(spec: MechanismSpec, n_clients: int) -> List[np.random.Generator]:
    """Independent per-client substreams of the master seed"""
    children = np.random.SeedSequence(spec.seed).spawn(n_clients)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def noise_state(state: Sequence[np.ndarray], spec: MechanismSpec,
                rng: np.random.Generator) -> List[np.ndarray]:
    """Add i.i.d. noise to every coordinate of every component, in component order"""
    if spec.scale == 0.0:
        return [np.asarray(s) for s in state]
    noisy = []
    for component in state:
        component = np.asarray(component, dtype=np.float64)
        if spec.kind.startswith("laplace"):
            noise = rng.laplace(0.0, spec.scale, size=component.shape)
        else:
            noise = rng.normal(0.0, spec.scale, size=component.shape)
        noisy.append(component + noise)
    return noisy


class MergeTransport(ABC):
    """Server-side merge of collected client messages; secure aggregation plugs in here"""

    @abstractmethod
    def merge(self, plan: SharedStatePlan, messages: Sequence[Sequence[np.ndarray]]) -> List[np.ndarray]:
        pass


class LoopbackMerge(MergeTransport):
    """Plain in-process fold in federation order"""

    def merge(self, plan, messages):
        return plan.merge_accumulators(messages)


class RandomizedPlan:
    """A plan with a noise mechanism attached at one integration point"""

    def __init__(self, plan: SharedStatePlan, spec: MechanismSpec,
                 merge_transport: Optional[MergeTransport] = None):
        self.plan = plan
        self.spec = spec
        self.merge_transport = merge_transport or LoopbackMerge()

    def noisy_state(self, X: FederatedValue,
                    shared: Optional[Mapping[str, TensorValue]] = None) -> List[np.ndarray]:
        """Merged state after any local or merged-state noise; decoded-output noise is not applied"""
        messages = self.plan.client_messages(X, shared)
        if self.spec.local:
            generators = client_generators(self.spec, len(messages))
            messages = [noise_state(m, self.spec, rng) for m, rng in zip(messages, generators)]
        state = self.merge_transport.merge(self.plan, messages)
        if self.spec.placement == "merged-state":
            state = noise_state(state, self.spec, central_generator(self.spec))
        return state

    def run(self, X: FederatedValue, shared: Optional[Mapping[str, TensorValue]] = None) -> TensorValue:
        output = self.plan.extract_output(self.noisy_state(X, shared), shared)
        if self.spec.placement == "decoded-output":
            output = TensorValue(noise_state([output.array], self.spec, central_generator(self.spec))[0])
        return output


def apply_mechanism(plan: SharedStatePlan, spec: MechanismSpec,
                    merge_transport: Optional[MergeTransport] = None) -> RandomizedPlan:
    """Wrap a plan; local noise requires every merge to be additive"""
    if spec.local:
        unsupported = [c.name for c in plan.components if c.merge.name not in ADDITIVE_MERGES]
        if unsupported:
            raise MechanismError(
                f"unsupported-merge: local noise needs additive merges, components {unsupported} are not")
    logger.info(f"Attached {spec.kind} noise at {spec.placement} (scale={spec.scale:g})")
    return RandomizedPlan(plan, spec, merge_transport)


def sensitivity_probe(plan: SharedStatePlan, X: FederatedValue, X_adjacent: FederatedValue,
                      shared: Optional[Mapping[str, TensorValue]] = None) -> float:
    """l2 distance between the merged states of two inputs; one pair only, not a sensitivity bound"""
    if X.federation != X_adjacent.federation:
        raise EvaluationError("Adjacent inputs must use the same federation")
    left = plan.merged_state(X, shared)
    right = plan.merged_state(X_adjacent, shared)
    total = 0.0
    for a, b in zip(left, right):
        diff = np.asarray(a) - np.asarray(b)
        total += float(np.sum(diff * diff))
    return math.sqrt(total)


def round_spec(spec: MechanismSpec, round_index: int) -> MechanismSpec:
    """Same mechanism with an independent noise stream for one round"""
    seed = int(np.random.SeedSequence([spec.seed, round_index]).generate_state(1)[0])
    return replace(spec, seed=seed)


def run_iterative_private(program: IterativeProgram, X: FederatedValue, spec: MechanismSpec,
                          shared: Optional[Mapping[str, TensorValue]] = None, registry=None,
                          merge_transport: Optional[MergeTransport] = None) -> List[TensorValue]:
    """Every round through its randomized plan; returns theta_0..theta_T"""
    theta = program.theta0
    trajectory = [theta]
    plans = {}
    for t, r in enumerate(program.rounds):
        key = (id(r), theta.shape)
        if key not in plans:
            plans[key] = extract_plan(program.round_program(t, theta.shape), registry)
        randomized = apply_mechanism(plans[key], round_spec(spec, t), merge_transport)
        bindings = dict(shared or {})
        bindings[program.theta_name] = theta
        theta = randomized.run(X, bindings)
        trajectory.append(theta)
    return trajectory

"""
Self-check Module
Randomized property suites over the language: dual-semantics consistency,
client locality, exposure discipline, plan factorization, monoid laws,
message encoding and extension audits.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from fedtensor.configs.config import Config
from fedtensor.extensions import get_registry
from fedtensor.extensions.audit import audit
from fedtensor.modules.errors import FedTensorError, TypeCheckError
from fedtensor.modules.evaluator import Evaluator, compare_arrays
from fedtensor.modules.factorizer import (
    assemble_expression,
    extract_plan,
    merge_monoids,
    run_plan,
    validate_one_round,
)
from fedtensor.modules.fed_sim import deserialize_state, serialize_state
from fedtensor.modules.random_programs import (
    PRIMITIVE_FAMILIES,
    RandomProgramGenerator,
    exposure_violations,
)

logger = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    name: str
    trials: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "passed": self.passed,
            # first few only; the count is what matters
            "failures": self.failures[:5],
            "failure_count": len(self.failures),
        }


class SelfCheck:
    """Runs every property suite with a fixed trial count and seed"""

    def __init__(self, trials: Optional[int] = None, seed: int = 0, registry=None):
        self.trials = trials or Config.SELFCHECK_TRIALS
        self.seed = seed
        self.registry = registry or get_registry()
        self.evaluator = Evaluator(self.registry)

    def _generator(self, offset: int) -> RandomProgramGenerator:
        return RandomProgramGenerator(np.random.default_rng([self.seed, offset]))

    def _run_trials(self, name: str, offset: int, trial: Callable[[RandomProgramGenerator], Optional[str]]):
        result = SuiteResult(name)
        gen = self._generator(offset)
        for i in range(self.trials):
            result.trials += 1
            try:
                failure = trial(gen)
            except FedTensorError as exc:
                failure = f"{type(exc).__name__}: {exc}"
            if failure:
                result.failures.append(f"trial {i}: {failure}")
        return result

    # ------------------------------------------------------------------
    # Suites
    # ------------------------------------------------------------------

    def check_consistency(self) -> SuiteResult:
        """Distributed and centralized results agree for every primitive family"""
        result = SuiteResult("consistency")
        names = list(PRIMITIVE_FAMILIES) + list(self.registry.names())
        for offset, family in enumerate(names):
            def trial(gen, family=family):
                if family in PRIMITIVE_FAMILIES:
                    env, e = gen.application(family)
                else:
                    env, e = gen.extension_application(family)
                report = self.evaluator.check_consistency(env, e)
                return None if report.passed else f"{family}: {e} rel={report.max_rel:.3e}"
            suite = self._run_trials(family, 100 + offset, trial)
            result.trials += suite.trials
            result.failures.extend(suite.failures)
        return result

    def check_client_locality(self) -> SuiteResult:
        """Perturbing one client leaves every other client's output bit-identical"""
        def trial(gen):
            t = gen.fed_type()
            ctx = {"x": t}
            e, _ = gen.client_local_expression(ctx, "x")
            env = gen.environment(ctx)
            x = env["x"]
            if len(x.federation) < 2:
                return None
            before = self.evaluator.eval_distributed(env, e)
            target = x.federation.clients[-1]
            local = x.local(target).array
            perturbed = env.extend(x=x.replace_local(target, local + gen.rng.normal(size=local.shape)))
            after = self.evaluator.eval_distributed(perturbed, e)
            for client in x.federation.clients[:-1]:
                if not before.local(client).bit_equal(after.local(client)):
                    return f"{e}: output at {client} changed"
            return None
        return self._run_trials("client-locality", 1, trial)

    def check_exposure(self) -> SuiteResult:
        """Shared values arise from federated ones only at the two exposure points"""
        def trial(gen):
            ctx = {"x": gen.fed_type()}
            e, _ = gen.expression(ctx)
            types = self.evaluator.checker.annotate(ctx, e)
            bad = exposure_violations(types, e)
            if bad:
                return f"{e}: exposure at {bad[0]}"
            bad_ctx, forbidden, expected = gen.forbidden_program()
            try:
                self.evaluator.checker.typecheck(bad_ctx, forbidden)
            except TypeCheckError as exc:
                if exc.kind != expected:
                    return f"{forbidden}: expected {expected}, got {exc.kind}"
                return None
            return f"{forbidden}: accepted, expected {expected}"
        return self._run_trials("exposure", 2, trial)

    def check_factorization(self) -> SuiteResult:
        """Plan execution equals direct and centralized evaluation of the program"""
        def trial(gen):
            program = gen.one_round_program()
            violations = validate_one_round(program, self.registry)
            if violations:
                return f"invalid random program: {violations[0]}"
            plan = extract_plan(program, self.registry)
            env = gen.environment(program.input_context())
            expr = assemble_expression(program, self.registry)
            planned = run_plan(plan, env[program.input_name]).array
            direct = self.evaluator.eval_distributed(env, expr).array
            central = self.evaluator.eval_centralized(env, expr).tensor.array
            for label, other in (("direct", direct), ("centralized", central)):
                report = compare_arrays(planned, other, Config.PLAN_TOL)
                if not report.passed:
                    return f"plan vs {label}: rel={report.max_rel:.3e}"
            return None
        return self._run_trials("factorization", 3, trial)

    def check_monoid_laws(self) -> SuiteResult:
        def trial(gen):
            shape = gen.shape(int(gen.rng.integers(0, 3)))
            a, b, c = (gen.rng.normal(size=shape) for _ in range(3))
            for monoid in merge_monoids().values():
                tol = 0.0 if monoid.name in ("min", "max") else 1e-12
                left = monoid.combine(monoid.combine(a, b), c)
                right = monoid.combine(a, monoid.combine(b, c))
                if not np.allclose(left, right, rtol=tol, atol=tol):
                    return f"{monoid.name}: not associative"
                if not np.array_equal(monoid.combine(a, b), monoid.combine(b, a)):
                    return f"{monoid.name}: not commutative"
                if not np.array_equal(monoid.combine(monoid.identity_element(shape), a), a):
                    return f"{monoid.name}: identity fails"
            return None
        return self._run_trials("monoid-laws", 4, trial)

    def check_serialization(self) -> SuiteResult:
        def trial(gen):
            q = int(gen.rng.integers(1, 4))
            state = []
            for _ in range(q):
                array = gen.rng.normal(size=gen.shape(int(gen.rng.integers(0, 4))))
                if array.size and gen.rng.random() < 0.3:
                    array.flat[0] = gen.choice([np.inf, -np.inf])
                state.append(array)
            decoded = deserialize_state(serialize_state(state))
            for original, back in zip(state, decoded):
                if original.shape != back.shape or original.tobytes() != back.tobytes():
                    return f"round-trip changed component of shape {original.shape}"
            return None
        return self._run_trials("serialization", 5, trial)

    def check_extensions(self) -> SuiteResult:
        result = SuiteResult("extensions")
        for name in self.registry.names():
            report = audit(name, trials=self.trials, registry=self.registry, seed=self.seed)
            result.trials += report.trials
            result.failures.extend(f"{name}: {f}" for f in report.failures)
        return result

    # ------------------------------------------------------------------

    def run(self) -> Dict[str, SuiteResult]:
        suites = [
            self.check_consistency,
            self.check_client_locality,
            self.check_exposure,
            self.check_factorization,
            self.check_monoid_laws,
            self.check_serialization,
            self.check_extensions,
        ]
        results = {}
        for suite in suites:
            outcome = suite()
            results[outcome.name] = outcome
            level = logging.INFO if outcome.passed else logging.WARNING
            logger.log(level, f"{outcome.name}: {outcome.trials} trial(s), {len(outcome.failures)} failure(s)")
        return results


def run_selfcheck(trials: Optional[int] = None, seed: int = 0, registry=None) -> dict:
    """JSON-ready report of every suite"""
    results = SelfCheck(trials, seed, registry).run()
    return {
        "seed": seed,
        "trials": trials or Config.SELFCHECK_TRIALS,
        "passed": all(r.passed for r in results.values()),
        "suites": {name: r.to_dict() for name, r in results.items()},
    }

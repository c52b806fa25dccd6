"""
Randomized audit of registered extensions: client locality, independence from
client identity, virtual-global consistency and shared-only argument checks.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from fedtensor.configs.config import Config
from fedtensor.extensions import ExtensionRegistry, get_registry
from fedtensor.extensions.base_extension import CLIENT_LOCAL
from fedtensor.modules.errors import TypeCheckError
from fedtensor.modules.lang_ast import Apply, Ext, Fed, Sh, Var
from fedtensor.modules.tensor_core import insert_record_axis
from fedtensor.modules.typechecker import TypeChecker

logger = logging.getLogger(__name__)

AUDIT_TOL = 1e-10


@dataclass
class AuditReport:
    name: str
    kind: str
    trials: int
    checks: Dict[str, int] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def count(self, check: str) -> None:
        self.checks[check] = self.checks.get(check, 0) + 1

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "trials": self.trials,
            "checks": dict(self.checks),
            "failures": list(self.failures),
            "passed": self.passed,
        }


def _relative_deviation(actual: np.ndarray, expected: np.ndarray) -> float:
    if actual.shape != expected.shape:
        return float("inf")
    if actual.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(expected))))
    return float(np.max(np.abs(actual - expected))) / scale


def _sample_client_arguments(primitive, probe, rng, counts):
    """Per-client argument lists; shared arguments are identical across clients"""
    per_client = []
    shared: Dict[int, np.ndarray] = {}
    for n_c in counts:
        shapes = [insert_record_axis(t.nonrecord_shape, t.record_axis, n_c) if isinstance(t, Fed)
                  else t.shape for t in probe]
        arrays = primitive.sample_arguments(rng, shapes)
        for i, t in enumerate(probe):
            if isinstance(t, Sh):
                arrays[i] = shared.setdefault(i, arrays[i])
        per_client.append([np.asarray(a, dtype=np.float64) for a in arrays])
    return per_client


def _audit_client_local(primitive, report: AuditReport, rng, trials: int) -> None:
    probes = primitive.probe_types()
    for trial in range(trials):
        probe = probes[trial % len(probes)]
        n_clients = int(rng.integers(1, 5))
        clients = [f"c{i + 1}" for i in range(n_clients)]
        counts = [int(n) for n in rng.integers(0, 6, size=n_clients)]
        try:
            result_type = primitive.infer_type(tuple(probe))
            per_client = _sample_client_arguments(primitive, probe, rng, counts)
            outputs = [np.asarray(primitive.apply_local(c, args, probe), dtype=np.float64)
                       for c, args in zip(clients, per_client)]

            for c, n_c, out in zip(clients, counts, outputs):
                expected = insert_record_axis(result_type.nonrecord_shape, result_type.record_axis, n_c)
                if out.shape != expected:
                    report.failures.append(
                        f"trial {trial}: client {c} output shape {out.shape} != {expected}")
            report.count("shape")

            # Another client's data must not influence this client's output
            if n_clients >= 2:
                fresh = _sample_client_arguments(primitive, probe, rng, [counts[-1]])[0]
                for i, t in enumerate(probe):
                    if isinstance(t, Sh):
                        fresh[i] = per_client[-1][i]
                perturbed = per_client[:-1] + [fresh]
                for c, args, before in zip(clients[:-1], perturbed[:-1], outputs[:-1]):
                    after = np.asarray(primitive.apply_local(c, args, probe), dtype=np.float64)
                    if after.tobytes() != before.tobytes():
                        report.failures.append(
                            f"trial {trial}: client {c} output changed when client {clients[-1]} changed")
                report.count("locality")

            relabeled = np.asarray(primitive.apply_local(f"relabeled-{clients[0]}", per_client[0], probe),
                                   dtype=np.float64)
            if relabeled.tobytes() != outputs[0].tobytes():
                report.failures.append(f"trial {trial}: output depends on the client identifier")
            report.count("identity")

            vglob_args = []
            for i, t in enumerate(probe):
                if isinstance(t, Fed):
                    vglob_args.append(np.concatenate([args[i] for args in per_client], axis=t.record_axis - 1))
                else:
                    vglob_args.append(per_client[0][i])
            central = np.asarray(primitive.ordinary(vglob_args, probe), dtype=np.float64)
            distributed = np.concatenate(outputs, axis=result_type.record_axis - 1)
            deviation = _relative_deviation(distributed, central)
            if not deviation <= AUDIT_TOL:
                report.failures.append(
                    f"trial {trial}: virtual-global deviation {deviation:.3e} exceeds {AUDIT_TOL:g}")
            report.count("consistency")
        except Exception as exc:
            report.failures.append(f"trial {trial}: {type(exc).__name__}: {exc}")


def _audit_shared_only(primitive, report: AuditReport, rng, trials: int, registry) -> None:
    probes = primitive.probe_types()
    for trial in range(trials):
        probe = probes[trial % len(probes)]
        try:
            result_type = primitive.infer_type(tuple(probe))
            args = [np.asarray(a, dtype=np.float64)
                    for a in primitive.sample_arguments(rng, [t.shape for t in probe])]
            first = np.asarray(primitive.ordinary(args, probe), dtype=np.float64)
            second = np.asarray(primitive.ordinary(args, probe), dtype=np.float64)
            if first.shape != result_type.shape:
                report.failures.append(f"trial {trial}: output shape {first.shape} != {result_type.shape}")
            if first.tobytes() != second.tobytes():
                report.failures.append(f"trial {trial}: output is not deterministic")
            report.count("determinism")
        except Exception as exc:
            report.failures.append(f"trial {trial}: {type(exc).__name__}: {exc}")

    # Federated arguments must be rejected statically
    checker = TypeChecker(registry)
    for probe in probes:
        ctx = {f"a{i}": t for i, t in enumerate(probe)}
        ctx["a0"] = Fed(1, probe[0].shape)
        node = Apply(Ext(primitive.name), tuple(Var(f"a{i}") for i in range(len(probe))))
        try:
            checker.typecheck(ctx, node)
            report.failures.append(f"federated argument accepted for probe {probe}")
        except TypeCheckError as exc:
            if exc.kind != "extension-misuse":
                report.failures.append(f"federated argument rejected with unexpected kind {exc.kind}")
        report.count("federated-rejection")


def audit(handle: str, trials: int = 50, registry: Optional[ExtensionRegistry] = None,
          seed: Optional[int] = None) -> AuditReport:
    """Run the randomized checks for a registered extension; failures are listed, not raised"""
    registry = registry or get_registry()
    primitive = registry.get(handle)
    seed = Config.resolve_seed(seed)
    rng = np.random.Generator(np.random.Philox(seed if seed is not None else 0))
    report = AuditReport(name=primitive.name, kind=primitive.kind, trials=trials)
    if primitive.kind == CLIENT_LOCAL:
        _audit_client_local(primitive, report, rng, trials)
    else:
        _audit_shared_only(primitive, report, rng, trials, registry)
    if report.passed:
        logger.info(f"Audit of '{handle}' passed ({trials} trials)")
    else:
        logger.warning(f"Audit of '{handle}' found {len(report.failures)} failure(s)")
    return report

"""
Extension tests: registry kind checks, the randomized audit and the shared
linear algebra primitives
"""
import numpy as np
import pytest

from fedtensor.extensions import ExtensionRegistry, get_registry, list_available_extensions
from fedtensor.extensions.arrangements import gram, identity_literal
from fedtensor.extensions.audit import audit
from fedtensor.extensions.base_extension import CLIENT_LOCAL, SHARED_ONLY, ExtPrimitive, require_fed
from fedtensor.extensions.linalg import SolvePrimitive, lu_factor, solve
from fedtensor.extensions.per_record import ProjectFeaturesPrimitive
from fedtensor.modules.errors import ExtensionError, ShapeError, SingularSystemError
from fedtensor.modules.evaluator import Environment, Evaluator
from fedtensor.modules.lang_ast import Fed, Sh, Var, ext
from fedtensor.modules.tensor_core import FederatedValue, Federation, TensorValue


class LeakPrimitive(ExtPrimitive):
    """Claims to be client-local but turns federated input into a shared value"""

    name = "leak"
    kind = CLIENT_LOCAL
    arity = 1

    def infer_type(self, arg_types):
        return Sh(arg_types[0].nonrecord_shape)

    def ordinary(self, arrays, arg_types):
        return arrays[0].sum(axis=0)

    def probe_types(self):
        return [(Fed(1, (2,)),)]


class SharedWithFederatedProbe(ExtPrimitive):
    name = "bad-shared"
    kind = SHARED_ONLY
    arity = 1

    def infer_type(self, arg_types):
        return arg_types[0]

    def ordinary(self, arrays, arg_types):
        return arrays[0]

    def probe_types(self):
        return [(Fed(1, ()),)]


class ClientTaggedPrimitive(ExtPrimitive):
    """Adds a client-specific offset: a negative control for the audit"""

    name = "client-tagged"
    kind = CLIENT_LOCAL
    arity = 1

    def infer_type(self, arg_types):
        return require_fed(arg_types[0], 1, 1, "client-tagged argument")

    def ordinary(self, arrays, arg_types):
        return arrays[0]

    def apply_local(self, client, arrays, arg_types):
        return arrays[0] + len(client)

    def probe_types(self):
        return [(Fed(1, ()),)]


# ============================================
# Registry
# ============================================

def test_builtin_extensions_are_registered():
    names = list_available_extensions()
    for name in ("project-features", "project-response", "per-record-scale",
                 "per-record-outer", "record-ones", "solve", "shared-matmul"):
        assert name in names
    assert "solve" in get_registry()


def test_register_well_formed_primitives():
    registry = ExtensionRegistry()
    assert registry.register(ProjectFeaturesPrimitive()) == "project-features"
    assert registry.register(SolvePrimitive()) == "solve"
    assert registry.names() == ["project-features", "solve"]


def test_leaking_primitive_is_rejected():
    with pytest.raises(ExtensionError):
        ExtensionRegistry().register(LeakPrimitive())


def test_shared_only_primitive_with_federated_probe_is_rejected():
    with pytest.raises(ExtensionError):
        ExtensionRegistry().register(SharedWithFederatedProbe())


def test_duplicate_registration_is_rejected():
    registry = ExtensionRegistry([SolvePrimitive()])
    with pytest.raises(ExtensionError):
        registry.register(SolvePrimitive())
    with pytest.raises(ExtensionError):
        registry.get("missing")


# ============================================
# Audit
# ============================================

@pytest.mark.parametrize("name", ["project-features", "project-response", "per-record-scale",
                                  "per-record-outer", "record-ones", "solve", "shared-matmul"])
def test_builtin_extensions_pass_audit(name):
    report = audit(name, trials=30, seed=5)
    assert report.passed, report.failures
    assert report.to_dict()["passed"]


def test_client_dependent_primitive_fails_audit():
    registry = ExtensionRegistry([ClientTaggedPrimitive()])
    report = audit("client-tagged", trials=20, registry=registry, seed=1)
    assert not report.passed
    assert any("client identifier" in f for f in report.failures)


def test_audit_is_deterministic_for_a_seed():
    first = audit("per-record-outer", trials=10, seed=3).to_dict()
    second = audit("per-record-outer", trials=10, seed=3).to_dict()
    assert first == second


# ============================================
# Linear algebra
# ============================================

def test_solve_diagonal_system():
    np.testing.assert_allclose(solve(np.array([[2.0, 0.0], [0.0, 4.0]]), np.array([2.0, 8.0])), [1.0, 2.0])


def test_solve_needs_pivoting():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(solve(a, np.array([3.0, 5.0])), [5.0, 3.0])


def test_solve_matches_numpy_on_random_systems():
    rng = np.random.default_rng(4)
    for n in (1, 3, 6):
        a = rng.normal(size=(n, n)) + n * np.eye(n)
        b = rng.normal(size=(n, 2))
        np.testing.assert_allclose(solve(a, b), np.linalg.solve(a, b), rtol=1e-10, atol=1e-12)


def test_singular_system_is_reported():
    with pytest.raises(SingularSystemError):
        lu_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularSystemError):
        lu_factor(np.array([[np.nan, 0.0], [0.0, 1.0]]))


@pytest.mark.parametrize("a, b", [
    (np.float64(3.0), np.ones(1)),
    (np.ones(3), np.ones(3)),
    (np.ones((2, 3)), np.ones(2)),
    (np.eye(2), np.ones(3)),
    (np.eye(2), np.ones((2, 2, 2))),
])
def test_solve_rejects_malformed_shapes(a, b):
    with pytest.raises(ShapeError):
        solve(a, b)


def test_solve_extension_in_expressions():
    env = Environment({"a": TensorValue([[2.0, 0.0], [0.0, 4.0]]), "b": TensorValue([2.0, 8.0])})
    out = Evaluator(max_workers=1).eval_distributed(env, ext("solve", Var("a"), Var("b")))
    np.testing.assert_allclose(out.array, [1.0, 2.0])


def test_gram_arrangement_and_damping_literal():
    x = FederatedValue.from_arrays(Federation(("c1", "c2")), 1,
                                   [np.array([[1.0, 2.0]]), np.array([[3.0, 4.0], [0.0, 1.0]])])
    env = Environment({"x": x})
    out = Evaluator(max_workers=1).eval_distributed(env, gram(Var("x")))
    stacked = np.array([[1.0, 2.0], [3.0, 4.0], [0.0, 1.0]])
    np.testing.assert_allclose(out.array, stacked.T @ stacked)
    np.testing.assert_array_equal(identity_literal(2, 0.5).symbol.value.array, 0.5 * np.eye(2))

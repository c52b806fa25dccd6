"""
Expression language tests: signature, symbols, traversal helpers and the
client-local / shared-only classifiers
"""
import numpy as np
import pytest

from fedtensor.modules.errors import TypeCheckError
from fedtensor.modules.lang_ast import (
    SIGNATURE,
    Agg,
    AggregationSchema,
    Binary,
    Fed,
    Perm,
    Sh,
    Unary,
    Var,
    add,
    agg,
    builtin_signature,
    depth,
    format_expr,
    free_variables,
    is_client_local,
    is_shared_only,
    lit,
    matmul_fed_fed,
    mul,
    node_at,
    perm,
    rename,
    substitute,
    sum_,
    walk,
)


def test_builtin_signature_contents():
    sig = builtin_signature()
    assert set(sig.unary) == {"neg", "abs", "exp", "log", "sqrt", "square", "relu", "sigmoid"}
    assert set(sig.binary) == {"add", "sub", "mul", "div", "pow"}
    assert set(sig.compare) == {"lt", "le", "eq", "ge", "gt"}
    assert sig.schemas["sum"].identity == 0.0
    assert sig.schemas["min"].identity == np.inf
    assert sig.schemas["max"].identity == -np.inf
    assert sig.describe()["aggregations"] == {"max": -np.inf, "min": np.inf, "sum": 0.0}


def test_arities():
    assert SIGNATURE.arity(Binary("add")) == 2
    assert SIGNATURE.arity(Agg("sum", 1)) == 1
    assert SIGNATURE.arity(Unary("sigmoid")) == 1


def test_sigmoid_is_stable_for_large_inputs():
    sigmoid = SIGNATURE.unary["sigmoid"]
    values = sigmoid(np.array([-800.0, 0.0, 800.0]))
    np.testing.assert_allclose(values, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(values))


def test_unknown_symbols_are_rejected():
    with pytest.raises(ValueError):
        Unary("cosh")
    with pytest.raises(ValueError):
        Agg("median", 1)
    with pytest.raises(ValueError):
        Agg("sum", 0)
    with pytest.raises(ValueError):
        Perm((1, 1))


def test_non_mergeable_schema_is_rejected():
    holistic = AggregationSchema("median", 0.0, lambda a, axis: np.median(a, axis=axis), np.add,
                                 mergeable=False)
    with pytest.raises(ValueError):
        SIGNATURE.register_schema(holistic)
    with pytest.raises(ValueError):
        SIGNATURE.register_schema(SIGNATURE.schemas["sum"])


def test_tensor_types_render():
    assert str(Sh((3,))) == "Sh((3,))"
    assert str(Fed(1, ())) == "Fed_1(())"
    assert Fed(2, (4,)).rank == 2


# ============================================
# Traversal
# ============================================

def test_free_variables_union():
    e = add(Var("x"), mul(Var("y"), lit(2.0)))
    assert free_variables(e) == {"x", "y"}
    assert free_variables(lit(1.0)) == frozenset()


def test_walk_and_node_at():
    e = add(Var("x"), sum_(1, Var("y")))
    paths = [p for p, _ in walk(e)]
    assert paths == [(), (0,), (1,), (1, 0)]
    assert node_at(e, (1, 0)).name == "y"
    with pytest.raises(KeyError):
        node_at(e, (0, 0))


def test_substitute_and_rename():
    e = add(Var("x"), Var("y"))
    assert format_expr(substitute(e, {"x": lit(3.0)})) == "add(3.0, y)"
    assert format_expr(rename(e, {"y": "z"})) == "add(x, z)"
    assert depth(e) == 2


# ============================================
# Classifiers
# ============================================

def test_is_client_local_examples():
    ctx = {"x": Fed(1, ())}
    assert is_client_local(ctx, Var("x"))
    assert is_client_local(ctx, mul(Var("x"), lit(2.0)))
    report = is_client_local(ctx, sum_(1, Var("x")))
    assert not report
    assert report.offending[0][0] == ()


def test_matmul_fed_fed_is_not_client_local():
    ctx = {"x": Fed(1, (2,))}
    e = matmul_fed_fed(perm((2, 1), Var("x")), Var("x"))
    assert not is_client_local(ctx, e)


def test_nonrecord_aggregation_stays_client_local():
    ctx = {"x": Fed(1, (3,))}
    assert is_client_local(ctx, agg("max", 2, Var("x")))


def test_is_client_local_propagates_type_errors():
    with pytest.raises(TypeCheckError):
        is_client_local({"x": Fed(1, (2,))}, add(Var("x"), Var("w")))


def test_is_shared_only_examples():
    assert is_shared_only({"a": Sh((2,)), "b": Sh((2,))}, add(Var("a"), Var("b")))
    assert not is_shared_only({"x": Fed(1, ())}, Var("x"))
    assert is_shared_only({}, lit(3.0))
    with pytest.raises(TypeCheckError) as info:
        is_shared_only({}, Var("q"))
    assert info.value.kind == "unbound-variable"


def test_classifiers_are_stable_under_renaming():
    ctx = {"x": Fed(1, (2,)), "s": Sh((2,))}
    e = add(Var("x"), Var("s"))
    renamed = rename(e, {"x": "u", "s": "v"})
    renamed_ctx = {"u": ctx["x"], "v": ctx["s"]}
    assert bool(is_client_local(ctx, e)) == bool(is_client_local(renamed_ctx, renamed))
    assert is_shared_only(ctx, e) == is_shared_only(renamed_ctx, renamed)

"""
Type checker tests: symbolic shapes, record-agnostic broadcasting, the
typing rules and the exposure discipline
"""
import numpy as np
import pytest

from fedtensor.modules.errors import TypeCheckError
from fedtensor.modules.lang_ast import (
    Fed,
    Sh,
    Var,
    add,
    agg,
    compare,
    ext,
    lit,
    matmul_fed_fed,
    matmul_fed_sh,
    matmul_sh_fed,
    perm,
    sum_,
    unary,
)
from fedtensor.modules.random_programs import default_generator, exposure_violations
from fedtensor.modules.typechecker import (
    STAR,
    TypeChecker,
    delete_axis,
    erase_marker,
    exposure_nodes,
    permute_type,
    record_agnostic_compatible,
    symbolic_shape,
    typecheck,
)

x, z, s = Var("x"), Var("z"), Var("s")


def kind_of(ctx, e):
    with pytest.raises(TypeCheckError) as info:
        typecheck(ctx, e)
    return info.value.kind


# ============================================
# Symbolic shapes
# ============================================

@pytest.mark.parametrize("t, expected", [
    (Fed(2, (5, 7)), (5, STAR, 7)),
    (Fed(1, ()), (STAR,)),
    (Fed(3, (2, 2)), (2, 2, STAR)),
])
def test_symbolic_shape(t, expected):
    assert symbolic_shape(t) == expected
    assert erase_marker(expected) == t


def test_erase_marker_needs_one_star():
    with pytest.raises(ValueError):
        erase_marker((2, 3))
    with pytest.raises(ValueError):
        erase_marker((STAR, STAR))


def test_record_agnostic_compatible():
    assert record_agnostic_compatible((3,), Fed(1, (3,)))
    assert not record_agnostic_compatible((2,), Fed(1, ()))
    assert record_agnostic_compatible((), Fed(2, (4, 5)))
    assert not record_agnostic_compatible((1, 1, 1), Fed(1, (3,)))


def test_delete_axis():
    assert delete_axis(Fed(2, (5, 7)), 1) == Fed(1, (7,))
    assert delete_axis(Fed(2, (5, 7)), 3) == Fed(2, (5,))
    with pytest.raises(TypeCheckError) as info:
        delete_axis(Fed(1, (4,)), 1)
    assert info.value.kind == "record-axis-violation"


def test_permute_type():
    assert permute_type(Fed(2, (5, 7)), (2, 1, 3)) == Fed(1, (5, 7))
    assert permute_type(Fed(2, (5, 7)), (1, 2, 3)) == Fed(2, (5, 7))
    assert permute_type(Fed(1, ()), (1,)) == Fed(1, ())
    with pytest.raises(TypeCheckError):
        permute_type(Fed(1, (3,)), (1, 2, 3))


def test_permute_type_inverse():
    t = Fed(3, (2, 4, 5))
    tau = (3, 1, 4, 2)
    inverse = tuple(tau.index(i) + 1 for i in range(1, 5))
    assert permute_type(permute_type(t, tau), inverse) == t


# ============================================
# Typing rules
# ============================================

def test_record_axis_aggregation_exposes_shared_type():
    assert typecheck({"x": Fed(1, (3,))}, sum_(1, x)) == Sh((3,))


def test_matmul_fed_fed_type():
    assert typecheck({"x": Fed(2, (5,)), "z": Fed(1, (4,))}, matmul_fed_fed(x, z)) == Sh((5, 4))


def test_shared_operand_on_record_axis_is_rejected():
    assert kind_of({"x": Fed(1, ()), "s": Sh((2,))}, add(x, s)) == "record-axis-violation"


def test_fed_shared_broadcast_keeps_federated_type():
    ctx = {"x": Fed(1, (3,)), "s": Sh((3,))}
    assert typecheck(ctx, add(x, s)) == Fed(1, (3,))
    assert typecheck(ctx, add(s, x)) == Fed(1, (3,))
    assert kind_of({"x": Fed(1, (3,)), "s": Sh((4,))}, add(x, s)) == "broadcast-incompatible"


def test_shared_broadcast():
    ctx = {"a": Sh((2, 1)), "b": Sh((3,))}
    assert typecheck(ctx, add(Var("a"), Var("b"))) == Sh((2, 3))
    assert kind_of({"a": Sh((2,)), "b": Sh((3,))}, add(Var("a"), Var("b"))) == "broadcast-incompatible"


def test_federated_operands_must_match():
    assert kind_of({"x": Fed(1, (2,)), "z": Fed(2, (2,))}, add(x, z)) == "record-axis-violation"
    assert kind_of({"x": Fed(1, (2,)), "z": Fed(1, (3,))}, add(x, z)) == "shape-mismatch"
    assert typecheck({"x": Fed(1, (2,)), "z": Fed(1, (2,))}, compare("lt", x, z)) == Fed(1, (2,))


def test_unary_preserves_type():
    assert typecheck({"x": Fed(2, (3, 4))}, unary("exp", x)) == Fed(2, (3, 4))


def test_aggregation_rules():
    assert typecheck({"x": Fed(2, (5, 7))}, agg("max", 3, x)) == Fed(2, (5,))
    assert typecheck({"s": Sh((2, 3, 4))}, agg("sum", 2, s)) == Sh((2, 4))
    assert kind_of({"s": Sh((2,))}, sum_(2, s)) == "shape-mismatch"
    assert kind_of({"x": Fed(1, (2,))}, sum_(3, x)) == "shape-mismatch"


def test_permutation_rules():
    assert typecheck({"s": Sh((2, 3))}, perm((2, 1), s)) == Sh((3, 2))
    assert typecheck({"x": Fed(1, (3,))}, perm((2, 1), x)) == Fed(2, (3,))
    assert kind_of({"s": Sh((2, 3))}, perm((1, 2, 3), s)) == "shape-mismatch"


def test_shared_matmul_forms():
    ctx = {"x": Fed(1, (3,)), "w": Sh((3, 2)), "v": Sh((4, 3)), "y": Fed(2, (3,))}
    assert typecheck(ctx, matmul_fed_sh(x, Var("w"))) == Fed(1, (2,))
    assert typecheck(ctx, matmul_sh_fed(Var("v"), Var("y"))) == Fed(2, (4,))
    assert kind_of(ctx, matmul_fed_sh(x, Var("v"))) == "shape-mismatch"
    assert kind_of(ctx, matmul_sh_fed(Var("w"), Var("y"))) == "shape-mismatch"


def test_matmul_fed_fed_requires_displayed_forms():
    assert kind_of({"x": Fed(1, (3,))}, matmul_fed_fed(x, x)) == "fedfed-form"
    assert kind_of({"x": Fed(2, (3,)), "s": Sh((3,))}, matmul_fed_fed(x, s)) == "fedfed-form"


def test_literal_type():
    assert typecheck({}, lit(np.zeros((2, 3)))) == Sh((2, 3))
    assert typecheck({}, lit(1.5)) == Sh(())


def test_unbound_variable_path():
    with pytest.raises(TypeCheckError) as info:
        typecheck({"x": Fed(1, ())}, add(x, sum_(1, Var("w"))))
    assert info.value.kind == "unbound-variable"
    assert info.value.path == (1, 0)


def test_extension_rules():
    ctx = {"a": Sh((2, 2)), "b": Sh((2,)), "x": Fed(1, (2,))}
    assert typecheck(ctx, ext("solve", Var("a"), Var("b"))) == Sh((2,))
    assert kind_of(ctx, ext("solve", x, Var("b"))) == "extension-misuse"
    assert kind_of(ctx, ext("no-such-thing", x)) == "extension-misuse"
    assert kind_of(ctx, ext("solve", Var("a"))) == "arity"


# ============================================
# Exposure discipline
# ============================================

def test_exposure_nodes_are_only_aggregations_and_fedfed_products():
    ctx = {"x": Fed(1, (3,))}
    e = add(sum_(1, x), lit(1.0))
    found = exposure_nodes(ctx, e)
    assert [path for path, _ in found] == [(0,)]


def test_random_programs_respect_exposure_discipline():
    gen = default_generator(11)
    checker = TypeChecker()
    for _ in range(1000):
        ctx = {"x": gen.fed_type()}
        e, t = gen.expression(ctx)
        types = checker.annotate(ctx, e)
        assert types[id(e)] == t
        assert exposure_violations(types, e) == []


def test_forbidden_programs_are_rejected_with_expected_kind():
    gen = default_generator(12)
    checker = TypeChecker()
    for _ in range(100):
        ctx, e, expected = gen.forbidden_program()
        with pytest.raises(TypeCheckError) as info:
            checker.typecheck(ctx, e)
        assert info.value.kind == expected

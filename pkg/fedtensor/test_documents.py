"""
Document tests: parsing and schema errors, program building, the bundled
corpus and data environments
"""
import json

import numpy as np
import pytest

from fedtensor.configs.config import Config
from fedtensor.modules.documents import (
    ExprNode,
    ExprProgram,
    build_program,
    check_program,
    environment_to_document,
    expr_to_node,
    load_data,
    load_program,
    load_tensor,
    node_to_expr,
    program_to_document,
    save_data,
    save_program,
    to_environment,
    value_to_json,
)
from fedtensor.modules.errors import DocumentError, TypeCheckError, ValidationError
from fedtensor.modules.evaluator import Evaluator
from fedtensor.modules.factorizer import (
    OneRoundProgram,
    extract_plan,
    run_iterative,
    run_plan,
    variance_program,
)
from fedtensor.modules.lang_ast import Var, add, lit, sum_
from fedtensor.modules.tensor_core import FederatedValue, TensorValue, virtual_global

CORPUS = Config.CORPUS_DIR
MANIFEST = json.loads((CORPUS / "manifest.json").read_text(encoding="utf-8"))


def read(relative: str) -> str:
    return (CORPUS / relative).read_text(encoding="utf-8")


def execute(program, env):
    """Distributed result of any program kind"""
    if isinstance(program, ExprProgram):
        return Evaluator(max_workers=1).eval_distributed(env, program.body)
    shared = {name: env[name] for name in program.shared_inputs}
    if isinstance(program, OneRoundProgram):
        return run_plan(extract_plan(program), env[program.input_name], shared)
    return run_iterative(program, env[program.input_name], shared).theta


# ============================================
# Parsing
# ============================================

def test_parse_error_has_line_and_column():
    with pytest.raises(DocumentError) as info:
        load_program(read("negative/malformed.json"))
    assert info.value.kind == "parse"
    assert info.value.line == 5
    assert info.value.column is not None


def test_schema_errors():
    with pytest.raises(DocumentError) as info:
        load_program('{"version": 1, "kind": "loop", "inputs": {}}')
    assert info.value.kind == "schema"
    with pytest.raises(DocumentError) as info:
        load_tensor('{"shape": [2, 2], "data": [1.0, 2.0]}')
    assert info.value.kind == "schema"


def test_expression_node_needs_exactly_one_form():
    with pytest.raises(DocumentError):
        load_program(json.dumps({"version": 1, "kind": "expr", "inputs": {},
                                 "body": {"var": "x", "op": "neg"}}))


def test_unknown_op_is_a_schema_error():
    with pytest.raises(DocumentError) as info:
        node_to_expr(ExprNode(op="cosh", args=[ExprNode(var="x")]))
    assert info.value.kind == "schema"
    assert "unknown op" in info.value.message


def test_aggregation_needs_axis():
    with pytest.raises(DocumentError):
        node_to_expr(ExprNode(op="sum", args=[ExprNode(var="x")]))


@pytest.mark.parametrize("axis", [0, -1, 3])
def test_record_axis_must_name_an_axis(axis):
    text = json.dumps({"version": 1, "kind": "expr",
                       "inputs": {"x": {"kind": "fed", "shape": [2], "record_axis": axis}},
                       "body": {"var": "x"}})
    with pytest.raises(DocumentError) as info:
        load_program(text)
    assert info.value.kind == "schema"
    assert "record_axis" in info.value.message


def test_load_tensor():
    t = load_tensor('{"shape": [2], "data": [1.5, -2.0]}')
    assert t.shape == (2,)
    assert t.to_flat() == [1.5, -2.0]


# ============================================
# Programs
# ============================================

def test_expression_survives_node_conversion():
    e = add(sum_(1, Var("x")), lit(2.0))
    assert str(node_to_expr(expr_to_node(e))) == str(e)


def test_program_document_round_trip():
    doc = program_to_document(variance_program())
    again = load_program(save_program(doc))
    assert again == doc
    rebuilt = build_program(again)
    assert isinstance(rebuilt, OneRoundProgram)
    assert check_program(rebuilt) == check_program(variance_program())


def test_repeated_rounds_collapse():
    doc = load_program(read("programs/logistic_gd.json"))
    program = build_program(doc)
    assert program.num_rounds == 5
    assert len({id(r) for r in program.rounds}) == 1
    collapsed = program_to_document(program)
    assert [r.repeat for r in collapsed.rounds] == [5]


def test_non_expression_programs_need_one_federated_input():
    text = json.dumps({
        "version": 1, "kind": "one-round",
        "inputs": {"s": {"kind": "sh", "shape": []}},
        "components": [{"form": "agg", "aggregation": "sum", "expr": {"var": "s"}}],
        "decoder": {"var": "y1"},
    })
    with pytest.raises(DocumentError) as info:
        load_program(text)
    assert info.value.kind == "schema"


# ============================================
# Corpus
# ============================================

@pytest.mark.parametrize("entry", MANIFEST["programs"], ids=lambda e: e["file"])
def test_corpus_program(entry):
    program = build_program(load_program(read(entry["file"])))
    assert str(check_program(program)) == entry["type"]
    env = to_environment(load_data(read(entry["data"])))
    result = execute(program, env)
    if "expected" not in entry:
        assert np.all(np.isfinite(result.array))
        return
    if isinstance(result, FederatedValue):
        result = virtual_global(result)
    expected = entry["expected"]
    assert list(result.shape) == expected["shape"]
    np.testing.assert_allclose(result.to_flat(), expected["data"], rtol=1e-12)


@pytest.mark.parametrize("entry", MANIFEST["negative"], ids=lambda e: e["file"])
def test_corpus_negative(entry):
    with pytest.raises((DocumentError, TypeCheckError, ValidationError)) as info:
        check_program(build_program(load_program(read(entry["file"]), check=False)))
    assert info.value.kind == entry["error"]
    if "violation" in entry:
        assert entry["violation"] in [v.kind for v in info.value.violations]


# ============================================
# Data
# ============================================

def test_data_environment():
    env = to_environment(load_data(read("data/scaled.json")))
    x = env["x"]
    assert isinstance(x, FederatedValue)
    assert x.federation.clients == ("c1", "c2")
    assert x.nonrecord_shape == (2,)
    assert env["s"].to_flat() == [10.0, -1.0]


def test_data_round_trip():
    doc = load_data(read("data/scalars.json"))
    env = to_environment(doc)
    again = to_environment(load_data(save_data(environment_to_document(env))))
    assert again.context() == env.context()
    for client in env.federation:
        assert again["x"].local(client).bit_equal(env["x"].local(client))


def test_data_rejects_mismatched_clients():
    text = json.dumps({
        "version": 1,
        "clients": [
            {"id": "c1", "tensors": {"x": {"shape": [1, 2], "data": [1.0, 2.0]}}},
            {"id": "c2", "tensors": {"x": {"shape": [1, 3], "data": [1.0, 2.0, 3.0]}}},
        ],
    })
    with pytest.raises(DocumentError) as info:
        load_data(text)
    assert info.value.kind == "schema"


def test_value_payloads():
    shared = value_to_json(TensorValue([1.0, 2.0]))
    assert shared == {"kind": "shared", "shape": [2], "data": [1.0, 2.0]}
    env = to_environment(load_data(read("data/scalars.json")))
    payload = value_to_json(env["x"])
    assert payload["kind"] == "federated"
    assert payload["record_axis"] == 1
    assert payload["clients"]["c3"] == {"shape": [0], "data": []}

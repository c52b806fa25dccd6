"""
Command-line tests: exit codes, result payloads and written artifacts
"""
import json

import pandas as pd
import pytest

from fedtensor.configs.config import Config
from fedtensor.main import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main

CORPUS = Config.CORPUS_DIR


def corpus(relative: str) -> str:
    return str(CORPUS / relative)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    payload = json.loads(captured.out) if code == EXIT_OK else None
    return code, payload, captured.err


# ============================================
# check
# ============================================

def test_check_valid_program(capsys):
    code, payload, _ = run_cli(capsys, "check", corpus("programs/gram.json"))
    assert code == EXIT_OK
    assert payload == {"status": "ok", "kind": "OneRoundProgram", "type": "Sh((3, 3))"}


def test_check_type_error_names_kind_and_path(capsys):
    code, _, err = run_cli(capsys, "check", corpus("negative/unbound_variable.json"))
    assert code == EXIT_INVALID
    assert err.strip().startswith("error:unbound-variable: at root")


def test_check_parse_error_has_location(capsys):
    code, _, err = run_cli(capsys, "check", corpus("negative/malformed.json"))
    assert code == EXIT_INVALID
    assert "error:parse: line 5" in err


def test_check_validation_error(capsys):
    code, _, err = run_cli(capsys, "check", corpus("negative/decoder_reads_input.json"))
    assert code == EXIT_INVALID
    assert "error:validation:" in err
    assert "decoder-not-shared-only" in err


def test_missing_file_is_a_usage_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "check", str(tmp_path / "absent.json"))
    assert code == EXIT_USAGE
    assert err.startswith("error:usage:")


def test_missing_subcommand_exits_with_usage_code(capsys):
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == EXIT_USAGE
    assert "error:usage:" in capsys.readouterr().err


# ============================================
# run
# ============================================

def test_run_both_modes_agree(capsys):
    code, payload, _ = run_cli(capsys, "run", corpus("programs/mean.json"),
                               "--data", corpus("data/scalars.json"), "--mode", "both")
    assert code == EXIT_OK
    assert payload["distributed"] == {"kind": "shared", "shape": [], "data": [2.0]}
    assert payload["centralized"]["data"] == [2.0]
    assert payload["consistency"]["passed"]
    assert payload["mode"] == "both"


def test_run_expression_keeps_federated_result(capsys):
    code, payload, _ = run_cli(capsys, "run", corpus("programs/scaled_rows.json"),
                               "--data", corpus("data/scaled.json"))
    assert code == EXIT_OK
    result = payload["distributed"]
    assert result["kind"] == "federated"
    assert result["clients"]["c2"] == {"shape": [1, 2], "data": [50.0, -6.0]}


def test_run_simulated_with_ledger(capsys, tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    code, payload, _ = run_cli(capsys, "run", corpus("programs/mean.json"),
                               "--data", corpus("data/scalars.json"),
                               "--simulate", "--ledger", str(ledger))
    assert code == EXIT_OK
    assert payload["distributed"]["data"] == [2.0]
    assert len(payload["messages"]) == 3
    frame = pd.read_json(ledger, lines=True)
    assert frame["client"].tolist() == ["c1", "c2", "c3"]


def test_run_with_zero_noise_mechanism(capsys):
    code, payload, _ = run_cli(capsys, "run", corpus("programs/sum.json"),
                               "--data", corpus("data/scalars.json"),
                               "--dp-kind", "gaussian-central", "--dp-sigma", "0")
    assert code == EXIT_OK
    assert payload["distributed"]["data"] == [6.0]
    assert payload["mechanism"]["placement"] == "merged-state"


@pytest.mark.parametrize("extra", [
    ["--ledger", "x.jsonl"],
    ["--simulate", "--dp-kind", "gaussian-central", "--dp-sigma", "1"],
    ["--dp-sigma", "1"],
])
def test_run_rejects_conflicting_flags(capsys, extra):
    code, _, _ = run_cli(capsys, "run", corpus("programs/sum.json"),
                         "--data", corpus("data/scalars.json"), *extra)
    assert code == EXIT_USAGE


def test_run_checks_input_binding(capsys):
    code, _, err = run_cli(capsys, "run", corpus("programs/sum.json"), "--data", corpus("data/records.json"))
    assert code == EXIT_INVALID
    assert "error:schema:" in err


def test_run_reports_local_count_mismatch_as_runtime(capsys, tmp_path):
    program = tmp_path / "weighted.json"
    program.write_text(json.dumps({
        "version": 1, "kind": "expr",
        "inputs": {"w": {"kind": "fed", "shape": [], "record_axis": 1},
                   "x": {"kind": "fed", "shape": [2], "record_axis": 1}},
        "body": {"op": "ext", "name": "per-record-scale", "args": [{"var": "w"}, {"var": "x"}]},
    }), encoding="utf-8")
    data = tmp_path / "weights.json"
    data.write_text(json.dumps({
        "version": 1,
        "clients": [
            {"id": "c1", "tensors": {"w": {"shape": [1], "data": [2.0]},
                                     "x": {"shape": [2, 2], "data": [1.0, 1.0, 2.0, 2.0]}}},
            {"id": "c2", "tensors": {"w": {"shape": [2], "data": [1.0, 3.0]},
                                     "x": {"shape": [1, 2], "data": [4.0, 5.0]}}},
        ],
        "record_axes": {"w": 1, "x": 1},
    }), encoding="utf-8")
    code, _, err = run_cli(capsys, "run", str(program), "--data", str(data))
    assert code == EXIT_RUNTIME
    assert err.strip().startswith("error:evaluation:")
    assert "client=c1" in err


def test_run_iterative_program(capsys):
    code, payload, _ = run_cli(capsys, "run", corpus("programs/logistic_gd.json"),
                               "--data", corpus("data/records.json"), "--mode", "both")
    assert code == EXIT_OK
    assert payload["rounds"] == 5
    assert payload["distributed"]["shape"] == [2]
    assert payload["consistency"]["passed"]


# ============================================
# plan
# ============================================

def test_plan_summary_and_output(capsys, tmp_path):
    target = tmp_path / "plans" / "variance.json"
    code, payload, _ = run_cli(capsys, "plan", corpus("programs/variance.json"), "--output", str(target))
    assert code == EXIT_OK
    assert payload["state_elements"] >= 2
    code, payload, _ = run_cli(capsys, "check", str(target))
    assert code == EXIT_OK
    assert payload["type"] == "Sh(())"


def test_plan_of_iterative_program(capsys):
    code, payload, _ = run_cli(capsys, "plan", corpus("programs/logistic_gd.json"))
    assert code == EXIT_OK
    assert payload["rounds"] == 5
    assert len(payload["distinct_rounds"]) == 1


def test_plan_rejects_expressions(capsys):
    code, _, err = run_cli(capsys, "plan", corpus("programs/record_total.json"))
    assert code == EXIT_INVALID
    assert "not-a-plan" in err


# ============================================
# train
# ============================================

def test_train_writes_trace(capsys, tmp_path):
    trace = tmp_path / "trace.jsonl"
    code, payload, _ = run_cli(capsys, "train", "--data", corpus("data/records.json"),
                               "--rounds", "3", "--trace", str(trace))
    assert code == EXIT_OK
    assert payload["model"] == "logistic"
    assert len(payload["theta"]) == 2
    frame = pd.read_json(trace, lines=True)
    assert frame["round"].tolist() == [1, 2, 3]
    assert frame["loss"].iloc[-1] == pytest.approx(payload["loss"])


def test_train_simulated_matches_direct(capsys):
    args = ["train", "--data", corpus("data/records.json"), "--optimizer", "momentum", "--rounds", "4"]
    _, direct, _ = run_cli(capsys, *args)
    code, simulated, _ = run_cli(capsys, *args, "--simulate")
    assert code == EXIT_OK
    assert simulated["theta"] == direct["theta"]
    assert len(simulated["messages"]) == 8


def test_train_rejects_scalar_records(capsys):
    code, _, _ = run_cli(capsys, "train", "--data", corpus("data/scalars.json"))
    assert code == EXIT_INVALID


# ============================================
# selfcheck
# ============================================

def test_selfcheck_small_run(capsys):
    code, payload, _ = run_cli(capsys, "selfcheck", "--trials", "2", "--seed", "3")
    assert code == EXIT_OK
    assert payload["passed"]
    assert payload["trials"] == 2
    assert "serialization" in payload["suites"]

#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
Main execution script
Command-line surface of the federated tensor language:
1. check     - typecheck / validate a program document
2. run       - execute a program on a data document (distributed, centralized or both)
3. plan      - extract and summarize the encode / merge / decode plan
4. train     - federated training of the packed-record regression models
5. selfcheck - randomized property suites
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from fedtensor.configs.config import Config
from fedtensor.modules.documents import (
    ExprProgram,
    build_program,
    check_program,
    load_data,
    load_program,
    load_tensor,
    program_to_document,
    save_program,
    to_environment,
    value_to_json,
)
from fedtensor.modules.errors import (
    DocumentError,
    FedTensorError,
    TypeCheckError,
    ValidationError,
    Violation,
    format_path,
)
from fedtensor.modules.evaluator import Environment, Evaluator, compare_arrays
from fedtensor.modules.factorizer import (
    IterativeProgram,
    OneRoundProgram,
    assemble_expression,
    decoder_type,
    extract_plan,
    realize_program,
    run_iterative,
    run_iterative_centralized,
    run_plan,
)
from fedtensor.modules.fed_sim import simulate_iterative, simulate_round
from fedtensor.modules.learning import (
    OPTIMIZERS,
    OptimizerSpec,
    build_gaussian_linear,
    build_logistic,
    build_optimizer_program,
    evaluate_loss,
    parameter_of,
    train,
)
from fedtensor.modules.lang_ast import Fed
from fedtensor.modules.privacy import (
    MECHANISM_KINDS,
    PLACEMENTS,
    MechanismSpec,
    apply_mechanism,
    run_iterative_private,
)
from fedtensor.modules.selfcheck import run_selfcheck
from fedtensor.modules.tensor_core import FederatedValue, TensorValue

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 3


class UsageError(Exception):
    """Bad command-line arguments or unreadable files"""


class ArgumentParser(argparse.ArgumentParser):
    """argparse with the usage exit code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"error:usage: {message}\n")


# ============================================
# Helpers
# ============================================

def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror or e}") from None


def _write(path: str, text: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8")
    logger.info(f"Wrote {target}")


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _load(path: str):
    return build_program(load_program(_read(path), check=False))


def _bind(program, env: Environment) -> None:
    """Every declared input must be present in the data with the declared type"""
    if isinstance(program, ExprProgram):
        declared = dict(program.context)
    else:
        declared = {program.input_name: program.input_type, **program.shared_inputs}
    actual = env.context()
    for name, t in declared.items():
        if name not in actual:
            raise DocumentError("schema", f"data has no input '{name}'")
        if actual[name] != t:
            raise DocumentError("schema", f"input '{name}' has type {actual[name]}, program declares {t}")


def _shared(program, env: Environment) -> Dict[str, TensorValue]:
    return {name: env[name] for name in program.shared_inputs}


def _mechanism(args) -> Optional[MechanismSpec]:
    if args.dp_kind is None:
        if any(v is not None for v in (args.dp_placement, args.dp_sigma, args.dp_epsilon)):
            raise UsageError("DP flags need --dp-kind")
        return None
    placement = args.dp_placement
    if placement is None:
        placement = "per-client-message" if args.dp_kind.endswith("-local") else "merged-state"
    return MechanismSpec(kind=args.dp_kind, placement=placement, scale=args.dp_sigma,
                         epsilon=args.dp_epsilon, delta=args.dp_delta,
                         sensitivity=args.dp_sensitivity, seed=Config.resolve_seed(args.seed) or 0)


def _check_flags(args, mechanism: Optional[MechanismSpec]) -> None:
    if args.ledger and not args.simulate:
        raise UsageError("--ledger needs --simulate")
    if args.simulate and mechanism is not None:
        raise UsageError("--simulate cannot be combined with DP flags")


def _error_line(exc: FedTensorError) -> str:
    if isinstance(exc, TypeCheckError):
        return f"error:{exc.kind}: at {format_path(exc.path)}: {exc.message}"
    if isinstance(exc, DocumentError):
        location = f"line {exc.line}, column {exc.column}: " if exc.line is not None else ""
        return f"error:{exc.kind}: {location}{exc.message}"
    return f"error:{exc.kind}: {exc}"


# ============================================
# Subcommands
# ============================================

def cmd_check(args) -> int:
    program = _load(args.program)
    result_type = check_program(program)
    _emit({"status": "ok", "kind": type(program).__name__, "type": str(result_type)})
    return EXIT_OK


def _run_expr(program: ExprProgram, env: Environment, args) -> dict:
    evaluator = Evaluator()
    result = {}
    if args.mode in ("distributed", "both"):
        result["distributed"] = value_to_json(evaluator.eval_distributed(env, program.body))
    if args.mode in ("centralized", "both"):
        result["centralized"] = value_to_json(evaluator.eval_centralized(env, program.body).tensor)
    if args.mode == "both":
        result["consistency"] = evaluator.check_consistency(env, program.body, args.tol).to_dict()
    return result


def _run_one_round(program: OneRoundProgram, env: Environment, args,
                   mechanism: Optional[MechanismSpec]) -> dict:
    X = env[program.input_name]
    shared = _shared(program, env)
    result = {}
    distributed = None
    if args.mode in ("distributed", "both"):
        plan = extract_plan(program)
        if args.simulate:
            distributed, ledger = simulate_round(plan, X, shared=shared)
            result["messages"] = ledger.message_sizes()
            if args.ledger:
                ledger.write(args.ledger)
        elif mechanism is not None:
            distributed = apply_mechanism(plan, mechanism).run(X, shared)
            result["mechanism"] = mechanism.metadata()
        else:
            distributed = run_plan(plan, X, shared)
        result["distributed"] = value_to_json(distributed)
    if args.mode in ("centralized", "both"):
        central = Evaluator().eval_centralized(env, assemble_expression(program)).tensor
        result["centralized"] = value_to_json(central)
        if distributed is not None:
            result["consistency"] = compare_arrays(distributed.array, central.array, args.tol).to_dict()
    return result


def _run_iterative(program: IterativeProgram, env: Environment, args,
                   mechanism: Optional[MechanismSpec]) -> dict:
    X = env[program.input_name]
    shared = _shared(program, env)
    result = {"rounds": program.num_rounds}
    distributed = None
    if args.mode in ("distributed", "both"):
        if args.simulate:
            distributed, ledger = simulate_iterative(program, X, shared=shared)
            result["messages"] = ledger.message_sizes()
            if args.ledger:
                ledger.write(args.ledger)
        elif mechanism is not None:
            distributed = run_iterative_private(program, X, mechanism, shared)[-1]
            result["mechanism"] = mechanism.metadata()
        else:
            distributed = run_iterative(program, X, shared).theta
        result["distributed"] = value_to_json(distributed)
    if args.mode in ("centralized", "both"):
        central = run_iterative_centralized(program, X, shared)[-1]
        result["centralized"] = value_to_json(central)
        if distributed is not None:
            result["consistency"] = compare_arrays(distributed.array, central.array, args.tol).to_dict()
    return result


def cmd_run(args) -> int:
    mechanism = _mechanism(args)
    _check_flags(args, mechanism)
    program = _load(args.program)
    check_program(program)
    env = to_environment(load_data(_read(args.data)))
    _bind(program, env)
    tol = args.tol if args.tol is not None else Config.PLAN_TOL
    args.tol = tol

    if isinstance(program, ExprProgram):
        if args.simulate or mechanism is not None:
            raise UsageError("--simulate and DP flags need a one-round or iterative program")
        result = _run_expr(program, env, args)
    elif isinstance(program, OneRoundProgram):
        result = _run_one_round(program, env, args, mechanism)
    else:
        result = _run_iterative(program, env, args, mechanism)

    result["mode"] = args.mode
    if "consistency" in result and not result["consistency"]["passed"]:
        logger.warning(f"Distributed and centralized results deviate beyond tol={tol:g}")
    _emit(result)
    return EXIT_OK


def _not_a_plan() -> ValidationError:
    return ValidationError([Violation("not-a-plan", "'plan' needs a one-round or iterative program")])


def cmd_plan(args) -> int:
    program = _load(args.program)
    check_program(program)
    if isinstance(program, ExprProgram):
        raise _not_a_plan()
    if isinstance(program, OneRoundProgram):
        plan = extract_plan(program)
        summary = plan.summary()
        document = program_to_document(realize_program(plan))
    else:
        rounds = []
        seen = {}
        shape = program.theta0.shape
        for t, r in enumerate(program.rounds):
            plan = extract_plan(program.round_program(t, shape))
            if id(r) not in seen:
                seen[id(r)] = t
                rounds.append({"first_round": t, **plan.summary()})
            shape = decoder_type(program.round_program(t, shape)).shape
        summary = {"rounds": program.num_rounds, "distinct_rounds": rounds}
        document = program_to_document(program)
    if args.output:
        _write(args.output, save_program(document))
    _emit(summary)
    return EXIT_OK


def _federated_input(env: Environment, name: Optional[str]) -> FederatedValue:
    federated = {n: v for n, v in env.bindings.items() if isinstance(v, FederatedValue)}
    if name is None:
        if len(federated) != 1:
            raise UsageError(f"data has federated inputs {sorted(federated)}; choose one with --input")
        name = next(iter(federated))
    if name not in federated:
        raise UsageError(f"data has no federated input '{name}'")
    X = federated[name]
    if X.record_axis != 1 or X.rank != 2 or X.nonrecord_shape[0] < 2:
        raise DocumentError("schema", f"training input '{name}' must be Fed_1((p+1,)) packed records, "
                                      f"got {Fed(X.record_axis, X.nonrecord_shape)}")
    return X


def cmd_train(args) -> int:
    mechanism = _mechanism(args)
    _check_flags(args, mechanism)
    env = to_environment(load_data(_read(args.data)))
    X = _federated_input(env, args.input)
    p = X.nonrecord_shape[0] - 1
    loss = build_logistic(p) if args.model == "logistic" else build_gaussian_linear(p, args.sigma2)
    opt = OptimizerSpec(kind=args.optimizer, eta=args.eta, beta=args.beta, beta1=args.beta1,
                        beta2=args.beta2, damping=args.damping)
    if args.theta0 == "zeros":
        theta0 = TensorValue(np.zeros(p))
    else:
        theta0 = load_tensor(_read(args.theta0))

    logger.info(f"Training {args.model} with {opt.kind} for {args.rounds} round(s)")
    result = {"model": args.model, "optimizer": opt.kind, "rounds": args.rounds}
    records: List[dict] = []
    if args.simulate:
        program = build_optimizer_program(loss, opt, args.rounds, theta0)
        state, ledger = simulate_iterative(program, X)
        theta = parameter_of(opt, state)
        result["messages"] = ledger.message_sizes()
        if args.ledger:
            ledger.write(args.ledger)
        records.append({"round": args.rounds, "theta": theta.to_flat(),
                        "loss": float(evaluate_loss(loss, X, theta).array)})
    elif mechanism is not None:
        program = build_optimizer_program(loss, opt, args.rounds, theta0)
        trajectory = run_iterative_private(program, X, mechanism)
        for t, state in enumerate(trajectory[1:], start=1):
            theta = parameter_of(opt, state)
            records.append({"round": t, "theta": theta.to_flat(),
                            "loss": float(evaluate_loss(loss, X, theta).array)})
        result["mechanism"] = mechanism.metadata()
    else:
        trained = train(loss, opt, args.rounds, X, theta0)
        theta = trained.theta
        records = trained.records

    result["theta"] = theta.to_flat()
    result["loss"] = records[-1]["loss"] if records else None
    if args.trace:
        target = Path(args.trace)
        target.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(records).to_json(target, orient="records", lines=True)
        logger.info(f"Trace with {len(records)} round(s) saved to {target}")
    _emit(result)
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    seed = Config.resolve_seed(args.seed)
    report = run_selfcheck(trials=args.trials, seed=seed if seed is not None else 0)
    _emit(report)
    return EXIT_OK if report["passed"] else EXIT_RUNTIME


# ============================================
# Parser
# ============================================

def _add_dp_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--dp-kind', choices=MECHANISM_KINDS, default=None,
                        help='Noise mechanism')
    parser.add_argument('--dp-placement', choices=PLACEMENTS, default=None,
                        help='Where the noise is added (default follows the mechanism)')
    parser.add_argument('--dp-sigma', type=float, default=None,
                        help='Noise scale (Gaussian sigma or Laplace b)')
    parser.add_argument('--dp-epsilon', type=float, default=None, help='Privacy parameter epsilon')
    parser.add_argument('--dp-delta', type=float, default=None, help='Privacy parameter delta')
    parser.add_argument('--dp-sensitivity', type=float, default=None,
                        help='Sensitivity used to calibrate the scale')
    parser.add_argument('--seed', type=int, default=0,
                        help='Noise seed (FEDTENSOR_SEED overrides)')


def _add_sim_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--simulate', action='store_true',
                        help='Route client messages through the serializing simulator')
    parser.add_argument('--ledger', type=str, default=None,
                        help='Write the message ledger (JSON lines); needs --simulate')


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(
        prog='fedtensor',
        description='Typed federated tensor programs: check, run, plan, train'
    )
    parser.add_argument('--log-level', type=str, default=Config.LOG_LEVEL,
                        help='Logging level for stderr')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=ArgumentParser)

    check = sub.add_parser('check', help='Typecheck a program document')
    check.add_argument('program', help='Program document (JSON)')
    check.set_defaults(handler=cmd_check)

    run = sub.add_parser('run', help='Execute a program on a data document')
    run.add_argument('program', help='Program document (JSON)')
    run.add_argument('--data', required=True, help='Data document (JSON)')
    run.add_argument('--mode', choices=['distributed', 'centralized', 'both'], default='distributed',
                     help='Execution semantics')
    run.add_argument('--tol', type=float, default=None,
                     help='Relative tolerance for --mode both (default FEDTENSOR_PLAN_TOL)')
    _add_sim_flags(run)
    _add_dp_flags(run)
    run.set_defaults(handler=cmd_run)

    plan = sub.add_parser('plan', help='Summarize the encode / merge / decode plan')
    plan.add_argument('program', help='Program document (JSON)')
    plan.add_argument('--output', type=str, default=None, help='Write the plan as a program document')
    plan.set_defaults(handler=cmd_plan)

    trainer = sub.add_parser('train', help='Federated training on packed records (features, response)')
    trainer.add_argument('--data', required=True, help='Data document (JSON)')
    trainer.add_argument('--input', type=str, default=None, help='Federated input name')
    trainer.add_argument('--model', choices=['logistic', 'gaussian'], default='logistic')
    trainer.add_argument('--optimizer', choices=list(OPTIMIZERS) + ['newton'], default='gd')
    trainer.add_argument('--rounds', type=int, default=10)
    trainer.add_argument('--eta', type=float, default=0.1, help='Step size')
    trainer.add_argument('--lambda', dest='damping', type=float, default=0.0,
                         help='Damping for Newton steps')
    trainer.add_argument('--beta', type=float, default=0.9, help='Momentum coefficient')
    trainer.add_argument('--beta1', type=float, default=0.9)
    trainer.add_argument('--beta2', type=float, default=0.999)
    trainer.add_argument('--sigma2', type=float, default=1.0, help='Noise variance of the Gaussian model')
    trainer.add_argument('--theta0', type=str, default='zeros', help="Tensor document or 'zeros'")
    trainer.add_argument('--trace', type=str, default=None, help='Write per-round records (JSON lines)')
    _add_sim_flags(trainer)
    _add_dp_flags(trainer)
    trainer.set_defaults(handler=cmd_train)

    selfcheck = sub.add_parser('selfcheck', help='Run the randomized property suites')
    selfcheck.add_argument('--trials', type=int, default=None,
                           help='Trials per suite (default FEDTENSOR_SELFCHECK_TRIALS)')
    selfcheck.add_argument('--seed', type=int, default=0)
    selfcheck.set_defaults(handler=cmd_selfcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main execution function"""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )

    try:
        Config.validate()
        return args.handler(args)
    except UsageError as e:
        print(f"error:usage: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TypeCheckError, ValidationError, DocumentError) as e:
        print(_error_line(e), file=sys.stderr)
        return EXIT_INVALID
    except FedTensorError as e:
        print(_error_line(e), file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as e:
        print(f"error:usage: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

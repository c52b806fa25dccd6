"""
Privacy tests: calibration, mechanism placement, noise statistics and
seeded reproducibility
"""
import math

import numpy as np
import pytest

from fedtensor.modules.errors import MechanismError
from fedtensor.modules.factorizer import (
    AggForm,
    IterativeProgram,
    Round,
    extract_plan,
    mean_program,
    min_program,
    run_iterative,
    run_plan,
    sum_program,
)
from fedtensor.modules.lang_ast import Fed, Var, add, lit, mul, sub
from fedtensor.modules.privacy import (
    MechanismSpec,
    MergeTransport,
    apply_mechanism,
    calibrate_gaussian_sigma,
    calibrate_laplace_scale,
    round_spec,
    run_iterative_private,
    sensitivity_probe,
)
from fedtensor.modules.tensor_core import FederatedValue, Federation, TensorValue

WIDE = 100_000


def fed(arrays):
    clients = tuple(f"c{i + 1}" for i in range(len(arrays)))
    return FederatedValue.from_arrays(Federation(clients), 1, [np.asarray(a, dtype=float) for a in arrays])


@pytest.fixture
def scalars():
    return fed([[1.0, 2.0], [3.0]])


@pytest.fixture
def wide():
    """Three clients of records with WIDE coordinates each"""
    rng = np.random.default_rng(0)
    return fed([rng.normal(size=(n, WIDE)) for n in (1, 2, 1)])


# ============================================
# Calibration
# ============================================

def test_gaussian_calibration():
    sigma = calibrate_gaussian_sigma(1.0, 1e-5, 1.0)
    assert sigma == pytest.approx(4.8448, abs=5e-4)
    assert calibrate_gaussian_sigma(1.0, 1e-5, 2.0) == pytest.approx(2 * sigma, rel=1e-15)
    assert calibrate_gaussian_sigma(1e12, 1e-5, 1.0) < 1e-10


def test_laplace_calibration():
    assert calibrate_laplace_scale(0.5, 2.0) == 4.0


@pytest.mark.parametrize("args", [(0.0, 1e-5, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 1.0), (1.0, 1e-5, -1.0)])
def test_gaussian_calibration_rejects_bad_parameters(args):
    with pytest.raises(MechanismError):
        calibrate_gaussian_sigma(*args)


def test_mechanism_spec_calibrates_and_validates():
    spec = MechanismSpec("gaussian-central", "merged-state", epsilon=1.0, delta=1e-5, sensitivity=1.0)
    assert spec.scale == pytest.approx(calibrate_gaussian_sigma(1.0, 1e-5, 1.0))
    with pytest.raises(MechanismError):
        MechanismSpec("gaussian-local", "merged-state", scale=1.0)
    with pytest.raises(MechanismError):
        MechanismSpec("gaussian-central", "per-client-message", scale=1.0)
    with pytest.raises(MechanismError):
        MechanismSpec("gaussian-central", "merged-state")
    with pytest.raises(MechanismError):
        MechanismSpec("exponential", "merged-state", scale=1.0)
    assert MechanismSpec("laplace-central", "decoded-output", epsilon=2.0, sensitivity=1.0).scale == 0.5


# ============================================
# Mechanisms
# ============================================

@pytest.mark.parametrize("kind, placement", [
    ("gaussian-central", "merged-state"),
    ("gaussian-central", "decoded-output"),
    ("laplace-central", "merged-state"),
    ("gaussian-local", "per-client-message"),
])
def test_zero_scale_is_identity(kind, placement, scalars):
    plan = extract_plan(mean_program())
    noisy = apply_mechanism(plan, MechanismSpec(kind, placement, scale=0.0)).run(scalars)
    assert noisy.bit_equal(run_plan(plan, scalars))


def test_merged_state_gaussian_noise_has_calibrated_std(wide):
    plan = extract_plan(sum_program(Fed(1, (WIDE,))))
    exact = run_plan(plan, wide).array
    noisy = apply_mechanism(plan, MechanismSpec("gaussian-central", "merged-state", scale=2.0, seed=1)).run(wide)
    deviation = noisy.array - exact
    assert abs(np.std(deviation) - 2.0) < 0.05 * 2.0
    assert abs(np.mean(deviation)) < 0.05


def test_laplace_noise_statistics():
    n, b = 400_000, 0.5
    X = fed([np.zeros((1, n)), np.zeros((2, n))])
    plan = extract_plan(sum_program(Fed(1, (n,))))
    noise = apply_mechanism(plan, MechanismSpec("laplace-central", "decoded-output", scale=b, seed=2)).run(X).array
    assert abs(np.mean(noise)) < 0.01 * b
    assert abs(np.mean(np.abs(noise)) - b) < 0.05 * b
    assert abs(np.std(noise) - math.sqrt(2) * b) < 0.05 * math.sqrt(2) * b
    assert abs(np.corrcoef(noise[0::2], noise[1::2])[0, 1]) < 0.02
    assert abs(np.corrcoef(noise[:-1], noise[1:])[0, 1]) < 0.02


class RecordingMerge(MergeTransport):
    """Loopback merge that keeps the messages it received"""

    def __init__(self):
        self.messages = []

    def merge(self, plan, messages):
        self.messages = [list(m) for m in messages]
        return plan.merge_accumulators(messages)


def test_local_noise_is_independent_across_clients():
    n = 200_000
    X = fed([np.zeros((1, n)), np.zeros((1, n)), np.zeros((1, n))])
    plan = extract_plan(sum_program(Fed(1, (n,))))
    recorder = RecordingMerge()
    spec = MechanismSpec("gaussian-local", "per-client-message", scale=1.0, seed=6)
    apply_mechanism(plan, spec, recorder).run(X)
    noises = [m[0] for m in recorder.messages]
    assert len(noises) == 3
    for i in range(3):
        assert abs(np.std(noises[i]) - 1.0) < 0.05
        for j in range(i + 1, 3):
            assert abs(np.corrcoef(noises[i], noises[j])[0, 1]) < 0.02


def test_local_noise_accumulates_over_clients(wide):
    plan = extract_plan(sum_program(Fed(1, (WIDE,))))
    exact = run_plan(plan, wide).array
    noisy = apply_mechanism(plan, MechanismSpec("gaussian-local", "per-client-message", scale=1.0, seed=3)).run(wide)
    expected = math.sqrt(3.0)
    assert abs(np.std(noisy.array - exact) - expected) < 0.05 * expected


def test_post_processing_of_noisy_state(scalars):
    plan = extract_plan(mean_program())
    randomized = apply_mechanism(plan, MechanismSpec("gaussian-central", "merged-state", scale=0.3, seed=9))
    state = randomized.noisy_state(scalars)
    assert plan.extract_output(state).bit_equal(randomized.run(scalars))


def test_same_seed_reproduces_noise(scalars):
    plan = extract_plan(mean_program())
    first = apply_mechanism(plan, MechanismSpec("gaussian-local", "per-client-message", scale=1.0, seed=4))
    second = apply_mechanism(plan, MechanismSpec("gaussian-local", "per-client-message", scale=1.0, seed=4))
    other = apply_mechanism(plan, MechanismSpec("gaussian-local", "per-client-message", scale=1.0, seed=5))
    assert first.run(scalars).bit_equal(second.run(scalars))
    assert not first.run(scalars).bit_equal(other.run(scalars))


def test_local_noise_needs_additive_merges():
    plan = extract_plan(min_program())
    with pytest.raises(MechanismError) as info:
        apply_mechanism(plan, MechanismSpec("gaussian-local", "per-client-message", scale=1.0))
    assert "unsupported-merge" in str(info.value)
    apply_mechanism(plan, MechanismSpec("gaussian-central", "merged-state", scale=1.0))


# ============================================
# Sensitivity probe
# ============================================

def test_identical_inputs_have_zero_distance(scalars):
    assert sensitivity_probe(extract_plan(sum_program()), scalars, scalars) == 0.0


def test_changed_record_moves_sum_state_by_change(scalars):
    adjacent = fed([[1.0, 4.5], [3.0]])
    assert sensitivity_probe(extract_plan(sum_program()), scalars, adjacent) == pytest.approx(2.5)
    assert sensitivity_probe(extract_plan(mean_program()), scalars, adjacent) == pytest.approx(2.5)


# ============================================
# Iterative programs
# ============================================

def averaging_program(rounds: int) -> IterativeProgram:
    x, theta = Var("x"), Var("theta")
    step = Round((AggForm(sub(x, theta)),), add(theta, mul(lit(0.1), Var("y1"))))
    return IterativeProgram("x", Fed(1, ()), "theta", TensorValue.scalar(0.0), (step,) * rounds)


def test_private_run_without_noise_matches_plain_run(scalars):
    program = averaging_program(4)
    trajectory = run_iterative_private(program, scalars, MechanismSpec("gaussian-central", "merged-state", scale=0.0))
    assert len(trajectory) == 5
    assert trajectory[-1].bit_equal(run_iterative(program, scalars).theta)


def test_rounds_use_independent_noise_streams(scalars):
    spec = MechanismSpec("gaussian-central", "merged-state", scale=1.0, seed=7)
    assert round_spec(spec, 0).seed != round_spec(spec, 1).seed
    assert round_spec(spec, 1).seed == round_spec(spec, 1).seed
    first = run_iterative_private(averaging_program(3), scalars, spec)
    second = run_iterative_private(averaging_program(3), scalars, spec)
    assert all(a.bit_equal(b) for a, b in zip(first, second))

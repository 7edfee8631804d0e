import asyncio

import numpy as np
import numpy.testing as nt
import pytest

from conftest import SCENARIO_DIR
from dmp_baselines import classical_reference, goal_filter_step, scaling_matrix
from dmp_basis import new_basis
from dmp_data_models import Generalization
from dmp_dynamics import RolloutConfig, run_rollout
from dmp_errors import DmpArgumentError, ScalingSingularityError
from dmp_model import train_model
from scenario_runner import get_scenario_runner
from synthetic_demos import single_hump_1d


def run_pair(name, compare=Generalization.CLASSICAL):
    result = asyncio.run(get_scenario_runner().run(str(SCENARIO_DIR / name), compare=compare))
    assert result["exit_code"] == 0, result
    by_mode = {p["metrics"].generalization: p for p in result["passes"] if p["metrics"].pass_name == "forward"}
    return result["prepared"], by_mode[Generalization.DMPP], by_mode[compare]


def demo_chord_deviation(demo):
    y = demo.positions[0]
    chord = y[0] + demo.phases * (y[-1] - y[0])
    deviation = y - chord
    return deviation[np.argmax(np.abs(deviation))]


def test_scaling_matrix_and_reference(model_1d):
    nt.assert_allclose(scaling_matrix(model_1d, [0.0], [2.0]), [[2.0]], rtol=1e-3)
    ref = classical_reference(model_1d, np.array([1.0]), np.array([3.0]), 1.0, 0.0, 0.0)
    nt.assert_allclose(ref.y, [3.0], atol=1e-3)


def test_zero_demo_displacement_is_singular():
    model = train_model(single_hump_1d(0.0, 0.0, hump=0.5), new_basis(30, 1.5))
    with pytest.raises(ScalingSingularityError):
        scaling_matrix(model, [0.0], [1.0])


def test_goal_filter_step():
    nt.assert_allclose(goal_filter_step(np.array([0.0]), np.array([1.0]), 4.0, 0.01), [0.04])
    with pytest.raises(DmpArgumentError):
        goal_filter_step(np.zeros(1), np.ones(1), 0.0, 0.01)


def test_close_demo_goal_over_scales_classical():
    prepared, dmpp, classical = run_pair("close_demo_goal.yaml")
    shape = abs(demo_chord_deviation(prepared.demo))
    assert abs(classical["metrics"].chord_deviation[0]) >= 100.0 * shape
    assert abs(dmpp["metrics"].chord_deviation[0]) <= 2.0 * shape
    assert dmpp["metrics"].endpoint_error <= 1e-3 * 4.0
    assert classical["metrics"].peak_acceleration >= 10.0 * dmpp["metrics"].peak_acceleration


def test_goal_equal_to_start_freezes_classical():
    prepared, dmpp, classical = run_pair("goal_equals_start.yaml")
    hump = abs(demo_chord_deviation(prepared.demo))
    assert classical["metrics"].max_excursion < 1e-9
    assert dmpp["metrics"].max_excursion >= 0.5 * hump


def test_flipped_displacement_mirrors_classical():
    prepared, dmpp, classical = run_pair("mirrored_goal.yaml")
    demo_sign = np.sign(demo_chord_deviation(prepared.demo))
    assert np.sign(classical["metrics"].chord_deviation[0]) == -demo_sign
    assert np.sign(dmpp["metrics"].chord_deviation[0]) == demo_sign


def test_singular_demo_fails_the_classical_run(tmp_path):
    result = asyncio.run(get_scenario_runner().run(str(SCENARIO_DIR / "singular_demo_displacement.yaml")))
    assert result["exit_code"] == 1
    assert result["error_type"] == "ScalingSingularityError"
    assert (tmp_path / "outputs" / "singular_demo_displacement_error.json").exists()


def test_demo_endpoints_give_matching_rollouts(model_1d):
    classical = run_rollout(model_1d, RolloutConfig(y0=np.zeros(1), goal=np.ones(1), generalization=Generalization.CLASSICAL))
    dmpp = run_rollout(model_1d, RolloutConfig(y0=np.zeros(1), goal=np.ones(1)))
    # DMP++ pins the boundary derivatives that W0 only approximates; measured gap 3.5e-3
    assert np.max(np.abs(classical.y - dmpp.y)) <= 1e-2 * np.ptp(dmpp.y)

import numpy as np
import numpy.testing as nt
import pytest

from dmp_data_models import ForceSettings, ObstacleShape, ObstacleSpec, TargetSettings
from dmp_dynamics import ExecutionState, PhaseState
from dmp_errors import DmpArgumentError, PenetrationError
from dmp_model import StateTriplet
from scene_environment import (
    ForceScript,
    Obstacle,
    ObstacleCoupling,
    TargetSchedule,
    barrier_potential,
    repulsive_force,
    schedule_goal,
    surface_gradient,
    surface_value,
)


def ellipsoid():
    return Obstacle("blob", ObstacleShape.ELLIPSOID, d0=0.8, k_o=2.0,
                    center=np.array([0.5, -0.2, 0.1]), covariance=np.array([[0.04, 0.01, 0.0],
                                                                            [0.01, 0.09, 0.0],
                                                                            [0.0, 0.0, 0.02]]))


def plane():
    return Obstacle("floor", ObstacleShape.PLANE, d0=0.1, k_o=0.5,
                    normal=np.array([0.0, 0.0, 2.0]), point=np.array([0.0, 0.0, -0.3]))


def points_in_activation_band(ob, rng, count=100):
    """Exterior points with 0.1 d0 <= ψ <= 0.9 d0"""
    targets = rng.uniform(0.1 * ob.d0, 0.9 * ob.d0, count)
    if ob.shape == ObstacleShape.PLANE:
        lateral = rng.normal(size=(count, 3)) * 0.5
        lateral -= np.outer(lateral @ ob.normal, ob.normal)
        return ob.point + lateral + np.outer(targets, ob.normal)
    L = np.linalg.cholesky(ob.covariance)
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return ob.center + (directions * np.sqrt(1.0 + targets)[:, None]) @ L.T


@pytest.mark.parametrize("make", [ellipsoid, plane])
def test_force_is_negative_potential_gradient(make, rng):
    ob = make()
    h = 1e-7
    for y in points_in_activation_band(ob, rng):
        fd = np.array([
            (barrier_potential(ob, y + h * e) - barrier_potential(ob, y - h * e)) / (2 * h) for e in np.eye(3)
        ])
        nt.assert_allclose(repulsive_force(ob, y), -fd, atol=1e-5 * max(1.0, np.linalg.norm(fd)))


@pytest.mark.parametrize("make", [ellipsoid, plane])
def test_surface_gradient_matches_finite_differences(make, rng):
    ob = make()
    h = 1e-6
    for y in points_in_activation_band(ob, rng, 20):
        fd = np.array([(surface_value(ob, y + h * e) - surface_value(ob, y - h * e)) / (2 * h) for e in np.eye(3)])
        nt.assert_allclose(surface_gradient(ob, y), fd, atol=1e-6)


def test_force_is_continuous_at_activation_offset():
    ob = plane()
    just_outside = ob.point + (ob.d0 + 1e-9) * ob.normal
    just_inside = ob.point + (ob.d0 - 1e-9) * ob.normal
    nt.assert_array_equal(repulsive_force(ob, just_outside), np.zeros(3))
    assert np.linalg.norm(repulsive_force(ob, just_inside)) < 1e-6
    assert barrier_potential(ob, just_outside) == 0.0


def test_force_grows_towards_surface():
    ob = plane()
    norms = [np.linalg.norm(repulsive_force(ob, ob.point + psi * ob.normal)) for psi in (0.09, 0.05, 0.01, 1e-4)]
    assert norms == sorted(norms)
    assert repulsive_force(ob, ob.point + 0.01 * ob.normal) @ ob.normal > 0.0


def test_penetration_is_an_error():
    with pytest.raises(PenetrationError):
        repulsive_force(ellipsoid(), np.array([0.5, -0.2, 0.1]))
    with pytest.raises(PenetrationError):
        repulsive_force(plane(), np.array([0.0, 0.0, -0.3]))


def test_obstacle_validation():
    with pytest.raises(DmpArgumentError):
        Obstacle("bad", ObstacleShape.ELLIPSOID, d0=0.1, center=np.zeros(2), covariance=-np.eye(2))
    with pytest.raises(DmpArgumentError):
        Obstacle("bad", ObstacleShape.PLANE, d0=0.1, normal=np.zeros(2), point=np.zeros(2))
    with pytest.raises(DmpArgumentError):
        Obstacle("bad", ObstacleShape.PLANE, d0=0.0, normal=np.ones(2), point=np.zeros(2))
    assert np.linalg.norm(plane().normal) == pytest.approx(1.0)


def test_obstacle_from_spec_defaults():
    spec = ObstacleSpec(name="ball", shape="ellipsoid", center=[0.0, 0.0], radii=[0.1, 0.2])
    ob = Obstacle.from_spec(spec, scene_scale=2.0)
    assert ob.d0 == pytest.approx(0.1)
    nt.assert_allclose(ob.covariance, np.diag([0.01, 0.04]))
    with pytest.raises(ValueError):
        ObstacleSpec(name="wall", shape="plane", normal=[1.0, 0.0])


def test_obstacle_coupling_sums_forces():
    obstacles = [plane(), Obstacle("ceiling", ObstacleShape.PLANE, d0=0.1, normal=np.array([0.0, 0.0, -1.0]),
                                   point=np.array([0.0, 0.0, 0.3]))]
    coupling = ObstacleCoupling(obstacles)
    y = np.array([0.0, 0.0, -0.25])
    state = ExecutionState(y, np.zeros(3), np.zeros(3), PhaseState.start(1.0))
    u = coupling.coupling(0.0, state, StateTriplet.at_rest(y))
    nt.assert_allclose(u, repulsive_force(obstacles[0], y))
    assert coupling.last_surface_values["floor"] == pytest.approx(0.05)
    assert coupling.last_surface_values["ceiling"] == pytest.approx(0.55)
    assert coupling.last_force_norm == pytest.approx(np.linalg.norm(u))


def test_target_schedule_events_and_drift():
    settings = TargetSettings(
        events=[{"time": 1.0, "goal": [2.0, 0.0]}],
        drift={"velocity": [0.1, 0.0], "start": 0.5, "until": 1.5},
    )
    schedule = TargetSchedule.from_settings(np.array([1.0, 0.0]), settings)
    nt.assert_allclose(schedule_goal(schedule, 0.0), [1.0, 0.0])
    nt.assert_allclose(schedule.goal(0.75), [1.025, 0.0])
    nt.assert_allclose(schedule.goal(1.2), [2.07, 0.0])
    nt.assert_allclose(schedule.goal(5.0), [2.1, 0.0])
    with pytest.raises(ValueError):
        TargetSettings(events=[{"time": 2.0, "goal": [0.0]}, {"time": 1.0, "goal": [1.0]}])


def test_force_script_is_seeded():
    settings = ForceSettings(pulses=[{"start": 0.2, "duration": 0.4, "magnitude": [0.0, 2.0]}], noise_std=0.1)
    a, b = ForceScript(settings, 2, seed=3), ForceScript(settings, 2, seed=3)
    other = ForceScript(settings, 2, seed=4)
    nt.assert_array_equal(a.force(0.4), b.force(0.4))
    assert not np.array_equal(a.force(0.4), other.force(0.4))
    nt.assert_array_equal(a.force(0.1), np.zeros(2))
    assert a.force(0.4)[1] == pytest.approx(2.0, abs=0.5)


def test_constant_pulse_and_shape_check():
    settings = ForceSettings(pulses=[{"start": 0.0, "duration": 1.0, "magnitude": [1.5], "shape": "constant"}])
    nt.assert_array_equal(ForceScript(settings, 1).force(0.01), [1.5])
    with pytest.raises(DmpArgumentError):
        ForceScript(settings, 3)

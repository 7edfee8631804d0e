import numpy as np
import numpy.testing as nt
import pytest

from benchmark_service import random_model
from dmp_adaptation import (
    ConstraintBlock,
    PhasePair,
    ViaEvents,
    ViaPoint,
    batch_solve,
    init_adaptation,
    oracle_blocks,
    penalized_cost,
    via_phase_heuristic,
)
from dmp_data_models import Direction, EpsilonProfile, HistoryMode
from dmp_errors import DmpArgumentError, DowndateError, OracleError
from dmp_model import StateTriplet, evaluate_reference

MODERATE = EpsilonProfile(pos=1e-6, vel=1e-5, acc=1e-5, via=1e-5, state_pos=1e-4, state_vel=1e-3, state_acc=1e-2)


def relative_gap(A, B):
    return np.linalg.norm(A - B) / np.linalg.norm(B)


def random_run(rng, K, n, steps, eps=MODERATE):
    """Recursive adaptation under goal jumps, via add/remove and noisy measured states"""
    model = random_model(K, n, rng)
    y0, goal = rng.normal(size=n), rng.normal(size=n)
    st = init_adaptation(model, y0, goal, eps, HistoryMode.ADAPT_TO_EXTERNAL, record_history=True)

    phases = np.linspace(0.0, 0.9, steps + 1)
    ds = 1.0 / model.duration
    jumps = set(rng.choice(np.arange(1, steps), size=3, replace=False).tolist())
    adds, removes = {}, {}
    for v in range(int(rng.integers(0, 5))):
        at = int(rng.integers(1, steps - 1))
        via = ViaPoint(f"v{v}", float(rng.uniform(phases[at] + 0.05, 0.97)), rng.normal(size=n))
        adds.setdefault(at, []).append(via)
        if rng.random() < 0.5:
            removes.setdefault(int(rng.integers(at + 1, steps + 1)), []).append(via.id)

    for k in range(1, steps + 1):
        if k in jumps:
            goal = goal + rng.normal(scale=0.5, size=n)
        ref = evaluate_reference(model, st.W, phases[k], ds, 0.0)
        noise = rng.normal(scale=1e-3, size=(3, n))
        measured = StateTriplet(ref.y + noise[0], ref.dy + noise[1], ref.ddy + noise[2])
        events = ViaEvents(adds.get(k, []), removes.get(k, []))
        st.step(PhasePair(phases[k], ds, phases[k - 1], ds, 0.0), goal, events, measured)
    return model, st


def oracle_for(model, st, method="penalized"):
    boundary = (StateTriplet.at_rest(st.y0), st.goal)
    return batch_solve(model, boundary, st.state_history, list(st.via_points.values()), st.eps,
                       st.direction, W_init=st.W_init, method=method)


def test_recursive_weights_match_batch_solution():
    rng = np.random.default_rng(2024)
    for trial in range(20):
        K = [10, 30, 50][trial % 3]
        n = [1, 3][trial % 2]
        model, st = random_run(rng, K, n, int(rng.integers(100, 201)))
        assert relative_gap(st.W, oracle_for(model, st)) < 1e-6, f"trial {trial} (K={K}, n={n})"


def test_boundary_constraints_after_init(model_1d):
    st = init_adaptation(model_1d, [0.2], [3.0])
    residuals = st.residuals()
    for name in ("start_position", "goal_position", "boundary_velocity", "boundary_acceleration"):
        assert residuals[name] <= 1e-4, name


def test_default_epsilon_residuals_through_goal_jumps(model_2d):
    st = init_adaptation(model_2d, [0.0, 0.0], [1.0, 0.0])
    ds = 1.0 / model_2d.duration
    goal = np.array([1.0, 0.0])
    s_prev = 0.0
    for k, s in enumerate(np.linspace(0.002, 0.8, 400)):
        if k in (100, 200, 300):
            goal = goal + np.array([0.2, -0.3])
        events = ViaEvents([ViaPoint("mid", 0.9, [1.1, -0.2])]) if k == 150 else None
        st.step(PhasePair(s, ds, s_prev, ds, 0.0), goal, events)
        hard = st.residuals()
        assert max(hard["start_position"], hard["goal_position"], hard["via"]) <= 1e-4
        s_prev = s
    nt.assert_allclose(st.W.T @ model_2d.basis.phi(1.0), goal, atol=1e-4)


def test_update_then_downdate_restores_state(model_2d, rng):
    st = init_adaptation(model_2d, [0.0, 0.0], [1.0, 0.0], MODERATE)
    W, P = st.W.copy(), st.P.copy()
    H = np.column_stack([model_2d.basis.phi(0.3), model_2d.basis.phi(0.6)])
    block = ConstraintBlock(rng.normal(size=(2, 2)), H, [1e-3, 1e-3], label="extra")
    st.update(block)
    assert relative_gap(st.W, W) > 1e-3
    st.downdate(block)
    assert relative_gap(st.W, W) < 1e-8
    assert relative_gap(st.P, P) < 1e-8


def test_covariance_stays_symmetric_positive_definite(model_2d):
    st = init_adaptation(model_2d, [0.0, 0.0], [1.0, 0.0])
    ds = 1.0 / model_2d.duration
    phases = np.linspace(0.0, 1.0, 600)
    for s_prev, s in zip(phases[:-1], phases[1:]):
        st.step(PhasePair(s, ds, s_prev, ds, 0.0), [1.0, 0.0])
    nt.assert_array_equal(st.P, st.P.T)
    assert np.linalg.eigvalsh(st.P).min() > 0.0


def test_downdate_of_unapplied_constraint_fails(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0])
    block = ConstraintBlock([[0.7]], model_1d.basis.phi(0.5).reshape(-1, 1), [1e-9])
    with pytest.raises(DowndateError):
        st.downdate(block)


def test_update_rejects_negative_weights(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0])
    block = ConstraintBlock([[0.7]], model_1d.basis.phi(0.5).reshape(-1, 1), [-1e-3])
    with pytest.raises(DmpArgumentError):
        st.update(block)


def test_via_point_add_and_remove(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0])
    W_before = st.W.copy()
    st.step(PhasePair(0.0, 0.5, 0.0, 0.5, 0.0), [1.0], ViaEvents([ViaPoint("a", 0.5, [0.9])]))
    assert abs(st.W.T @ model_1d.basis.phi(0.5) - 0.9).max() <= 1e-4
    with pytest.raises(DmpArgumentError, match="already active"):
        st.step(PhasePair(0.0, 0.5, 0.0, 0.5, 0.0), [1.0], ViaEvents([ViaPoint("a", 0.6, [0.2])]))
    st.step(PhasePair(0.0, 0.5, 0.0, 0.5, 0.0), [1.0], ViaEvents(removed=["a"]))
    assert "a" not in st.via_points
    assert relative_gap(st.W, W_before) < 1e-5


def test_unknown_via_removal_is_ignored(model_1d, caplog):
    st = init_adaptation(model_1d, [0.0], [1.0])
    st.step(PhasePair(0.0, 0.5, 0.0, 0.5, 0.0), [1.0], ViaEvents(removed=["ghost"]))
    assert "ghost" in caplog.text


def test_goal_retarget_matches_fresh_initialization(model_2d):
    st = init_adaptation(model_2d, [0.0, 0.0], [1.0, 0.0], fast_path=True)
    st.step(PhasePair(0.0, 1 / 3, 0.0, 1 / 3, 0.0), [0.4, 0.8])
    fresh = init_adaptation(model_2d, [0.0, 0.0], [0.4, 0.8])
    assert relative_gap(st.W, fresh.W) < 1e-6


def test_fast_path_skips_unchanged_steps(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0], fast_path=True, record_history=True)
    W = st.W.copy()
    st.step(PhasePair(0.3, 0.5, 0.29, 0.5, 0.0), [1.0])
    nt.assert_array_equal(st.W, W)
    assert st.state_history == []


def test_state_constraints_respect_phase_grid(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0], record_history=True, state_phase_grid=1e-2)
    st.step(PhasePair(0.005, 0.5, 0.0, 0.5, 0.0), [1.0])
    assert len(st.state_history) == 0
    st.step(PhasePair(0.011, 0.5, 0.005, 0.5, 0.0), [1.0])
    st.step(PhasePair(0.015, 0.5, 0.011, 0.5, 0.0), [1.0])
    assert len(st.state_history) == 1
    # A goal change forces the state constraint
    st.step(PhasePair(0.016, 0.5, 0.015, 0.5, 0.0), [1.5])
    assert len(st.state_history) == 2


def test_preserve_learned_keeps_current_reference(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0])
    s, ds = 0.4, 0.5
    before = evaluate_reference(model_1d, st.W, s, ds, 0.0)
    st.step(PhasePair(s, ds, 0.399, ds, 0.0), [2.0])
    after = evaluate_reference(model_1d, st.W, s, ds, 0.0)
    nt.assert_allclose(after.y, before.y, atol=1e-4)
    nt.assert_allclose(after.dy, before.dy, atol=1e-3)


def test_via_phase_heuristic(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0])
    phase = via_phase_heuristic(model_1d, st, np.array([0.5]), 0.1)
    assert 0.1 < phase <= 1.0
    assert abs(st.W.T @ model_1d.basis.phi(phase) - 0.5).max() < 0.05
    with pytest.raises(DmpArgumentError):
        via_phase_heuristic(model_1d, st, np.array([0.5]), 1.0)

    reverse = init_adaptation(model_1d, [1.0], [0.0], direction=Direction.REVERSE)
    assert via_phase_heuristic(model_1d, reverse, np.array([0.5]), 0.9) < 0.9


def test_kkt_and_penalized_oracles_agree(model_2d):
    eps = EpsilonProfile()
    boundary = (StateTriplet.at_rest(np.zeros(2)), StateTriplet.at_rest(np.array([0.5, 0.7])))
    vias = [ViaPoint("a", 0.4, [0.2, 0.6])]
    exact = batch_solve(model_2d, boundary, [], vias, eps, method="kkt")
    penalized = batch_solve(model_2d, boundary, [], vias, eps, method="penalized")
    assert relative_gap(penalized, exact) < 1e-5
    nt.assert_allclose(exact.T @ model_2d.basis.phi(0.4), [0.2, 0.6], atol=1e-6)

    blocks = oracle_blocks(model_2d, boundary, [], vias, eps, Direction.FORWARD)
    assert penalized_cost(model_2d, penalized, blocks) <= penalized_cost(model_2d, exact, blocks) * (1 + 1e-9)


def test_auto_oracle_falls_back_on_long_history():
    rng = np.random.default_rng(8)
    model, st = random_run(rng, 10, 1, 120)
    with pytest.raises(OracleError):
        oracle_for(model, st, method="kkt")
    nt.assert_allclose(oracle_for(model, st, method="auto"), oracle_for(model, st))


def test_unknown_oracle_method(model_1d):
    boundary = (StateTriplet.at_rest(np.zeros(1)), StateTriplet.at_rest(np.ones(1)))
    with pytest.raises(DmpArgumentError):
        batch_solve(model_1d, boundary, [], [], EpsilonProfile(), method="qr")


def test_init_validates_inputs(model_2d):
    with pytest.raises(DmpArgumentError):
        init_adaptation(model_2d, [0.0], [1.0, 0.0])
    with pytest.raises(DmpArgumentError):
        init_adaptation(model_2d, [0.0, np.nan], [1.0, 0.0])
    with pytest.raises(DmpArgumentError):
        init_adaptation(model_2d, [0.0, 0.0], [1.0, 0.0], W_init=np.zeros((3, 2)))


def test_recursive_weights_match_batch_solution_at_default_epsilon():
    rng = np.random.default_rng(77)
    for trial in range(6):
        K = [10, 30][trial % 2]
        n = [1, 2, 3][trial % 3]
        model, st = random_run(rng, K, n, int(rng.integers(100, 201)), eps=EpsilonProfile())
        assert relative_gap(st.W, oracle_for(model, st)) < 5e-6, f"trial {trial} (K={K}, n={n})"


@pytest.mark.parametrize("phase", [0.0, -0.1, 1.2])
def test_via_phase_outside_domain_is_rejected(phase):
    with pytest.raises(DmpArgumentError, match=r"\(0, 1\]"):
        ViaPoint("bad", phase, [0.5])


def test_reverse_via_phase_heuristic_never_returns_zero(model_1d):
    reverse = init_adaptation(model_1d, [1.0], [0.0], direction=Direction.REVERSE)
    # The reverse goal sits at phase 0
    assert via_phase_heuristic(model_1d, reverse, np.array([0.0]), 0.5) > 0.0


def run_to_saturation(model, st, goal, ds=0.5):
    phases = np.linspace(0.0, 1.0, 201)
    for s_prev, s in zip(phases[:-1], phases[1:-1]):
        st.step(PhasePair(s, ds, s_prev, ds, 0.0), goal)
    return phases[-2]


def test_saturated_goal_jump_reaches_new_goal(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0], record_history=True)
    s_last = run_to_saturation(model_1d, st, [1.0])
    near_goal = [r for r in st.state_history if abs(r.phase - 1.0) < st.terminal_window]
    assert near_goal

    st.step(PhasePair(1.0, 0.0, s_last, 0.5, 0.0), [2.0])
    assert st.residuals()["goal_position"] <= 1e-4
    nt.assert_allclose(st.W.T @ model_1d.basis.phi(1.0), [2.0], atol=1e-4)
    assert all(abs(r.phase - 1.0) >= st.terminal_window for r in st.state_history)
    assert relative_gap(st.W, oracle_for(model_1d, st)) < 1e-5


def test_saturated_phase_adds_no_state_constraints(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0], record_history=True)
    s_last = run_to_saturation(model_1d, st, [1.0])
    st.step(PhasePair(1.0, 0.0, s_last, 0.5, 0.0), [1.0])
    kept = len(st.state_history)
    for goal in np.linspace(1.0, 1.5, 50):
        st.step(PhasePair(1.0, 0.0, 1.0, 0.0, 0.0), [goal])
    assert len(st.state_history) == kept
    assert st.residuals()["goal_position"] <= 1e-4


def test_release_keeps_constraints_outside_window(model_1d):
    st = init_adaptation(model_1d, [0.0], [1.0], record_history=True)
    run_to_saturation(model_1d, st, [1.0])
    before = len(st.state_history)
    released = st.release_terminal_constraints()
    assert 0 < released < before
    assert len(st.state_history) == before - released
    assert st.release_terminal_constraints() == 0

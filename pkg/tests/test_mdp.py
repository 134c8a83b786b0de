import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bitdlab.mdp import (Policy, SamplingTables, TabularMdp, Trajectory, Transition,
                         backward_kernel, build_chain, build_two_state, check_trajectory, draw,
                         load_mdp, mdp_from_dict, policy_matrices, sample_episode,
                         transition_stream, visitation_distribution)
from oracles import SMALL_SPEC, chain_arrays


def test_chain_matches_independent_construction():
    P, R, d0, term, gamma = chain_arrays()
    m = build_chain()
    np.testing.assert_array_equal(m.transition, P)
    np.testing.assert_array_equal(m.reward, R)
    np.testing.assert_allclose(m.start_dist, d0)
    np.testing.assert_array_equal(m.terminal, term)
    assert m.gamma == gamma


def test_chain_reward_signs():
    m = build_chain(9, 5.0)
    assert m.reward[1, 0] == 5.0      # 1 -> 0, even
    assert m.reward[0, 1] == -5.0     # 0 -> 1, odd
    assert m.reward[0, 0] == 0.0      # 0 -> left terminal
    assert m.reward[8, 1] == 0.0      # 8 -> right terminal


def test_two_state_structure():
    m = build_two_state()
    assert m.n_states == 3 and m.n_actions == 1
    assert m.transition[0, 0, 1] == 1.0 and m.transition[1, 0, 2] == 1.0
    assert not m.reward.any()


def test_validation_rejects_bad_rows():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 0.5
    P[1, 0, 1] = 1.0
    with pytest.raises(ValueError):
        TabularMdp(P, np.zeros((2, 1)), np.array([1.0, 0]), np.array([False, True]), 0.9)


def test_validation_rejects_bad_gamma():
    with pytest.raises(ValueError):
        build_chain(gamma=1.0)


def test_arrays_are_read_only(chain9):
    with pytest.raises(ValueError):
        chain9.transition[0, 0, 0] = 1.0


def test_presets_and_json(tmp_path):
    assert mdp_from_dict({"preset": "chain", "n_nonterminal": 5}).n_states == 7
    with pytest.raises(ValueError):
        mdp_from_dict({"preset": "nope"})
    path = tmp_path / "m.json"
    path.write_text(json.dumps(SMALL_SPEC))
    m = load_mdp(path)
    assert m.n_states == 5 and m.terminal[4] and m.gamma == 0.9


def test_policy_matrices_rows_sum_to_one(chain9):
    P_pi, r_pi = policy_matrices(chain9, Policy.uniform(chain9))
    np.testing.assert_allclose(P_pi.sum(axis=1), 1.0)
    assert r_pi.shape == (chain9.n_states,)


@given(st.floats(0.0, 1.0, exclude_max=True))
def test_draw_matches_searchsorted(u):
    cdf = np.cumsum([0.2, 0.0, 0.5, 0.3])
    k = draw(cdf, u)
    assert k == min(int(np.searchsorted(cdf, u, side="right")), 3)
    assert k != 1  # zero-mass entries are never drawn


def test_sample_episode_is_consistent(chain9):
    rng = np.random.default_rng(0)
    for _ in range(20):
        traj = sample_episode(chain9, Policy.uniform(chain9), rng)
        check_trajectory(traj, chain9)
        assert traj.terminated


def test_check_trajectory_rejects_broken_chain(chain9):
    traj = Trajectory([Transition(0, 1, -5.0, 1), Transition(3, 1, 5.0, 4)])
    with pytest.raises(ValueError):
        check_trajectory(traj, chain9)


def test_returns_and_backward_returns():
    traj = Trajectory([Transition(0, 0, 1.0, 1), Transition(1, 0, 2.0, 2),
                       Transition(2, 0, 3.0, 3)], terminated=True)
    g = 0.9
    np.testing.assert_allclose(traj.returns(g), [1 + g * 2 + g * g * 3, 2 + g * 3, 3])
    lg = 0.5 * g
    np.testing.assert_allclose(traj.backward_returns(0.5, g),
                               [0.0, lg * 1.0, lg * 2.0 + lg * lg * 1.0])


def test_transition_stream_restarts_after_terminal(chain9):
    tables = SamplingTables.build(chain9, Policy.uniform(chain9))
    u = np.random.default_rng(1).random((3, 2000))
    steps = list(transition_stream(tables, u))
    assert steps[0].episode_start
    for a, b in zip(steps, steps[1:]):
        if a.terminal:
            assert b.episode_start
        else:
            assert b.state == a.next_state and not b.episode_start


def test_transition_stream_truncates(chain9):
    tables = SamplingTables.build(chain9, Policy.uniform(chain9))
    u = np.random.default_rng(2).random((3, 500))
    steps = list(transition_stream(tables, u, max_episode_steps=3))
    run = 0
    for st_ in steps:
        run = 1 if st_.episode_start else run + 1
        assert run <= 3


@pytest.mark.parametrize("name", ["chain9", "two_state", "chain5_g09", "small"])
def test_visitation_matches_frozen_oracle(name, benchmark_mdps, frozen):
    m = benchmark_mdps[name]
    d = visitation_distribution(m, Policy.uniform(m))
    np.testing.assert_allclose(d, frozen[name]["visitation"], atol=1e-10)
    assert d[m.terminal].sum() == 0.0


def test_visitation_matches_empirical_frequency(chain9):
    tables = SamplingTables.build(chain9, Policy.uniform(chain9))
    u = np.random.default_rng(3).random((3, 200_000))
    counts = np.bincount([s.state for s in transition_stream(tables, u)],
                         minlength=chain9.n_states)
    d = visitation_distribution(chain9, Policy.uniform(chain9))
    np.testing.assert_allclose(counts / counts.sum(), d, atol=5e-3)


@pytest.mark.parametrize("name", ["chain9", "small", "two_state"])
def test_backward_kernel_rows_are_distributions(name, kernels_by_name, benchmark_mdps):
    k = kernels_by_name[name]
    m = benchmark_mdps[name]
    mass = k.row_mass()
    np.testing.assert_allclose(mass[~m.terminal], 1.0, atol=1e-10)
    assert np.all(k.p_back >= 0) and np.all(k.p_start >= 0)


def test_backward_kernel_two_state(kernels_by_name):
    k = kernels_by_name["two_state"]
    np.testing.assert_allclose(k.visit_dist, [0.5, 0.5, 0.0])
    assert k.p_start[0] == pytest.approx(1.0)
    assert k.p_back[1, 0] == pytest.approx(1.0)


def test_backward_kernel_detailed_balance(kernels_by_name, benchmark_mdps):
    m = benchmark_mdps["small"]
    k = kernels_by_name["small"]
    P_pi, _ = policy_matrices(m, Policy.uniform(m))
    d = k.visit_dist
    live = ~m.terminal
    lhs = (d[:, None] * k.p_back)[np.ix_(live, live)]
    rhs = (d[:, None] * P_pi).T[np.ix_(live, live)]
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_visitation_rejects_bad_tol(chain9):
    with pytest.raises(ValueError):
        visitation_distribution(chain9, Policy.uniform(chain9), tol=0.0)


def test_backward_kernel_rejects_wrong_shape(chain9):
    with pytest.raises(ValueError):
        backward_kernel(chain9, Policy.uniform(chain9), visit_dist=np.ones(3))

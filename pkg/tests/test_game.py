import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import block_diag

from sparselq._engine import SolverOptions
from sparselq.game import (GameConfig, coalition_game, coupled_nash, decoupled_nash,
                           proportional_budgets, replay_log, social_game)
from sparselq.grasp import grasp_minimize, initial_gain
from sparselq.kernels import solve_care, spectral_abscissa
from sparselq.objective import AgentWeights, DesignWeights, Objective
from sparselq.system import AgentPartition, LtiSystem, card_off, support


def own_grad_norm(system, part, aw, i, K):
    obj = Objective.selfish(system, part, aw, i)
    rows = part.input_rows(system, i)
    g = obj.gradient(K)
    mask = support(K[rows]) | system.diag_mask[rows]
    return np.linalg.norm(g[mask]) / np.sqrt(system.q * system.m)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=6), st.integers(0, 200))
def test_proportional_budgets(counts, s):
    b = proportional_budgets(AgentPartition(tuple(counts)), s)
    floors = [s * c // sum(counts) for c in counts]
    left = s - sum(floors)
    assert 0 <= left < len(counts)
    assert list(b) == [f + (k < left) for k, f in enumerate(floors)]


def test_budget_examples():
    assert proportional_budgets(AgentPartition((2, 2, 2, 2)), 6) == (2, 2, 1, 1)
    assert proportional_budgets(AgentPartition((1, 3)), 5) == (2, 3)


def test_game_config_validation():
    with pytest.raises(ValueError):
        GameConfig(3, mode="greedy")
    with pytest.raises(ValueError):
        GameConfig(-1)
    with pytest.raises(ValueError):
        GameConfig(4, initial_budgets=(1, 1))
    with pytest.raises(ValueError):
        GameConfig(2, order=(0, 0)).player_order(2)
    assert GameConfig(4, initial_budgets=(3, 1)).budgets(AgentPartition((1, 1))) == (3, 1)


def single_agent(system, w):
    return AgentPartition((system.n,)), AgentWeights((w.Q,), (w.R,))


@pytest.mark.parametrize("s", [0, 5])
def test_single_player_game_is_centralized(four_node, s):
    system, _, w, _ = four_node
    part, aw = single_agent(system, w)
    opts = SolverOptions()
    cne = coupled_nash(system, part, aw, GameConfig(s, opts=opts))
    ref = grasp_minimize(system, w, s, opts=opts)
    np.testing.assert_array_equal(cne.K, ref.K)
    soc = social_game(system, part, w, GameConfig(s, "social", opts=opts))
    assert soc.J == pytest.approx(ref.J, rel=1e-9)


def test_coupled_nash_at_zero_is_decoupled_nash(four_node):
    system, part, w, aw = four_node
    cne = coupled_nash(system, part, aw, GameConfig(0))
    dne = decoupled_nash(system, part, aw)
    np.testing.assert_array_equal(cne.K, dne.K)
    assert cne.player_values == dne.player_values
    assert card_off(dne.K, system) == 0


@pytest.mark.parametrize("s", [2, 7])
def test_coupled_nash_feasible_and_stationary(four_node, s):
    system, part, w, aw = four_node
    cfg = GameConfig(s)
    res = coupled_nash(system, part, aw, cfg)
    assert res.converged
    assert card_off(res.K, system) <= s
    assert sum(res.player_links) == card_off(res.K, system)
    assert spectral_abscissa(system.A - system.B @ res.K) < -1e-8
    for i in range(part.r):
        assert own_grad_norm(system, part, aw, i, res.K) < cfg.opts.eps_polish
        Ji = Objective.selfish(system, part, aw, i).value(res.K)
        assert res.player_values[i] == pytest.approx(Ji, rel=1e-14)
    assert res.J == pytest.approx(sum(res.player_values), rel=1e-14)


def test_social_game_value_is_social_energy(four_node):
    system, part, w, aw = four_node
    res = social_game(system, part, w, GameConfig(6, "social"))
    assert res.converged
    J = Objective.social(system, w).value(res.K)
    assert res.J == pytest.approx(J, rel=1e-14)
    assert all(v == pytest.approx(J, rel=1e-14) for v in res.player_values)
    assert card_off(res.K, system) <= 6


@pytest.mark.parametrize("mode", ["selfish", "social"])
def test_broadcast_log_replays_exactly(four_node, mode):
    system, part, w, aw = four_node
    K0 = initial_gain(system, w)
    if mode == "selfish":
        res = coupled_nash(system, part, aw, GameConfig(5), K0=K0)
    else:
        res = social_game(system, part, w, GameConfig(5, "social"), K0=K0)
    assert res.broadcast_log
    np.testing.assert_array_equal(replay_log(K0, res.broadcast_log), res.K)
    assert {rec.player for rec in res.broadcast_log} <= set(range(part.r))


def test_reversed_order_still_feasible(four_node):
    system, part, w, aw = four_node
    res = coupled_nash(system, part, aw, GameConfig(4, order=(1, 0)))
    assert res.converged and card_off(res.K, system) <= 4
    first = next(rec for rec in res.broadcast_log if rec.phase == "pursuit")
    assert first.player == 1


def test_singleton_coalitions_match_coupled_nash(four_node):
    system, part, w, aw = four_node
    cfg = GameConfig(4)
    a = coalition_game(system, part, aw, [[0], [1]], cfg)
    b = coupled_nash(system, part, aw, cfg)
    np.testing.assert_array_equal(a.K, b.K)


def test_grand_coalition_is_centralized(four_node):
    system, part, w, aw = four_node
    cfg = GameConfig(4)
    a = coalition_game(system, part, aw, [[0, 1]], cfg)
    b = grasp_minimize(system, w, 4, opts=cfg.opts)
    np.testing.assert_array_equal(a.K, b.K)


def test_coalitions_must_partition(four_node):
    system, part, w, aw = four_node
    with pytest.raises(ValueError):
        coalition_game(system, part, aw, [[0]], GameConfig(2))


def decoupled_system(rng, n=3):
    # block-diagonal dynamics, each agent weighting only its own node
    As, Bs = [], []
    for _ in range(n):
        A = rng.standard_normal((2, 2))
        As.append(A)
        Bs.append(rng.standard_normal((2, 1)))
    D = rng.standard_normal((2 * n, 1))
    system = LtiSystem(block_diag(*As), block_diag(*Bs), D, ((2, 1),) * n)
    part = AgentPartition((1,) * n)
    Qs = []
    for j in range(n):
        Q = np.zeros((2 * n, 2 * n))
        M = rng.standard_normal((2, 2))
        Q[2 * j:2 * j + 2, 2 * j:2 * j + 2] = M @ M.T + 0.1 * np.eye(2)
        Qs.append(Q)
    aw = AgentWeights(tuple(Qs), tuple(np.eye(1) for _ in range(n)))
    return system, part, aw, As, Bs


def test_decoupled_system_matches_block_care(rng):
    system, part, aw, As, Bs = decoupled_system(rng)
    w = aw.social()
    expected = []
    for j, (A, B) in enumerate(zip(As, Bs)):
        sl = slice(2 * j, 2 * j + 2)
        P, _ = solve_care(A, B, aw.Q[j][sl, sl], np.eye(1))
        d = system.D[sl, 0]
        expected.append(d @ P @ d)
    for res in (decoupled_nash(system, part, aw), coupled_nash(system, part, aw, GameConfig(0))):
        np.testing.assert_allclose(res.player_values, expected, rtol=1e-6)
    cen = grasp_minimize(system, w, 0)
    assert cen.J == pytest.approx(sum(expected), rel=1e-6)


def test_decoupled_nash_from_detuned_start(rng):
    system, part, aw, As, Bs = decoupled_system(rng)
    K0 = initial_gain(system, aw.social())
    ref = decoupled_nash(system, part, aw)
    res = decoupled_nash(system, part, aw, SolverOptions(eps_polish=1e-10), K0=1.2 * K0)
    assert res.converged
    np.testing.assert_allclose(res.player_values, ref.player_values, rtol=1e-9)


def test_decoupled_nash_drops_links(four_node):
    system, part, w, aw = four_node
    K0 = initial_gain(system, w)
    K0[0, 7] = 0.3
    res = decoupled_nash(system, part, aw, K0=K0)
    assert card_off(res.K, system) == 0

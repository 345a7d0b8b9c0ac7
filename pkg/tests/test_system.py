import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sparselq.system import (AgentPartition, LtiSystem, block_project, card_off, closed_loop,
                             is_stabilizing, prune_top_s, top_s_mask)

NODES = ((2, 1), (3, 2), (1, 1))


def diag_oracle(nodes):
    q = sum(p for _, p in nodes)
    m = sum(a for a, _ in nodes)
    M = np.zeros((q, m), dtype=bool)
    r0 = c0 = 0
    for a, p in nodes:
        M[r0:r0 + p, c0:c0 + a] = True
        r0, c0 = r0 + p, c0 + a
    return M


def test_diag_mask_and_max_links():
    sys_ = LtiSystem(np.eye(6), np.zeros((6, 4)), np.ones(6), NODES)
    np.testing.assert_array_equal(sys_.diag_mask, diag_oracle(NODES))
    assert sys_.max_links == 4 * 6 - (2 + 6 + 1)
    assert (sys_.m, sys_.q, sys_.n) == (6, 4, 3)
    np.testing.assert_array_equal(sys_.state_node, [0, 0, 1, 1, 1, 2])
    np.testing.assert_array_equal(sys_.input_node, [0, 1, 1, 2])


def test_node_without_inputs():
    nodes = ((2, 0), (2, 1))
    sys_ = LtiSystem(np.eye(4), np.ones((4, 1)), np.ones(4), nodes)
    assert sys_.max_links == 2
    np.testing.assert_array_equal(sys_.diag_mask, [[False, False, True, True]])


@pytest.mark.parametrize("kwargs, msg", [
    (dict(A=np.ones((2, 3))), "square"),
    (dict(B=np.ones((5, 2))), "rows"),
    (dict(nodes=((1, 1), (1, 1))), "state counts"),
    (dict(nodes=((3, 1),)), "input counts"),
    (dict(A=np.full((3, 3), np.nan)), "non-finite"),
])
def test_system_validation(kwargs, msg):
    base = dict(A=np.eye(3), B=np.ones((3, 2)), D=np.ones(3), nodes=((1, 1), (2, 1)))
    base.update(kwargs)
    with pytest.raises(ValueError, match=msg):
        LtiSystem(**base)


def test_partition_rows_and_cols():
    sys_ = LtiSystem(np.eye(6), np.zeros((6, 4)), np.ones(6), NODES)
    part = AgentPartition((1, 2))
    np.testing.assert_array_equal(part.input_rows(sys_, 0), [0])
    np.testing.assert_array_equal(part.input_rows(sys_, 1), [1, 2, 3])
    np.testing.assert_array_equal(part.state_cols(sys_, 1), [2, 3, 4, 5])
    assert part.inputs_per_agent(sys_) == [1, 3]
    with pytest.raises(ValueError):
        AgentPartition((2, 0))
    with pytest.raises(ValueError):
        AgentPartition((2, 2)).check(sys_)


def test_card_off_and_projection(rng):
    diag = diag_oracle(NODES)
    K = rng.standard_normal(diag.shape)
    K[0, 3] = 0.0
    K[2, 0] = 1e-13  # below the link threshold
    assert card_off(K, NODES) == int((~diag).sum()) - 2
    np.testing.assert_array_equal(block_project(K, NODES, "diag"), np.where(diag, K, 0))
    np.testing.assert_array_equal(block_project(K, NODES, "off"), np.where(diag, 0, K))
    assert card_off(block_project(K, NODES, "diag"), NODES) == 0
    with pytest.raises(ValueError):
        block_project(K, NODES, "upper")
    with pytest.raises(ValueError):
        card_off(K[:, :-1], NODES)


def test_top_s_ties_prefer_lower_index():
    vals = np.array([[1.0, -2.0, 2.0], [2.0, 0.5, 0.0]])
    cand = np.ones_like(vals, dtype=bool)
    np.testing.assert_array_equal(
        top_s_mask(vals, cand, 2), [[False, True, True], [False, False, False]])
    # zero entries are never selected
    assert top_s_mask(vals, cand, 10).sum() == 5


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-10, 10, allow_subnormal=False)),
       st.integers(0, 30))
def test_prune_invariants(K, s):
    diag = diag_oracle(NODES)
    Kp = prune_top_s(K, NODES, s)
    np.testing.assert_array_equal(Kp[diag], K[diag])
    assert card_off(Kp, NODES) <= s
    kept = (Kp != 0) & ~diag
    dropped = (Kp == 0) & (K != 0) & ~diag & (np.abs(K) > 1e-12)
    if kept.any() and dropped.any():
        assert np.abs(K[kept]).min() >= np.abs(K[dropped]).max()
    # kept entries are unchanged
    np.testing.assert_array_equal(Kp[kept], K[kept])
    assert card_off(Kp, NODES) == min(s, card_off(K, NODES))


def test_prune_rejects_negative_budget():
    with pytest.raises(ValueError):
        prune_top_s(np.zeros((4, 6)), NODES, -1)


def test_closed_loop_margin():
    A = np.diag([-1.0, -2.0])
    sys_ = LtiSystem(A, np.eye(2), np.ones(2), ((1, 1), (1, 1)))
    Acl, ok, a = closed_loop(sys_, np.zeros((2, 2)))
    assert ok and a == pytest.approx(-1.0)
    assert not is_stabilizing(sys_, np.diag([-1.0, 0.0]))
    assert not is_stabilizing(sys_, np.diag([-1.0 + 1e-9, 0.0]))

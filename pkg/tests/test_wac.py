import itertools

import numpy as np
import pytest

from sparselq.errors import InvalidParams
from sparselq.kernels import spectral_abscissa
from sparselq.system import AgentPartition
from sparselq.wac import (SwingParams, WacLayout, build_area_Q, build_permutation,
                          build_social_Q, synth_power_system, wac_weights)

LAYOUTS = [(3, 3), (2, 3, 2, 4), (3,) * 5, (2, 2, 3, 2, 2, 3)]


def split(x, counts):
    off = np.concatenate([[0], np.cumsum(counts)])
    theta = np.array([x[a] for a in off[:-1]])
    omega = np.array([x[a + 1] for a in off[:-1]])
    rest = [x[a + 2:b] for a, b in zip(off[:-1], off[1:])]
    return theta, omega, rest


def social_energy(x, counts):
    theta, omega, rest = split(x, counts)
    n = len(counts)
    e = 0.0
    for j, k in itertools.combinations(range(n), 2):
        e += (theta[j] - theta[k]) ** 2 + (omega[j] - omega[k]) ** 2
    return e + sum(np.sum(r ** 2) for r in rest)


def area_energy(x, counts, area):
    theta, omega, rest = split(x, counts)
    n = len(counts)
    e = 0.0
    for j, k in itertools.combinations(range(n), 2):
        pair = (theta[j] - theta[k]) ** 2 + (omega[j] - omega[k]) ** 2
        inside = (j in area) + (k in area)
        e += pair if inside == 2 else 0.5 * pair if inside == 1 else 0.0
    return e + sum(np.sum(rest[j] ** 2) for j in area)


def partitions_of(n):
    yield (n,)
    yield (1,) * n
    if n >= 3:
        yield (1, n - 1)
        yield (n - 2, 2)


@pytest.mark.parametrize("counts", LAYOUTS)
def test_quadratic_forms_match_direct_summation(rng, counts):
    layout = WacLayout(counts)
    Q = build_social_Q(layout)
    for agents in partitions_of(layout.n):
        part = AgentPartition(agents)
        Qi = [build_area_Q(layout, part, i) for i in range(part.r)]
        for _ in range(25):
            x = rng.standard_normal(layout.m)
            ref = social_energy(x, counts)
            assert x @ Q @ x == pytest.approx(ref, rel=1e-10)
            for i in range(part.r):
                area = set(part.nodes_of(i))
                assert x @ Qi[i] @ x == pytest.approx(area_energy(x, counts, area), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("counts", LAYOUTS)
def test_area_weights_sum_to_social(counts):
    layout = WacLayout(counts)
    Q = build_social_Q(layout)
    for agents in partitions_of(layout.n):
        part = AgentPartition(agents)
        total = sum(build_area_Q(layout, part, i) for i in range(part.r))
        np.testing.assert_allclose(total, Q, rtol=0, atol=1e-12)


def test_single_area_is_social():
    layout = WacLayout((3, 3, 3))
    np.testing.assert_allclose(build_area_Q(layout, AgentPartition((3,)), 0),
                               build_social_Q(layout), atol=1e-14)


@pytest.mark.parametrize("counts", LAYOUTS)
def test_weights_psd_with_consensus_kernel(counts):
    layout = WacLayout(counts)
    Q = build_social_Q(layout)
    assert np.linalg.eigvalsh(Q).min() > -1e-12
    # a common angle shift (or common frequency) costs nothing
    off = layout.offsets
    for k in (0, 1):
        v = np.zeros(layout.m)
        v[off + k] = 1.0
        np.testing.assert_allclose(Q @ v, 0, atol=1e-13)
    part = AgentPartition((1,) * layout.n)
    for i in range(part.r):
        assert np.linalg.eigvalsh(build_area_Q(layout, part, i)).min() > -1e-12


def test_two_node_eigenvalues():
    # angles and frequencies each see the 2-node Laplacian [[1,-1],[-1,1]], eigenvalues 0 and 2
    Q = build_social_Q(WacLayout((3, 3)))
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(Q)), [0, 0, 1, 1, 2, 2], atol=1e-13)


def test_permutation_orders_states():
    P = build_permutation(WacLayout((3, 2)))
    x = np.arange(5.0)  # node 0: 0,1,2  node 1: 3,4
    np.testing.assert_array_equal(P @ x, [0, 3, 1, 4, 2])
    np.testing.assert_array_equal(P @ P.T, np.eye(5))


def test_layout_validation():
    with pytest.raises(ValueError):
        WacLayout((3, 1))
    with pytest.raises(ValueError):
        build_area_Q(WacLayout((2, 2)), AgentPartition((1, 2)), 0)


def test_wac_weights_shapes(eight_node):
    system, part, w, aw = eight_node
    assert w.Q.shape == (24, 24) and w.R.shape == (8, 8)
    assert aw.sum_matches_social(w, tol=1e-12)
    assert [R.shape for R in aw.R] == [(2, 2)] * 4


def test_swing_model_two_generators():
    T = np.array([[0.0, 2.0], [2.0, 0.0]])
    p = SwingParams(H=[1.0, 2.0], d=[0.5, 1.0], tau=[2.0, 4.0], coupling=T, eps_g=0.1)
    sys_ = synth_power_system(p, disturbance_node=1)
    A, B = sys_.A, sys_.B
    # generator 0: 2 H freq' = -d freq - T (a0 - a1) - eps a0 + E
    np.testing.assert_allclose(A[1], [-(2.0 + 0.1) / 2, -0.25, 0.5, 1.0, 0, 0])
    np.testing.assert_allclose(A[4], [0.5, 0, 0, -(2.0 + 0.1) / 4, -0.25, 0.25])
    np.testing.assert_allclose(A[0], [0, 1, 0, 0, 0, 0])
    np.testing.assert_allclose(A[5], [0, 0, 0, 0, 0, -0.25])
    np.testing.assert_allclose(B[:, 1], [0, 0, 0, 0, 0, 0.25])
    np.testing.assert_array_equal(sys_.D[:, 0], [0, 0, 0, 0, 1, 0])
    assert sys_.nodes == ((3, 1), (3, 1))


@pytest.mark.parametrize("n, seed", [(4, 1), (8, 1), (6, 7), (10, 3)])
def test_synthetic_systems_are_stable(n, seed):
    sys_ = synth_power_system(SwingParams.random(n, seed=seed))
    assert spectral_abscissa(sys_.A) < 0
    assert (sys_.m, sys_.q) == (3 * n, n)


def test_random_params_reproducible():
    a, b = SwingParams.random(6, seed=4), SwingParams.random(6, seed=4)
    np.testing.assert_array_equal(a.coupling, b.coupling)
    np.testing.assert_array_equal(a.H, b.H)


@pytest.mark.parametrize("kwargs", [
    dict(coupling=np.array([[0, 1], [2, 0]])),
    dict(coupling=np.array([[0, -1], [-1, 0]])),
    dict(coupling=np.zeros((2, 2))),
    dict(H=[1.0, -1.0]),
    dict(eps_g=0.0),
])
def test_swing_params_validation(kwargs):
    base = dict(H=[1.0, 1.0], d=1.0, tau=1.0, coupling=np.array([[0, 1], [1, 0]]), eps_g=0.1)
    base.update(kwargs)
    with pytest.raises(InvalidParams):
        SwingParams(**base)


def test_synthesis_argument_checks():
    p = SwingParams.uniform(3)
    with pytest.raises(InvalidParams):
        synth_power_system(p, AgentPartition((1, 1)))
    with pytest.raises(InvalidParams):
        synth_power_system(p, disturbance_node=3)

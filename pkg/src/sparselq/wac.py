"""
Wide-area-control weights and a synthetic multimachine swing model.

Every generator node stores its states as (angle, frequency, rest...).
The social state weight penalizes angle and frequency disagreement over
all generator pairs plus the energy of the remaining states; the area
weights split that energy so that the area matrices add up to the social
one:

    x' Q_i x = sum over pairs inside area i            (angle, frequency)
             + 1/2 sum over pairs with one end in area i
             + sum of squared remaining states of area i
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag
from scipy.sparse.csgraph import connected_components

from .errors import InvalidParams
from .objective import AgentWeights, DesignWeights
from .system import AgentPartition, LtiSystem

__all__ = [
    "WacLayout",
    "SwingParams",
    "build_permutation",
    "build_social_Q",
    "build_area_Q",
    "wac_weights",
    "synth_power_system",
]


@dataclass(frozen=True)
class WacLayout:
    """Per-node state counts; each node starts with angle then frequency."""

    state_counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.state_counts)
        if not counts:
            raise ValueError("layout needs at least one node")
        if any(c < 2 for c in counts):
            raise ValueError("every node needs an angle and a frequency state")
        object.__setattr__(self, "state_counts", counts)

    @classmethod
    def from_system(cls, system: LtiSystem):
        return cls(tuple(mj for mj, _ in system.nodes))

    @property
    def n(self):
        return len(self.state_counts)

    @property
    def m(self):
        return sum(self.state_counts)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.state_counts)])[:-1]


def build_permutation(layout: WacLayout) -> np.ndarray:
    """0/1 matrix stacking all angles, then all frequencies, then the rest."""
    n, m = layout.n, layout.m
    order = [int(k) for k in layout.offsets]
    order += [int(k) + 1 for k in layout.offsets]
    for k, mk in zip(layout.offsets, layout.state_counts):
        order += list(range(int(k) + 2, int(k) + mk))
    P = np.zeros((m, m))
    P[np.arange(m), order] = 1.0
    return P


def _laplacian(n):
    return n * np.eye(n) - np.ones((n, n))


def build_social_Q(layout: WacLayout) -> np.ndarray:
    P = build_permutation(layout)
    n = layout.n
    Qp = block_diag(_laplacian(n), _laplacian(n), np.eye(layout.m - 2 * n))
    return P.T @ Qp @ P


def _area_indicator(layout, part, i):
    # node-level indicator of agent i and its expansion to the "rest" states
    n = layout.n
    nodes = part.nodes_of(i)
    ind = np.zeros(n)
    ind[list(nodes)] = 1.0
    rest = np.concatenate([np.full(mk - 2, ind[j]) for j, mk in enumerate(layout.state_counts)])
    return np.diag(ind), np.diag(rest)


def build_area_Q(layout: WacLayout, part: AgentPartition, i: int) -> np.ndarray:
    """State weight of area ``i`` (intra-area plus half of the inter-area energy)."""
    if part.n != layout.n:
        raise ValueError("partition and layout disagree on the node count")
    n = layout.n
    ni = part.node_counts[i]
    Ii, Xi = _area_indicator(layout, part, i)
    ones = np.ones((n, n))
    intra = Ii @ (ni * np.eye(n) - ones) @ Ii
    # cross term carries a minus sign; the direct pairwise sum confirms it
    inter = (n - 2 * ni) / 2.0 * Ii + ni / 2.0 * np.eye(n) - Ii @ ones @ (np.eye(n) - Ii)
    inter = 0.5 * (inter + inter.T)
    lap = intra + inter
    Qp = block_diag(lap, lap, Xi)
    P = build_permutation(layout)
    Q = P.T @ Qp @ P
    return 0.5 * (Q + Q.T)


def wac_weights(system: LtiSystem, part: AgentPartition):
    """``(DesignWeights, AgentWeights)`` with identity input weights."""
    layout = WacLayout.from_system(system)
    Q = build_social_Q(layout)
    Qi = [build_area_Q(layout, part, i) for i in range(part.r)]
    N = part.inputs_per_agent(system)
    return DesignWeights(Q, np.eye(system.q)), AgentWeights(tuple(Qi), tuple(np.eye(k) for k in N))


@dataclass(frozen=True, eq=False)
class SwingParams:
    """Third-order generator parameters.

    ``coupling`` holds synchronizing coefficients T_jk (symmetric,
    nonnegative, zero diagonal); ``eps_g`` grounds the common angle mode.
    """

    H: np.ndarray
    d: np.ndarray
    tau: np.ndarray
    coupling: np.ndarray
    eps_g: float = 0.05
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.atleast_1d(np.asarray(self.H, dtype=float))
        n = H.size
        d = np.broadcast_to(np.asarray(self.d, dtype=float), (n,)).copy()
        tau = np.broadcast_to(np.asarray(self.tau, dtype=float), (n,)).copy()
        b = np.ones(n) if self.b is None else np.broadcast_to(np.asarray(self.b, dtype=float), (n,)).copy()
        T = np.asarray(self.coupling, dtype=float)
        if T.shape != (n, n):
            raise InvalidParams(f"coupling must be {n}x{n}, got {T.shape}")
        if np.any(H <= 0) or np.any(d <= 0) or np.any(tau <= 0):
            raise InvalidParams("H, d and tau must be positive")
        if not self.eps_g > 0:
            raise InvalidParams("eps_g must be positive")
        if not np.allclose(T, T.T):
            raise InvalidParams("coupling must be symmetric")
        off = T - np.diag(np.diag(T))
        if np.any(off < 0):
            raise InvalidParams("coupling coefficients must be nonnegative")
        if n > 1 and connected_components(off > 0, directed=False)[0] != 1:
            raise InvalidParams("coupling graph must be connected")
        for name, v in (("H", H), ("d", d), ("tau", tau), ("b", b), ("coupling", off)):
            object.__setattr__(self, name, v)

    @property
    def n(self):
        return self.H.size

    @classmethod
    def uniform(cls, n, H=4.0, d=1.0, tau=2.0, ring=1.0, eps_g=0.05):
        """Identical generators on a ring (a single edge for ``n == 2``)."""
        T = np.zeros((n, n))
        for j in range(n):
            k = (j + 1) % n
            if k != j:
                T[j, k] = T[k, j] = ring
        return cls(np.full(n, H), np.full(n, d), np.full(n, tau), T, eps_g)

    @classmethod
    def random(cls, n, seed=0, chords=None, eps_g=1.0):
        """Heterogeneous generators on a ring with a few random chords."""
        rng = np.random.default_rng(seed)
        H = rng.uniform(3.0, 6.0, n)
        d = rng.uniform(0.6, 1.4, n)
        tau = rng.uniform(1.0, 3.0, n)
        T = np.zeros((n, n))
        for j in range(n):
            k = (j + 1) % n
            if k != j:
                T[j, k] = T[k, j] = rng.uniform(0.5, 1.5)
        chords = n // 2 if chords is None else chords
        for _ in range(chords):
            j, k = rng.choice(n, 2, replace=False)
            T[j, k] = T[k, j] = T[j, k] + rng.uniform(0.2, 0.8)
        return cls(H, d, tau, T, eps_g)

    def to_dict(self):
        return {
            "H": self.H.tolist(), "d": self.d.tolist(), "tau": self.tau.tolist(),
            "coupling": self.coupling.tolist(), "eps_g": self.eps_g, "b": self.b.tolist(),
        }


def synth_power_system(params: SwingParams, part: Optional[AgentPartition] = None,
                       disturbance_node: int = 0) -> LtiSystem:
    """Linearized swing + excitation model, three states and one input per generator.

    Per generator j (states angle, frequency, excitation)::

        angle'          = freq
        2 H_j freq'     = -d_j freq - sum_k T_jk (angle_j - angle_k) - eps_g angle_j + b_j E_j
        tau_j E'        = -E_j + u_j

    The disturbance enters the frequency equation of ``disturbance_node``.
    """
    n = params.n
    if part is not None and part.n != n:
        raise InvalidParams(f"partition covers {part.n} nodes, model has {n}")
    if not 0 <= disturbance_node < n:
        raise InvalidParams(f"disturbance node {disturbance_node} out of range")
    T = params.coupling
    lap = np.diag(T.sum(axis=1)) - T
    m = 3 * n
    A = np.zeros((m, m))
    B = np.zeros((m, n))
    for j in range(n):
        a, w, e = 3 * j, 3 * j + 1, 3 * j + 2
        A[a, w] = 1.0
        inv2H = 1.0 / (2.0 * params.H[j])
        for k in range(n):
            A[w, 3 * k] = -lap[j, k] * inv2H
        A[w, a] -= params.eps_g * inv2H
        A[w, w] = -params.d[j] * inv2H
        A[w, e] = params.b[j] * inv2H
        A[e, e] = -1.0 / params.tau[j]
        B[e, j] = 1.0 / params.tau[j]
    D = np.zeros((m, 1))
    D[3 * disturbance_node + 1, 0] = 1.0
    return LtiSystem(A, B, D, tuple((3, 1) for _ in range(n)))

"""
Networked LTI system, agent partitions and block-sparsity operators.

Feedback gains are plain ``(q, m)`` float arrays. Their block grid is fixed
by the node list of the owning :class:`LtiSystem`: block ``(i, j)`` maps
the ``m_j`` states of node ``j`` to the ``p_i`` inputs of node ``i``.
Diagonal blocks are local feedback; every nonzero entry of an
off-diagonal block is a communication link.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Tuple

import numpy as np

from .kernels import spectral_abscissa

__all__ = [
    "ZERO_TOL",
    "STABILITY_MARGIN",
    "LtiSystem",
    "AgentPartition",
    "support",
    "card_off",
    "block_project",
    "prune_top_s",
    "top_s_mask",
    "closed_loop",
    "is_stabilizing",
]

# an entry counts as a link iff its magnitude exceeds this
ZERO_TOL = 1e-12
# closed loop must have spectral abscissa below -STABILITY_MARGIN
STABILITY_MARGIN = 1e-8


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """``x' = A x + B u + D w`` with a scalar disturbance ``w``."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    nodes: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        D = np.asarray(self.D, dtype=float).reshape(-1, 1)
        nodes = tuple((int(mj), int(pj)) for mj, pj in self.nodes)
        m = A.shape[0]
        if A.shape != (m, m):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.ndim == 1:
            B = B.reshape(m, -1)
        if B.shape[0] != m:
            raise ValueError(f"B has {B.shape[0]} rows, expected {m}")
        if D.shape[0] != m:
            raise ValueError(f"D has {D.shape[0]} rows, expected {m}")
        if not nodes:
            raise ValueError("at least one node is required")
        if any(mj < 1 or pj < 0 for mj, pj in nodes):
            raise ValueError("every node needs m_j >= 1 and p_j >= 0")
        if sum(mj for mj, _ in nodes) != m:
            raise ValueError("node state counts do not sum to m")
        if sum(pj for _, pj in nodes) != B.shape[1]:
            raise ValueError("node input counts do not sum to q")
        for name, M in (("A", A), ("B", B), ("D", D)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "nodes", nodes)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    @property
    def n(self) -> int:
        return len(self.nodes)

    @cached_property
    def state_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([mj for mj, _ in self.nodes])])

    @cached_property
    def input_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([pj for _, pj in self.nodes])])

    @cached_property
    def state_node(self) -> np.ndarray:
        """Node index of every state."""
        return np.repeat(np.arange(self.n), [mj for mj, _ in self.nodes])

    @cached_property
    def input_node(self) -> np.ndarray:
        """Node index of every input."""
        return np.repeat(np.arange(self.n), [pj for _, pj in self.nodes])

    @cached_property
    def diag_mask(self) -> np.ndarray:
        """Boolean ``(q, m)`` mask of the diagonal (local-feedback) blocks."""
        mask = self.input_node[:, None] == self.state_node[None, :]
        mask.setflags(write=False)
        return mask

    @property
    def off_mask(self) -> np.ndarray:
        return ~self.diag_mask

    @property
    def max_links(self) -> int:
        """Number of off-diagonal-block entries, i.e. the densest budget."""
        return int(self.off_mask.sum())

    def with_disturbance(self, D):
        return LtiSystem(self.A, self.B, D, self.nodes)


@dataclass(frozen=True)
class AgentPartition:
    """Contiguous assignment of nodes to agents.

    ``node_counts[i]`` is the number of consecutive nodes owned by agent
    ``i``; agent 0 owns the first nodes.
    """

    node_counts: Tuple[int, ...]
    _ranges: Tuple[range, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.node_counts)
        if not counts or any(c < 1 for c in counts):
            raise ValueError("every agent must own at least one node")
        object.__setattr__(self, "node_counts", counts)
        starts = np.concatenate([[0], np.cumsum(counts)])
        object.__setattr__(
            self, "_ranges", tuple(range(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:]))
        )

    @classmethod
    def single(cls, system: LtiSystem) -> "AgentPartition":
        return cls((system.n,))

    @property
    def r(self) -> int:
        return len(self.node_counts)

    @property
    def n(self) -> int:
        return sum(self.node_counts)

    def nodes_of(self, i: int) -> range:
        return self._ranges[i]

    def check(self, system: LtiSystem):
        if self.n != system.n:
            raise ValueError(f"partition covers {self.n} nodes, system has {system.n}")

    def input_rows(self, system: LtiSystem, i: int) -> np.ndarray:
        nodes = self.nodes_of(i)
        off = system.input_offsets
        return np.arange(off[nodes.start], off[nodes.stop])

    def state_cols(self, system: LtiSystem, i: int) -> np.ndarray:
        nodes = self.nodes_of(i)
        off = system.state_offsets
        return np.arange(off[nodes.start], off[nodes.stop])

    def states_per_agent(self, system: LtiSystem):
        return [len(self.state_cols(system, i)) for i in range(self.r)]

    def inputs_per_agent(self, system: LtiSystem):
        return [len(self.input_rows(system, i)) for i in range(self.r)]


def _grid(nodes):
    if isinstance(nodes, LtiSystem):
        return nodes.diag_mask
    nodes = [(int(a), int(b)) for a, b in nodes]
    sn = np.repeat(np.arange(len(nodes)), [mj for mj, _ in nodes])
    inn = np.repeat(np.arange(len(nodes)), [pj for _, pj in nodes])
    return inn[:, None] == sn[None, :]


def _check_shape(K, diag):
    K = np.asarray(K, dtype=float)
    if K.shape != diag.shape:
        raise ValueError(f"gain shape {K.shape} does not match block grid {diag.shape}")
    return K


def support(K) -> np.ndarray:
    """Boolean mask of the nonzero entries of ``K``."""
    return np.abs(np.asarray(K)) > ZERO_TOL


def card_off(K, nodes) -> int:
    """Number of nonzero entries in the off-diagonal blocks of ``K``.

    ``nodes`` is an :class:`LtiSystem` or a sequence of ``(m_j, p_j)``.
    """
    diag = _grid(nodes)
    K = _check_shape(K, diag)
    return int(np.count_nonzero(support(K) & ~diag))


def block_project(K, nodes, part="off") -> np.ndarray:
    """Keep only the off-diagonal (``part="off"``) or diagonal blocks."""
    diag = _grid(nodes)
    K = _check_shape(K, diag)
    if part == "off":
        return np.where(diag, 0.0, K)
    if part == "diag":
        return np.where(diag, K, 0.0)
    raise ValueError(f"part must be 'off' or 'diag', not {part!r}")


def top_s_mask(values, candidates, s) -> np.ndarray:
    """Mask of the ``s`` largest-magnitude nonzero entries among ``candidates``.

    Equal magnitudes are resolved in favour of the smaller row-major index.
    """
    values = np.asarray(values, dtype=float)
    flat = np.abs(values).ravel()
    cand = np.flatnonzero(np.asarray(candidates).ravel() & (flat > ZERO_TOL))
    out = np.zeros(values.size, dtype=bool)
    s = int(s)
    if s > 0 and cand.size:
        order = np.argsort(-flat[cand], kind="stable")
        out[cand[order[:s]]] = True
    return out.reshape(values.shape)


def prune_top_s(K, nodes, s) -> np.ndarray:
    """``K_diag + [K_off]_s``: diagonal blocks untouched, ``s`` largest links kept."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    diag = _grid(nodes)
    K = _check_shape(K, diag)
    keep = diag | top_s_mask(K, ~diag, s)
    return np.where(keep, K, 0.0)


def closed_loop(system: LtiSystem, K, margin=STABILITY_MARGIN):
    """Return ``(A - B K, is_stable, abscissa)``."""
    K = _check_shape(K, system.diag_mask)
    Acl = system.A - system.B @ K
    a = spectral_abscissa(Acl)
    return Acl, a < -margin, a


def is_stabilizing(system: LtiSystem, K, margin=STABILITY_MARGIN) -> bool:
    return closed_loop(system, K, margin)[1]

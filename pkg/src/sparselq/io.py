"""
JSON formats for systems, weights and gains.

A system file looks like::

    {
      "m": 6, "q": 2,
      "A": [... m*m numbers, row-major ...],
      "B": [... m*q numbers, row-major ...],
      "D": [... m numbers ...],
      "nodes": [{"m_j": 3, "p_j": 1}, {"m_j": 3, "p_j": 1}],
      "agents": [1, 1],
      "weights": "wac"
    }

``agents`` lists how many consecutive nodes each agent owns (one agent
owning everything if omitted). ``weights`` is either ``"wac"`` (built from
the node layout) or an object with flat row-major ``Q``, ``R`` and lists
``Q_i``, ``R_i``.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .errors import SystemFileError
from .objective import AgentWeights, DesignWeights
from .system import AgentPartition, LtiSystem

__all__ = [
    "system_to_dict",
    "system_from_dict",
    "load_system",
    "save_system",
    "weights_to_dict",
    "weights_from_dict",
    "gain_to_triplets",
    "gain_from_triplets",
    "dump_json",
]


def _fmt(x: float):
    # shortest repr round-trips exactly; JSON has no inf/nan
    x = float(x)
    if not np.isfinite(x):
        return None
    return x


def _flat(M):
    return [_fmt(x) for x in np.asarray(M, dtype=float).ravel()]


def _matrix(d, key, shape):
    if key not in d:
        raise SystemFileError(key, "missing")
    vals = d[key]
    if not isinstance(vals, list):
        raise SystemFileError(key, "must be a flat list of numbers")
    try:
        arr = np.array(vals, dtype=float)
    except (TypeError, ValueError):
        raise SystemFileError(key, "contains non-numeric entries") from None
    if arr.ndim != 1:
        raise SystemFileError(key, "must be a flat list of numbers")
    n = int(np.prod(shape))
    if arr.size != n:
        raise SystemFileError(key, f"has {arr.size} entries, expected {n} for shape {shape}")
    if not np.all(np.isfinite(arr)):
        raise SystemFileError(key, "contains non-finite entries")
    return arr.reshape(shape)


def _int(d, key, minimum=0):
    if key not in d:
        raise SystemFileError(key, "missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise SystemFileError(key, f"must be an integer >= {minimum}")
    return v


def system_to_dict(system: LtiSystem, part: Optional[AgentPartition] = None,
                   weights: Any = None) -> Dict[str, Any]:
    d = {
        "m": system.m,
        "q": system.q,
        "A": _flat(system.A),
        "B": _flat(system.B),
        "D": _flat(system.D),
        "nodes": [{"m_j": mj, "p_j": pj} for mj, pj in system.nodes],
    }
    if part is not None:
        d["agents"] = list(part.node_counts)
    if weights is not None:
        d["weights"] = weights if isinstance(weights, str) else weights_to_dict(*weights)
    return d


def system_from_dict(d: Dict[str, Any]) -> Tuple[LtiSystem, AgentPartition, Any]:
    """Parse a system object; returns ``(system, partition, weights_spec)``.

    ``weights_spec`` is ``"wac"`` or ``(DesignWeights, AgentWeights)``.
    Malformed input raises :class:`SystemFileError` naming the field.
    """
    if not isinstance(d, dict):
        raise SystemFileError("<root>", "must be a JSON object")
    m = _int(d, "m", 1)
    q = _int(d, "q", 0)
    nodes_raw = d.get("nodes")
    if not isinstance(nodes_raw, list) or not nodes_raw:
        raise SystemFileError("nodes", "must be a nonempty list of {m_j, p_j}")
    nodes = []
    for k, nd in enumerate(nodes_raw):
        if not isinstance(nd, dict):
            raise SystemFileError(f"nodes[{k}]", "must be an object with m_j and p_j")
        try:
            nodes.append((_int(nd, "m_j", 1), _int(nd, "p_j", 0)))
        except SystemFileError as e:
            raise SystemFileError(f"nodes[{k}].{e.field}", e.message) from None
    if sum(a for a, _ in nodes) != m:
        raise SystemFileError("nodes", f"state counts sum to {sum(a for a, _ in nodes)}, m is {m}")
    if sum(b for _, b in nodes) != q:
        raise SystemFileError("nodes", f"input counts sum to {sum(b for _, b in nodes)}, q is {q}")
    A = _matrix(d, "A", (m, m))
    B = _matrix(d, "B", (m, q))
    D = _matrix(d, "D", (m, 1))
    system = LtiSystem(A, B, D, tuple(nodes))

    agents = d.get("agents", [len(nodes)])
    if (not isinstance(agents, list) or not agents
            or any(isinstance(a, bool) or not isinstance(a, int) or a < 1 for a in agents)):
        raise SystemFileError("agents", "must be a nonempty list of positive node counts")
    if sum(agents) != len(nodes):
        raise SystemFileError("agents", f"covers {sum(agents)} nodes, system has {len(nodes)}")
    part = AgentPartition(tuple(agents))

    weights = d.get("weights", "wac")
    if weights != "wac":
        weights = weights_from_dict(weights, system, part)
    return system, part, weights


def weights_to_dict(w: DesignWeights, aw: AgentWeights) -> Dict[str, Any]:
    return {
        "Q": _flat(w.Q), "R": _flat(w.R),
        "Q_i": [_flat(Q) for Q in aw.Q], "R_i": [_flat(R) for R in aw.R],
    }


def weights_from_dict(d, system: LtiSystem, part: AgentPartition):
    if not isinstance(d, dict):
        raise SystemFileError("weights", 'must be "wac" or an object with Q, R, Q_i, R_i')
    m, q = system.m, system.q
    N = part.inputs_per_agent(system)
    try:
        Q = _matrix(d, "Q", (m, m))
        R = _matrix(d, "R", (q, q))
    except SystemFileError as e:
        raise SystemFileError(f"weights.{e.field}", e.message) from None
    Qi, Ri = d.get("Q_i"), d.get("R_i")
    if not isinstance(Qi, list) or len(Qi) != part.r:
        raise SystemFileError("weights.Q_i", f"must list {part.r} matrices")
    if not isinstance(Ri, list) or len(Ri) != part.r:
        raise SystemFileError("weights.R_i", f"must list {part.r} matrices")
    Qs, Rs = [], []
    for i in range(part.r):
        try:
            Qs.append(_matrix({"v": Qi[i]}, "v", (m, m)))
        except SystemFileError as e:
            raise SystemFileError(f"weights.Q_i[{i}]", e.message) from None
        try:
            Rs.append(_matrix({"v": Ri[i]}, "v", (N[i], N[i])))
        except SystemFileError as e:
            raise SystemFileError(f"weights.R_i[{i}]", e.message) from None
    try:
        return DesignWeights(Q, R), AgentWeights(tuple(Qs), tuple(Rs))
    except ValueError as e:
        raise SystemFileError("weights", str(e)) from None


def load_system(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SystemFileError("<root>", f"invalid JSON: {e}") from None
    return system_from_dict(d)


def save_system(path, system: LtiSystem, part=None, weights=None):
    dump_json(path, system_to_dict(system, part, weights))


def gain_to_triplets(K):
    """Nonzero entries of ``K`` as ``[row, col, value]`` in row-major order."""
    K = np.asarray(K, dtype=float)
    rows, cols = np.nonzero(K)
    return [[int(i), int(j), float(K[i, j])] for i, j in zip(rows, cols)]


def gain_from_triplets(triplets, shape):
    K = np.zeros(shape)
    for i, j, v in triplets:
        K[int(i), int(j)] = float(v)
    return K


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")

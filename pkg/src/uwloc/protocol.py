"""Distributed target localisation over a robot communication graph.

Each round, robot ``i`` blends a consensus average of the estimates held by
valid robots in its closed neighbourhood with its own fresh measurement:

    x_i <- (1 - a_i) * sum_j w_ij x_j + a_i * xhat_i

where ``j`` ranges over ``(N_i + {i}) & S`` (``S`` = robots currently seeing
the target) and the step ``a_i`` decays like 1/t. Nodes are 0-based.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ContractViolation, DomainError

UNIFORM_CLOSED = "uniform-closed"
METROPOLIS = "metropolis"
SCHEMES = (UNIFORM_CLOSED, METROPOLIS)


@dataclass(frozen=True)
class Topology:
    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("topology needs at least one node")
        norm = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise DomainError(f"self-loop on node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise DomainError(f"edge {(i, j)} references a node outside 0..{self.n - 1}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        nbrs = [set() for _ in range(self.n)]
        for i, j in norm:
            nbrs[i].add(j)
            nbrs[j].add(i)
        object.__setattr__(self, "_neighbors", tuple(frozenset(s) for s in nbrs))
        if self.n > 1 and not self.is_connected():
            raise DomainError("topology must be connected")

    @classmethod
    def complete(cls, n):
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def path(cls, n):
        return cls(n, frozenset((i, i + 1) for i in range(n - 1)))

    @classmethod
    def ring(cls, n):
        edges = {(i, (i + 1) % n) for i in range(n)} if n > 2 else {(i, i + 1) for i in range(n - 1)}
        return cls(n, frozenset(edges))

    def neighbors(self, i) -> frozenset:
        return self._neighbors[i]

    def degree(self, i) -> int:
        return len(self._neighbors[i])

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            A[i, j] = A[j, i] = True
        return A

    def is_connected(self) -> bool:
        count, _ = connected_components(csr_matrix(self.adjacency()), directed=False)
        return count == 1

    def without(self, dropped: Iterable) -> "_RoundGraph":
        return _RoundGraph(self, frozenset((min(i, j), max(i, j)) for i, j in dropped))


@dataclass(frozen=True)
class _RoundGraph:
    """A topology with some edges silenced for one round (may disconnect)."""

    base: Topology
    dropped: frozenset

    @property
    def n(self):
        return self.base.n

    def neighbors(self, i):
        return frozenset(j for j in self.base.neighbors(i) if (min(i, j), max(i, j)) not in self.dropped)

    def degree(self, i):
        return self.base.degree(i)


@dataclass(frozen=True)
class StepSchedule:
    """alpha = min(1, c_alpha / (t + 1)); c_alpha = 0 gives pure consensus."""

    c_alpha: float = 1.0

    def __post_init__(self):
        if self.c_alpha < 0:
            raise DomainError("c_alpha must be non-negative")


@dataclass(frozen=True)
class ProtocolState:
    """Estimates at round ``t`` and the valid set used in that round.

    ``estimates`` is (n, 3); rows of nodes without an estimate are NaN.
    """

    t: int
    estimates: np.ndarray
    valid_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        x = np.array(self.estimates, dtype=float).reshape(-1, 3)
        x.setflags(write=False)
        object.__setattr__(self, "estimates", x)
        object.__setattr__(self, "valid_set", frozenset(int(i) for i in self.valid_set))
        if self.t < 0:
            raise DomainError("round counter must be non-negative")
        if any(not 0 <= i < self.n for i in self.valid_set):
            raise DomainError("valid set references unknown nodes")

    @classmethod
    def initial(cls, n: int) -> "ProtocolState":
        return cls(0, np.full((n, 3), np.nan))

    @property
    def n(self) -> int:
        return self.estimates.shape[0]

    @property
    def has_estimate(self) -> np.ndarray:
        return ~np.isnan(self.estimates).any(axis=1)

    def with_valid_set(self, valid) -> "ProtocolState":
        return replace(self, valid_set=frozenset(valid))


def step_size(schedule: StepSchedule, t: int, in_valid: bool, has_valid_neighbor: bool) -> float:
    if t < 0:
        raise DomainError("t must be non-negative")
    if not in_valid:
        return 0.0
    if not has_valid_neighbor:
        return 1.0
    return min(1.0, schedule.c_alpha / (t + 1))


def compute_weights(topology, valid_set, scheme: str = UNIFORM_CLOSED) -> np.ndarray:
    """Row-stochastic weights over each node's valid closed neighbourhood.

    Rows whose valid closed neighbourhood is empty are all zero.
    """
    if scheme not in SCHEMES:
        raise DomainError(f"unknown weight scheme {scheme!r}")
    n = topology.n
    valid = frozenset(valid_set)
    W = np.zeros((n, n))
    for i in range(n):
        members = sorted((topology.neighbors(i) | {i}) & valid)
        if not members:
            continue
        if scheme == UNIFORM_CLOSED:
            W[i, members] = 1.0 / len(members)
            continue
        others = [j for j in members if j != i]
        for j in others:
            W[i, j] = 1.0 / (1 + max(topology.degree(i), topology.degree(j)))
        if i in valid:
            W[i, i] = 1.0 - W[i].sum()
        elif others:
            W[i] /= W[i].sum()
    return W


def _as_measurement_array(n, measurements: Mapping[int, object]):
    xhat = np.full((n, 3), np.nan)
    for i, value in measurements.items():
        if not 0 <= int(i) < n:
            raise ContractViolation(f"measurement for unknown node {i}")
        v = np.asarray(value, dtype=float).reshape(3)
        if not np.all(np.isfinite(v)):
            raise ContractViolation(f"measurement for node {i} is not finite")
        xhat[int(i)] = v
    return xhat


def protocol_round(
    state: ProtocolState,
    topology: Topology,
    scheme: str,
    schedule: StepSchedule,
    measurements: Mapping[int, object],
    dropped: Iterable = (),
) -> ProtocolState:
    """One synchronous round; returns the state at ``t + 1``.

    ``measurements`` maps node -> measured position and must cover exactly
    ``state.valid_set``. A valid node that has no estimate yet starts from its
    measurement. Nodes with nothing to combine keep their estimate. The
    returned state carries the same valid set; the caller supplies the next.
    """
    n = state.n
    if n != topology.n:
        raise ContractViolation(f"state has {n} nodes, topology {topology.n}")
    valid = state.valid_set
    if set(int(i) for i in measurements) != set(valid):
        raise ContractViolation(
            f"measurements for {sorted(measurements)} but valid set is {sorted(valid)}"
        )
    xhat = _as_measurement_array(n, measurements)

    x = state.estimates.copy()
    fresh = [i for i in valid if np.isnan(x[i]).any()]
    x[fresh] = xhat[fresh]

    graph = topology.without(dropped) if dropped else topology
    W = compute_weights(graph, valid, scheme)
    consensus = W @ np.nan_to_num(x)

    new = x.copy()
    for i in range(n):
        if not W[i].any():
            continue  # nothing valid nearby: hold
        has_valid_nbr = bool(graph.neighbors(i) & valid)
        a = step_size(schedule, state.t, i in valid, has_valid_nbr)
        if a == 0.0:
            new[i] = consensus[i]
        elif a == 1.0:
            new[i] = xhat[i]
        else:
            new[i] = (1.0 - a) * consensus[i] + a * xhat[i]
    return ProtocolState(state.t + 1, new, valid)


# measurement_source(t, state) -> {node: xhat}; the keys form S^t
MeasurementSource = Callable[[int, ProtocolState], Mapping[int, object]]


def draw_dropped_edges(topology: Topology, drop_prob: float, rng) -> frozenset:
    if drop_prob <= 0:
        return frozenset()
    edges = sorted(topology.edges)
    mask = rng.random(len(edges)) < drop_prob
    return frozenset(e for e, m in zip(edges, mask) if m)


def run(
    state0: ProtocolState,
    topology: Topology,
    scheme: str,
    schedule: StepSchedule,
    source: MeasurementSource,
    rounds: int,
    drop_prob: float = 0.0,
    rng=None,
) -> list[ProtocolState]:
    """Apply ``rounds`` protocol rounds; returns states for t = 0..rounds.

    Entry ``t`` carries the valid set used during round ``t``; the final
    entry keeps the last valid set since no measurement has been taken yet.
    """
    if rounds < 0:
        raise DomainError("rounds must be non-negative")
    if drop_prob > 0 and rng is None:
        rng = np.random.default_rng(0)
    trajectory = [state0]
    for t in range(rounds):
        current = trajectory[-1]
        meas = dict(source(current.t, current))
        current = current.with_valid_set(meas.keys())
        dropped = draw_dropped_edges(topology, drop_prob, rng) if drop_prob > 0 else ()
        trajectory[-1] = current
        trajectory.append(protocol_round(current, topology, scheme, schedule, meas, dropped))
    return trajectory


def convergence_metrics(trajectory, target) -> np.ndarray:
    """(rounds, 2) array of max node error and max pairwise spread.

    Only initialised nodes count; rounds without any are NaN.
    """
    if not trajectory:
        raise DomainError("trajectory is empty")
    target = np.asarray(target, dtype=float).reshape(3)
    out = np.full((len(trajectory), 2), np.nan)
    for k, state in enumerate(trajectory):
        x = state.estimates[state.has_estimate]
        if len(x) == 0:
            continue
        out[k, 0] = np.max(np.linalg.norm(x - target, axis=1))
        diff = x[:, None, :] - x[None, :, :]
        out[k, 1] = np.max(np.linalg.norm(diff, axis=2))
    return out


# replay and trajectory files

REPLAY_HEADER = ["t", "node", "x", "y", "z", "valid"]
TRAJECTORY_HEADER = ["t", "node", "x", "y", "z", "in_valid_set"]


def _fmt(v) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def write_trajectory_csv(path, trajectory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for state in trajectory:
            for i in range(state.n):
                w.writerow([state.t, i, *(_fmt(v) for v in state.estimates[i]), int(i in state.valid_set)])


def read_trajectory_csv(path):
    """{t: (estimates (n,3), valid set)} from a trajectory file."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_HEADER:
            raise ContractViolation(f"{path}: expected header {','.join(TRAJECTORY_HEADER)}")
        for r in reader:
            rows.setdefault(int(r["t"]), []).append(r)
    out = {}
    for t, items in sorted(rows.items()):
        n = max(int(r["node"]) for r in items) + 1
        x = np.full((n, 3), np.nan)
        valid = set()
        for r in items:
            i = int(r["node"])
            x[i] = [float(r[k]) if r[k] != "" else np.nan for k in ("x", "y", "z")]
            if int(r["in_valid_set"]):
                valid.add(i)
        out[t] = (x, frozenset(valid))
    return out


def write_replay_csv(path, rows):
    """``rows`` iterable of (t, node, xyz-or-None)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLAY_HEADER)
        for t, node, value in rows:
            if value is None:
                w.writerow([t, node, "", "", "", 0])
            else:
                w.writerow([t, node, *(repr(float(v)) for v in value), 1])


class ReplaySource:
    """Measurement source backed by a replay CSV (``t,node,x,y,z,valid``).

    Rounds past the end of the file yield no measurements.
    """

    def __init__(self, by_round: dict, n: int, rounds: int | None = None):
        self.by_round = by_round
        self.n = n
        self.rounds = rounds if rounds is not None else (max(by_round) + 1 if by_round else 0)

    @classmethod
    def from_csv(cls, path):
        by_round: dict = {}
        nodes = set()
        last_t = -1
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != REPLAY_HEADER:
                raise ContractViolation(f"{path}: expected header {','.join(REPLAY_HEADER)}")
            for r in reader:
                lineno = reader.line_num
                try:
                    t, node, valid = int(r["t"]), int(r["node"]), int(r["valid"])
                    nodes.add(node)
                    last_t = max(last_t, t)
                    if valid:
                        by_round.setdefault(t, {})[node] = np.array([float(r[k]) for k in ("x", "y", "z")])
                except (TypeError, ValueError) as exc:
                    raise ContractViolation(f"{path}:{lineno}: {exc}") from None
        return cls(by_round, max(nodes) + 1 if nodes else 0, last_t + 1)

    def __call__(self, t, state):
        return self.by_round.get(t, {})

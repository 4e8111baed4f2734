"""Max-flow machinery: feasibility checks, peak-throughput value, the
stable/unstable decomposition of an overloaded system, and transportation
feasibility for tier-internal routing.

The augmented network places a source feeding every frontend (capacity
λ_f), an infinite-capacity arc along every system edge, and a sink draining
every backend (capacity equal to the curve's cap, the service rate at
infinite workload).  Min cuts of that network are exactly the arrival
subsets that can overwhelm their neighborhoods, which is why one max-flow
run answers feasibility, peak throughput, and the decomposition at once.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from gmsr.model import BipartiteSystem

__all__ = [
    "FlowNetwork",
    "MaxFlowResult",
    "StabilityDecomposition",
    "augmented_network",
    "max_flow",
    "feasibility_check",
    "stability_decomposition",
    "opt_tp",
    "transportation_feasible",
]

# augmentations below this increment are float noise, not flow
_EPS = 1e-12


@dataclass(frozen=True)
class FlowNetwork:
    """A directed capacitated graph with one source and one sink.

    Capacities may be ``math.inf``; max_flow substitutes a finite surrogate
    (total finite capacity + 1) so residual arithmetic stays in ordinary
    floats while still exceeding any achievable flow value.
    """

    nodes: tuple[str, ...]
    source: str
    sink: str
    arcs: tuple[tuple[str, str, float], ...]

    def __post_init__(self) -> None:
        if self.source not in self.nodes or self.sink not in self.nodes:
            raise ValueError("source and sink must be members of the node set")
        if self.source == self.sink:
            raise ValueError("source and sink must differ")
        for u, v, c in self.arcs:
            if u not in self.nodes or v not in self.nodes:
                raise ValueError(f"arc ({u!r}, {v!r}) references unknown node")
            if c < 0:
                raise ValueError(f"arc ({u!r}, {v!r}) has negative capacity {c}")


@dataclass(frozen=True)
class MaxFlowResult:
    """value: the max-flow value.
    flows: net flow per (u, v) arc pair (parallel arcs merged).
    source_side: nodes reachable from the source in the residual graph
        (the canonical min cut's source side).
    sink_side: nodes with a residual path to the sink (the largest-source
        min cut's sink side)."""

    value: float
    flows: dict[tuple[str, str], float]
    source_side: frozenset[str]
    sink_side: frozenset[str]


@dataclass(frozen=True)
class StabilityDecomposition:
    """Frontends/backends that stay stable in an overloaded system; the
    complement pair grows without bound under greatest-marginal-rate
    routing.  Feasible systems decompose trivially (everything stable)."""

    frontends: frozenset[str]
    backends: frozenset[str]


def max_flow(net: FlowNetwork) -> MaxFlowResult:
    """Shortest-augmenting-path (BFS) max flow over real capacities.

    Augmentation count is bounded by the classical n*m/2 shortest-path
    argument, which holds for real capacities; we additionally stop when the
    bottleneck falls below 1e-12 (float noise, not flow).
    """
    idx = {name: k for k, name in enumerate(net.nodes)}
    n = len(net.nodes)
    finite_total = sum(c for _, _, c in net.arcs if math.isfinite(c))
    inf_cap = finite_total + 1.0

    cap: dict[tuple[int, int], float] = {}
    for u, v, c in net.arcs:
        key = (idx[u], idx[v])
        cap[key] = cap.get(key, 0.0) + (inf_cap if math.isinf(c) else c)
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in cap:
        if v not in adj[u]:
            adj[u].append(v)
        if u not in adj[v]:
            adj[v].append(u)

    flow: dict[tuple[int, int], float] = {}
    s, t = idx[net.source], idx[net.sink]

    def residual(u: int, v: int) -> float:
        return cap.get((u, v), 0.0) - flow.get((u, v), 0.0)

    max_augmentations = n * max(len(cap), 1) + 64
    for _ in range(max_augmentations):
        parent = [-1] * n
        parent[s] = s
        queue = deque([s])
        while queue and parent[t] < 0:
            u = queue.popleft()
            for v in adj[u]:
                if parent[v] < 0 and residual(u, v) > _EPS:
                    parent[v] = u
                    queue.append(v)
        if parent[t] < 0:
            break
        bottleneck = math.inf
        v = t
        while v != s:
            u = parent[v]
            bottleneck = min(bottleneck, residual(u, v))
            v = u
        if bottleneck <= _EPS:
            break
        v = t
        while v != s:
            u = parent[v]
            flow[(u, v)] = flow.get((u, v), 0.0) + bottleneck
            flow[(v, u)] = -flow[(u, v)]
            v = u

    value = sum(flow.get((s, v), 0.0) for v in adj[s])

    reach_s = {s}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in reach_s and residual(u, v) > _EPS:
                reach_s.add(v)
                queue.append(v)

    coreach_t = {t}
    queue = deque([t])
    while queue:
        v = queue.popleft()
        for u in adj[v]:
            if u not in coreach_t and residual(u, v) > _EPS:
                coreach_t.add(u)
                queue.append(u)

    flows = {
        (net.nodes[u], net.nodes[v]): f for (u, v), f in flow.items() if (u, v) in cap and f > 0.0
    }
    return MaxFlowResult(
        value=value,
        flows=flows,
        source_side=frozenset(net.nodes[u] for u in reach_s),
        sink_side=frozenset(net.nodes[v] for v in coreach_t),
    )


_SOURCE = "__source__"
_SINK = "__sink__"


def augmented_network(sys: BipartiteSystem) -> FlowNetwork:
    """Source -> frontends (λ_f), edges at infinite capacity,
    backends -> sink (service cap)."""
    nodes = (_SOURCE,) + sys.frontend_ids + sys.backend_ids + (_SINK,)
    arcs: list[tuple[str, str, float]] = []
    for f in sys.frontends:
        arcs.append((_SOURCE, f.id, f.lam))
    for f, b in sys.edges:
        arcs.append((f, b, math.inf))
    for b in sys.backends:
        arcs.append((b.id, _SINK, b.service.cap))
    return FlowNetwork(nodes=nodes, source=_SOURCE, sink=_SINK, arcs=tuple(arcs))


def feasibility_check(sys: BipartiteSystem) -> bool:
    """True iff every frontend subset's arrivals fall strictly below the
    capacity of its neighborhood.

    Strictness matters: finite workloads only ever realize rates strictly
    below the caps, so a subset exactly at capacity still has no
    finite-workload equilibrium.  Implemented as: the max flow saturates the
    arrivals AND every frontend keeps a residual path to the sink (the flow
    could absorb a strictly larger λ_f for every f).
    """
    res = max_flow(augmented_network(sys))
    total = sys.total_arrival_rate
    if res.value < total - 1e-9 * (1.0 + total):
        return False
    return all(f in res.sink_side for f in sys.frontend_ids)


def stability_decomposition(sys: BipartiteSystem) -> StabilityDecomposition:
    """Split the system into a stable pair (F̃, B̃) and its unstable complement.

    F̃ = frontends with a residual path to the sink under a max flow; B̃ =
    backends whose entire neighborhood lies in F̃.  Boundary subsets whose
    arrivals exactly match their capacity are classified unstable, matching
    the smallest-sink-side min cut.
    """
    res = max_flow(augmented_network(sys))
    f_stable = frozenset(f for f in sys.frontend_ids if f in res.sink_side)
    b_stable = frozenset(
        sys.backend_ids[j]
        for j in range(len(sys.backends))
        if all(sys.frontend_ids[i] in f_stable for i in sys.frontends_of_backend[j])
    )
    return StabilityDecomposition(frontends=f_stable, backends=b_stable)


def opt_tp(sys: BipartiteSystem) -> float:
    """Peak long-run throughput: the max-flow value of the augmented network
    (equivalently Σ_{f stable} λ_f + Σ_{b unstable} cap_b)."""
    return max_flow(augmented_network(sys)).value


def transportation_feasible(
    sys: BipartiteSystem,
    frontends: set[str] | frozenset[str],
    backends: set[str] | frozenset[str],
    demand: dict[str, float],
    tol: float = 1e-9,
) -> tuple[bool, np.ndarray | None]:
    """Can the frontends' full arrival mass be split over edges inside
    (frontends, backends) so each backend b receives exactly demand[b]?

    Returns (feasible, witness) where the witness is a full-shape routing
    matrix supported on the restricted edges (rows of frontends outside the
    set are left zero).
    """
    for b, d in demand.items():
        if d < 0:
            raise ValueError(f"negative demand {d} for backend {b!r}")
    f_set = set(frontends)
    b_set = set(backends)
    lam_total = sum(sys.lambdas[sys.frontend_index[f]] for f in f_set)
    d_total = sum(demand.get(b, 0.0) for b in b_set)
    scale = 1.0 + abs(lam_total)
    if abs(d_total - lam_total) > tol * scale:
        return False, None

    nodes = (_SOURCE,) + tuple(sorted(f_set)) + tuple(sorted(b_set)) + (_SINK,)
    arcs: list[tuple[str, str, float]] = []
    for f in sorted(f_set):
        arcs.append((_SOURCE, f, sys.lambdas[sys.frontend_index[f]]))
    for f, b in sys.edges:
        if f in f_set and b in b_set:
            arcs.append((f, b, math.inf))
    for b in sorted(b_set):
        arcs.append((b, _SINK, demand.get(b, 0.0)))
    res = max_flow(FlowNetwork(nodes=nodes, source=_SOURCE, sink=_SINK, arcs=tuple(arcs)))
    if res.value < d_total - tol * scale:
        return False, None

    x = np.zeros((len(sys.frontends), len(sys.backends)))
    for f in f_set:
        i = sys.frontend_index[f]
        lam = sys.lambdas[i]
        if lam > 0:
            for b in b_set:
                w = res.flows.get((f, b), 0.0)
                if w > 0:
                    x[i, sys.backend_index[b]] = w / lam
        if x[i].sum() <= 0:
            # carries no flow (zero rate, or rate below float noise); the
            # simplex row still must sit on some restricted edge
            for j in sys.backends_of_frontend[i]:
                if sys.backend_ids[j] in b_set:
                    x[i, j] = 1.0
                    break
            else:
                return False, None  # no edge into the backend set at all
        x[i] /= x[i].sum()  # wash out augmentation round-off
    return True, x

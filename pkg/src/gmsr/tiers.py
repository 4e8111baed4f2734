"""Best-backend graphs, tier partitions, and the tier DAG.

A *tier* groups the backends (and the frontends currently preferring them)
that are coupled through ties in the marginal service rate: it is a
connected component of the best-backend graph.  Routing under the
greatest-marginal-rate policy never leaves a frontend's tier, and flow in
the tier DAG only ever points from higher-gradient tiers to lower ones,
which is what makes the partition useful as a convergence diagnostic.

Operations here take an abstract per-backend gradient vector rather than a
workload, so callers (and tests) can inject gradient values directly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from gmsr.model import BipartiteSystem

__all__ = [
    "Tier",
    "TierPartition",
    "TierGraph",
    "best_backend_graph",
    "compute_tiers",
    "tier_graph",
    "reach",
]


@dataclass(frozen=True)
class Tier:
    """One tier: its frontends (possibly none), backends (never empty), and
    the shared gradient value (mean over member backends)."""

    frontends: tuple[str, ...]
    backends: tuple[str, ...]
    gradient: float


@dataclass(frozen=True)
class TierPartition:
    """Tiers in deterministic order: components discovered by walking
    frontends in index order, then leftover backend-only singletons in
    backend index order."""

    tiers: tuple[Tier, ...]

    def __len__(self) -> int:
        return len(self.tiers)

    def __iter__(self):
        return iter(self.tiers)

    def tier_of_backend(self, backend_id: str) -> int:
        for k, tier in enumerate(self.tiers):
            if backend_id in tier.backends:
                return k
        raise KeyError(f"backend {backend_id!r} not in partition")

    def tier_of_frontend(self, frontend_id: str) -> int:
        for k, tier in enumerate(self.tiers):
            if frontend_id in tier.frontends:
                return k
        raise KeyError(f"frontend {frontend_id!r} not in partition")


@dataclass(frozen=True)
class TierGraph:
    """Directed graph on tier indices; acyclic for partitions produced by
    :func:`compute_tiers` at a consistent gradient vector."""

    n: int
    arcs: frozenset[tuple[int, int]]


def _check_grads(sys: BipartiteSystem, grads: np.ndarray) -> np.ndarray:
    g = np.asarray(grads, dtype=float)
    if g.shape != (len(sys.backends),):
        raise ValueError(f"gradient vector has shape {g.shape}, expected ({len(sys.backends)},)")
    return g


def best_backend_graph(
    sys: BipartiteSystem, grads: np.ndarray, tie_tol: float
) -> frozenset[tuple[str, str]]:
    """Edges whose backend is within tie_tol of the frontend's best gradient.

    Superset-monotone in tie_tol: widening the band only adds edges.
    """
    g = _check_grads(sys, grads)
    if not tie_tol > 0:
        raise ValueError("tie_tol must be positive")
    best: list[tuple[str, str]] = []
    for i, nbrs in enumerate(sys.backends_of_frontend):
        if not nbrs:
            continue
        top = max(g[j] for j in nbrs)
        for j in nbrs:
            if g[j] >= top - tie_tol:
                best.append((sys.frontend_ids[i], sys.backend_ids[j]))
    return frozenset(best)


def compute_tiers(sys: BipartiteSystem, grads: np.ndarray, tie_tol: float) -> TierPartition:
    """Connected components of the best-backend graph, as a TierPartition.

    Backends not touched by any best edge form frontend-empty singleton
    tiers.  A tier's gradient is the mean over its member backends (members
    can differ by up to a few tie_tol across a long tie chain).
    """
    g = _check_grads(sys, grads)
    best = best_backend_graph(sys, grads, tie_tol)
    nf, nb = len(sys.frontends), len(sys.backends)
    # adjacency over the node set F ∪ B, frontends numbered 0..nf-1,
    # backends nf..nf+nb-1
    adj: list[list[int]] = [[] for _ in range(nf + nb)]
    fi, bi = sys.frontend_index, sys.backend_index
    for f, b in best:
        u, v = fi[f], nf + bi[b]
        adj[u].append(v)
        adj[v].append(u)

    comp = [-1] * (nf + nb)
    tiers: list[Tier] = []

    def _flood(start: int) -> None:
        kth = len(tiers)
        queue = deque([start])
        comp[start] = kth
        members: list[int] = []
        while queue:
            u = queue.popleft()
            members.append(u)
            for v in adj[u]:
                if comp[v] < 0:
                    comp[v] = kth
                    queue.append(v)
        fr = sorted(u for u in members if u < nf)
        ba = sorted(u - nf for u in members if u >= nf)
        tiers.append(
            Tier(
                frontends=tuple(sys.frontend_ids[u] for u in fr),
                backends=tuple(sys.backend_ids[j] for j in ba),
                gradient=float(np.mean([g[j] for j in ba])) if ba else float("nan"),
            )
        )

    for u in range(nf):
        if comp[u] < 0:
            _flood(u)
    for j in range(nb):
        if comp[nf + j] < 0:
            _flood(nf + j)
    return TierPartition(tiers=tuple(tiers))


def tier_graph(sys: BipartiteSystem, partition: TierPartition) -> TierGraph:
    """Arc v_i -> v_j whenever some frontend of tier i has an original-graph
    edge to a backend of tier j (i != j)."""
    f_tier: dict[str, int] = {}
    b_tier: dict[str, int] = {}
    for k, tier in enumerate(partition.tiers):
        for f in tier.frontends:
            f_tier[f] = k
        for b in tier.backends:
            b_tier[b] = k
    missing_f = set(sys.frontend_ids) - set(f_tier)
    missing_b = set(sys.backend_ids) - set(b_tier)
    if missing_f or missing_b:
        raise ValueError(
            f"partition does not cover the system: missing frontends {sorted(missing_f)}, "
            f"missing backends {sorted(missing_b)}"
        )
    arcs: set[tuple[int, int]] = set()
    for f, b in sys.edges:
        i, j = f_tier[f], b_tier[b]
        if i != j:
            arcs.add((i, j))
    return TierGraph(n=len(partition.tiers), arcs=frozenset(arcs))


def reach(tg: TierGraph, i: int, j: int) -> bool:
    """Whether a directed path of length >= 1 leads from tier i to tier j.

    Irreflexive on DAGs: reach(i, i) is False unless i lies on a cycle.
    """
    for k in (i, j):
        if not (0 <= k < tg.n):
            raise IndexError(f"tier index {k} out of range [0, {tg.n})")
    succ: dict[int, list[int]] = {}
    for u, v in tg.arcs:
        succ.setdefault(u, []).append(v)
    seen: set[int] = set()
    queue = deque(succ.get(i, ()))
    while queue:
        u = queue.popleft()
        if u == j:
            return True
        if u in seen:
            continue
        seen.add(u)
        queue.extend(succ.get(u, ()))
    return False

"""Shared fixtures/helpers: canonical example systems, random generators,
and small brute-force oracles used to cross-check the library's algorithms."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from gmsr.model import BipartiteSystem, hill, make_system, saturating_exponential


def n_model() -> BipartiteSystem:
    """Two frontends (rate 1 each); b1=hill(1,1), b2=hill(1,2);
    f1-b1, f2-b1, f2-b2."""
    return make_system(
        frontends=[("f1", 1.0), ("f2", 1.0)],
        backends=[("b1", hill(1.0, 1.0)), ("b2", hill(1.0, 2.0))],
        edges=[("f1", "b1"), ("f2", "b1"), ("f2", "b2")],
    )


def fig1_system() -> BipartiteSystem:
    """Four frontends, five backends, ten edges; hill caps chosen so that the
    all-ones workload realizes the gradient profile (3, 2, 1, 2, 3)."""
    caps = {"b1": 12.0, "b2": 8.0, "b3": 4.0, "b4": 8.0, "b5": 12.0}
    return make_system(
        frontends=[("f1", 1.0), ("f2", 1.0), ("f3", 1.0), ("f4", 1.0)],
        backends=[(b, hill(c, 1.0)) for b, c in caps.items()],
        edges=[
            ("f1", "b1"), ("f1", "b2"), ("f1", "b3"),
            ("f2", "b2"), ("f2", "b3"),
            ("f3", "b3"), ("f3", "b4"),
            ("f4", "b4"), ("f4", "b5"), ("f4", "b1"),
        ],
    )


FIG1_GRADS = np.array([3.0, 2.0, 1.0, 2.0, 3.0])


def random_curve(rng: np.random.Generator):
    if rng.random() < 0.5:
        return hill(cap=float(rng.uniform(1.0, 3.0)), half=float(rng.uniform(0.5, 2.0)))
    return saturating_exponential(
        cap=float(rng.uniform(1.0, 3.0)), rate=float(rng.uniform(0.5, 2.0))
    )


def random_system(
    rng: np.random.Generator,
    max_frontends: int = 5,
    max_backends: int = 6,
    lam_range: tuple[float, float] = (0.1, 1.0),
) -> BipartiteSystem:
    """A random connected-enough system: every node gets at least one edge."""
    nf = int(rng.integers(1, max_frontends + 1))
    nb = int(rng.integers(1, max_backends + 1))
    fids = [f"f{i}" for i in range(1, nf + 1)]
    bids = [f"b{j}" for j in range(1, nb + 1)]
    edges: set[tuple[str, str]] = set()
    for f in fids:  # every frontend gets one edge
        edges.add((f, bids[int(rng.integers(nb))]))
    for b in bids:  # every backend gets one edge
        edges.add((fids[int(rng.integers(nf))], b))
    for f in fids:  # sprinkle extras
        for b in bids:
            if rng.random() < 0.3:
                edges.add((f, b))
    return make_system(
        frontends=[(f, float(rng.uniform(*lam_range))) for f in fids],
        backends=[(b, random_curve(rng)) for b in bids],
        edges=sorted(edges),
    )


def feasible_random_system(
    rng: np.random.Generator,
    max_frontends: int = 4,
    max_backends: int = 4,
    lam_range: tuple[float, float] = (0.05, 0.5),
) -> BipartiteSystem:
    """Random system scaled (by halving arrival rates) until strictly feasible."""
    from gmsr.flownet import feasibility_check

    while True:
        sys = random_system(rng, max_frontends, max_backends, lam_range)
        scale = 1.0
        for _ in range(20):
            trial = make_system(
                frontends=[(f.id, f.lam * scale) for f in sys.frontends],
                backends=[(b.id, b.service) for b in sys.backends],
                edges=sys.edges,
            )
            if feasibility_check(trial):
                return trial
            scale *= 0.5


def scaled_system(sys: BipartiteSystem, factor: float) -> BipartiteSystem:
    """The same system with every arrival rate multiplied by `factor`."""
    return make_system(
        frontends=[(f.id, f.lam * factor) for f in sys.frontends],
        backends=[(b.id, b.service) for b in sys.backends],
        edges=sys.edges,
    )


def greedy_routing(sys: BipartiteSystem, n: np.ndarray) -> np.ndarray:
    """Routing that splits each frontend uniformly over its exact-argmax
    (highest-gradient) connected backends at workload n."""
    grads = sys.gradients_at(np.asarray(n, float))
    x = np.zeros((len(sys.frontends), len(sys.backends)))
    for i in range(len(sys.frontends)):
        nbrs = sys.backends_of_frontend[i]
        top = max(grads[j] for j in nbrs)
        best = [j for j in nbrs if grads[j] == top]
        for j in best:
            x[i, j] = 1.0 / len(best)
    return x


def neighborhood_capacity(sys: BipartiteSystem, frontends: set[int], rates: np.ndarray) -> float:
    """Sum of `rates` over backends adjacent to any frontend in the set."""
    touched: set[int] = set()
    for i in frontends:
        touched.update(sys.backends_of_frontend[i])
    return float(sum(rates[j] for j in touched))


def frontend_subsets(sys: BipartiteSystem):
    """All nonempty frontend index subsets (exponential; keep systems small)."""
    idx = range(len(sys.frontends))
    for r in range(1, len(sys.frontends) + 1):
        yield from (set(c) for c in combinations(idx, r))

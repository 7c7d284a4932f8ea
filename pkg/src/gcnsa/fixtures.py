"""Small deterministic synthetic graphs for tests, demos and smoke runs."""

from __future__ import annotations

import numpy as np

from .graph import Graph, make_graph
from .tensor import Rng


def planted_graph(n, c, d, homophily, avg_degree=3.0, signal=1.0, seed=0, name="planted") -> Graph:
    """Labels in ``c`` balanced classes, class-dependent features and a planted edge mix.

    Each edge joins two nodes of the same class with probability
    ``homophily`` and of different classes otherwise. Features are a
    per-class mean of magnitude ``signal`` plus unit uniform noise.
    """
    rng = Rng(seed)
    labels = np.arange(n) % c
    labels = labels[rng.permutation(n)]
    centres = rng.uniform((c, d), -1.0, 1.0) * signal
    x = centres[labels] + rng.uniform((n, d), -1.0, 1.0)
    members = [np.flatnonzero(labels == k) for k in range(c)]
    others = [np.flatnonzero(labels != k) for k in range(c)]
    m = int(round(avg_degree * n / 2))
    draws = rng.uniform((m, 3))
    edges = []
    for t in range(m):
        i = int(draws[t, 0] * n)
        pool = members[labels[i]] if draws[t, 1] < homophily else others[labels[i]]
        j = int(pool[int(draws[t, 2] * pool.size)])
        if i != j:
            edges.append((min(i, j), max(i, j)))
    edges = np.asarray(sorted(set(edges)), dtype=np.int64).reshape(-1, 2)
    return make_graph(x, edges, labels, name=name, warn=False)


def high_h_graph(seed=0, n=30) -> Graph:
    return planted_graph(n, 3, 6, 0.9, seed=seed, name="toy-high-h")


def low_h_graph(seed=0, n=30) -> Graph:
    return planted_graph(n, 3, 6, 0.1, seed=seed, name="toy-low-h")


def random_graph(n=20, d=5, c=3, p_edge=0.2, seed=0) -> Graph:
    rng = Rng(seed)
    x = rng.uniform((n, d), -1.0, 1.0)
    labels = (rng.uniform((n,)) * c).astype(np.int64)
    labels[:c] = np.arange(c)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.uniform((iu.size,)) < p_edge
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    return make_graph(x, edges, labels, name="toy-random", warn=False)


def toy_graphs(seed=0):
    return {"high-h": high_h_graph(seed), "low-h": low_h_graph(seed), "random": random_graph(seed=seed)}


def webkb_like(seed=0, n=183, d=64, c=5, homophily=0.15) -> Graph:
    """Heterophilous stand-in with WebKB-like size: informative features, misleading edges."""
    return planted_graph(n, c, d, homophily, avg_degree=3.2, signal=0.6, seed=seed, name="webkb-like")

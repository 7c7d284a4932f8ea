"""Graphs, sparse adjacency storage, dataset loaders, splits and homophily."""

from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError
from .tensor import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Graph:
    """Undirected node-labelled graph.

    ``edges`` is an (E, 2) int array of unique pairs with ``i < j``.
    """

    x: np.ndarray
    edges: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[0] != self.labels.shape[0]:
            raise DataError(f"features {self.x.shape} and labels {self.labels.shape} disagree")
        if not np.all(np.isfinite(self.x)):
            raise DataError("feature matrix contains NaN or infinity")

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def d(self) -> int:
        return int(self.x.shape[1])

    @property
    def c(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def adjacency(self) -> "SparseAdjacency":
        return SparseAdjacency.from_pairs(self.edges, self.n)

    def permute(self, perm) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        e = inv[self.edges]
        return make_graph(self.x[perm], e, self.labels[perm], name=self.name)


@dataclass(frozen=True)
class SparseAdjacency:
    """Square matrix in compressed row storage with sorted column indices."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int

    @classmethod
    def from_coo(cls, rows, cols, vals, n) -> "SparseAdjacency":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(np.cumsum(indptr), cols, vals, int(n))

    @classmethod
    def from_pairs(cls, pairs, n, weights=None) -> "SparseAdjacency":
        """Symmetric matrix holding each undirected pair in both directions."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        w = np.ones(len(pairs)) if weights is None else np.asarray(weights)
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        return cls.from_coo(rows, cols, np.concatenate([w, w]), n)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=self.data.dtype if self.data.size else float)
        out[self.rows(), self.indices] = self.data
        return out

    def upper_pairs(self):
        """(pairs, weights) for entries with row < col."""
        r = self.rows()
        keep = r < self.indices
        return np.stack([r[keep], self.indices[keep]], axis=1), self.data[keep]

    def is_symmetric(self) -> bool:
        m = self.to_scipy()
        d = m - m.T
        return d.nnz == 0 or not np.any(d.data)

    def same_as(self, other: "SparseAdjacency") -> bool:
        return (self.n == other.n and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.data, other.data))


def make_graph(x, edges, labels, name="", warn=True) -> Graph:
    """Build a :class:`Graph`, dropping self-loops and merging duplicate edges."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    n = x.shape[0]
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise DataError(f"edge {tuple(bad)} references a node outside [0, {n})")
    loops = e[:, 0] == e[:, 1]
    if loops.any() and warn:
        log.warning("dropping %d self-loop(s)", int(loops.sum()))
    e = np.sort(e[~loops], axis=1)
    e = np.unique(e, axis=0) if e.size else e.reshape(0, 2)
    _, labels = np.unique(labels, return_inverse=True)
    return Graph(x, e, labels.astype(np.int64), name)


# ---------------------------------------------------------------------------
# Loaders


def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def load_json_graph(path, name=None) -> Graph:
    """Read ``{"features": [[...]], "labels": [...], "edges": [[i, j], ...]}``."""
    with _open_text(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    missing = {"features", "labels", "edges"} - set(doc)
    if missing:
        raise DataError(f"{path}: missing key(s) {sorted(missing)}")
    try:
        x = np.asarray(doc["features"], dtype=np.float64)
        edges = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 2)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed features or edges ({exc})") from None
    return make_graph(x, edges, doc["labels"], name=name or _stem(path))


def _stem(path):
    name = Path(path).name
    for suffix in (".gz", ".json", ".content", ".cites"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name


def _content_cites_paths(path):
    p = Path(path)
    if p.is_dir():
        content = sorted(list(p.glob("*.content")) + list(p.glob("*.content.gz")))
        if not content:
            raise DataError(f"{p}: no *.content file found")
        p = content[0]
    base = str(p)
    for suffix in (".gz", ".content", ".cites"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    found = []
    for ext in ("content", "cites"):
        for cand in (f"{base}.{ext}", f"{base}.{ext}.gz"):
            if os.path.exists(cand):
                found.append(cand)
                break
        else:
            raise DataError(f"{base}.{ext}[.gz] not found")
    return found


def load_content_cites(path, name=None, drop_dangling=False) -> Graph:
    """Read a citation-network pair of TSV files.

    ``<base>.content`` rows are ``node-id  f1 ... fd  label``;
    ``<base>.cites`` rows are ``cited-id  citing-id``. ``path`` may be the
    directory, either file, or the common prefix.
    """
    content_path, cites_path = _content_cites_paths(path)
    ids, feats, labels = {}, [], []
    width = None
    with _open_text(content_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise DataError(f"{content_path}:{lineno}: expected id, features, label")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise DataError(f"{content_path}:{lineno}: {len(parts)} fields, expected {width}")
            if parts[0] in ids:
                raise DataError(f"{content_path}:{lineno}: duplicate node id {parts[0]!r}")
            try:
                feats.append([float(v) for v in parts[1:-1]])
            except ValueError:
                raise DataError(f"{content_path}:{lineno}: non-numeric feature") from None
            ids[parts[0]] = len(ids)
            labels.append(parts[-1])
    edges, dangling = [], 0
    with _open_text(cites_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DataError(f"{cites_path}:{lineno}: expected two node ids")
            a, b = ids.get(parts[0]), ids.get(parts[1])
            if a is None or b is None:
                if not drop_dangling:
                    missing = parts[0] if a is None else parts[1]
                    raise DataError(f"{cites_path}:{lineno}: unknown node id {missing!r}")
                dangling += 1
                continue
            edges.append((a, b))
    if dangling:
        log.warning("dropped %d edge(s) with unknown endpoints", dangling)
    return make_graph(np.asarray(feats), np.asarray(edges, dtype=np.int64).reshape(-1, 2),
                      labels, name=name or _stem(content_path))


def load_graph(path, fmt=None, **kwargs) -> Graph:
    """Load a graph in ``json`` or ``content-cites`` format (guessed if omitted)."""
    p = Path(path)
    if fmt is None:
        fmt = "json" if p.name.endswith((".json", ".json.gz")) else "content-cites"
    if fmt == "json":
        return load_json_graph(p, **kwargs)
    if fmt in ("content-cites", "content_cites", "planetoid-raw"):
        return load_content_cites(p, **kwargs)
    raise ConfigError(f"unknown graph format {fmt!r}")


def save_json_graph(g: Graph, path):
    doc = {"features": g.x.tolist(), "labels": g.labels.tolist(), "edges": g.edges.tolist()}
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", encoding="utf-8") as fh:
        json.dump(doc, fh)


def write_edge_csv(adj: SparseAdjacency, path):
    """Write each undirected pair once as ``src,dst,weight`` with src < dst."""
    pairs, w = adj.upper_pairs()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["src", "dst", "weight"])
        for (i, j), v in zip(pairs.tolist(), w.tolist()):
            out.writerow([i, j, repr(float(v))])


def read_edge_csv(path, n: int) -> SparseAdjacency:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["src", "dst", "weight"]:
            raise DataError(f"{path}: expected header src,dst,weight, got {header}")
        for lineno, rec in enumerate(reader, 2):
            try:
                i, j, w = int(rec[0]), int(rec[1]), float(rec[2])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed record {rec}") from None
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise DataError(f"{path}:{lineno}: invalid pair ({i}, {j}) for n={n}")
            rows.append((i, j, w))
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    return SparseAdjacency.from_pairs(arr[:, :2].astype(np.int64), n, arr[:, 2])


# ---------------------------------------------------------------------------
# Normalization


def normalize_with_self_loops(adj: SparseAdjacency) -> SparseAdjacency:
    """D^-1/2 (A + I) D^-1/2 where degrees include the self-loop."""
    r = adj.rows()
    n = adj.n
    off = r != adj.indices
    rows = np.concatenate([r[off], np.arange(n)])
    cols = np.concatenate([adj.indices[off], np.arange(n)])
    vals = np.concatenate([np.ones(int(off.sum())), np.ones(n)])
    deg = np.bincount(rows, weights=vals, minlength=n)
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return SparseAdjacency.from_coo(rows, cols, vals, n)


def normalize_no_self_loops(adj: SparseAdjacency) -> SparseAdjacency:
    """D^-1/2 A D^-1/2 with weighted degrees; zero-degree rows stay zero."""
    if adj.data.size and np.any(adj.data < 0):
        raise DataError("normalize_no_self_loops: adjacency has negative entries")
    r = adj.rows()
    deg = np.bincount(r, weights=adj.data, minlength=adj.n)
    prod = deg[r] * deg[adj.indices]
    pos = prod > 0
    scale_ = np.where(pos, 1.0 / np.sqrt(np.where(pos, prod, 1.0)), 0.0)
    return SparseAdjacency(adj.indptr, adj.indices, adj.data * scale_, adj.n)


# ---------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def _largest_remainder(total, ratios):
    raw = np.asarray(ratios, dtype=np.float64) * total
    counts = np.floor(raw + 1e-9).astype(int)
    short = total - counts.sum()
    frac = raw - counts
    for k in np.argsort(-frac, kind="stable")[:short]:
        counts[k] += 1
    return counts


def make_splits(g: Graph, ratios=(0.6, 0.2, 0.2), rng: Rng | None = None,
                min_per_class: int = 3) -> SplitMasks:
    """Per-class random split at ``ratios`` with largest-remainder rounding."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    rng = rng or Rng(0)
    parts = ([], [], [])
    for cls in range(g.c):
        members = np.flatnonzero(g.labels == cls)
        if members.size < min_per_class:
            raise ConfigError(f"class {cls} has {members.size} node(s); at least {min_per_class} required")
        members = members[rng.permutation(members.size)]
        counts = _largest_remainder(members.size, ratios)
        edges = np.cumsum(np.concatenate([[0], counts]))
        for k in range(3):
            parts[k].append(members[edges[k]:edges[k + 1]])
    train, val, test = (np.sort(np.concatenate(p)) if p else np.zeros(0, np.int64) for p in parts)
    return SplitMasks(train, val, test)


# ---------------------------------------------------------------------------
# Homophily


def homophily_ratio(g: Graph, adj: SparseAdjacency | None = None) -> float:
    """Fraction of off-diagonal structural nonzeros joining equal labels."""
    adj = g.adjacency() if adj is None else adj
    r = adj.rows()
    off = r != adj.indices
    if not off.any():
        raise DataError("homophily is undefined for a graph without edges")
    same = g.labels[r[off]] == g.labels[adj.indices[off]]
    return float(same.mean())


def connected_components(adj: SparseAdjacency) -> int:
    from scipy.sparse.csgraph import connected_components as cc

    return int(cc(adj.to_scipy(), directed=False)[0])

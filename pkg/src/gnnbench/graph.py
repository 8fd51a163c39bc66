"""Graph and node-table ingestion, component filtering, normalization, splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .rng import stream

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph.

    ``edges`` is an (E, 2) integer array with ``u < v`` per row; ``weights``
    holds one positive weight per edge.
    """

    node_ids: list[str]
    edges: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        n = len(self.node_ids)
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise DataError("edge endpoint out of range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise DataError("self-loops are not stored")
        if np.any(self.weights <= 0):
            raise DataError("edge weights must be positive")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @classmethod
    def from_edges(cls, node_ids, pairs, weights=None) -> "Graph":
        """Build from index pairs, canonicalizing and collapsing duplicates (max weight)."""
        pairs = list(pairs)
        if weights is None:
            weights = [1.0] * len(pairs)
        best: dict[tuple[int, int], float] = {}
        for (u, v), w in zip(pairs, weights):
            u, v = int(u), int(v)
            if u == v:
                continue
            key = (u, v) if u < v else (v, u)
            if key not in best or w > best[key]:
                best[key] = float(w)
        edges = np.array(list(best.keys()), dtype=np.int64).reshape(-1, 2)
        return cls(list(node_ids), edges, np.array(list(best.values()), dtype=np.float64))


@dataclass(frozen=True)
class NodeTable:
    features: np.ndarray  # (N, F) float64
    labels: np.ndarray  # (N,) int64 in {0, 1}

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise DataError("features must be an N x F matrix with F >= 1")
        if len(self.labels) != len(self.features):
            raise DataError("labels and features disagree on node count")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError("labels must be 0 or 1")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(len(self.labels) - self.labels.sum())


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Symmetric GCN propagation matrix plus the raw neighborhood structure.

    ``src``/``dst`` list every directed neighbor message j -> i (both
    directions of each edge, no self-loops), sorted by (dst, src).
    """

    matrix: sp.csr_matrix
    degrees: np.ndarray
    neighbors: list[np.ndarray]
    src: np.ndarray
    dst: np.ndarray
    edge_weight: np.ndarray
    n: int


@dataclass(frozen=True)
class SplitMask:
    train: np.ndarray
    test: np.ndarray
    seed: int


@dataclass(frozen=True)
class GraphStats:
    n_nodes: int
    n_edges: int
    density: float
    avg_degree: float
    pos_nodes: int
    neg_nodes: int
    pos_neg_ratio: float

    HEADER = ("nodes", "edges", "density", "avg_degree", "pos_nodes", "neg_nodes", "pos_neg_ratio")

    def csv_row(self) -> str:
        return ",".join([
            str(self.n_nodes), str(self.n_edges), f"{self.density:.5f}",
            f"{self.avg_degree:.2f}", str(self.pos_nodes), str(self.neg_nodes),
            f"{self.pos_neg_ratio:.5f}",
        ])


def _open_csv(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path.open(newline="", encoding="utf-8")


def load_edge_csv(path) -> Graph:
    """Read ``source,target[,weight]`` rows into an undirected Graph."""
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header not in (["source", "target"], ["source", "target", "weight"]):
            raise DataError(f"{path}: expected header source,target[,weight], got {header}")
        ncol = len(header)
        index: dict[str, int] = {}
        pairs, weights = [], []
        self_loops = 0
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != ncol:
                raise DataError(f"{path}: row {rowno}: expected {ncol} columns, got {len(row)}")
            a, b = row[0].strip(), row[1].strip()
            if not a or not b:
                raise DataError(f"{path}: row {rowno}: empty node identifier")
            w = 1.0
            if ncol == 3:
                try:
                    w = float(row[2])
                except ValueError:
                    raise DataError(f"{path}: row {rowno}: weight {row[2]!r} is not a number") from None
                if not (w > 0 and math.isfinite(w)):
                    raise DataError(f"{path}: row {rowno}: weight must be positive, got {row[2]}")
            for name in (a, b):
                if name not in index:
                    index[name] = len(index)
            if a == b:
                self_loops += 1
                continue
            pairs.append((index[a], index[b]))
            weights.append(w)
    if self_loops:
        log.warning("%s: dropped %d self-loop row(s)", path, self_loops)
    return Graph.from_edges(list(index), pairs, weights)


def load_node_csv(path, graph: Graph, fill_missing: bool = False) -> NodeTable:
    """Read ``id,feat_1..feat_F,label`` rows, reordered to graph node order."""
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if len(header) < 3 or header[0] != "id" or header[-1] != "label":
            raise DataError(f"{path}: expected header id,feat_1,...,feat_F,label")
        nfeat = len(header) - 2
        lookup = {name: i for i, name in enumerate(graph.node_ids)}
        features = np.zeros((graph.n_nodes, nfeat))
        labels = np.zeros(graph.n_nodes, dtype=np.int64)
        seen = np.zeros(graph.n_nodes, dtype=bool)
        skipped = 0
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rowno}: expected {len(header)} columns, got {len(row)}")
            i = lookup.get(row[0].strip())
            if i is None:
                skipped += 1
                continue
            try:
                feats = [float(v) for v in row[1:-1]]
            except ValueError:
                raise DataError(f"{path}: row {rowno}: non-numeric feature") from None
            if not all(math.isfinite(v) for v in feats):
                raise DataError(f"{path}: row {rowno}: non-finite feature")
            label = row[-1].strip()
            if label not in ("0", "1"):
                raise DataError(f"{path}: row {rowno}: label must be 0 or 1, got {label!r}")
            features[i] = feats
            labels[i] = int(label)
            seen[i] = True
    if skipped:
        log.warning("%s: skipped %d node(s) absent from the graph", path, skipped)
    missing = np.flatnonzero(~seen)
    if missing.size and not fill_missing:
        sample = ", ".join(graph.node_ids[i] for i in missing[:5])
        raise DataError(f"{path}: {missing.size} graph node(s) missing from node file (e.g. {sample})")
    return NodeTable(features, labels)


def largest_connected_component(graph: Graph, table: NodeTable) -> tuple[Graph, NodeTable]:
    """Induced subgraph on the largest component; ties go to the smallest min index."""
    n = graph.n_nodes
    if n == 0:
        raise DataError("empty graph")
    a = sp.coo_matrix((np.ones(graph.n_edges), (graph.edges[:, 0], graph.edges[:, 1])), shape=(n, n))
    ncomp, comp = connected_components(a, directed=False)
    sizes = np.bincount(comp, minlength=ncomp)
    first = np.full(ncomp, n)
    np.minimum.at(first, comp, np.arange(n))
    best = min(range(ncomp), key=lambda c: (-sizes[c], first[c]))
    keep = np.flatnonzero(comp == best)
    if keep.size == n:
        return graph, table
    remap = np.full(n, -1)
    remap[keep] = np.arange(keep.size)
    emask = comp[graph.edges[:, 0]] == best
    sub = Graph(
        [graph.node_ids[i] for i in keep],
        remap[graph.edges[emask]],
        graph.weights[emask],
    )
    return sub, NodeTable(table.features[keep], table.labels[keep])


def normalized_adjacency(graph: Graph) -> NormalizedAdjacency:
    """D^-1/2 (A + I) D^-1/2 with d_i = 1 + sum of incident edge weights."""
    n = graph.n_nodes
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    w = graph.weights
    deg = np.ones(n)
    np.add.at(deg, u, w)
    np.add.at(deg, v, w)
    rows = np.concatenate([u, v, np.arange(n)])
    cols = np.concatenate([v, u, np.arange(n)])
    vals = np.concatenate([w, w, np.ones(n)])
    vals = vals / np.sqrt(deg[rows] * deg[cols])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    mat.sort_indices()

    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    ew = np.concatenate([w, w])
    order = np.lexsort((src, dst))
    src, dst, ew = src[order], dst[order], ew[order]
    bounds = np.searchsorted(dst, np.arange(n + 1))
    neighbors = [src[bounds[i]:bounds[i + 1]] for i in range(n)]
    return NormalizedAdjacency(mat, deg, neighbors, src, dst, ew, n)


def graph_stats(graph: Graph, table: NodeTable) -> GraphStats:
    n, e = graph.n_nodes, graph.n_edges
    if n < 2:
        raise DataError("density is undefined for fewer than two nodes")
    pos, neg = table.n_pos, table.n_neg
    return GraphStats(
        n_nodes=n,
        n_edges=e,
        density=2.0 * e / (n * (n - 1)),
        avg_degree=2.0 * e / n,
        pos_nodes=pos,
        neg_nodes=neg,
        pos_neg_ratio=pos / neg if neg else math.inf,
    )


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(table, train_fraction: float, seed: int) -> SplitMask:
    """Per-class seeded shuffle; each class keeps at least one node on each side.

    ``table`` is a NodeTable or a bare label vector.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    labels = table.labels if isinstance(table, NodeTable) else np.asarray(table)
    rng = stream(seed, "split")
    train = np.zeros(len(labels), dtype=bool)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise DataError(f"class {cls} has {idx.size} member(s); cannot stratify")
        k = min(max(round_half_up(train_fraction * idx.size), 1), idx.size - 1)
        train[rng.permutation(idx)[:k]] = True
    return SplitMask(train=train, test=~train, seed=seed)

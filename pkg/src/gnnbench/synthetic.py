"""Planted two-community benchmark graphs with a known answer."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .graph import Graph, NodeTable
from .rng import stream


def planted_communities(n: int = 400, p_in: float = 0.05, p_out: float = 0.005,
                        noise: float = 0.6, seed: int = 0) -> tuple[Graph, NodeTable]:
    """Two equal blocks; block 1 is the positive class.

    The single node feature is the fraction of a node's neighbors that are
    positive, plus Gaussian noise of standard deviation ``noise``. Isolated
    nodes get 0.5 before noise.
    """
    rng = stream(seed, "planted")
    labels = np.zeros(n, dtype=np.int64)
    labels[n // 2:] = 1
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    keep = rng.random(iu.size) < np.where(same, p_in, p_out)
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    deg = np.bincount(edges.ravel(), minlength=n)
    pos_nbrs = np.zeros(n)
    np.add.at(pos_nbrs, edges[:, 0], labels[edges[:, 1]])
    np.add.at(pos_nbrs, edges[:, 1], labels[edges[:, 0]])
    frac = np.where(deg > 0, pos_nbrs / np.maximum(deg, 1), 0.5)
    feature = frac + noise * rng.standard_normal(n)
    graph = Graph([f"n{i}" for i in range(n)], edges.astype(np.int64), np.ones(len(edges)))
    return graph, NodeTable(feature.reshape(-1, 1), labels)


def write_dataset(graph: Graph, table: NodeTable, edge_path, node_path):
    """Write the edge and node CSVs consumed by the loaders."""
    with Path(edge_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target"])
        for u, v in graph.edges:
            w.writerow([graph.node_ids[u], graph.node_ids[v]])
    with Path(node_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        nfeat = table.features.shape[1]
        w.writerow(["id", *(f"feat_{k}" for k in range(1, nfeat + 1)), "label"])
        for name, row, label in zip(graph.node_ids, table.features, table.labels):
            w.writerow([name, *(repr(float(v)) for v in row), int(label)])

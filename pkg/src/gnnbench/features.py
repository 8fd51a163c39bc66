"""Gene-level node features from region p-values, and panel labels."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import DataError, Graph, NodeTable

REGION_KINDS = ("cds", "utr3", "utr5", "promoter", "enhancer")
P_FLOOR = 1e-300

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _lower_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by its power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_fraction(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def upper_gamma_q(a: float, x: float) -> float:
    if x <= 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _lower_series(a, x)
    return _upper_fraction(a, x)


def chi2_survival(x: float, df: int) -> float:
    """Upper-tail probability of the chi-squared distribution with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if x < 0 or math.isnan(x):
        raise ValueError(f"chi-squared statistic must be >= 0, got {x}")
    return min(1.0, max(0.0, upper_gamma_q(df / 2.0, x / 2.0)))


def fisher_combine(pvals) -> float:
    """Fisher's method: X = -2 sum(ln p) referred to chi-squared with 2k df."""
    pvals = list(pvals)
    if not pvals:
        raise ValueError("fisher_combine needs at least one p-value")
    for p in pvals:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p-values must lie in (0, 1], got {p}")
    stat = -2.0 * sum(math.log(max(p, P_FLOOR)) for p in pvals)
    return chi2_survival(stat, 2 * len(pvals))


@dataclass(frozen=True)
class RegionPValues:
    gene: str
    p_values: dict[str, float]

    def __post_init__(self):
        if not self.p_values:
            raise DataError(f"{self.gene}: no region p-values")
        for kind, p in self.p_values.items():
            if kind not in REGION_KINDS:
                raise DataError(f"{self.gene}: unknown region {kind!r}")
            if not 0.0 < p <= 1.0:
                raise DataError(f"{self.gene}: p-value for {kind} outside (0, 1]: {p}")


@dataclass(frozen=True)
class GenePanel:
    genes: frozenset[str]
    source: str = ""

    def __post_init__(self):
        if not self.genes:
            raise DataError("gene panel is empty")


def load_pvalues_csv(path) -> list[RegionPValues]:
    """Read ``gene,cds,utr3,utr5,promoter,enhancer``; empty cells are missing regions."""
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        if header != ["gene", *REGION_KINDS]:
            raise DataError(f"{path}: expected header gene,{','.join(REGION_KINDS)}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rowno}: expected {len(header)} columns")
            pv = {}
            for kind, cell in zip(REGION_KINDS, row[1:]):
                cell = cell.strip()
                if cell:
                    try:
                        pv[kind] = float(cell)
                    except ValueError:
                        raise DataError(f"{path}: row {rowno}: bad p-value {cell!r}") from None
            if pv:
                out.append(RegionPValues(row[0].strip(), pv))
    return out


def load_panel(path, source: str = "") -> GenePanel:
    """One gene identifier per line; blank lines and ``#`` comments are ignored."""
    genes = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            genes.add(line)
    return GenePanel(frozenset(genes), source or Path(path).stem)


def build_node_table(regions, panel: GenePanel, graph: Graph, transform: str = "neglog10") -> NodeTable:
    """One combined-p feature per graph node, labelled 1 iff the gene is in the panel.

    Genes without any region p-value get a combined p of 1.
    """
    if transform not in ("raw", "neglog10"):
        raise ValueError(f"unknown transform {transform!r}")
    if not panel.genes:
        raise DataError("gene panel is empty")
    combined = {r.gene: fisher_combine(r.p_values.values()) for r in regions}
    p = np.array([combined.get(g, 1.0) for g in graph.node_ids])
    if transform == "neglog10":
        feat = np.clip(-np.log10(np.maximum(p, P_FLOOR)), 0.0, 300.0)
    else:
        feat = p
    labels = np.array([1 if g in panel.genes else 0 for g in graph.node_ids], dtype=np.int64)
    if labels.sum() == 0:
        raise DataError("no panel gene occurs in the graph; nothing to learn")
    return NodeTable(feat.reshape(-1, 1), labels)


def export_node_csv(table: NodeTable, graph: Graph, path):
    """Write the node CSV read by :func:`gnnbench.graph.load_node_csv`."""
    nfeat = table.features.shape[1]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *(f"feat_{k}" for k in range(1, nfeat + 1)), "label"])
        for name, row, label in zip(graph.node_ids, table.features, table.labels):
            w.writerow([name, *(repr(float(v)) for v in row), int(label)])

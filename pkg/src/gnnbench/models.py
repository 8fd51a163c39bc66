"""Two-layer GNN architectures and the logistic-regression baseline.

Every forward program maps node features to one raw logit per node. Layers
carry a bias after the propagation step; hidden activations are ReLU and
dropout follows each of the two convolutional blocks in train mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import NormalizedAdjacency
from .rng import stream
from .tensor import Tensor

ARCHITECTURES = ("gcn", "hgcn", "phgcn", "gat", "gat_3h", "gin", "gtn", "gcn2", "sage", "lr")

DISPLAY_NAMES = {
    "gcn": "GCN", "hgcn": "HGCN", "phgcn": "PHGCN", "gat": "GAT", "gat_3h": "GAT3H",
    "gin": "GIN", "gtn": "GTN", "gcn2": "GCN2", "sage": "GraphSAGE", "lr": "LR",
}


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    in_dim: int
    hidden_dim: int = 16
    out_dim: int = 1
    dropout: float = 0.2
    heads: int | None = None
    alpha: float = 0.1
    beta: float = 1.0
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.architecture!r}; valid: {', '.join(ARCHITECTURES)}"
            )
        if self.heads is None:
            object.__setattr__(self, "heads", 3 if self.architecture == "gat_3h" else 1)
        if self.in_dim < 1 or self.hidden_dim < 1 or self.heads < 1:
            raise ValueError("in_dim, hidden_dim and heads must be positive")
        if self.out_dim != 1:
            raise ValueError("only a single output logit is supported")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, int]]:
    """Ordered parameter names and shapes for an architecture."""
    f, h = spec.in_dim, spec.hidden_dim
    arch = spec.architecture
    if arch == "gcn":
        return {"W1": (f, h), "b1": (1, h), "W2": (h, 1), "b2": (1, 1)}
    if arch == "hgcn":
        return {"W1": (f, h), "b1": (1, h), "W2": (h, h), "b2": (1, h),
                "W_final": (2 * h, 1), "b_final": (1, 1)}
    if arch == "phgcn":
        return {"W1": (f, h), "b1": (1, h), "W2": (f, h), "b2": (1, h),
                "W_final": (2 * h, 1), "b_final": (1, 1)}
    if arch in ("gat", "gat_3h"):
        k = spec.heads
        return {"W1": (f, k * h), "a1": (2 * h, k), "b1": (1, k * h),
                "W2": (k * h, 1), "a2": (2, 1), "b2": (1, 1)}
    if arch == "sage":
        return {"W1_self": (f, h), "W1_nbr": (f, h), "b1": (1, h),
                "W2_self": (h, 1), "W2_nbr": (h, 1), "b2": (1, 1)}
    if arch == "gin":
        return {"W1a": (f, h), "b1a": (1, h), "W1b": (h, h), "b1b": (1, h),
                "W2a": (h, h), "b2a": (1, h), "W2b": (h, h), "b2b": (1, h),
                "W_out": (h, 1), "b_out": (1, 1)}
    if arch == "gcn2":
        return {"W_in": (f, h), "b_in": (1, h), "W1": (h, h), "W2": (h, h),
                "W_out": (h, 1), "b_out": (1, 1)}
    if arch == "gtn":
        shapes = {}
        for layer, (i, o) in enumerate([(f, h), (h, 1)], start=1):
            for role in ("root", "value", "query", "key"):
                shapes[f"W{layer}_{role}"] = (i, o)
            shapes[f"b{layer}"] = (1, o)
        return shapes
    return {"w": (f, 1), "b": (1, 1)}


def init_params(spec: ModelSpec, seed: int) -> dict[str, Tensor]:
    """Glorot-uniform draws for every parameter, in declaration order."""
    rng = stream(seed, "init")
    params = {}
    for name, (fan_in, fan_out) in param_shapes(spec).items():
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    return params


# ---------------------------------------------------------------- layers

def gcn_layer(adj: NormalizedAdjacency, h: Tensor, w: Tensor, b: Tensor | None = None,
              activate: bool = True) -> Tensor:
    out = T.spmm(adj.matrix, T.matmul(h, w))
    if b is not None:
        out = T.add_bias(out, b)
    return T.relu(out) if activate else out


def gat_layer(adj: NormalizedAdjacency, h: Tensor, w: Tensor, a: Tensor, heads: int,
              concat_heads: bool, slope: float = 0.2) -> Tensor:
    """Attention over N(i) and i itself; returns pre-activation output.

    ``a`` holds one column per head: the first half scores the receiving
    node, the second half the sending node.
    """
    n = adj.n
    loops = np.arange(n)
    src = np.concatenate([adj.src, loops])
    dst = np.concatenate([adj.dst, loops])
    wh = T.matmul(h, w)
    width = wh.shape[1] // heads
    outs = []
    for k in range(heads):
        whk = T.take_cols(wh, k * width, (k + 1) * width) if heads > 1 else wh
        ak = T.take_cols(a, k, k + 1) if heads > 1 else a
        a_recv = T.take_rows(ak, np.arange(width))
        a_send = T.take_rows(ak, np.arange(width, 2 * width))
        score = T.add(T.take_rows(T.matmul(whk, a_recv), dst),
                      T.take_rows(T.matmul(whk, a_send), src))
        alpha = T.segment_softmax(T.leaky_relu(score, slope), dst, n)
        msg = T.mul(T.take_rows(whk, src), alpha)
        outs.append(T.segment_reduce(msg, dst, n, "sum"))
    if heads == 1:
        return outs[0]
    if concat_heads:
        return T.concat_cols(outs)
    total = outs[0]
    for o in outs[1:]:
        total = T.add(total, o)
    return T.scale(total, 1.0 / heads)


def gat_attention(adj: NormalizedAdjacency, h: Tensor, w: Tensor, a: Tensor,
                  slope: float = 0.2) -> np.ndarray:
    """Single-head attention weights in (src, dst) order with self-loops last."""
    n = adj.n
    src = np.concatenate([adj.src, np.arange(n)])
    dst = np.concatenate([adj.dst, np.arange(n)])
    wh = (h.value @ w.value)
    width = wh.shape[1]
    av = a.value[:, 0]
    score = wh[dst] @ av[:width] + wh[src] @ av[width:]
    logits = Tensor(np.where(score > 0, score, slope * score)[:, None])
    return T.segment_softmax(logits, dst, n).value[:, 0]


def sage_layer(adj: NormalizedAdjacency, h: Tensor, w_self: Tensor, w_nbr: Tensor,
               b: Tensor) -> Tensor:
    nbr_mean = T.segment_reduce(T.take_rows(h, adj.src), adj.dst, adj.n, "mean")
    return T.add_bias(T.add(T.matmul(h, w_self), T.matmul(nbr_mean, w_nbr)), b)


def gin_aggregate(adj: NormalizedAdjacency, h: Tensor, eps: float = 0.0) -> Tensor:
    nbr_sum = T.segment_reduce(T.take_rows(h, adj.src), adj.dst, adj.n, "sum")
    own = h if eps == 0.0 else T.scale(h, 1.0 + eps)
    return T.add(own, nbr_sum)


def gin_layer(adj, h, wa, ba, wb, bb) -> Tensor:
    z = T.relu(T.add_bias(T.matmul(gin_aggregate(adj, h), wa), ba))
    return T.add_bias(T.matmul(z, wb), bb)


def gcn2_layer(adj: NormalizedAdjacency, h: Tensor, h0: Tensor, w: Tensor,
               alpha: float, beta: float) -> Tensor:
    support = T.add(T.scale(T.spmm(adj.matrix, h), 1.0 - alpha), T.scale(h0, alpha))
    if beta == 1.0:
        mixed = T.matmul(support, w)
    elif beta == 0.0:
        mixed = support
    else:
        mixed = T.add(T.scale(support, 1.0 - beta), T.scale(T.matmul(support, w), beta))
    return T.relu(mixed)


def gtn_layer(adj: NormalizedAdjacency, h: Tensor, w_root: Tensor, w_value: Tensor,
              w_query: Tensor, w_key: Tensor, b: Tensor) -> Tensor:
    """Root term plus scaled dot-product attention over N(i) (no self term)."""
    q = T.matmul(h, w_query)
    k = T.matmul(h, w_key)
    v = T.matmul(h, w_value)
    d = q.shape[1]
    score = T.scale(T.rowdot(T.take_rows(q, adj.dst), T.take_rows(k, adj.src)), 1.0 / math.sqrt(d))
    alpha = T.segment_softmax(score, adj.dst, adj.n)
    agg = T.segment_reduce(T.mul(T.take_rows(v, adj.src), alpha), adj.dst, adj.n, "sum")
    return T.add_bias(T.add(T.matmul(h, w_root), agg), b)


# ---------------------------------------------------------------- forward programs

def _drop(spec, t, mode, rng):
    return T.dropout(t, spec.dropout, mode == "train", rng)


def forward_gcn(spec, params, adj, x, mode="eval", rng=None) -> Tensor:
    h = _drop(spec, gcn_layer(adj, x, params["W1"], params["b1"]), mode, rng)
    return gcn_layer(adj, h, params["W2"], params["b2"], activate=False)


def forward_hgcn(spec, params, adj, x, mode="eval", rng=None) -> Tensor:
    h1 = _drop(spec, gcn_layer(adj, x, params["W1"], params["b1"]), mode, rng)
    h2 = _drop(spec, gcn_layer(adj, h1, params["W2"], params["b2"]), mode, rng)
    return T.add_bias(T.matmul(T.concat_cols([h1, h2]), params["W_final"]), params["b_final"])


def forward_phgcn(spec, params, adj, x, mode="eval", rng=None) -> Tensor:
    h1 = _drop(spec, gcn_layer(adj, x, params["W1"], params["b1"]), mode, rng)
    h2 = _drop(spec, gcn_layer(adj, x, params["W2"], params["b2"]), mode, rng)
    return T.add_bias(T.matmul(T.concat_cols([h1, h2]), params["W_final"]), params["b_final"])


def forward_gat(spec, params, adj, x, mode="eval", rng=None) -> Tensor:
    s = spec.leaky_slope
    h = gat_layer(adj, x, params["W1"], params["a1"], spec.heads, True, s)
    h = _drop(spec, T.relu(T.add_bias(h, params["b1"])), mode, rng)
    out = gat_layer(adj, h, params["W2"], params["a2"], 1, False, s)
    return T.add_bias(out, params["b2"])


def forward_sage(spec, params, adj, x, mode="eval", rng=None) -> Tensor:
    h = T.relu(sage_layer(adj, x, params["W1_self"], params["W1_nbr"], params["b1"]))
    h = _drop(spec, h, mode, rng)
    return sage_layer(adj, h, params["W2_self"], params["W2_nbr"], params["b2"])


def forward_gin(spec, params, adj, x, mode="eval", rng=None) -> Tensor:
    p = params
    h = _drop(spec, T.relu(gin_layer(adj, x, p["W1a"], p["b1a"], p["W1b"], p["b1b"])), mode, rng)
    h = _drop(spec, T.relu(gin_layer(adj, h, p["W2a"], p["b2a"], p["W2b"], p["b2b"])), mode, rng)
    return T.add_bias(T.matmul(h, p["W_out"]), p["b_out"])


def forward_gcn2(spec, params, adj, x, mode="eval", rng=None) -> Tensor:
    h0 = T.relu(T.add_bias(T.matmul(x, params["W_in"]), params["b_in"]))
    h = _drop(spec, gcn2_layer(adj, h0, h0, params["W1"], spec.alpha, spec.beta), mode, rng)
    h = _drop(spec, gcn2_layer(adj, h, h0, params["W2"], spec.alpha, spec.beta), mode, rng)
    return T.add_bias(T.matmul(h, params["W_out"]), params["b_out"])


def forward_gtn(spec, params, adj, x, mode="eval", rng=None) -> Tensor:
    p = params
    h = gtn_layer(adj, x, p["W1_root"], p["W1_value"], p["W1_query"], p["W1_key"], p["b1"])
    h = _drop(spec, T.relu(h), mode, rng)
    return gtn_layer(adj, h, p["W2_root"], p["W2_value"], p["W2_query"], p["W2_key"], p["b2"])


def forward_lr(params, x) -> Tensor:
    return T.add_bias(T.matmul(x, params["w"]), params["b"])


_FORWARD = {
    "gcn": forward_gcn, "hgcn": forward_hgcn, "phgcn": forward_phgcn,
    "gat": forward_gat, "gat_3h": forward_gat, "sage": forward_sage,
    "gin": forward_gin, "gcn2": forward_gcn2, "gtn": forward_gtn,
}


def forward(spec: ModelSpec, params, adj: NormalizedAdjacency, x: Tensor, mode: str = "eval",
            rng: np.random.Generator | None = None) -> Tensor:
    """Dispatch to the architecture's forward program; returns N x 1 logits."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if spec.architecture == "lr":
        return forward_lr(params, x)
    return _FORWARD[spec.architecture](spec, params, adj, x, mode, rng)

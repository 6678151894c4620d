"""Forward computation: gate fusion, attentive propagation, aggregators, head."""
from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ..config import LayerConfig
from ..kg import PropagationGraph
from ..numerics import (
    Segments,
    ShapeError,
    Tensor,
    as_tensor,
    concat,
    dropout,
    gather_rows,
    leaky_relu,
    matmul,
    segment_softmax,
    segment_sum,
    sigmoid,
    tanh,
)
from .params import ModelParams

log = logging.getLogger(__name__)
_warned: set = set()


class NumericError(ArithmeticError):
    def __init__(self, message: str, layer: Optional[int] = None):
        super().__init__(message)
        self.layer = layer


def fuse_literals(e, n, t, W_E, W_N, W_T, b, W) -> Tensor:
    """Gate entity rows ``e`` with numeric ``n`` and text ``t`` literals.

    mu = sigmoid(e W_E + n W_N + t W_T + b), nu = tanh([e|n|t] W),
    output mu * nu + (1 - mu) * e.
    """
    e, n, t = as_tensor(e), as_tensor(n), as_tensor(t)
    if e.shape[1] != W_E.shape[0] or n.shape[1] != W_N.shape[0] or t.shape[1] != W_T.shape[0]:
        raise ShapeError(f"literal widths {e.shape[1]}/{n.shape[1]}/{t.shape[1]} do not match "
                         f"gate weights {W_E.shape[0]}/{W_N.shape[0]}/{W_T.shape[0]}")
    if W_E.shape[1] != e.shape[1]:
        raise ShapeError("gate output width must equal the entity embedding width")
    mu = sigmoid(matmul(e, W_E) + matmul(n, W_N) + matmul(t, W_T) + b)
    nu = tanh(matmul(concat([e, n, t], axis=1), W))
    return mu * nu + (1.0 - mu) * e


def attention_scores(H, R, W_att, graph: PropagationGraph,
                     src: Optional[Segments] = None, dst: Optional[Segments] = None) -> Tensor:
    """Per-edge score (W t)^T tanh(W h + r) for every edge of ``graph``."""
    if W_att.shape[0] != W_att.shape[1]:
        raise ShapeError(f"attention weight must be square, got {W_att.shape}")
    if src is None:
        src = Segments(graph.src, graph.n_entities)
    if dst is None:
        dst = Segments(graph.dst, graph.n_entities)
    HW = matmul(H, W_att)
    heads = gather_rows(HW, src)
    tails = gather_rows(HW, dst)
    rels = gather_rows(R, Segments(graph.rel, R.shape[0]))
    return (tails * tanh(heads + rels)).sum(axis=1)


def normalize_attention(scores, src: Segments) -> Tensor:
    """Softmax of edge scores within each entity's incident edge set."""
    return segment_softmax(scores, src)


def aggregate_neighborhood(H, weights, src: Segments, dst: Segments) -> Tensor:
    """h_N[i] = sum over edges (i, r, k) of weight * H[k]; isolated rows are 0."""
    msgs = gather_rows(H, dst) * as_tensor(weights).reshape(-1, 1)
    return segment_sum(msgs, src)


def apply_aggregator(h, h_n, kind: str, layer: dict, epsilon: float | Tensor = 0.0) -> Tensor:
    """Combine self rows ``h`` with neighbourhood rows ``h_n``.

    ``layer`` maps short names (W, W1, W2, fc1, fc1_b, fc2, fc2_b) to tensors.
    """
    if kind == "gcn":
        return leaky_relu(matmul(h + h_n, layer["W"]))
    if kind == "sage":
        return leaky_relu(matmul(concat([h, h_n], axis=1), layer["W"]))
    if kind == "bi":
        return (leaky_relu(matmul(h + h_n, layer["W1"]))
                + leaky_relu(matmul(h * h_n, layer["W2"])))
    if kind == "gin":
        x = (1.0 + epsilon) * h + h_n
        hidden = leaky_relu(matmul(x, layer["fc1"]) + layer["fc1_b"])
        return leaky_relu(matmul(hidden, layer["fc2"]) + layer["fc2_b"])
    raise ValueError(f"unknown aggregator {kind!r}")


def residual_beta(lambda_rc: float, layer: int) -> float:
    """log(lambda / (1 + l)) clamped to [0, 1]."""
    beta = math.log(lambda_rc / (1.0 + layer))
    if not 0.0 <= beta <= 1.0:
        clamped = min(max(beta, 0.0), 1.0)
        if (lambda_rc, layer) not in _warned:
            _warned.add((lambda_rc, layer))
            log.warning("beta for layer %d is %.4f, clamped to %.1f", layer, beta, clamped)
        return clamped
    return beta


def residual_identity(M, H0, alpha: float, beta: float, W) -> Tensor:
    """sigma(((1 - alpha) M + alpha H0) ((1 - beta) I + beta W))."""
    mixed = (1.0 - alpha) * as_tensor(M) + alpha * as_tensor(H0)
    if beta == 0.0:
        return leaky_relu(mixed)
    return leaky_relu((1.0 - beta) * mixed + beta * matmul(mixed, W))


def final_representation(layer_outputs: Sequence, W_out, b_out) -> Tensor:
    stacked = layer_outputs[0] if len(layer_outputs) == 1 else concat(layer_outputs, axis=1)
    return leaky_relu(matmul(stacked, W_out) + b_out)


def normalized_adjacency(graph: PropagationGraph) -> sp.csr_matrix:
    """(D + I)^-1/2 (A + I) (D + I)^-1/2 with A the undirected simple adjacency."""
    n = graph.n_entities
    a = sp.coo_matrix((np.ones(graph.n_edges), (graph.src, graph.dst)), shape=(n, n)).tocsr()
    a.data[:] = 1.0  # collapse parallel edges
    a = a.maximum(a.T)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg + 1.0))
    return (inv_sqrt @ (a + sp.identity(n, format="csr")) @ inv_sqrt).tocsr()


def _layer_params(params: ModelParams, l: int) -> dict:
    pre = f"layer{l}."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def _check(t: Tensor, layer: int, what: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {what} at layer {layer}", layer)


class GraphContext:
    """Precomputed edge index structures for one propagation graph."""

    def __init__(self, graph: PropagationGraph):
        self.graph = graph
        self.src = Segments(graph.src, graph.n_entities)
        self.dst = Segments(graph.dst, graph.n_entities)


def forward(graph: PropagationGraph | GraphContext, numeric, text, params: ModelParams,
            config: LayerConfig, rng: Optional[np.random.Generator] = None,
            return_layers: bool = False):
    """Entity representation table (n_entities x hidden_dim).

    Dropout is applied only when ``rng`` is given. Attention weights are
    computed once from the fused embeddings and shared by every layer.
    """
    ctx = graph if isinstance(graph, GraphContext) else GraphContext(graph)
    g = ctx.graph
    if params["entity"].shape[0] != g.n_entities:
        raise ShapeError(f"entity table has {params['entity'].shape[0]} rows, "
                         f"graph has {g.n_entities} entities")
    H0 = fuse_literals(params["entity"], numeric, text, params["gate.W_E"], params["gate.W_N"],
                       params["gate.W_T"], params["gate.b"], params["gate.W"])
    _check(H0, 0, "fused embeddings")
    if g.n_edges:
        scores = attention_scores(H0, params["relation"], params["att.W"], g, ctx.src, ctx.dst)
        weights = normalize_attention(scores, ctx.src)
    H = H0
    outputs = []
    for l in range(1, config.n_layers + 1):
        lp = _layer_params(params, l)
        if g.n_edges:
            h_n = aggregate_neighborhood(H, weights, ctx.src, ctx.dst)
        else:
            h_n = Tensor._wrap(np.zeros(H.shape))
        eps = lp["eps"] if "eps" in lp else (
            0.0 if config.learnable_epsilon else float(config.gin_epsilon))
        H = apply_aggregator(H, h_n, config.aggregator, lp, eps)
        if config.residual_identity:
            beta = residual_beta(config.lambda_rc, l)
            H = residual_identity(H, H0, config.alpha, beta, lp["W_res"])
        H = dropout(H, config.dropout, rng)
        _check(H, l, "layer output")
        outputs.append(H)
    out = final_representation(outputs, params["out.W"], params["out.b"])
    _check(out, config.n_layers, "final representation")
    if return_layers:
        return out, outputs, H0
    return out

"""Message passing over the fully-connected directed object graph.

For receiver j and sender k (j != k) the edge attribute is
``e_jk = f_e([v_j, v_k])`` and the relation feature is
``v_bar_j = f_v(sum_k e_jk)``. Both MLPs are shared by every edge/node and
by every round.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import init_mlp, linear, mlp


def init_graph(rng, params, cfg) -> None:
    init_mlp(rng, params, "graph.edge", 2 * cfg.feat_dim, cfg.graph_hidden, cfg.feat_dim)
    init_mlp(rng, params, "graph.node", cfg.feat_dim, cfg.graph_hidden, cfg.feat_dim)


def edge_mask(mask: np.ndarray) -> np.ndarray:
    """(B, N, N, 1) mask of valid directed edges: both ends real, no self loops."""
    m = mask[:, :, None] & mask[:, None, :]
    n = mask.shape[1]
    m &= ~np.eye(n, dtype=bool)[None]
    return m[..., None].astype(np.float64)


def message_passing_round(V, P: Mapping[str, Tensor], mask: np.ndarray | None = None) -> Tensor:
    """One edge update + node update on ``V`` shaped (N, F) or (B, N, F)."""
    V = ad.as_tensor(V)
    single = V.ndim == 2
    if single:
        V = V.reshape(1, *V.shape)
    B, N, F = V.shape
    W1 = P["graph.edge.0.W"]
    if W1.shape[0] != 2 * F:
        raise ad.ShapeError(f"graph: edge MLP expects input {W1.shape[0]}, node dim is {F}")
    if mask is None:
        mask = np.ones((B, N), dtype=bool)
    # first edge layer on [v_j, v_k] split into receiver and sender halves
    recv = V @ W1[:F]
    send = V @ W1[F:]
    h = recv.reshape(B, N, 1, -1) + send.reshape(B, 1, N, -1) + P["graph.edge.0.b"]
    h = ad.relu(h)
    h = ad.relu(linear(P, "graph.edge.1", h))
    e = linear(P, "graph.edge.2", h)
    msg = (e * edge_mask(mask)).sum(axis=2)
    out = mlp(P, "graph.node", msg)
    return out[0] if single else out


def canonical_order(V: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per scene, a content-based ordering of the real rows (padding stays last).

    Returns flat row indices into ``V.reshape(B*N, F)``.
    """
    B, N, _ = V.shape
    idx = np.arange(B * N).reshape(B, N)
    for b in range(B):
        n = int(mask[b].sum())
        if n > 1:
            rows = V[b, :n]
            order = np.lexsort(rows.T[::-1])
            idx[b, :n] = b * N + order
    return idx


def run_relation_graph(V, P: Mapping[str, Tensor], rounds: int = 2,
                       mask: np.ndarray | None = None) -> Tensor:
    """Relation features after ``rounds`` rounds of message passing.

    Nodes are visited in a content-defined order, so permuting the input
    rows permutes the output rows bit-exactly.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    V = ad.as_tensor(V)
    single = V.ndim == 2
    if single:
        V = V.reshape(1, *V.shape)
    B, N, F = V.shape
    if mask is None:
        mask = np.ones((B, N), dtype=bool)
    idx = canonical_order(V.data, mask)
    inv = np.empty(B * N, dtype=np.intp)
    inv[idx.ravel()] = np.arange(B * N)
    X = ad.take(V.reshape(B * N, F), idx)
    for _ in range(rounds):
        X = message_passing_round(X, P, mask)
    out = ad.take(X.reshape(B * N, F), inv.reshape(B, N))
    return out[0] if single else out

"""Importance classifier, Gumbel-softmax pooling and the ego-behaviour heads."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import init_mlp, mlp
from .scene import ACTIONS, INTENTIONS

SCORE_EPS = 1e-7


def intent_onehot(intention: str) -> np.ndarray:
    out = np.zeros(len(INTENTIONS))
    out[INTENTIONS.index(intention)] = 1.0
    return out


def comprehensive_dim(cfg) -> int:
    n = 4 if cfg.use_relation_graph else 3
    return n * cfg.feat_dim + len(INTENTIONS)


def init_heads(rng, params, cfg) -> None:
    init_mlp(rng, params, "cls", comprehensive_dim(cfg), cfg.cls_hidden, 1)
    n_in = 3 * cfg.feat_dim + len(INTENTIONS)
    for head, n_out in (("eac", len(ACTIONS)), ("etg", 2 * cfg.t_future)):
        init_mlp(rng, params, f"{head}.a", n_in, cfg.aux_hidden1, cfg.aux_hidden1)
        init_mlp(rng, params, f"{head}.b", cfg.aux_hidden1, cfg.aux_hidden2, n_out)


def _expand(x: Tensor, n: int) -> Tensor:
    """(B, D) -> (B, n, D) by broadcasting."""
    B, D = x.shape
    return x.reshape(B, 1, D) + np.zeros((1, n, 1))


def assemble_comprehensive_feature(v, v_rel, v_global, v_ego, intent) -> Tensor:
    """o_j = [v_j, v_bar_j, v_global, v_ego, I_E] along the last axis.

    ``v`` is (N, F) or (B, N, F); the scene-level parts are (F,) / (B, F).
    ``v_rel=None`` drops the relation span.
    """
    v = ad.as_tensor(v)
    single = v.ndim == 2
    if single:
        v = v.reshape(1, *v.shape)
        v_rel = None if v_rel is None else ad.as_tensor(v_rel).reshape(1, *v.shape[1:])
        v_global = ad.as_tensor(v_global).reshape(1, -1)
        v_ego = ad.as_tensor(v_ego).reshape(1, -1)
        intent = ad.as_tensor(intent).reshape(1, -1)
    B, N, F = v.shape
    parts = [v]
    if v_rel is not None:
        if v_rel.shape != v.shape:
            raise ad.ShapeError(f"comprehensive feature: v {v.shape} vs relation {v_rel.shape}")
        parts.append(v_rel)
    for name, x in (("global", v_global), ("ego", v_ego)):
        x = ad.as_tensor(x)
        if x.shape != (B, F):
            raise ad.ShapeError(f"comprehensive feature: {name} {x.shape}, expected {(B, F)}")
        parts.append(_expand(x, N))
    intent = ad.as_tensor(intent)
    if intent.shape != (B, len(INTENTIONS)):
        raise ad.ShapeError(f"comprehensive feature: intent {intent.shape}")
    parts.append(_expand(intent, N))
    o = ad.concat(parts, axis=-1)
    return o[0] if single else o


def importance_logits(o, P: Mapping[str, Tensor]) -> Tensor:
    o = ad.as_tensor(o)
    out = mlp(P, "cls", o)
    return out.reshape(o.shape[:-1])


def importance_score(o, P: Mapping[str, Tensor]) -> Tensor:
    return ad.sigmoid(importance_logits(o, P))


def predict_important(s) -> np.ndarray:
    """argmax(1 - s, s) with ties going to 'unimportant'."""
    s = s.data if isinstance(s, Tensor) else np.asarray(s)
    return (s > 0.5).astype(np.int64)


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def gumbel_weight(s, tau: float, rng: np.random.Generator | None = None, noise=None) -> Tensor:
    """Relaxed important/unimportant selection weight z_j in (0, 1).

    ``noise`` is an optional ``(..., 2)`` array of (g_1, g_0) Gumbel draws;
    otherwise they are drawn from ``rng``. Differentiable in ``s`` only.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    s = ad.clip(ad.as_tensor(s), SCORE_EPS, 1.0 - SCORE_EPS)
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_weight needs an rng or explicit noise")
        noise = sample_gumbel(rng, s.shape + (2,))
    noise = np.asarray(noise, dtype=np.float64)
    a = (ad.log(s) + noise[..., 0]) / tau
    b = (ad.log(1.0 - s) + noise[..., 1]) / tau
    # exp(a) / (exp(a) + exp(b)), evaluated as a logistic of the difference
    return ad.sigmoid(a - b)


def pool_important_train(z, V, mask: np.ndarray | None = None) -> Tensor:
    """(1 / N_i) * sum_j z_j v_j; ``V`` is (N, F) or (B, N, F)."""
    z, V = ad.as_tensor(z), ad.as_tensor(V)
    if z.shape != V.shape[:-1]:
        raise ad.ShapeError(f"pool: weights {z.shape} vs features {V.shape}")
    if mask is None:
        mask = np.ones(z.shape, dtype=bool)
    n = mask.sum(axis=-1, keepdims=True).astype(np.float64)
    w = z * mask
    pooled = (w.reshape(*w.shape, 1) * V).sum(axis=-2)
    return pooled / n


def pool_important_test(s, V, mask: np.ndarray | None = None) -> Tensor:
    """Mean of v_j over objects predicted important; zero vector when there are none."""
    V = ad.as_tensor(V)
    sel = predict_important(s).astype(np.float64)
    if mask is not None:
        sel = sel * mask
    n = sel.sum(axis=-1, keepdims=True)
    coef = np.divide(sel, n, out=np.zeros_like(sel), where=n > 0)
    return (V * coef[..., None]).sum(axis=-2)


def predict_ego_behavior(v_imp, v_ego, v_global, intent, P: Mapping[str, Tensor],
                         t_future: int | None = None) -> tuple[Tensor, Tensor]:
    """Action logits (..., 4) and trajectory (..., T_f, 2) from the shared input."""
    x = ad.concat([v_imp, v_ego, v_global, intent], axis=-1)
    expected = P["eac.a.0.W"].shape[0]
    if x.shape[-1] != expected:
        raise ad.ShapeError(f"behaviour heads: input dim {x.shape[-1]}, expected {expected}")
    logits = mlp(P, "eac.b", ad.relu(mlp(P, "eac.a", x)))
    traj = mlp(P, "etg.b", ad.relu(mlp(P, "etg.a", x)))
    tf = t_future if t_future is not None else traj.shape[-1] // 2
    return logits, traj.reshape(*traj.shape[:-1], tf, 2)

"""Full importance model: encoders -> relation graph -> classifier (+ behaviour heads)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import encode_objects, encode_sequence, global_stream, init_encoders, standardize
from .graph import init_graph, run_relation_graph
from .heads import (
    assemble_comprehensive_feature, gumbel_weight, importance_logits, init_heads,
    intent_onehot, pool_important_test, pool_important_train, predict_ego_behavior,
)
from .layers import Params
from .scene import ACTIONS, Scene, normalize_boxes


@dataclass
class ModelConfig:
    lstm_hidden: int = 128
    feat_dim: int = 128
    mlp_hidden: int = 128
    graph_hidden: int = 128
    cls_hidden: int = 256
    aux_hidden1: int = 64
    aux_hidden2: int = 256
    mp_rounds: int = 2
    tau: float = 0.1
    t_future: int = 4
    traj_scale: float = 10.0
    d_appearance: int = 16
    d_depthsem: int = 8
    use_intention: bool = True
    use_relation_graph: bool = True

    @classmethod
    def desk(cls, **kw) -> "ModelConfig":
        base = dict(lstm_hidden=32, feat_dim=32, mlp_hidden=32, graph_hidden=32,
                    cls_hidden=64, aux_hidden1=16, aux_hidden2=64)
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        if preset == "desk":
            return cls.desk(**d)
        if preset not in (None, "paper"):
            raise ValueError(f"unknown model preset {preset!r}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    params: Params = {}
    init_encoders(rng, params, cfg)
    init_graph(rng, params, cfg)
    init_heads(rng, params, cfg)
    return params


def trainable(params: Mapping) -> list[str]:
    return [k for k in params if not k.startswith("norm.")]


# -- batching --------------------------------------------------------------


@dataclass
class SceneArrays:
    """Per-scene arrays precomputed once so batches collate cheaply."""
    app: np.ndarray  # (T, N, D_A)
    ds: np.ndarray
    bbox: np.ndarray
    glob: np.ndarray  # (T, D_A + D_DS)
    ego: np.ndarray  # (T, 6)
    intent: np.ndarray  # (3,)
    intention: str
    importance: np.ndarray | None
    action: int | None
    traj: np.ndarray | None

    @property
    def n(self) -> int:
        return self.app.shape[1]


def scene_arrays(scene: Scene) -> SceneArrays:
    app = np.stack([o.appearance_feat for o in scene.objects], axis=1)
    ds = np.stack([o.depthsem_feat for o in scene.objects], axis=1)
    bbox = np.stack([normalize_boxes(o.boxes, scene.W, scene.H) for o in scene.objects], axis=1)
    lab = scene.labels
    return SceneArrays(
        app=app, ds=ds, bbox=bbox, glob=global_stream(scene), ego=scene.ego.states,
        intent=intent_onehot(scene.intention), intention=scene.intention,
        importance=None if lab is None or lab.importance is None else np.asarray(lab.importance),
        action=None if lab is None or lab.ego_action is None else ACTIONS.index(lab.ego_action),
        traj=None if lab is None or lab.future_traj is None else np.asarray(lab.future_traj),
    )


@dataclass
class Batch:
    app: np.ndarray  # (T, M, D_A) flattened real objects
    ds: np.ndarray
    bbox: np.ndarray
    glob: np.ndarray  # (T, B, D)
    ego: np.ndarray  # (T, B, 6)
    intent: np.ndarray  # (B, 3)
    mask: np.ndarray  # (B, N) bool
    slot: np.ndarray  # (B, N) row into the flat object array; padding -> M
    importance: np.ndarray | None  # (B, N) padded with 0
    action: np.ndarray | None  # (B,)
    traj: np.ndarray | None  # (B, T_f, 2)

    @property
    def size(self) -> int:
        return self.mask.shape[0]


def collate(items: Sequence[SceneArrays]) -> Batch:
    B = len(items)
    n_max = max(it.n for it in items)
    counts = [it.n for it in items]
    M = sum(counts)
    mask = np.zeros((B, n_max), dtype=bool)
    slot = np.full((B, n_max), M, dtype=np.intp)
    start = 0
    for b, n in enumerate(counts):
        mask[b, :n] = True
        slot[b, :n] = np.arange(start, start + n)
        start += n
    imp = None
    if all(it.importance is not None for it in items):
        imp = np.zeros((B, n_max))
        for b, it in enumerate(items):
            imp[b, : it.n] = it.importance
    action = traj = None
    if all(it.action is not None for it in items):
        action = np.array([it.action for it in items])
    if all(it.traj is not None for it in items):
        traj = np.stack([it.traj for it in items])
    return Batch(
        app=np.concatenate([it.app for it in items], axis=1),
        ds=np.concatenate([it.ds for it in items], axis=1),
        bbox=np.concatenate([it.bbox for it in items], axis=1),
        glob=np.stack([it.glob for it in items], axis=1),
        ego=np.stack([it.ego for it in items], axis=1),
        intent=np.stack([it.intent for it in items]),
        mask=mask, slot=slot, importance=imp, action=action, traj=traj,
    )


def fit_normalization(params: Params, items: Sequence[SceneArrays]) -> None:
    """Set the per-channel input standardisation from training scenes."""
    pools = {
        "app": np.concatenate([it.app.reshape(-1, it.app.shape[-1]) for it in items]),
        "ds": np.concatenate([it.ds.reshape(-1, it.ds.shape[-1]) for it in items]),
        "bbox": np.concatenate([it.bbox.reshape(-1, 4) for it in items]),
        "global": np.concatenate([it.glob for it in items]),
        "ego": np.concatenate([it.ego for it in items]),
    }
    for name, x in pools.items():
        params[f"norm.{name}.mean"] = x.mean(axis=0)
        params[f"norm.{name}.std"] = np.maximum(x.std(axis=0), 1e-6)


# -- forward ---------------------------------------------------------------


@dataclass
class Forward:
    logits: Tensor  # (B, N)
    scores: Tensor  # (B, N)
    action_logits: Tensor | None = None  # (B, 4)
    traj: Tensor | None = None  # (B, T_f, 2) in traj_scale units
    z: Tensor | None = None


def forward(P: Mapping[str, Tensor], batch: Batch, cfg: ModelConfig, *, aux: bool = True,
            train: bool = True, rng: np.random.Generator | None = None) -> Forward:
    """Scores for every (padded) object slot and, if ``aux``, behaviour predictions.

    ``train`` selects the Gumbel-softmax pooling (needs ``rng``) versus the
    hard pooling over predicted-important objects.
    """
    B, N = batch.mask.shape
    F = cfg.feat_dim
    v_flat = encode_objects(batch.app, batch.ds, batch.bbox, P)
    v_flat = ad.concat([v_flat, np.zeros((1, F))], axis=0)
    V = ad.take(v_flat, batch.slot)  # (B, N, F)
    v_global = encode_sequence(standardize(P, "global", batch.glob), P, "global")
    v_ego = encode_sequence(standardize(P, "ego", batch.ego), P, "ego")
    intent = batch.intent if cfg.use_intention else np.zeros_like(batch.intent)
    v_rel = run_relation_graph(V, P, cfg.mp_rounds, batch.mask) if cfg.use_relation_graph else None
    o = assemble_comprehensive_feature(V, v_rel, v_global, v_ego, intent)
    logits = importance_logits(o, P)
    scores = ad.sigmoid(logits)
    out = Forward(logits=logits, scores=scores)
    if aux:
        if train:
            if rng is None:
                raise ValueError("training forward needs an rng for Gumbel noise")
            z = gumbel_weight(scores, cfg.tau, rng)
            v_imp = pool_important_train(z, V, batch.mask)
            out.z = z
        else:
            v_imp = pool_important_test(scores, V, batch.mask)
        out.action_logits, out.traj = predict_ego_behavior(v_imp, v_ego, v_global, intent, P, cfg.t_future)
    return out


def predict_scores(params: Params, items: Sequence[SceneArrays], cfg: ModelConfig,
                   batch_size: int = 64) -> list[np.ndarray]:
    """Importance scores per scene, no tape."""
    P = {k: Tensor(v) for k, v in params.items()}
    out = []
    for i in range(0, len(items), batch_size):
        chunk = items[i:i + batch_size]
        fw = forward(P, collate(chunk), cfg, aux=False, train=False)
        s = fw.scores.data
        out.extend(s[b, : it.n].copy() for b, it in enumerate(chunk))
    return out

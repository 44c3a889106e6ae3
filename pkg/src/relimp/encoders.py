"""Sequence encoders turning per-frame streams into fixed-size embeddings.

Every encoder is a single-layer LSTM whose final hidden state goes through a
3-layer MLP head. Streams are laid out time-major, ``(T, batch..., D)``.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import init_lstm, init_mlp, mlp, run_lstm
from .scene import EGO_STATE_DIM, EgoTrack, ObjectTrack, Scene, normalize_boxes

STREAMS = ("app", "bbox", "ds", "global", "ego")


def stream_dims(d_appearance: int, d_depthsem: int) -> dict[str, int]:
    return {
        "app": d_appearance,
        "bbox": 4,
        "ds": d_depthsem,
        "global": d_appearance + d_depthsem,
        "ego": EGO_STATE_DIM,
    }


def init_encoders(rng, params, cfg) -> None:
    dims = stream_dims(cfg.d_appearance, cfg.d_depthsem)
    for name in STREAMS:
        init_lstm(rng, params, f"enc.{name}.lstm", dims[name], cfg.lstm_hidden)
        init_mlp(rng, params, f"enc.{name}.head", cfg.lstm_hidden, cfg.mlp_hidden, cfg.feat_dim)
        params[f"norm.{name}.mean"] = np.zeros(dims[name])
        params[f"norm.{name}.std"] = np.ones(dims[name])
    init_mlp(rng, params, "enc.project", 3 * cfg.feat_dim, cfg.mlp_hidden, cfg.feat_dim)


def standardize(P: Mapping, name: str, stream: np.ndarray) -> np.ndarray:
    mean = P[f"norm.{name}.mean"]
    std = P[f"norm.{name}.std"]
    mean = mean.data if isinstance(mean, Tensor) else mean
    std = std.data if isinstance(std, Tensor) else std
    return (np.asarray(stream, dtype=np.float64) - mean) / std


def encode_sequence(stream, P: Mapping[str, Tensor], name: str, T_h: int | None = None) -> Tensor:
    """LSTM over the time axis, then the MLP head. ``name`` picks the encoder."""
    stream = ad.as_tensor(stream)
    if T_h is not None and stream.shape[0] != T_h:
        raise ad.ShapeError(f"encoder {name}: expected {T_h} frames, got {stream.shape[0]}")
    h = run_lstm(P, f"enc.{name}.lstm", stream)
    return mlp(P, f"enc.{name}.head", h)


def fuse_object(vA, vDS, vB, P: Mapping[str, Tensor]) -> Tensor:
    return mlp(P, "enc.project", ad.concat([vA, vDS, vB], axis=-1))


def encode_objects(app, ds, bbox, P: Mapping[str, Tensor]) -> Tensor:
    """Batched object encoding over streams shaped (T, M, D) -> (M, feat_dim)."""
    vA = encode_sequence(standardize(P, "app", app), P, "app")
    vDS = encode_sequence(standardize(P, "ds", ds), P, "ds")
    vB = encode_sequence(standardize(P, "bbox", bbox), P, "bbox")
    return fuse_object(vA, vDS, vB, P)


def encode_object(track: ObjectTrack, W: float, H: float, P: Mapping[str, Tensor]) -> Tensor:
    T = track.boxes.shape[0]
    for arr in (track.appearance_feat, track.depthsem_feat):
        if arr.shape[0] != T:
            raise ad.ShapeError(f"object {track.object_id}: streams have unequal lengths")
    bbox = normalize_boxes(track.boxes, W, H)
    v = encode_objects(track.appearance_feat[:, None, :], track.depthsem_feat[:, None, :],
                       bbox[:, None, :], P)
    return v[0]


def global_stream(scene: Scene) -> np.ndarray:
    """(T_h, D_A + D_DS): per-frame object means of the appearance and depth/semantic rows."""
    app = np.mean([o.appearance_feat for o in scene.objects], axis=0)
    ds = np.mean([o.depthsem_feat for o in scene.objects], axis=0)
    return np.concatenate([app, ds], axis=1)


def encode_global(scene: Scene, P: Mapping[str, Tensor]) -> Tensor:
    g = global_stream(scene)
    return encode_sequence(standardize(P, "global", g)[:, None, :], P, "global")[0]


def encode_ego(ego: EgoTrack, P: Mapping[str, Tensor]) -> Tensor:
    st = ego.states
    if st.ndim != 2 or st.shape[1] != EGO_STATE_DIM:
        raise ad.ShapeError(f"ego states must be (T, {EGO_STATE_DIM}), got {st.shape}")
    return encode_sequence(standardize(P, "ego", st)[:, None, :], P, "ego")[0]

"""Scene data model and the JSON Lines dataset format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

OBJECT_CLASSES = ("vehicle", "pedestrian", "cyclist", "traffic_light", "stop_sign")
INTENTIONS = ("forward", "left", "right")
ACTIONS = ("stop", "speed_up", "slow_down", "constant_speed")
EGO_STATE_DIM = 6


class SceneValidationError(ValueError):
    def __init__(self, scene_id, path: str, msg: str):
        super().__init__(f"scene {scene_id!r}: {path}: {msg}")
        self.scene_id = scene_id
        self.path = path


@dataclass
class ObjectTrack:
    object_id: str
    object_class: str
    boxes: np.ndarray  # (T_h, 4) x_center, y_center, width, height in px
    appearance_feat: np.ndarray  # (T_h, D_A)
    depthsem_feat: np.ndarray  # (T_h, D_DS)
    distance_to_ego: float | None = None


@dataclass
class EgoTrack:
    states: np.ndarray  # (T_h, 6) x, y, vx, vy, ax, ay


@dataclass
class Labels:
    importance: np.ndarray | None  # (N,) of 0/1, None for unlabeled scenes
    ego_action: str | None = None
    future_traj: np.ndarray | None = None  # (T_f, 2)


@dataclass
class Scene:
    scene_id: str
    W: float
    H: float
    T_h: int
    intention: str
    objects: list[ObjectTrack]
    ego: EgoTrack
    labels: Labels | None = None

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None and self.labels.importance is not None


@dataclass
class Dataset:
    labeled: list[Scene] = field(default_factory=list)
    unlabeled: list[Scene] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for s in list(self.labeled) + list(self.unlabeled):
            if s.scene_id in seen:
                raise SceneValidationError(s.scene_id, "scene_id", "duplicate scene_id")
            seen.add(s.scene_id)


def box_in_image(box, W: float, H: float) -> bool:
    x, y, w, h = (float(v) for v in box)
    return (w > 0 and h > 0 and x - w / 2 >= 0 and y - h / 2 >= 0
            and x + w / 2 <= W and y + h / 2 <= H)


def normalize_bbox(box, W: float, H: float) -> np.ndarray:
    """(x, y, w, h) in pixels -> (x/W, y/H, w/W, h/H)."""
    if not box_in_image(box, W, H):
        raise ValueError(f"box {tuple(box)} lies outside a {W}x{H} image")
    x, y, w, h = (float(v) for v in box)
    return np.array([x / W, y / H, w / W, h / H])


def denormalize_bbox(nbox, W: float, H: float) -> np.ndarray:
    x, y, w, h = nbox
    return np.array([x * W, y * H, w * W, h * H])


def normalize_boxes(boxes: np.ndarray, W: float, H: float) -> np.ndarray:
    """Vectorised :func:`normalize_bbox` over a (T, 4) stream; assumes validated input."""
    return np.asarray(boxes, dtype=np.float64) / np.array([W, H, W, H])


def validate_scene(scene: Scene) -> None:
    sid = scene.scene_id
    if scene.intention not in INTENTIONS:
        raise SceneValidationError(sid, "intention", f"unknown intention {scene.intention!r}")
    if not scene.objects:
        raise SceneValidationError(sid, "objects", "scene needs at least one object")
    if scene.T_h < 1:
        raise SceneValidationError(sid, "T_h", "must be positive")
    if not (scene.W > 0 and scene.H > 0):
        raise SceneValidationError(sid, "W/H", "image dims must be positive")
    T = scene.T_h
    for j, ob in enumerate(scene.objects):
        p = f"objects[{j}]"
        if ob.object_class not in OBJECT_CLASSES:
            raise SceneValidationError(sid, f"{p}.class", f"unknown class {ob.object_class!r}")
        for name in ("boxes", "appearance_feat", "depthsem_feat"):
            arr = getattr(ob, name)
            if arr.ndim != 2 or arr.shape[0] != T:
                raise SceneValidationError(sid, f"{p}.{name}", f"expected {T} rows, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise SceneValidationError(sid, f"{p}.{name}", "non-finite value")
        if ob.boxes.shape[1] != 4:
            raise SceneValidationError(sid, f"{p}.boxes", "boxes need 4 columns")
        for t, box in enumerate(ob.boxes):
            if not box_in_image(box, scene.W, scene.H):
                raise SceneValidationError(sid, f"{p}.boxes[{t}]", f"box {box.tolist()} outside image")
        if ob.distance_to_ego is not None and not math.isfinite(ob.distance_to_ego):
            raise SceneValidationError(sid, f"{p}.distance_to_ego", "non-finite")
    st = scene.ego.states
    if st.shape != (T, EGO_STATE_DIM):
        raise SceneValidationError(sid, "ego.states", f"expected shape {(T, EGO_STATE_DIM)}, got {st.shape}")
    if not np.all(np.isfinite(st)):
        raise SceneValidationError(sid, "ego.states", "non-finite value")
    lab = scene.labels
    if lab is not None:
        if lab.importance is not None:
            if len(lab.importance) != len(scene.objects):
                raise SceneValidationError(
                    sid, "labels.importance",
                    f"length {len(lab.importance)} != object count {len(scene.objects)}")
            if not np.all(np.isin(lab.importance, (0, 1))):
                raise SceneValidationError(sid, "labels.importance", "labels must be 0/1")
        if lab.ego_action is not None and lab.ego_action not in ACTIONS:
            raise SceneValidationError(sid, "labels.ego_action", f"unknown action {lab.ego_action!r}")
        if lab.future_traj is not None:
            ft = lab.future_traj
            if ft.ndim != 2 or ft.shape[1] != 2 or not np.all(np.isfinite(ft)):
                raise SceneValidationError(sid, "labels.future_traj", f"bad trajectory shape {ft.shape}")


# -- JSON Lines ------------------------------------------------------------


def scene_to_dict(scene: Scene) -> dict:
    objs = []
    for ob in scene.objects:
        d = {
            "id": ob.object_id,
            "class": ob.object_class,
            "boxes": ob.boxes.tolist(),
            "appearance_feat": ob.appearance_feat.tolist(),
            "depthsem_feat": ob.depthsem_feat.tolist(),
        }
        if ob.distance_to_ego is not None:
            d["distance_to_ego"] = float(ob.distance_to_ego)
        objs.append(d)
    out = {
        "scene_id": scene.scene_id,
        "W": scene.W,
        "H": scene.H,
        "T_h": scene.T_h,
        "intention": scene.intention,
        "objects": objs,
        "ego": {"states": scene.ego.states.tolist()},
    }
    if scene.labels is not None:
        lab = scene.labels
        ld = {}
        if lab.importance is not None:
            ld["importance"] = [int(v) for v in lab.importance]
        if lab.ego_action is not None:
            ld["ego_action"] = lab.ego_action
        if lab.future_traj is not None:
            ld["future_traj"] = lab.future_traj.tolist()
        out["labels"] = ld
    return out


def _array(sid, path, value, ndim=2) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise SceneValidationError(sid, path, "not a numeric array") from None
    if arr.ndim != ndim:
        raise SceneValidationError(sid, path, f"expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def scene_from_dict(d: dict) -> Scene:
    sid = d.get("scene_id")
    if sid is None:
        raise SceneValidationError(None, "scene_id", "missing")
    try:
        objects = []
        for j, od in enumerate(d["objects"]):
            p = f"objects[{j}]"
            for key in ("id", "class", "boxes", "appearance_feat", "depthsem_feat"):
                if key not in od:
                    raise SceneValidationError(sid, f"{p}.{key}", "missing field")
            dist = od.get("distance_to_ego")
            objects.append(ObjectTrack(
                object_id=str(od["id"]),
                object_class=od["class"],
                boxes=_array(sid, f"{p}.boxes", od["boxes"]),
                appearance_feat=_array(sid, f"{p}.appearance_feat", od["appearance_feat"]),
                depthsem_feat=_array(sid, f"{p}.depthsem_feat", od["depthsem_feat"]),
                distance_to_ego=None if dist is None else float(dist),
            ))
        ego = EgoTrack(_array(sid, "ego.states", d["ego"]["states"]))
        labels = None
        if d.get("labels") is not None:
            ld = d["labels"]
            imp = ld.get("importance")
            ft = ld.get("future_traj")
            labels = Labels(
                importance=None if imp is None else np.array(imp, dtype=np.int64),
                ego_action=ld.get("ego_action"),
                future_traj=None if ft is None else _array(sid, "labels.future_traj", ft),
            )
        scene = Scene(
            scene_id=str(sid), W=float(d["W"]), H=float(d["H"]), T_h=int(d["T_h"]),
            intention=d["intention"], objects=objects, ego=ego, labels=labels,
        )
    except KeyError as exc:
        raise SceneValidationError(sid, str(exc.args[0]), "missing field") from None
    validate_scene(scene)
    return scene


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in list(dataset.labeled) + list(dataset.unlabeled):
            fh.write(json.dumps(scene_to_dict(scene)))
            fh.write("\n")


def load_dataset(path) -> Dataset:
    """Read a JSONL dataset; scenes with importance labels form the labeled partition."""
    labeled, unlabeled = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            scene = scene_from_dict(d)
            (labeled if scene.is_labeled else unlabeled).append(scene)
    return Dataset(labeled, unlabeled)


def split_dataset(labeled: list[Scene], ratio: float = 0.7, seed: int = 0) -> tuple[list[Scene], list[Scene]]:
    """Seeded shuffle, then ``floor((1 - ratio) * n)`` scenes go to the test side."""
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    if not labeled:
        raise ValueError("cannot split an empty scene list")
    n = len(labeled)
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(math.floor((1.0 - ratio) * n + 1e-9))
    train = [labeled[i] for i in order[: n - n_test]]
    test = [labeled[i] for i in order[n - n_test:]]
    return train, test


def strip_importance(scenes: Iterable[Scene]) -> list[Scene]:
    """Copies of ``scenes`` with importance labels removed (ego labels kept)."""
    out = []
    for s in scenes:
        lab = s.labels
        new_lab = Labels(None, lab.ego_action, lab.future_traj) if lab is not None else None
        out.append(Scene(s.scene_id, s.W, s.H, s.T_h, s.intention, s.objects, s.ego, new_lab))
    return out

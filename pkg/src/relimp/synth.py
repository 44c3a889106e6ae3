"""Synthetic egocentric driving scenes with a rule-based importance oracle.

World frame = ego frame at t=0: x to the right, y forward, metres. Every
scene is simulated from hidden latents (positions, velocities, control
states); observed features are a fixed noisy linear embedding of those
latents, boxes come from a pinhole projection, and labels come from
:func:`importance_oracle` and :func:`action_from_kinematics`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .scene import (
    INTENTIONS, OBJECT_CLASSES, Dataset, EgoTrack, Labels, ObjectTrack, Scene,
)

PARTICIPANTS = ("vehicle", "pedestrian", "cyclist")
CONTROLS = ("traffic_light", "stop_sign")

# physical size (width, height) and bottom elevation in metres
_SIZE = {
    "vehicle": (1.8, 1.5, 0.0),
    "truck": (2.5, 3.4, 0.0),
    "pedestrian": (0.6, 1.7, 0.0),
    "cyclist": (0.7, 1.7, 0.0),
    "traffic_light": (0.4, 1.0, 4.5),
    "stop_sign": (0.75, 0.75, 1.6),
}
_SPEED_CAP = {"vehicle": 16.0, "pedestrian": 2.5, "cyclist": 8.0, "traffic_light": 0.0, "stop_sign": 0.0}

APPEARANCE_LATENT_DIM = 15
DEPTHSEM_LATENT_DIM = 8


@dataclass
class GenConfig:
    seed: int = 0
    scene_count: int = 1000
    unlabeled_count: int = 0
    min_objects: int = 2
    max_objects: int = 12
    intention_mix: tuple[float, float, float] = (4.0, 1.0, 1.0)
    kinematic_noise: float = 0.05
    feature_noise: float = 0.05
    v_stop: float = 0.5
    a_dead: float = 0.3
    T_h: int = 8
    T_f: int = 4
    dt: float = 0.25
    future_dt: float = 0.5
    image_w: float = 1280.0
    image_h: float = 720.0
    focal: float = 700.0
    camera_height: float = 1.5
    d_appearance: int = 16
    d_depthsem: int = 8
    embed_seed: int = 1234
    # oracle
    oracle_range: float = 40.0
    horizon_tc: float = 3.0
    lateral_margin: float = 2.5
    corridor_width: float = 3.5
    corridor_length: float = 30.0
    intersection_y: float = 15.0
    branch_length: float = 25.0
    bearing_tol: float = 0.06
    use_demotion: bool = True
    # scene mix
    occlusion_rate: float = 0.3
    light_rate: float = 0.8
    crosswalk_rate: float = 0.5
    side_wait_rate: float = 0.7

    def __post_init__(self):
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("objects-per-scene range is empty")
        if len(self.intention_mix) != 3 or min(self.intention_mix) <= 0:
            raise ValueError("intention mix needs three positive weights")
        if self.v_stop <= 0 or self.a_dead <= 0:
            raise ValueError("action thresholds must be positive")
        self.intention_mix = tuple(float(v) for v in self.intention_mix)

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intention_mix"] = list(self.intention_mix)
        return d


@dataclass
class LatentObject:
    cls: str
    pos: np.ndarray  # (2,) at t=0
    vel: np.ndarray  # (2,) over ground
    parked: bool = False
    blocking: bool = False
    applies_to: tuple[bool, bool, bool] = (False, False, False)
    red: bool = False

    @property
    def size_key(self) -> str:
        return "truck" if (self.cls == "vehicle" and self.blocking) else self.cls


@dataclass
class SceneInfo:
    """Generator-side facts about a scene that the Scene record does not carry."""
    latents: list[LatentObject]
    rules: list[set[str]] = field(default_factory=list)
    intention_dependent: bool = False
    occlusion: bool = False


def _embeddings(cfg: GenConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.embed_seed)
    ea = rng.normal(size=(APPEARANCE_LATENT_DIM, cfg.d_appearance)) / math.sqrt(APPEARANCE_LATENT_DIM)
    eds = rng.normal(size=(DEPTHSEM_LATENT_DIM, cfg.d_depthsem)) / math.sqrt(DEPTHSEM_LATENT_DIM)
    return ea * 2.0, eds * 2.0


# -- oracle ----------------------------------------------------------------


def in_corridor(p: np.ndarray, intention: str, cfg: GenConfig) -> np.ndarray:
    """Boolean mask over points ``p`` (..., 2) inside the ego path for ``intention``."""
    x, y = p[..., 0], p[..., 1]
    half = cfg.corridor_width / 2
    if intention == "forward":
        return (np.abs(x) <= half) & (y >= 0) & (y <= cfg.corridor_length)
    yi = cfg.intersection_y
    stem = (np.abs(x) <= half) & (y >= 0) & (y <= yi + half)
    band = np.abs(y - yi) <= half
    if intention == "left":
        branch = band & (x >= -cfg.branch_length) & (x <= 0)
    else:
        branch = band & (x >= 0) & (x <= cfg.branch_length)
    return stem | branch


def _enters_corridor(ob: LatentObject, intention: str, cfg: GenConfig) -> bool:
    ts = np.linspace(0.0, cfg.horizon_tc, 31)[:, None]
    path = ob.pos[None, :] + ts * ob.vel[None, :]
    return bool(np.any(in_corridor(path, intention, cfg)))


def oracle_rules(latents: list[LatentObject], intention: str, cfg: GenConfig) -> list[set[str]]:
    """Which rules fire for each object: subsets of {"a", "b", "c", "d"}.

    ``"d"`` marks a rule-(b) object demoted by a closer blocking object on
    the same bearing.
    """
    k = INTENTIONS.index(intention)
    fired: list[set[str]] = [set() for _ in latents]
    half = cfg.corridor_width / 2
    for j, ob in enumerate(latents):
        dist = float(np.hypot(*ob.pos))
        if dist > cfg.oracle_range:
            continue
        if ob.cls in CONTROLS:
            if ob.applies_to[k]:
                fired[j].add("a")
        elif ob.parked:
            if ob.pos[1] > 0 and abs(ob.pos[0]) - half <= cfg.lateral_margin:
                fired[j].add("c")
        elif _enters_corridor(ob, intention, cfg):
            fired[j].add("b")
    if cfg.use_demotion:
        cand = [j for j in range(len(latents)) if "b" in fired[j]]
        for j in cand:
            pj = latents[j].pos
            dj, bj = float(np.hypot(*pj)), math.atan2(pj[0], pj[1])
            for k2 in cand:
                if k2 == j or not latents[k2].blocking:
                    continue
                pk = latents[k2].pos
                dk, bk = float(np.hypot(*pk)), math.atan2(pk[0], pk[1])
                if dk < dj and abs(bj - bk) < cfg.bearing_tol:
                    fired[j].add("d")
                    break
    return fired


def importance_oracle(latents: list[LatentObject], intention: str, cfg: GenConfig | None = None) -> np.ndarray:
    """Binary importance per object: any of rules (a)/(b)/(c), minus (d) demotions."""
    cfg = cfg or GenConfig()
    out = np.zeros(len(latents), dtype=np.int64)
    for j, rules in enumerate(oracle_rules(latents, intention, cfg)):
        if "a" in rules or "c" in rules or ("b" in rules and "d" not in rules):
            out[j] = 1
    return out


def action_from_kinematics(speed: float, accel: float, v_stop: float = 0.5, a_dead: float = 0.3) -> str:
    if v_stop <= 0 or a_dead <= 0:
        raise ValueError("thresholds must be positive")
    if speed < v_stop:
        return "stop"
    if accel > a_dead:
        return "speed_up"
    if accel < -a_dead:
        return "slow_down"
    return "constant_speed"


# -- latent sampling -------------------------------------------------------


def _side(rng) -> float:
    return 1.0 if rng.random() < 0.5 else -1.0


def _fov_clamp(pos: np.ndarray) -> np.ndarray:
    lim = 0.85 * pos[1]
    pos[0] = float(np.clip(pos[0], -lim, lim))
    return pos


def _sample_object(rng: np.random.Generator, cls: str, cfg: GenConfig) -> LatentObject:
    yi = cfg.intersection_y
    if cls == "vehicle":
        blocking = rng.random() < 0.25
        mode = rng.choice(4, p=[0.2, 0.3, 0.3, 0.2])
        if mode == 0:  # parked at the kerb
            x = (1.0 if rng.random() < 0.7 else -1.0) * rng.uniform(2.5, 7.0)
            pos, vel = np.array([x, rng.uniform(5.0, 45.0)]), np.zeros(2)
            return LatentObject(cls, _fov_clamp(pos), vel, parked=True, blocking=blocking)
        if mode == 1:  # same direction
            x = (0.0 if rng.random() < 0.5 else 3.5) + rng.normal(0, 0.3)
            pos, vel = np.array([x, rng.uniform(6.0, 45.0)]), np.array([0.0, rng.uniform(3.0, 14.0)])
        elif mode == 2:  # oncoming
            pos = np.array([-3.5 + rng.normal(0, 0.3), rng.uniform(8.0, 50.0)])
            vel = np.array([0.0, -rng.uniform(3.0, 14.0)])
        elif rng.random() < cfg.side_wait_rate:  # waiting in the side street
            s = _side(rng)
            pos = np.array([s * rng.uniform(5.0, 20.0), yi + s * 0.9 + rng.normal(0.0, 0.3)])
            vel = np.zeros(2)
        else:  # cross traffic near the intersection
            s = _side(rng)
            pos = np.array([s * rng.uniform(6.0, 25.0), yi + rng.uniform(-1.5, 8.0)])
            vel = np.array([-s * rng.uniform(2.0, 10.0) * (1 if rng.random() < 0.6 else -1), 0.0])
        return LatentObject(cls, _fov_clamp(pos), vel, blocking=blocking)
    if cls == "pedestrian":
        s = _side(rng)
        if rng.random() < cfg.crosswalk_rate:  # on the side-street crosswalk
            pos = np.array([s * rng.uniform(4.0, 14.0), yi + rng.normal(0.0, 0.6)])
            return LatentObject(cls, _fov_clamp(pos), np.array([0.0, rng.normal(0.0, 0.3)]))
        pos = np.array([s * rng.uniform(3.0, 12.0), rng.uniform(4.0, 35.0)])
        if rng.random() < 0.4:
            vel = np.array([-s * rng.uniform(0.8, 1.8), 0.0])
        else:
            vel = np.array([0.0, _side(rng) * rng.uniform(0.0, 1.5)])
        return LatentObject(cls, _fov_clamp(pos), vel)
    if cls == "cyclist":
        s = _side(rng)
        pos = np.array([s * rng.uniform(2.5, 7.0), rng.uniform(5.0, 35.0)])
        if rng.random() < 0.3:
            vel = np.array([-s * rng.uniform(2.0, 5.0), 0.0])
        else:
            vel = np.array([0.0, _side(rng) * rng.uniform(2.0, 6.0)])
        return LatentObject(cls, _fov_clamp(pos), vel)
    if cls == "traffic_light":
        pos = np.array([rng.uniform(-6.0, 6.0), rng.uniform(12.0, 45.0)])
        choice = rng.choice(5, p=[0.3, 0.25, 0.15, 0.15, 0.15])
        applies = [(True, False, True), (False, True, False), (False, False, True),
                   (True, True, True), (False, False, False)][choice]
        return LatentObject(cls, _fov_clamp(pos), np.zeros(2), applies_to=applies, red=rng.random() < 0.5)
    if cls == "stop_sign":
        pos = np.array([rng.uniform(3.0, 6.0), rng.uniform(5.0, 30.0)])
        facing = rng.random() < 0.6
        return LatentObject(cls, _fov_clamp(pos), np.zeros(2), applies_to=(facing,) * 3)
    raise ValueError(f"unknown class {cls!r}")


_CLASS_P = {"vehicle": 0.5, "pedestrian": 0.25, "cyclist": 0.12, "stop_sign": 0.05, "traffic_light": 0.08}


def _occlusion_pair(rng: np.random.Generator) -> list[LatentObject]:
    xb = rng.normal(0.0, 0.3)
    yb = rng.uniform(6.0, 11.0)
    ya = yb + rng.uniform(4.0, 12.0)
    xa = xb * ya / yb + rng.normal(0.0, 0.05)
    front = LatentObject("vehicle", np.array([xb, yb]), np.array([0.0, rng.uniform(2.0, 8.0)]),
                         blocking=rng.random() < 0.65)
    cls = "vehicle" if rng.random() < 0.7 else "cyclist"
    back = LatentObject(cls, np.array([xa, ya]), np.array([0.0, rng.uniform(2.0, 8.0)]),
                        blocking=cls == "vehicle" and rng.random() < 0.25)
    return [front, back]


def sample_latents(rng: np.random.Generator, cfg: GenConfig) -> tuple[str, list[LatentObject]]:
    mix = np.array(cfg.intention_mix) / sum(cfg.intention_mix)
    intention = INTENTIONS[rng.choice(3, p=mix)]
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objs: list[LatentObject] = []
    if n >= 2 and rng.random() < cfg.occlusion_rate:
        objs += _occlusion_pair(rng)
    if len(objs) < n and rng.random() < cfg.light_rate:
        objs.append(_sample_object(rng, "traffic_light", cfg))
    classes = list(_CLASS_P)
    p = np.array([_CLASS_P[c] for c in classes])
    while len(objs) < n:
        objs.append(_sample_object(rng, classes[rng.choice(len(classes), p=p)], cfg))
    order = rng.permutation(len(objs))
    return intention, [objs[i] for i in order]


# -- rendering -------------------------------------------------------------


def _ego_motion(rng, cfg: GenConfig, latents, labels) -> tuple[float, float, float]:
    """Ego speed at t=0, acceleration over the history, and the reaction from t=0 on.

    The history never shows the reaction: with an important hazard ahead the
    ego brakes to stop short of the nearest one, so the action and the
    future path both depend on which objects matter and where they are.
    """
    gap = math.inf
    for ob, lab in zip(latents, labels):
        if not lab:
            continue
        d = float(np.hypot(*ob.pos))
        if ob.cls == "traffic_light" and ob.red:
            gap = min(gap, d - 6.0)
        elif ob.cls == "stop_sign" and d < 25.0:
            gap = min(gap, d - 3.0)
        elif ob.cls in PARTICIPANTS and not ob.parked and d < 20.0:
            gap = min(gap, d - 4.0)
    hazard = math.isfinite(gap)
    if rng.random() < 0.1:
        v0 = rng.uniform(0.0, 0.4)
    else:
        v0 = rng.uniform(2.0, 14.0)
    if v0 < cfg.v_stop:
        a_hist = 0.0
        a0 = 0.0 if hazard else rng.uniform(0.8, 2.0)
    else:
        if rng.random() < 0.5 and v0 < 12.0:
            a_hist = rng.uniform(0.6, 2.0)
        else:
            a_hist = rng.normal(0.0, 0.08)
        a0 = -float(np.clip(v0 * v0 / (2.0 * max(gap, 1.0)), 1.0, 6.0)) if hazard else a_hist
    return float(v0), float(a_hist), float(a0)


def _ego_history(cfg: GenConfig, v0: float, a0: float) -> np.ndarray:
    """States (T_h, 6) at t = -(T_h-1)dt ... 0 in the t=0 ego frame."""
    t = -cfg.dt * np.arange(cfg.T_h - 1, -1, -1)
    v = np.maximum(v0 + a0 * t, 0.0)
    y = v0 * t + 0.5 * a0 * t * t
    st = np.zeros((cfg.T_h, 6))
    st[:, 1] = y
    st[:, 3] = v
    st[:, 5] = a0
    return st


def _ego_future(cfg: GenConfig, v0: float, a0: float, intention: str) -> np.ndarray:
    t = cfg.future_dt * np.arange(1, cfg.T_f + 1)
    if a0 < 0:
        t_stop = v0 / -a0
        tc = np.minimum(t, t_stop)
        s = v0 * tc + 0.5 * a0 * tc * tc
    else:
        s = v0 * t + 0.5 * a0 * t * t
    curl = {"forward": 0.0, "left": -0.02, "right": 0.02}[intention]
    return np.stack([curl * s * s, s], axis=1)


def _project(cfg: GenConfig, ob: LatentObject, rel: np.ndarray) -> np.ndarray:
    """Pinhole projection to an integer-cornered box clipped to the image."""
    W, H, f = cfg.image_w, cfg.image_h, cfg.focal
    width, height, z0 = _SIZE[ob.size_key]
    depth = max(float(rel[1]), 2.0)
    u = W / 2 + f * float(rel[0]) / depth
    bw = f * width / depth
    v_top = H / 2 + f * (cfg.camera_height - z0 - height) / depth
    v_bot = H / 2 + f * (cfg.camera_height - z0) / depth
    x1 = float(np.clip(round(u - bw / 2), 0, W - 2))
    x2 = float(np.clip(round(u + bw / 2), x1 + 2, W))
    y1 = float(np.clip(round(v_top), 0, H - 2))
    y2 = float(np.clip(round(v_bot), y1 + 2, H))
    return np.array([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1])


def _appearance_latent(ob: LatentObject, rel: np.ndarray) -> np.ndarray:
    onehot = np.zeros(len(OBJECT_CLASSES))
    onehot[OBJECT_CLASSES.index(ob.cls)] = 1.0
    rest = [rel[0] / 20.0, rel[1] / 40.0, ob.vel[0] / 10.0, ob.vel[1] / 10.0,
            *(float(a) for a in ob.applies_to), float(ob.red), float(ob.parked), float(ob.blocking)]
    return np.concatenate([onehot, rest])


def _depthsem_latent(ob: LatentObject, rel: np.ndarray) -> np.ndarray:
    onehot = np.zeros(len(OBJECT_CLASSES))
    onehot[OBJECT_CLASSES.index(ob.cls)] = 1.0
    return np.concatenate([onehot, [rel[1] / 40.0, rel[0] / 20.0, float(ob.blocking)]])


def render_scene(rng: np.random.Generator, cfg: GenConfig, scene_id: str, intention: str,
                 latents: list[LatentObject]) -> tuple[Scene, SceneInfo]:
    labels = importance_oracle(latents, intention, cfg)
    rules = oracle_rules(latents, intention, cfg)
    v0, a_hist, a0 = _ego_motion(rng, cfg, latents, labels)
    action = action_from_kinematics(v0, a0, cfg.v_stop, cfg.a_dead)
    ego_hist = _ego_history(cfg, v0, a_hist)
    future = _ego_future(cfg, v0, a0, intention)
    ego_obs = ego_hist + rng.normal(0.0, cfg.kinematic_noise, ego_hist.shape)

    ea, eds = _embeddings(cfg)
    ts = -cfg.dt * np.arange(cfg.T_h - 1, -1, -1)
    objects = []
    for j, ob in enumerate(latents):
        boxes = np.zeros((cfg.T_h, 4))
        app = np.zeros((cfg.T_h, APPEARANCE_LATENT_DIM))
        ds = np.zeros((cfg.T_h, DEPTHSEM_LATENT_DIM))
        for k, t in enumerate(ts):
            world = ob.pos + ob.vel * t + rng.normal(0.0, cfg.kinematic_noise, 2)
            rel = world - ego_hist[k, :2]
            boxes[k] = _project(cfg, ob, rel)
            app[k] = _appearance_latent(ob, rel)
            ds[k] = _depthsem_latent(ob, rel)
        app_feat = app @ ea + rng.normal(0.0, cfg.feature_noise, (cfg.T_h, cfg.d_appearance))
        ds_feat = ds @ eds + rng.normal(0.0, cfg.feature_noise, (cfg.T_h, cfg.d_depthsem))
        objects.append(ObjectTrack(
            object_id=f"{j}", object_class=ob.cls, boxes=boxes,
            appearance_feat=app_feat, depthsem_feat=ds_feat,
            distance_to_ego=float(np.hypot(*ob.pos)),
        ))
    scene = Scene(
        scene_id=scene_id, W=cfg.image_w, H=cfg.image_h, T_h=cfg.T_h, intention=intention,
        objects=objects, ego=EgoTrack(ego_obs),
        labels=Labels(labels, action, future),
    )
    others = [importance_oracle(latents, it, cfg) for it in INTENTIONS if it != intention]
    info = SceneInfo(
        latents=latents, rules=rules,
        intention_dependent=any(not np.array_equal(o, labels) for o in others),
        occlusion=any("d" in r for r in rules),
    )
    return scene, info


def generate_scene(rng: np.random.Generator, config: GenConfig, scene_id: str = "scene") -> Scene:
    scene, _ = generate_scene_with_info(rng, config, scene_id)
    return scene


def generate_scene_with_info(rng: np.random.Generator, config: GenConfig,
                             scene_id: str = "scene") -> tuple[Scene, SceneInfo]:
    intention, latents = sample_latents(rng, config)
    return render_scene(rng, config, scene_id, intention, latents)


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_dataset(config: GenConfig, with_info: bool = False):
    """``scene_count`` labeled plus ``unlabeled_count`` unlabeled scenes.

    Unlabeled scenes keep ego action/trajectory ground truth but drop
    importance labels. Scene ``i`` depends only on ``(config.seed, i)``.
    """
    labeled, unlabeled, infos = [], [], {}
    total = config.scene_count + config.unlabeled_count
    for i in range(total):
        scene, info = generate_scene_with_info(scene_rng(config.seed, i), config, f"scene-{i:06d}")
        if i >= config.scene_count:
            scene.labels = Labels(None, scene.labels.ego_action, scene.labels.future_traj)
            unlabeled.append(scene)
        else:
            labeled.append(scene)
        infos[scene.scene_id] = info
    ds = Dataset(labeled, unlabeled)
    return (ds, infos) if with_info else ds

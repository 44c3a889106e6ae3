"""Supervised and semi-supervised training loops."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tape
from .layers import bind
from .metrics import f1_accuracy
from .model import (
    ModelConfig, SceneArrays, collate, fit_normalization, forward, init_params,
    predict_scores, scene_arrays, trainable,
)
from .optim import AdamState, adam_step
from .scene import Scene, split_dataset
from .ssl import (
    GammaSchedule, LossWeights, gamma_at, pseudo_label_scene, supervised_loss, unlabeled_loss,
)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "L_labeled", "L_unlabeled", "gamma", "val_accuracy", "val_F1")


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    mode: str = "supervised"
    batch_size: int = 32
    unlabeled_batch_size: int | None = None  # defaults to batch_size
    epochs: int = 100
    lr: float = 1e-4
    alpha1: float = 0.8
    alpha2: float = 0.8
    lam: float = 0.5
    beta: float = 1.0
    gamma_init: float = 0.001
    gamma_max: float = 1.0
    gamma_ramp_epochs: float = 50.0
    gamma_shape: str = "exponential"
    gamma_forced: float | None = None
    seed: int = 0
    patience: int = 10
    val_fraction: float = 0.1
    pseudo_refresh: str = "epoch"
    use_auxiliary: bool = True
    use_ranking_pseudo: bool = True
    use_loss_weighting: bool = True

    def __post_init__(self):
        if self.mode == "ssl":
            self.mode = "semi_supervised"
        if self.mode not in ("supervised", "semi_supervised"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.pseudo_refresh not in ("epoch", "iteration"):
            raise ValueError(f"pseudo_refresh must be 'epoch' or 'iteration', got {self.pseudo_refresh!r}")
        if not 0.5 <= self.alpha1 < 1 or not 0 < self.alpha2 <= 1:
            raise ValueError(f"bad pseudo-label thresholds alpha1={self.alpha1}, alpha2={self.alpha2}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.unlabeled_batch_size is not None and self.unlabeled_batch_size < 1:
            raise ValueError("unlabeled_batch_size must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        sched = d.pop("gamma_schedule", None)
        if sched:
            for key, target in (("init", "gamma_init"), ("max", "gamma_max"),
                                ("ramp", "gamma_ramp_epochs"), ("shape", "gamma_shape")):
                if key in sched:
                    d[target] = sched[key]
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(lam=self.lam if self.use_auxiliary else 0.0, beta=self.beta)


@dataclass
class TrainResult:
    params: dict
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in self.log:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()


def evaluate_items(params, items: Sequence[SceneArrays], cfg: ModelConfig) -> tuple[float, float]:
    scores = predict_scores(params, items, cfg)
    preds = np.concatenate([(s > 0.5).astype(np.int64) for s in scores])
    labels = np.concatenate([it.importance for it in items])
    return f1_accuracy(preds, labels)


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    return [order[i:i + size] for i in range(0, len(order), size)]


def train(labeled: Sequence[Scene], model_cfg: ModelConfig, config: TrainConfig,
          unlabeled: Sequence[Scene] = (), val: Sequence[Scene] | None = None) -> TrainResult:
    """Train from scratch; returns the parameters with the best validation F1.

    ``val`` defaults to a seeded ``val_fraction`` carve-out of ``labeled``.
    """
    if not labeled:
        raise ValueError("training needs a non-empty labeled set")
    ssl = config.mode == "semi_supervised"
    if ssl and not unlabeled:
        raise ValueError("semi-supervised training needs unlabeled scenes")
    if val is None:
        if len(labeled) >= 10:
            labeled, val = split_dataset(list(labeled), 1.0 - config.val_fraction, config.seed)
        else:
            val = labeled
    items_l = [scene_arrays(s) for s in labeled]
    items_v = [scene_arrays(s) for s in val]
    items_u = [scene_arrays(s) for s in unlabeled] if ssl else []

    params = init_params(model_cfg, config.seed)
    fit_normalization(params, items_l)
    names = trainable(params)
    opt = AdamState(lr=config.lr)
    weights = config.loss_weights
    aux = weights.lam > 0
    traj_scale = model_cfg.traj_scale

    ss = np.random.SeedSequence(config.seed).spawn(4)
    shuffle_rng, gumbel_l, unl_rng, gumbel_u = (np.random.default_rng(s) for s in ss)

    n_iter = math.ceil(len(items_l) / config.batch_size)
    schedule = GammaSchedule(config.gamma_init, config.gamma_max,
                             int(round(config.gamma_ramp_epochs * n_iter)), config.gamma_shape)
    unl_order = unl_rng.permutation(len(items_u)) if ssl else np.zeros(0, dtype=int)
    unl_cursor = 0

    best_f1, best_epoch, best_params = -1.0, 0, {k: v.copy() for k, v in params.items()}
    history: list[dict] = []
    it = 0
    tape = Tape()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(items_l))
        lab_batches = _batches(order, config.batch_size)
        gammas = [config.gamma_forced if config.gamma_forced is not None else gamma_at(it + k, schedule)
                  for k in range(len(lab_batches))]
        use_unl = ssl and any(g > 0 for g in gammas)
        unl_batches: list[np.ndarray] = []
        cache: dict[int, object] = {}
        if use_unl:
            ub_size = min(config.unlabeled_batch_size or config.batch_size, len(items_u))
            for _ in lab_batches:
                if unl_cursor + ub_size > len(unl_order):
                    unl_order = unl_rng.permutation(len(items_u))
                    unl_cursor = 0
                unl_batches.append(unl_order[unl_cursor:unl_cursor + ub_size])
                unl_cursor += ub_size
            if config.pseudo_refresh == "epoch":
                needed = sorted(set(np.concatenate(unl_batches).tolist()))
                scores = predict_scores(params, [items_u[i] for i in needed], model_cfg)
                for i, s in zip(needed, scores):
                    cache[i] = _pseudo(i, s, config)

        sum_l = sum_u = 0.0
        for k, idx in enumerate(lab_batches):
            gamma = gammas[k]
            tape.reset()
            with tape:
                P = bind(params, tape)
                batch = collate([items_l[i] for i in idx])
                fw = forward(P, batch, model_cfg, aux=aux, train=True, rng=gumbel_l)
                loss_l = supervised_loss(fw, batch, weights, traj_scale)
                loss = loss_l
                lu = 0.0
                if use_unl and gamma > 0:
                    uidx = unl_batches[k]
                    ub = collate([items_u[i] for i in uidx])
                    fu = forward(P, ub, model_cfg, aux=aux, train=True, rng=gumbel_u)
                    if config.pseudo_refresh == "iteration":
                        pls = [_pseudo(i, fu.scores.data[b, : items_u[i].n], config)
                               for b, i in enumerate(uidx)]
                    else:
                        pls = [cache[i] for i in uidx]
                    y, w, eps = _pad_pseudo(pls, ub.mask)
                    loss_u = unlabeled_loss(fu, ub, y, w, eps, weights, traj_scale)
                    loss = loss + loss_u * gamma
                    lu = float(loss_u.data)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, iteration {it}")
            grads = tape.backward(loss)
            adam_step(params, {n: grads[P[n]] for n in names}, opt, names)
            sum_l += float(loss_l.data)
            sum_u += lu
            it += 1

        acc, f1 = evaluate_items(params, items_v, model_cfg)
        row = {
            "epoch": epoch,
            "L_labeled": sum_l / len(lab_batches),
            "L_unlabeled": sum_u / len(lab_batches),
            "gamma": gammas[-1],
            "val_accuracy": acc,
            "val_F1": f1,
        }
        history.append(row)
        log.info("epoch %d  L_l=%.4f  L_u=%.4f  gamma=%.4f  val acc=%.2f F1=%.2f",
                 epoch, row["L_labeled"], row["L_unlabeled"], row["gamma"], acc, f1)
        if f1 > best_f1:
            best_f1, best_epoch = f1, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        elif epoch - best_epoch >= config.patience:
            break
    return TrainResult(best_params, history, best_epoch)


def _pseudo(i: int, scores: np.ndarray, config: TrainConfig):
    return pseudo_label_scene(i, scores, config.alpha1, config.alpha2,
                              ranking=config.use_ranking_pseudo, weighting=config.use_loss_weighting)


def _pad_pseudo(pls, mask: np.ndarray):
    B, N = mask.shape
    y = np.zeros((B, N))
    w = np.zeros((B, N))
    eps = np.zeros(B)
    for b, p in enumerate(pls):
        n = p.pseudo_labels.size
        y[b, :n] = p.pseudo_labels
        w[b, :n] = p.weights
        eps[b] = p.case_weight
    return y, w, eps

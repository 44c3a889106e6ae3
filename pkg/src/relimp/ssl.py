"""Pseudo-labelling, unlabeled-case weighting, loss assembly and the gamma ramp."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .heads import SCORE_EPS


@dataclass
class LossWeights:
    lam: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class GammaSchedule:
    init: float = 0.001
    max: float = 1.0
    ramp: int = 1000  # iterations until gamma reaches max
    shape: str = "exponential"

    def __post_init__(self):
        if self.shape not in ("exponential", "linear"):
            raise ValueError(f"unknown gamma schedule shape {self.shape!r}")
        if self.init < 0 or self.max < self.init or self.ramp < 0:
            raise ValueError("gamma schedule needs 0 <= init <= max and ramp >= 0")
        if self.shape == "exponential" and self.init <= 0 and self.max > 0:
            raise ValueError("exponential gamma schedule needs init > 0")


def gamma_at(iteration: int, schedule: GammaSchedule | None = None) -> float:
    """gamma(t) = min(max, init * r**t), with r chosen so the ramp ends at max."""
    sch = schedule or GammaSchedule()
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if sch.max == sch.init:
        return sch.max
    if iteration >= sch.ramp:
        return sch.max
    frac = iteration / sch.ramp
    if sch.shape == "linear":
        return sch.init + (sch.max - sch.init) * frac
    return min(sch.max, sch.init * math.exp(frac * math.log(sch.max / sch.init)))


# -- pseudo labels and weights ---------------------------------------------


def generate_pseudo_labels(scores, alpha1: float = 0.8, alpha2: float = 0.8) -> np.ndarray:
    """Two-stage threshold-then-rank pseudo labels for one scene.

    Stage 1 labels confident scores (> alpha1 -> 1, < 1 - alpha1 -> 0).
    Stage 2 divides each unresolved score by the largest unresolved score
    and labels ratios > alpha2 as important.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("no scores to label")
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("scores must lie in [0, 1]")
    labels = np.zeros(s.shape, dtype=np.int64)
    labels[s > alpha1] = 1
    unresolved = ~((s > alpha1) | (s < 1.0 - alpha1))
    if not unresolved.any():
        return labels
    top = s[unresolved].max()
    if top <= 0:
        return labels
    ratio = s[unresolved] / top
    labels[unresolved] = (ratio > alpha2).astype(np.int64)
    return labels


def object_weights(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max())
    return e / e.sum()


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def case_weight(w) -> float:
    """1 - H(w) / H(uniform); a single-object case gets weight 1."""
    w = np.asarray(w, dtype=np.float64)
    n = w.size
    if n <= 1:
        return 1.0
    eps = 1.0 - entropy(w) / math.log(n)
    return float(min(1.0, max(0.0, eps)))


@dataclass
class PseudoLabeledScene:
    scene_index: int
    pseudo_labels: np.ndarray
    weights: np.ndarray
    case_weight: float


def pseudo_label_scene(index: int, scores, alpha1=0.8, alpha2=0.8, ranking=True,
                       weighting=True) -> PseudoLabeledScene:
    s = np.asarray(scores, dtype=np.float64)
    if ranking:
        y = generate_pseudo_labels(s, alpha1, alpha2)
    else:
        y = (s > 0.5).astype(np.int64)
    if weighting:
        w = object_weights(s)
        eps = case_weight(w)
    else:
        w = np.full(s.size, 1.0 / s.size)
        eps = 1.0
    return PseudoLabeledScene(index, y, w, eps)


# -- losses ----------------------------------------------------------------


def _clamped(scores) -> Tensor:
    return ad.clip(ad.as_tensor(scores), SCORE_EPS, 1.0 - SCORE_EPS)


def importance_bce(scores, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over scenes of the per-scene mean binary cross-entropy."""
    s = _clamped(scores)
    y = np.asarray(labels, dtype=np.float64)
    ce = -(ad.log(s) * y + ad.log(1.0 - s) * (1.0 - y))
    n = mask.sum(axis=1).astype(np.float64)
    per_scene = (ce * (mask / n[:, None])).sum(axis=1)
    return per_scene.mean()


def aux_loss(action_logits, actions: np.ndarray, traj, traj_true: np.ndarray,
             beta: float, traj_scale: float = 1.0) -> Tensor:
    """Mean over scenes of action cross-entropy + beta * squared trajectory error."""
    logp = ad.log_softmax(action_logits, axis=-1)
    onehot = np.eye(logp.shape[-1])[np.asarray(actions)]
    ce = -(logp * onehot).sum(axis=-1)
    diff = traj - np.asarray(traj_true) / traj_scale
    sq = (diff * diff).sum(axis=(-2, -1))
    return (ce + sq * beta).mean()


def supervised_loss(fw, batch, weights: LossWeights, traj_scale: float = 1.0) -> Tensor:
    if batch.importance is None:
        raise ValueError("supervised loss needs importance labels for every scene")
    loss = importance_bce(fw.scores, batch.importance, batch.mask)
    if weights.lam > 0:
        if batch.action is None or batch.traj is None or fw.action_logits is None:
            raise ValueError("auxiliary loss needs ego action and trajectory labels")
        loss = loss + aux_loss(fw.action_logits, batch.action, fw.traj, batch.traj,
                               weights.beta, traj_scale) * weights.lam
    return loss


def pseudo_term(scores, pseudo: np.ndarray, w: np.ndarray, eps: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over scenes of eps_i * sum_j w_j (y~_j - s_j)^2 (y~, w, eps are constants)."""
    s = ad.as_tensor(scores)
    d = s - np.asarray(pseudo, dtype=np.float64)
    per_scene = (d * d * (np.asarray(w) * mask)).sum(axis=1)
    return (per_scene * np.asarray(eps, dtype=np.float64)).mean()


def unlabeled_loss(fw, batch, pseudo: np.ndarray | None, w: np.ndarray, eps: np.ndarray,
                   weights: LossWeights, traj_scale: float = 1.0) -> Tensor:
    if pseudo is None:
        raise ValueError("unlabeled loss needs pseudo labels for every object")
    loss = pseudo_term(fw.scores, pseudo, w, eps, batch.mask)
    if weights.lam > 0:
        if batch.action is None or batch.traj is None or fw.action_logits is None:
            raise ValueError("auxiliary loss needs ego action and trajectory labels")
        loss = loss + aux_loss(fw.action_logits, batch.action, fw.traj, batch.traj,
                               weights.beta, traj_scale) * weights.lam
    return loss

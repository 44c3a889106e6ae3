"""Accuracy/F1 reports, rule-based baselines and the intra-class correlation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .scene import INTENTIONS, Scene, normalize_boxes

SLICES = ("overall",) + INTENTIONS
METRICS_COLUMNS = ("slice", "config", "seed", "accuracy", "f1", "n_scenes", "n_objects")


def f1_accuracy(preds, labels) -> tuple[float, float]:
    """(accuracy, F1) in percent; important is the positive class, F1 = 0 if P + R = 0."""
    p = np.asarray(preds).astype(np.int64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions vs {y.size} labels")
    if p.size == 0:
        return 0.0, 0.0
    acc = 100.0 * float(np.mean(p == y))
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return acc, 100.0 * f1


@dataclass
class SliceMetrics:
    accuracy: float
    f1: float
    n_scenes: int
    n_objects: int


@dataclass
class MetricsReport:
    slices: dict[str, SliceMetrics] = field(default_factory=dict)
    config: str = ""
    seed: int = 0

    def rows(self) -> list[dict]:
        return [
            {"slice": name, "config": self.config, "seed": self.seed, "accuracy": m.accuracy,
             "f1": m.f1, "n_scenes": m.n_scenes, "n_objects": m.n_objects}
            for name, m in self.slices.items()
        ]


def compute_metrics(predictions: Sequence, labels: Sequence, intentions: Sequence[str],
                    config: str = "", seed: int = 0) -> MetricsReport:
    """Object-level accuracy/F1, overall and sliced by the scene's ego intention.

    ``predictions`` and ``labels`` are per-scene sequences of 0/1 arrays.
    """
    if not len(predictions) == len(labels) == len(intentions):
        raise ValueError("predictions, labels and intentions must align per scene")
    for k, (p, y) in enumerate(zip(predictions, labels)):
        if len(p) != len(y):
            raise ValueError(f"scene {k}: {len(p)} predictions vs {len(y)} labels")
    report = MetricsReport(config=config, seed=seed)
    for name in SLICES:
        keep = [k for k, it in enumerate(intentions) if name == "overall" or it == name]
        if not keep:
            report.slices[name] = SliceMetrics(0.0, 0.0, 0, 0)
            continue
        p = np.concatenate([np.asarray(predictions[k]) for k in keep])
        y = np.concatenate([np.asarray(labels[k]) for k in keep])
        acc, f1 = f1_accuracy(p, y)
        report.slices[name] = SliceMetrics(acc, f1, len(keep), int(y.size))
    return report


# -- baselines -------------------------------------------------------------


def baseline_predict(scene: Scene, kind: str) -> np.ndarray:
    """Single-selection heuristics; ties go to the lowest object index.

    B1: largest current-frame box; B2: box centre closest to the image
    centre; B3: smallest distance to the ego vehicle.
    """
    kind = kind.upper().replace("-", "")
    n = scene.n_objects
    if kind == "B1":
        cur = np.array([normalize_boxes(o.boxes[-1:], scene.W, scene.H)[0] for o in scene.objects])
        pick = int(np.argmax(cur[:, 2] * cur[:, 3]))
    elif kind == "B2":
        cur = np.array([o.boxes[-1] for o in scene.objects])
        d = np.hypot(cur[:, 0] - scene.W / 2, cur[:, 1] - scene.H / 2)
        pick = int(np.argmin(d))
    elif kind == "B3":
        dist = [o.distance_to_ego for o in scene.objects]
        if any(d is None for d in dist):
            raise ValueError(f"scene {scene.scene_id}: baseline B3 needs distance_to_ego on every object")
        pick = int(np.argmin(dist))
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    out = np.zeros(n, dtype=np.int64)
    out[pick] = 1
    return out


# -- ICC -------------------------------------------------------------------


def anova_mean_squares(ratings) -> tuple[float, float, float]:
    """Two-way ANOVA mean squares (subjects, raters, error) for ``ratings`` (R raters x S subjects)."""
    x = np.asarray(ratings, dtype=np.float64)
    k, n = x.shape
    grand = x.mean()
    ss_subj = k * np.sum((x.mean(axis=0) - grand) ** 2)
    ss_rater = n * np.sum((x.mean(axis=1) - grand) ** 2)
    resid = x - x.mean(axis=0, keepdims=True) - x.mean(axis=1, keepdims=True) + grand
    ss_err = np.sum(resid ** 2)
    return ss_subj / (n - 1), ss_rater / (k - 1), ss_err / ((n - 1) * (k - 1))


def icc(ratings, form: str = "ICC(2,1)") -> float:
    """Intra-class correlation for a complete R x S rating matrix.

    ``ICC(2,1)``: two-way random effects, absolute agreement, single rater.
    ``ICC(3,1)``: two-way mixed, consistency, single rater.
    """
    x = np.asarray(ratings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("ICC needs at least 2 raters and 2 subjects")
    if not np.all(np.isfinite(x)):
        raise ValueError("ICC ratings must be complete and finite")
    if np.all(x == x.flat[0]):
        raise ValueError("ICC undefined: ratings have zero total variance")
    k, n = x.shape
    if np.all(x == x[0]):
        return 1.0  # every rater agrees on every subject
    msr, msc, mse = anova_mean_squares(x)
    if form == "ICC(2,1)":
        denom = msr + (k - 1) * mse + k * (msc - mse) / n
    elif form == "ICC(3,1)":
        denom = msr + (k - 1) * mse
    else:
        raise ValueError(f"unknown ICC form {form!r}")
    if denom == 0:
        raise ValueError("ICC undefined: zero denominator")
    return float((msr - mse) / denom)


def ratings_matrix(rows: Sequence[tuple[str, str, float]]) -> np.ndarray:
    """Pivot ``(subject, rater, value)`` triples into a raters x subjects matrix."""
    subjects = sorted({r[0] for r in rows})
    raters = sorted({r[1] for r in rows})
    si = {s: i for i, s in enumerate(subjects)}
    ri = {r: i for i, r in enumerate(raters)}
    x = np.full((len(raters), len(subjects)), np.nan)
    for s, r, v in rows:
        if not np.isnan(x[ri[r], si[s]]):
            raise ValueError(f"duplicate rating for subject {s!r}, rater {r!r}")
        x[ri[r], si[s]] = float(v)
    if np.isnan(x).any():
        raise ValueError("ratings table has missing cells")
    return x

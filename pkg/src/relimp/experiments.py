"""Ablation matrix, threshold sweep and report rendering."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .metrics import METRICS_COLUMNS, baseline_predict, compute_metrics, f1_accuracy
from .model import ModelConfig, predict_scores, scene_arrays
from .scene import Scene
from .train import TrainConfig, train

SWEEP_COLUMNS = ("alpha1", "alpha2", "seed", "accuracy", "f1")
DEFAULT_GRID = (0.5, 0.6, 0.7, 0.8, 0.9)
BASELINES = ("B-1", "B-2", "B-3")


@dataclass(frozen=True)
class AblationConfig:
    name: str
    mode: str = "supervised"
    use_intention: bool = True
    use_relation_graph: bool = True
    use_auxiliary: bool = True
    use_ranking_pseudo: bool | None = None
    use_loss_weighting: bool | None = None

    def __post_init__(self):
        if self.mode not in ("supervised", "semi_supervised"):
            raise ValueError(f"{self.name}: unknown mode {self.mode!r}")
        pseudo_flags = (self.use_ranking_pseudo, self.use_loss_weighting)
        if self.mode == "supervised" and any(f is not None for f in pseudo_flags):
            raise ValueError(f"{self.name}: ranking/weighting flags only apply to semi_supervised runs")
        if self.mode == "semi_supervised" and any(f is None for f in pseudo_flags):
            raise ValueError(f"{self.name}: semi_supervised runs must set ranking and weighting flags")

    def apply(self, model: ModelConfig, train_cfg: TrainConfig, seed: int) -> tuple[ModelConfig, TrainConfig]:
        m = dataclasses.replace(model, use_intention=self.use_intention,
                                use_relation_graph=self.use_relation_graph)
        extra = {}
        if self.mode == "semi_supervised":
            extra = dict(use_ranking_pseudo=self.use_ranking_pseudo, use_loss_weighting=self.use_loss_weighting)
        t = dataclasses.replace(train_cfg, mode=self.mode, seed=seed, use_auxiliary=self.use_auxiliary, **extra)
        return m, t


def _s(name, intention, graph, aux):
    return AblationConfig(name, "supervised", intention, graph, aux)


def _ss(name, aux, ranking, weighting):
    return AblationConfig(name, "semi_supervised", True, True, aux, ranking, weighting)


TABLE_I = (
    _s("Ours-S-1", True, False, False),
    _s("Ours-S-2", False, True, False),
    _s("Ours-S-3", True, True, False),
    _s("Ours-S", True, True, True),
    _ss("Ours-SS-1", False, True, False),
    _ss("Ours-SS-2", False, False, True),
    _ss("Ours-SS-3", False, True, True),
    _ss("Ours-SS", True, True, True),
)


def ablation_by_name(name: str) -> AblationConfig:
    for cfg in TABLE_I:
        if cfg.name == name:
            return cfg
    raise ValueError(f"unknown ablation config {name!r}; known: {[c.name for c in TABLE_I]}")


# -- evaluation -----------------------------------------------------------


def evaluate_scenes(predictions: Sequence[np.ndarray], scenes: Sequence[Scene], config: str, seed: int,
                    families: Mapping[str, set] | None = None) -> list[dict]:
    """Metric rows for the intention slices plus any named scene families (sets of scene ids)."""
    labels = [s.labels.importance for s in scenes]
    rows = compute_metrics(predictions, labels, [s.intention for s in scenes], config, seed).rows()
    for fam, ids in (families or {}).items():
        keep = [k for k, s in enumerate(scenes) if s.scene_id in ids]
        if keep:
            acc, f1 = f1_accuracy(np.concatenate([predictions[k] for k in keep]),
                                  np.concatenate([labels[k] for k in keep]))
        else:
            acc = f1 = 0.0
        rows.append({"slice": fam, "config": config, "seed": seed, "accuracy": acc, "f1": f1,
                     "n_scenes": len(keep), "n_objects": int(sum(len(labels[k]) for k in keep))})
    return rows


def model_predictions(params, model: ModelConfig, scenes: Sequence[Scene]) -> list[np.ndarray]:
    scores = predict_scores(params, [scene_arrays(s) for s in scenes], model)
    return [(s > 0.5).astype(np.int64) for s in scores]


def baseline_rows(scenes: Sequence[Scene], families: Mapping[str, set] | None = None, seed: int = 0) -> list[dict]:
    rows = []
    for kind in BASELINES:
        preds = [baseline_predict(s, kind) for s in scenes]
        rows += evaluate_scenes(preds, scenes, kind, seed, families)
    return rows


def run_ablation(train_scenes: Sequence[Scene], test_scenes: Sequence[Scene], configs: Iterable[AblationConfig],
                 seeds: Sequence[int], model: ModelConfig, train_cfg: TrainConfig,
                 unlabeled: Sequence[Scene] = (), families: Mapping[str, set] | None = None,
                 subset=None) -> list[dict]:
    """Train every config for every seed and return per-seed metric rows.

    ``subset(seed)`` optionally picks the labeled training scenes per seed
    (the reduced-label protocol); otherwise all ``train_scenes`` are used.
    """
    rows = []
    for cfg in configs:
        for seed in seeds:
            m, t = cfg.apply(model, train_cfg, seed)
            lab = subset(seed) if subset is not None else train_scenes
            res = train(lab, m, t, unlabeled=unlabeled if cfg.mode == "semi_supervised" else ())
            rows += evaluate_scenes(model_predictions(res.params, m, test_scenes), test_scenes, cfg.name, seed,
                                    families)
    return rows


def summarize(rows: Sequence[dict], keys=("slice", "config"), values=("accuracy", "f1")) -> list[dict]:
    """Mean and sample standard deviation across seeds for each ``keys`` group."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, grp in groups.items():
        row = dict(zip(keys, key))
        row["n_seeds"] = len(grp)
        for v in values:
            arr = np.array([float(g[v]) for g in grp])
            row[f"{v}_mean"] = float(arr.mean())
            row[f"{v}_std"] = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        out.append(row)
    return out


# -- threshold sweep -------------------------------------------------------


def sweep_thresholds(train_scenes: Sequence[Scene], test_scenes: Sequence[Scene], unlabeled: Sequence[Scene],
                     alpha1s: Sequence[float] = DEFAULT_GRID, alpha2s: Sequence[float] = DEFAULT_GRID,
                     seeds: Sequence[int] = (0,), model: ModelConfig | None = None,
                     train_cfg: TrainConfig | None = None, subset=None) -> list[dict]:
    """Semi-supervised accuracy/F1 for every (alpha1, alpha2) cell and seed.

    With alpha1 = 0.5 every score except exactly 0.5 is settled by the
    threshold stage, and a lone 0.5 always survives the ratio test for
    alpha2 < 1; those cells are trained once and shared across alpha2.
    """
    model = model or ModelConfig.desk()
    train_cfg = train_cfg or TrainConfig()
    for a in alpha1s:
        if not 0.5 <= a < 1:
            raise ValueError(f"alpha1 grid values must lie in [0.5, 1), got {a}")
    for a in alpha2s:
        if not 0 < a <= 1:
            raise ValueError(f"alpha2 grid values must lie in (0, 1], got {a}")
    rows = []
    cache: dict[tuple, tuple[float, float]] = {}
    items = [scene_arrays(s) for s in test_scenes]
    labels = np.concatenate([it.importance for it in items])
    for a1 in alpha1s:
        for a2 in alpha2s:
            for seed in seeds:
                key = (a1, None if a1 == 0.5 and a2 < 1 else a2, seed)
                if key not in cache:
                    t = dataclasses.replace(train_cfg, mode="semi_supervised", alpha1=a1, alpha2=a2, seed=seed)
                    lab = subset(seed) if subset is not None else train_scenes
                    res = train(lab, model, t, unlabeled=unlabeled)
                    preds = np.concatenate([(s > 0.5).astype(np.int64)
                                            for s in predict_scores(res.params, items, model)])
                    cache[key] = f1_accuracy(preds, labels)
                acc, f1 = cache[key]
                rows.append({"alpha1": a1, "alpha2": a2, "seed": seed, "accuracy": acc, "f1": f1})
    return rows


# -- CSV and text rendering -----------------------------------------------


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else METRICS_COLUMNS))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    return rows


def render_table(rows: Sequence[dict]) -> str:
    """Plain-text table: slices down, configs across, ``acc / F1`` as mean (± std over seeds)."""
    if rows and "alpha1" in rows[0]:
        return _render_grid(rows)
    missing = {"slice", "config", "accuracy", "f1"} - set(rows[0]) if rows else set()
    if missing:
        raise ValueError(f"metrics table lacks columns {sorted(missing)}")
    summary = summarize(rows)
    configs = list(dict.fromkeys(r["config"] for r in rows))
    slices = list(dict.fromkeys(r["slice"] for r in rows))
    cell = {(r["slice"], r["config"]): r for r in summary}

    def fmt(r):
        if r is None:
            return "-"
        if r["n_seeds"] > 1:
            return (f"{r['accuracy_mean']:.1f}±{r['accuracy_std']:.1f} / "
                    f"{r['f1_mean']:.1f}±{r['f1_std']:.1f}")
        return f"{r['accuracy_mean']:.1f} / {r['f1_mean']:.1f}"

    table = [["slice"] + configs] + [[s] + [fmt(cell.get((s, c))) for c in configs] for s in slices]
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _render_grid(rows: Sequence[dict]) -> str:
    a1s = sorted({float(r["alpha1"]) for r in rows})
    a2s = sorted({float(r["alpha2"]) for r in rows})
    f1 = {}
    for r in rows:
        f1.setdefault((float(r["alpha1"]), float(r["alpha2"])), []).append(float(r["f1"]))
    head = "a2 \\ a1 " + "".join(f"{a:>8.2f}" for a in a1s)
    lines = [head, "-" * len(head)]
    for a2 in a2s:
        vals = [f1.get((a1, a2)) for a1 in a1s]
        lines.append(f"{a2:<8.2f}" + "".join(f"{np.mean(v):>8.1f}" if v else f"{'-':>8}" for v in vals))
    means = [np.mean([x for a2 in a2s for x in f1.get((a1, a2), [])] or [math.nan]) for a1 in a1s]
    lines.append("mean    " + "".join(f"{m:>8.1f}" for m in means))
    return "\n".join(lines) + "\n"

"""JSON run configuration: generator, model and training sections plus the data protocol."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig
from .scene import Scene, split_dataset
from .synth import GenConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    generator: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split_ratio: float = 0.7
    split_seed: int = 0
    label_fraction: float = 1.0

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if not 0 < self.label_fraction <= 1:
            raise ValueError(f"label_fraction must be in (0, 1], got {self.label_fraction}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        top = {"generator", "model", "train", "data"}
        unknown = set(d) - top
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        data = dict(d.get("data", {}))
        bad = set(data) - {"split_ratio", "split_seed", "label_fraction"}
        if bad:
            raise ValueError(f"unknown data keys: {sorted(bad)}")
        return cls(
            generator=GenConfig.from_dict(d.get("generator", {})),
            model=ModelConfig.from_dict(d.get("model", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            **data,
        )

    def to_dict(self) -> dict:
        return {
            "generator": self.generator.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": {"split_ratio": self.split_ratio, "split_seed": self.split_seed,
                     "label_fraction": self.label_fraction},
        }

    def split(self, labeled: list[Scene], seed: int | None = None) -> tuple[list[Scene], list[Scene]]:
        """Train/test split, then keep ``label_fraction`` of the train part (seeded by ``seed``)."""
        tr, te = split_dataset(labeled, self.split_ratio, self.split_seed)
        if self.label_fraction < 1:
            rng = np.random.default_rng(self.split_seed if seed is None else seed)
            keep = rng.permutation(len(tr))[: max(1, int(len(tr) * self.label_fraction))]
            tr = [tr[i] for i in sorted(keep)]
        return tr, te


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(raw)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")

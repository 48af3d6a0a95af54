"""System parameters and train/OOD split boxes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError

SPLITS = ("train", "val", "test_id", "test_ood")
PARAM_KEYS = ("alpha", "beta", "gamma", "delta")

_MAX_OOD_TRIES = 10_000


@dataclass
class SystemParams:
    """Time-invariant generative knobs of one simulated system.

    alpha: half box size, beta: initial velocity norm, gamma_strength:
    interaction strength, delta: spring probability (springs) or positive
    charge probability (charged).
    """

    alpha: float
    beta: float
    gamma_strength: float
    delta: float

    def validate(self) -> None:
        vals = (self.alpha, self.beta, self.gamma_strength, self.delta)
        if not all(np.isfinite(v) and v > 0 for v in vals[:3]) or not np.isfinite(self.delta):
            raise ConfigurationError(f"system parameters must be finite and positive: {self}")
        if not (0.0 <= self.delta <= 1.0):
            raise ConfigurationError(f"delta must lie in [0, 1], got {self.delta}")

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta,
                "gamma": self.gamma_strength, "delta": self.delta}

    def as_vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma_strength, self.delta])

    @staticmethod
    def from_dict(d: dict) -> "SystemParams":
        return SystemParams(alpha=float(d["alpha"]), beta=float(d["beta"]),
                            gamma_strength=float(d["gamma"]), delta=float(d["delta"]))


Box = dict  # param key -> (lo, hi)


@dataclass
class SplitSpec:
    """Per-parameter sampling intervals plus per-split sample counts."""

    train_box: Box
    ood_box: Box
    counts: dict = field(default_factory=lambda: {s: 0 for s in SPLITS})
    n_objects: int = 10
    n_frames: int = 60

    def validate(self) -> None:
        for name, box in (("train_box", self.train_box), ("ood_box", self.ood_box)):
            if set(box) != set(PARAM_KEYS):
                raise ConfigurationError(f"{name} must define exactly {PARAM_KEYS}")
            for key, (lo, hi) in box.items():
                if not (np.isfinite(lo) and np.isfinite(hi) and 0 < lo <= hi):
                    raise ConfigurationError(f"{name}[{key}]: bad interval [{lo}, {hi}]")
            if not (0.0 <= box["delta"][0] and box["delta"][1] <= 1.0):
                raise ConfigurationError(f"{name}[delta] must stay inside [0, 1]")
        for key in PARAM_KEYS:
            tlo, thi = self.train_box[key]
            olo, ohi = self.ood_box[key]
            if tlo < olo or thi > ohi:
                raise ConfigurationError(
                    f"train_box[{key}] [{tlo}, {thi}] not contained in ood_box [{olo}, {ohi}]")
        if set(self.counts) - set(SPLITS):
            raise ConfigurationError(f"unknown split names in counts: {self.counts}")
        for split, n in self.counts.items():
            if n < 0:
                raise ConfigurationError(f"counts[{split}] must be nonnegative")
        if self.n_objects < 1 or self.n_frames < 2:
            raise ConfigurationError("need n_objects >= 1 and n_frames >= 2")

    def to_dict(self) -> dict:
        return {
            "train_box": {k: list(v) for k, v in self.train_box.items()},
            "ood_box": {k: list(v) for k, v in self.ood_box.items()},
            "counts": dict(self.counts),
            "n_objects": self.n_objects,
            "n_frames": self.n_frames,
        }

    @staticmethod
    def from_dict(d: dict) -> "SplitSpec":
        spec = SplitSpec(
            train_box={k: tuple(v) for k, v in d["train_box"].items()},
            ood_box={k: tuple(v) for k, v in d["ood_box"].items()},
            counts={s: int(n) for s, n in d.get("counts", {}).items()},
            n_objects=int(d.get("n_objects", 10)),
            n_frames=int(d.get("n_frames", 60)),
        )
        for s in SPLITS:
            spec.counts.setdefault(s, 0)
        spec.validate()
        return spec

    @staticmethod
    def from_json(path) -> "SplitSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return SplitSpec.from_dict(json.load(fh))


def default_split_spec(system: str, n_objects: int = 10, n_frames: int = 60,
                       counts: dict | None = None) -> SplitSpec:
    """Standard parameter boxes for the springs and charged systems."""
    if system == "springs":
        gamma_train, gamma_ood = (0.09, 0.11), (0.08, 0.12)
    elif system == "charged":
        gamma_train, gamma_ood = (0.9, 1.1), (0.8, 1.2)
    else:
        raise ConfigurationError(f"unknown system {system!r}")
    spec = SplitSpec(
        train_box={"alpha": (4.9, 5.1), "beta": (0.49, 0.51),
                   "gamma": gamma_train, "delta": (0.49, 0.51)},
        ood_box={"alpha": (4.8, 5.2), "beta": (0.48, 0.52),
                 "gamma": gamma_ood, "delta": (0.48, 0.52)},
        counts=dict(counts) if counts else
               {"train": 1000, "val": 200, "test_id": 200, "test_ood": 200},
        n_objects=n_objects,
        n_frames=n_frames,
    )
    for s in SPLITS:
        spec.counts.setdefault(s, 0)
    spec.validate()
    return spec


def in_box(values: np.ndarray, box: Box) -> bool:
    return all(box[k][0] <= v <= box[k][1] for k, v in zip(PARAM_KEYS, values))


def sample_params(split: str, spec: SplitSpec, rng: np.random.Generator) -> SystemParams:
    """Draw system parameters for one sample.

    train/val/test_id draw uniformly inside the train box.  test_ood draws
    uniformly in the OOD box, rejection-resampled until at least one
    coordinate falls outside the train box.
    """
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split {split!r}")
    spec.validate()
    if split != "test_ood":
        vals = [rng.uniform(*spec.train_box[k]) for k in PARAM_KEYS]
        return SystemParams(vals[0], vals[1], vals[2], vals[3])
    for _ in range(_MAX_OOD_TRIES):
        vals = [rng.uniform(*spec.ood_box[k]) for k in PARAM_KEYS]
        if not in_box(np.array(vals), spec.train_box):
            return SystemParams(vals[0], vals[1], vals[2], vals[3])
    raise ConfigurationError(
        "OOD rejection sampling failed after 10000 draws; "
        "the OOD box leaves no room outside the train box")

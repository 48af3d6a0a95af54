"""Dataset construction and on-disk format.

One JSONL file per split plus a manifest.  Every sample derives its own RNG
stream from (seed, split index, sample index), so generation is
reproducible byte-for-byte and embarrassingly parallel across samples.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from .params import SPLITS, SplitSpec, SystemParams, sample_params
from .simulate import TrajectorySample, simulate_charged, simulate_springs

FORMAT_VERSION = 1
SYSTEMS = ("springs", "charged")


def _make_sample(system: str, spec: SplitSpec, seed: int, split: str,
                 split_idx: int, index: int) -> TrajectorySample:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(split_idx, index))
    rng = np.random.default_rng(ss)
    params = sample_params(split, spec, rng)
    sample_id = f"{system}-{split}-{index:05d}"
    if system == "springs":
        return simulate_springs(params, spec.n_objects, spec.n_frames, rng,
                                sample_id=sample_id, split=split)
    return simulate_charged(params, spec.n_objects, spec.n_frames, rng,
                            sample_id=sample_id, split=split)


def sample_to_record(sample: TrajectorySample) -> dict:
    return {
        "id": sample.sample_id,
        "split": sample.split,
        "params": sample.params.as_dict(),
        "n_objects": sample.n_objects,
        "n_frames": sample.n_frames,
        "positions": sample.positions.tolist(),
        "velocities": sample.velocities.tolist(),
        "edges": sample.edges.tolist(),
    }


def record_to_sample(record: dict) -> TrajectorySample:
    sample = TrajectorySample(
        sample_id=record["id"],
        split=record["split"],
        params=SystemParams.from_dict(record["params"]),
        n_objects=int(record["n_objects"]),
        n_frames=int(record["n_frames"]),
        positions=np.asarray(record["positions"], dtype=np.float64),
        velocities=np.asarray(record["velocities"], dtype=np.float64),
        edges=np.asarray(record["edges"], dtype=np.float64),
    )
    sample.validate()
    return sample


def _record_line(args) -> str:
    system, spec_dict, seed, split, split_idx, index = args
    spec = SplitSpec.from_dict(spec_dict)
    sample = _make_sample(system, spec, seed, split, split_idx, index)
    return json.dumps(sample_to_record(sample), separators=(",", ":"))


def build_dataset(spec: SplitSpec, system: str, out_dir, seed: int,
                  force: bool = False, workers: int = 1) -> dict:
    """Write one JSONL file per split plus manifest.json; returns the manifest."""
    if system not in SYSTEMS:
        raise ConfigurationError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {split: out / f"{split}.jsonl" for split in SPLITS}
    manifest_path = out / "manifest.json"
    existing = [p for p in list(paths.values()) + [manifest_path] if p.exists()]
    if existing and not force:
        raise ConfigurationError(
            f"output already exists (pass force=True / --force): {existing[0]}")

    tasks = []
    for split_idx, split in enumerate(SPLITS):
        for index in range(spec.counts.get(split, 0)):
            tasks.append((system, spec.to_dict(), seed, split, split_idx, index))

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            lines = list(pool.map(_record_line, tasks, chunksize=16))
    else:
        lines = [_record_line(t) for t in tasks]

    cursor = 0
    for split in SPLITS:
        count = spec.counts.get(split, 0)
        with open(paths[split], "w", encoding="utf-8", newline="\n") as fh:
            for line in lines[cursor:cursor + count]:
                fh.write(line)
                fh.write("\n")
        cursor += count

    manifest = {
        "system": system,
        "seed": int(seed),
        "spec": spec.to_dict(),
        "counts": {s: spec.counts.get(s, 0) for s in SPLITS},
        "format_version": FORMAT_VERSION,
    }
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise ConfigurationError(f"no manifest.json under {data_dir}")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_split(data_dir, split: str) -> list[TrajectorySample]:
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split {split!r}")
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise ConfigurationError(f"missing split file {path}")
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(record_to_sample(json.loads(line)))
    return samples


def load_dataset(data_dir) -> dict[str, list[TrajectorySample]]:
    return {split: load_split(data_dir, split) for split in SPLITS}

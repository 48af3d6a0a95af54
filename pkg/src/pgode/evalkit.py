"""Evaluation: error reports, ablation sweeps, theory harnesses, plots.

The theory harnesses exercise two claims numerically: (1) under a Lipschitz
ordering between a prototype bank and a single shared network, perturbation
energy of the mixture system grows with smaller mean and variance; (2) the
gated field is regular enough that fixed-step solutions converge to a
single limit at the solver's order as steps shrink.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .diffcore import Tape
from .errors import ConfigurationError
from .model import PrototypeGraphODE
from .objectives import VARIANT_FLAGS
from .odecore import Prototype, prototype_field, rk4_integrate, single_prototype_field
from .simkit import TrajectorySample, load_split
from .trainer import TrainConfig, load_model, train

VARIABLE_GROUPS = {
    "q": (0, 1), "v": (2, 3),
    "q_x": (0,), "q_y": (1,), "v_x": (2,), "v_y": (3,),
}

# reports follow the x1e-2 display convention of the reference tables
MSE_SCALE_NOTE = "multiply by 1e2 to read in the x1e-2 convention"


def mse_by_variable(preds: np.ndarray, truth: np.ndarray) -> dict[str, float]:
    """Per-variable-group mean squared error over matching (..., 4) arrays."""
    if preds.shape != truth.shape:
        raise ConfigurationError(f"shape mismatch: {preds.shape} vs {truth.shape}")
    err = (preds - truth) ** 2
    return {name: float(err[..., list(dims)].mean())
            for name, dims in VARIABLE_GROUPS.items()}


@dataclass
class MseReport:
    values: dict            # split -> str(length) -> variable -> float
    condition_length: int
    scale_note: str = MSE_SCALE_NOTE

    def as_dict(self) -> dict:
        return {"condition_length": self.condition_length,
                "scale_note": self.scale_note, "values": self.values}


def mse_report(model: PrototypeGraphODE, data_dir, cond: int,
               lengths: list[int], splits: list[str],
               batch_size: int = 64) -> MseReport:
    values: dict = {}
    for split in splits:
        samples = load_split(data_dir, split)
        if not samples:
            raise ConfigurationError(f"split {split!r} is empty")
        values[split] = {}
        for length in lengths:
            preds = model.predict(samples, cond, length, batch_size=batch_size)
            truth = np.stack([s.features()[:, cond:cond + length] for s in samples])
            values[split][str(length)] = mse_by_variable(preds, truth)
    return MseReport(values=values, condition_length=cond)


def run_ablations(base_cfg: TrainConfig, variants: list[str], n_seeds: int,
                  out_dir, lengths: list[int] | None = None,
                  splits: tuple[str, ...] = ("test_id", "test_ood"),
                  log=None) -> dict:
    """Train each variant with `n_seeds` seeds and aggregate test MSE.

    Returns {variant: {split: {length: {variable: {mean, std}}}}} plus the
    per-run raw values under "runs".
    """
    if n_seeds < 3:
        raise ConfigurationError("ablation comparisons need at least 3 seeds")
    unknown = [v for v in variants if v not in VARIANT_FLAGS]
    if unknown:
        raise ConfigurationError(
            f"unknown variants {unknown}; choose from {sorted(VARIANT_FLAGS)}")
    lengths = lengths or [base_cfg.prediction_length]
    out_dir = Path(out_dir)
    report: dict = {"runs": {}, "aggregate": {}}
    for variant in variants:
        per_run = []
        for i in range(n_seeds):
            cfg = replace(base_cfg, flags=VARIANT_FLAGS[variant],
                          seed=base_cfg.seed + i,
                          out_dir=str(out_dir / variant / f"seed{base_cfg.seed + i}"))
            if log:
                log(f"ablation {variant} seed {cfg.seed}")
            result = train(cfg, log=log)
            model, _, _ = load_model(result.best_path)
            rep = mse_report(model, cfg.data_dir, cfg.condition_length,
                             lengths, list(splits), batch_size=cfg.eval_batch)
            per_run.append(rep.values)
        report["runs"][variant] = per_run
        agg: dict = {}
        for split in splits:
            agg[split] = {}
            for length in lengths:
                agg[split][str(length)] = {}
                for var in VARIABLE_GROUPS:
                    vals = [r[split][str(length)][var] for r in per_run]
                    agg[split][str(length)][var] = {
                        "mean": float(np.mean(vals)), "std": float(np.std(vals))}
        report["aggregate"][variant] = agg
    return report


# --------------------------------------------------------------------------
# perturbation-growth harness

@dataclass
class TheoryConfig:
    epsilon: float = 1e-3
    seeds: int = 20
    horizon: float = 1.0
    k: int = 3
    n_objects: int = 5
    d: int = 16
    proto_lipschitz: float = 1.0
    single_lipschitz: float = 2.0
    lipschitz_jitter: float = 0.05
    substeps: int = 16
    n_record: int = 10

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.proto_lipschitz <= 0 or self.single_lipschitz <= 0:
            raise ConfigurationError("Lipschitz scale targets must be positive")
        if self.k < 1 or self.seeds < 1:
            raise ConfigurationError("need k >= 1 and seeds >= 1")


def _scaled_matrix(rng: np.random.Generator, out_dim: int, in_dim: int,
                   spectral_norm: float) -> np.ndarray:
    w = rng.normal(size=(out_dim, in_dim))
    return w * (spectral_norm / np.linalg.svd(w, compute_uv=False)[0])


def _random_prototype(tape: Tape, rng, d: int, lipschitz: float) -> tuple[Prototype, float]:
    """tanh relation/aggregation pair with an exact Lipschitz product."""
    half = np.sqrt(lipschitz)
    rel = _scaled_matrix(rng, d, 2 * d, half)
    agg = _scaled_matrix(rng, d, d, half)
    proto = Prototype(tape.constant(rel), tape.constant(np.zeros(d)),
                      tape.constant(agg), tape.constant(np.zeros(d)))
    return proto, half * half


@dataclass
class LyapunovReport:
    premise_met: bool
    verdict: bool | None
    mean_multi: float
    mean_single: float
    var_multi: float
    var_single: float
    lipschitz_products: dict
    times: list
    v_multi: list           # per seed, V(t) series
    v_single: list
    epsilon: float

    def as_dict(self) -> dict:
        return {
            "premise_met": self.premise_met, "verdict": self.verdict,
            "mean_multi": self.mean_multi, "mean_single": self.mean_single,
            "var_multi": self.var_multi, "var_single": self.var_single,
            "lipschitz_products": self.lipschitz_products,
            "times": self.times, "v_multi": self.v_multi,
            "v_single": self.v_single, "epsilon": self.epsilon,
        }


def lyapunov_harness(cfg: TheoryConfig, rng: np.random.Generator) -> LyapunovReport:
    """Compare perturbation-energy growth of mixture vs single-network fields.

    Per seed: draw banks with prescribed Lipschitz products (the single
    network's product is scaled above the prototypes'), random simplex
    gates, a start state and a perturbation of norm epsilon; integrate both
    systems from both starts and record V(t) = ||e(t)||^2 / 2.  The decay
    term is omitted so growth reflects the networks alone.
    """
    cfg.validate()
    edges = np.ones((cfg.n_objects, cfg.n_objects)) - np.eye(cfg.n_objects)
    times = [cfg.horizon * i / cfg.n_record for i in range(cfg.n_record + 1)]
    products: dict = {f"proto{k}": [] for k in range(cfg.k)}
    products["single"] = []
    v_multi_all, v_single_all = [], []
    for _ in range(cfg.seeds):
        tape = Tape()
        jit = 1.0 + cfg.lipschitz_jitter * rng.uniform(-1.0, 1.0, size=cfg.k + 1)
        bank = []
        for k in range(cfg.k):
            proto, prod = _random_prototype(tape, rng, cfg.d,
                                            cfg.proto_lipschitz * jit[k])
            bank.append(proto)
            products[f"proto{k}"].append(prod)
        single, prod_single = _random_prototype(tape, rng, cfg.d,
                                                cfg.single_lipschitz * jit[-1])
        products["single"].append(prod_single)
        gates = tape.constant(rng.dirichlet(np.ones(cfg.k), size=cfg.n_objects))
        z0 = rng.normal(size=(cfg.n_objects, cfg.d))
        delta = rng.normal(size=(cfg.n_objects, cfg.d))
        delta *= cfg.epsilon / np.linalg.norm(delta)

        def multi(z):
            return prototype_field(z, edges, bank, gates, recovery=False)

        def solo(z):
            return single_prototype_field(z, edges, single, recovery=False)

        v_multi, v_single = [], []
        for fld, out in ((multi, v_multi), (solo, v_single)):
            base = rk4_integrate(tape.constant(z0), times, fld, substeps=cfg.substeps)
            pert = rk4_integrate(tape.constant(z0 + delta), times, fld,
                                 substeps=cfg.substeps)
            for zb, zp in zip(base, pert):
                err = zp.data - zb.data
                out.append(float(0.5 * np.sum(err * err)))
        v_multi_all.append(v_multi)
        v_single_all.append(v_single)

    premise = all(
        np.mean(products[f"proto{k}"]) < np.mean(products["single"]) and
        np.var(products[f"proto{k}"]) < np.var(products["single"])
        for k in range(cfg.k))
    end_multi = np.array([v[-1] for v in v_multi_all])
    end_single = np.array([v[-1] for v in v_single_all])
    verdict = None
    if premise:
        verdict = bool(end_multi.mean() <= end_single.mean()
                       and end_multi.var() <= end_single.var())
    return LyapunovReport(
        premise_met=premise, verdict=verdict,
        mean_multi=float(end_multi.mean()), mean_single=float(end_single.mean()),
        var_multi=float(end_multi.var()), var_single=float(end_single.var()),
        lipschitz_products={k: list(map(float, v)) for k, v in products.items()},
        times=times, v_multi=v_multi_all, v_single=v_single_all,
        epsilon=cfg.epsilon)


# --------------------------------------------------------------------------
# step-halving convergence harness

@dataclass
class UniquenessReport:
    passed: bool
    substeps: list
    differences: list
    orders: list

    def as_dict(self) -> dict:
        return {"passed": self.passed, "substeps": self.substeps,
                "differences": self.differences, "orders": self.orders}


def uniqueness_check(fld, z0: np.ndarray, horizon: float = 1.0,
                     substeps_list: tuple[int, ...] = (1, 2, 4, 8, 16),
                     min_order: float = 3.5) -> UniquenessReport:
    """Integrate with successively halved steps and measure contraction.

    PASS when the max-norm differences between consecutive refinements
    shrink monotonically at the solver's order (>= min_order on average),
    evidence that the trajectories converge to a single solution.
    """
    tape = Tape()
    finals = []
    for s in substeps_list:
        traj = rk4_integrate(tape.constant(z0), [0.0, horizon], fld, substeps=s)
        finals.append(traj[-1].data)
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(finals, finals[1:])]
    if all(d < 1e-15 for d in diffs):
        return UniquenessReport(True, list(substeps_list), diffs, [])
    orders = []
    for d0, d1 in zip(diffs, diffs[1:]):
        if d1 <= 0:
            orders.append(float("inf"))
        else:
            orders.append(float(np.log2(d0 / d1)))
    monotone = all(d1 < d0 for d0, d1 in zip(diffs, diffs[1:]))
    passed = monotone and float(np.mean([o for o in orders if np.isfinite(o)] or [0])) >= min_order
    return UniquenessReport(passed, list(substeps_list), diffs, orders)


# --------------------------------------------------------------------------
# trajectory plots

_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def emit_plots(sample: TrajectorySample, predictions: np.ndarray, t_obs: int,
               out_svg, out_csv, size: int = 640) -> None:
    """Per-object path plot plus a flat CSV.

    `predictions` holds (N, pred, 4) states for the frames right after the
    observed window.  Observed paths are drawn semi-transparent, predicted
    paths solid.  The CSV carries one row per object and frame; within the
    observed window the prediction columns repeat the ground truth.
    """
    n, pred = predictions.shape[0], predictions.shape[1]
    if n != sample.n_objects:
        raise ConfigurationError("predictions do not match the sample's objects")
    total = t_obs + pred
    if total > sample.n_frames:
        raise ConfigurationError("prediction window exceeds the sample length")
    truth = sample.features()[:, :total]                  # (N, total, 4)
    merged = truth.copy()
    merged[:, t_obs:] = predictions

    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["object", "frame", "qx", "qy", "vx", "vy",
                         "pred_qx", "pred_qy", "pred_vx", "pred_vy"])
        for i in range(n):
            for t in range(total):
                writer.writerow([i, t] + [repr(float(v)) for v in truth[i, t]]
                                + [repr(float(v)) for v in merged[i, t]])

    pts = np.concatenate([truth[..., :2].reshape(-1, 2),
                          merged[..., :2].reshape(-1, 2)])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin = 0.05 * span

    def to_px(xy):
        rel = (xy - (lo - margin)) / (span + 2 * margin)
        return rel[0] * size, (1.0 - rel[1]) * size

    def polyline(points, color, opacity, width=2.0):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        return (f'<polyline points="{coords}" fill="none" stroke="{color}" '
                f'stroke-width="{width}" stroke-opacity="{opacity}" />')

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
             f'width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white" />']
    for i in range(n):
        color = _PALETTE[i % len(_PALETTE)]
        observed = [to_px(truth[i, t, :2]) for t in range(t_obs)]
        predicted = [to_px(merged[i, t, :2]) for t in range(t_obs - 1, total)]
        lines.append(polyline(observed, color, 0.35))
        lines.append(polyline(predicted, color, 1.0))
        cx, cy = predicted[-1]
        lines.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{color}" />')
    lines.append("</svg>")
    with open(out_svg, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def write_report_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")

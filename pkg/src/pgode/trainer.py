"""End-to-end optimization loop.

Per batch: encode contexts, sample initial latents, integrate the gated
prototype ODE over the prediction window, decode, and form the joint
objective.  One backward pass then feeds two Adam updates with disjoint
parameter sets: the adversarial critic ascends the disentanglement value
while everything else descends the total loss.  Checkpoints capture
parameters, optimizer moments and the RNG stream, so a reloaded run
continues bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import backward, save_tensors, load_tensors
from .errors import ConfigurationError, NumericError
from .model import (
    Batch,
    ModelConfig,
    PrototypeGraphODE,
    make_batch,
    xi_statistics,
)
from .objectives import AblationFlags
from .simkit import TrajectorySample, load_split


@dataclass
class TrainConfig:
    data_dir: str = ""
    out_dir: str = ""
    condition_length: int = 12
    prediction_length: int = 12
    batch_size: int = 32
    epochs: int = 30
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    seed: int = 0
    k: int = 3
    d: int = 64
    enc_layers: int = 2
    substeps: int = 1
    frame_dt: float = 0.1
    decoder_hidden: int = 64
    gate_hidden: int = 64
    critic_hidden: int = 64
    sigma2: float = 1.0
    kl_weight: float = 1.0
    eval_batch: int = 64
    flags: AblationFlags = field(default_factory=AblationFlags)

    def validate(self) -> None:
        self.flags.validate()
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.prediction_length < 1:
            raise ConfigurationError("prediction_length must be >= 1")
        if self.condition_length < 2:
            raise ConfigurationError("condition_length must be >= 2")
        if self.flags.use_system_ctx and self.batch_size < 2:
            raise ConfigurationError(
                "MI objectives need batches of >= 2 systems for negative pairs")

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, enc_layers=self.enc_layers, k=self.k,
                           decoder_hidden=self.decoder_hidden,
                           gate_hidden=self.gate_hidden,
                           critic_hidden=self.critic_hidden,
                           substeps=self.substeps, frame_dt=self.frame_dt,
                           sigma2=self.sigma2, kl_weight=self.kl_weight,
                           flags=self.flags)

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "flags"}
        d["flags"] = self.flags.as_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        flags = AblationFlags.from_dict(d.pop("flags")) if "flags" in d else AblationFlags()
        cfg = TrainConfig(flags=flags, **d)
        cfg.validate()
        return cfg


def partition_sequence(sample: TrajectorySample, cfg: TrainConfig
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint contiguous windows: observed frames, then scored frames."""
    cond, pred = cfg.condition_length, cfg.prediction_length
    if pred < 1:
        raise ConfigurationError("prediction window must contain at least one frame")
    if cond + pred > sample.n_frames:
        raise ConfigurationError(
            f"sample {sample.sample_id}: condition {cond} + prediction {pred} "
            f"exceeds {sample.n_frames} frames")
    return np.arange(cond), np.arange(cond, cond + pred)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update; returns (param, m, v)."""
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class AdamState:
    """Adam moments over a named subset of the parameter store."""

    def __init__(self, names: list[str], store):
        self.names = list(names)
        self.m = {n: np.zeros_like(store[n]) for n in self.names}
        self.v = {n: np.zeros_like(store[n]) for n in self.names}
        self.t = 0

    def step(self, store, grads: dict, lr: float, betas, eps: float,
             clip: float | None = None, ascend: bool = False) -> float:
        """Apply one update, descending by default (adam_step subtracts);
        `ascend` negates the gradient first.  Returns the pre-clip global
        gradient norm over this state's parameters."""
        self.t += 1
        sq = 0.0
        for n in self.names:
            g = grads[n]
            sq += float((g * g).sum())
        norm = float(np.sqrt(sq))
        scale = -1.0 if ascend else 1.0
        if clip is not None and norm > clip:
            scale *= clip / (norm + 1e-12)
        for n in self.names:
            new_p, self.m[n], self.v[n] = adam_step(
                store[n], grads[n] * scale, self.m[n], self.v[n], self.t, lr, betas, eps)
            store[n] = new_p
        return norm


@dataclass
class TrainState:
    cfg: TrainConfig
    model: PrototypeGraphODE
    adam_model: AdamState
    adam_critic: AdamState | None
    rng: np.random.Generator
    epoch: int = 0


def init_state(cfg: TrainConfig, train_samples: list[TrajectorySample]) -> TrainState:
    cfg.validate()
    if not train_samples:
        raise ConfigurationError("training split is empty")
    partition_sequence(train_samples[0], cfg)
    init_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0,)))
    model = PrototypeGraphODE(cfg.model_config(), init_rng)
    model.xi_mean, model.xi_std = xi_statistics(train_samples)
    adam_model = AdamState(model.model_param_names(), model.store)
    critic_names = model.critic_param_names()
    adam_critic = AdamState(critic_names, model.store) if critic_names else None
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))
    return TrainState(cfg=cfg, model=model, adam_model=adam_model,
                      adam_critic=adam_critic, rng=rng)


def train_step(state: TrainState, batch: Batch) -> dict:
    """One joint update; the adversarial critic ascends, the rest descends."""
    from .diffcore import Tape

    cfg = state.cfg
    tape = Tape()
    bundle = state.model.forward_losses(tape, batch, state.rng)
    if not np.isfinite(bundle.total.data):
        raise NumericError("training loss became non-finite")
    grads = backward(tape, bundle.total)
    betas = (cfg.beta1, cfg.beta2)
    parts = dict(bundle.parts)
    parts["grad_norm"] = state.adam_model.step(
        state.model.store, grads, cfg.lr, betas, cfg.adam_eps,
        clip=cfg.grad_clip)
    if state.adam_critic is not None:
        parts["critic_grad_norm"] = state.adam_critic.step(
            state.model.store, grads, cfg.lr, betas, cfg.adam_eps,
            clip=cfg.grad_clip, ascend=True)
    return parts


def train_epoch(state: TrainState, train_samples: list[TrajectorySample]) -> dict:
    """Shuffle, batch, update; returns mean loss components for the epoch."""
    cfg = state.cfg
    if not train_samples:
        raise ConfigurationError("training split is empty")
    order = state.rng.permutation(len(train_samples))
    sums: dict[str, float] = {}
    n_batches = 0
    for lo in range(0, len(order), cfg.batch_size):
        idx = order[lo:lo + cfg.batch_size]
        if len(idx) < 2 and cfg.flags.use_system_ctx:
            continue  # a singleton batch has no negative MI pairs
        batch = make_batch([train_samples[i] for i in idx],
                           cfg.condition_length, cfg.prediction_length,
                           state.model.xi_mean, state.model.xi_std)
        parts = train_step(state, batch)
        for k_, v_ in parts.items():
            sums[k_] = sums.get(k_, 0.0) + v_
        n_batches += 1
    state.epoch += 1
    metrics = {k_: v_ / max(n_batches, 1) for k_, v_ in sums.items()}
    metrics["n_batches"] = n_batches
    return metrics


def position_mse(model: PrototypeGraphODE, samples: list[TrajectorySample],
                 cond: int, pred: int, batch_size: int = 64) -> float:
    """Mean squared error on positions over the prediction window."""
    if not samples:
        raise ConfigurationError("empty evaluation split")
    preds = model.predict(samples, cond, pred, batch_size=batch_size)
    truth = np.stack([s.features()[:, cond:cond + pred] for s in samples])
    return float(((preds[..., :2] - truth[..., :2]) ** 2).mean())


# --------------------------------------------------------------------------
# checkpointing

def save_state(state: TrainState, path, extra_meta: dict | None = None) -> None:
    model = state.model
    tensors = dict(model.store.as_dict())
    tensors["stats.xi_mean"] = model.xi_mean
    tensors["stats.xi_std"] = model.xi_std
    for n in state.adam_model.names:
        tensors[f"adam_model.m.{n}"] = state.adam_model.m[n]
        tensors[f"adam_model.v.{n}"] = state.adam_model.v[n]
    if state.adam_critic is not None:
        for n in state.adam_critic.names:
            tensors[f"adam_critic.m.{n}"] = state.adam_critic.m[n]
            tensors[f"adam_critic.v.{n}"] = state.adam_critic.v[n]
    meta = {
        "train_config": state.cfg.as_dict(),
        "epoch": state.epoch,
        "adam_model_t": state.adam_model.t,
        "adam_critic_t": state.adam_critic.t if state.adam_critic else 0,
        "rng_state": _encode_rng(state.rng),
    }
    if extra_meta:
        meta.update(extra_meta)
    save_tensors(path, tensors, meta=meta)


def load_state(path) -> TrainState:
    tensors, meta = load_tensors(path)
    cfg = TrainConfig.from_dict(meta["train_config"])
    init_rng = np.random.default_rng(0)  # shapes only; weights overwritten below
    model = PrototypeGraphODE(cfg.model_config(), init_rng)
    for name in model.store.names():
        model.store[name] = tensors[name]
    model.xi_mean = tensors["stats.xi_mean"]
    model.xi_std = tensors["stats.xi_std"]
    adam_model = AdamState(model.model_param_names(), model.store)
    adam_model.t = int(meta["adam_model_t"])
    for n in adam_model.names:
        adam_model.m[n] = tensors[f"adam_model.m.{n}"]
        adam_model.v[n] = tensors[f"adam_model.v.{n}"]
    critic_names = model.critic_param_names()
    adam_critic = None
    if critic_names:
        adam_critic = AdamState(critic_names, model.store)
        adam_critic.t = int(meta["adam_critic_t"])
        for n in critic_names:
            adam_critic.m[n] = tensors[f"adam_critic.m.{n}"]
            adam_critic.v[n] = tensors[f"adam_critic.v.{n}"]
    rng = _decode_rng(meta["rng_state"])
    return TrainState(cfg=cfg, model=model, adam_model=adam_model,
                      adam_critic=adam_critic, rng=rng, epoch=int(meta["epoch"]))


def load_model(path) -> tuple[PrototypeGraphODE, TrainConfig, dict]:
    state = load_state(path)
    _, meta = load_tensors(path)
    return state.model, state.cfg, meta


def _encode_rng(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state))


def _decode_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


# --------------------------------------------------------------------------
# full run

@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_val_mse: float
    best_path: str
    last_path: str


def train(cfg: TrainConfig, log=None) -> TrainResult:
    """Train to completion with best-validation checkpointing."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_samples = load_split(cfg.data_dir, "train")
    val_samples = load_split(cfg.data_dir, "val")
    state = init_state(cfg, train_samples)
    best_path = out / "best.ckpt"
    last_path = out / "last.ckpt"
    history: list[dict] = []
    best_val = np.inf
    best_epoch = -1
    for epoch in range(cfg.epochs):
        metrics = train_epoch(state, train_samples)
        val_mse = position_mse(state.model, val_samples, cfg.condition_length,
                               cfg.prediction_length, batch_size=cfg.eval_batch)
        metrics["epoch"] = epoch + 1
        metrics["val_position_mse"] = val_mse
        history.append(metrics)
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs}: "
                f"loss {metrics.get('total', float('nan')):.4f} "
                f"val q-MSE {val_mse:.6f}")
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch + 1
            save_state(state, best_path, extra_meta={"best_val_mse": best_val,
                                                     "best_epoch": best_epoch})
    save_state(state, last_path, extra_meta={"best_val_mse": best_val,
                                             "best_epoch": best_epoch})
    metrics_path = out / "metrics.json"
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"history": history, "best_epoch": best_epoch,
                   "best_val_mse": best_val, "config": cfg.as_dict()},
                  fh, sort_keys=True, indent=2)
        fh.write("\n")
    return TrainResult(history=history, best_epoch=best_epoch,
                       best_val_mse=float(best_val),
                       best_path=str(best_path), last_path=str(last_path))

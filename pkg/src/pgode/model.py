"""Full model assembly: parameters, batching, forward passes.

Ties the context encoders, the gated prototype field, the decoder and the
critics together behind a flat named-parameter store, so one tape per
training step can differentiate the whole pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .diffcore import Tape, Tensor
from .encoder import (
    AttentionWeights,
    EncoderTensors,
    PosteriorHeads,
    TemporalGraph,
    build_temporal_graph,
    encode_object_contexts,
    merge_graphs,
    posterior_params,
    system_context,
)
from .errors import ConfigurationError
from .nn import glorot
from .objectives import (
    AblationFlags,
    CriticTensors,
    DecoderTensors,
    LossConfig,
    decode,
    disentangle_mi_loss,
    elbo_loss,
    gaussian_kl,
    reparameterize,
    system_mi_loss,
    total_loss,
)
from .odecore import (
    EdgeIndex,
    GatingTensors,
    Prototype,
    gate_weights,
    prototype_field,
    rk4_integrate,
    single_prototype_field,
)
from .simkit import TrajectorySample


class ParamStore:
    """Ordered name -> float64 array mapping with tape binding."""

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, array) -> None:
        if name in self._arrays:
            raise ConfigurationError(f"parameter {name!r} already exists")
        self._arrays[name] = np.asarray(array, dtype=np.float64)

    def names(self) -> list[str]:
        return list(self._arrays)

    def __contains__(self, name):
        return name in self._arrays

    def __getitem__(self, name) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name, value) -> None:
        if name not in self._arrays:
            raise ConfigurationError(f"unknown parameter {name!r}")
        self._arrays[name] = np.asarray(value, dtype=np.float64)

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self._arrays)

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        return {name: tape.param(name, arr) for name, arr in self._arrays.items()}


@dataclass
class ModelConfig:
    d: int = 64
    enc_layers: int = 2
    k: int = 3
    obs_dim: int = 4
    xi_dim: int = 4
    decoder_hidden: int = 64
    gate_hidden: int = 64
    critic_hidden: int = 64
    substeps: int = 1
    frame_dt: float = 0.1    # latent clock per recorded frame, matches the simulators
    sigma2: float = 1.0
    kl_weight: float = 1.0
    flags: AblationFlags = field(default_factory=AblationFlags)

    def validate(self) -> None:
        self.flags.validate()
        if self.d % 2 != 0:
            raise ConfigurationError("hidden width must be even for the temporal embedding")
        if self.k < 1:
            raise ConfigurationError("need at least one prototype")

    def effective_k(self) -> int:
        return self.k if self.flags.multi_prototype else 1

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "flags"}
        d["flags"] = self.flags.as_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        flags = AblationFlags.from_dict(d.pop("flags"))
        return ModelConfig(flags=flags, **d)


@dataclass
class Batch:
    """Collated training batch over systems with identical N and window."""

    graph: TemporalGraph
    edge_index: EdgeIndex
    xi: np.ndarray               # (B, xi_dim), standardized
    target: np.ndarray           # (B*N, pred, obs_dim)
    n_systems: int
    n_objects: int               # per system


def make_batch(samples: list[TrajectorySample], cond: int, pred: int,
               xi_mean: np.ndarray, xi_std: np.ndarray) -> Batch:
    if not samples:
        raise ConfigurationError("make_batch: empty batch")
    n = samples[0].n_objects
    graphs = []
    edges_recv, edges_send = [], []
    targets = []
    xi = []
    for b, s in enumerate(samples):
        if s.n_objects != n:
            raise ConfigurationError("make_batch: object counts differ within a batch")
        if cond + pred > s.n_frames:
            raise ConfigurationError(
                f"sample {s.sample_id}: {s.n_frames} frames cannot cover "
                f"condition {cond} + prediction {pred}")
        graphs.append(build_temporal_graph(s, cond))
        r, c = np.nonzero(s.edges)
        edges_recv.append(r + b * n)
        edges_send.append(c + b * n)
        targets.append(s.features()[:, cond:cond + pred])
        xi.append(s.params.as_vector())
    graph = merge_graphs(graphs)
    edge_index = EdgeIndex(np.concatenate(edges_recv).astype(np.int64),
                           np.concatenate(edges_send).astype(np.int64),
                           len(samples) * n)
    xi_arr = (np.stack(xi) - xi_mean) / xi_std
    return Batch(graph=graph, edge_index=edge_index, xi=xi_arr,
                 target=np.concatenate(targets, axis=0),
                 n_systems=len(samples), n_objects=n)


def xi_statistics(samples: list[TrajectorySample]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and (floored) std of the generative parameters over a split."""
    mat = np.stack([s.params.as_vector() for s in samples])
    return mat.mean(axis=0), np.maximum(mat.std(axis=0), 1e-8)


@dataclass
class LossBundle:
    total: Tensor
    mean: Tensor
    var: Tensor
    gates: Tensor | None
    parts: dict


class PrototypeGraphODE:
    """Encoder + gated prototype ODE + decoder + critics, as one store."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore()
        self.xi_mean = np.zeros(cfg.xi_dim)
        self.xi_std = np.ones(cfg.xi_dim)
        self._init_params(rng)

    # ---- parameter construction -----------------------------------------

    # The message-passing update is unnormalized (masked dot-product scores
    # feed a residual), so node states scale with the cube of the attention
    # operator norms; weight matrices on the encode/rollout/decode path are
    # spectrally capped at bind time so directions keep learning while every
    # stage stays Lipschitz-bounded.  The temporal embedding alone gives the
    # summarized states a norm of sqrt(d/2), hence the damped gains.
    _ATTN_CAP = 0.25
    _SUM_CAP = 1.0
    _EMBED_CAP = 2.0
    _PROTO_CAP = 2.0
    _HEAD_CAP = 2.0
    _DECODER_CAP = 4.0
    _ATTN_GAIN = 0.5
    _SUM_GAIN = 0.25
    _CRITIC_GAIN = 0.3

    def _add_encoder(self, prefix: str, rng) -> None:
        cfg = self.cfg
        self.store.add(f"{prefix}.embed.w", glorot(rng, cfg.d, cfg.obs_dim))
        self.store.add(f"{prefix}.embed.b", np.zeros(cfg.d))
        for i in range(cfg.enc_layers):
            for mat in ("wq", "wk", "wv"):
                self.store.add(f"{prefix}.layer{i}.{mat}",
                               self._ATTN_GAIN * glorot(rng, cfg.d, cfg.d))
        self.store.add(f"{prefix}.sum.w", self._SUM_GAIN * glorot(rng, cfg.d, cfg.d))

    def _init_params(self, rng) -> None:
        cfg = self.cfg
        self._add_encoder("obj_enc", rng)
        if cfg.flags.use_system_ctx:
            self._add_encoder("sys_enc", rng)
        self.store.add("post.mean.w", glorot(rng, cfg.d, cfg.d))
        self.store.add("post.mean.b", np.zeros(cfg.d))
        # zero log-variance head: the posterior opens at the prior
        self.store.add("post.logvar.w", np.zeros((cfg.d, cfg.d)))
        self.store.add("post.logvar.b", np.zeros(cfg.d))
        k = cfg.effective_k()
        if k > 1:
            gate_in = cfg.d * (int(cfg.flags.use_object_ctx) + int(cfg.flags.use_system_ctx))
            self.store.add("gate.hidden.w", glorot(rng, cfg.gate_hidden, gate_in))
            self.store.add("gate.hidden.b", np.zeros(cfg.gate_hidden))
            self.store.add("gate.out.w", glorot(rng, k, cfg.gate_hidden))
            self.store.add("gate.out.b", np.zeros(k))
        for j in range(k):
            self.store.add(f"proto{j}.rel.w", glorot(rng, cfg.d, 2 * cfg.d))
            self.store.add(f"proto{j}.rel.b", np.zeros(cfg.d))
            self.store.add(f"proto{j}.agg.w", glorot(rng, cfg.d, cfg.d))
            self.store.add(f"proto{j}.agg.b", np.zeros(cfg.d))
        if cfg.decoder_hidden > 0:
            self.store.add("dec.hidden.w", glorot(rng, cfg.decoder_hidden, cfg.d))
            self.store.add("dec.hidden.b", np.zeros(cfg.decoder_hidden))
            self.store.add("dec.out.w", glorot(rng, cfg.obs_dim, cfg.decoder_hidden))
        else:
            self.store.add("dec.out.w", glorot(rng, cfg.obs_dim, cfg.d))
        self.store.add("dec.out.b", np.zeros(cfg.obs_dim))
        if cfg.flags.use_system_ctx:
            self._add_critic("critic_sys", cfg.d + cfg.xi_dim, rng)
            if cfg.flags.use_disentangle:
                self._add_critic("critic_dis", 2 * cfg.d, rng)

    def _add_critic(self, prefix: str, in_dim: int, rng) -> None:
        cfg = self.cfg
        self.store.add(f"{prefix}.hidden.w",
                       self._CRITIC_GAIN * glorot(rng, cfg.critic_hidden, in_dim))
        self.store.add(f"{prefix}.hidden.b", np.zeros(cfg.critic_hidden))
        self.store.add(f"{prefix}.out.w",
                       self._CRITIC_GAIN * glorot(rng, 1, cfg.critic_hidden))
        self.store.add(f"{prefix}.out.b", np.zeros(1))

    def critic_param_names(self) -> list[str]:
        """Parameters updated by gradient ascent (the adversarial critic)."""
        return [n for n in self.store.names() if n.startswith("critic_dis.")]

    def model_param_names(self) -> list[str]:
        return [n for n in self.store.names() if not n.startswith("critic_dis.")]

    # ---- bound-tensor views ----------------------------------------------

    def _capped(self, bound, name: str, cap: float):
        """Rescale a bound matrix so its top singular value stays <= cap.

        The scale is a per-step constant (no gradient through it), so Adam
        learns directions while the operator norm stays pinned.
        """
        sigma = float(np.linalg.svd(self.store[name], compute_uv=False)[0])
        if sigma <= cap:
            return bound[name]
        return bound[name] * (cap / sigma)

    def _encoder_tensors(self, bound, prefix) -> EncoderTensors:
        layers = [AttentionWeights(self._capped(bound, f"{prefix}.layer{i}.wq", self._ATTN_CAP),
                                   self._capped(bound, f"{prefix}.layer{i}.wk", self._ATTN_CAP),
                                   self._capped(bound, f"{prefix}.layer{i}.wv", self._ATTN_CAP))
                  for i in range(self.cfg.enc_layers)]
        return EncoderTensors(embed_w=self._capped(bound, f"{prefix}.embed.w", self._EMBED_CAP),
                              embed_b=bound[f"{prefix}.embed.b"],
                              layers=layers,
                              w_sum=self._capped(bound, f"{prefix}.sum.w", self._SUM_CAP))

    def _posterior(self, bound) -> PosteriorHeads:
        return PosteriorHeads(self._capped(bound, "post.mean.w", self._HEAD_CAP),
                              bound["post.mean.b"],
                              self._capped(bound, "post.logvar.w", self._HEAD_CAP),
                              bound["post.logvar.b"])

    def _bank(self, bound) -> list[Prototype]:
        return [Prototype(self._capped(bound, f"proto{j}.rel.w", self._PROTO_CAP),
                          bound[f"proto{j}.rel.b"],
                          self._capped(bound, f"proto{j}.agg.w", self._PROTO_CAP),
                          bound[f"proto{j}.agg.b"])
                for j in range(self.cfg.effective_k())]

    def _gating(self, bound) -> GatingTensors:
        return GatingTensors(bound["gate.hidden.w"], bound["gate.hidden.b"],
                             bound["gate.out.w"], bound["gate.out.b"])

    def _decoder(self, bound) -> DecoderTensors:
        if "dec.hidden.w" in bound:
            return DecoderTensors(self._capped(bound, "dec.hidden.w", self._DECODER_CAP),
                                  bound["dec.hidden.b"],
                                  self._capped(bound, "dec.out.w", self._DECODER_CAP),
                                  bound["dec.out.b"])
        return DecoderTensors(None, None,
                              self._capped(bound, "dec.out.w", self._DECODER_CAP),
                              bound["dec.out.b"])

    def _critic(self, bound, prefix) -> CriticTensors:
        return CriticTensors(bound[f"{prefix}.hidden.w"], bound[f"{prefix}.hidden.b"],
                             bound[f"{prefix}.out.w"], bound[f"{prefix}.out.b"])

    # ---- forward passes ----------------------------------------------------

    def _contexts(self, bound, batch: Batch):
        u = encode_object_contexts(batch.graph, self._encoder_tensors(bound, "obj_enc"))
        g = None
        if self.cfg.flags.use_system_ctx:
            _, g = system_context(batch.graph, self._encoder_tensors(bound, "sys_enc"))
        return u, g

    def _field_and_gates(self, bound, batch: Batch, u, g):
        bank = self._bank(bound)
        if self.cfg.effective_k() == 1:
            return (lambda z: single_prototype_field(z, batch.edge_index, bank[0])), None
        gates = gate_weights(u if self.cfg.flags.use_object_ctx else None,
                             g if self.cfg.flags.use_system_ctx else None,
                             self._gating(bound),
                             obj_system=batch.graph.systems())
        return (lambda z: prototype_field(z, batch.edge_index, bank, gates)), gates

    def rollout_decode(self, bound, batch: Batch, z0: Tensor, pred: int, u, g):
        field, gates = self._field_and_gates(bound, batch, u, g)
        times = self.cfg.frame_dt * np.arange(pred + 1, dtype=np.float64)
        traj = rk4_integrate(z0, times, field, substeps=self.cfg.substeps)
        mu = decode(traj[1:], self._decoder(bound))
        return mu, gates

    def forward_losses(self, tape: Tape, batch: Batch,
                       rng: np.random.Generator) -> LossBundle:
        """Sampled forward pass producing the joint objective.

        The evidence term is averaged over the batch; the MI terms are
        already batch-level quantities.
        """
        cfg = self.cfg
        bound = self.store.bind(tape)
        u, g = self._contexts(bound, batch)
        mean, var = posterior_params(u, self._posterior(bound))
        z0 = reparameterize(mean, var, rng)
        pred = batch.target.shape[1]
        mu, gates = self.rollout_decode(bound, batch, z0, pred, u, g)
        truth = [batch.target[:, t, :] for t in range(pred)]
        l_elbo = elbo_loss(mu, truth, mean, var,
                           LossConfig(cfg.sigma2, cfg.kl_weight)) * (1.0 / batch.n_systems)
        l_sys = l_dis = None
        if cfg.flags.use_system_ctx:
            l_sys = system_mi_loss(g, batch.xi, self._critic(bound, "critic_sys"))
            if cfg.flags.use_disentangle:
                l_dis = disentangle_mi_loss(g, u, batch.graph.systems(),
                                            self._critic(bound, "critic_dis"))
        total = total_loss(l_elbo, l_sys, l_dis, cfg.flags)
        kl_value = float(gaussian_kl(mean, var).data) / batch.n_systems
        parts = {"total": float(total.data), "elbo": float(l_elbo.data),
                 "kl": kl_value,
                 "sys_mi": float(l_sys.data) if l_sys is not None else 0.0,
                 "dis_mi": float(l_dis.data) if l_dis is not None else 0.0}
        return LossBundle(total=total, mean=mean, var=var, gates=gates, parts=parts)

    def predict(self, samples: list[TrajectorySample], cond: int, pred: int,
                batch_size: int = 64) -> np.ndarray:
        """Deterministic rollout from the posterior mean; (B, N, pred, obs)."""
        outs = []
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo:lo + batch_size]
            batch = make_batch(chunk, cond, pred, self.xi_mean, self.xi_std)
            tape = Tape()
            bound = self.store.bind(tape)
            u, g = self._contexts(bound, batch)
            mean, _ = posterior_params(u, self._posterior(bound))
            mu, _ = self.rollout_decode(bound, batch, mean, pred, u, g)
            stacked = np.stack([m.data for m in mu], axis=1)  # (B*N, pred, obs)
            n = batch.n_objects
            outs.append(stacked.reshape(len(chunk), n, pred, -1))
        return np.concatenate(outs, axis=0)

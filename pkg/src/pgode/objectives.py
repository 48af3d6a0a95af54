"""Training objectives: decoder likelihood, KL regularizer, MI critics.

The reconstruction term is a Gaussian negative log-likelihood with fixed
observation variance, summed over objects and predicted frames; the KL term
compares the diagonal posterior over initial latents against a standard
normal.  Two softplus-based critics estimate mutual information: one ties
the system context to the generative parameters (co-minimized with the
model), the other ties it to the object contexts and is trained
adversarially (the critic ascends what the model descends).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import (
    Tensor,
    concat,
    gather_rows,
    log,
    neg,
    relu,
    softplus,
    sqrt,
    sum_,
)
from .errors import ConfigurationError
from .nn import linear


@dataclass
class AblationFlags:
    """Which model components are active."""

    use_object_ctx: bool = True
    use_system_ctx: bool = True
    multi_prototype: bool = True
    use_disentangle: bool = True

    def validate(self) -> None:
        if not (self.use_object_ctx or self.use_system_ctx):
            raise ConfigurationError("at least one context level must stay on")

    def as_dict(self) -> dict:
        return {"use_object_ctx": self.use_object_ctx,
                "use_system_ctx": self.use_system_ctx,
                "multi_prototype": self.multi_prototype,
                "use_disentangle": self.use_disentangle}

    @staticmethod
    def from_dict(d: dict) -> "AblationFlags":
        flags = AblationFlags(**d)
        flags.validate()
        return flags


# named model variants used by the ablation runner
VARIANT_FLAGS = {
    "full": AblationFlags(),
    "no-object-context": AblationFlags(use_object_ctx=False),
    "no-system-context": AblationFlags(use_system_ctx=False),
    "single-prototype": AblationFlags(multi_prototype=False),
    "no-disentangle": AblationFlags(use_disentangle=False),
}


@dataclass
class LossConfig:
    sigma2: float = 1.0
    kl_weight: float = 1.0

    def validate(self) -> None:
        if self.sigma2 <= 0:
            raise ConfigurationError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass
class DecoderTensors:
    """One hidden relu layer then linear; hidden may be absent (pure linear)."""

    hidden_w: Tensor | None
    hidden_b: Tensor | None
    out_w: Tensor
    out_b: Tensor


@dataclass
class CriticTensors:
    """Scalar head: one hidden relu layer plus a linear output."""

    hidden_w: Tensor
    hidden_b: Tensor
    out_w: Tensor
    out_b: Tensor


def decode(z_traj, dec: DecoderTensors):
    """Apply the decoder pointwise: one mean vector per latent row."""
    if isinstance(z_traj, (list, tuple)):
        return [decode(z, dec) for z in z_traj]
    h = z_traj
    if dec.hidden_w is not None:
        h = relu(linear(h, dec.hidden_w, dec.hidden_b))
    return linear(h, dec.out_w, dec.out_b)


def reparameterize(mean: Tensor, var: Tensor, rng: np.random.Generator) -> Tensor:
    """mean + sqrt(var) * eps with a fresh standard-normal draw.

    The noise enters as a constant, so gradients reach mean and var only.
    """
    if np.any(var.data <= 0.0):
        raise ConfigurationError("reparameterize: variance must be strictly positive")
    eps = mean.tape.constant(rng.standard_normal(mean.data.shape))
    return mean + sqrt(var) * eps


def gaussian_kl(mean: Tensor, var: Tensor) -> Tensor:
    """KL(N(mean, diag var) || N(0, I)), summed over all entries."""
    if np.any(var.data <= 0.0):
        raise ConfigurationError("gaussian_kl: variance must be strictly positive")
    return 0.5 * sum_(var + mean * mean - 1.0 - log(var))


def elbo_loss(pred_mu: Sequence[Tensor], truth: Sequence[np.ndarray],
              mean: Tensor, var: Tensor, cfg: LossConfig) -> Tensor:
    """Negated evidence bound: squared error / (2 sigma^2) plus weighted KL."""
    cfg.validate()
    if len(pred_mu) != len(truth):
        raise ConfigurationError(
            f"elbo_loss: {len(pred_mu)} predictions vs {len(truth)} truth frames")
    tape = mean.tape
    recon = tape.constant(0.0)
    for mu_t, x_t in zip(pred_mu, truth):
        x = tape.constant(x_t)
        if x.data.shape != mu_t.data.shape:
            raise ConfigurationError(
                f"elbo_loss: prediction {mu_t.data.shape} vs truth {x.data.shape}")
        diff = x - mu_t
        recon = recon + sum_(diff * diff)
    recon = recon * (1.0 / (2.0 * cfg.sigma2))
    return recon + cfg.kl_weight * gaussian_kl(mean, var)


def critic_score(x: Tensor, critic: CriticTensors) -> Tensor:
    hidden = relu(linear(x, critic.hidden_w, critic.hidden_b))
    return linear(hidden, critic.out_w, critic.out_b)


def _pair_indices(batch: int) -> tuple[np.ndarray, np.ndarray]:
    """All ordered mismatched pairs (a, b), a != b."""
    a, b = np.meshgrid(np.arange(batch), np.arange(batch), indexing="ij")
    keep = a != b
    return a[keep], b[keep]


def system_mi_loss(g: Tensor, xi: np.ndarray, critic: CriticTensors) -> Tensor:
    """Softplus MI objective tying system contexts to generative parameters.

    Positives are the matched (context, parameters) rows; negatives are all
    cross-pairs in the batch.  Minimized jointly with the model.
    """
    batch = g.data.shape[0]
    if batch < 2:
        raise ConfigurationError("system_mi_loss: need a batch of >= 2 systems")
    tape = g.tape
    xi_c = tape.constant(xi)
    pos = concat([g, xi_c], axis=1)
    pos_term = sum_(neg(softplus(neg(critic_score(pos, critic))))) * (1.0 / batch)
    ga, xb = _pair_indices(batch)
    neg_in = concat([gather_rows(g, ga), gather_rows(xi_c, xb)], axis=1)
    neg_term = sum_(softplus(neg(critic_score(neg_in, critic)))) * (1.0 / batch ** 2)
    return pos_term + neg_term


def disentangle_mi_loss(g: Tensor, u: Tensor, obj_system: np.ndarray,
                        critic: CriticTensors) -> Tensor:
    """Adversarial objective separating object contexts from system contexts.

    Positives match each object's context with its own system context;
    negatives pair it with every other system in the batch.  The model
    performs gradient descent on this value while the critic's parameters
    ascend it.
    """
    batch = g.data.shape[0]
    if batch < 2:
        raise ConfigurationError("disentangle_mi_loss: need a batch of >= 2 systems")
    n_obj = u.data.shape[0]
    obj_system = np.asarray(obj_system, dtype=np.int64)
    if obj_system.shape != (n_obj,):
        raise ConfigurationError("disentangle_mi_loss: obj_system must map each object row")
    n_pos = n_obj
    pos = concat([gather_rows(g, obj_system), u], axis=1)
    pos_term = sum_(softplus(neg(critic_score(pos, critic)))) * (1.0 / n_pos)
    sys_ids = np.arange(batch)
    # each object against every system that is not its own
    obj_rep = np.repeat(np.arange(n_obj), batch - 1)
    sys_rep = np.concatenate([sys_ids[sys_ids != s] for s in obj_system]) if n_obj else sys_ids[:0]
    neg_in = concat([gather_rows(g, sys_rep), gather_rows(u, obj_rep)], axis=1)
    neg_term = sum_(neg(softplus(neg(critic_score(neg_in, critic))))) * (1.0 / (n_pos * batch))
    return pos_term + neg_term


def mi_losses(g: Tensor, xi: np.ndarray, u: Tensor, obj_system: np.ndarray,
              critic_sys: CriticTensors, critic_dis: CriticTensors
              ) -> tuple[Tensor, Tensor, Tensor]:
    """(system loss, disentangle loss for the model, same value for the critic).

    The last two are one tensor viewed under opposite optimization roles:
    the model steps down its gradient, the adversarial critic steps up.
    """
    l_sys = system_mi_loss(g, xi, critic_sys)
    l_dis = disentangle_mi_loss(g, u, obj_system, critic_dis)
    return l_sys, l_dis, l_dis


def total_loss(l_elbo: Tensor, l_sys: Tensor | None, l_dis: Tensor | None,
               flags: AblationFlags) -> Tensor:
    """Sum of active components; inactive regularizers are dropped."""
    flags.validate()
    out = l_elbo
    if flags.use_system_ctx and l_sys is not None:
        out = out + l_sys
    if flags.use_system_ctx and flags.use_disentangle and l_dis is not None:
        out = out + l_dis
    return out

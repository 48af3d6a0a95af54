"""Latent dynamics: gated mixture of relation/aggregation prototypes.

Each prototype k is a pair of one-layer tanh networks: a relation net on
concatenated endpoint states and an aggregation net on the summed incoming
messages.  Per-object simplex weights blend the prototype outputs, and a
linear decay term pulls latents back toward the origin.  Integration is
classic fixed-step RK4 recorded on the differentiation tape, so gradients
flow through every stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .diffcore import (
    ScatterPlan,
    Tensor,
    concat,
    gather_rows,
    relu,
    scatter_add_rows,
    softmax,
    tanh,
)
from .errors import ConfigurationError, NumericError
from .nn import linear


@dataclass
class EdgeIndex:
    """Directed interaction pairs with cached scatter plans."""

    recv: np.ndarray
    send: np.ndarray
    n_objects: int
    _plan: ScatterPlan | None = None
    _send_plan: ScatterPlan | None = None

    @staticmethod
    def from_dense(edges: np.ndarray) -> "EdgeIndex":
        edges = np.asarray(edges)
        recv, send = np.nonzero(edges)
        return EdgeIndex(recv.astype(np.int64), send.astype(np.int64), edges.shape[0])

    def plan(self) -> ScatterPlan:
        if self._plan is None:
            self._plan = ScatterPlan.build(self.recv, self.n_objects)
        return self._plan

    def send_plan(self) -> ScatterPlan:
        if self._send_plan is None:
            self._send_plan = ScatterPlan.build(self.send, self.n_objects)
        return self._send_plan


def _as_edge_index(edges) -> EdgeIndex:
    if isinstance(edges, EdgeIndex):
        return edges
    return EdgeIndex.from_dense(edges)


@dataclass
class Prototype:
    """One relation/aggregation pair (bound tensors)."""

    relation_w: Tensor   # (d, 2d)
    relation_b: Tensor   # (d,)
    aggregate_w: Tensor  # (d, d)
    aggregate_b: Tensor  # (d,)


@dataclass
class GatingTensors:
    hidden_w: Tensor     # (gate_hidden, gate_in)
    hidden_b: Tensor
    out_w: Tensor        # (K, gate_hidden)
    out_b: Tensor


def gate_weights(u: Tensor | None, g: Tensor | None, head: GatingTensors,
                 obj_system: np.ndarray | None = None) -> Tensor:
    """Per-object simplex weights over prototypes.

    The gate input concatenates the object context with its system context;
    either side can be dropped (ablations), never both.  `obj_system` maps
    object rows of `u` to rows of `g` when g holds one row per system.
    """
    if u is None and g is None:
        raise ConfigurationError("gate_weights: need object or system contexts")
    parts = []
    if u is not None:
        parts.append(u)
    if g is not None:
        if u is not None and g.data.shape[0] != u.data.shape[0]:
            idx = obj_system if obj_system is not None else np.zeros(u.data.shape[0], dtype=np.int64)
            g = gather_rows(g, idx)
        parts.append(g)
    x = parts[0] if len(parts) == 1 else concat(parts, axis=1)
    hidden = relu(linear(x, head.hidden_w, head.hidden_b))
    logits = linear(hidden, head.out_w, head.out_b)
    return softmax(logits, axis=1)


def _prototype_message(z: Tensor, edge_index: EdgeIndex, proto: Prototype,
                       pair: Tensor) -> Tensor:
    msg = tanh(linear(pair, proto.relation_w, proto.relation_b))
    agg = scatter_add_rows(msg, edge_index.recv, edge_index.n_objects,
                           plan=edge_index.plan())
    return tanh(linear(agg, proto.aggregate_w, proto.aggregate_b))


def _endpoint_pairs(z: Tensor, edge_index: EdgeIndex) -> Tensor:
    z_recv = gather_rows(z, edge_index.recv, back_plan=edge_index.plan())
    z_send = gather_rows(z, edge_index.send, back_plan=edge_index.send_plan())
    # receiver state first, sender second: the relation net is not symmetric
    return concat([z_recv, z_send], axis=1)


def prototype_field(z: Tensor, edges, bank: Sequence[Prototype], gates: Tensor,
                    recovery: bool = True) -> Tensor:
    """Mixture vector field: sum_k w_k * aggregate_k(sum_j relate_k([z_i, z_j])) - z_i."""
    edge_index = _as_edge_index(edges)
    if gates.data.shape != (z.data.shape[0], len(bank)):
        raise ConfigurationError(
            f"gate shape {gates.data.shape} does not match {z.data.shape[0]} objects "
            f"x {len(bank)} prototypes")
    pair = _endpoint_pairs(z, edge_index)
    out = None
    for k, proto in enumerate(bank):
        f_k = _prototype_message(z, edge_index, proto, pair)
        term = gates[:, k:k + 1] * f_k
        out = term if out is None else out + term
    if not np.all(np.isfinite(out.data)):
        raise NumericError("prototype field produced non-finite values")
    return out - z if recovery else out


def single_prototype_field(z: Tensor, edges, proto: Prototype,
                           recovery: bool = True) -> Tensor:
    """Ungated field sharing one relation/aggregation pair across objects."""
    edge_index = _as_edge_index(edges)
    pair = _endpoint_pairs(z, edge_index)
    out = _prototype_message(z, edge_index, proto, pair)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("single-prototype field produced non-finite values")
    return out - z if recovery else out


def rk4_integrate(z0: Tensor, times: Sequence[float],
                  field: Callable[[Tensor], Tensor], substeps: int = 4) -> list[Tensor]:
    """Classic RK4 from z0 across `times`; returns one state per time.

    Each inter-time interval is divided into `substeps` equal steps.  All
    stages stay on the tape (discretize-then-optimize), so a scalar of the
    trajectory can be differentiated through the solver.
    """
    times = [float(t) for t in times]
    if len(times) < 1:
        raise ConfigurationError("rk4_integrate: need at least one time")
    if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
        raise ConfigurationError(f"rk4_integrate: times must be strictly ascending: {times}")
    if substeps < 1:
        raise ConfigurationError(f"rk4_integrate: substeps must be >= 1, got {substeps}")
    trajectory = [z0]
    z = z0
    for t0, t1 in zip(times, times[1:]):
        h = (t1 - t0) / substeps
        for s in range(substeps):
            k1 = field(z)
            k2 = field(z + (h / 2.0) * k1)
            k3 = field(z + (h / 2.0) * k2)
            k4 = field(z + h * k3)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(z.data)):
                t_fail = t0 + (s + 1) * h
                raise NumericError(f"rk4_integrate: non-finite state at t={t_fail:g}")
        trajectory.append(z)
    return trajectory

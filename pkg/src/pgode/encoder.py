"""Temporal observation graph and hierarchical context encoders.

The observation window of a sample becomes a graph with one node per
(object, frame) pair.  Same-frame observations of interacting objects are
linked with the interaction weight; consecutive observations of the same
object are linked with weight 1 (directed, earlier to later).  Message
passing with masked dot-product attention turns the node states into
per-object contexts; a second encoder with its own weights produces the
auxiliary contexts whose sum is the system context.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import (
    ScatterPlan,
    Tensor,
    concat,
    exp,
    gather_rows,
    relu,
    reshape,
    scatter_add_rows,
    sum_,
)
from .errors import ConfigurationError, NumericError
from .nn import linear
from .simkit import TrajectorySample


@dataclass
class TemporalGraph:
    """Observation graph over an N x T_obs window (possibly batched).

    Node ids are object * t_obs + t.  `recv`/`send` list directed edges:
    the update for node `recv[e]` pulls from node `send[e]` with weight
    `weight[e]`.  For batched graphs, objects of all systems are indexed
    consecutively and `obj_system` maps each object to its system.
    """

    n_objects: int
    t_obs: int
    recv: np.ndarray
    send: np.ndarray
    weight: np.ndarray
    features: np.ndarray          # (n_nodes, feat_dim)
    node_obj: np.ndarray          # (n_nodes,)
    node_t: np.ndarray            # (n_nodes,)
    n_systems: int = 1
    obj_system: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.n_objects * self.t_obs

    def node_plan(self) -> ScatterPlan:
        if "node" not in self._cache:
            self._cache["node"] = ScatterPlan.build(self.recv, self.n_nodes)
        return self._cache["node"]

    def send_plan(self) -> ScatterPlan:
        if "send" not in self._cache:
            self._cache["send"] = ScatterPlan.build(self.send, self.n_nodes)
        return self._cache["send"]

    def obj_plan(self) -> ScatterPlan:
        if "obj" not in self._cache:
            self._cache["obj"] = ScatterPlan.build(self.node_obj, self.n_objects)
        return self._cache["obj"]

    def te_matrix(self, d: int) -> np.ndarray:
        key = ("te", d)
        if key not in self._cache:
            self._cache[key] = temporal_embedding_matrix(self.node_t, d)
        return self._cache[key]

    def dense_adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes))
        adj[self.recv, self.send] = self.weight
        return adj

    def systems(self) -> np.ndarray:
        if self.obj_system is None:
            return np.zeros(self.n_objects, dtype=np.int64)
        return self.obj_system


def build_temporal_graph(sample: TrajectorySample, t_obs: int) -> TemporalGraph:
    """Observation graph for the first `t_obs` frames of one sample."""
    if t_obs < 2:
        raise ConfigurationError(f"t_obs must be >= 2 to form temporal edges, got {t_obs}")
    if t_obs > sample.n_frames:
        raise ConfigurationError(
            f"t_obs {t_obs} exceeds the sample's {sample.n_frames} frames")
    n = sample.n_objects
    src_obj, dst_obj = np.nonzero(sample.edges)
    # spatial edges: same frame, every interacting ordered pair
    ts = np.arange(t_obs)
    recv_sp = (src_obj[:, None] * t_obs + ts[None, :]).ravel()
    send_sp = (dst_obj[:, None] * t_obs + ts[None, :]).ravel()
    w_sp = np.repeat(sample.edges[src_obj, dst_obj], t_obs)
    # temporal edges: object i at t pulls from its own observation at t+1
    objs = np.arange(n)
    recv_tm = (objs[:, None] * t_obs + ts[None, :t_obs - 1]).ravel()
    send_tm = recv_tm + 1
    w_tm = np.ones(recv_tm.shape[0])
    feats = sample.features()[:, :t_obs].reshape(n * t_obs, -1)
    return TemporalGraph(
        n_objects=n, t_obs=t_obs,
        recv=np.concatenate([recv_sp, recv_tm]).astype(np.int64),
        send=np.concatenate([send_sp, send_tm]).astype(np.int64),
        weight=np.concatenate([w_sp, w_tm]).astype(np.float64),
        features=feats,
        node_obj=np.repeat(objs, t_obs),
        node_t=np.tile(ts, n),
    )


def merge_graphs(graphs: list[TemporalGraph]) -> TemporalGraph:
    """Stack per-sample graphs into one batched graph with offset indices."""
    if not graphs:
        raise ConfigurationError("merge_graphs: need at least one graph")
    t_obs = graphs[0].t_obs
    feat_dim = graphs[0].features.shape[1]
    recv, send, weight, feats, node_obj, node_t, obj_sys = [], [], [], [], [], [], []
    obj_offset = 0
    for b, g in enumerate(graphs):
        if g.t_obs != t_obs or g.features.shape[1] != feat_dim:
            raise ConfigurationError("merge_graphs: incompatible windows")
        node_offset = obj_offset * t_obs
        recv.append(g.recv + node_offset)
        send.append(g.send + node_offset)
        weight.append(g.weight)
        feats.append(g.features)
        node_obj.append(g.node_obj + obj_offset)
        node_t.append(g.node_t)
        obj_sys.append(np.full(g.n_objects, b, dtype=np.int64))
        obj_offset += g.n_objects
    return TemporalGraph(
        n_objects=obj_offset, t_obs=t_obs,
        recv=np.concatenate(recv), send=np.concatenate(send),
        weight=np.concatenate(weight), features=np.concatenate(feats),
        node_obj=np.concatenate(node_obj), node_t=np.concatenate(node_t),
        n_systems=len(graphs), obj_system=np.concatenate(obj_sys),
    )


# --------------------------------------------------------------------------
# sinusoidal temporal embedding

def temporal_embedding(t: float, d: int) -> np.ndarray:
    """TE(t)[2i] = sin(t / 10000^(2i/d)), TE(t)[2i+1] = cos(...)."""
    if d % 2 != 0:
        raise ConfigurationError(f"temporal embedding width must be even, got {d}")
    i = np.arange(d // 2)
    denom = 10000.0 ** (2.0 * i / d)
    out = np.empty(d)
    out[0::2] = np.sin(t / denom)
    out[1::2] = np.cos(t / denom)
    return out


def temporal_embedding_matrix(ts: np.ndarray, d: int) -> np.ndarray:
    if d % 2 != 0:
        raise ConfigurationError(f"temporal embedding width must be even, got {d}")
    i = np.arange(d // 2)
    denom = 10000.0 ** (2.0 * i / d)
    arg = np.asarray(ts, dtype=np.float64)[:, None] / denom[None, :]
    out = np.empty((len(ts), d))
    out[:, 0::2] = np.sin(arg)
    out[:, 1::2] = np.cos(arg)
    return out


# --------------------------------------------------------------------------
# parameter bundles (tensors bound to the current tape)

@dataclass
class AttentionWeights:
    wq: Tensor  # (d, d)
    wk: Tensor  # (d, d)
    wv: Tensor  # (d, d)


@dataclass
class EncoderTensors:
    embed_w: Tensor          # (d, feat_dim)
    embed_b: Tensor          # (d,)
    layers: list             # of AttentionWeights
    w_sum: Tensor            # (d, d)


@dataclass
class PosteriorHeads:
    mean_w: Tensor           # (d, d)
    mean_b: Tensor
    logvar_w: Tensor
    logvar_b: Tensor


# --------------------------------------------------------------------------
# operations

def attention_layer(graph: TemporalGraph, h: Tensor, weights: AttentionWeights,
                    layer_index: int = 0) -> Tensor:
    """One masked-attention update with a residual connection.

    Edge scores are weight/sqrt(d) times the query-key dot product of the
    temporally embedded states; each node adds relu of its weighted value
    sum.  Nodes without incoming edges are returned unchanged.
    """
    tape = h.tape
    d = h.data.shape[1]
    te = tape.constant(graph.te_matrix(d))
    h_hat = h + te
    q = linear(h_hat, weights.wq)
    k = linear(h_hat, weights.wk)
    v = linear(h_hat, weights.wv)
    q_e = gather_rows(q, graph.recv, back_plan=graph.node_plan())
    k_e = gather_rows(k, graph.send, back_plan=graph.send_plan())
    scale = tape.constant(graph.weight / np.sqrt(d))
    scores = sum_(q_e * k_e, axis=1) * scale
    if not np.all(np.isfinite(scores.data)):
        raise NumericError(f"attention layer {layer_index}: non-finite scores")
    msgs = reshape(scores, (-1, 1)) * gather_rows(v, graph.send, back_plan=graph.send_plan())
    agg = scatter_add_rows(msgs, graph.recv, graph.n_nodes, plan=graph.node_plan())
    return h + relu(agg)


def embed_features(graph: TemporalGraph, enc: EncoderTensors) -> Tensor:
    x = enc.embed_w.tape.constant(graph.features)
    return linear(x, enc.embed_w, enc.embed_b)


def summarize_objects(graph: TemporalGraph, h_final: Tensor, w_sum: Tensor) -> Tensor:
    """Average relu(W_sum (h + TE)) over each object's observed frames."""
    d = h_final.data.shape[1]
    te = h_final.tape.constant(graph.te_matrix(d))
    q_nodes = h_final + te
    s = relu(linear(q_nodes, w_sum))
    u = scatter_add_rows(s, graph.node_obj, graph.n_objects, plan=graph.obj_plan())
    return u * (1.0 / graph.t_obs)


def encode_object_contexts(graph: TemporalGraph, enc: EncoderTensors) -> Tensor:
    """Full stack: embed, message passing layers, per-object summary."""
    h = embed_features(graph, enc)
    for idx, layer in enumerate(enc.layers):
        h = attention_layer(graph, h, layer, layer_index=idx)
    return summarize_objects(graph, h, enc.w_sum)


def system_context(graph: TemporalGraph, enc: EncoderTensors) -> tuple[Tensor, Tensor]:
    """Auxiliary contexts and their per-system sums.

    Returns (u_prime, g) with g of shape (n_systems, d); for a single
    sample g is the 1 x d sum of the auxiliary context rows.
    """
    u_prime = encode_object_contexts(graph, enc)
    sys_idx = graph.systems()
    g = scatter_add_rows(u_prime, sys_idx, graph.n_systems)
    return u_prime, g


def posterior_params(u: Tensor, heads: PosteriorHeads) -> tuple[Tensor, Tensor]:
    """Diagonal Gaussian over initial latents: mean head plus exp(log-variance)."""
    mean = linear(u, heads.mean_w, heads.mean_b)
    var = exp(linear(u, heads.logvar_w, heads.logvar_b))
    return mean, var

"""Trajectory simulators for the springs and charged systems.

Dimensionless units, unit masses.  Ground truth is integrated with
velocity-Verlet leapfrog at a small inner step and recorded every
``subsample`` inner steps; particles reflect elastically off the walls of
the square box [-alpha, alpha]^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, SimulationError
from . import kernels
from .params import SystemParams

DT_INNER = 0.001
SUBSAMPLE = 100
R_MIN = 0.1
INIT_POS_STD = 0.5


@dataclass
class TrajectorySample:
    """One simulated system: states per object per frame plus its graph."""

    sample_id: str
    split: str
    params: SystemParams
    n_objects: int
    n_frames: int
    positions: np.ndarray   # (N, T, 2)
    velocities: np.ndarray  # (N, T, 2)
    edges: np.ndarray       # (N, N), symmetric, zero diagonal
    wall_hits: int = 0
    extras: dict = field(default_factory=dict)

    def validate(self) -> None:
        n, t = self.n_objects, self.n_frames
        if self.positions.shape != (n, t, 2) or self.velocities.shape != (n, t, 2):
            raise ConfigurationError(
                f"sample {self.sample_id}: state shapes {self.positions.shape}, "
                f"{self.velocities.shape} do not match N={n}, T={t}")
        if not (np.isfinite(self.positions).all() and np.isfinite(self.velocities).all()):
            raise ConfigurationError(f"sample {self.sample_id}: non-finite states")
        if self.edges.shape != (n, n):
            raise ConfigurationError(f"sample {self.sample_id}: edges shape {self.edges.shape}")
        if not np.array_equal(self.edges, self.edges.T):
            raise ConfigurationError(f"sample {self.sample_id}: edges not symmetric")
        if np.any(np.diag(self.edges) != 0.0):
            raise ConfigurationError(f"sample {self.sample_id}: edges diagonal not zero")

    def features(self) -> np.ndarray:
        """(N, T, 4) array of [qx, qy, vx, vy]."""
        return np.concatenate([self.positions, self.velocities], axis=2)


def _initial_state(params: SystemParams, n_objects: int, rng: np.random.Generator):
    q0 = rng.normal(0.0, INIT_POS_STD, size=(n_objects, 2))
    direction = rng.normal(size=(n_objects, 2))
    norm = np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-12)
    v0 = params.beta * direction / norm
    return q0, v0


def _check_preconditions(params, n_objects, n_frames):
    params.validate()
    if n_objects < 1:
        raise ConfigurationError(f"n_objects must be >= 1, got {n_objects}")
    if n_frames < 2:
        raise ConfigurationError(f"n_frames must be >= 2, got {n_frames}")


def simulate_springs(params: SystemParams, n_objects: int, n_frames: int,
                     rng: np.random.Generator, dt: float = DT_INNER,
                     subsample: int = SUBSAMPLE, sample_id: str = "",
                     split: str = "") -> TrajectorySample:
    """Hooke springs with zero rest length on a Bernoulli(delta) graph.

    Force on i is -gamma * sum_j e_ij (q_i - q_j).  Draw order from `rng`:
    edges, then initial positions, then initial velocities.
    """
    _check_preconditions(params, n_objects, n_frames)
    if n_objects < 2:
        raise ConfigurationError("springs needs at least 2 objects")
    edges = np.zeros((n_objects, n_objects))
    iu = np.triu_indices(n_objects, k=1)
    present = rng.random(len(iu[0])) < params.delta
    edges[iu] = present.astype(np.float64)
    edges = edges + edges.T
    q0, v0 = _initial_state(params, n_objects, rng)
    pos, vel, status, wall_hits = kernels.springs_rollout(
        q0, v0, edges, params.gamma_strength, params.alpha,
        float(dt), int(subsample), int(n_frames))
    if status != kernels.STATUS_OK:
        raise SimulationError(
            f"springs rollout left the finite regime at inner step {status}", step=status)
    return TrajectorySample(sample_id=sample_id, split=split, params=params,
                            n_objects=n_objects, n_frames=n_frames,
                            positions=pos, velocities=vel, edges=edges,
                            wall_hits=int(wall_hits))


def simulate_charged(params: SystemParams, n_objects: int, n_frames: int,
                     rng: np.random.Generator, dt: float = DT_INNER,
                     subsample: int = SUBSAMPLE, r_min: float = R_MIN,
                     sample_id: str = "", split: str = "") -> TrajectorySample:
    """Signed charges with a clamped inverse-square law.

    Each object gets charge +1 with probability delta, else -1.  The force
    on i from j is gamma * c_i c_j (q_i - q_j) / max(|q_i - q_j|, r_min)^3,
    repulsive for like charges.  The model-facing interaction graph is
    fully connected (all ones off the diagonal); charges are kept in
    `extras` for diagnostics only.
    """
    _check_preconditions(params, n_objects, n_frames)
    charges = np.where(rng.random(n_objects) < params.delta, 1.0, -1.0)
    q0, v0 = _initial_state(params, n_objects, rng)
    pos, vel, status, wall_hits = kernels.charged_rollout(
        q0, v0, charges, params.gamma_strength, params.alpha, float(r_min),
        float(dt), int(subsample), int(n_frames))
    if status != kernels.STATUS_OK:
        raise SimulationError(
            f"charged rollout left the finite regime at inner step {status}", step=status)
    edges = np.ones((n_objects, n_objects)) - np.eye(n_objects)
    return TrajectorySample(sample_id=sample_id, split=split, params=params,
                            n_objects=n_objects, n_frames=n_frames,
                            positions=pos, velocities=vel, edges=edges,
                            wall_hits=int(wall_hits),
                            extras={"charges": charges})


# --------------------------------------------------------------------------
# conservation diagnostics used by the oracle tests

def springs_energy(positions: np.ndarray, velocities: np.ndarray,
                   edges: np.ndarray, gamma: float) -> np.ndarray:
    """Total energy per frame: kinetic + 0.5*gamma*|q_i - q_j|^2 per edge."""
    kinetic = 0.5 * (velocities ** 2).sum(axis=(0, 2))
    iu = np.triu_indices(positions.shape[0], k=1)
    diff = positions[iu[0]] - positions[iu[1]]          # (pairs, T, 2)
    pair_e = 0.5 * gamma * (diff ** 2).sum(axis=2)
    potential = (edges[iu][:, None] * pair_e).sum(axis=0)
    return kinetic + potential


def total_momentum(velocities: np.ndarray) -> np.ndarray:
    """(T, 2) momentum per frame for unit masses."""
    return velocities.sum(axis=0)

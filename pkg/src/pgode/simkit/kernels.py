"""Leapfrog rollout kernels for the springs and charged systems.

The hot inner loops exist twice: a loop-style version compiled with numba
when available, and a vectorized pure-numpy fallback.  Set
``PGODE_DISABLE_NUMBA=1`` to force the numpy path.  The two paths use
different summation orders, so long trajectories agree to float tolerance
rather than bitwise; within one installed environment generation is fully
deterministic either way.

Both kernels return ``(pos, vel, status, wall_hits)`` where ``status`` is
-1 on success or the failing inner-step index once the state stops being
finite (or a particle cannot be folded back into the box).
"""

from __future__ import annotations

import math
import os

import numpy as np

STATUS_OK = -1
_MAX_FOLDS = 64


def numba_disabled_by_env() -> bool:
    return os.environ.get("PGODE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


# --------------------------------------------------------------------------
# loop-style implementations (numba-compatible)

def _springs_rollout_loop(q0, v0, edges, gamma, box, dt, inner_steps, n_frames):
    n = q0.shape[0]
    pos = np.empty((n, n_frames, 2))
    vel = np.empty((n, n_frames, 2))
    q = q0.copy()
    v = v0.copy()
    f = np.zeros((n, 2))
    for i in range(n):
        for j in range(n):
            if edges[i, j] != 0.0:
                f[i, 0] -= gamma * (q[i, 0] - q[j, 0])
                f[i, 1] -= gamma * (q[i, 1] - q[j, 1])
    for i in range(n):
        pos[i, 0, 0] = q[i, 0]
        pos[i, 0, 1] = q[i, 1]
        vel[i, 0, 0] = v[i, 0]
        vel[i, 0, 1] = v[i, 1]
    wall_hits = 0
    step = 0
    for frame in range(1, n_frames):
        for _ in range(inner_steps):
            for i in range(n):
                for c in range(2):
                    v[i, c] += 0.5 * dt * f[i, c]
                    q[i, c] += dt * v[i, c]
            for i in range(n):
                for c in range(2):
                    folds = 0
                    while (q[i, c] > box or q[i, c] < -box) and folds < _MAX_FOLDS:
                        if q[i, c] > box:
                            q[i, c] = 2.0 * box - q[i, c]
                        else:
                            q[i, c] = -2.0 * box - q[i, c]
                        v[i, c] = -v[i, c]
                        wall_hits += 1
                        folds += 1
                    if folds >= _MAX_FOLDS:
                        return pos, vel, step, wall_hits
            for i in range(n):
                f[i, 0] = 0.0
                f[i, 1] = 0.0
                for j in range(n):
                    if edges[i, j] != 0.0:
                        f[i, 0] -= gamma * (q[i, 0] - q[j, 0])
                        f[i, 1] -= gamma * (q[i, 1] - q[j, 1])
            ok = True
            for i in range(n):
                for c in range(2):
                    v[i, c] += 0.5 * dt * f[i, c]
                    if not (math.isfinite(q[i, c]) and math.isfinite(v[i, c])):
                        ok = False
            if not ok:
                return pos, vel, step, wall_hits
            step += 1
        for i in range(n):
            pos[i, frame, 0] = q[i, 0]
            pos[i, frame, 1] = q[i, 1]
            vel[i, frame, 0] = v[i, 0]
            vel[i, frame, 1] = v[i, 1]
    return pos, vel, STATUS_OK, wall_hits


def _charged_rollout_loop(q0, v0, charges, gamma, box, r_min, dt, inner_steps, n_frames):
    n = q0.shape[0]
    pos = np.empty((n, n_frames, 2))
    vel = np.empty((n, n_frames, 2))
    q = q0.copy()
    v = v0.copy()
    f = np.zeros((n, 2))
    for i in range(n):
        for j in range(n):
            if j != i:
                dx = q[i, 0] - q[j, 0]
                dy = q[i, 1] - q[j, 1]
                r = math.sqrt(dx * dx + dy * dy)
                rc = r if r > r_min else r_min
                s = gamma * charges[i] * charges[j] / (rc * rc * rc)
                f[i, 0] += s * dx
                f[i, 1] += s * dy
    for i in range(n):
        pos[i, 0, 0] = q[i, 0]
        pos[i, 0, 1] = q[i, 1]
        vel[i, 0, 0] = v[i, 0]
        vel[i, 0, 1] = v[i, 1]
    wall_hits = 0
    step = 0
    for frame in range(1, n_frames):
        for _ in range(inner_steps):
            for i in range(n):
                for c in range(2):
                    v[i, c] += 0.5 * dt * f[i, c]
                    q[i, c] += dt * v[i, c]
            for i in range(n):
                for c in range(2):
                    folds = 0
                    while (q[i, c] > box or q[i, c] < -box) and folds < _MAX_FOLDS:
                        if q[i, c] > box:
                            q[i, c] = 2.0 * box - q[i, c]
                        else:
                            q[i, c] = -2.0 * box - q[i, c]
                        v[i, c] = -v[i, c]
                        wall_hits += 1
                        folds += 1
                    if folds >= _MAX_FOLDS:
                        return pos, vel, step, wall_hits
            for i in range(n):
                f[i, 0] = 0.0
                f[i, 1] = 0.0
                for j in range(n):
                    if j != i:
                        dx = q[i, 0] - q[j, 0]
                        dy = q[i, 1] - q[j, 1]
                        r = math.sqrt(dx * dx + dy * dy)
                        rc = r if r > r_min else r_min
                        s = gamma * charges[i] * charges[j] / (rc * rc * rc)
                        f[i, 0] += s * dx
                        f[i, 1] += s * dy
            ok = True
            for i in range(n):
                for c in range(2):
                    v[i, c] += 0.5 * dt * f[i, c]
                    if not (math.isfinite(q[i, c]) and math.isfinite(v[i, c])):
                        ok = False
            if not ok:
                return pos, vel, step, wall_hits
            step += 1
        for i in range(n):
            pos[i, frame, 0] = q[i, 0]
            pos[i, frame, 1] = q[i, 1]
            vel[i, frame, 0] = v[i, 0]
            vel[i, frame, 1] = v[i, 1]
    return pos, vel, STATUS_OK, wall_hits


# --------------------------------------------------------------------------
# vectorized numpy fallbacks

def _reflect_numpy(q, v, box):
    hits = 0
    for _ in range(_MAX_FOLDS):
        over = q > box
        under = q < -box
        if not (over.any() or under.any()):
            return hits, True
        q[over] = 2.0 * box - q[over]
        q[under] = -2.0 * box - q[under]
        flip = over | under
        v[flip] = -v[flip]
        hits += int(flip.sum())
    return hits, not ((q > box) | (q < -box)).any()


def springs_rollout_numpy(q0, v0, edges, gamma, box, dt, inner_steps, n_frames):
    n = q0.shape[0]
    pos = np.empty((n, n_frames, 2))
    vel = np.empty((n, n_frames, 2))
    q = q0.copy()
    v = v0.copy()
    deg = edges.sum(axis=1, keepdims=True)
    f = -gamma * (deg * q - edges @ q)
    pos[:, 0] = q
    vel[:, 0] = v
    wall_hits = 0
    step = 0
    for frame in range(1, n_frames):
        for _ in range(inner_steps):
            v += 0.5 * dt * f
            q += dt * v
            hits, folded = _reflect_numpy(q, v, box)
            wall_hits += hits
            if not folded:
                return pos, vel, step, wall_hits
            f = -gamma * (deg * q - edges @ q)
            v += 0.5 * dt * f
            if not (np.isfinite(q).all() and np.isfinite(v).all()):
                return pos, vel, step, wall_hits
            step += 1
        pos[:, frame] = q
        vel[:, frame] = v
    return pos, vel, STATUS_OK, wall_hits


def _charged_forces_numpy(q, charges, gamma, r_min):
    diff = q[:, None, :] - q[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    np.fill_diagonal(dist, 1.0)
    denom = np.maximum(dist, r_min) ** 3
    coef = gamma * np.outer(charges, charges) / denom
    np.fill_diagonal(coef, 0.0)
    return (coef[:, :, None] * diff).sum(axis=1)


def charged_rollout_numpy(q0, v0, charges, gamma, box, r_min, dt, inner_steps, n_frames):
    n = q0.shape[0]
    pos = np.empty((n, n_frames, 2))
    vel = np.empty((n, n_frames, 2))
    q = q0.copy()
    v = v0.copy()
    f = _charged_forces_numpy(q, charges, gamma, r_min)
    pos[:, 0] = q
    vel[:, 0] = v
    wall_hits = 0
    step = 0
    for frame in range(1, n_frames):
        for _ in range(inner_steps):
            v += 0.5 * dt * f
            q += dt * v
            hits, folded = _reflect_numpy(q, v, box)
            wall_hits += hits
            if not folded:
                return pos, vel, step, wall_hits
            f = _charged_forces_numpy(q, charges, gamma, r_min)
            v += 0.5 * dt * f
            if not (np.isfinite(q).all() and np.isfinite(v).all()):
                return pos, vel, step, wall_hits
            step += 1
        pos[:, frame] = q
        vel[:, frame] = v
    return pos, vel, STATUS_OK, wall_hits


# --------------------------------------------------------------------------
# backend selection

springs_rollout_numba = None
charged_rollout_numba = None

if not numba_disabled_by_env():
    try:
        from numba import njit

        springs_rollout_numba = njit(cache=True)(_springs_rollout_loop)
        charged_rollout_numba = njit(cache=True)(_charged_rollout_loop)
    except ImportError:  # pragma: no cover - numba is a hard dependency
        pass

if springs_rollout_numba is not None:
    ACTIVE_BACKEND = "numba"
    springs_rollout = springs_rollout_numba
    charged_rollout = charged_rollout_numba
else:
    ACTIVE_BACKEND = "numpy"
    springs_rollout = springs_rollout_numpy
    charged_rollout = charged_rollout_numpy


def active_backend() -> str:
    return ACTIVE_BACKEND

"""Finite-difference gradient verification."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigurationError, NumericError
from .engine import Tape, Tensor, backward

# An element is skipped when the symmetric second difference indicates the
# probe straddles a kink (relu at 0, abs at 0, ...): first-order finite
# differences are meaningless there.
_KINK_FACTOR = 0.01


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_skipped: int

    def __float__(self):
        return self.max_rel_error


def _eval_scalar(f: Callable[[Tensor], Tensor], x: np.ndarray) -> float:
    tape = Tape()
    out = f(tape.constant(x))
    if out.data.size != 1:
        raise ConfigurationError("grad_check: expression must be scalar-valued")
    val = float(out.data)
    if not math.isfinite(val):
        raise NumericError("grad_check: non-finite value at probe point")
    return val


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
               elements=None, rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare the tape gradient of `f` at `x` against central differences.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    `elements` limits probing to a subset: an int subsamples that many flat
    indices (needs `rng`), an iterable gives explicit flat indices, None
    probes every element.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ConfigurationError(f"grad_check: eps {eps} outside [1e-7, 1e-3]")
    x = np.asarray(x, dtype=np.float64)

    tape = Tape()
    xt = tape.param("x", x)
    out = f(xt)
    if out.data.size != 1:
        raise ConfigurationError("grad_check: expression must be scalar-valued")
    if not math.isfinite(float(out.data)):
        raise NumericError("grad_check: non-finite value at probe point")
    analytic = backward(tape, out)["x"].ravel()
    f0 = float(out.data)

    if elements is None:
        indices = range(x.size)
    elif isinstance(elements, int):
        if rng is None:
            raise ConfigurationError("grad_check: subsampling needs an rng")
        indices = rng.choice(x.size, size=min(elements, x.size), replace=False)
    else:
        indices = list(elements)

    flat = x.ravel()
    max_err = 0.0
    checked = 0
    skipped = 0
    for i in indices:
        probe = flat.copy()
        probe[i] = flat[i] + eps
        fp = _eval_scalar(f, probe.reshape(x.shape))
        probe[i] = flat[i] - eps
        fm = _eval_scalar(f, probe.reshape(x.shape))
        numeric = (fp - fm) / (2.0 * eps)
        scale = max(1.0, abs(numeric), abs(analytic[i]))
        if abs(fp + fm - 2.0 * f0) > _KINK_FACTOR * eps * scale:
            skipped += 1
            continue
        rel = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
        max_err = max(max_err, rel)
        checked += 1
    return GradCheckResult(max_err, checked, skipped)

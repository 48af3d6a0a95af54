"""Small shared helpers for parameterized layers.

Weight matrices use the (out_features, in_features) convention, applied as
W x; `linear` therefore computes x @ W^T + b on row-major batches.
"""

from __future__ import annotations

import numpy as np

from .diffcore import Tensor, matmul, transpose


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, transpose(w))
    return y if b is None else y + b


def glorot(rng: np.random.Generator, out_features: int, in_features: int) -> np.ndarray:
    std = np.sqrt(2.0 / (in_features + out_features))
    return rng.normal(0.0, std, size=(out_features, in_features))

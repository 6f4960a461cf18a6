"""Small parameter helpers shared by the model branches."""

from __future__ import annotations

import numpy as np

from . import dtensor as dt

Params = dict[str, dt.Tensor]


def dense_init(rng: np.random.Generator, fan_in: int, shape, scale: float = 1.0) -> np.ndarray:
    bound = scale / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def linear(x, w: dt.Tensor, b: dt.Tensor | None = None) -> dt.Tensor:
    out = dt.apply("matmul", [x, w])
    return out if b is None else out + b


def inv_softplus(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def logit(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def count(params: Params) -> int:
    return int(sum(p.size for p in params.values()))

"""Shared second-order modal kernels, diagonal-plus-low-rank coupling, modal summation.

A mode m with center c, damping z and gain g responds at order o with

    k_m[o] = g / sqrt((1 - (o/c)^2)^2 + (2 z o/c)^2 + eps)

which is the magnitude of g*w_n^2 / (s^2 + 2 z w_n s + w_n^2) sampled on the
integer order grid 1..40.  Raw parameters are unconstrained:
c = 1 + 39*sigmoid(raw), z = softplus(raw), g = softplus(raw).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dtensor as dt
from .layers import Params, inv_softplus, logit
from .preprocess import N_CHANNEL, N_ORDER

ORDER_GRID = np.arange(1, N_ORDER + 1, dtype=np.float64)
EYE4 = np.eye(N_CHANNEL)


@dataclass
class PhysConfig:
    n_modes: int = 12
    rank: int = 2
    kernel_eps: float = 1e-6
    center_span: tuple[float, float] = (2.5, 38.5)
    init_damping: float = 0.15
    init_gain: float = 1.0
    factor_std: float = 0.01


def init_modal(cfg: PhysConfig = PhysConfig()) -> Params:
    m = cfg.n_modes
    centers = np.linspace(*cfg.center_span, m)
    return {
        "raw_center": dt.param(logit((centers - 1.0) / 39.0), "raw_center"),
        "raw_damp": dt.param(np.full(m, inv_softplus(cfg.init_damping)), "raw_damp"),
        "raw_gain": dt.param(np.full(m, inv_softplus(cfg.init_gain)), "raw_gain"),
    }


def init_coupling(rng: np.random.Generator, cfg: PhysConfig = PhysConfig()) -> Params:
    m, r = cfg.n_modes, cfg.rank
    return {
        "diag": dt.param(np.ones((m, N_CHANNEL)), "diag"),
        "U": dt.param(cfg.factor_std * rng.standard_normal((m, N_CHANNEL, r)), "U"),
        "V": dt.param(cfg.factor_std * rng.standard_normal((m, N_CHANNEL, r)), "V"),
    }


def modal_values(params: Params) -> tuple[dt.Tensor, dt.Tensor, dt.Tensor]:
    """Mapped (center, damping, gain), each of shape (M,)."""
    c = 1.0 + 39.0 * dt.sigmoid(params["raw_center"])
    return c, dt.softplus(params["raw_damp"]), dt.softplus(params["raw_gain"])


def build_kernels(center, damping, gain, eps: float = 1e-6) -> dt.Tensor:
    """(..., M) modal parameters -> (..., M, 40) kernel bank."""
    center, damping, gain = (dt.as_tensor(t) for t in (center, damping, gain))
    shape = center.shape
    ratio = dt.Tensor(ORDER_GRID) / center.reshape(*shape, 1)
    resonance = dt.square(1.0 - dt.square(ratio))
    # a runaway adaptive damping may overflow here; the kernel then reaches
    # its limit of zero and the backward pass stays finite
    with np.errstate(over="ignore"):
        damping_term = dt.square(2.0 * damping.reshape(*shape, 1) * ratio)
        return gain.reshape(*shape, 1) / dt.sqrt(resonance + damping_term + eps)


def build_coupling(params: Params, use_low_rank: bool = True) -> dt.Tensor:
    """W_m = Diag(d_m) + U_m V_m^T, shape (M, 4, 4)."""
    d = params["diag"]
    w = d.reshape(*d.shape, 1) * dt.Tensor(EYE4)
    if use_low_rank:
        w = w + params["U"] @ params["V"].transpose(0, 2, 1)
    return w


def base_response(x_mix: dt.Tensor, kernels: dt.Tensor, coupling: dt.Tensor
                  ) -> tuple[dt.Tensor, dt.Tensor]:
    """Couple, weight by kernel, sum modes.

    x_mix (N, 40, 4); kernels (M, 40) or (N, M, 40); coupling (M, 4, 4).
    Returns y_base (N, 40, 4) and the per-mode coupled inputs z (N, M, 40, 4).
    """
    n = x_mix.shape[0]
    z = x_mix.reshape(n, 1, N_ORDER, N_CHANNEL) @ coupling.transpose(0, 2, 1)
    k = kernels.reshape(*kernels.shape, 1)
    return (z * k).sum(axis=1), z

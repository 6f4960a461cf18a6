"""Sample-adaptive structured correction of the physical branch.

A context vector from x_mix drives two heads: modal offsets
(dc, dlog_zeta, dlog_gain) that regenerate an adaptive kernel bank, and a
dense per-mode coupling increment dW.  The correction

    y_delta = sum_m z_m * (K_adp - K_base)_m + sum_m (x_mix dW_m^T) * K_adp_m

is added to y_base through a bounded gate beta = beta_max * sigmoid(b).
Both head output layers start at zero, so the branch is inert at init.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dtensor as dt
from .layers import Params, dense_init, linear
from .physbranch import build_kernels
from .preprocess import N_CHANNEL, N_ORDER

DB_SCALE = 20.0
MIN_CENTER = 0.5


@dataclass
class AdaptiveConfig:
    d_context: int = 64
    conv_channels: int = 16
    conv_kernel: int = 5
    hidden: int = 512
    beta_max: float = 0.2
    gate_init: float = -6.0
    center_shift_max: float = 3.0
    log_scale_max: float = 3.0


def init_adaptive(rng: np.random.Generator, n_modes: int, cfg: AdaptiveConfig = AdaptiveConfig()) -> Params:
    cc, k, h, dc = cfg.conv_channels, cfg.conv_kernel, cfg.hidden, cfg.d_context
    flat = N_ORDER * cc + 2 * N_CHANNEL
    return {
        "ctx_conv_w": dt.param(dense_init(rng, k * N_CHANNEL, (k, N_CHANNEL, cc)), "ctx_conv_w"),
        "ctx_conv_b": dt.param(np.zeros(cc), "ctx_conv_b"),
        "ctx_w1": dt.param(dense_init(rng, flat, (flat, h)), "ctx_w1"),
        "ctx_b1": dt.param(np.zeros(h), "ctx_b1"),
        "ctx_w2": dt.param(dense_init(rng, h, (h, dc)), "ctx_w2"),
        "ctx_b2": dt.param(np.zeros(dc), "ctx_b2"),
        "modal_w": dt.param(np.zeros((dc, 3 * n_modes)), "modal_w"),
        "modal_b": dt.param(np.zeros(3 * n_modes), "modal_b"),
        "coup_w": dt.param(np.zeros((dc, n_modes * N_CHANNEL * N_CHANNEL)), "coup_w"),
        "coup_b": dt.param(np.zeros(n_modes * N_CHANNEL * N_CHANNEL), "coup_b"),
        "gate": dt.param(np.array(cfg.gate_init), "gate"),
    }


def gate(params: Params, cfg: AdaptiveConfig = AdaptiveConfig()) -> dt.Tensor:
    return cfg.beta_max * dt.sigmoid(params["gate"])


def encode_context(x_mix: dt.Tensor, params: Params) -> dt.Tensor:
    """Local conv over orders on the standardized input plus mean/std statistics -> MLP."""
    n = x_mix.shape[0]
    mean = x_mix.mean(axis=1, keepdims=True)
    centered = x_mix - mean
    std = dt.sqrt(dt.square(centered).mean(axis=1, keepdims=True) + 1e-8)
    local = dt.relu(dt.conv1d_same(centered / std, params["ctx_conv_w"]) + params["ctx_conv_b"])
    stats = dt.concat([mean.reshape(n, N_CHANNEL), std.reshape(n, N_CHANNEL)], axis=1) / DB_SCALE
    feats = dt.concat([local.reshape(n, -1), stats], axis=1)
    hidden = dt.relu(linear(feats, params["ctx_w1"], params["ctx_b1"]))
    return linear(hidden, params["ctx_w2"], params["ctx_b2"])


def modal_head(context: dt.Tensor, params: Params, center, damping, gain,
               cfg: AdaptiveConfig = AdaptiveConfig(), eps: float = 1e-6):
    """Adaptive (center, damping, gain), each (N, M), and the adaptive kernel bank (N, M, 40).

    Adaptive centers are floored at MIN_CENTER, which only binds when a
    shift pushes a low mode below half an order.  The log-scale increments
    for damping and gain saturate smoothly at +-log_scale_max.
    """
    m = center.shape[-1]
    out = linear(context, params["modal_w"], params["modal_b"])
    shift = cfg.center_shift_max * dt.tanh(out[:, :m])
    c_adp = MIN_CENTER + dt.relu(center + shift - MIN_CENTER)
    lim = cfg.log_scale_max
    z_adp = damping * dt.exp(lim * dt.tanh(out[:, m:2 * m] / lim))
    g_adp = gain * dt.exp(lim * dt.tanh(out[:, 2 * m:] / lim))
    return (c_adp, z_adp, g_adp), build_kernels(c_adp, z_adp, g_adp, eps)


def coupling_head(context: dt.Tensor, params: Params, n_modes: int) -> dt.Tensor:
    n = context.shape[0]
    return linear(context, params["coup_w"], params["coup_b"]).reshape(n, n_modes, N_CHANNEL, N_CHANNEL)


def corrected_response(x_mix: dt.Tensor, z_modes: dt.Tensor, k_base: dt.Tensor, k_adp: dt.Tensor,
                       delta_w: dt.Tensor | None, beta, y_base: dt.Tensor) -> dt.Tensor:
    """y_phys = y_base + beta * (y_dK + y_dW).  ``delta_w=None`` drops the coupling term."""
    delta_k = k_adp - k_base
    y_delta = (z_modes * delta_k.reshape(*delta_k.shape, 1)).sum(axis=1)
    if delta_w is not None:
        n = x_mix.shape[0]
        coupled = x_mix.reshape(n, 1, N_ORDER, N_CHANNEL) @ delta_w.transpose(0, 1, 3, 2)
        y_delta = y_delta + (coupled * k_adp.reshape(*k_adp.shape, 1)).sum(axis=1)
    return y_base + beta * y_delta

"""Order frontend and order mixing.

``order_frontend`` turns an angle-domain revolution into dB order features;
the DFT and dB map act on data only, so they run in plain numpy and the
graph starts at the speed projection and the residual conv encoder.
``order_mixing`` is the residual local-conv enhancement over orders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dtensor as dt
from .layers import Params, dense_init, linear
from .preprocess import EPS_DB, N_CHANNEL, N_ORDER, order_amplitudes

V_CENTER = 300.0  # km/h
V_SCALE = 5.0  # km/h; maps the 295..305 window to [-1, 1]


@dataclass
class FrontendConfig:
    d_hidden: int = 16
    kernel: int = 3
    eps_db: float = EPS_DB
    encoder_init_scale: float = 0.01


def init_frontend(rng: np.random.Generator, cfg: FrontendConfig = FrontendConfig()) -> Params:
    c, h, k = N_CHANNEL, cfg.d_hidden, cfg.kernel
    return {
        "enc_w": dt.param(cfg.encoder_init_scale * rng.standard_normal((k, c, c)), "enc_w"),
        "enc_b": dt.param(np.zeros(c), "enc_b"),
        "speed_w": dt.param(cfg.encoder_init_scale * rng.standard_normal((c, c)), "speed_w"),
        "speed_b": dt.param(np.zeros(c), "speed_b"),
        "mix_in_w": dt.param(dense_init(rng, c, (c, h)), "mix_in_w"),
        "mix_in_b": dt.param(np.zeros(h), "mix_in_b"),
        "order_emb": dt.param(0.1 * rng.standard_normal((N_ORDER, h)), "order_emb"),
        "mix_conv_w": dt.param(dense_init(rng, k * h, (k, h, h)), "mix_conv_w"),
        "mix_conv_b": dt.param(np.zeros(h), "mix_conv_b"),
        "mix_out_w": dt.param(dense_init(rng, h, (h, c)), "mix_out_w"),
        "mix_out_b": dt.param(np.zeros(c), "mix_out_b"),
        "mix_scale": dt.param(np.zeros(()), "mix_scale"),
    }


def order_db_features(x: np.ndarray, eps_db: float = EPS_DB) -> np.ndarray:
    """(N, 400, 4) angle signal -> (N, 40, 4) dB amplitudes at orders 1..40 (reference 1)."""
    return 20.0 * np.log10(order_amplitudes(np.asarray(x, dtype=np.float64)) + eps_db)


def normalized_speed(v: np.ndarray) -> np.ndarray:
    return (np.asarray(v, dtype=np.float64) - V_CENTER) / V_SCALE


def order_frontend(x: np.ndarray, v: np.ndarray, params: Params,
                   cfg: FrontendConfig = FrontendConfig()) -> dt.Tensor:
    """x: (N, 400, 4), v: (N, 4) km/h -> x_order (N, 40, 4)."""
    feats = dt.Tensor(order_db_features(x, cfg.eps_db))
    speed = linear(dt.Tensor(normalized_speed(v)), params["speed_w"], params["speed_b"])
    feats = feats + speed.reshape(-1, 1, N_CHANNEL)
    return feats + dt.conv1d_same(feats, params["enc_w"]) + params["enc_b"]


def order_mixing(x_order: dt.Tensor, params: Params) -> dt.Tensor:
    """h = Linear(x) + E;  dx = Proj(LocalConv(h));  x_mix = x + lambda * dx."""
    h = linear(x_order, params["mix_in_w"], params["mix_in_b"]) + params["order_emb"]
    h = dt.conv1d_same(h, params["mix_conv_w"]) + params["mix_conv_b"]
    delta = linear(h, params["mix_out_w"], params["mix_out_b"])
    return x_order + params["mix_scale"] * delta

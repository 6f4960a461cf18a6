"""Time-domain branch: embedding, two selective SSM layers, angle->order projection.

Selective SSM layer on a time-major u (T, ..., D), pre-normalized as in a
Mamba block (n_t = u_t / rms(u_t); only the residual sees the raw u_t):

    delta_t = softplus(n_t W_dt + b_dt)            (N, T, D)
    B_t, C_t = n_t W_B + b_B, n_t W_C + b_C        (N, T, S)
    A = -softplus(raw_A)                            (D, S)
    h_t = exp(delta_t A) * h_{t-1} + delta_t B_t n_t
    y_t = sigmoid(n_t W_g + b_g) * (C_t . h_t) + u_t

Without the norm, input-dependent delta/B/C make each layer roughly cubic in
the input amplitude, and inputs a little louder than the training data
(added noise, say) blow the output up by orders of magnitude.

The recurrence is one ``scan-linear`` node.  The ``linear`` variant swaps both
layers for a single positionwise linear map of the same width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dtensor as dt
from .errors import ConfigError
from .frontend import normalized_speed
from .layers import Params, dense_init, inv_softplus, linear
from .preprocess import N_ANGLE, N_CHANNEL, N_ORDER

VARIANTS = ("ssm", "linear")
NORM_EPS = 1e-6


@dataclass
class TemporalConfig:
    d_model: int = 32
    d_state: int = 8
    n_layers: int = 2
    dt_min: float = 1e-3
    dt_max: float = 1e-1


def init_ssm_layer(rng: np.random.Generator, prefix: str, cfg: TemporalConfig) -> Params:
    d, s = cfg.d_model, cfg.d_state
    dt0 = np.exp(rng.uniform(np.log(cfg.dt_min), np.log(cfg.dt_max), size=d))
    a0 = np.tile(np.arange(1, s + 1, dtype=np.float64), (d, 1))
    names = {
        "dt_w": 0.1 * dense_init(rng, d, (d, d)),
        "dt_b": inv_softplus(dt0),
        "B_w": dense_init(rng, d, (d, s)),
        "B_b": np.zeros(s),
        "C_w": dense_init(rng, d, (d, s)),
        "C_b": np.zeros(s),
        "raw_A": inv_softplus(a0),
        "gate_w": dense_init(rng, d, (d, d)),
        "gate_b": np.zeros(d),
    }
    return {f"{prefix}{k}": dt.param(v, f"{prefix}{k}") for k, v in names.items()}


def init_temporal(rng: np.random.Generator, variant: str = "ssm",
                  cfg: TemporalConfig = TemporalConfig()) -> Params:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown temporal variant {variant!r}; expected one of {VARIANTS}")
    d = cfg.d_model
    p = {
        "emb_x_w": dt.param(dense_init(rng, N_CHANNEL, (N_CHANNEL, d)), "emb_x_w"),
        "emb_x_b": dt.param(np.zeros(d), "emb_x_b"),
        "emb_v_w": dt.param(dense_init(rng, N_CHANNEL, (N_CHANNEL, d)), "emb_v_w"),
        "emb_v_b": dt.param(np.zeros(d), "emb_v_b"),
    }
    if variant == "ssm":
        for i in range(cfg.n_layers):
            p.update(init_ssm_layer(rng, f"ssm{i}_", cfg))
    else:
        p["lin_w"] = dt.param(dense_init(rng, d, (d, d)), "lin_w")
        p["lin_b"] = dt.param(np.zeros(d), "lin_b")
    p["out_w"] = dt.param(dense_init(rng, d, (d, N_CHANNEL)), "out_w")
    p["out_b"] = dt.param(np.zeros(N_CHANNEL), "out_b")
    # one angle->order map per channel
    p["proj_w"] = dt.param(dense_init(rng, N_ANGLE, (N_CHANNEL, N_ANGLE, N_ORDER)), "proj_w")
    p["proj_b"] = dt.param(np.zeros((N_ORDER, N_CHANNEL)), "proj_b")
    return p


def ssm_scan(u: dt.Tensor, params: Params, prefix: str = "") -> dt.Tensor:
    """One selective SSM layer on a time-major sequence, (T, D) or (T, N, D)."""
    p = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
    lead, d = u.shape[:-1], u.shape[-1]
    s = p["raw_A"].shape[-1]
    n = u / dt.sqrt(dt.square(u).mean(axis=-1, keepdims=True) + NORM_EPS)
    step = dt.softplus(linear(n, p["dt_w"], p["dt_b"]))
    b_in = linear(n, p["B_w"], p["B_b"])
    c_out = linear(n, p["C_w"], p["C_b"])
    a = -dt.softplus(p["raw_A"])
    a_bar = dt.exp(step.reshape(*lead, d, 1) * a)
    bu = (step * n).reshape(*lead, d, 1) * b_in.reshape(*lead, 1, s)
    h = dt.scan_linear(a_bar, bu, axis=0)
    y = (h @ c_out.reshape(*lead, s, 1)).reshape(*lead, d)
    g = dt.sigmoid(linear(n, p["gate_w"], p["gate_b"]))
    return g * y + u


def temporal_branch(x: np.ndarray, v: np.ndarray, params: Params, variant: str = "ssm",
                    cfg: TemporalConfig = TemporalConfig(), x_scale: float = 1.0) -> dt.Tensor:
    """x (N, 400, 4), v (N, 4) km/h -> y_time (N, 40, 4).

    Internally time-major, (400, N, D), so the scan walks contiguous slices.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown temporal variant {variant!r}; expected one of {VARIANTS}")
    n = len(x)
    seq = np.ascontiguousarray(np.transpose(np.asarray(x, dtype=np.float64), (1, 0, 2))) / x_scale
    u = linear(dt.Tensor(seq), params["emb_x_w"], params["emb_x_b"])
    speed = linear(dt.Tensor(normalized_speed(v)), params["emb_v_w"], params["emb_v_b"])
    u = u + speed.reshape(1, n, cfg.d_model)
    if variant == "ssm":
        for i in range(cfg.n_layers):
            u = ssm_scan(u, params, f"ssm{i}_")
    else:
        u = linear(u, params["lin_w"], params["lin_b"])
    per_step = linear(u, params["out_w"], params["out_b"])  # (400, N, 4)
    by_channel = per_step.transpose(1, 2, 0).reshape(n, N_CHANNEL, 1, N_ANGLE)
    orders = (by_channel @ params["proj_w"]).reshape(n, N_CHANNEL, N_ORDER)
    return orders.transpose(0, 2, 1) + params["proj_b"]

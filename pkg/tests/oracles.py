"""Independent reference implementations shared by several test modules."""

import numpy as np

from pdsovnet import dtensor as dt


def naive_ssm(u, p):
    """Step-by-step selective SSM on a time-major (T, N, D) array."""
    w = {k: v.data for k, v in p.items()}
    x = u
    u = x / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + 1e-6)
    softplus = lambda z: dt.softplus(z).data  # noqa: E731
    sigmoid = lambda z: dt.sigmoid(z).data  # noqa: E731
    step = softplus(u @ w["dt_w"] + w["dt_b"])
    b_in, c_out = u @ w["B_w"] + w["B_b"], u @ w["C_w"] + w["C_b"]
    a = -softplus(w["raw_A"])
    g = sigmoid(u @ w["gate_w"] + w["gate_b"])
    h = np.zeros(u.shape[1:] + a.shape[-1:])
    out = np.empty_like(u)
    for t in range(len(u)):
        a_bar = np.exp(step[t][..., None] * a)
        h = a_bar * h + (step[t] * u[t])[..., None] * b_in[t][..., None, :]
        y = (h @ c_out[t][..., None])[..., 0]
        out[t] = g[t] * y + x[t]
    return out

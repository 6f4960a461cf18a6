"""Full regressor: frontend -> physical branch (+adaptive correction) and temporal branch -> dB head.

Ablation switches (``Variant``) realise the rows of both ablation grids:
``use_physical``/``use_temporal`` drop a branch entirely (no gate
saturation), ``use_mimo=False`` keeps only the diagonal of every coupling
matrix and drops the dW path, ``use_adaptive=False`` removes the correction
branch (beta = 0).
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dtensor as dt
from .adaptive import (AdaptiveConfig, coupling_head, corrected_response, encode_context, gate,
                       init_adaptive, modal_head)
from .errors import ConfigError, DataError
from .frontend import FrontendConfig, init_frontend, order_frontend, order_mixing
from .layers import Params, count
from .physbranch import (PhysConfig, base_response, build_coupling, build_kernels, init_coupling,
                         init_modal, modal_values)
from .temporal import TemporalConfig, init_temporal, temporal_branch

CHECKPOINT_MAGIC = b"PDSOVCK1"
FORMAT_VERSION = 1
DB_PER_NEPER = 20.0 / math.log(10.0)


@dataclass(frozen=True)
class Variant:
    use_physical: bool = True
    use_temporal: bool = True
    use_mimo: bool = True
    use_adaptive: bool = True
    temporal_variant: str = "ssm"

    def __post_init__(self):
        if not (self.use_physical or self.use_temporal):
            raise ConfigError("at least one of use_physical / use_temporal must be true")
        if self.temporal_variant not in ("ssm", "linear"):
            raise ConfigError(f"unknown temporal_variant {self.temporal_variant!r}")

    @property
    def label(self) -> str:
        if not self.use_physical:
            return "time-only"
        if not self.use_temporal:
            base = "phys-only"
        else:
            base = "full" if self.temporal_variant == "ssm" else "full-linear"
        if self.use_mimo and self.use_adaptive:
            return base
        parts = [p for p, on in (("mimo", self.use_mimo), ("adaptive", self.use_adaptive)) if on]
        return f"{base}[{'+'.join(parts) or 'neither'}]"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    phys: PhysConfig = field(default_factory=PhysConfig)
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    head_eps: float = 1e-6
    y_ref: float = 1.0
    fusion_init: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ModelConfig":
        d = d or {}

        def sub(klass, key):
            vals = dict(d.get(key, {}))
            for k, v in vals.items():
                if isinstance(v, list):
                    vals[k] = tuple(v)
            return klass(**vals)

        return cls(frontend=sub(FrontendConfig, "frontend"), phys=sub(PhysConfig, "phys"),
                   adaptive=sub(AdaptiveConfig, "adaptive"), temporal=sub(TemporalConfig, "temporal"),
                   **{k: d[k] for k in ("head_eps", "y_ref", "fusion_init") if k in d})


@dataclass
class ModelState:
    config: ModelConfig
    variant: Variant
    groups: dict[str, Params]
    x_scale: float = 1.0  # temporal-branch input normaliser, set from training data

    def parameters(self) -> list[dt.Tensor]:
        return [p for g in self.groups.values() for p in g.values()]

    def named_parameters(self) -> list[tuple[str, dt.Tensor]]:
        return [(f"{gn}.{pn}", p) for gn, g in self.groups.items() for pn, p in g.items()]

    def copy(self) -> "ModelState":
        groups = {gn: {pn: dt.param(p.data.copy(), p.name) for pn, p in g.items()}
                  for gn, g in self.groups.items()}
        return replace(self, groups=groups)


def init_model(seed: int = 0, variant: Variant = Variant(), config: ModelConfig | None = None) -> ModelState:
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    groups: dict[str, Params] = {}
    if variant.use_physical:
        groups["frontend"] = init_frontend(rng, config.frontend)
        groups["modal"] = init_modal(config.phys)
        coupling = init_coupling(rng, config.phys)
        if not variant.use_mimo:
            coupling = {"diag": coupling["diag"]}
        groups["coupling"] = coupling
        if variant.use_adaptive:
            adaptive = init_adaptive(rng, config.phys.n_modes, config.adaptive)
            if not variant.use_mimo:
                adaptive = {k: v for k, v in adaptive.items() if not k.startswith("coup_")}
            groups["adaptive"] = adaptive
    if variant.use_temporal:
        groups["temporal"] = init_temporal(rng, variant.temporal_variant, config.temporal)
    if variant.use_physical and variant.use_temporal:
        groups["fusion"] = {"a": dt.param(np.array(config.fusion_init), "a")}
    return ModelState(config, variant, groups)


def param_count(state: ModelState | Params) -> int:
    if isinstance(state, ModelState):
        return sum(count(g) for g in state.groups.values())
    return count(state)


@dataclass
class Branches:
    """Intermediate outputs of one forward pass (for tests and diagnostics)."""

    x_order: dt.Tensor | None = None
    x_mix: dt.Tensor | None = None
    y_base: dt.Tensor | None = None
    y_phys: dt.Tensor | None = None
    y_time: dt.Tensor | None = None
    y_lin: dt.Tensor | None = None
    beta: dt.Tensor | None = None
    alpha: dt.Tensor | None = None


def physical_branch(x, v, state: ModelState, out: Branches | None = None) -> dt.Tensor:
    cfg, var, g = state.config, state.variant, state.groups
    x_order = order_frontend(x, v, g["frontend"], cfg.frontend)
    x_mix = order_mixing(x_order, g["frontend"])
    c, z, gain = modal_values(g["modal"])
    k_base = build_kernels(c, z, gain, cfg.phys.kernel_eps)
    w = build_coupling(g["coupling"], use_low_rank=var.use_mimo)
    y_base, z_modes = base_response(x_mix, k_base, w)
    y_phys, beta = y_base, None
    if var.use_adaptive:
        ctx = encode_context(x_mix, g["adaptive"])
        _, k_adp = modal_head(ctx, g["adaptive"], c, z, gain, cfg.adaptive, cfg.phys.kernel_eps)
        dw = coupling_head(ctx, g["adaptive"], cfg.phys.n_modes) if var.use_mimo else None
        beta = gate(g["adaptive"], cfg.adaptive)
        y_phys = corrected_response(x_mix, z_modes, k_base, k_adp, dw, beta, y_base)
    if out is not None:
        out.x_order, out.x_mix, out.y_base, out.y_phys, out.beta = x_order, x_mix, y_base, y_phys, beta
    return y_phys


def db_head(y_lin, eps: float = 1e-6, y_ref: float = 1.0) -> dt.Tensor:
    """20*log10((softplus(y_lin) + eps) / y_ref)."""
    return DB_PER_NEPER * dt.log(dt.softplus(y_lin) + eps) - 20.0 * math.log10(y_ref)


def forward(x: np.ndarray, v: np.ndarray, state: ModelState, out: Branches | None = None) -> dt.Tensor:
    """Predicted roughness spectrum in dB, (N, 40, 4)."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (400, 4) or v.shape != (x.shape[0], 4):
        raise DataError(f"expected x (N, 400, 4) and v (N, 4), got {x.shape} and {v.shape}")
    cfg, var = state.config, state.variant
    y_phys = physical_branch(x, v, state, out) if var.use_physical else None
    y_time = None
    if var.use_temporal:
        y_time = temporal_branch(x, v, state.groups["temporal"], var.temporal_variant,
                                 cfg.temporal, state.x_scale)
    if y_phys is not None and y_time is not None:
        alpha = dt.sigmoid(state.groups["fusion"]["a"])
        y_lin = (1.0 - alpha) * y_phys + alpha * y_time
    else:
        alpha = None
        y_lin = y_phys if y_phys is not None else y_time
    if out is not None:
        out.y_time, out.y_lin, out.alpha = y_time, y_lin, alpha
    return db_head(y_lin, cfg.head_eps, cfg.y_ref)


def mae_loss(pred: dt.Tensor, y: np.ndarray) -> dt.Tensor:
    return dt.abs_(pred - dt.Tensor(y)).mean()


def predict(x, v, state: ModelState, batch_size: int = 64) -> np.ndarray:
    """Gradient-free forward in chunks."""
    outs = []
    with dt.no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(forward(x[i:i + batch_size], v[i:i + batch_size], state).data)
    if not outs:
        return np.zeros((0, 40, 4))
    return np.concatenate(outs)


# ---------------------------------------------------------------------------
# checkpoint: MAGIC | u64 LE header length | JSON header | float64 LE blob
# Parameters are stored in ``named_parameters()`` order, listed in the header.


def checkpoint_bytes(state: ModelState, meta: dict | None = None) -> bytes:
    names = state.named_parameters()
    header = {
        "format_version": FORMAT_VERSION,
        "config": state.config.to_dict(),
        "variant": state.variant.to_dict(),
        "x_scale": state.x_scale,
        "params": [[n, list(p.shape)] for n, p in names],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<Q", len(head)))
    buf.write(head)
    for _, p in names:
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return buf.getvalue()


def state_from_bytes(raw: bytes) -> tuple[ModelState, dict]:
    raw = bytes(raw)
    if raw[:8] != CHECKPOINT_MAGIC or len(raw) < 16:
        raise DataError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"checkpoint header is unreadable: {exc}") from None
    if (len(raw) - 16 - hlen) % 8:
        raise DataError("checkpoint blob is not a whole number of float64 values")
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {header.get('format_version')}")
    variant = Variant(**header["variant"])
    state = init_model(0, variant, ModelConfig.from_dict(header["config"]))
    state.x_scale = float(header["x_scale"])
    named = dict(state.named_parameters())
    expected = [[n, list(p.shape)] for n, p in state.named_parameters()]
    if header["params"] != expected:
        raise DataError("checkpoint parameter layout does not match this model version")
    blob = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    offset = 0
    for name, shape in header["params"]:
        size = int(np.prod(shape)) if shape else 1
        if offset + size > len(blob):
            raise DataError("checkpoint blob is truncated")
        named[name].data = blob[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != len(blob):
        raise DataError("checkpoint blob has trailing data")
    return state, header.get("meta", {})

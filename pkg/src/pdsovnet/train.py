"""AdamW training loop, metrics and wheel-group evaluation.

Training runs a fixed number of epochs (no early stopping, no schedule) of
shuffled mini-batch AdamW on the dB-domain MAE.  Two checkpoints come out of
a run: the final one and the first one whose end-of-epoch full-train MAE
reaches ``threshold``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dtensor as dt
from .errors import ConfigError, DataError
from .model import ModelConfig, ModelState, Variant, checkpoint_bytes, forward, init_model, mae_loss, predict
from .preprocess import SampleBatch


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-2
    weight_decay: float = 1e-4
    seed: int = 0
    n_runs: int = 5
    threshold: float = 0.8
    eval_batch: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.n_runs < 1:
            raise ConfigError(f"n_runs must be >= 1, got {self.n_runs}")
        if not self.threshold > 0:
            raise ConfigError(f"threshold must be > 0, got {self.threshold}")
        if self.batch_size < 1 or not self.lr > 0 or self.weight_decay < 0:
            raise ConfigError("batch_size >= 1, lr > 0 and weight_decay >= 0 are required")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, dt.Tensor], grads: dict[str, np.ndarray],
               opt: OptimizerState) -> OptimizerState:
    """One decoupled-weight-decay Adam update, in place on ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.t
    c2 = 1.0 - b2 ** opt.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise DataError(f"gradient shape {g.shape} does not match parameter {name!r} {p.data.shape}")
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        p.data = p.data - step - opt.lr * opt.weight_decay * p.data
    return opt


# ---------------------------------------------------------------------------
# metrics


def mae(pred: np.ndarray, y: np.ndarray) -> float:
    pred, y = np.asarray(pred, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise DataError(f"prediction {pred.shape} and target {y.shape} shapes differ")
    return float(np.mean(np.abs(pred - y)))


def r2(pred: np.ndarray, y: np.ndarray) -> float:
    """Coefficient of determination over the flattened entries; NaN if y is constant."""
    pred, y = np.asarray(pred, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise DataError(f"prediction {pred.shape} and target {y.shape} shapes differ")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        warnings.warn("r2 undefined for a constant target; returning NaN", RuntimeWarning, stacklevel=2)
        return math.nan
    return 1.0 - float(np.sum((pred - y) ** 2)) / ss_tot


@dataclass
class EvalReport:
    mae: float
    r2: float
    per_order: np.ndarray  # (40,)
    per_channel: np.ndarray  # (4,)
    per_cell: np.ndarray  # (40, 4)
    n: int

    def summary(self) -> dict:
        return {"mae": self.mae, "r2": self.r2, "n": self.n}


def evaluate(state: ModelState, batch: SampleBatch, train_groups=None, as_validation: bool = False,
             batch_size: int = 64) -> EvalReport:
    """Aggregate and per-order / per-channel absolute errors of ``state`` on ``batch``.

    With ``as_validation`` the batch must not contain any of ``train_groups``.
    """
    if as_validation:
        leaked = sorted(set(np.asarray(batch.group_ids).tolist()) & set(train_groups or ()))
        if leaked:
            raise ConfigError(f"split hygiene violated: validation batch contains training groups {leaked}")
    if len(batch) == 0:
        raise ConfigError("cannot evaluate an empty batch")
    if batch.y.shape[1:] != (40, 4):
        raise DataError(f"labels must be (N, 40, 4), got {batch.y.shape}")
    pred = predict(batch.x, batch.v, state, batch_size)
    err = np.abs(pred - batch.y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        score = r2(pred, batch.y)
    return EvalReport(mae=mae(pred, batch.y), r2=score, per_order=err.mean(axis=(0, 2)),
                      per_channel=err.mean(axis=(0, 1)), per_cell=err.mean(axis=0), n=len(batch))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class RunResult:
    history: list[dict]
    final_state: ModelState
    threshold_state: ModelState | None
    threshold_epoch: int | None
    config: TrainConfig
    variant: Variant

    @property
    def final_train_mae(self) -> float:
        return [r for r in self.history if r["split"] == "train"][-1]["mae"]

    @property
    def final_val_mae(self) -> float:
        rows = [r for r in self.history if r["split"] == "val"]
        return rows[-1]["mae"] if rows else math.nan

    def checkpoints(self) -> dict[str, bytes]:
        out = {"final": checkpoint_bytes(self.final_state, self._meta("final", self.config.epochs))}
        if self.threshold_state is not None:
            out["threshold"] = checkpoint_bytes(self.threshold_state, self._meta("threshold", self.threshold_epoch))
        return out

    def _meta(self, kind: str, epoch: int) -> dict:
        rows = {r["split"]: r for r in self.history if r["epoch"] == epoch}
        return {"kind": kind, "epoch": epoch, "train": self.config.to_dict(),
                "metrics": {s: {"mae": r["mae"], "r2": r["r2"]} for s, r in rows.items()}}


def _param_grads(grads: dt.Gradients, named: dict[str, dt.Tensor]) -> dict[str, np.ndarray]:
    return {name: grads[p] for name, p in named.items()}


def train(train_set: SampleBatch, val_set: SampleBatch | None, config: TrainConfig = TrainConfig(),
          variant: Variant = Variant(), model_config: ModelConfig | None = None,
          run: int = 0, log=None) -> RunResult:
    """Train one model; deterministic given (data, config, variant)."""
    if len(train_set) == 0:
        raise ConfigError("training split is empty")
    if val_set is not None and len(val_set) == 0:
        raise ConfigError("validation split is empty")
    if val_set is not None:
        shared = set(np.asarray(train_set.group_ids).tolist()) & set(np.asarray(val_set.group_ids).tolist())
        if shared:
            raise ConfigError(f"split hygiene violated: groups {sorted(shared)} in both train and val")
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    state = init_model(int(init_seq.generate_state(1)[0]), variant, model_config)
    state.x_scale = float(np.std(train_set.x)) or 1.0
    rng = np.random.default_rng(shuffle_seq)
    opt = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    named = dict(state.named_parameters())
    train_groups = sorted(set(np.asarray(train_set.group_ids).tolist()))
    history: list[dict] = []
    threshold_state, threshold_epoch = None, None
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            with dt.Graph() as graph:
                loss = mae_loss(forward(train_set.x[idx], train_set.v[idx], state), train_set.y[idx])
            adamw_step(named, _param_grads(graph.backward(loss), named), opt)
        rep = evaluate(state, train_set, batch_size=config.eval_batch)
        history.append({"run": run, "epoch": epoch, "split": "train", "mae": rep.mae, "r2": rep.r2})
        if val_set is not None:
            vrep = evaluate(state, val_set, train_groups, as_validation=True, batch_size=config.eval_batch)
            history.append({"run": run, "epoch": epoch, "split": "val", "mae": vrep.mae, "r2": vrep.r2})
        if threshold_state is None and rep.mae <= config.threshold:
            threshold_state, threshold_epoch = state.copy(), epoch
        if log is not None:
            log(history[-2:] if val_set is not None else history[-1:])
    return RunResult(history, state, threshold_state, threshold_epoch, config, variant)


def history_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["run", "epoch", "split", "mae", "r2"], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k])
                         for k in ("run", "epoch", "split", "mae", "r2")})
    return buf.getvalue()

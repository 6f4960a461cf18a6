"""Experiment orchestration: ablation grids, noise sweeps, report tables.

Every report row carries the variant flags, seed, noise level, split,
metric and value, together with the config and bundle hashes needed to
reproduce it.  Reports render to CSV and to a fixed-width text table; the
CLI decides where they are written.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bundle import DatasetBundle, bundle_hash, config_hash
from .errors import ProtocolError
from .model import ModelConfig, ModelState, Variant, predict, state_from_bytes
from .preprocess import SampleBatch
from .synth import add_noise
from .train import RunResult, TrainConfig, mae, train

NOISE_LEVELS = (2.0, 1.0, -1.0, -2.0)

TABLE3 = {
    "time-only": Variant(use_physical=False),
    "phys-only": Variant(use_temporal=False),
    "full": Variant(),
}
TABLE4 = {
    "full": Variant(),
    "mimo-only": Variant(use_adaptive=False),
    "adaptive-only": Variant(use_mimo=False),
    "neither": Variant(use_mimo=False, use_adaptive=False),
}
TEMPORAL_VARIANTS = {"ssm": Variant(), "linear": Variant(temporal_variant="linear")}

COLUMNS = ["table", "variant", "use_physical", "use_temporal", "use_mimo", "use_adaptive",
           "temporal_variant", "seed", "noise_db", "split", "metric", "value", "config_hash", "bundle_hash"]


@dataclass
class ExperimentReport:
    title: str
    records: list[dict] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def add(self, variant_name: str, variant: Variant, seed: int, split: str, metric: str, value: float,
            noise_db=None, table: str = "", **hashes) -> None:
        rec = {"table": table, "variant": variant_name, **variant.to_dict(), "seed": seed,
               "noise_db": noise_db, "split": split, "metric": metric, "value": float(value),
               "config_hash": hashes.get("config_hash", ""), "bundle_hash": hashes.get("bundle_hash", "")}
        self.records.append(rec)

    def select(self, **where) -> list[dict]:
        return [r for r in self.records if all(r.get(k) == v for k, v in where.items())]

    def values(self, **where) -> np.ndarray:
        return np.array([r["value"] for r in self.select(**where)], dtype=np.float64)

    def aggregate(self, keys=("table", "variant", "noise_db", "split", "metric")) -> list[dict]:
        """Mean/std/count of ``value`` per distinct key tuple, in first-seen order."""
        groups: dict[tuple, list[float]] = {}
        for r in self.records:
            groups.setdefault(tuple(r[k] for k in keys), []).append(r["value"])
        out = []
        for key, vals in groups.items():
            arr = np.array(vals)
            finite = arr[np.isfinite(arr)]
            out.append({**dict(zip(keys, key)), "mean": float(finite.mean()) if len(finite) else math.nan,
                        "std": float(finite.std()) if len(finite) else math.nan, "n": len(finite)})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.notes.items():
            buf.write(f"# {k}: {v}\n")
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            w.writerow({k: ("inf" if isinstance(r[k], float) and math.isinf(r[k]) else r[k]) for k in COLUMNS})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"title": self.title, "records": self.records, "notes": self.notes})

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(d["title"], d["records"], d["notes"])

    def table(self) -> str:
        rows = self.aggregate()
        head = f"{'table':<7} {'variant':<14} {'noise_db':>8} {'split':<6} {'metric':<7} {'mean':>9} {'std':>8} {'n':>3}"
        lines = [self.title, head, "-" * len(head)]
        for r in rows:
            noise = "-" if r["noise_db"] is None else f"{r['noise_db']:g}"
            lines.append(f"{r['table']:<7} {r['variant']:<14} {noise:>8} {r['split']:<6} {r['metric']:<7} "
                         f"{r['mean']:>9.4f} {r['std']:>8.4f} {r['n']:>3}")
        for k, v in self.notes.items():
            lines.append(f"# {k}: {v}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------


def _hashes(bundle: DatasetBundle, tc: TrainConfig, variant: Variant, model_config: ModelConfig | None) -> dict:
    cfg = {"train": tc.to_dict(), "variant": variant.to_dict(),
           "model": (model_config or ModelConfig()).to_dict()}
    return {"config_hash": config_hash(cfg), "bundle_hash": bundle_hash(bundle)[:16]}


def run_seed(bundle: DatasetBundle, tc: TrainConfig, variant: Variant, seed: int,
             model_config: ModelConfig | None = None, log=None) -> RunResult:
    cfg = TrainConfig(**{**tc.to_dict(), "seed": seed})
    return train(bundle.train(), bundle.val(), cfg, variant, model_config, run=seed, log=log)


def seeds_for(tc: TrainConfig) -> list[int]:
    return [tc.seed + i for i in range(tc.n_runs)]


def ablation_suite(bundle: DatasetBundle, tc: TrainConfig = TrainConfig(),
                   model_config: ModelConfig | None = None, log=None,
                   runs: dict | None = None) -> ExperimentReport:
    """Table-3 rows (time-only, phys-only, full) and the Table-4 2x2 grid, ``n_runs`` seeds each.

    The full model appears in both tables; its identical runs are trained once and reported twice.
    ``runs`` is an optional (variant, seed) -> RunResult cache shared with other runners.
    """
    report = ExperimentReport("ablation suite")
    schedule = [("table3", n, v) for n, v in TABLE3.items()] + [("table4", n, v) for n, v in TABLE4.items()]
    report.notes["scheduled_runs"] = len(schedule) * tc.n_runs
    cache: dict[tuple, RunResult] = {} if runs is None else runs
    before = len(cache)
    for table, name, variant in schedule:
        hashes = _hashes(bundle, tc, variant, model_config)
        for seed in seeds_for(tc):
            key = (variant, seed)
            if key not in cache:
                cache[key] = run_seed(bundle, tc, variant, seed, model_config)
                if log is not None:
                    log(f"{name} seed={seed} val_mae={cache[key].final_val_mae:.4f}")
            res = cache[key]
            last = {r["split"]: r for r in res.history if r["epoch"] == tc.epochs}
            for split, row in last.items():
                report.add(name, variant, seed, split, "mae", row["mae"], table=table, **hashes)
                report.add(name, variant, seed, split, "r2", row["r2"], table=table, **hashes)
    report.notes["executed_runs"] = len(cache) - before
    return report


def _noisy_mae(state: ModelState, batch: SampleBatch, level: float, rng_seed) -> float:
    rng = np.random.default_rng(rng_seed)
    x = add_noise(batch.x, level, rng)
    return mae(predict(x, batch.v, state), batch.y)


def noise_sweep(checkpoint, batch: SampleBatch, levels=NOISE_LEVELS, seeds=(0, 1, 2, 3, 4),
                variant_name: str = "", control: bool = True) -> ExperimentReport:
    """MAE under white noise at per-sample, per-channel SNR ``levels`` (dB).

    ``checkpoint`` must be the threshold checkpoint (bytes or a ModelState);
    ``None`` means the run never reached the threshold.
    """
    if checkpoint is None:
        raise ProtocolError("noise sweep requires the threshold checkpoint (weights saved when the "
                            "training MAE first reached the threshold); none was produced")
    state = state_from_bytes(checkpoint)[0] if isinstance(checkpoint, (bytes, bytearray)) else checkpoint
    report = ExperimentReport("noise sweep", notes={"noise": "white Gaussian, SNR per sample and per channel"})
    all_levels = ([math.inf] if control else []) + [float(x) for x in levels]
    for seed in seeds:
        for i, level in enumerate(all_levels):
            value = _noisy_mae(state, batch, level, [seed, i])
            report.add(variant_name or state.variant.label, state.variant, seed, "eval", "mae", value,
                       noise_db=level)
    return report


def monotone_in_noise(values_by_level: list[float]) -> bool:
    """True if MAE never decreases as SNR falls (levels listed from high to low SNR)."""
    return all(b >= a for a, b in zip(values_by_level, values_by_level[1:]))


def linear_vs_ssm_noise(bundle: DatasetBundle, tc: TrainConfig = TrainConfig(), levels=NOISE_LEVELS,
                        noise_seeds=(0, 1, 2), model_config: ModelConfig | None = None,
                        log=None, runs: dict | None = None) -> ExperimentReport:
    """Train both temporal variants per seed to the threshold checkpoint, then noise-sweep both.

    Noise is evaluated on the validation split.  A variant that never reaches
    the threshold is recorded (metric ``threshold_reached`` = 0) and skipped.
    ``runs`` is the same cache as in :func:`ablation_suite`; callers must only
    share it between calls with the same bundle and training config.
    """
    report = ExperimentReport("linear vs ssm temporal branch under noise",
                              notes={"noise": "white Gaussian, SNR per sample and per channel",
                                     "checkpoint": f"first epoch with train MAE <= {tc.threshold}"})
    val = bundle.val()
    for name, variant in TEMPORAL_VARIANTS.items():
        hashes = _hashes(bundle, tc, variant, model_config)
        for seed in seeds_for(tc):
            key = (variant, seed)
            if runs is not None and key in runs:
                res = runs[key]
            else:
                res = run_seed(bundle, tc, variant, seed, model_config)
                if runs is not None:
                    runs[key] = res
            reached = res.threshold_state is not None
            report.add(name, variant, seed, "train", "threshold_reached", float(reached), **hashes)
            if log is not None:
                log(f"{name} seed={seed} threshold_epoch={res.threshold_epoch}")
            if not reached:
                continue
            for level in levels:
                vals = [_noisy_mae(res.threshold_state, val, level, [seed, 1000 + k]) for k in noise_seeds]
                report.add(name, variant, seed, "val", "mae", float(np.mean(vals)), noise_db=float(level), **hashes)
    return report


def paired_deltas(report: ExperimentReport, levels=NOISE_LEVELS) -> list[dict]:
    """Per-(seed, level) MAE(ssm) - MAE(linear) for seeds where both variants were swept."""
    out = []
    seeds = sorted({r["seed"] for r in report.records})
    for seed in seeds:
        for level in levels:
            s = report.values(variant="ssm", seed=seed, noise_db=float(level), metric="mae")
            lin = report.values(variant="linear", seed=seed, noise_db=float(level), metric="mae")
            if len(s) and len(lin):
                d = float(s[0] - lin[0])
                out.append({"seed": seed, "noise_db": float(level), "delta": d, "ssm_better": d <= 0})
    return out


def trend_suite(bundle: DatasetBundle, tc: TrainConfig = TrainConfig(),
                model_config: ModelConfig | None = None, log=None) -> dict[str, ExperimentReport]:
    """Both ablation tables plus the linear-vs-ssm noise comparison.

    The ssm runs of the noise comparison are the full-model ablation runs, so
    ``n_runs`` linear-variant runs are the only extra training.
    """
    runs: dict = {}
    return {"ablation": ablation_suite(bundle, tc, model_config, log=log, runs=runs),
            "noise": linear_vs_ssm_noise(bundle, tc, model_config=model_config, log=log, runs=runs)}

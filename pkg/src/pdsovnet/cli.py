"""Command line entry point.

    pdsovnet gen           --config default --seed 0 --out data/       synthetic bundle (add --raw for raw mode)
    pdsovnet preprocess    --data raw/ --out data/                     raw-mode bundle -> cached bundle
    pdsovnet train         --data data/ --out run/                     checkpoints + history.csv
    pdsovnet eval          --data data/ --checkpoint run/checkpoint_final.bin --out ev/
    pdsovnet ablate        --data data/ --out abl/                     Table-3/4 variant grid
    pdsovnet noise-sweep   --data data/ --run run/ --out ns/           needs the threshold checkpoint
    pdsovnet linear-vs-ssm --data data/ --out lvs/
    pdsovnet bench         --out bench/                                parameter count + latency

Every command accepts ``--config`` (a JSON file, or ``default``), ``--seed``
and ``--out``.  Exit codes: 0 success, 1 usage error, 2 data/config/protocol
error.  This module is the only place that writes files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import bundle as bundle_io
from .errors import ConfigError, DataError, ProtocolError
from .experiments import NOISE_LEVELS, ablation_suite, linear_vs_ssm_noise, noise_sweep, paired_deltas
from .model import ModelConfig, Variant, init_model, param_count, predict, state_from_bytes
from .preprocess import SampleBatch, build_dataset
from .synth import SynthConfig, generate_dataset, generate_raw
from .train import TrainConfig, evaluate, history_csv, train

log = logging.getLogger("pdsovnet")

CONFIG_SECTIONS = ("synth", "train", "variant", "model", "split", "sweep")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_help()}")


# ---------------------------------------------------------------------------
# config


def load_config(spec: str | None) -> dict:
    """``default``/None -> {}; otherwise a JSON object with optional sections."""
    if spec in (None, "default"):
        return {}
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"config file not found: {spec}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {spec} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; expected {list(CONFIG_SECTIONS)}")
    return cfg


def _build(klass, values: dict | None, what: str):
    values = dict(values or {})
    fields = klass.__dataclass_fields__
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {what} keys {sorted(unknown)}")
    for k, v in values.items():
        if isinstance(v, list):
            values[k] = tuple(v)
    return klass(**values)


def synth_config(cfg: dict, seed: int | None) -> SynthConfig:
    sc = SynthConfig.from_dict(cfg.get("synth", {})) if cfg.get("synth") else SynthConfig()
    if seed is not None:
        sc = SynthConfig.from_dict({**sc.to_dict(), "seed": seed})
    return sc


def train_config(cfg: dict, seed: int | None) -> TrainConfig:
    values = dict(cfg.get("train", {}))
    if seed is not None:
        values["seed"] = seed
    return _build(TrainConfig, values, "train")


def variant_of(cfg: dict) -> Variant:
    return _build(Variant, cfg.get("variant"), "variant")


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig.from_dict(cfg.get("model"))


# ---------------------------------------------------------------------------
# io helpers


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_files(root: Path, files: dict[str, bytes]) -> None:
    for rel, data in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")


def _load_bundle(args, cfg: dict) -> bundle_io.DatasetBundle:
    if not args.data:
        raise UsageError(f"{args.command}: --data <bundle dir> is required")
    b = bundle_io.read_dir(args.data)
    if cfg.get("split"):
        b = b.with_split(cfg["split"])
    return b


def _read_checkpoint(path: str):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"checkpoint not found: {path}")
    return state_from_bytes(p.read_bytes())


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, cfg) -> None:
    sc = synth_config(cfg, args.seed)
    out = _out_dir(args.out)
    if args.raw:
        raw = generate_raw(sc, seconds=args.seconds)
        b = bundle_io.DatasetBundle(SampleBatch.empty(), raw["split"], {**sc.to_dict(), "mode": "raw"},
                                    sc.label_ref_mm, raw["records"], raw["profiles"])
    else:
        data = generate_dataset(sc)
        b = bundle_io.DatasetBundle(data.batch, data.split, sc.to_dict(), sc.label_ref_mm)
    _write_files(out, bundle_io.to_files(b))
    log.info("wrote bundle with %d samples to %s", len(b.batch), out)


def cmd_preprocess(args, cfg) -> None:
    raw = _load_bundle(args, cfg)
    if not raw.raw_records:
        raise DataError(f"{args.data} has no raw-mode records")
    tr, va = build_dataset(raw.raw_records, raw.raw_profiles, raw.split, ref=raw.label_ref_mm)
    batch = SampleBatch.concat([tr, va])
    if len(batch) == 0:
        raise DataError("no complete revolution survived the speed window")
    gen = {**(raw.generator or {}), "mode": "preprocessed"}
    b = bundle_io.DatasetBundle(batch, raw.split, gen, raw.label_ref_mm)
    _write_files(_out_dir(args.out), bundle_io.to_files(b))
    log.info("preprocessed %d revolutions (%d train, %d val)", len(batch), len(tr), len(va))


def _run_manifest(args, cfg, tc, variant, mc, b, res) -> dict:
    return {"train": tc.to_dict(), "variant": variant.to_dict(), "model": mc.to_dict(),
            "bundle": str(args.data), "bundle_hash": bundle_io.bundle_hash(b),
            "config_hash": bundle_io.config_hash({"train": tc.to_dict(), "variant": variant.to_dict(),
                                                  "model": mc.to_dict()}),
            "param_count": param_count(res.final_state), "threshold_epoch": res.threshold_epoch,
            "threshold_reached": res.threshold_state is not None,
            "final": {"train_mae": res.final_train_mae, "val_mae": res.final_val_mae}}


def cmd_train(args, cfg) -> None:
    b = _load_bundle(args, cfg)
    tc, variant, mc = train_config(cfg, args.seed), variant_of(cfg), model_config(cfg)
    out = _out_dir(args.out)
    res = train(b.train(), b.val(), tc, variant, mc, run=tc.seed,
                log=lambda rows: log.info("epoch %d  %s", rows[0]["epoch"],
                                          "  ".join(f"{r['split']} mae={r['mae']:.4f} r2={r['r2']:.4f}"
                                                    for r in rows)))
    for kind, blob in res.checkpoints().items():
        (out / f"checkpoint_{kind}.bin").write_bytes(blob)
    (out / "history.csv").write_text(history_csv(res.history))
    _write_json(out / "run.json", _run_manifest(args, cfg, tc, variant, mc, b, res))
    if res.threshold_state is None:
        log.warning("training MAE never reached %.3g; no threshold checkpoint written", tc.threshold)


def cmd_eval(args, cfg) -> None:
    if not args.checkpoint:
        raise UsageError("eval: --checkpoint is required")
    b = _load_bundle(args, cfg)
    state, meta = _read_checkpoint(args.checkpoint)
    split = args.split
    batch = b.batch if split == "all" else b.part(split)
    train_groups = [g for g, s in b.split.items() if s == "train"]
    rep = evaluate(state, batch, train_groups, as_validation=(split == "val"))
    out = _out_dir(args.out)
    _write_json(out / "eval.json", {"split": split, **rep.summary(), "per_order_mae": rep.per_order,
                                    "per_channel_mae": rep.per_channel, "checkpoint_meta": meta})
    lines = ["order,mae"] + [f"{k + 1},{v!r}" for k, v in enumerate(rep.per_order)]
    (out / "per_order.csv").write_text("\n".join(lines) + "\n")
    log.info("%s: mae=%.4f r2=%.4f (n=%d)", split, rep.mae, rep.r2, rep.n)


def cmd_ablate(args, cfg) -> None:
    b = _load_bundle(args, cfg)
    tc, mc = train_config(cfg, args.seed), model_config(cfg)
    report = ablation_suite(b, tc, mc, log=log.info)
    out = _out_dir(args.out)
    (out / "ablation.csv").write_text(report.to_csv())
    (out / "ablation.txt").write_text(report.table())
    print(report.table())


def cmd_noise_sweep(args, cfg) -> None:
    b = _load_bundle(args, cfg)
    sweep = cfg.get("sweep", {})
    path = Path(args.checkpoint) if args.checkpoint else (Path(args.run) / "checkpoint_threshold.bin" if args.run else None)
    if path is None:
        raise UsageError("noise-sweep: give --run <train output dir> or --checkpoint <threshold checkpoint>")
    if not path.is_file():
        raise ProtocolError(f"{path} not found: the noise sweep must start from the threshold checkpoint "
                            "saved when the training MAE first reached the threshold")
    state, meta = state_from_bytes(path.read_bytes())
    if meta.get("kind") not in (None, "threshold"):
        raise ProtocolError(f"{path} is a {meta.get('kind')!r} checkpoint; the noise sweep requires the threshold checkpoint")
    seeds = [(args.seed or 0) + i for i in range(int(sweep.get("n_seeds", 5)))]
    report = noise_sweep(state, b.val(), sweep.get("levels", NOISE_LEVELS), seeds)
    out = _out_dir(args.out)
    (out / "noise_sweep.csv").write_text(report.to_csv())
    (out / "noise_sweep.txt").write_text(report.table())
    print(report.table())


def cmd_linear_vs_ssm(args, cfg) -> None:
    b = _load_bundle(args, cfg)
    tc, mc = train_config(cfg, args.seed), model_config(cfg)
    sweep = cfg.get("sweep", {})
    report = linear_vs_ssm_noise(b, tc, sweep.get("levels", NOISE_LEVELS), model_config=mc, log=log.info)
    out = _out_dir(args.out)
    (out / "linear_vs_ssm.csv").write_text(report.to_csv())
    deltas = paired_deltas(report, sweep.get("levels", NOISE_LEVELS))
    lines = [report.table(), "seed  noise_db  ssm-linear"]
    lines += [f"{d['seed']:>4}  {d['noise_db']:>8g}  {d['delta']:+.4f}" for d in deltas]
    (out / "linear_vs_ssm.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_bench(args, cfg) -> None:
    mc = model_config(cfg)
    rng = np.random.default_rng(args.seed or 0)
    x = rng.standard_normal((args.batch, 400, 4))
    v = np.full((args.batch, 4), 300.0)
    rows = []
    variants = {"full": Variant(), "full-linear": Variant(temporal_variant="linear"),
                "phys-only": Variant(use_temporal=False), "time-only": Variant(use_physical=False)}
    for name, var in variants.items():
        state = init_model(args.seed or 0, var, mc)
        predict(x[:2], v[:2], state)  # warm-up
        t0 = time.perf_counter()
        for _ in range(args.repeats):
            predict(x, v, state, batch_size=args.batch)
        per_sample = (time.perf_counter() - t0) / (args.repeats * args.batch)
        rows.append({"variant": name, "params": param_count(state), "params_m": param_count(state) / 1e6,
                     "latency_ms_per_sample": 1e3 * per_sample})
    out = _out_dir(args.out)
    _write_json(out / "bench.json", {"batch": args.batch, "repeats": args.repeats, "rows": rows})
    text = "\n".join([f"{'variant':<12} {'params':>9} {'params(M)':>9} {'ms/sample':>10}"] +
                     [f"{r['variant']:<12} {r['params']:>9d} {r['params_m']:>9.3f} {r['latency_ms_per_sample']:>10.3f}"
                      for r in rows])
    (out / "bench.txt").write_text(text + "\n")
    print(text)


COMMANDS = {"gen": cmd_gen, "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "noise-sweep": cmd_noise_sweep, "linear-vs-ssm": cmd_linear_vs_ssm,
            "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdsovnet", description="PD-SOVNet experiments on synthetic or preprocessed bundles")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default="default", help="JSON config file or 'default'")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out")
        if name != "gen" and name != "bench":
            p.add_argument("--data", help="dataset bundle directory")
        if name == "gen":
            p.add_argument("--raw", action="store_true", help="emit raw-mode time series instead")
            p.add_argument("--seconds", type=int, default=4, help="in-window seconds per raw record")
        if name in ("eval", "noise-sweep"):
            p.add_argument("--checkpoint")
        if name == "eval":
            p.add_argument("--split", choices=("train", "val", "all"), default="val")
        if name == "noise-sweep":
            p.add_argument("--run", help="train output directory holding checkpoint_threshold.bin")
        if name == "bench":
            p.add_argument("--batch", type=int, default=16)
            p.add_argument("--repeats", type=int, default=3)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ConfigError, DataError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

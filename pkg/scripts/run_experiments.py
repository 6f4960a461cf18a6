"""Ablation tables and the linear-vs-ssm noise comparison on the default synthetic bundle.

Writes ablation.csv/.txt and linear_vs_ssm.csv/.txt to --out.  The full-model
runs are shared between both experiments.

    python3 scripts/run_experiments.py --out results/ [--runs 5] [--epochs 30]
"""

import argparse
import logging
from pathlib import Path

from pdsovnet.bundle import DatasetBundle
from pdsovnet.experiments import paired_deltas, trend_suite
from pdsovnet.synth import SynthConfig, generate_dataset
from pdsovnet.train import TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0, help="first training seed")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    data = generate_dataset(SynthConfig())
    bundle = DatasetBundle(data.batch, data.split, data.config.to_dict())
    tc = TrainConfig(epochs=args.epochs, n_runs=args.runs, seed=args.seed)
    reports = trend_suite(bundle, tc, log=logging.info)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rep in reports.items():
        (out / f"{name}.csv").write_text(rep.to_csv())
        (out / f"{name}.txt").write_text(rep.table())
        print(rep.table())
    for d in paired_deltas(reports["noise"]):
        print(f"seed {d['seed']}  {d['noise_db']:+g} dB  ssm - linear = {d['delta']:+.4f}")


if __name__ == "__main__":
    main()

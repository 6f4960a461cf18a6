"""Closed-loop sanity check: train on a noiseless oracle the model can represent.

Prints the best and final end-of-epoch training MAE per seed and how many
seeds get below 1 dB within the epoch budget.

    python3 scripts/learnability.py [--seeds 5] [--epochs 30]
"""

import argparse
import time

from pdsovnet.synth import generate_dataset, in_class_config
from pdsovnet.train import TrainConfig, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()
    passed = 0
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        data = generate_dataset(in_class_config(seed=seed))
        res = train(data.train(), None, TrainConfig(epochs=args.epochs, seed=seed, n_runs=1))
        best = min(r["mae"] for r in res.history)
        ok = best < 1.0
        passed += ok
        print(f"seed {seed}: best train MAE {best:.4f} dB, final {res.final_train_mae:.4f} dB  "
              f"({'ok' if ok else 'above 1 dB'}, {time.perf_counter() - t0:.0f} s)", flush=True)
    print(f"{passed}/{args.seeds} seeds below 1 dB")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Natural vs adversarial training on the synthetic two-class task.

Trains twin models from the same initialization (one with a zero-budget
attack, one with PGD-10 at 0.031), evaluates both under PGD-20, and prints
the robust-accuracy gap.

Usage: python scripts/robust_gap_experiment.py [--epochs 4] [--out-dir out]
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from wavetrain.attacks import AttackConfig
from wavetrain.data import synthetic_dataset
from wavetrain.evaluation import accuracy
from wavetrain.model import ModelConfig, build_model
from wavetrain.storage import write_csv
from wavetrain.training import TrainConfig, adversarial_train


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--n-train", type=int, default=2000)
    parser.add_argument("--n-val", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default="out")
    args = parser.parse_args()

    full = synthetic_dataset(2, args.n_train + args.n_val, seed=args.seed)
    train = full.subset(np.arange(args.n_train))
    val = full.subset(np.arange(args.n_train, len(full)))

    model_cfg = ModelConfig(depth=1, width=1, num_classes=2, wavelet_base="haar",
                            wap_position="after_first_conv")
    eval_attack = AttackConfig(epsilon=0.031, step_size=2 / 255, steps=20,
                               random_init=True)

    rows = []
    for name, eps in (("natural", 0.0), ("adversarial", 0.031)):
        cfg = TrainConfig(
            epochs=args.epochs, batch_size=64, lr_initial=0.1,
            train_attack=AttackConfig(epsilon=eps, step_size=2 / 255, steps=10,
                                      random_init=eps > 0),
            seed=args.seed,
        )
        t0 = time.time()
        model, _ = adversarial_train(build_model(model_cfg, seed=args.seed),
                                     train, val, cfg)
        clean = accuracy(model, val)
        robust = accuracy(model, val, attack=eval_attack, seed=42)
        rows.append((name, clean, robust, time.time() - t0))
        print(f"{name:12s} clean {clean:.3f}  robust(PGD-20) {robust:.3f}  "
              f"[{rows[-1][3]:.0f}s]")

    gap = rows[1][2] - rows[0][2]
    print(f"robust-accuracy gap: {gap:+.3f}")
    os.makedirs(args.out_dir, exist_ok=True)
    write_csv(os.path.join(args.out_dir, "robust_gap.csv"), "robust-gap",
              ("variant", "clean_acc", "robust_acc", "train_seconds"), rows)


if __name__ == "__main__":
    main()

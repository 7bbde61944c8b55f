#!/usr/bin/env python3
"""Sweep the insertion point of the wavelet pooling stage.

Trains one small model per position (after the stem conv, before the final
ReLU, after it, and disabled) from a shared seed and reports clean/robust
accuracy per position on the synthetic task.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from wavetrain.attacks import AttackConfig
from wavetrain.data import synthetic_dataset
from wavetrain.evaluation import accuracy
from wavetrain.model import ModelConfig, build_model
from wavetrain.storage import write_csv
from wavetrain.training import TrainConfig, adversarial_train

POSITIONS = ("after_first_conv", "before_final_relu", "after_final_relu", "disabled")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--n-train", type=int, default=512)
    parser.add_argument("--n-val", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default="out")
    args = parser.parse_args()

    full = synthetic_dataset(2, args.n_train + args.n_val, seed=args.seed)
    train = full.subset(np.arange(args.n_train))
    val = full.subset(np.arange(args.n_train, len(full)))

    train_cfg = TrainConfig(
        epochs=args.epochs, batch_size=128, lr_initial=0.1,
        train_attack=AttackConfig(epsilon=0.031, step_size=2 / 255, steps=10),
        seed=args.seed,
    )
    eval_attack = AttackConfig(epsilon=0.031, step_size=2 / 255, steps=20)

    rows = []
    for position in POSITIONS:
        cfg = ModelConfig(
            depth=1, width=1, num_classes=2,
            wavelet_base=None if position == "disabled" else "haar",
            wap_position=position,
        )
        model, _ = adversarial_train(build_model(cfg, seed=args.seed),
                                     train, val, train_cfg)
        clean = accuracy(model, val)
        robust = accuracy(model, val, attack=eval_attack, seed=7)
        rows.append((position, clean, robust))
        print(f"{position:18s} clean {clean:.3f}  robust {robust:.3f}")

    os.makedirs(args.out_dir, exist_ok=True)
    write_csv(os.path.join(args.out_dir, "wap_positions.csv"), "wap-positions",
              ("position", "clean_acc", "robust_acc"), rows)


if __name__ == "__main__":
    main()

"""Command-line front end.

Subcommands: train, eval, attack, heatmap, gradcam, check (wavelet|theorems),
sweep (bases|ablation). Every command resolves a flat key=value config (file
plus --set overrides), echoes it to <out-dir>/resolved_config.txt, and emits
CSV (and PGM for image-shaped results). Exit codes: 0 success, 2 config
error, 3 format error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import autodiff as ad
from .attacks import AttackConfig, NesConfig, cw_pgd, fgsm, logits_oracle, mim, nes_attack, pgd
from .autodiff import Tensor
from .config import RunConfig, load_config
from .data import data_root, load_cifar10, split_train_val, synthetic_dataset
from .errors import (
    ConfigError,
    FormatError,
    NumericError,
    ResolutionError,
    UnsupportedBaseError,
    WavetrainError,
)
from .evaluation import (
    accuracy,
    fourier_heat_map,
    gradcam,
    theorem_decay_check,
    theorem_local_regularity_check,
)
from .model import ModelConfig, build_model
from .storage import load_checkpoint, save_checkpoint, write_csv, write_pgm
from .training import TrainConfig, adversarial_train
from .wavelet import (
    SUPPORTED_BASES,
    dwt2d,
    filter_bank,
    idwt2d,
    wap_lipschitz_estimate,
)

WHITE_BOX = {"fgsm": fgsm, "pgd": pgd, "mim": mim, "cw": cw_pgd}


def _ensure_out(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _echo_config(cfg: RunConfig, out_dir: str):
    with open(os.path.join(out_dir, "resolved_config.txt"), "w", encoding="utf-8") as f:
        f.write(cfg.to_text())


def _load_datasets(cfg: RunConfig):
    """Returns (train, val) per the data.* settings."""
    if cfg["data.source"] == "synthetic":
        total = cfg["data.n_train"] + cfg["data.n_val"]
        full = synthetic_dataset(cfg["data.num_classes"], total, seed=cfg["seed"])
        train = full.subset(np.arange(cfg["data.n_train"]))
        val = full.subset(np.arange(cfg["data.n_train"], total))
        return train, val
    if cfg["data.source"] == "cifar10":
        rel = cfg["data.path"]
        if rel is None:
            raise ConfigError("data.path must name a CIFAR-10 batch file")
        full = load_cifar10(os.path.join(data_root(), rel))
        return split_train_val(full)
    raise ConfigError(f"unknown data.source {cfg['data.source']!r}")


def _model_config(cfg: RunConfig, num_classes: int, **overrides) -> ModelConfig:
    kwargs = dict(
        depth=cfg["model.depth"],
        width=cfg["model.width"],
        num_classes=num_classes,
        wavelet_base=cfg["model.wavelet_base"],
        wap_position=cfg["model.wap_position"],
        pooling_variant=cfg["model.pooling_variant"],
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr_initial=cfg["train.lr_initial"],
        lr_milestones=cfg["train.lr_milestones"],
        momentum=cfg["train.momentum"],
        weight_decay=cfg["train.weight_decay"],
        early_stop_patience=cfg["train.early_stop_patience"],
        train_attack=AttackConfig(
            epsilon=cfg["train.attack_epsilon"],
            step_size=cfg["train.attack_step_size"],
            steps=cfg["train.attack_steps"],
            random_init=cfg["train.attack_epsilon"] > 0,
        ),
        seed=cfg["seed"],
    )


def _attack_config(cfg: RunConfig, kind: str) -> AttackConfig:
    return AttackConfig(
        epsilon=cfg["attack.epsilon"],
        step_size=cfg["attack.step_size"],
        steps=cfg["attack.steps"],
        random_init=cfg["attack.random_init"],
        restarts=cfg["attack.restarts"],
        decay=cfg["attack.decay"],
        loss_kind="cw_margin" if kind == "cw" else "cross_entropy",
        kappa=cfg["attack.kappa"],
    )


def _eval_attacks(model, val, cfg: RunConfig, kinds=("fgsm", "pgd", "mim", "cw")):
    clean = accuracy(model, val)
    out = {"clean": clean}
    for kind in kinds:
        acfg = _attack_config(cfg, kind)
        out[kind] = accuracy(model, val, attack=acfg, attack_fn=WHITE_BOX[kind],
                             seed=cfg["seed"])
    return out


# -- commands -----------------------------------------------------------------


def cmd_train(cfg: RunConfig, out_dir: str, args) -> int:
    train, val = _load_datasets(cfg)
    model_cfg = _model_config(cfg, train.num_classes)
    model = build_model(model_cfg, seed=cfg["seed"])
    best, history = adversarial_train(model, train, val, _train_config(cfg))
    save_checkpoint(best, os.path.join(out_dir, "model.ckpt"))
    rows = [
        (e, history.train_loss[e], history.clean_val_acc[e],
         history.robust_val_acc[e], history.grad_norm[e])
        for e in range(history.epochs_completed())
    ]
    write_csv(os.path.join(out_dir, "history.csv"), "train-history",
              ("epoch", "train_loss", "clean_val_acc", "robust_val_acc", "grad_norm"),
              rows)
    print(f"trained {history.epochs_completed()} epochs; "
          f"best robust val acc {max(history.robust_val_acc):.4f} "
          f"(epoch {history.best_epoch})")
    return 0


def cmd_eval(cfg: RunConfig, out_dir: str, args) -> int:
    model = load_checkpoint(args.checkpoint)
    _, val = _load_datasets(cfg)
    clean = accuracy(model, val)
    write_csv(os.path.join(out_dir, "eval.csv"), "eval",
              ("metric", "value"), [("clean_acc", clean)])
    print(f"clean accuracy {clean:.4f} on {len(val)} samples")
    return 0


def cmd_attack(cfg: RunConfig, out_dir: str, args) -> int:
    if args.epsilon is not None:
        cfg.values["attack.epsilon"] = args.epsilon
        cfg.values["nes.epsilon"] = args.epsilon
    model = load_checkpoint(args.checkpoint)
    _, val = _load_datasets(cfg)
    kind = cfg["attack.kind"]
    clean = accuracy(model, val)
    if kind == "nes":
        ncfg = NesConfig(
            epsilon=cfg["nes.epsilon"], fd_eta=cfg["nes.fd_eta"], lr=cfg["nes.lr"],
            max_queries=cfg["nes.max_queries"],
            samples_per_step=cfg["nes.samples_per_step"],
        )
        res = nes_attack(logits_oracle(model), val.images, val.labels, ncfg,
                         seed=cfg["seed"])
        robust = float(np.mean(
            model_predictions(model, res.x_adv) == val.labels))
        rows = [(kind, ncfg.epsilon, clean, robust, float(res.success.mean()),
                 float(res.queries.mean()))]
        header = ("kind", "epsilon", "clean_acc", "robust_acc", "success_rate",
                  "mean_queries")
    else:
        if kind not in WHITE_BOX:
            raise ConfigError(f"unknown attack.kind {kind!r}")
        acfg = _attack_config(cfg, kind)
        robust = accuracy(model, val, attack=acfg, attack_fn=WHITE_BOX[kind],
                          seed=cfg["seed"])
        rows = [(kind, acfg.epsilon, clean, robust, 1.0 - robust, 0.0)]
        header = ("kind", "epsilon", "clean_acc", "robust_acc", "error_rate",
                  "mean_queries")
    write_csv(os.path.join(out_dir, "attack.csv"), "attack", header, rows)
    print(f"{kind}: clean {clean:.4f} robust {rows[0][3]:.4f}")
    return 0


def model_predictions(model, images):
    with ad.no_grad():
        return model.forward(Tensor(images), training=False).data.argmax(axis=1)


def cmd_heatmap(cfg: RunConfig, out_dir: str, args) -> int:
    model = load_checkpoint(args.checkpoint)
    _, val = _load_datasets(cfg)
    rows = cfg["heatmap.rows"] or None
    cols = cfg["heatmap.cols"] or None
    grid = fourier_heat_map(model, val, eps_f=cfg["heatmap.eps_f"],
                            samples_per_cell=cfg["heatmap.samples_per_cell"],
                            seed=cfg["seed"], rows=rows, cols=cols)
    write_pgm(os.path.join(out_dir, "heatmap.pgm"), grid.error_rates)
    csv_rows = [
        (i, j, grid.error_rates[i, j])
        for i in range(grid.error_rates.shape[0])
        for j in range(grid.error_rates.shape[1])
    ]
    write_csv(os.path.join(out_dir, "heatmap.csv"), "fourier-heatmap",
              ("freq_row", "freq_col", "error_rate"), csv_rows)
    print(f"heat map {grid.error_rates.shape} mean error "
          f"{grid.error_rates.mean():.4f}")
    return 0


def cmd_gradcam(cfg: RunConfig, out_dir: str, args) -> int:
    model = load_checkpoint(args.checkpoint)
    _, val = _load_datasets(cfg)
    index = cfg["gradcam.index"]
    if not (0 <= index < len(val)):
        raise ConfigError(f"gradcam.index {index} out of range")
    image = val.images[index]
    class_id = cfg["gradcam.class_id"]
    if class_id < 0:
        class_id = int(model_predictions(model, image[None])[0])
    cam = gradcam(model, image, class_id)
    write_pgm(os.path.join(out_dir, "gradcam.pgm"), cam)
    csv_rows = [(i, j, cam[i, j]) for i in range(cam.shape[0]) for j in range(cam.shape[1])]
    write_csv(os.path.join(out_dir, "gradcam.csv"), "gradcam",
              ("row", "col", "weight"), csv_rows)
    print(f"gradcam for sample {index} class {class_id}: peak {cam.max():.3f}")
    return 0


def cmd_check_wavelet(cfg: RunConfig, out_dir: str, args) -> int:
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    worst_pr = 0.0
    for name in SUPPORTED_BASES:
        fb = filter_bank(name)
        x = rng.standard_normal((1, 3, 16, 16)).astype(np.float32)
        recon = idwt2d(dwt2d(Tensor(x), fb), fb)
        pr = float(np.abs(recon.data - x).max())
        if fb.orthogonal:
            s = dwt2d(Tensor(x), fb)
            total = sum(float((b.data.astype(np.float64) ** 2).sum())
                        for b in (s.ll, s.lh, s.hl, s.hh))
            energy = float((x.astype(np.float64) ** 2).sum())
            parseval = abs(total - energy) / energy
        else:
            parseval = float("nan")
        lip = wap_lipschitz_estimate(fb)
        rows.append((name, pr, parseval, lip, int(fb.orthogonal)))
        worst_pr = max(worst_pr, pr)
        if pr > 1e-5 or (fb.orthogonal and parseval > 1e-4):
            raise NumericError(f"{name}: reconstruction residuals out of tolerance")
    write_csv(os.path.join(out_dir, "wavelet_check.csv"), "wavelet-check",
              ("base", "pr_max_abs", "parseval_rel", "wap_lipschitz", "orthogonal"),
              rows)
    print(f"all {len(rows)} banks reconstruct (worst max-abs {worst_pr:.2e})")
    return 0


def cmd_check_theorems(cfg: RunConfig, out_dir: str, args) -> int:
    grid_points = cfg["theorem.grid_points"]
    scales = [2.0 ** -k for k in range(2, 8)]
    rows = []
    for alpha in (0.5, 1.0):
        fit = theorem_decay_check("haar", alpha, scales, grid_points=grid_points)
        rows.append(("decay_slope", alpha, fit.fitted_slope, fit.theoretical_slope))
        if abs(fit.fitted_slope - fit.theoretical_slope) > 0.1:
            raise NumericError(
                f"decay slope {fit.fitted_slope:.3f} off the {fit.theoretical_slope} bound"
            )
    reg = theorem_local_regularity_check("haar", 1.0)
    rows.append(("local_regularity_max_ratio", 1.0, reg.max_ratio, float("nan")))
    rows.append(("modulus_halving_first", 1.0, reg.modulus_halving_ratios[0], 0.5))
    rows.append(("log_refined_max_ratio", 1.0, reg.log_refined_max_ratio, float("nan")))
    if not reg:
        raise NumericError("local regularity/modulus check failed")
    write_csv(os.path.join(out_dir, "theorem_check.csv"), "theorem-check",
              ("check", "alpha", "value", "reference"), rows)
    print("decay and local-regularity checks within bounds")
    return 0


def cmd_sweep_bases(cfg: RunConfig, out_dir: str, args) -> int:
    train, val = _load_datasets(cfg)
    rows = []
    for base in SUPPORTED_BASES:
        model_cfg = _model_config(cfg, train.num_classes, wavelet_base=base)
        model = build_model(model_cfg, seed=cfg["seed"])
        if cfg["train.epochs"] > 0:
            model, _ = adversarial_train(model, train, val, _train_config(cfg))
        metrics = _eval_attacks(model, val, cfg)
        rows.append((base, metrics["clean"], metrics["fgsm"], metrics["pgd"],
                     metrics["mim"], metrics["cw"]))
    write_csv(os.path.join(out_dir, "sweep_bases.csv"), "sweep-bases",
              ("base", "clean", "fgsm", "pgd", "mim", "cw"), rows)
    print(f"swept {len(rows)} bases")
    return 0


def cmd_sweep_ablation(cfg: RunConfig, out_dir: str, args) -> int:
    train, val = _load_datasets(cfg)
    variants = [
        ("with_wavelet", {}),
        ("without_wavelet", {"wavelet_base": None, "wap_position": "disabled"}),
    ]
    results = []
    for name, overrides in variants:
        model_cfg = _model_config(cfg, train.num_classes, **overrides)
        model = build_model(model_cfg, seed=cfg["seed"])
        if cfg["train.epochs"] > 0:
            model, _ = adversarial_train(model, train, val, _train_config(cfg))
        results.append((name, _eval_attacks(model, val, cfg)))
    keys = ("clean", "fgsm", "pgd", "mim", "cw")
    rows = [(name, *[m[k] for k in keys]) for name, m in results]
    deltas = tuple(results[0][1][k] - results[1][1][k] for k in keys)
    rows.append(("delta", *deltas))
    write_csv(os.path.join(out_dir, "sweep_ablation.csv"), "sweep-ablation",
              ("variant",) + keys, rows)
    print("ablation twins done; pgd delta %+0.4f" % deltas[2])
    return 0


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavetrain")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--out-dir", default="out", help="output directory")

    common(sub.add_parser("train", help="adversarially train a model"))
    p = sub.add_parser("eval", help="clean accuracy of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("attack", help="run the configured attack")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epsilon", type=float, default=None)
    p = sub.add_parser("heatmap", help="Fourier sensitivity heat map")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("gradcam", help="class activation map for one sample")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("check", help="self-checks")
    common(p)
    p.add_argument("target", choices=["wavelet", "theorems"])
    p = sub.add_parser("sweep", help="config sweeps")
    common(p)
    p.add_argument("target", choices=["bases", "ablation"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        out_dir = _ensure_out(args.out_dir)
        _echo_config(cfg, out_dir)
        if args.command == "train":
            return cmd_train(cfg, out_dir, args)
        if args.command == "eval":
            return cmd_eval(cfg, out_dir, args)
        if args.command == "attack":
            return cmd_attack(cfg, out_dir, args)
        if args.command == "heatmap":
            return cmd_heatmap(cfg, out_dir, args)
        if args.command == "gradcam":
            return cmd_gradcam(cfg, out_dir, args)
        if args.command == "check":
            if args.target == "wavelet":
                return cmd_check_wavelet(cfg, out_dir, args)
            return cmd_check_theorems(cfg, out_dir, args)
        if args.command == "sweep":
            if args.target == "bases":
                return cmd_sweep_bases(cfg, out_dir, args)
            return cmd_sweep_ablation(cfg, out_dir, args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, UnsupportedBaseError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error[format]: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ResolutionError) as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 4
    except WavetrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

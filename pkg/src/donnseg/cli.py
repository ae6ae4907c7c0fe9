"""Command-line entry point.

Subcommands: train, eval, infer, propagate, gradcheck, gen-synth.
Exit codes: 0 ok, 2 config error, 3 dataset error, 4 checkpoint/grid mismatch,
5 I/O error, 1 check failure. DONNSEG_OUT_ROOT sets the default run root.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import _kernels, data, grad, metrics
from .config import load_config_file, model_from_config, resolve_config
from .errors import CheckpointError, ConfigError, DatasetError
from .field import GridSpec, field_from_amplitude
from .model import init_model, load_checkpoint, save_checkpoint
from .propagation import critical_distance, make_fresnel_kernel

OUT_ROOT_ENV = "DONNSEG_OUT_ROOT"


def _out_root():
    return Path(os.environ.get(OUT_ROOT_ENV, "runs"))


def _encode_sample(model, sample):
    return grad._encode_channels(model, sample)


def _detector(model, sample):
    return grad._detector_forward(model, _encode_sample(model, sample))[0]


def _evaluate(model, samples):
    """Per-sample segmentation metrics of the binarized detector output."""
    rows = []
    for idx, sample in enumerate(samples):
        pred = metrics.binarize_output(_detector(model, sample))
        precision, recall, f1 = metrics.prf1(pred, sample.gt)
        rows.append(
            (
                f"{idx:04d}",
                {
                    "iou": metrics.iou(pred, sample.gt),
                    "precision": precision,
                    "recall": recall,
                    "f1": f1,
                },
            )
        )
    return rows


def _mean(rows, key):
    return sum(v[key] for _, v in rows) / len(rows)


def _to_u8(values):
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def _save_gray(values, path):
    Image.fromarray(_to_u8(values), mode="L").save(path)


def _write_visualizations(model, samples, out_dir, count=4):
    """Side-by-side strips: input | ground truth | raw intensity | binarized."""
    out_dir.mkdir(parents=True, exist_ok=True)
    gap = 2
    for idx, sample in enumerate(samples[:count]):
        i_det = _detector(model, sample)
        side = sample.side_px
        rgb = np.stack([sample.r, sample.g, sample.b], axis=2)
        panels = [
            np.round(rgb * 255.0).astype(np.uint8),
            np.repeat((sample.gt * np.uint8(255))[:, :, None], 3, axis=2),
            np.repeat(_to_u8(i_det)[:, :, None], 3, axis=2),
            np.repeat((metrics.binarize_output(i_det) * np.uint8(255))[:, :, None], 3, axis=2),
        ]
        strip = np.full((side, 4 * side + 3 * gap, 3), 32, dtype=np.uint8)
        for k, panel in enumerate(panels):
            x = k * (side + gap)
            strip[:, x : x + side] = panel
        Image.fromarray(strip, mode="RGB").save(out_dir / f"sample_{idx:04d}.png")
    (out_dir / "captions.txt").write_text(
        "Panels left to right: input image, binary ground truth, raw detector\n"
        "intensity, binarized output. Intensity panels are min-max mapped to\n"
        "8-bit per image; absolute scale is arbitrary.\n"
    )


def _load_train_config(args):
    raw = load_config_file(args.config) if args.config else {}
    overrides = {
        "preset": args.preset,
        "side_px": args.side,
        "layers": args.layers,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "lr": args.lr,
        "loss": args.loss,
        "pos_weight": args.pos_weight,
        "z_m": args.z,
        "pitch_m": args.pitch,
        "wavelength_m": args.wavelength,
        "pad_factor": args.pad_factor,
        "encoding": args.encoding,
        "train_manifest": args.train_manifest,
        "eval_manifest": args.eval_manifest,
        "out_dir": args.out,
        "checkpoint_every": args.checkpoint_every,
        "workers": args.workers,
    }
    return resolve_config(raw, overrides)


def cmd_train(args):
    cfg = _load_train_config(args)
    if not cfg.train_manifest or not cfg.eval_manifest:
        raise ConfigError("train requires train_manifest and eval_manifest")

    train_manifest = data.load_manifest(cfg.train_manifest)
    eval_manifest = data.load_manifest(cfg.eval_manifest)
    for m, name in ((train_manifest, "train"), (eval_manifest, "eval")):
        if m.side_px != cfg.side_px:
            raise DatasetError(
                f"{name} manifest side {m.side_px} does not match configured side {cfg.side_px}"
            )

    out_dir = Path(cfg.out_dir) if cfg.out_dir else _out_root() / f"{cfg.preset}-seed{cfg.seed}"
    if cfg.out_dir is None:
        cfg = dataclasses.replace(cfg, out_dir=str(out_dir))
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(cfg.to_json())

    train_samples = data.load_all(train_manifest)
    eval_samples = data.load_all(eval_manifest)

    model = model_from_config(cfg)
    state = grad.init_optim(model, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    log_path = out_dir / "train.log"
    timing_path = out_dir / "timings.tsv"
    log_path.write_text("")
    timing_path.write_text("epoch\tmean_loss\ttrain_iou\teval_iou\twall_time_s\n")

    best_iou = -1.0
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        _, _, stats = grad.train_epoch(
            model,
            train_samples,
            state,
            loss=cfg.loss,
            batch_size=cfg.batch_size,
            epoch=epoch,
            seed=cfg.seed,
            pos_weight=cfg.pos_weight,
            workers=cfg.workers,
        )
        eval_rows = _evaluate(model, eval_samples)
        eval_iou = _mean(eval_rows, "iou")
        wall = time.perf_counter() - started

        record = {
            "epoch": epoch,
            "mean_loss": float(stats["mean_loss"]),
            "train_iou": float(stats["train_iou"]),
            "eval_iou": float(eval_iou),
        }
        with log_path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        with timing_path.open("a") as fh:
            fh.write(
                f"{epoch}\t{record['mean_loss']:.9g}\t{record['train_iou']:.6f}"
                f"\t{record['eval_iou']:.6f}\t{wall:.3f}\n"
            )
        print(
            f"epoch {epoch}/{cfg.epochs} loss={record['mean_loss']:.6f} "
            f"train_iou={record['train_iou']:.4f} eval_iou={record['eval_iou']:.4f}"
        )
        if epoch % cfg.checkpoint_every == 0:
            save_checkpoint(model, ckpt_dir / f"epoch_{epoch:04d}.ckpt", epoch=epoch)
        if eval_iou > best_iou:
            best_iou = eval_iou
            save_checkpoint(model, ckpt_dir / "best.ckpt", epoch=epoch)

    save_checkpoint(model, ckpt_dir / "final.ckpt", epoch=cfg.epochs)
    final_rows = _evaluate(model, eval_samples)
    (out_dir / "metrics_eval.tsv").write_text(
        metrics.format_eval_report(
            final_rows,
            header_lines=[f"eval manifest: {cfg.eval_manifest} (n={len(eval_samples)})"],
        )
    )
    _write_visualizations(model, eval_samples, out_dir / "viz")
    print(str(out_dir))
    return 0


def cmd_eval(args):
    model, _ = load_checkpoint(args.checkpoint)
    manifest = data.load_manifest(args.dataset)
    if manifest.side_px != model.grid.side_px:
        raise CheckpointError(
            f"checkpoint grid {model.grid.side_px} does not match dataset side {manifest.side_px}"
        )
    samples = data.load_all(manifest)
    rows = _evaluate(model, samples)
    report = metrics.format_eval_report(
        rows,
        header_lines=[
            f"checkpoint: {args.checkpoint}",
            f"dataset: {args.dataset} (n={len(samples)}, side={manifest.side_px})",
        ],
    )
    if args.out:
        Path(args.out).write_text(report)
    sys.stdout.write(report)
    return 0


def cmd_infer(args):
    model, _ = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    side = model.grid.side_px
    failures = 0
    for image_path in args.images:
        try:
            img = data._center_crop_square(Image.open(image_path).convert("RGB"))
            if img.size != (side, side):
                img = img.resize((side, side), Image.BILINEAR)
        except OSError as exc:
            print(f"error: {image_path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        rgb = np.asarray(img, dtype=np.float64) / 255.0
        planes = [rgb[:, :, c] for c in range(3)]
        enc = model.encoding == "sqrt"
        values = [
            field_from_amplitude(p, ch.grid, sqrt_amplitude=enc).values
            for p, ch in zip(planes, model.channels)
        ]
        i_det, _, _ = grad._detector_forward(model, values)
        stem = Path(image_path).stem
        _save_gray(i_det, out_dir / f"{stem}_raw.png")
        Image.fromarray(metrics.binarize_output(i_det) * np.uint8(255), mode="L").save(
            out_dir / f"{stem}_mask.png"
        )
        print(f"{image_path} -> {out_dir / (stem + '_raw.png')}, {out_dir / (stem + '_mask.png')}")
    return 5 if failures else 0


def cmd_propagate(args):
    if args.z <= 0:
        raise ConfigError(f"z must be positive, got {args.z}")
    if args.steps < 0:
        raise ConfigError(f"steps must be >= 0, got {args.steps}")
    img = data._center_crop_square(Image.open(args.image).convert("RGB"))
    rgb = np.asarray(img, dtype=np.float64) / 255.0
    luminance = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    side = luminance.shape[0]
    grid = GridSpec(side, args.pitch, args.wavelength)
    kern = make_fresnel_kernel(grid, args.z, args.pad_factor)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    # keep the full padded field across steps so the energy audit sees the
    # whole (conserved) pattern; PNGs show the centered crop
    n = kern.padded_side
    o = (n - side) // 2
    padded = np.zeros((n, n), dtype=np.complex128)
    padded[o : o + side, o : o + side] = luminance
    e0 = float(np.sum(padded.real**2 + padded.imag**2))

    def crop_intensity(f):
        w = f[o : o + side, o : o + side]
        return w.real**2 + w.imag**2

    _save_gray(crop_intensity(padded), out_dir / "step_0000.png")
    spectrum_mult = kern.transfer
    for step in range(1, args.steps + 1):
        padded = np.fft.ifft2(np.fft.fft2(padded) * spectrum_mult)
        energy = float(np.sum(padded.real**2 + padded.imag**2))
        drift = abs(energy - e0) / e0 if e0 > 0 else 0.0
        print(f"step {step}: z_total={step * args.z:g} m energy_drift={drift:.3e}")
        _save_gray(crop_intensity(padded), out_dir / f"step_{step:04d}.png")
    print(f"critical sampling distance for this grid: {critical_distance(grid):g} m")
    return 0


def cmd_gradcheck(args):
    if args.config:
        cfg = resolve_config(load_config_file(args.config))
    else:
        # desk-scale default: small grid, three layers, one skip, alias-free z
        cfg = resolve_config(
            {
                "preset": "custom",
                "side_px": 16,
                "layers": 3,
                "skips": [[1, 3]],
                "z_m": 0.01,
                "loss": args.loss,
            }
        )
    model = model_from_config(cfg, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    side = cfg.side_px
    planes = [rng.uniform(0.0, 1.0, size=(side, side)) for _ in range(3)]
    gt = (rng.uniform(size=(side, side)) < 0.3).astype(np.float64)
    enc = model.encoding == "sqrt"
    fields = [
        field_from_amplitude(p, ch.grid, sqrt_amplitude=enc)
        for p, ch in zip(planes, model.channels)
    ]
    pos_weight = 1.0 if cfg.pos_weight == "auto" else cfg.pos_weight

    _, grads = grad.backward(model, *fields, gt, loss=cfg.loss, pos_weight=pos_weight)
    coords = [
        (
            int(rng.integers(0, 3)),
            int(rng.integers(0, cfg.layers)),
            int(rng.integers(0, side)),
            int(rng.integers(0, side)),
        )
        for _ in range(args.coords)
    ]
    fd = grad.finite_diff_grad(model, fields, gt, cfg.loss, coords, pos_weight=pos_weight)
    worst = 0.0
    print("channel\tlayer\trow\tcol\tanalytic\tfinite_diff\trel_error")
    for (c, l, i, j), estimate in zip(coords, fd):
        analytic = grads[c][l][i, j]
        err = grad.gradient_rel_error(analytic, estimate)
        worst = max(worst, err)
        print(f"{c}\t{l}\t{i}\t{j}\t{analytic:.6e}\t{estimate:.6e}\t{err:.3e}")
    status = "PASS" if worst < args.tolerance else "FAIL"
    print(f"worst relative error: {worst:.3e} (tolerance {args.tolerance:g}) {status}")
    return 0 if status == "PASS" else 1


def cmd_gen_synth(args):
    path = data.gen_synthetic(
        args.kind, args.count, args.side, args.seed, args.out,
        split=args.split, force=args.force,
    )
    print(str(path))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="donnseg",
        description="Train and run diffractive-optics segmentation models "
        f"(kernel backend: {_kernels.backend()})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config and datasets")
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--preset", choices=["lane-8", "cityscapes-12", "cityscapes-15", "custom"])
    p.add_argument("--side", type=int, help="grid side in pixels")
    p.add_argument("--layers", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", choices=["mse", "bce", "dice", "wbce"])
    p.add_argument("--pos-weight", dest="pos_weight")
    p.add_argument("--z", type=float, help="inter-layer distance in meters")
    p.add_argument("--pitch", type=float, help="pixel pitch in meters")
    p.add_argument("--wavelength", type=float, help="wavelength in meters")
    p.add_argument("--pad-factor", dest="pad_factor", type=int, choices=[1, 2])
    p.add_argument("--encoding", choices=["amplitude", "sqrt"])
    p.add_argument("--train", dest="train_manifest", help="training dataset manifest")
    p.add_argument("--eval", dest="eval_manifest", help="evaluation dataset manifest")
    p.add_argument("--out", help="run directory (default: $DONNSEG_OUT_ROOT/<preset>-seed<seed>)")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset", help="dataset manifest (or its directory)")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint on raw images")
    p.add_argument("checkpoint")
    p.add_argument("images", nargs="+")
    p.add_argument("--out", default="inferred", help="output directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("propagate", help="free-space diffraction of an image (diagnostic)")
    p.add_argument("image")
    p.add_argument("--z", type=float, required=True, help="step distance in meters")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--pad-factor", dest="pad_factor", type=int, choices=[1, 2], default=2)
    p.add_argument("--pitch", type=float, default=36e-6)
    p.add_argument("--wavelength", type=float, default=532e-9)
    p.add_argument("--out", default="propagated", help="output directory")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("gradcheck", help="compare reverse-mode gradients to finite differences")
    p.add_argument("--config", help="JSON config; defaults to a small desk-scale model")
    p.add_argument("--coords", type=int, default=20, help="number of sampled coordinates")
    p.add_argument("--loss", choices=["mse", "bce", "dice", "wbce"], default="mse")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("kind", choices=["bars", "lanes"])
    p.add_argument("count", type=int)
    p.add_argument("side", type=int)
    p.add_argument("seed", type=int)
    p.add_argument("out", help="dataset directory")
    p.add_argument("--split", default="train")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    p.set_defaults(func=cmd_gen_synth)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())

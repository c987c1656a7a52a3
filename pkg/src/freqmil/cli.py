"""Command-line interface.

Subcommands: generate, preprocess, train, evaluate, ablate, energy,
reconstruct. Every training flag can also come from a flat key=value config
file via --config; explicit flags override the file. Exit codes: 0 success,
1 run failure, 2 configuration error.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import tensorio
from .data import SyntheticConfig, load_dataset, make_dataset, save_dataset
from .harness import (
    AXIS_VALUES,
    ConfigError,
    ExperimentConfig,
    emit_outputs,
    run_ablation_suite,
    run_train,
    write_checkpoint,
)
from .metrics import evaluate_metrics
from .mil import MilModel
from .nn import load_checkpoint
from .spectral import (
    SpatialImage,
    center_crop_pad,
    energy_radius,
    fft2d,
    fftshift,
    preprocess_complex,
    preprocess_image,
    radial_energy_profile,
    reconstruct_lowpass,
)

_CONFIG_FLAGS = [
    ("--branch", "branch", str, "spatial | frequency | both"),
    ("--fusion", "fusion", str, "addition | multiplication | concat_project | cross_attention"),
    ("--fft-design", "fft_design", str, "design tag A..I"),
    ("--crop", "crop_size", int, "frequency crop side (even)"),
    ("--downsample", "downsample", int, "spatial downsampling factor before the transform"),
    ("--spectra", "spectra", str, "magnitude | phase | both"),
    ("--region", "region", str, "low | high | both"),
    ("--normalization", "normalization", str, "minmax | zscore | l2 | none"),
    ("--transform", "transform", str, "fft | rfft | dct | dct_abs | dwt"),
    ("--epochs", "epochs", int, "training epochs"),
    ("--lr", "lr", float, "Adam learning rate"),
    ("--selection", "selection", str, "macro_f1 | weighted_f1 checkpoint rule"),
    ("--patch-size", "patch_size", int, "spatial patch side"),
    ("--max-channels", "max_channels", int, "CNN channel ceiling (6 for the mini variant)"),
    ("--cnn-layers", "cnn_layers", int, "override the pooling depth (0 = derive)"),
]


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--dataset", help="dataset directory")
    parser.add_argument("--seeds", help="comma-separated seed list")
    for flag, name, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=name, type=typ, default=None, help=help_text)


def _experiment_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if args.dataset:
        cfg.dataset = args.dataset
    if args.seeds:
        cfg.seeds = tuple(int(s) for s in args.seeds.split(","))
    for _, name, _, _ in _CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    if not cfg.dataset:
        raise ConfigError("a dataset directory is required (--dataset or config file)")
    return cfg


def _load_image(dataset_dir: str, image_id: str) -> SpatialImage:
    path = os.path.join(dataset_dir, "images", f"{image_id}.fqt")
    data, _ = tensorio.read_tensor(path)
    return SpatialImage(data)


def _cmd_generate(args) -> int:
    cfg = SyntheticConfig(
        image_side=args.image_side,
        classes=args.classes,
        per_class=args.per_class,
        alpha=args.alpha,
        shape_kind=args.shape_kind,
        signal=args.signal,
        seed=args.seed,
        grating_amplitude=args.grating_amplitude,
        motif_stamps=args.motif_stamps,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    images, split = make_dataset(cfg)
    save_dataset(images, split, args.out)
    print(f"wrote {len(images)} images ({len(split.train)} train / {len(split.test)} test) to {args.out}")
    return 0


def _cmd_preprocess(args) -> int:
    cfg = _experiment_config(args)
    images, _ = load_dataset(cfg.dataset)
    os.makedirs(args.out, exist_ok=True)
    transform = "dwt_ll" if cfg.transform == "dwt" else cfg.transform
    for im in images:
        out = preprocess_image(
            im.image,
            cfg.crop_size,
            transform=transform,
            downsample_factor=cfg.downsample,
            spectra=cfg.spectra,
            region=cfg.region,
        )
        tensorio.write_tensor(
            os.path.join(args.out, f"{im.id}.fqt"), out.data, centered=not out.spatial
        )
    print(f"wrote {len(images)} preprocessed crops to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _experiment_config(args)
    result = run_train(cfg, seed=cfg.seeds[0])
    if args.out:
        emit_outputs(result, args.out)
        checkpoint = write_checkpoint(result, args.out)
        print(f"checkpoint: {checkpoint}")
    r = result.report
    print(
        f"best epoch {result.best_epoch}: acc {r.accuracy:.3f} macro-F1 {r.macro_f1:.3f} "
        f"weighted-F1 {r.weighted_f1:.3f} AUC {r.macro_auc:.3f} "
        f"params {r.parameter_count} ({r.parameter_count / 1e6:.3f}M) "
        f"wall {r.wall_clock_seconds:.1f}s"
    )
    return 0


def _cmd_evaluate(args) -> int:
    state, config, tag = load_checkpoint(args.checkpoint)
    cfg = ExperimentConfig.from_dict(config)
    if args.dataset:
        cfg.dataset = args.dataset
    cfg.validate()
    images, split = load_dataset(cfg.dataset)
    from .harness import build_model, prepare_bags, prepare_frequency_inputs

    labels = {im.id: im.label for im in images}
    n_classes = max(labels.values()) + 1
    freq_inputs = bags = None
    input_channels = 0
    if cfg.branch != "spatial":
        freq_inputs = prepare_frequency_inputs(images, cfg)
        input_channels = next(iter(freq_inputs.values())).shape[0]
    if cfg.branch != "frequency":
        bags = prepare_bags(images, cfg)
    model = build_model(cfg, n_classes, input_channels, cfg.seeds[0])
    model.load_state_dict(state)
    preds, scores = [], []
    for image_id in split.test:
        bag = bags[image_id] if bags else None
        freq = freq_inputs[image_id] if freq_inputs else None
        logits = model.forward(bag, freq, training=False).data.ravel()
        shifted = np.exp(logits - logits.max())
        scores.append(shifted / shifted.sum())
        preds.append(int(np.argmax(logits)))
    y = np.array([labels[i] for i in split.test])
    report = evaluate_metrics(np.array(preds), np.array(scores), y, n_classes)
    print(
        f"design {tag}: acc {report.accuracy:.3f} macro-F1 {report.macro_f1:.3f} "
        f"AUC {report.macro_auc:.3f} on {len(y)} test slides"
    )
    return 0


def _cmd_ablate(args) -> int:
    cfg = _experiment_config(args)
    values = None
    if args.values:
        raw = args.values.split(",")
        values = [int(v) if args.axis in ("crop", "downsample") else v for v in raw]
    rows, ok = run_ablation_suite(cfg, args.axis, values=values, out_dir=args.out)
    for row in rows:
        print(
            f"{row.axis}={row.value}: macro-F1 {row.macro_f1:.3f} "
            f"AUC {row.macro_auc:.3f} dF1 {row.delta_f1_pct:+.2f}% [{row.status}]"
        )
    return 0 if ok else 1


def _cmd_energy(args) -> int:
    images, split = load_dataset(args.dataset)
    if args.image:
        images = [im for im in images if im.id == args.image]
        if not images:
            raise ConfigError(f"image id {args.image!r} not in dataset")
    im = images[0]
    data = im.image.data
    if args.subtract_mean:
        data = data - data.mean(axis=(1, 2), keepdims=True)
    profile = radial_energy_profile(fftshift(fft2d(SpatialImage(data))))
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["radius", "cumulative_energy"])
        for r, v in zip(profile.radii, profile.cumulative_energy):
            writer.writerow([int(r), repr(float(v))])
    r50 = energy_radius(profile, 0.5)
    print(f"{im.id}: r(50%) = {r50}, profile written to {args.out}")
    return 0


def _cmd_reconstruct(args) -> int:
    if args.crop <= 0 or args.crop % 2:
        raise ConfigError(f"crop must be positive and even, got {args.crop}")
    images, _ = load_dataset(args.dataset)
    matches = [im for im in images if im.id == args.image]
    if not matches:
        raise ConfigError(f"image id {args.image!r} not in dataset")
    im = matches[0]
    crop = center_crop_pad(fftshift(fft2d(im.image)), args.crop)
    recon = reconstruct_lowpass(crop, (im.image.height, im.image.width))
    tensorio.write_tensor(args.out, recon.data)
    mse = float(np.mean((recon.data - im.image.data) ** 2))
    print(f"{im.id}: crop {args.crop} reconstruction MSE {mse:.6e} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqmil",
        description="Frequency-augmented multiple-instance learning on synthetic slides",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--image-side", type=int, default=512)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--per-class", type=int, default=50)
    g.add_argument("--alpha", type=float, default=3.0)
    g.add_argument("--shape-kind", default="disc", choices=["disc", "rectangle"])
    g.add_argument("--signal", default="both",
                   choices=["global_frequency", "local_patch", "both"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grating-amplitude", type=float, default=0.05)
    g.add_argument("--motif-stamps", type=int, default=3)
    g.set_defaults(func=_cmd_generate)

    p = sub.add_parser("preprocess", help="write frequency crops for a dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preprocess)

    t = sub.add_parser("train", help="train one model and report test metrics")
    _add_config_flags(t)
    t.add_argument("--out", help="directory for report files and the checkpoint")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on its test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", help="override the dataset path stored in the checkpoint")
    e.set_defaults(func=_cmd_evaluate)

    a = sub.add_parser("ablate", help="sweep one ablation axis")
    _add_config_flags(a)
    a.add_argument("--axis", required=True, choices=sorted(AXIS_VALUES))
    a.add_argument("--values", help="comma-separated axis values (default: full axis)")
    a.add_argument("--out", help="directory for the ablation CSV")
    a.set_defaults(func=_cmd_ablate)

    en = sub.add_parser("energy", help="radial energy profile of a dataset image")
    en.add_argument("--dataset", required=True)
    en.add_argument("--image", help="image id (default: first image)")
    en.add_argument("--out", required=True)
    en.add_argument("--subtract-mean", action="store_true")
    en.set_defaults(func=_cmd_energy)

    r = sub.add_parser("reconstruct", help="low-pass reconstruction of one image")
    r.add_argument("--dataset", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--crop", type=int, required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

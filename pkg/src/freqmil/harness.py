"""Experiment runner: configs, training, checkpoint selection, ablation sweeps.

A run trains one model for a fixed number of epochs (batch size one slide),
evaluates on the test split after every epoch, and keeps the checkpoint that
maximizes the configured selection metric (macro F1 by default, weighted F1
optional; ties keep the earliest epoch). Ablation sweeps repeat runs across
one axis and a seed list and aggregate mean metrics with relative-delta
columns against the axis baseline.
"""

import copy
import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import cross_entropy
from .data import DatasetSplit, LabeledImage, load_dataset
from .fftblock import FFTBlockConfig, uses_complex_input
from .metrics import MetricsReport, evaluate_metrics, roc_points
from .mil import MilModel, PreprocessSettings, encode_patches
from .nn import Adam, save_checkpoint
from .spectral import (
    SpatialImage,
    energy_radius,
    fft2d,
    fftshift,
    preprocess_complex,
    preprocess_image,
    radial_energy_profile,
)

BRANCHES = ("spatial", "frequency", "both")
FUSIONS = ("addition", "multiplication", "concat_project", "cross_attention")
_FUSION_ALIASES = {"concat": "concat_project", "cross-attention": "cross_attention"}
TRANSFORMS = ("fft", "rfft", "dct", "dct_abs", "dwt")
NORMALIZATIONS = ("minmax", "zscore", "l2", "none")
SELECTIONS = ("macro_f1", "weighted_f1")

AXIS_VALUES = {
    "spectra": ["magnitude", "phase", "both"],
    "region": ["low", "high", "both"],
    "crop": [8, 16, 32, 64],
    "downsample": [1, 2, 4, 8],
    "normalization": ["minmax", "zscore", "l2", "none"],
    "design": list("ABCDEFGHI"),
    "fusion": ["addition", "multiplication", "concat_project", "cross_attention"],
    "transform": ["fft", "rfft", "dct", "dct_abs", "dwt"],
}

AXIS_FIELD = {
    "spectra": "spectra",
    "region": "region",
    "crop": "crop_size",
    "downsample": "downsample",
    "normalization": "normalization",
    "design": "fft_design",
    "fusion": "fusion",
    "transform": "transform",
}


class ConfigError(ValueError):
    """Invalid experiment configuration; maps to CLI exit code 2."""


@dataclass
class ExperimentConfig:
    dataset: str = ""
    branch: str = "both"
    fusion: str = "addition"
    fft_design: str = "E"
    crop_size: int = 64
    downsample: int = 1
    spectra: str = "both"
    region: str = "low"
    normalization: str = "minmax"
    transform: str = "fft"
    epochs: int = 30
    lr: float = 1e-4
    seeds: tuple = (0, 1, 2)
    selection: str = "macro_f1"
    patch_size: int = 64
    embed_dim: int = 512
    attn_hidden: int = 128
    max_channels: int = 32
    cnn_layers: int = 0  # 0 derives log2-compatible depth from the crop size

    def validate(self):
        if self.branch not in BRANCHES:
            raise ConfigError(f"branch must be one of {BRANCHES}, got {self.branch!r}")
        self.fusion = _FUSION_ALIASES.get(self.fusion, self.fusion)
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.fft_design not in "ABCDEFGHI":
            raise ConfigError(f"fft design must be A..I, got {self.fft_design!r}")
        if self.spectra not in ("magnitude", "phase", "both"):
            raise ConfigError(f"bad spectra selection {self.spectra!r}")
        if self.region not in ("low", "high", "both"):
            raise ConfigError(f"bad region selection {self.region!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"bad normalization {self.normalization!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"transform must be one of {TRANSFORMS}, got {self.transform!r}")
        if self.fft_design != "E" and self.transform != "fft":
            raise ConfigError(
                "alternative transforms apply to design E only; complex designs "
                "consume the centered complex crop"
            )
        if self.selection not in SELECTIONS:
            raise ConfigError(f"selection must be one of {SELECTIONS}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.crop_size <= 0 or self.crop_size % 2:
            raise ConfigError(f"crop size must be positive and even, got {self.crop_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.downsample < 1:
            raise ConfigError(f"downsample factor must be >= 1, got {self.downsample}")
        if self.patch_size <= 0:
            raise ConfigError(f"patch size must be positive, got {self.patch_size}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kwargs = dict(d)
        if "seeds" in kwargs:
            kwargs["seeds"] = tuple(int(s) for s in kwargs["seeds"])
        known = {f.name for f in fields(cls)}
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Parse the flat key=value config format (# comments, blank lines ok)."""
        values: dict = {}
        types = {f.name: f.type for f in fields(cls)}
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key not in types:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _parse_value(key, value)
        return cls.from_dict(values)


def _parse_value(key: str, value: str):
    if key == "seeds":
        return tuple(int(v) for v in value.split(",") if v.strip())
    if key in ("lr",):
        return float(value)
    if key in (
        "crop_size", "downsample", "epochs", "patch_size", "embed_dim",
        "attn_hidden", "max_channels", "cnn_layers",
    ):
        return int(value)
    return value


def derive_cnn_layers(crop_size: int, override: int = 0) -> int:
    """Pooling depth that flattens at a spatial side of ~8, like the reference
    geometry (eight layers on a 2048 crop), capped at eight layers."""
    if override > 0:
        return override
    layers = 0
    while layers < 8 and crop_size % 2 ** (layers + 1) == 0:
        layers += 1
    while layers > 1 and crop_size // 2**layers < 8:
        layers -= 1
    if layers == 0:
        raise ConfigError(f"crop size {crop_size} supports no pooling layers")
    return layers


@dataclass
class TrainResult:
    config: ExperimentConfig
    seed: int
    report: MetricsReport
    best_epoch: int
    epoch_rows: list
    state: dict
    predictions: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    energy_rows: list = field(default_factory=list)


def _block_config(cfg: ExperimentConfig, input_channels: int) -> FFTBlockConfig:
    spatial_input = cfg.transform == "dwt"
    return FFTBlockConfig(
        design=cfg.fft_design,
        cnn_layers=derive_cnn_layers(cfg.crop_size, cfg.cnn_layers),
        max_channels=cfg.max_channels,
        input_channels=input_channels,
        crop_size=cfg.crop_size,
        output_dim=cfg.embed_dim,
        normalize="none" if spatial_input else cfg.normalization,
        batchnorm=spatial_input,
    )


def _preprocess_settings(cfg: ExperimentConfig) -> PreprocessSettings:
    transform = "dwt_ll" if cfg.transform == "dwt" else cfg.transform
    return PreprocessSettings(
        crop=cfg.crop_size,
        transform=transform,
        downsample=cfg.downsample,
        spectra=cfg.spectra,
        region=cfg.region,
    )


def prepare_frequency_inputs(images, cfg: ExperimentConfig) -> dict:
    """Per-image block inputs (real arrays, or complex crops for A-D/F-I)."""
    pp = _preprocess_settings(cfg)
    out = {}
    for im in images:
        if uses_complex_input(cfg.fft_design):
            out[im.id] = preprocess_complex(im.image, pp.crop, pp.downsample).data
        else:
            out[im.id] = preprocess_image(
                im.image,
                pp.crop,
                transform=pp.transform,
                downsample_factor=pp.downsample,
                spectra=pp.spectra,
                region=pp.region,
            ).data
    return out


def prepare_bags(images, cfg: ExperimentConfig) -> dict:
    return {
        im.id: encode_patches(
            im.image, cfg.patch_size, cfg.embed_dim, label=im.label, slide_id=im.id
        ).features
        for im in images
    }


def build_model(cfg: ExperimentConfig, n_classes: int, input_channels: int, seed: int) -> MilModel:
    rng = np.random.default_rng([seed, 7])
    block_cfg = None
    if cfg.branch != "spatial":
        block_cfg = _block_config(cfg, input_channels)
    return MilModel(
        branch=cfg.branch,
        n_classes=n_classes,
        rng=rng,
        block_cfg=block_cfg,
        fusion_mode=cfg.fusion,
        feature_dim=cfg.embed_dim,
        attn_hidden=cfg.attn_hidden,
    )


def _mean_energy_profile(images) -> list:
    """Mean-removed cumulative radial energy, averaged over the given images."""
    acc = None
    for im in images:
        data = im.image.data - im.image.data.mean(axis=(1, 2), keepdims=True)
        prof = radial_energy_profile(fftshift(fft2d(SpatialImage(data))))
        acc = prof.cumulative_energy if acc is None else acc + prof.cumulative_energy
    acc = acc / len(images)
    return [(int(r), float(v)) for r, v in enumerate(acc)]


def run_train(
    cfg: ExperimentConfig,
    images=None,
    split: DatasetSplit | None = None,
    seed: int | None = None,
    bags: dict | None = None,
    freq_inputs: dict | None = None,
    with_energy_profile: bool = True,
) -> TrainResult:
    """Train one model for one seed and return the best-epoch result."""
    cfg.validate()
    if images is None:
        if not cfg.dataset:
            raise ConfigError("no dataset path configured")
        images, split = load_dataset(cfg.dataset)
    if split is None:
        raise ConfigError("run_train needs a dataset split")
    seed = cfg.seeds[0] if seed is None else seed
    by_id = {im.id: im for im in images}
    labels = {im.id: im.label for im in images}
    n_classes = max(labels.values()) + 1
    start = time.perf_counter()

    if cfg.branch != "spatial" and freq_inputs is None:
        freq_inputs = prepare_frequency_inputs(images, cfg)
    if cfg.branch != "frequency" and bags is None:
        bags = prepare_bags(images, cfg)

    input_channels = 0
    if cfg.branch != "spatial":
        sample = next(iter(freq_inputs.values()))
        input_channels = sample.shape[0]
    model = build_model(cfg, n_classes, input_channels, seed)
    optimizer = Adam(model.named_parameters(), lr=cfg.lr)
    order_rng = np.random.default_rng([seed, 11])
    train_ids = list(split.train)
    test_ids = list(split.test)

    def evaluate():
        preds, scores = [], []
        for image_id in test_ids:
            bag = bags[image_id] if cfg.branch != "frequency" else None
            freq = freq_inputs[image_id] if cfg.branch != "spatial" else None
            logits = model.forward(bag, freq, training=False).data.ravel()
            shifted = np.exp(logits - logits.max())
            scores.append(shifted / shifted.sum())
            preds.append(int(np.argmax(logits)))
        y = np.array([labels[i] for i in test_ids])
        return np.array(preds), np.array(scores), y

    best = None  # (metric, epoch, state, report, preds, scores, y)
    epoch_rows = []

    def consider(epoch, train_loss):
        nonlocal best
        preds, scores, y = evaluate()
        report = evaluate_metrics(preds, scores, y, n_classes)
        report.parameter_count = model.param_count()
        metric = report.macro_f1 if cfg.selection == "macro_f1" else report.weighted_f1
        epoch_rows.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "accuracy": report.accuracy,
                "macro_f1": report.macro_f1,
                "weighted_f1": report.weighted_f1,
                "macro_auc": report.macro_auc,
            }
        )
        if best is None or metric > best[0]:
            best = (metric, epoch, copy.deepcopy(model.state_dict()), report, preds, scores, y)

    if cfg.epochs == 0:
        consider(0, 0.0)
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(len(train_ids))
        losses = []
        for step, pos in enumerate(order):
            image_id = train_ids[pos]
            bag = bags[image_id] if cfg.branch != "frequency" else None
            freq = freq_inputs[image_id] if cfg.branch != "spatial" else None
            optimizer.zero_grad()
            logits = model.forward(bag, freq, training=True)
            loss = cross_entropy(logits, labels[image_id])
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, step {step} (image {image_id})"
                )
            loss.backward()
            optimizer.step()
            losses.append(value)
        consider(epoch, float(np.mean(losses)))

    metric, best_epoch, state, report, preds, scores, y = best
    report.wall_clock_seconds = time.perf_counter() - start
    report.extras["selection_metric"] = cfg.selection
    report.extras["best_epoch"] = best_epoch
    report.extras["seed"] = seed
    energy_rows = []
    if with_energy_profile:
        energy_rows = _mean_energy_profile([by_id[i] for i in test_ids])
    return TrainResult(
        config=cfg,
        seed=seed,
        report=report,
        best_epoch=best_epoch,
        epoch_rows=epoch_rows,
        state=state,
        predictions=preds,
        scores=scores,
        labels=y,
        energy_rows=energy_rows,
    )


def count_params(model) -> int:
    """Total parameter elements of a constructed model."""
    return model.param_count()


def emit_outputs(result: TrainResult, out_dir) -> list:
    """Write the standard report files; returns the paths written.

    Bytes are reproducible for a fixed seed: the wall-clock time lives only
    in the in-memory report, not in metrics.json.
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg = result.config
    written = []

    def path(name):
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    report_dict = result.report.to_dict(include_wall_clock=False)
    with open(path("metrics.json"), "w") as f:
        json.dump(report_dict, f, sort_keys=True, indent=2)
        f.write("\n")
    with open(path("confusion.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        for row in result.report.confusion:
            writer.writerow([int(v) for v in row])
    with open(path("roc_points.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "threshold", "fpr", "tpr"])
        k = result.report.confusion.shape[0]
        for row in roc_points(result.scores, result.labels, k):
            writer.writerow(row)
    with open(path("energy_profile.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["radius", "cumulative_energy"])
        writer.writerows(result.energy_rows)
    with open(path("epoch_log.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["epoch", "train_loss", "accuracy", "macro_f1", "weighted_f1", "macro_auc"]
        )
        for row in result.epoch_rows:
            writer.writerow(
                [
                    row["epoch"],
                    repr(row["train_loss"]),
                    repr(row["accuracy"]),
                    repr(row["macro_f1"]),
                    repr(row["weighted_f1"]),
                    repr(row["macro_auc"]),
                ]
            )
    with open(path("config_resolved.json"), "w") as f:
        json.dump(cfg.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    return written


def write_checkpoint(result: TrainResult, out_dir) -> str:
    p = os.path.join(out_dir, "checkpoint.fqck")
    save_checkpoint(p, result.state, result.config.to_dict(), tag=result.config.fft_design)
    return p


def _axis_baseline(axis: str, base: ExperimentConfig, value):
    if axis == "design":
        return "A" if value in "ABCD" else "E"
    defaults = {
        "spectra": "both",
        "region": "low",
        "crop": base.crop_size,
        "downsample": base.downsample,
        "normalization": "minmax",
        "fusion": "addition",
        "transform": "fft",
    }
    return defaults[axis]


def config_for_axis_value(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(base.to_dict())
    setattr(cfg, AXIS_FIELD[axis], value)
    if axis == "design" and value != "E":
        cfg.transform = "fft"
    return cfg


@dataclass
class AblationRow:
    axis: str
    value: object
    n_seeds: int
    accuracy: float
    macro_f1: float
    weighted_f1: float
    macro_auc: float
    parameter_count: int
    delta_f1_pct: float
    delta_auc_pct: float
    status: str


def run_ablation_suite(
    base: ExperimentConfig,
    axis: str,
    values=None,
    out_dir=None,
    images=None,
    split=None,
) -> tuple[list[AblationRow], bool]:
    """Run one ablation axis across its values and the seed list.

    Per-run failures are recorded and the suite continues; the returned flag
    is True when every run succeeded. Delta columns are relative percentage
    changes of mean macro F1 / AUC against the axis baseline row.
    """
    if axis not in AXIS_VALUES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(AXIS_VALUES)}")
    base.validate()
    if axis == "fusion" and base.branch != "both":
        raise ConfigError("the fusion axis requires branch=both")
    values = AXIS_VALUES[axis] if values is None else list(values)
    if images is None:
        images, split = load_dataset(base.dataset)

    bag_cache: dict = {}
    results: dict = {}
    ok = True
    for value in values:
        cfg = config_for_axis_value(base, axis, value)
        per_seed = []
        for seed in cfg.seeds:
            try:
                bags = None
                if cfg.branch != "frequency":
                    key = (cfg.patch_size, cfg.embed_dim)
                    if key not in bag_cache:
                        bag_cache[key] = prepare_bags(images, cfg)
                    bags = bag_cache[key]
                run = run_train(
                    cfg, images, split, seed=seed, bags=bags, with_energy_profile=False
                )
                per_seed.append(run.report)
            except (RuntimeError, ValueError) as exc:
                ok = False
                per_seed.append(exc)
        results[value] = per_seed

    rows = []
    means = {}
    for value in values:
        good = [r for r in results[value] if isinstance(r, MetricsReport)]
        if good:
            means[value] = {
                "accuracy": float(np.mean([r.accuracy for r in good])),
                "macro_f1": float(np.mean([r.macro_f1 for r in good])),
                "weighted_f1": float(np.mean([r.weighted_f1 for r in good])),
                "macro_auc": float(np.mean([r.macro_auc for r in good])),
                "parameter_count": int(good[0].parameter_count),
            }
    for value in values:
        failures = [r for r in results[value] if not isinstance(r, MetricsReport)]
        if value not in means:
            rows.append(
                AblationRow(axis, value, 0, float("nan"), float("nan"), float("nan"),
                            float("nan"), 0, float("nan"), float("nan"),
                            f"failed: {failures[0]}")
            )
            continue
        m = means[value]
        baseline = _axis_baseline(axis, base, value)
        if baseline in means and means[baseline]["macro_f1"] > 0:
            delta_f1 = 100.0 * (m["macro_f1"] - means[baseline]["macro_f1"]) / means[baseline]["macro_f1"]
        else:
            delta_f1 = float("nan")
        if baseline in means and means[baseline]["macro_auc"] > 0:
            delta_auc = 100.0 * (m["macro_auc"] - means[baseline]["macro_auc"]) / means[baseline]["macro_auc"]
        else:
            delta_auc = float("nan")
        status = "ok" if not failures else f"partial ({len(failures)} failed)"
        if failures:
            ok = False
        rows.append(
            AblationRow(
                axis, value, len(results[value]) - len(failures),
                m["accuracy"], m["macro_f1"], m["weighted_f1"], m["macro_auc"],
                m["parameter_count"], delta_f1, delta_auc, status,
            )
        )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"ablation_{axis}.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["axis", "value", "n_seeds", "accuracy", "macro_f1", "weighted_f1",
                 "macro_auc", "parameter_count", "delta_f1_pct", "delta_auc_pct", "status"]
            )
            for row in rows:
                writer.writerow(
                    [row.axis, row.value, row.n_seeds, row.accuracy, row.macro_f1,
                     row.weighted_f1, row.macro_auc, row.parameter_count,
                     row.delta_f1_pct, row.delta_auc_pct, row.status]
                )
    return rows, ok


def mean_energy_radius(images, fraction: float = 0.5) -> float:
    """Mean radius containing the requested energy fraction, mean-removed spectra."""
    radii = []
    for im in images:
        data = im.image.data - im.image.data.mean(axis=(1, 2), keepdims=True)
        prof = radial_energy_profile(fftshift(fft2d(SpatialImage(data))))
        radii.append(energy_radius(prof, fraction))
    return float(np.mean(radii))

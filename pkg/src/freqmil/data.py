"""Synthetic slide generation, planted class signals, splits and persistence.

Images follow the occlusion model from natural-image statistics: opaque
constant-intensity shapes composited until 99% of pixels are covered, with
radii drawn from a truncated power law. That construction concentrates
spectral energy at low frequencies, which is what makes the frequency branch
meaningful on these stand-ins.

Class signals are planted two ways: a low-amplitude sinusoidal grating whose
spatial frequency and orientation depend on the class (visible only in the
spectrum), and/or a handful of fixed 16x16 motif patches stamped at random
positions (visible to patch features).
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import tensorio
from .spectral import SpatialImage

CHANNELS = 3


@dataclass
class SyntheticConfig:
    image_side: int = 512
    classes: int = 3
    per_class: int = 50
    alpha: float = 3.0
    shape_kind: str = "disc"
    signal: str = "both"  # global_frequency | local_patch | both
    seed: int = 0
    grating_amplitude: float = 0.05
    motif_stamps: int = 3

    def validate(self):
        if self.alpha <= 1.0:
            raise ValueError(f"alpha must exceed 1 for a normalizable law, got {self.alpha}")
        side = self.image_side
        if side < 8 or side & (side - 1):
            raise ValueError(f"image_side must be a power of 2 >= 8, got {side}")
        if self.shape_kind not in ("disc", "rectangle"):
            raise ValueError(f"unknown shape kind {self.shape_kind!r}")
        if self.signal not in ("global_frequency", "local_patch", "both"):
            raise ValueError(f"unknown signal mode {self.signal!r}")


@dataclass
class LabeledImage:
    image: SpatialImage
    label: int
    id: str = ""


@dataclass
class DatasetSplit:
    train: list
    test: list
    fractions: tuple = (0.8, 0.2)


def _power_law_radius(rng, r_min: float, r_max: float, alpha: float) -> float:
    # inverse-CDF sample of p(r) ~ r^-alpha truncated to [r_min, r_max]
    a = 1.0 - alpha
    u = rng.random()
    return (r_min**a + u * (r_max**a - r_min**a)) ** (1.0 / a)


def generate_dead_leaves(cfg: SyntheticConfig, rng) -> SpatialImage:
    """Composite opaque power-law shapes until at least 99% pixel coverage."""
    cfg.validate()
    side = cfg.image_side
    img = np.zeros((CHANNELS, side, side))
    covered = np.zeros((side, side), dtype=bool)
    target = 0.99 * side * side
    count = 0
    r_max = side / 4.0
    while count < target:
        r = _power_law_radius(rng, 2.0, r_max, cfg.alpha)
        cy = rng.random() * side
        cx = rng.random() * side
        color = rng.random(CHANNELS)
        y0 = max(0, int(np.ceil(cy - r)))
        y1 = min(side, int(np.floor(cy + r)) + 1)
        x0 = max(0, int(np.ceil(cx - r)))
        x1 = min(side, int(np.floor(cx + r)) + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        if cfg.shape_kind == "disc":
            yy = np.arange(y0, y1)[:, None] - cy
            xx = np.arange(x0, x1)[None, :] - cx
            mask = yy * yy + xx * xx <= r * r
        else:
            mask = np.ones((y1 - y0, x1 - x0), dtype=bool)
        region = img[:, y0:y1, x0:x1]
        region[:, mask] = color[:, None]
        sub = covered[y0:y1, x0:x1]
        count += int((mask & ~sub).sum())
        sub |= mask
    return SpatialImage(img)


def _class_motif(label: int) -> np.ndarray:
    rng = np.random.default_rng(1_000_003 + label)
    return (rng.random((CHANNELS, 16, 16)) > 0.5).astype(np.float64)


def plant_signal(
    img: SpatialImage, label: int, cfg: SyntheticConfig, rng, image_id: str = ""
) -> LabeledImage:
    """Overlay the class-dependent signal(s) onto a generated image.

    global_frequency adds a grating of amplitude ``cfg.grating_amplitude``
    with class-dependent wavelength side/(8+4k) and orientation 45 deg * k;
    local_patch stamps ``cfg.motif_stamps`` copies of a fixed class motif.
    """
    if label >= cfg.classes:
        raise ValueError(f"label {label} outside [0, {cfg.classes})")
    side = cfg.image_side
    data = img.data.copy()
    if cfg.signal in ("global_frequency", "both"):
        wavelength = side / (8 + 4 * label)
        theta = np.deg2rad(45.0 * label)
        ys = np.arange(side)[:, None]
        xs = np.arange(side)[None, :]
        phase_plane = (np.cos(theta) * xs + np.sin(theta) * ys) / wavelength
        grating = cfg.grating_amplitude * np.sin(2.0 * np.pi * phase_plane)
        data = np.clip(data + grating[None, :, :], 0.0, 1.0)
    if cfg.signal in ("local_patch", "both"):
        motif = _class_motif(label)
        for _ in range(cfg.motif_stamps):
            y = int(rng.integers(0, side - 16 + 1))
            x = int(rng.integers(0, side - 16 + 1))
            data[:, y : y + 16, x : x + 16] = motif
    return LabeledImage(SpatialImage(data), label, image_id)


def make_dataset(cfg: SyntheticConfig) -> tuple[list[LabeledImage], DatasetSplit]:
    """Generate K * per_class labeled images and a seeded stratified 80/20 split.

    Each image derives its own random stream from (seed, index), so parallel
    and serial generation agree bitwise.
    """
    cfg.validate()
    if cfg.per_class < 5:
        raise ValueError(f"per_class must be at least 5, got {cfg.per_class}")
    images = []
    for label in range(cfg.classes):
        for i in range(cfg.per_class):
            idx = label * cfg.per_class + i
            rng = np.random.default_rng([cfg.seed, idx])
            base = generate_dead_leaves(cfg, rng)
            images.append(plant_signal(base, label, cfg, rng, f"img{idx:04d}"))
    split_rng = np.random.default_rng([cfg.seed, 999_983])
    train, test = [], []
    for label in range(cfg.classes):
        ids = [im.id for im in images if im.label == label]
        order = split_rng.permutation(len(ids))
        n_train = int(round(0.8 * len(ids)))
        train.extend(ids[i] for i in order[:n_train])
        test.extend(ids[i] for i in order[n_train:])
    return images, DatasetSplit(sorted(train), sorted(test))


def save_dataset(images: list[LabeledImage], split: DatasetSplit, path) -> None:
    """Write per-image tensor files plus a manifest CSV (id,label,split)."""
    os.makedirs(os.path.join(path, "images"), exist_ok=True)
    test_ids = set(split.test)
    with open(os.path.join(path, "manifest.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "label", "split"])
        for im in images:
            part = "test" if im.id in test_ids else "train"
            writer.writerow([im.id, im.label, part])
            tensorio.write_tensor(
                os.path.join(path, "images", f"{im.id}.fqt"), im.image.data
            )


def load_dataset(path) -> tuple[list[LabeledImage], DatasetSplit]:
    """Read a persisted dataset back; missing image files name their id."""
    manifest = os.path.join(path, "manifest.csv")
    images = []
    train, test = [], []
    with open(manifest, newline="") as f:
        for row in csv.DictReader(f):
            image_id = row["id"]
            file_path = os.path.join(path, "images", f"{image_id}.fqt")
            if not os.path.exists(file_path):
                raise ValueError(f"manifest lists {image_id!r} but {file_path} is missing")
            data, _ = tensorio.read_tensor(file_path)
            images.append(LabeledImage(SpatialImage(data), int(row["label"]), image_id))
            (test if row["split"] == "test" else train).append(image_id)
    return images, DatasetSplit(train, test)

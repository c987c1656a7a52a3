"""Pure transforms between spatial rasters and frequency representations.

Everything here is a deterministic function of its inputs: 2D DFTs,
zero-frequency centering, center crop/pad of a spectrum, magnitude/phase
packing, low-pass reconstruction, alternative compressed transforms
(half-spectrum, cosine, Haar LL) and radial energy analysis.

Conventions: the forward DFT is unnormalized and the inverse carries the
1/(M*N) factor. Arrays are channel-first, shape (C, H, W).
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft


@dataclass
class SpatialImage:
    """Real-valued raster, shape (channels, height, width), nominal range [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"expected (C, H, W) array, got shape {self.data.shape}")
        c, h, w = self.data.shape
        if c < 1 or h < 1 or w < 1:
            raise ValueError(f"degenerate image shape {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class Spectrum:
    """Complex frequency representation of an image, shape (C, H, W).

    ``centered`` records whether the zero-frequency bin has been moved to
    (H//2, W//2).
    """

    data: np.ndarray
    centered: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ValueError(f"expected (C, H, W) spectrum, got shape {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class MagPhasePack:
    """Polar decomposition of a spectrum: magnitude >= 0, phase in [-pi, pi]."""

    magnitude: np.ndarray
    phase: np.ndarray


@dataclass
class FrequencyCrop:
    """Real tensor packing magnitude then phase channels, shape (2C, h, w)."""

    data: np.ndarray
    crop_size: int
    source_dims: tuple[int, int]

    @property
    def channels(self) -> int:
        return self.data.shape[0]


@dataclass
class TransformCrop:
    """Output of an alternative transform: C channels, optionally spatial-domain."""

    data: np.ndarray
    mode: str
    crop_size: int
    source_dims: tuple[int, int]
    spatial: bool


@dataclass
class RadialEnergyProfile:
    """Cumulative spectral energy by integer radius, normalized to 1 at r_max."""

    radii: np.ndarray
    cumulative_energy: np.ndarray


def fft2d(img: SpatialImage) -> Spectrum:
    """Per-channel 2D DFT with the unnormalized forward convention."""
    for c in range(img.channels):
        if not np.isfinite(img.data[c]).all():
            raise ValueError(f"non-finite values in channel {c}")
    return Spectrum(np.fft.fft2(img.data, axes=(-2, -1)), centered=False)


def ifft2d(spec: Spectrum, real_source: bool = True) -> SpatialImage:
    """Inverse DFT with 1/(M*N) normalization, discarding the imaginary residue.

    With ``real_source`` the spectrum is claimed to come from a real image and
    the residue must satisfy max|imag| < 1e-6 * max|real|; a larger residue is
    a contract violation. Low-pass crops are not Hermitian, so callers
    reconstructing from them pass ``real_source=False``.
    """
    if spec.centered:
        raise ValueError("spectrum must be un-centered before the inverse transform")
    out = np.fft.ifft2(spec.data, axes=(-2, -1))
    if real_source:
        imag_max = np.abs(out.imag).max()
        real_max = np.abs(out.real).max()
        if imag_max > 1e-6 * real_max:
            raise ValueError(
                f"imaginary residue {imag_max:.3e} exceeds 1e-6 * max|real| "
                f"({real_max:.3e}) on a spectrum claimed to come from a real image"
            )
    return SpatialImage(out.real)


def fftshift(spec: Spectrum, direction: str = "forward") -> Spectrum:
    """Move the zero-frequency bin to (H//2, W//2) or back; toggles ``centered``."""
    if direction == "forward":
        data = np.fft.fftshift(spec.data, axes=(-2, -1))
    elif direction == "inverse":
        data = np.fft.ifftshift(spec.data, axes=(-2, -1))
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return Spectrum(data, centered=not spec.centered)


def _centered_embed(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Copy (C, h, w) into zeros of (C, out_h, out_w), aligning the H//2 centers.

    Handles both cropping (output smaller) and zero-padding (output larger).
    """
    c, h, w = src.shape
    out = np.zeros((c, out_h, out_w), dtype=src.dtype)
    ro = out_h // 2 - h // 2
    co = out_w // 2 - w // 2
    rs0, rs1 = max(0, -ro), min(h, out_h - ro)
    cs0, cs1 = max(0, -co), min(w, out_w - co)
    if rs0 < rs1 and cs0 < cs1:
        out[:, rs0 + ro : rs1 + ro, cs0 + co : cs1 + co] = src[:, rs0:rs1, cs0:cs1]
    return out


def center_crop_pad(spec: Spectrum, crop: int) -> Spectrum:
    """Retain the central crop x crop block of a centered spectrum.

    Keeps bins with H//2 - crop/2 <= u < H//2 + crop/2 (likewise v). If the
    spectrum is smaller than ``crop`` it is zero-padded around the center bin
    instead. Crop sizes must be even so the half-open bounds stay symmetric.
    """
    if not spec.centered:
        raise ValueError("center_crop_pad requires a centered spectrum")
    if crop <= 0 or crop % 2 != 0:
        raise ValueError(f"crop size must be a positive even integer, got {crop}")
    return Spectrum(_centered_embed(spec.data, crop, crop), centered=True)


def mag_phase(spec: Spectrum) -> MagPhasePack:
    """Split a spectrum into magnitude and full-quadrant phase.

    The two-argument arctangent keeps the phase inside [-pi, pi]; a zero bin
    gets phase 0 by convention.
    """
    return MagPhasePack(np.abs(spec.data), np.arctan2(spec.data.imag, spec.data.real))


def pack_crop(mp: MagPhasePack, source_dims: tuple[int, int]) -> FrequencyCrop:
    """Concatenate magnitude channels then phase channels into one real tensor."""
    if mp.magnitude.shape != mp.phase.shape:
        raise ValueError(
            f"magnitude shape {mp.magnitude.shape} != phase shape {mp.phase.shape}"
        )
    data = np.concatenate([mp.magnitude, mp.phase], axis=0)
    return FrequencyCrop(data, crop_size=mp.magnitude.shape[-1], source_dims=tuple(source_dims))


def unpack_crop(crop: FrequencyCrop) -> MagPhasePack:
    """Inverse of :func:`pack_crop`."""
    c2 = crop.data.shape[0]
    if c2 % 2 != 0:
        raise ValueError(f"packed crop must have an even channel count, got {c2}")
    c = c2 // 2
    return MagPhasePack(crop.data[:c].copy(), crop.data[c:].copy())


def reconstruct_lowpass(crop: Spectrum, original_dims: tuple[int, int]) -> SpatialImage:
    """Zero-pad a centered crop back to the original dims, invert, clamp to [0, 1].

    Visualization aid: the crop is generally not Hermitian, so the inverse is
    taken with ``real_source=False`` and the real part kept.
    """
    if not crop.centered:
        raise ValueError("reconstruct_lowpass requires a centered crop")
    h0, w0 = original_dims
    if h0 < crop.height or w0 < crop.width:
        raise ValueError(
            f"original dims {original_dims} smaller than crop "
            f"({crop.height}, {crop.width})"
        )
    padded = Spectrum(_centered_embed(crop.data, h0, w0), centered=True)
    img = ifft2d(fftshift(padded, "inverse"), real_source=False)
    return SpatialImage(np.clip(img.data, 0.0, 1.0))


def _haar_ll(data: np.ndarray) -> np.ndarray:
    """Single-level orthonormal Haar LL sub-band of a (C, H, W) array."""
    c, h, w = data.shape
    if h % 2 or w % 2:
        raise ValueError(f"Haar LL needs even dims, got ({h}, {w})")
    return (
        data[:, 0::2, 0::2]
        + data[:, 0::2, 1::2]
        + data[:, 1::2, 0::2]
        + data[:, 1::2, 1::2]
    ) / 2.0


def _bilinear_resize(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of (C, H, W) to (C, out_h, out_w), pixel-center aligned."""
    c, h, w = data.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = data[:, y0][:, :, x0] * (1 - wx) + data[:, y0][:, :, x1] * wx
    bot = data[:, y1][:, :, x0] * (1 - wx) + data[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def alt_transform(img: SpatialImage, mode: str, crop: int):
    """Alternative compressed representations behind one interface.

    rfft: Hermitian half-spectrum, top-left crop, magnitude/phase packing.
    dct / dct_abs: orthonormal 2D DCT-II coefficients, top-left crop, raw or
    absolute values. dwt_ll: single-level Haar LL sub-band bilinearly
    interpolated to crop x crop, flagged as spatial-domain output.
    """
    dims = (img.height, img.width)
    if mode == "rfft":
        spec = np.fft.rfft2(img.data, axes=(-2, -1))
        if crop > spec.shape[-2] or crop > spec.shape[-1]:
            raise ValueError(
                f"crop {crop} exceeds half-spectrum dims {spec.shape[-2:]}"
            )
        tl = spec[:, :crop, :crop]
        return pack_crop(
            MagPhasePack(np.abs(tl), np.arctan2(tl.imag, tl.real)), dims
        )
    if mode in ("dct", "dct_abs"):
        coeff = scipy.fft.dctn(img.data, type=2, norm="ortho", axes=(-2, -1))
        if crop > coeff.shape[-2] or crop > coeff.shape[-1]:
            raise ValueError(f"crop {crop} exceeds coefficient dims {coeff.shape[-2:]}")
        tl = coeff[:, :crop, :crop]
        if mode == "dct_abs":
            tl = np.abs(tl)
        return TransformCrop(np.ascontiguousarray(tl), mode, crop, dims, spatial=False)
    if mode == "dwt_ll":
        ll = _haar_ll(img.data)
        out = _bilinear_resize(ll, crop, crop)
        return TransformCrop(out, mode, crop, dims, spatial=True)
    raise ValueError(f"unknown transform mode {mode!r}")


def radial_energy_profile(spec: Spectrum) -> RadialEnergyProfile:
    """Cumulative |F|^2 within integer radii of the center bin, channel-summed."""
    if not spec.centered:
        raise ValueError("radial_energy_profile requires a centered spectrum")
    energy = (np.abs(spec.data) ** 2).sum(axis=0)
    total = energy.sum()
    if total == 0.0:
        raise ValueError("all-zero spectrum has no defined energy profile")
    h, w = energy.shape
    uu, vv = np.meshgrid(
        np.arange(h) - h // 2, np.arange(w) - w // 2, indexing="ij"
    )
    dist = np.hypot(uu, vv)
    r_max = int(np.ceil(dist.max()))
    idx = np.ceil(dist).astype(int)
    hist = np.bincount(idx.ravel(), weights=energy.ravel(), minlength=r_max + 1)
    cum = np.cumsum(hist) / total
    return RadialEnergyProfile(np.arange(r_max + 1), cum)


def energy_radius(profile: RadialEnergyProfile, fraction: float) -> int:
    """Smallest radius whose cumulative energy reaches ``fraction``."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    hits = profile.cumulative_energy >= fraction - 1e-12
    if not hits.any():
        raise ValueError("profile never reaches the requested fraction")
    return int(profile.radii[int(np.argmax(hits))])


def downsample(img: SpatialImage, factor: int) -> SpatialImage:
    """Area-averaging over factor x factor blocks.

    Dims not divisible by the factor are zero-padded up to the next multiple
    first.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsample factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if factor == 1:
        return SpatialImage(img.data.copy())
    c, h, w = img.data.shape
    ph = (-h) % factor
    pw = (-w) % factor
    data = img.data
    if ph or pw:
        data = np.pad(data, ((0, 0), (0, ph), (0, pw)))
    hh, ww = data.shape[1] // factor, data.shape[2] // factor
    blocks = data.reshape(c, hh, factor, ww, factor)
    return SpatialImage(blocks.mean(axis=(2, 4)))


@dataclass
class BlockInput:
    """Real-valued network input produced by the preprocessing pipeline."""

    data: np.ndarray
    spatial: bool
    transform: str


def preprocess_image(
    img: SpatialImage,
    crop: int,
    transform: str = "fft",
    downsample_factor: int = 1,
    spectra: str = "both",
    region: str = "low",
) -> BlockInput:
    """Full preprocessing pipeline from a raster to the frequency-branch input.

    For the fft transform: optional downsampling, DFT, centering, central
    crop, magnitude/phase selection per ``spectra`` and frequency ``region``
    (low = crop after centering, high = crop before centering, both =
    concatenated). Alternative transforms delegate to :func:`alt_transform`;
    ``spectra`` applies to rfft output, ``region`` only to fft.
    """
    if spectra not in ("magnitude", "phase", "both"):
        raise ValueError(f"unknown spectra selection {spectra!r}")
    if region not in ("low", "high", "both"):
        raise ValueError(f"unknown region selection {region!r}")
    x = downsample(img, downsample_factor)
    if transform == "fft":
        spec = fft2d(x)
        parts = []
        if region in ("low", "both"):
            parts.append(center_crop_pad(fftshift(spec), crop).data)
        if region in ("high", "both"):
            # crop of the uncentered spectrum: high-frequency content sits at
            # the array center before the shift
            parts.append(_centered_embed(spec.data, crop, crop))
        chans = []
        for part in parts:
            if spectra in ("magnitude", "both"):
                chans.append(np.abs(part))
            if spectra in ("phase", "both"):
                chans.append(np.arctan2(part.imag, part.real))
        return BlockInput(np.concatenate(chans, axis=0), spatial=False, transform="fft")
    if transform == "rfft":
        packed = alt_transform(x, "rfft", crop)
        c = packed.data.shape[0] // 2
        if spectra == "magnitude":
            data = packed.data[:c]
        elif spectra == "phase":
            data = packed.data[c:]
        else:
            data = packed.data
        return BlockInput(np.ascontiguousarray(data), spatial=False, transform="rfft")
    if transform in ("dct", "dct_abs", "dwt_ll"):
        out = alt_transform(x, transform, crop)
        return BlockInput(out.data, spatial=out.spatial, transform=transform)
    raise ValueError(f"unknown transform mode {transform!r}")


def preprocess_complex(
    img: SpatialImage, crop: int, downsample_factor: int = 1
) -> Spectrum:
    """Centered complex low-frequency crop, the input of complex-layer designs."""
    x = downsample(img, downsample_factor)
    return center_crop_pad(fftshift(fft2d(x)), crop)

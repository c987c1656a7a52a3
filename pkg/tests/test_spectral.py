"""Transform correctness against independent oracles.

The DFT oracle below is the direct O(N^4) double summation; Parseval sums
are computed termwise. Nothing here calls back into the code path under
test.
"""

import numpy as np
import pytest

from freqmil.spectral import (
    FrequencyCrop,
    MagPhasePack,
    SpatialImage,
    Spectrum,
    alt_transform,
    center_crop_pad,
    downsample,
    energy_radius,
    fft2d,
    fftshift,
    ifft2d,
    mag_phase,
    pack_crop,
    preprocess_complex,
    preprocess_image,
    radial_energy_profile,
    reconstruct_lowpass,
    unpack_crop,
)


def naive_dft2(channel: np.ndarray) -> np.ndarray:
    """Direct double-sum DFT of one (H, W) channel, unnormalized forward."""
    h, w = channel.shape
    out = np.zeros((h, w), dtype=np.complex128)
    ys = np.arange(h)
    xs = np.arange(w)
    for u in range(h):
        for v in range(w):
            phase = np.exp(-2j * np.pi * (u * ys[:, None] / h + v * xs[None, :] / w))
            out[u, v] = (channel * phase).sum()
    return out


def random_image(shape, seed=0, lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return SpatialImage(rng.uniform(lo, hi, shape))


class TestFft2d:
    def test_constant_image_dc_only(self):
        img = SpatialImage(np.full((2, 4, 4), 0.7))
        spec = fft2d(img)
        assert not spec.centered
        for c in range(2):
            assert spec.data[c, 0, 0] == pytest.approx(16 * 0.7)
            rest = spec.data[c].copy()
            rest[0, 0] = 0
            np.testing.assert_allclose(rest, 0, atol=1e-12)

    def test_single_pixel_identity(self):
        spec = fft2d(SpatialImage(np.array([[[0.42]]])))
        assert spec.data[0, 0, 0] == pytest.approx(0.42)

    def test_matches_direct_summation(self):
        img = random_image((1, 8, 8), seed=3)
        spec = fft2d(img)
        oracle = naive_dft2(img.data[0])
        np.testing.assert_allclose(spec.data[0], oracle, atol=1e-9)

    def test_parseval(self):
        img = random_image((1, 8, 8), seed=1)
        spec = fft2d(img)
        spatial_energy = float((img.data**2).sum())
        freq_energy = float((np.abs(spec.data) ** 2).sum()) / 64
        assert abs(spatial_energy - freq_energy) / spatial_energy < 1e-10

    def test_hermitian_symmetry(self):
        img = random_image((1, 6, 8), seed=2)
        f = fft2d(img).data[0]
        h, w = f.shape
        for u in range(h):
            for v in range(w):
                assert f[u, v] == pytest.approx(np.conj(f[(-u) % h, (-v) % w]), abs=1e-10)

    def test_rejects_non_finite_naming_channel(self):
        bad = np.zeros((3, 4, 4))
        bad[2, 1, 1] = np.nan
        with pytest.raises(ValueError, match="channel 2"):
            fft2d(SpatialImage(bad))


class TestIfft2d:
    def test_round_trip(self):
        img = random_image((2, 16, 16), seed=5)
        back = ifft2d(fft2d(img))
        assert np.abs(back.data - img.data).max() < 1e-10

    def test_dc_only_spectrum_gives_constant(self):
        spec = np.zeros((1, 4, 4), dtype=complex)
        spec[0, 0, 0] = 16 * 0.3
        img = ifft2d(Spectrum(spec))
        np.testing.assert_allclose(img.data, 0.3, atol=1e-12)

    def test_zero_spectrum_gives_zero_image(self):
        img = ifft2d(Spectrum(np.zeros((1, 4, 4), dtype=complex)))
        np.testing.assert_array_equal(img.data, 0.0)

    def test_rejects_centered_input(self):
        spec = fftshift(fft2d(random_image((1, 4, 4))))
        with pytest.raises(ValueError, match="un-centered"):
            ifft2d(spec)

    def test_imaginary_residue_is_contract_violation(self):
        spec = np.zeros((1, 4, 4), dtype=complex)
        spec[0, 1, 0] = 1.0  # no Hermitian partner: inverse is complex
        with pytest.raises(ValueError, match="residue"):
            ifft2d(Spectrum(spec), real_source=True)
        out = ifft2d(Spectrum(spec), real_source=False)
        assert np.isfinite(out.data).all()


class TestFftshift:
    def test_2x2_quadrant_swap(self):
        spec = Spectrum(np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=complex))
        out = fftshift(spec)
        np.testing.assert_array_equal(out.data[0], [[4, 3], [2, 1]])
        assert out.centered

    @pytest.mark.parametrize("shape", [(4, 4), (5, 5), (5, 8), (3, 4)])
    def test_forward_then_inverse_is_identity(self, shape):
        rng = np.random.default_rng(0)
        spec = Spectrum(rng.normal(size=(1,) + shape) + 1j * rng.normal(size=(1,) + shape))
        out = fftshift(fftshift(spec, "forward"), "inverse")
        np.testing.assert_array_equal(out.data, spec.data)
        assert out.centered == spec.centered

    def test_sign_trick_equivalence(self):
        # fft(x * (-1)^(x+y)) == fftshift(fft(x)) for even dims
        img = random_image((1, 8, 8), seed=7)
        ys, xs = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
        signed = SpatialImage(img.data * ((-1.0) ** (xs + ys))[None])
        lhs = fft2d(signed).data
        rhs = fftshift(fft2d(img)).data
        assert np.abs(lhs - rhs).max() < 1e-9

    def test_rejects_unknown_direction(self):
        with pytest.raises(ValueError, match="direction"):
            fftshift(Spectrum(np.zeros((1, 2, 2), dtype=complex)), "sideways")


class TestCenterCropPad:
    def test_full_size_identity(self):
        spec = fftshift(fft2d(random_image((1, 8, 8), seed=9)))
        out = center_crop_pad(spec, 8)
        np.testing.assert_array_equal(out.data, spec.data)

    def test_4x4_crop_2_keeps_indices_1_and_2(self):
        data = np.arange(16, dtype=float).reshape(1, 4, 4).astype(complex)
        out = center_crop_pad(Spectrum(data, centered=True), 2)
        np.testing.assert_array_equal(out.data[0], data[0, 1:3, 1:3])

    def test_pad_2x2_to_4x4_central_block(self):
        data = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=complex)
        out = center_crop_pad(Spectrum(data, centered=True), 4)
        expected = np.zeros((4, 4), dtype=complex)
        expected[1:3, 1:3] = data[0]
        np.testing.assert_array_equal(out.data[0], expected)

    @pytest.mark.parametrize("crop", [0, -2, 3])
    def test_rejects_bad_crop(self, crop):
        spec = Spectrum(np.zeros((1, 4, 4), dtype=complex), centered=True)
        with pytest.raises(ValueError, match="even"):
            center_crop_pad(spec, crop)

    def test_rejects_uncentered(self):
        with pytest.raises(ValueError, match="centered"):
            center_crop_pad(Spectrum(np.zeros((1, 4, 4), dtype=complex)), 2)


class TestMagPhase:
    def test_analytic_3_plus_4i(self):
        mp = mag_phase(Spectrum(np.array([[[3 + 4j]]])))
        assert mp.magnitude[0, 0, 0] == pytest.approx(5.0)
        assert mp.phase[0, 0, 0] == pytest.approx(np.arctan2(4, 3))
        assert mp.phase[0, 0, 0] == pytest.approx(0.92730, abs=1e-5)

    def test_negative_real_axis_gives_pi(self):
        mp = mag_phase(Spectrum(np.array([[[-1 + 0j]]])))
        assert mp.magnitude[0, 0, 0] == pytest.approx(1.0)
        assert mp.phase[0, 0, 0] == pytest.approx(np.pi)

    def test_zero_bin_convention(self):
        mp = mag_phase(Spectrum(np.array([[[0 + 0j]]])))
        assert mp.magnitude[0, 0, 0] == 0.0
        assert mp.phase[0, 0, 0] == 0.0

    def test_ranges_on_random_spectra(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            z = rng.normal(size=(2, 5, 5)) + 1j * rng.normal(size=(2, 5, 5))
            mp = mag_phase(Spectrum(z))
            assert (mp.magnitude >= 0).all()
            assert (mp.phase >= -np.pi).all() and (mp.phase <= np.pi).all()


class TestPackCrop:
    def test_three_channels_pack_to_six(self):
        mp = mag_phase(fftshift(fft2d(random_image((3, 4, 4)))))
        crop = pack_crop(mp, (4, 4))
        assert crop.data.shape == (6, 4, 4)
        np.testing.assert_array_equal(crop.data[:3], mp.magnitude)
        np.testing.assert_array_equal(crop.data[3:], mp.phase)

    def test_single_channel_packs_to_two(self):
        mp = mag_phase(fftshift(fft2d(random_image((1, 4, 4)))))
        assert pack_crop(mp, (4, 4)).data.shape == (2, 4, 4)

    def test_round_trip(self):
        mp = mag_phase(fftshift(fft2d(random_image((3, 4, 4), seed=2))))
        back = unpack_crop(pack_crop(mp, (4, 4)))
        np.testing.assert_array_equal(back.magnitude, mp.magnitude)
        np.testing.assert_array_equal(back.phase, mp.phase)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            pack_crop(MagPhasePack(np.zeros((1, 4, 4)), np.zeros((1, 2, 2))), (4, 4))


class TestReconstructLowpass:
    def test_full_size_crop_reconstructs_exactly(self):
        img = random_image((2, 8, 8), seed=13)
        crop = center_crop_pad(fftshift(fft2d(img)), 8)
        recon = reconstruct_lowpass(crop, (8, 8))
        assert np.abs(recon.data - img.data).max() < 1e-9

    def test_dc_only_crop_gives_per_channel_mean(self):
        img = random_image((2, 8, 8), seed=14)
        crop = center_crop_pad(fftshift(fft2d(img)), 2)
        # keep only the DC bin of the 2x2 crop
        only_dc = np.zeros_like(crop.data)
        only_dc[:, 1, 1] = crop.data[:, 1, 1]
        recon = reconstruct_lowpass(Spectrum(only_dc, centered=True), (8, 8))
        means = img.data.mean(axis=(1, 2))
        for c in range(2):
            np.testing.assert_allclose(recon.data[c], means[c], atol=1e-9)

    def test_mse_monotone_in_crop_size(self):
        img = random_image((1, 64, 64), seed=15)
        spec = fftshift(fft2d(img))
        errors = []
        for crop in (4, 8, 16, 32, 64):
            recon = reconstruct_lowpass(center_crop_pad(spec, crop), (64, 64))
            errors.append(float(((recon.data - img.data) ** 2).mean()))
        assert all(a >= b - 1e-15 for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 1e-9

    def test_rejects_dims_smaller_than_crop(self):
        crop = Spectrum(np.zeros((1, 8, 8), dtype=complex), centered=True)
        with pytest.raises(ValueError, match="smaller"):
            reconstruct_lowpass(crop, (4, 4))


class TestAltTransform:
    def test_dct_of_constant_image(self):
        out = alt_transform(SpatialImage(np.full((1, 4, 4), 0.5)), "dct", 4)
        assert out.data[0, 0, 0] == pytest.approx(4 * 0.5)
        rest = out.data[0].copy()
        rest[0, 0] = 0
        np.testing.assert_allclose(rest, 0, atol=1e-12)
        assert not out.spatial

    def test_dct_abs_is_nonnegative(self):
        img = random_image((1, 8, 8), seed=17)
        raw = alt_transform(img, "dct", 4)
        absd = alt_transform(img, "dct_abs", 4)
        np.testing.assert_allclose(absd.data, np.abs(raw.data))

    def test_dct_matches_cosine_matrix_oracle(self):
        # orthonormal DCT-II via the explicit cosine basis matrix
        img = random_image((1, 4, 4), seed=18)
        n = 4
        basis = np.array(
            [[np.cos(np.pi * (2 * x + 1) * u / (2 * n)) for x in range(n)] for u in range(n)]
        )
        basis *= np.sqrt(2.0 / n)
        basis[0] /= np.sqrt(2.0)
        oracle = basis @ img.data[0] @ basis.T
        out = alt_transform(img, "dct", 4)
        np.testing.assert_allclose(out.data[0], oracle, atol=1e-12)

    def test_dwt_ll_of_constant_is_constant(self):
        out = alt_transform(SpatialImage(np.full((2, 8, 8), 0.25)), "dwt_ll", 8)
        assert out.spatial
        for c in range(2):
            np.testing.assert_allclose(out.data[c], out.data[c, 0, 0])

    def test_rfft_half_spectrum_width(self):
        img = random_image((1, 8, 8), seed=19)
        spec = np.fft.rfft2(img.data, axes=(-2, -1))
        assert spec.shape[-1] == 8 // 2 + 1
        out = alt_transform(img, "rfft", 4)
        assert isinstance(out, FrequencyCrop)
        assert out.data.shape == (2, 4, 4)

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError, match="unknown"):
            alt_transform(random_image((1, 4, 4)), "wavelet_packet", 2)

    def test_rejects_oversized_crop(self):
        with pytest.raises(ValueError, match="crop"):
            alt_transform(random_image((1, 8, 8)), "rfft", 6)


class TestRadialEnergy:
    def test_constant_image_all_energy_at_dc(self):
        spec = fftshift(fft2d(SpatialImage(np.full((1, 8, 8), 0.4))))
        profile = radial_energy_profile(spec)
        assert profile.cumulative_energy[0] == pytest.approx(1.0)
        assert energy_radius(profile, 0.5) == 0

    def test_white_noise_matches_bin_count_oracle(self):
        # mean-removed uniform noise has a flat expected spectrum, so the
        # cumulative energy tracks the fraction of bins inside each radius
        side = 64
        profiles = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            data = rng.uniform(0, 1, (1, side, side))
            data -= data.mean()
            profiles.append(
                radial_energy_profile(fftshift(fft2d(SpatialImage(data)))).cumulative_energy
            )
        mean_profile = np.mean(profiles, axis=0)
        uu, vv = np.meshgrid(
            np.arange(side) - side // 2, np.arange(side) - side // 2, indexing="ij"
        )
        dist = np.hypot(uu, vv)
        total_bins = side * side - 1  # the DC bin holds no energy after centering
        for r in (8, 16, 24):
            frac_bins = ((dist <= r).sum() - 1) / total_bins
            assert abs(mean_profile[r] - frac_bins) / frac_bins < 0.10

    def test_profile_nondecreasing_and_normalized(self):
        img = random_image((3, 16, 16), seed=23)
        profile = radial_energy_profile(fftshift(fft2d(img)))
        assert (np.diff(profile.cumulative_energy) >= -1e-15).all()
        assert profile.cumulative_energy[-1] == pytest.approx(1.0, abs=1e-9)
        assert profile.cumulative_energy[0] >= 0

    def test_rejects_zero_spectrum(self):
        with pytest.raises(ValueError, match="zero"):
            radial_energy_profile(Spectrum(np.zeros((1, 4, 4), dtype=complex), centered=True))

    def test_energy_radius_full_fraction(self):
        img = random_image((1, 16, 16), seed=24)
        profile = radial_energy_profile(fftshift(fft2d(img)))
        assert energy_radius(profile, 1.0) == profile.radii[-1] or (
            profile.cumulative_energy[energy_radius(profile, 1.0)] >= 1.0 - 1e-9
        )

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_energy_radius_rejects_bad_fraction(self, fraction):
        profile = radial_energy_profile(fftshift(fft2d(random_image((1, 8, 8)))))
        with pytest.raises(ValueError, match="fraction"):
            energy_radius(profile, fraction)


class TestDownsample:
    def test_factor_one_is_identity(self):
        img = random_image((2, 8, 8), seed=25)
        out = downsample(img, 1)
        np.testing.assert_array_equal(out.data, img.data)

    def test_constant_stays_constant(self):
        out = downsample(SpatialImage(np.full((1, 8, 8), 0.6)), 4)
        np.testing.assert_allclose(out.data, 0.6)

    def test_block_mean(self):
        img = SpatialImage(np.array([[[0.0, 0.0], [1.0, 1.0]]]))
        out = downsample(img, 2)
        assert out.data.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == pytest.approx(0.5)

    def test_rejects_bad_factor(self):
        with pytest.raises(ValueError, match="factor"):
            downsample(random_image((1, 4, 4)), 0)

    def test_non_divisible_dims_pad_first(self):
        img = random_image((1, 6, 6), seed=26)
        out = downsample(img, 4)
        assert out.data.shape == (1, 2, 2)


class TestPreprocess:
    def test_fft_both_spectra_channel_count(self):
        img = random_image((3, 32, 32), seed=27)
        out = preprocess_image(img, 8)
        assert out.data.shape == (6, 8, 8)
        assert not out.spatial

    def test_spectra_selection_channel_counts(self):
        img = random_image((3, 32, 32), seed=28)
        assert preprocess_image(img, 8, spectra="magnitude").data.shape[0] == 3
        assert preprocess_image(img, 8, spectra="phase").data.shape[0] == 3
        assert preprocess_image(img, 8, region="both").data.shape[0] == 12

    def test_high_region_differs_from_low(self):
        img = random_image((1, 32, 32), seed=29)
        low = preprocess_image(img, 8, region="low").data
        high = preprocess_image(img, 8, region="high").data
        assert np.abs(low - high).max() > 1e-6

    def test_complex_pipeline_matches_manual_composition(self):
        img = random_image((3, 32, 32), seed=30)
        spec = preprocess_complex(img, 8)
        manual = center_crop_pad(fftshift(fft2d(img)), 8)
        np.testing.assert_array_equal(spec.data, manual.data)

    def test_downsampling_changes_crop(self):
        img = random_image((1, 64, 64), seed=31)
        a = preprocess_image(img, 8, downsample_factor=1).data
        b = preprocess_image(img, 8, downsample_factor=2).data
        assert a.shape == b.shape
        assert np.abs(a - b).max() > 1e-9

"""Temporal DFT stack, power spectrum, band selection, and modal basis tests."""
from __future__ import annotations

import numpy as np
import pytest

from modalforce import (ModalMatrix, MotionTexture, RegionOfInterest,
                        assemble_modal_matrix, mode_shapes, power_spectrum,
                        read_modal_file, select_band, write_modal_file)


def sinusoid_motion(t_total: int, fps: float, freq: float, shape=(1, 1),
                    amplitude: float = 1.0) -> MotionTexture:
    t = np.arange(t_total)
    wave = amplitude * np.sin(2.0 * np.pi * freq * t / fps)
    disp = np.zeros((t_total, *shape, 2))
    disp += wave[:, None, None, None]
    return MotionTexture(disp, fps=fps)


class TestModeShapes:
    def test_zero_motion_gives_zero_coefficients(self):
        stack = mode_shapes(MotionTexture(np.zeros((16, 3, 3, 2)), fps=30.0))
        assert stack.coefficients.shape == (8, 3, 3, 2)
        np.testing.assert_allclose(stack.coefficients, 0.0)

    def test_bin_aligned_sinusoid_concentrates_in_its_bin(self):
        stack = mode_shapes(sinusoid_motion(128, 32.0, 2.0))
        energy = np.abs(stack.coefficients[:, 0, 0, 0]) ** 2
        assert energy.argmax() == 8
        assert energy[8] / energy.sum() >= 1.0 - 1e-9
        assert stack.bin_frequencies[8] == pytest.approx(2.0)

    def test_matches_direct_dft_summation(self, rng):
        t_total = 48
        disp = rng.normal(size=(t_total, 2, 2, 2))
        disp[0] = 0.0
        stack = mode_shapes(MotionTexture(disp, fps=30.0))
        t = np.arange(t_total)
        for b in range(t_total // 2):
            direct = (disp * np.exp(-2j * np.pi * b * t / t_total)
                      [:, None, None, None]).sum(axis=0)
            np.testing.assert_allclose(stack.coefficients[b], direct,
                                       atol=1e-9)

    def test_dc_bin_is_the_unnormalized_time_sum(self, rng):
        # a constant series u(t) = c has DC = T*c and nothing else; constant
        # nonzero motion cannot satisfy the zero-reference invariant, so the
        # law is checked in its general form: DC equals the plain time sum
        t_total = 40
        disp = rng.normal(size=(t_total, 2, 2, 2))
        disp[0] = 0.0
        stack = mode_shapes(MotionTexture(disp, fps=30.0))
        np.testing.assert_allclose(stack.coefficients[0],
                                   disp.sum(axis=0), atol=1e-9)
        # near-constant variant: every frame c except the zero reference
        c = 0.37
        disp2 = np.full((t_total, 1, 1, 2), c)
        disp2[0] = 0.0
        stack2 = mode_shapes(MotionTexture(disp2, fps=30.0))
        assert stack2.coefficients[0, 0, 0, 0] == pytest.approx(
            (t_total - 1) * c, rel=1e-12)

    def test_bin_frequencies_follow_fps_over_t(self):
        stack = mode_shapes(MotionTexture(np.zeros((50, 1, 1, 2)), fps=25.0))
        np.testing.assert_allclose(stack.bin_frequencies,
                                   np.arange(25) * 25.0 / 50)

    def test_parseval_and_exact_bins_against_full_transform(self, rng):
        t_total = 101  # odd length: retained bins cover every frequency pair
        disp = rng.normal(size=(t_total, 2, 3, 2))
        disp[0] = 0.0
        stack = mode_shapes(MotionTexture(disp, fps=30.0))
        full = np.fft.fft(disp, axis=0)
        time_energy = (disp ** 2).sum(axis=0)
        freq_energy = (np.abs(full) ** 2).sum(axis=0) / t_total
        np.testing.assert_allclose(freq_energy, time_energy, rtol=1e-9)
        np.testing.assert_allclose(stack.coefficients,
                                   full[: t_total // 2], atol=1e-12 * t_total)

    def test_full_spectrum_inverts_back_to_the_signal(self, rng):
        t_total = 51
        disp = rng.normal(size=(t_total, 1, 2, 2))
        disp[0] = 0.0
        stack = mode_shapes(MotionTexture(disp, fps=30.0))
        # odd T: bins 1..(T-1)/2 plus conjugates reconstruct the signal
        full = np.zeros((t_total, 1, 2, 2), dtype=np.complex128)
        full[: t_total // 2] = stack.coefficients
        nyq = t_total // 2
        full[nyq] = np.fft.fft(disp, axis=0)[nyq]
        full[nyq + 1:] = np.conj(full[1:nyq + 1][::-1])
        rebuilt = np.fft.ifft(full, axis=0).real
        np.testing.assert_allclose(rebuilt, disp, atol=1e-9)


class TestPowerSpectrum:
    def test_zero_stack_gives_zero_spectrum(self):
        stack = mode_shapes(MotionTexture(np.zeros((20, 2, 2, 2)), fps=30.0))
        ps = power_spectrum(stack, np.ones((2, 2), bool))
        np.testing.assert_allclose(ps.amplitudes, 0.0)

    def test_peaked_at_the_sinusoid_bin(self):
        stack = mode_shapes(sinusoid_motion(128, 32.0, 2.0, shape=(2, 2)))
        ps = power_spectrum(stack, np.ones((2, 2), bool))
        assert ps.amplitudes.argmax() == 8

    def test_two_pixel_mean_amplitude(self):
        # pixels with bin-aligned amplitudes a and 3a in both directions:
        # |coefficient| = amplitude * T/2, so the mask mean is 2a * T/2
        a, t_total, fps, freq = 0.7, 64, 32.0, 4.0
        t = np.arange(t_total)
        disp = np.zeros((t_total, 1, 2, 2))
        disp[:, 0, 0, :] = a * np.sin(2 * np.pi * freq * t / fps)[:, None]
        disp[:, 0, 1, :] = 3 * a * np.sin(2 * np.pi * freq * t / fps)[:, None]
        stack = mode_shapes(MotionTexture(disp, fps=fps))
        ps = power_spectrum(stack, np.ones((1, 2), bool))
        b = int(round(freq * t_total / fps))
        assert ps.amplitudes[b] == pytest.approx(2 * a * t_total / 2,
                                                 rel=1e-9)

    def test_empty_mask_rejected(self):
        stack = mode_shapes(MotionTexture(np.zeros((8, 2, 2, 2)), fps=30.0))
        with pytest.raises(ValueError):
            power_spectrum(stack, np.zeros((2, 2), bool))


class TestSelectBand:
    def test_twenty_bins_on_a_200_frame_30fps_clip(self):
        stack = mode_shapes(MotionTexture(np.zeros((200, 1, 1, 2)), fps=30.0))
        bins, freqs = select_band(stack, 20)
        np.testing.assert_array_equal(bins, np.arange(1, 21))
        np.testing.assert_allclose(freqs, 0.15 * np.arange(1, 21))
        assert 0.1 <= freqs[0] <= 0.2 and freqs[-1] == pytest.approx(3.0)

    def test_single_mode_defaults_to_first_bin_above_dc(self):
        stack = mode_shapes(MotionTexture(np.zeros((30, 1, 1, 2)), fps=30.0))
        bins, _ = select_band(stack, 1)
        np.testing.assert_array_equal(bins, [1])

    def test_requesting_every_bin_overflows(self):
        stack = mode_shapes(MotionTexture(np.zeros((30, 1, 1, 2)), fps=30.0))
        with pytest.raises(ValueError):
            select_band(stack, 15)

    def test_dc_included_when_not_skipped(self):
        stack = mode_shapes(MotionTexture(np.zeros((30, 1, 1, 2)), fps=30.0))
        bins, _ = select_band(stack, 3, skip_dc=False)
        np.testing.assert_array_equal(bins, [0, 1, 2])

    def test_top_energy_finds_a_concentrated_bin(self):
        stack = mode_shapes(sinusoid_motion(120, 30.0, 2.75))
        bins, freqs = select_band(stack, 1, strategy="top_energy")
        assert bins[0] == 11
        assert freqs[0] == pytest.approx(2.75)

    def test_selection_independent_of_pixel_ordering(self, rng):
        disp = rng.normal(size=(40, 3, 4, 2))
        disp[0] = 0.0
        stack = mode_shapes(MotionTexture(disp, fps=30.0))
        shuffled = disp.reshape(40, 12, 2)[:, rng.permutation(12), :]
        stack_s = mode_shapes(MotionTexture(shuffled.reshape(40, 3, 4, 2),
                                            fps=30.0))
        for strategy in ("first", "top_energy"):
            b1, _ = select_band(stack, 5, strategy=strategy)
            b2, _ = select_band(stack_s, 5, strategy=strategy)
            np.testing.assert_array_equal(b1, b2)

    def test_unknown_strategy_rejected(self):
        stack = mode_shapes(MotionTexture(np.zeros((30, 1, 1, 2)), fps=30.0))
        with pytest.raises(ValueError):
            select_band(stack, 2, strategy="loudest")


class TestAssembleModalMatrix:
    def test_single_pixel_column_normalized(self):
        coeffs = np.zeros((4, 1, 1, 2), dtype=np.complex128)
        coeffs[2, 0, 0, 0] = 3.0 + 4.0j
        stack_t = 8
        stack = _stack_from_coeffs(coeffs, fps=30.0, n_frames=stack_t)
        roi = RegionOfInterest(0, 0, 1, 1)
        modal = assemble_modal_matrix(stack, np.array([2]), roi)
        np.testing.assert_allclose(modal.columns[:, 0],
                                   [0.6 + 0.8j, 0.0], atol=1e-12)
        assert np.linalg.norm(modal.columns[:, 0]) == pytest.approx(1.0)

    def test_shape_is_two_n_by_k(self, rng):
        disp = rng.normal(size=(40, 6, 5, 2))
        disp[0] = 0.0
        stack = mode_shapes(MotionTexture(disp, fps=30.0))
        roi = RegionOfInterest(1, 2, 3, 4)
        modal = assemble_modal_matrix(stack, np.arange(1, 8), roi)
        assert modal.columns.shape == (2 * 12, 7)
        np.testing.assert_allclose(np.linalg.norm(modal.columns, axis=0),
                                   1.0, atol=1e-9)

    def test_zero_energy_bin_error_names_the_bin(self):
        coeffs = np.zeros((5, 2, 2, 2), dtype=np.complex128)
        coeffs[1] = 1.0
        stack = _stack_from_coeffs(coeffs, fps=30.0, n_frames=10)
        with pytest.raises(ValueError, match="bin 3"):
            assemble_modal_matrix(stack, np.array([1, 3]),
                                  RegionOfInterest(0, 0, 2, 2))

    def test_dc_frequency_rejected_in_modal_matrix(self):
        with pytest.raises(ValueError, match="DC"):
            ModalMatrix(np.ones((2, 1)) / np.sqrt(2.0), np.array([0.0]),
                        RegionOfInterest(0, 0, 1, 1), fps=30.0)


class TestModalFileFormat:
    def test_round_trip_preserves_payload_bitwise(self, tmp_path, rng):
        cols = (rng.normal(size=(24, 4)) + 1j * rng.normal(size=(24, 4)))
        cols = (cols.astype(np.complex64)
                / np.linalg.norm(cols.astype(np.complex64), axis=0))
        modal = ModalMatrix(cols.astype(np.complex128),
                            np.array([0.5, 1.0, 1.5, 2.0]),
                            RegionOfInterest(2, 3, 4, 3), fps=30.0)
        path = tmp_path / "m.msh1"
        write_modal_file(modal, path)
        back = read_modal_file(path)
        assert np.array_equal(
            back.columns.astype(np.complex64).tobytes(),
            modal.columns.astype(np.complex64).tobytes())
        np.testing.assert_allclose(back.mode_frequencies,
                                   modal.mode_frequencies.astype(np.float32))
        assert (back.roi.x0, back.roi.y0, back.roi.width, back.roi.height) \
            == (2, 3, 4, 3)
        assert back.fps == pytest.approx(30.0)

    def test_masked_region_not_representable(self, tmp_path):
        mask = np.array([[True, False], [True, True]])
        roi = RegionOfInterest(0, 0, 2, 2, mask=mask)
        cols = np.ones((6, 1), dtype=np.complex128) / np.sqrt(6.0)
        modal = ModalMatrix(cols, np.array([1.0]), roi, fps=30.0)
        with pytest.raises(ValueError, match="rect"):
            write_modal_file(modal, tmp_path / "m.msh1")

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.msh1"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(ValueError, match="magic"):
            read_modal_file(path)


def _stack_from_coeffs(coeffs: np.ndarray, fps: float, n_frames: int):
    from modalforce import SpectralStack

    bins = np.arange(coeffs.shape[0]) * fps / n_frames
    return SpectralStack(coefficients=coeffs, bin_frequencies=bins,
                         fps=fps, n_frames=n_frames)

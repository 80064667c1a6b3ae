"""Projection, resampling, normalization, and alignment-metric tests."""
from __future__ import annotations

import numpy as np
import pytest

from modalforce import (CameraModel, ReferenceForceSeries, evaluate_signals,
                        max_cross_correlation, metrics_at_lag, project_force,
                        resample_linear, znorm)
from modalforce.evaluate import load_camera, read_reference_csv, write_metrics_csv


def camera(fx=1.0, fy=1.0, rotation=None) -> CameraModel:
    if rotation is None:
        rotation = np.eye(3)
    return CameraModel(fx=fx, fy=fy, cx=0.0, cy=0.0, rotation=rotation)


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def brute_force_correlation(pred, ref, max_lag):
    """Independent re-derivation of the lag-searched correlation."""
    n = len(pred)
    energy = np.linalg.norm(pred) * np.linalg.norm(ref)
    best = None
    for k in range(-max_lag, max_lag + 1):
        total = sum(pred[t] * ref[t - k]
                    for t in range(n) if 0 <= t - k < n)
        r = total / energy
        if best is None or r > best[0] + 1e-15 or (
                abs(r - best[0]) <= 1e-15 and abs(k) < abs(best[1])):
            best = (r, k)
    return best


class TestProjectForce:
    def test_camera_axis_force_vanishes(self):
        series = ReferenceForceSeries(np.arange(2.0),
                                      np.array([[0.0, 0.0, 5.0]] * 2))
        np.testing.assert_allclose(project_force(series, camera()), 0.0,
                                   atol=1e-12)

    def test_x_force_maps_to_image_u(self):
        series = ReferenceForceSeries(np.arange(2.0),
                                      np.array([[1.0, 0.0, 0.0]] * 2))
        out = project_force(series, camera())
        np.testing.assert_allclose(out, [[1.0, 0.0]] * 2, atol=1e-12)

    def test_quarter_turn_about_camera_axis(self):
        series = ReferenceForceSeries(np.arange(2.0),
                                      np.array([[1.0, 0.0, 0.0]] * 2))
        out = project_force(series, camera(rotation=rot_z(np.pi / 2)))
        np.testing.assert_allclose(out, [[0.0, -1.0]] * 2, atol=1e-12)

    def test_scales_by_the_focal_lengths(self):
        series = ReferenceForceSeries(np.arange(2.0),
                                      np.array([[1.0, 1.0, 0.0]] * 2))
        out = project_force(series, camera(fx=700.0, fy=520.0))
        np.testing.assert_allclose(out, [[700.0, -520.0]] * 2, atol=1e-9)

    def test_peak_timing_invariant_under_camera_axis_rotation(self, rng):
        forces = rng.normal(size=(40, 3))
        series = ReferenceForceSeries(np.arange(40.0), forces)
        base = np.linalg.norm(project_force(series, camera(fx=2.0, fy=2.0)),
                              axis=1)
        for theta in (0.5, 2.1):
            rotated = np.linalg.norm(
                project_force(series, camera(fx=2.0, fy=2.0,
                                             rotation=rot_z(theta))), axis=1)
            assert rotated.argmax() == base.argmax()
            np.testing.assert_allclose(rotated, base, atol=1e-9)

    def test_improper_rotation_rejected(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            camera(rotation=flip)

    def test_non_orthonormal_rotation_rejected(self):
        with pytest.raises(ValueError):
            camera(rotation=np.eye(3) * 1.01)


class TestResampleLinear:
    def test_same_length_is_identity(self, rng):
        sig = rng.normal(size=17)
        np.testing.assert_array_equal(resample_linear(sig, 17), sig)

    def test_midpoint_interpolation(self):
        np.testing.assert_allclose(resample_linear(np.array([0.0, 2.0]), 3),
                                   [0.0, 1.0, 2.0], atol=1e-12)

    def test_ramp_resampled_onto_the_analytic_line(self):
        ramp = np.linspace(0.0, 5.0, 100)
        out = resample_linear(ramp, 37)
        expected = np.linspace(0.0, 5.0, 37)
        assert np.abs(out - expected).max() <= 1e-12

    def test_endpoints_preserved_exactly(self, rng):
        sig = rng.normal(size=23)
        out = resample_linear(sig, 11)
        assert out[0] == sig[0] and out[-1] == sig[-1]

    def test_short_target_rejected(self):
        with pytest.raises(ValueError):
            resample_linear(np.arange(5.0), 1)


class TestZnorm:
    def test_constant_becomes_zeros(self):
        np.testing.assert_array_equal(znorm(np.full(9, 3.3)), np.zeros(9))

    def test_two_point_example(self):
        np.testing.assert_allclose(znorm(np.array([0.0, 2.0])), [-1.0, 1.0],
                                   atol=1e-12)

    def test_idempotent(self, rng):
        sig = rng.normal(size=50) * 4 + 2
        once = znorm(sig)
        np.testing.assert_allclose(znorm(once), once, atol=1e-12)
        assert abs(once.mean()) <= 1e-12
        assert abs(once.std() - 1.0) <= 1e-12


class TestMaxCrossCorrelation:
    def test_self_correlation_is_one_at_zero_lag(self, rng):
        sig = rng.normal(size=40)
        r, k = max_cross_correlation(sig, sig, 10)
        assert r == pytest.approx(1.0, abs=1e-12)
        assert k == 0

    def test_negation_gives_minus_one(self, rng):
        sig = znorm(rng.normal(size=40))
        r, _ = max_cross_correlation(sig, -sig, 0)
        assert r == pytest.approx(-1.0, abs=1e-12)

    def test_shifted_sinusoid_recovers_the_shift(self):
        t = np.arange(60)
        ref = znorm(np.sin(2 * np.pi * t / 12))
        pred = np.zeros(60)
        pred[5:] = ref[:-5]  # pred[t] = ref[t-5]
        r, k = max_cross_correlation(pred, ref, 15)
        assert k == 5
        br, bk = brute_force_correlation(pred, ref, 15)
        assert (r, k) == (pytest.approx(br, abs=1e-12), bk)

    def test_matches_brute_force_on_random_signals(self, rng):
        for _ in range(5):
            pred = rng.normal(size=30)
            ref = rng.normal(size=30)
            r, k = max_cross_correlation(pred, ref, 8)
            br, bk = brute_force_correlation(pred, ref, 8)
            assert r == pytest.approx(br, abs=1e-12)
            assert k == bk

    def test_ties_break_toward_smaller_absolute_lag(self):
        r, k = max_cross_correlation(np.array([0.0, 1.0, 0.0]),
                                     np.array([1.0, 1.0, 1.0]), 1)
        assert k == 0
        assert r == pytest.approx(1.0 / np.sqrt(3.0), abs=1e-12)

    def test_shift_equivariance_on_enveloped_signals(self, rng):
        t = np.arange(80.0)
        x = np.exp(-((t - 40) / 12) ** 2) * np.sin(2 * np.pi * t / 9)
        for shift in (-7, -2, 0, 3, 11):
            shifted = np.zeros(80)
            if shift >= 0:
                shifted[shift:] = x[: 80 - shift]
            else:
                shifted[:shift] = x[-shift:]
            _, k = max_cross_correlation(shifted, x, 15)
            assert k == shift

    def test_scale_invariance(self, rng):
        pred = rng.normal(size=50)
        ref = rng.normal(size=50)
        r0, k0 = max_cross_correlation(pred, ref, 10)
        for alpha in (1e-6, 0.5, 3.0, 1e6):
            r, k = max_cross_correlation(alpha * pred, ref, 10)
            assert abs(r - r0) <= 1e-12 and k == k0
            r, k = max_cross_correlation(pred, alpha * ref, 10)
            assert abs(r - r0) <= 1e-12 and k == k0

    def test_degenerate_signal_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            max_cross_correlation(np.zeros(10), np.ones(10), 2)


class TestMetricsAtLag:
    def test_identical_signals(self, rng):
        sig = rng.normal(size=30)
        cosine, mae, rmse = metrics_at_lag(sig, sig, 0)
        assert cosine == pytest.approx(1.0, abs=1e-12)
        assert mae == pytest.approx(0.0, abs=1e-12)
        assert rmse == pytest.approx(0.0, abs=1e-12)

    def test_negated_reference_gives_cosine_minus_one(self, rng):
        sig = rng.normal(size=30)
        cosine, _, _ = metrics_at_lag(sig, -sig, 0)
        assert cosine == pytest.approx(-1.0, abs=1e-12)

    def test_rmse_squared_equals_mse(self, rng):
        pred = rng.normal(size=40)
        ref = rng.normal(size=40)
        k = 3
        _, _, rmse = metrics_at_lag(pred, ref, k)
        zp, zr = znorm(pred), znorm(ref)
        mse = np.mean((zp[k:] - zr[:-k]) ** 2)
        assert rmse ** 2 == pytest.approx(mse, abs=1e-12)

    def test_empty_overlap_rejected(self, rng):
        with pytest.raises(ValueError, match="overlap"):
            metrics_at_lag(rng.normal(size=10), rng.normal(size=10), 10)


class TestEvaluateSignals:
    def test_identical_inputs_score_perfectly(self, rng):
        u = rng.normal(size=60)
        v = rng.normal(size=60)
        report = evaluate_signals(u, v, u, v)
        assert report.norm.cc == pytest.approx(1.0, abs=1e-9)
        assert report.norm.lag == 0
        assert report.u.cosine == pytest.approx(1.0, abs=1e-9)
        for _, channel in report.channels():
            assert -1.0 <= channel.cc <= 1.0
            assert -1.0 <= channel.cosine <= 1.0

    def test_reference_resampled_to_prediction_length(self, rng):
        t = np.linspace(0.0, 1.0, 120)
        ref_u = np.sin(2 * np.pi * 2 * t)
        ref_v = np.cos(2 * np.pi * 3 * t)
        pred_t = np.linspace(0.0, 1.0, 60)
        pred_u = np.sin(2 * np.pi * 2 * pred_t)
        pred_v = np.cos(2 * np.pi * 3 * pred_t)
        report = evaluate_signals(pred_u, pred_v, ref_u, ref_v)
        assert report.u.cc >= 0.99
        assert abs(report.u.lag) <= 1


class TestEvalFileIO:
    def test_camera_ini_round_trip(self, tmp_path):
        path = tmp_path / "cam.ini"
        path.write_text("[camera]\nfx = 700\nfy = 520\ncx = 320\ncy = 240\n"
                        "rotation = 0 -1 0 1 0 0 0 0 1\n")
        cam = load_camera(path)
        assert (cam.fx, cam.fy, cam.cx, cam.cy) == (700.0, 520.0, 320.0, 240.0)
        np.testing.assert_allclose(cam.rotation, rot_z(np.pi / 2), atol=1e-12)

    def test_camera_missing_section_rejected(self, tmp_path):
        path = tmp_path / "cam.ini"
        path.write_text("[lens]\nfx = 1\n")
        with pytest.raises(ValueError, match="camera"):
            load_camera(path)

    def test_reference_csv_round_trip(self, tmp_path, rng):
        path = tmp_path / "ref.csv"
        rows = ["t,fx,fy,fz"]
        data = rng.normal(size=(5, 3))
        for i in range(5):
            fx, fy, fz = (float(x) for x in data[i])
            rows.append(f"{i / 30.0!r},{fx!r},{fy!r},{fz!r}")
        path.write_text("\n".join(rows) + "\n")
        series = read_reference_csv(path)
        np.testing.assert_array_equal(series.forces, data)

    def test_reference_csv_header_enforced(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text("time,a,b,c\n0,1,2,3\n1,2,3,4\n")
        with pytest.raises(ValueError, match="header"):
            read_reference_csv(path)

    def test_metrics_csv_lists_all_channels(self, tmp_path, rng):
        sig = rng.normal(size=40)
        report = evaluate_signals(sig, sig, sig, sig)
        path = tmp_path / "metrics.csv"
        write_metrics_csv(report, path)
        text = path.read_text()
        for channel in ("Norm", "u", "v"):
            assert any(line.startswith(channel + ",")
                       for line in text.splitlines())

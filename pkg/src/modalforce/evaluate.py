"""Comparison of predicted contact forces against reference force series.

Reference forces measured in 3D (sensor/tool frame) are rotated into the
camera frame and projected to the image plane under a weak-perspective
model; both signals are then resampled to a common length, z-normalized,
and aligned by maximizing the normalized cross-correlation over a bounded
lag window.  Cosine similarity, MAE and RMSE are reported at the optimal
lag.  Physical units are not preserved: all comparisons happen on
z-normalized signals.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_EPS = 1e-12


@dataclass
class CameraModel:
    """Pinhole intrinsics plus a world-to-camera rotation."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-9:
            raise ValueError("rotation must be proper (det +1)")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


@dataclass
class ReferenceForceSeries:
    """Timestamped 3D force vectors from a sensor or synthetic oracle."""

    timestamps: np.ndarray
    forces: np.ndarray

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.forces = np.asarray(self.forces, dtype=np.float64)
        if self.timestamps.ndim != 1 or self.forces.shape != (self.timestamps.shape[0], 3):
            raise ValueError("need (T,) timestamps and (T,3) forces")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")


@dataclass
class ChannelMetrics:
    """Alignment metrics of one signal channel."""

    cc: float
    lag: int
    cosine: float
    mae: float
    rmse: float


@dataclass
class MetricsReport:
    """Per-channel metrics for the norm, u and v components."""

    norm: ChannelMetrics
    u: ChannelMetrics
    v: ChannelMetrics

    def channels(self) -> list[tuple[str, ChannelMetrics]]:
        return [("Norm", self.norm), ("u", self.u), ("v", self.v)]


def load_camera(path: str | Path) -> CameraModel:
    """Read a camera model from an INI file.

    Expected section ``[camera]`` with keys fx, fy, cx, cy and ``rotation``
    holding nine row-major entries (whitespace or comma separated).
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read or "camera" not in parser:
        raise ValueError(f"{path}: missing [camera] section")
    cam = parser["camera"]
    entries = [float(x) for x in cam.get("rotation", "").replace(",", " ").split()]
    if len(entries) != 9:
        raise ValueError(f"{path}: rotation needs 9 entries, got {len(entries)}")
    return CameraModel(fx=cam.getfloat("fx"), fy=cam.getfloat("fy"),
                       cx=cam.getfloat("cx", 0.0), cy=cam.getfloat("cy", 0.0),
                       rotation=np.array(entries).reshape(3, 3))


def read_reference_csv(path: str | Path) -> ReferenceForceSeries:
    """Read a reference force CSV with header ``t,fx,fy,fz``."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = [h.strip() for h in next(reader)]
        if header[:4] != ["t", "fx", "fy", "fz"]:
            raise ValueError(f"{path}: expected header t,fx,fy,fz, got {header}")
        rows = [[float(x) for x in row[:4]] for row in reader if row]
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least 2 samples")
    data = np.asarray(rows)
    return ReferenceForceSeries(timestamps=data[:, 0], forces=data[:, 1:4])


def project_force(series: ReferenceForceSeries, cam: CameraModel) -> np.ndarray:
    """Project 3D reference forces to the image plane, shape (T, 2).

    Each force is rotated into the camera frame; under weak perspective the
    camera-axis component drops and the image-space force is
    (fx * Fx_cam, -fy * Fy_cam).  The sign flip accounts for image rows
    growing downward while the v axis of the reported signals points up.
    """
    cam_forces = series.forces @ cam.rotation.T
    return np.stack([cam.fx * cam_forces[:, 0], -cam.fy * cam_forces[:, 1]], axis=1)


def resample_linear(signal: np.ndarray, target_length: int) -> np.ndarray:
    """Linear resampling onto a uniform grid of the requested length."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] < 2:
        raise ValueError("source signal needs at least 2 samples")
    if target_length < 2:
        raise ValueError("target_length must be at least 2")
    if target_length == signal.shape[0]:
        return signal.copy()
    src = np.linspace(0.0, 1.0, signal.shape[0])
    tgt = np.linspace(0.0, 1.0, target_length)
    if signal.ndim == 1:
        return np.interp(tgt, src, signal)
    return np.stack([np.interp(tgt, src, signal[:, j]) for j in range(signal.shape[1])],
                    axis=1)


def znorm(signal: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-population-std version of a signal (zeros if constant)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] < 2:
        raise ValueError("signal needs at least 2 samples")
    std = signal.std()
    if std <= _EPS:
        return np.zeros_like(signal)
    return (signal - signal.mean()) / std


def max_cross_correlation(pred: np.ndarray, ref: np.ndarray,
                          max_lag: int) -> tuple[float, int]:
    """Maximum normalized cross-correlation over lags in [-max_lag, max_lag].

    Out-of-range samples are treated as zero (zero padding, not circular).
    The correlation at lag k pairs pred[t] with ref[t - k] and is normalized
    by the product of the full signal energies, so identical inputs give
    R = 1 at k = 0.  Ties break toward the smaller |k|.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape or pred.ndim != 1:
        raise ValueError("signals must be equal-length 1-D arrays (resample first)")
    n = pred.shape[0]
    if not 0 <= max_lag < n:
        raise ValueError("max_lag must satisfy 0 <= max_lag < length")
    energy = np.linalg.norm(pred) * np.linalg.norm(ref)
    if energy <= _EPS:
        raise ValueError("degenerate signal")

    best_r = -np.inf
    best_k = 0
    for k in sorted(range(-max_lag, max_lag + 1), key=lambda k: (abs(k), k)):
        if k >= 0:
            r = float(np.dot(pred[k:], ref[: n - k]) / energy)
        else:
            r = float(np.dot(pred[: n + k], ref[-k:]) / energy)
        if r > best_r:
            best_r = r
            best_k = k
    return float(best_r), best_k


def metrics_at_lag(pred: np.ndarray, ref: np.ndarray, k: int) -> tuple[float, float, float]:
    """Cosine similarity, MAE and RMSE of z-normalized signals aligned at lag k."""
    pred = znorm(np.asarray(pred, dtype=np.float64))
    ref = znorm(np.asarray(ref, dtype=np.float64))
    n = pred.shape[0]
    if k >= 0:
        a, b = pred[k:], ref[: n - k]
    else:
        a, b = pred[: n + k], ref[-k:]
    if a.shape[0] == 0:
        raise ValueError("empty overlap at the requested lag")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cosine = float(np.dot(a, b) / (na * nb)) if na > _EPS and nb > _EPS else 0.0
    diff = a - b
    mae = float(np.abs(diff).mean())
    rmse = float(np.sqrt(np.mean(diff * diff)))
    return cosine, mae, rmse


def _channel_metrics(pred: np.ndarray, ref: np.ndarray, max_lag: int) -> ChannelMetrics:
    zp, zr = znorm(pred), znorm(ref)
    cc, lag = max_cross_correlation(zp, zr, max_lag)
    cosine, mae, rmse = metrics_at_lag(pred, ref, lag)
    return ChannelMetrics(cc=cc, lag=lag, cosine=cosine, mae=mae, rmse=rmse)


def evaluate_signals(pred_u: np.ndarray, pred_v: np.ndarray,
                     ref_u: np.ndarray, ref_v: np.ndarray,
                     max_lag: int | None = None) -> MetricsReport:
    """Full per-channel comparison of predicted vs reference 2D force signals.

    The reference is resampled to the prediction length first.  ``max_lag``
    defaults to a quarter of the signal length.
    """
    pred_u = np.asarray(pred_u, dtype=np.float64)
    pred_v = np.asarray(pred_v, dtype=np.float64)
    n = pred_u.shape[0]
    ref = np.stack([np.asarray(ref_u, dtype=np.float64),
                    np.asarray(ref_v, dtype=np.float64)], axis=1)
    ref = resample_linear(ref, n)
    if max_lag is None:
        max_lag = n // 4
    pred_norm = np.hypot(pred_u, pred_v)
    ref_norm = np.hypot(ref[:, 0], ref[:, 1])
    return MetricsReport(
        norm=_channel_metrics(pred_norm, ref_norm, max_lag),
        u=_channel_metrics(pred_u, ref[:, 0], max_lag),
        v=_channel_metrics(pred_v, ref[:, 1], max_lag),
    )


def write_metrics_csv(report: MetricsReport, path: str | Path) -> None:
    """Write a metrics report as CSV with one row per channel."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["channel", "cc", "cs", "rmse", "mae", "lag"])
        for name, ch in report.channels():
            writer.writerow([name, repr(ch.cc), repr(ch.cosine),
                             repr(ch.rmse), repr(ch.mae), ch.lag])

"""Contact-force signals from force textures, plus qualitative overlays.

The contact force is a weighted sum of the per-pixel force over the region
of interest, one (u, v) sample per frame.  Before aggregation the force
texture is normalized twice: spatially per frame, then temporally per
pixel, which suppresses static per-pixel bias and equalizes pixel
contributions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import RegionOfInterest
from .solver import ForceTexture

_EPS = 1e-12

ARROW_COLOR = np.array([1.0, 1.0, 0.0])  # yellow
_BACKGROUND_DIM = 0.8


@dataclass
class ContactForceSignal:
    """Aggregated (u, v) contact force per frame with its Euclidean norm."""

    u: np.ndarray
    v: np.ndarray
    fps: float
    roi: RegionOfInterest | None = None

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 1:
            raise ValueError("u and v must be equal-length 1-D arrays")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def norm(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.u.shape[0]) / self.fps

    def __len__(self) -> int:
        return self.u.shape[0]


def contact_force(ft: ForceTexture, roi: RegionOfInterest | None = None,
                  normalization: str = "area") -> ContactForceSignal:
    """Aggregate a force texture into a per-frame contact-force signal.

    The "area" normalization divides the sum over active pixels by the ROI
    rectangle area width*height (for a full rectangle this is the mean);
    "active" divides by the number of active pixels instead.
    """
    if roi is None:
        roi = ft.roi
    roi.validate_inside(ft.image_shape)
    active = roi.active_mask()
    if normalization == "area":
        denom = roi.width * roi.height
    elif normalization == "active":
        denom = roi.n_active
    else:
        raise ValueError(f"unknown normalization {normalization!r}")

    patch = ft.forces[:, roi.y0 : roi.y0 + roi.height, roi.x0 : roi.x0 + roi.width]
    sums = patch[:, active, :].sum(axis=1) / denom
    return ContactForceSignal(u=sums[:, 0], v=sums[:, 1], fps=ft.fps, roi=roi)


def normalize_texture(ft: ForceTexture) -> ForceTexture:
    """Two-stage normalization of a force texture over its ROI.

    Stage 1 z-scores each frame and direction with the spatial mean and
    standard deviation over active ROI pixels; stage 2 z-scores each pixel
    and direction over time.  Degenerate (zero-variance) slices become
    zero rather than dividing by noise.
    """
    if len(ft) < 2:
        raise ValueError("need at least 2 frames to normalize")
    roi = ft.roi
    active = roi.active_mask()
    patch = ft.forces[:, roi.y0 : roi.y0 + roi.height,
                      roi.x0 : roi.x0 + roi.width][:, active, :]

    mean_s = patch.mean(axis=1, keepdims=True)
    std_s = patch.std(axis=1, keepdims=True)
    stage1 = np.where(std_s > _EPS, (patch - mean_s) / np.where(std_s > _EPS, std_s, 1.0), 0.0)

    mean_t = stage1.mean(axis=0, keepdims=True)
    std_t = stage1.std(axis=0, keepdims=True)
    stage2 = np.where(std_t > _EPS, (stage1 - mean_t) / np.where(std_t > _EPS, std_t, 1.0), 0.0)

    out = np.zeros_like(ft.forces)
    opatch = out[:, roi.y0 : roi.y0 + roi.height, roi.x0 : roi.x0 + roi.width]
    opatch[:, active, :] = stage2
    return ForceTexture(forces=out, mode=ft.mode, roi=roi, fps=ft.fps,
                        imag_residual=ft.imag_residual)


def _draw_line(image: np.ndarray, y0: float, x0: float, y1: float, x1: float,
               color: np.ndarray) -> None:
    """Paint a straight segment by dense sampling (deterministic, no AA)."""
    steps = int(max(abs(x1 - x0), abs(y1 - y0), 1.0) * 2.0) + 1
    ts = np.linspace(0.0, 1.0, steps)
    ys = np.rint(y0 + ts * (y1 - y0)).astype(int)
    xs = np.rint(x0 + ts * (x1 - x0)).astype(int)
    h, w = image.shape[:2]
    inside = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    image[ys[inside], xs[inside]] = color


def render_overlay(frame: np.ndarray, ft: ForceTexture, t: int,
                   roi: RegionOfInterest | None = None, stride: int = 8) -> np.ndarray:
    """Render a frame with the ROI outlined and force arrows on a grid.

    Arrows sit every ``stride`` pixels inside the ROI; their length is the
    force magnitude normalized by the frame's peak magnitude, scaled to at
    most ``stride`` pixels.  The background is dimmed for contrast and the
    output is an 8-bit RGB raster, bit-identical for identical inputs.
    """
    if not 0 <= t < len(ft):
        raise ValueError(f"frame index {t} out of range [0, {len(ft)})")
    if roi is None:
        roi = ft.roi
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        rgb = np.repeat(frame[:, :, None], 3, axis=2)
    else:
        rgb = frame.copy()
    rgb *= _BACKGROUND_DIM

    y0, x0 = roi.y0, roi.x0
    y1, x1 = y0 + roi.height - 1, x0 + roi.width - 1
    _draw_line(rgb, y0, x0, y0, x1, ARROW_COLOR)
    _draw_line(rgb, y1, x0, y1, x1, ARROW_COLOR)
    _draw_line(rgb, y0, x0, y1, x0, ARROW_COLOR)
    _draw_line(rgb, y0, x1, y1, x1, ARROW_COLOR)

    field_uv = ft.forces[t]
    mags = np.hypot(field_uv[..., 0], field_uv[..., 1])
    active = roi.active_mask()
    patch_mags = mags[y0 : y0 + roi.height, x0 : x0 + roi.width]
    peak = float(patch_mags[active].max()) if active.any() else 0.0

    if peak > _EPS:
        for gy in range(y0 + stride // 2, y0 + roi.height, stride):
            for gx in range(x0 + stride // 2, x0 + roi.width, stride):
                if not active[gy - y0, gx - x0]:
                    continue
                fu, fv = field_uv[gy, gx]
                length = min(mags[gy, gx] / peak, 1.0) * stride
                if length < 0.5:
                    continue
                ux, uy = fu / mags[gy, gx], fv / mags[gy, gx]
                tip_x = gx + ux * length
                tip_y = gy + uy * length
                _draw_line(rgb, gy, gx, tip_y, tip_x, ARROW_COLOR)
                # Two short barbs at 135 degrees off the shaft mark the head.
                head = max(1.5, length / 3.0)
                for sign in (1.0, -1.0):
                    c, s = -0.7071067811865476, sign * 0.7071067811865476
                    hx = tip_x + head * (c * ux - s * uy)
                    hy = tip_y + head * (s * ux + c * uy)
                    _draw_line(rgb, tip_y, tip_x, hy, hx, ARROW_COLOR)

    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def write_signal_csv(signal: ContactForceSignal, path: str | Path) -> None:
    """Write a contact signal as CSV with header ``t,fu,fv,norm``."""
    norm = signal.norm
    times = signal.times
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "fu", "fv", "norm"])
        for i in range(len(signal)):
            writer.writerow([repr(float(times[i])), repr(float(signal.u[i])),
                             repr(float(signal.v[i])), repr(float(norm[i]))])


def read_signal_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a ``t,fu,fv,norm`` CSV; returns (times, u, v) arrays."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if [h.strip() for h in header[:3]] != ["t", "fu", "fv"]:
            raise ValueError(f"{path}: expected header t,fu,fv,norm, got {header}")
        rows = [[float(x) for x in row[:3]] for row in reader if row]
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least 2 samples")
    data = np.asarray(rows)
    return data[:, 0], data[:, 1], data[:, 2]

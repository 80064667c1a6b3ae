"""Frequency-domain analysis of motion textures and the truncated modal basis.

Each pixel and displacement direction carries a time series; its temporal
DFT yields complex mode shapes per frequency bin.  A small band of bins,
stacked over a region of interest and normalized, forms the modal matrix
used by the force solver.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import MotionTexture, RegionOfInterest

logger = logging.getLogger(__name__)

MODAL_MAGIC = b"MSH1"
MODAL_VERSION = 1


@dataclass
class SpectralStack:
    """Positive-frequency temporal DFT coefficients of a motion texture.

    ``coefficients[b, y, x, d]`` is the unnormalized forward-transform
    coefficient of bin ``b`` (frequency ``b * fps / n_frames`` Hz) for
    direction ``d`` (0 = u, 1 = v).  Bins run 0 .. floor(T/2) - 1.
    """

    coefficients: np.ndarray
    bin_frequencies: np.ndarray
    fps: float
    n_frames: int

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=np.complex128)
        self.bin_frequencies = np.asarray(self.bin_frequencies, dtype=np.float64)
        if self.coefficients.ndim != 4 or self.coefficients.shape[-1] != 2:
            raise ValueError(f"coefficients must be (B,H,W,2), got {self.coefficients.shape}")
        if self.coefficients.shape[0] != self.n_frames // 2:
            raise ValueError("coefficient count must equal floor(T/2)")
        if self.bin_frequencies.shape[0] != self.coefficients.shape[0]:
            raise ValueError("bin_frequencies length mismatch")
        if np.any(np.diff(self.bin_frequencies) <= 0):
            raise ValueError("bin_frequencies must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return self.coefficients.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.coefficients.shape[1], self.coefficients.shape[2]


@dataclass
class PowerSpectrum:
    """Per-bin mean coefficient amplitude over a pixel mask (dimensionless)."""

    amplitudes: np.ndarray
    bin_frequencies: np.ndarray

    def __post_init__(self) -> None:
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        self.bin_frequencies = np.asarray(self.bin_frequencies, dtype=np.float64)
        if self.amplitudes.shape != self.bin_frequencies.shape:
            raise ValueError("amplitudes and bin_frequencies must align")
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be nonnegative")


@dataclass
class ModalMatrix:
    """Truncated complex modal basis over a region of interest.

    ``columns`` is 2N x K: rows stack the u components of the N active ROI
    pixels (row-major) followed by their v components; column k is the mode
    shape of the k-th selected frequency, scaled to unit L2 norm.
    """

    columns: np.ndarray
    mode_frequencies: np.ndarray
    roi: RegionOfInterest
    fps: float

    def __post_init__(self) -> None:
        self.columns = np.asarray(self.columns, dtype=np.complex128)
        self.mode_frequencies = np.asarray(self.mode_frequencies, dtype=np.float64)
        if self.columns.ndim != 2:
            raise ValueError("columns must be a 2N x K matrix")
        n2, k = self.columns.shape
        if k < 1:
            raise ValueError("need at least one mode")
        if n2 != 2 * self.roi.n_active:
            raise ValueError(f"row count {n2} != 2N = {2 * self.roi.n_active}")
        if self.mode_frequencies.shape[0] != k:
            raise ValueError("one frequency per mode required")
        if np.any(self.mode_frequencies <= 0):
            raise ValueError("mode frequencies must exclude the DC bin")
        norms = np.linalg.norm(self.columns, axis=0)
        # Loose tolerance accommodates single-precision container payloads.
        if np.any(np.abs(norms - 1.0) > 1e-5):
            raise ValueError("modal columns must have unit L2 norm")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def n_modes(self) -> int:
        return self.columns.shape[1]


def mode_shapes(motion: MotionTexture) -> SpectralStack:
    """Per-pixel, per-direction temporal DFT of a motion texture.

    Uses the unnormalized forward transform and keeps the floor(T/2)
    nonnegative-frequency bins (bin b corresponds to b*fps/T Hz).
    """
    t_total = len(motion)
    if t_total < 4:
        raise ValueError("need at least 4 frames for a spectrum")
    disp = motion.displacements
    if not np.isfinite(disp).all():
        raise ValueError("motion texture contains non-finite values")
    n_bins = t_total // 2
    coeffs = np.fft.rfft(disp, axis=0)[:n_bins]
    freqs = np.arange(n_bins) * (motion.fps / t_total)
    return SpectralStack(coefficients=coeffs, bin_frequencies=freqs,
                         fps=motion.fps, n_frames=t_total)


def power_spectrum(spec: SpectralStack, mask: np.ndarray) -> PowerSpectrum:
    """Mean coefficient amplitude per bin over active pixels and both directions."""
    mask = np.asarray(mask).astype(bool)
    if mask.shape != spec.image_shape:
        raise ValueError(f"mask shape {mask.shape} does not match {spec.image_shape}")
    if not mask.any():
        raise ValueError("empty mask")
    amp = np.abs(spec.coefficients[:, mask, :])
    return PowerSpectrum(amplitudes=amp.mean(axis=(1, 2)),
                         bin_frequencies=spec.bin_frequencies.copy())


def select_band(spec: SpectralStack, k: int, skip_dc: bool = True,
                strategy: str = "first") -> tuple[np.ndarray, np.ndarray]:
    """Choose K frequency bins for the modal basis.

    The default strategy takes the first K bins above DC (a contiguous
    low-frequency band); "top_energy" instead ranks bins by mean amplitude
    over the full frame.  Returns (bin indices, frequencies in Hz), sorted
    by frequency.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    available = spec.n_bins - 1 if skip_dc else spec.n_bins
    if k > available:
        raise ValueError(f"k = {k} exceeds the {available} available bins")
    lo = 1 if skip_dc else 0
    if strategy == "first":
        bins = np.arange(lo, lo + k)
    elif strategy == "top_energy":
        amp = np.abs(spec.coefficients[lo:]).mean(axis=(1, 2, 3))
        order = np.argsort(amp, kind="stable")[::-1][:k]
        bins = np.sort(order) + lo
    else:
        raise ValueError(f"unknown band selection strategy {strategy!r}")
    return bins, spec.bin_frequencies[bins]


def assemble_modal_matrix(spec: SpectralStack, bins: np.ndarray,
                          roi: RegionOfInterest) -> ModalMatrix:
    """Stack the selected bins' coefficients over the ROI into a unit-norm basis.

    Column k holds bin k's complex coefficients at the active ROI pixels,
    u block then v block, divided by its L2 norm.  A bin with no energy
    inside the ROI cannot form a mode and raises an error naming the bin.
    """
    bins = np.asarray(bins, dtype=int)
    if bins.size < 1:
        raise ValueError("no bins selected")
    if bins.min() < 0 or bins.max() >= spec.n_bins:
        raise ValueError("selected bins out of range")
    roi.validate_inside(spec.image_shape)

    cols = np.empty((2 * roi.n_active, bins.size), dtype=np.complex128)
    for j, b in enumerate(bins):
        col = roi.extract(spec.coefficients[b])
        norm = np.linalg.norm(col)
        if norm < 1e-300:
            raise ValueError(f"bin {b} has zero energy inside the ROI")
        cols[:, j] = col / norm
    return ModalMatrix(columns=cols, mode_frequencies=spec.bin_frequencies[bins],
                       roi=roi, fps=spec.fps)


def write_modal_file(modal: ModalMatrix, path: str | Path) -> None:
    """Serialize a ModalMatrix to the binary modal container.

    Layout (little-endian): magic "MSH1", uint32 version, uint32
    {K, N, width, height, x0, y0}, float32 fps, K float32 frequencies,
    then the 2N x K complex64 column payload in column-major order.
    The container carries no pixel mask, so only full-rectangle regions
    are representable.
    """
    roi = modal.roi
    if roi.n_active != roi.width * roi.height:
        raise ValueError("modal container supports full rectangular regions only")
    k = modal.n_modes
    with open(path, "wb") as f:
        f.write(MODAL_MAGIC)
        f.write(struct.pack("<I", MODAL_VERSION))
        f.write(struct.pack("<6I", k, roi.n_active, roi.width, roi.height,
                            roi.x0, roi.y0))
        f.write(struct.pack("<f", modal.fps))
        f.write(modal.mode_frequencies.astype("<f4").tobytes())
        f.write(np.asfortranarray(modal.columns.astype(np.complex64)).tobytes(order="F"))


def read_modal_file(path: str | Path) -> ModalMatrix:
    """Read a modal container written by :func:`write_modal_file`."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODAL_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, = struct.unpack("<I", f.read(4))
        if version != MODAL_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        k, n, width, height, x0, y0 = struct.unpack("<6I", f.read(24))
        if n != width * height:
            raise ValueError(f"{path}: active count {n} != {width}x{height}")
        fps, = struct.unpack("<f", f.read(4))
        freqs = np.frombuffer(f.read(4 * k), dtype="<f4").astype(np.float64)
        payload = f.read(2 * n * k * 8)
        if len(payload) != 2 * n * k * 8:
            raise ValueError(f"{path}: truncated payload")
    columns = np.frombuffer(payload, dtype="<c8").reshape((2 * n, k), order="F")
    roi = RegionOfInterest(x0=x0, y0=y0, width=width, height=height)
    return ModalMatrix(columns=columns.astype(np.complex128),
                       mode_frequencies=freqs, roi=roi, fps=float(fps))

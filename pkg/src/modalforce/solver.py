"""Per-frame dynamic constraint solves recovering image-space force maps.

Given a truncated modal basis S (2N x K, unit-norm complex columns) and the
motion texture of an interaction clip, each frame's force is the minimum-norm
least-squares solution of

    S S^H F_t = x_t - S S^H x_{t-1}

where x_t is the acceleration, velocity, or displacement state stacked over
the region of interest.  The velocity form carries an extra 1/dt, and the
displacement form uses (S C S^H) with a per-mode correction matrix C and a
1/dt^2 scale.  States are complex only through the basis; the recovered
force is reported as its real part, with the imaginary residual kept as a
consistency diagnostic.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import MotionTexture, RegionOfInterest
from .spectrum import ModalMatrix

logger = logging.getLogger(__name__)

FORCE_MAGIC = b"FTX1"
FORCE_VERSION = 1

CONSTRAINT_MODES = ("accel", "vel", "disp")
_MODE_IDS = {name: i for i, name in enumerate(CONSTRAINT_MODES)}


@dataclass
class DerivativeTextures:
    """Velocity and acceleration stacks of a motion texture (px/s, px/s^2)."""

    velocity: np.ndarray
    acceleration: np.ndarray
    fps: float

    def __post_init__(self) -> None:
        if self.velocity.shape != self.acceleration.shape:
            raise ValueError("velocity and acceleration shapes differ")
        if not (np.isfinite(self.velocity).all() and np.isfinite(self.acceleration).all()):
            raise ValueError("derivatives contain non-finite values")


@dataclass
class CorrectionMatrix:
    """Diagonal per-mode attenuation used by the displacement constraint."""

    entries: np.ndarray
    strategy: str
    dt: float

    def __post_init__(self) -> None:
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 1:
            raise ValueError("correction entries must form a diagonal (1-D)")
        if np.any(self.entries <= 0) or np.any(self.entries > 1):
            raise ValueError("correction entries must lie in (0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def correction_matrix(strategy: str, mode_frequencies: np.ndarray,
                      dt: float) -> CorrectionMatrix:
    """Build the per-mode correction diagonal.

    "identity" applies no attenuation.  "sinc2" uses sinc(f_k dt)^2, the
    squared amplitude attenuation of a bin-aligned oscillation sampled over
    one frame interval.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    freqs = np.asarray(mode_frequencies, dtype=np.float64)
    if strategy == "identity":
        entries = np.ones_like(freqs)
    elif strategy == "sinc2":
        entries = np.sinc(freqs * dt) ** 2
    else:
        raise ValueError(f"unknown correction strategy {strategy!r}")
    return CorrectionMatrix(entries=entries, strategy=strategy, dt=dt)


@dataclass
class ForceTexture:
    """Per-frame dense image-space force maps over a region of interest.

    Units are consistent but arbitrary: the modal basis is unit-normalized
    and downstream comparisons z-normalize every signal.
    """

    forces: np.ndarray  # (T', H, W, 2)
    mode: str
    roi: RegionOfInterest
    fps: float
    imag_residual: float = 0.0

    def __post_init__(self) -> None:
        self.forces = np.asarray(self.forces, dtype=np.float64)
        if self.forces.ndim != 4 or self.forces.shape[-1] != 2:
            raise ValueError(f"forces must be (T,H,W,2), got {self.forces.shape}")
        if not np.isfinite(self.forces).all():
            raise ValueError("forces contain non-finite values")
        if self.mode not in CONSTRAINT_MODES:
            raise ValueError(f"unknown constraint mode {self.mode!r}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        self.roi.validate_inside(self.image_shape)
        outside = self.forces.copy()
        patch = outside[:, self.roi.y0 : self.roi.y0 + self.roi.height,
                        self.roi.x0 : self.roi.x0 + self.roi.width]
        patch[:, self.roi.active_mask()] = 0.0
        if np.any(outside != 0.0):
            raise ValueError("forces must be zero outside the ROI")

    def __len__(self) -> int:
        return self.forces.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.forces.shape[1], self.forces.shape[2]


def finite_difference(motion: MotionTexture) -> DerivativeTextures:
    """Central-difference velocity and acceleration of a motion texture.

    Interior frames use central differences scaled by fps (velocity) and
    fps^2 (acceleration); sequence boundaries fall back to one-sided
    differences of the same order in the step size.
    """
    t_total = len(motion)
    if t_total < 3:
        raise ValueError("need at least 3 frames for derivatives")
    disp = motion.displacements
    fps = motion.fps

    vel = np.gradient(disp, axis=0) * fps

    acc = np.empty_like(disp)
    acc[1:-1] = disp[2:] - 2.0 * disp[1:-1] + disp[:-2]
    acc[0] = disp[2] - 2.0 * disp[1] + disp[0]
    acc[-1] = disp[-1] - 2.0 * disp[-2] + disp[-3]
    acc *= fps * fps
    return DerivativeTextures(velocity=vel, acceleration=acc, fps=fps)


def pseudo_solve(a: np.ndarray, b: np.ndarray, rtol: float = 1e-6) -> np.ndarray:
    """Minimum-norm least-squares solve via SVD truncation.

    Singular values below ``rtol`` times the largest are treated as zero,
    so rank-deficient systems return the minimum-norm solution.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if not np.isfinite(a).all():
        raise ValueError("matrix contains non-finite values")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(a.shape[1], dtype=np.result_type(a, b))
    keep = s >= rtol * s[0]
    coeffs = (u[:, keep].conj().T @ b) / s[keep]
    return vh[keep].conj().T @ coeffs


class _BasisFactorization:
    """Shared SVD machinery for the per-frame constraint solves.

    One SVD of the (frame-invariant) basis turns every per-frame solve into
    two skinny matrix products, so a T-frame clip costs O(T N K) overall.
    """

    def __init__(self, columns: np.ndarray, rtol: float,
                 correction: np.ndarray | None = None):
        u, s, _ = np.linalg.svd(columns, full_matrices=False)
        keep = s >= rtol * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
        self.u = u[:, keep]
        self.s2 = s[keep] ** 2
        if correction is None:
            self.uc = self.u
            self.sc2 = self.s2
        else:
            bc = columns * np.sqrt(correction)[None, :]
            uc, sc, _ = np.linalg.svd(bc, full_matrices=False)
            keep_c = sc >= rtol * sc[0] if sc.size and sc[0] > 0 else np.zeros_like(sc, dtype=bool)
            self.uc = uc[:, keep_c]
            self.sc2 = sc[keep_c] ** 2

    def solve(self, state_now: np.ndarray, state_prev: np.ndarray) -> np.ndarray:
        """(S C S^H)^+ (state_now - S S^H state_prev) for stacked state columns."""
        prev = self.u @ (self.s2[:, None] * (self.u.conj().T @ state_prev))
        resid = state_now - prev
        return self.uc @ ((self.uc.conj().T @ resid) / self.sc2[:, None])


def _solve_single(modal: ModalMatrix, now: np.ndarray, prev: np.ndarray,
                  scale: float, rtol: float,
                  correction: np.ndarray | None = None) -> np.ndarray:
    now = np.asarray(now, dtype=np.complex128)
    prev = np.asarray(prev, dtype=np.complex128)
    n2 = modal.columns.shape[0]
    if now.shape != (n2,) or prev.shape != (n2,):
        raise ValueError(f"state vectors must have length {n2}")
    fac = _BasisFactorization(modal.columns, rtol, correction)
    force = scale * fac.solve(now[:, None], prev[:, None])[:, 0]
    imag = float(np.linalg.norm(force.imag))
    if imag > max(float(np.linalg.norm(force.real)), 1e-300):
        logger.warning("large imaginary residual %.3g in constraint solve", imag)
    return force.real


def solve_acceleration(modal: ModalMatrix, accel_now: np.ndarray,
                       accel_prev: np.ndarray, rtol: float = 1e-6) -> np.ndarray:
    """Force from consecutive acceleration states stacked over the ROI."""
    return _solve_single(modal, accel_now, accel_prev, 1.0, rtol)


def solve_velocity(modal: ModalMatrix, vel_now: np.ndarray, vel_prev: np.ndarray,
                   dt: float, rtol: float = 1e-6) -> np.ndarray:
    """Force-impulse form: the acceleration solve scaled by 1/dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _solve_single(modal, vel_now, vel_prev, 1.0 / dt, rtol)


def solve_displacement(modal: ModalMatrix, disp_now: np.ndarray,
                       disp_prev: np.ndarray, dt: float,
                       corr: CorrectionMatrix, rtol: float = 1e-6) -> np.ndarray:
    """Displacement form with per-mode correction and a 1/dt^2 scale."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if corr.entries.shape[0] != modal.n_modes:
        raise ValueError("correction diagonal size must match the mode count")
    return _solve_single(modal, disp_now, disp_prev, 1.0 / (dt * dt), rtol,
                         correction=corr.entries)


def estimate_force_texture(modal: ModalMatrix, motion: MotionTexture,
                           mode: str = "vel", corr: CorrectionMatrix | None = None,
                           rtol: float = 1e-6) -> ForceTexture:
    """Solve the dynamic constraint for every frame of an interaction clip.

    Parameters
    ----------
    modal : ModalMatrix
        Basis assembled from the baseline clip; defines the ROI.
    motion : MotionTexture
        Interaction motion texture covering that ROI.
    mode : str
        Constraint state: "accel", "vel" (default), or "disp".
    corr : CorrectionMatrix, optional
        Displacement-mode correction; defaults to sinc2 at the clip's frame
        interval.  Ignored by the other modes.
    rtol : float
        Pseudoinverse truncation ratio.

    Returns
    -------
    ForceTexture
        Real force maps scattered back to image layout (zero outside the
        ROI), with the worst-frame imaginary residual as a diagnostic.
    """
    if mode not in CONSTRAINT_MODES:
        raise ValueError(f"unknown constraint mode {mode!r}")
    t_total = len(motion)
    if t_total < 3:
        raise ValueError("need at least 3 frames")
    roi = modal.roi
    roi.validate_inside(motion.image_shape)

    dt = 1.0 / motion.fps
    if mode == "accel":
        stack = finite_difference(motion).acceleration
        scale = 1.0
        correction = None
    elif mode == "vel":
        stack = finite_difference(motion).velocity
        scale = 1.0 / dt
        correction = None
    else:
        stack = motion.displacements
        scale = 1.0 / (dt * dt)
        if corr is None:
            corr = correction_matrix("sinc2", modal.mode_frequencies, dt)
        if corr.entries.shape[0] != modal.n_modes:
            raise ValueError("correction diagonal size must match the mode count")
        correction = corr.entries

    # All frames' ROI states as one 2N x T matrix; one SVD serves every frame.
    active = roi.active_mask()
    patch = stack[:, roi.y0 : roi.y0 + roi.height, roi.x0 : roi.x0 + roi.width]
    states = np.concatenate([patch[..., 0][:, active], patch[..., 1][:, active]],
                            axis=1).T.astype(np.complex128)
    prev_idx = np.maximum(np.arange(t_total) - 1, 0)

    fac = _BasisFactorization(modal.columns, rtol, correction)
    solved = scale * fac.solve(states, states[:, prev_idx])
    imag_residual = float(np.abs(solved.imag).max()) if solved.size else 0.0
    if imag_residual > max(float(np.abs(solved.real).max()), 1e-300):
        logger.warning("imaginary residual %.3g suggests a basis/ROI mismatch",
                       imag_residual)

    forces = np.zeros((t_total,) + motion.image_shape + (2,), dtype=np.float64)
    n = roi.n_active
    fpatch = forces[:, roi.y0 : roi.y0 + roi.height, roi.x0 : roi.x0 + roi.width]
    fpatch[:, active, 0] = solved.real[:n].T
    fpatch[:, active, 1] = solved.real[n:].T
    return ForceTexture(forces=forces, mode=mode, roi=roi, fps=motion.fps,
                        imag_residual=imag_residual)


def write_force_file(ft: ForceTexture, path: str | Path) -> None:
    """Serialize a ForceTexture to the binary force container.

    Layout (little-endian): magic "FTX1", uint32 version, uint32 {T, H, W},
    uint8 constraint-mode id, float32 fps, float32 payload T x H x W x 2.
    """
    t_total = len(ft)
    h, w = ft.image_shape
    with open(path, "wb") as f:
        f.write(FORCE_MAGIC)
        f.write(struct.pack("<I", FORCE_VERSION))
        f.write(struct.pack("<3I", t_total, h, w))
        f.write(struct.pack("<B", _MODE_IDS[ft.mode]))
        f.write(struct.pack("<f", ft.fps))
        f.write(np.ascontiguousarray(ft.forces, dtype="<f4").tobytes())


def read_force_file(path: str | Path) -> ForceTexture:
    """Read a force container; the ROI is recovered as the full frame."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FORCE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, = struct.unpack("<I", f.read(4))
        if version != FORCE_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        t_total, h, w = struct.unpack("<3I", f.read(12))
        mode_id, = struct.unpack("<B", f.read(1))
        fps, = struct.unpack("<f", f.read(4))
        payload = f.read(t_total * h * w * 2 * 4)
    if len(payload) != t_total * h * w * 2 * 4:
        raise ValueError(f"{path}: truncated payload")
    if mode_id >= len(CONSTRAINT_MODES):
        raise ValueError(f"{path}: unknown mode id {mode_id}")
    forces = np.frombuffer(payload, dtype="<f4").reshape(t_total, h, w, 2)
    roi = RegionOfInterest(0, 0, w, h)
    return ForceTexture(forces=forces.astype(np.float64), mode=CONSTRAINT_MODES[mode_id],
                        roi=roi, fps=float(fps))

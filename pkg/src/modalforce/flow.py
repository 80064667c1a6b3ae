"""Dense motion textures: optical flow, warping, weighting and flow-file I/O.

A motion texture is a stack of per-frame displacement fields mapping the
reference frame onto every other frame of a clip.  The estimator here is a
classical coarse-to-fine pyramidal gradient (Lucas-Kanade style) solver,
good enough for the small cyclic deformations this package targets.
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

logger = logging.getLogger(__name__)

FLOW_MAGIC = b"PIEH"

# Rec.601 luma coefficients.
_LUMA = np.array([0.2989, 0.5870, 0.1140])


@dataclass
class FrameSequence:
    """A clip of equally sized frames with intensities in [0, 1].

    Parameters
    ----------
    frames : ndarray
        Array of shape (T, H, W) for grayscale or (T, H, W, 3) for RGB.
    fps : float
        Capture rate in Hz.
    reference_index : int
        Index of the reference frame all displacements are relative to.
    """

    frames: np.ndarray
    fps: float
    reference_index: int = 0

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim not in (3, 4):
            raise ValueError(f"frames must be (T,H,W) or (T,H,W,3), got {self.frames.shape}")
        if self.frames.ndim == 4 and self.frames.shape[-1] != 3:
            raise ValueError(f"color frames must have 3 channels, got {self.frames.shape[-1]}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not 0 <= self.reference_index < len(self.frames):
            raise ValueError("reference_index out of range")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def gray(self) -> np.ndarray:
        """Frames converted to grayscale luma, shape (T, H, W)."""
        if self.frames.ndim == 3:
            return self.frames
        return self.frames @ _LUMA


@dataclass
class MotionTexture:
    """Per-frame dense displacement fields relative to a reference frame.

    ``displacements[t, y, x]`` is the (u, v) pixel offset that carries the
    reference-frame point at (x, y) to its position in frame ``t``.
    """

    displacements: np.ndarray  # (T, H, W, 2)
    fps: float
    reference_index: int = 0
    degenerate_frames: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.displacements = np.asarray(self.displacements, dtype=np.float64)
        if self.displacements.ndim != 4 or self.displacements.shape[-1] != 2:
            raise ValueError(f"displacements must be (T,H,W,2), got {self.displacements.shape}")
        if self.displacements.shape[0] < 2:
            raise ValueError("a motion texture needs at least 2 frames")
        if not np.isfinite(self.displacements).all():
            raise ValueError("displacements contain non-finite values")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        ref = self.displacements[self.reference_index]
        if np.any(ref != 0.0):
            raise ValueError("displacement of the reference frame must be identically zero")

    def __len__(self) -> int:
        return self.displacements.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.displacements.shape[1], self.displacements.shape[2]


@dataclass
class RegionOfInterest:
    """Rectangular region (x0, y0, width, height) with an optional sub-mask.

    The mask, when given, has shape (height, width); nonzero entries mark
    active pixels.  Active pixels are ordered row-major within the rectangle.
    """

    x0: int
    y0: int
    width: int
    height: int
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("ROI must be at least 1x1")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError("ROI origin must be non-negative")
        if self.mask is not None:
            self.mask = np.asarray(self.mask).astype(bool)
            if self.mask.shape != (self.height, self.width):
                raise ValueError(
                    f"ROI mask shape {self.mask.shape} does not match ({self.height}, {self.width})"
                )
            if not self.mask.any():
                raise ValueError("ROI mask has no active pixels")

    @property
    def n_active(self) -> int:
        return int(self.mask.sum()) if self.mask is not None else self.width * self.height

    def validate_inside(self, image_shape: tuple[int, int]) -> None:
        h, w = image_shape
        if self.x0 + self.width > w or self.y0 + self.height > h:
            raise ValueError(f"ROI {self!r} does not fit inside image of shape {(h, w)}")

    def active_mask(self) -> np.ndarray:
        """Boolean (height, width) mask of active pixels within the rectangle."""
        if self.mask is not None:
            return self.mask
        return np.ones((self.height, self.width), dtype=bool)

    def crop(self, image: np.ndarray) -> np.ndarray:
        return image[self.y0 : self.y0 + self.height, self.x0 : self.x0 + self.width]

    def extract(self, field_uv: np.ndarray) -> np.ndarray:
        """Stack active-pixel values of an (H, W, 2) field as (u block, v block)."""
        patch = self.crop(field_uv)
        active = self.active_mask()
        return np.concatenate([patch[..., 0][active], patch[..., 1][active]])

    def scatter(self, vector: np.ndarray, image_shape: tuple[int, int]) -> np.ndarray:
        """Inverse of :meth:`extract`; inactive and outside pixels are zero."""
        n = self.n_active
        if vector.shape[0] != 2 * n:
            raise ValueError(f"vector length {vector.shape[0]} != 2N = {2 * n}")
        out = np.zeros(image_shape + (2,), dtype=vector.dtype)
        active = self.active_mask()
        patch = out[self.y0 : self.y0 + self.height, self.x0 : self.x0 + self.width]
        patch[..., 0][active] = vector[:n]
        patch[..., 1][active] = vector[n:]
        return out


@dataclass
class WarpResult:
    """Forward-warped image plus a validity mask for unfilled pixels."""

    image: np.ndarray
    valid: np.ndarray


def _to_gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return image @ _LUMA
    return image


def _resize_bilinear(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    th, tw = shape
    h, w = arr.shape
    ys = np.linspace(0.0, h - 1.0, th)
    xs = np.linspace(0.0, w - 1.0, tw)
    grid = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(arr, grid, order=1, mode="nearest")


def _downsample(img: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(img, sigma=1.0, mode="nearest")[::2, ::2]


def _sample(img: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(img, [y, x], order=1, mode="nearest")


def _lk_refine(ref: np.ndarray, mov: np.ndarray, u: np.ndarray, v: np.ndarray,
               window: int, iterations: int) -> tuple[np.ndarray, np.ndarray]:
    """Iterative windowed gradient solve at a single pyramid level."""
    h, w = ref.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    gy_r, gx_r = np.gradient(ref)
    for _ in range(iterations):
        warped = _sample(mov, ys + v, xs + u)
        gy_w, gx_w = np.gradient(warped)
        ix = 0.5 * (gx_r + gx_w)
        iy = 0.5 * (gy_r + gy_w)
        it = warped - ref

        def wsum(a: np.ndarray) -> np.ndarray:
            return ndimage.uniform_filter(a, size=window, mode="nearest")

        ixx = wsum(ix * ix)
        iyy = wsum(iy * iy)
        ixy = wsum(ix * iy)
        ixt = wsum(ix * it)
        iyt = wsum(iy * it)

        # Tikhonov damping keeps flat regions at zero instead of blowing up.
        lam = 1e-9 + 1e-3 * 0.5 * float(np.mean(ixx + iyy))
        ixx = ixx + lam
        iyy = iyy + lam
        det = ixx * iyy - ixy * ixy
        du = (ixy * iyt - iyy * ixt) / det
        dv = (ixy * ixt - ixx * iyt) / det
        u = u + du
        v = v + dv
    return u, v


def _flow_pair(ref: np.ndarray, mov: np.ndarray, levels: int, window: int,
               iterations: int) -> np.ndarray:
    """Pyramidal flow from ``ref`` to ``mov``; returns (H, W, 2)."""
    h, w = ref.shape
    max_levels = max(1, int(np.floor(np.log2(max(min(h, w), 1) / 8.0))) + 1)
    levels = max(1, min(levels, max_levels))

    pyr_ref = [ref]
    pyr_mov = [mov]
    for _ in range(levels - 1):
        pyr_ref.append(_downsample(pyr_ref[-1]))
        pyr_mov.append(_downsample(pyr_mov[-1]))

    u = np.zeros_like(pyr_ref[-1])
    v = np.zeros_like(pyr_ref[-1])
    for lvl in range(levels - 1, -1, -1):
        if lvl < levels - 1:
            shape = pyr_ref[lvl].shape
            u = 2.0 * _resize_bilinear(u, shape)
            v = 2.0 * _resize_bilinear(v, shape)
        u, v = _lk_refine(pyr_ref[lvl], pyr_mov[lvl], u, v, window, iterations)
    return np.stack([u, v], axis=-1)


def compute_flow(frames: FrameSequence, method: str = "lucas_kanade", *,
                 levels: int = 3, window: int = 5, iterations: int = 3,
                 accumulate: bool = False) -> MotionTexture:
    """Estimate the motion texture of a clip relative to its reference frame.

    Parameters
    ----------
    frames : FrameSequence
        Input clip; at least two frames.
    method : str
        Flow estimator id; only the built-in classical estimator
        ("lucas_kanade", alias "classical") is supported.
    levels, window, iterations : int
        Pyramid depth, window size and refinement iterations per level.
    accumulate : bool
        When True, chain consecutive frame-to-frame flows instead of
        matching every frame directly against the reference.

    Returns
    -------
    MotionTexture
        Displacement stack with zeros at the reference index.  Frames with
        no usable intensity structure yield zero flow and are listed in
        ``degenerate_frames``.
    """
    if method not in ("lucas_kanade", "classical"):
        raise ValueError(f"unknown flow method {method!r}")
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")

    gray = frames.gray()
    t_total = len(frames)
    ref_idx = frames.reference_index
    ref = gray[ref_idx]
    degenerate: list[int] = []

    flows = np.zeros((t_total,) + frames.image_shape + (2,), dtype=np.float64)
    ref_flat = float(ref.std()) < 1e-12

    def pair(a: np.ndarray, b: np.ndarray, t: int) -> np.ndarray:
        if ref_flat or float(b.std()) < 1e-12:
            degenerate.append(t)
            logger.warning("frame %d is degenerate (constant intensity); flow set to zero", t)
            return np.zeros(frames.image_shape + (2,))
        return _flow_pair(a, b, levels, window, iterations)

    if not accumulate:
        for t in range(t_total):
            if t == ref_idx:
                continue
            flows[t] = pair(ref, gray[t], t)
    else:
        h, w = frames.image_shape
        ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        for direction in (1, -1):
            prev = np.zeros((h, w, 2))
            rng = range(ref_idx + direction, t_total if direction == 1 else -1, direction)
            for t in rng:
                step = pair(gray[t - direction], gray[t], t)
                # Chain by sampling the incremental flow at the advected position.
                su = _sample(step[..., 0], ys + prev[..., 1], xs + prev[..., 0])
                sv = _sample(step[..., 1], ys + prev[..., 1], xs + prev[..., 0])
                prev = prev + np.stack([su, sv], axis=-1)
                flows[t] = prev

    return MotionTexture(flows, fps=frames.fps, reference_index=ref_idx,
                         degenerate_frames=sorted(set(degenerate)))


def warp_image(reference: np.ndarray, displacement: np.ndarray) -> WarpResult:
    """Forward-warp ``reference`` by a displacement field (bilinear splatting).

    Every reference pixel deposits its intensity at its displaced position;
    pixels receiving no contribution are flagged invalid.
    """
    reference = np.asarray(reference, dtype=np.float64)
    displacement = np.asarray(displacement, dtype=np.float64)
    h, w = reference.shape[:2]
    if displacement.shape[:2] != (h, w) or displacement.shape[-1] != 2:
        raise ValueError("displacement shape does not match reference")

    channels = reference.reshape(h, w, -1)
    n_ch = channels.shape[-1]
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    tx = (xs + displacement[..., 0]).ravel()
    ty = (ys + displacement[..., 1]).ravel()

    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    fx = tx - x0
    fy = ty - y0

    acc = np.zeros((h * w, n_ch), dtype=np.float64)
    wacc = np.zeros(h * w, dtype=np.float64)
    vals = channels.reshape(-1, n_ch)

    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h) & (wgt > 0)
            idx = yi[inside] * w + xi[inside]
            np.add.at(wacc, idx, wgt[inside])
            np.add.at(acc, idx, wgt[inside, None] * vals[inside])

    valid = wacc > 1e-12
    out = np.zeros_like(acc)
    out[valid] = acc[valid] / wacc[valid, None]
    out = out.reshape(h, w, n_ch)
    if reference.ndim == 2:
        out = out[..., 0]
    return WarpResult(image=out, valid=valid.reshape(h, w))


def local_contrast_weights(reference: np.ndarray, window: int = 5) -> np.ndarray:
    """Windowed standard deviation of the reference, normalized to [0, 1]."""
    gray = _to_gray(reference)
    mean = ndimage.uniform_filter(gray, size=window, mode="nearest")
    meansq = ndimage.uniform_filter(gray * gray, size=window, mode="nearest")
    var = np.clip(meansq - mean * mean, 0.0, None)
    std = np.sqrt(var)
    peak = std.max()
    if peak > 0:
        std = std / peak
    return std


def apply_weighting(motion: MotionTexture, reference: np.ndarray, mode: str,
                    mask: np.ndarray, *, window: int = 5,
                    sigma: float = 1.5) -> MotionTexture:
    """Attenuate flow in low-visibility regions and outside the organ mask.

    ``mode`` is "contrast" (multiply by the normalized windowed std-dev of
    the reference) or "gaussian" (smooth the flow spatially, then mask).
    """
    mask = np.asarray(mask).astype(bool)
    if mask.shape != motion.image_shape:
        raise ValueError(f"mask shape {mask.shape} does not match flow {motion.image_shape}")
    if not mask.any():
        raise ValueError("empty organ mask")

    disp = motion.displacements
    if mode == "contrast":
        weights = local_contrast_weights(reference, window=window)
        weights = np.where(mask, weights, 0.0)
        out = disp * weights[None, :, :, None]
    elif mode == "gaussian":
        out = ndimage.gaussian_filter(disp, sigma=(0.0, sigma, sigma, 0.0), mode="nearest")
        out = out * mask[None, :, :, None]
        out[motion.reference_index] = 0.0
    else:
        raise ValueError(f"unknown weighting mode {mode!r}")
    return MotionTexture(out, fps=motion.fps, reference_index=motion.reference_index,
                         degenerate_frames=list(motion.degenerate_frames))


def write_flow_file(field_uv: np.ndarray, path: str | Path) -> None:
    """Write an (H, W, 2) displacement field in the binary interchange format.

    Layout: magic "PIEH", int32 width, int32 height, then row-major
    interleaved float32 (u, v) pairs, all little-endian.
    """
    field_uv = np.asarray(field_uv)
    if field_uv.ndim != 3 or field_uv.shape[-1] != 2:
        raise ValueError(f"flow field must be (H,W,2), got {field_uv.shape}")
    h, w = field_uv.shape[:2]
    payload = np.ascontiguousarray(field_uv, dtype="<f4")
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<ii", w, h))
        f.write(payload.tobytes())


def read_flow_file(path: str | Path) -> np.ndarray:
    """Read a flow file written by :func:`write_flow_file`; returns float32 (H, W, 2)."""
    with open(path, "rb") as f:
        header = f.read(12)
        if len(header) < 12:
            raise ValueError(f"{path}: truncated flow header")
        if header[:4] != FLOW_MAGIC:
            raise ValueError(f"{path}: bad magic {header[:4]!r}")
        w, h = struct.unpack("<ii", header[4:12])
        if w <= 0 or h <= 0:
            raise ValueError(f"{path}: invalid dimensions {w}x{h}")
        payload = f.read()
    expected = 2 * w * h * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)


_FRAME_NUM = re.compile(r"(\d+)")


def _frame_key(path: Path) -> tuple:
    nums = _FRAME_NUM.findall(path.stem)
    return (int(nums[-1]), path.stem) if nums else (1 << 60, path.stem)


def load_image(path: str | Path) -> np.ndarray:
    """Load a raster image as float64 in [0, 1] (grayscale or RGB)."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr


def save_image(image: np.ndarray, path: str | Path) -> None:
    """Save a float image in [0, 1] (or uint8) as PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_frames(frames_dir: str | Path, fps: float, reference_index: int = 0,
                pattern: str = "*.png") -> FrameSequence:
    """Load a numbered directory of raster frames as a FrameSequence."""
    paths = sorted(Path(frames_dir).glob(pattern), key=_frame_key)
    if len(paths) < 2:
        raise ValueError(f"need at least 2 frames matching {pattern} under {frames_dir}")
    frames = [load_image(p) for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"frames have mismatched dimensions: {sorted(shapes)}")
    return FrameSequence(np.stack(frames), fps=fps, reference_index=reference_index)


def load_mask(path: str | Path) -> np.ndarray:
    """Load an 8-bit mask PNG; nonzero pixels are active."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr > 0


def load_flow_dir(flow_dir: str | Path, fps: float, reference_index: int = 0,
                  pattern: str = "*.flo") -> MotionTexture:
    """Assemble a MotionTexture from a directory of flow interchange files."""
    paths = sorted(Path(flow_dir).glob(pattern), key=_frame_key)
    if len(paths) < 2:
        raise ValueError(f"need at least 2 flow files matching {pattern} under {flow_dir}")
    fields = [read_flow_file(p).astype(np.float64) for p in paths]
    shapes = {f.shape for f in fields}
    if len(shapes) != 1:
        raise ValueError(f"flow files have mismatched dimensions: {sorted(shapes)}")
    return MotionTexture(np.stack(fields), fps=fps, reference_index=reference_index)

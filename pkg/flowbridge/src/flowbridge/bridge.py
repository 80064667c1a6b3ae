"""Reference-to-frame optical flow export with a pretrained deep model.

Runs a RAFT network over a directory of numbered frames and writes one
flow file per frame in the binary interchange format.  Frames are resized
to the nearest multiple of eight for inference (the network downsamples
by eight) and the predicted fields are resized back, with the vectors
rescaled by the size ratio.  The reference frame itself gets an
exactly-zero field without touching the model.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .flowio import write_flow_file

logger = logging.getLogger(__name__)

_MODELS = ("raft_small", "raft_large")
_FRAME_NUM = re.compile(r"(\d+)")


@dataclass
class BridgeConfig:
    """One export run over a frame directory.

    ``checkpoint`` is a local state-dict file; when omitted the packaged
    pretrained weights are fetched, which needs network access.
    ``resize_to`` overrides the inferred inference resolution (height,
    width); both sides must be positive multiples of eight.
    """

    frames_dir: str
    reference_index: int = 0
    out_dir: str = "flow"
    model: str = "raft_small"
    checkpoint: str | None = None
    resize_to: tuple[int, int] | None = None
    batch_size: int = 4
    iterations: int = 12
    device: str | None = None

    def __post_init__(self) -> None:
        if self.model not in _MODELS:
            raise ValueError(f"model must be one of {_MODELS}, got {self.model!r}")
        if self.reference_index < 0:
            raise ValueError("reference index must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.iterations < 1:
            raise ValueError("iteration count must be at least 1")
        if self.resize_to is not None:
            h, w = self.resize_to
            if h <= 0 or w <= 0 or h % 8 or w % 8:
                raise ValueError("resize target sides must be positive multiples of 8")


def snap8(size: int) -> int:
    """Nearest multiple of eight, never below eight."""
    return max(8, int(round(size / 8.0)) * 8)


def list_frames(frames_dir: str | Path) -> list[Path]:
    """Raster frames in a directory, ordered by their trailing number."""
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"frames directory not found: {frames_dir}")

    def key(path: Path) -> tuple:
        nums = _FRAME_NUM.findall(path.stem)
        return (int(nums[-1]), path.stem) if nums else (1 << 60, path.stem)

    paths = sorted((p for p in frames_dir.iterdir()
                    if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")),
                   key=key)
    if not paths:
        raise ValueError(f"no raster frames in {frames_dir}")
    return paths


def load_frame(path: str | Path) -> np.ndarray:
    """One frame as float32 RGB in [0, 1], shape (H, W, 3)."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def resize_flow(flow: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear flow resize; displacement vectors scale with the size ratio."""
    import torch
    import torch.nn.functional as F

    h, w = flow.shape[:2]
    th, tw = shape
    if (th, tw) == (h, w):
        return np.asarray(flow, dtype=np.float32)
    t = torch.from_numpy(np.ascontiguousarray(flow, dtype=np.float32))
    t = t.permute(2, 0, 1).unsqueeze(0)
    t = F.interpolate(t, size=(th, tw), mode="bilinear", align_corners=False)
    out = t.squeeze(0).permute(1, 2, 0).numpy().copy()
    out[..., 0] *= tw / w
    out[..., 1] *= th / h
    return out


def _resolve_device(requested: str | None):
    import torch

    if requested is not None:
        return torch.device(requested)
    if torch.cuda.is_available():
        device = torch.device("cuda")
    else:
        device = torch.device("cpu")
    logger.info("inference device: %s", device)
    return device


def _load_model(name: str, checkpoint: str | None, device):
    import torch
    from torchvision.models import optical_flow as of_models

    builders = {
        "raft_small": (of_models.raft_small, of_models.Raft_Small_Weights),
        "raft_large": (of_models.raft_large, of_models.Raft_Large_Weights),
    }
    builder, weights_enum = builders[name]
    if checkpoint is not None:
        ckpt = Path(checkpoint)
        if not ckpt.is_file():
            raise FileNotFoundError(f"checkpoint not found: {ckpt}")
        net = builder(weights=None)
        net.load_state_dict(torch.load(ckpt, map_location="cpu",
                                       weights_only=True))
    else:
        net = builder(weights=weights_enum.DEFAULT)
    return net.to(device).eval()


def _to_tensor(frame: np.ndarray, shape: tuple[int, int], device):
    """Frame as a normalized (1, 3, H', W') tensor at the inference size."""
    import torch
    import torch.nn.functional as F

    t = torch.from_numpy(frame).permute(2, 0, 1).unsqueeze(0)
    if t.shape[-2:] != shape:
        t = F.interpolate(t, size=shape, mode="bilinear", align_corners=False)
    return (2.0 * t - 1.0).to(device)


def export_flows(config: BridgeConfig) -> list[Path]:
    """Write one reference->frame flow file per input frame.

    Returns the written paths, ordered by frame index.  Output files are
    named ``frame_%04d.flo`` by position in the numeric frame ordering.
    """
    paths = list_frames(config.frames_dir)
    if config.reference_index >= len(paths):
        raise ValueError(f"reference index {config.reference_index} out of "
                         f"range for {len(paths)} frames")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    reference = load_frame(paths[config.reference_index])
    h, w = reference.shape[:2]
    if config.resize_to is not None:
        target = config.resize_to
    else:
        # the network's correlation pyramid needs feature maps of at least
        # 16 px after the 8x downsampling, so the inference size is floored
        # at 128 per side
        target = (max(128, snap8(h)), max(128, snap8(w)))

    written: dict[int, Path] = {}
    zero = np.zeros((h, w, 2), dtype=np.float32)
    ref_path = out_dir / f"frame_{config.reference_index:04d}.flo"
    write_flow_file(zero, ref_path)
    written[config.reference_index] = ref_path

    todo = [i for i in range(len(paths)) if i != config.reference_index]
    if todo:
        import torch

        device = _resolve_device(config.device)
        net = _load_model(config.model, config.checkpoint, device)
        ref_tensor = _to_tensor(reference, target, device)
        for start in range(0, len(todo), config.batch_size):
            batch = todo[start:start + config.batch_size]
            tensors = []
            for i in batch:
                frame = load_frame(paths[i])
                if frame.shape[:2] != (h, w):
                    raise ValueError(
                        f"frame {paths[i].name} is {frame.shape[1]}x"
                        f"{frame.shape[0]}, expected {w}x{h}")
                tensors.append(_to_tensor(frame, target, device))
            targets = torch.cat(tensors, dim=0)
            with torch.no_grad():
                preds = net(ref_tensor.expand(len(batch), -1, -1, -1),
                            targets, num_flow_updates=config.iterations)
            fields = preds[-1].cpu().permute(0, 2, 3, 1).numpy()
            for i, field in zip(batch, fields):
                p = out_dir / f"frame_{i:04d}.flo"
                write_flow_file(resize_flow(field, (h, w)), p)
                written[i] = p
    logger.info("wrote %d flow files to %s", len(written), out_dir)
    return [written[i] for i in sorted(written)]

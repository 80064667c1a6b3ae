"""Command-line pipeline: mode extraction, force estimation, evaluation, synthesis.

Subcommands mirror the two-stage pipeline: ``modes`` builds the modal basis
from a baseline clip, ``estimate`` recovers forces on an interaction clip,
``eval`` scores a predicted contact signal against a reference, and
``synth`` generates ground-truth membrane datasets.  Every option can come
from an INI config file (section ``[pipeline]``, and ``[synth]`` for the
simulator); command-line flags win over config values.  On failure each
subcommand removes the outputs it already wrote and exits nonzero.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import contact as contact_mod
from . import evaluate as eval_mod
from . import flow as flow_mod
from . import report as report_mod
from . import solver as solver_mod
from . import spectrum as spectrum_mod
from . import synth as synth_mod
from .flow import FrameSequence, MotionTexture, RegionOfInterest


@dataclass
class PipelineConfig:
    """Merged configuration of file keys and command-line flags."""

    frames: str | None = None
    flow_dir: str | None = None
    mask: str | None = None
    roi: tuple[int, int, int, int] | None = None
    modal: str | None = None
    camera: str | None = None
    prediction: str | None = None
    reference: str | None = None
    k: int = 20
    skip_dc: bool = True
    band_strategy: str = "first"
    mode: str = "vel"
    correction: str = "sinc2"
    rtol: float = 1e-6
    max_lag: int | None = None
    fps: float = 30.0
    weighting: str = "none"
    normalize: bool = False
    contact_normalization: str = "area"
    overlay_stride: int = 8
    overlay_every: int = 1
    out: str = "out"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")


_PIPELINE_KEYS = {
    "frames": str, "flow_dir": str, "mask": str, "modal": str, "camera": str,
    "prediction": str, "reference": str, "k": int, "skip_dc": bool,
    "band_strategy": str, "mode": str, "correction": str, "rtol": float,
    "max_lag": int, "fps": float, "weighting": str, "normalize": bool,
    "contact_normalization": str, "overlay_stride": int, "overlay_every": int,
    "out": str,
}

_SYNTH_KEYS = {
    "n": int, "stiffness": float, "damping": float, "mass": float,
    "pump_frequency": float, "pump_amplitude": float, "poke_radius": float,
    "poke_peak": float, "dt": float, "fps": float, "duration": float,
    "seed": int,
}


def _parse_roi(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.replace(",", " ").split()]
    if len(parts) != 4:
        raise ValueError(f"ROI must be x,y,w,h; got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _parse_pair(text: str) -> tuple[float, float]:
    parts = [float(p) for p in text.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {text!r}")
    return parts[0], parts[1]


def _read_config_section(path: str | None, section: str, schema: dict) -> dict:
    if path is None:
        return {}
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    if section not in parser:
        return {}
    out: dict = {}
    for key, caster in schema.items():
        if key not in parser[section]:
            continue
        raw = parser[section][key]
        if caster is bool:
            out[key] = parser[section].getboolean(key)
        elif key == "roi":
            out[key] = _parse_roi(raw)
        else:
            out[key] = caster(raw)
    return out


def _load_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    values = _read_config_section(getattr(args, "config", None), "pipeline",
                                  dict(_PIPELINE_KEYS, roi=str))
    for key in PipelineConfig.__dataclass_fields__:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return PipelineConfig(**values)


class _Outputs:
    """Tracks written paths so a failing run can clean up after itself."""

    def __init__(self) -> None:
        self.paths: list[Path] = []

    def register(self, path: str | Path) -> Path:
        p = Path(path)
        self.paths.append(p)
        return p

    def discard(self) -> None:
        for p in self.paths:
            try:
                if p.is_file():
                    p.unlink()
            except OSError:
                pass


def _load_motion(cfg: PipelineConfig, out: _Outputs | None = None
                 ) -> tuple[MotionTexture, FrameSequence | None]:
    """Motion texture from rendered frames or precomputed flow files."""
    frames = None
    if cfg.frames is not None:
        if not Path(cfg.frames).is_dir():
            raise FileNotFoundError(f"frames directory not found: {cfg.frames}")
        frames = flow_mod.load_frames(cfg.frames, fps=cfg.fps)
        motion = flow_mod.compute_flow(frames)
    elif cfg.flow_dir is not None:
        if not Path(cfg.flow_dir).is_dir():
            raise FileNotFoundError(f"flow directory not found: {cfg.flow_dir}")
        motion = flow_mod.load_flow_dir(cfg.flow_dir, fps=cfg.fps)
    else:
        raise ValueError("either --frames or --flow-dir is required")

    if cfg.mask is not None:
        if not Path(cfg.mask).is_file():
            raise FileNotFoundError(f"mask file not found: {cfg.mask}")
        mask = flow_mod.load_mask(cfg.mask)
        weighting = cfg.weighting if cfg.weighting != "none" else "gaussian"
        if weighting == "contrast":
            if frames is None:
                raise ValueError("contrast weighting needs --frames for a reference image")
            reference = frames.frames[frames.reference_index]
        else:
            reference = np.zeros(motion.image_shape)
        motion = flow_mod.apply_weighting(motion, reference, weighting, mask)
    return motion, frames


def _default_roi(cfg: PipelineConfig, image_shape: tuple[int, int]) -> RegionOfInterest:
    if cfg.roi is not None:
        x, y, w, h = cfg.roi
        return RegionOfInterest(x0=x, y0=y, width=w, height=h)
    h, w = image_shape
    return RegionOfInterest(x0=0, y0=0, width=w, height=h)


def cmd_modes(args: argparse.Namespace, out: _Outputs) -> None:
    """Baseline clip -> modal container + spectrum CSV + spectrum plot."""
    cfg = _load_pipeline_config(args)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    motion, _ = _load_motion(cfg)
    spec = spectrum_mod.mode_shapes(motion)
    roi = _default_roi(cfg, motion.image_shape)
    roi.validate_inside(motion.image_shape)
    bins, _ = spectrum_mod.select_band(spec, cfg.k, skip_dc=cfg.skip_dc,
                                       strategy=cfg.band_strategy)
    modal = spectrum_mod.assemble_modal_matrix(spec, bins, roi)

    if cfg.mask is not None:
        ps_mask = flow_mod.load_mask(cfg.mask)
    else:
        ps_mask = np.ones(motion.image_shape, dtype=bool)
    ps = spectrum_mod.power_spectrum(spec, ps_mask)

    modal_path = out.register(out_dir / "modes.msh1")
    spectrum_mod.write_modal_file(modal, modal_path)

    csv_path = out.register(out_dir / "spectrum.csv")
    selected = np.zeros(spec.n_bins, dtype=int)
    selected[bins] = 1
    with open(csv_path, "w", newline="") as f:
        f.write("bin,frequency_hz,amplitude,selected\n")
        for b in range(spec.n_bins):
            f.write(f"{b},{float(ps.bin_frequencies[b])!r},"
                    f"{float(ps.amplitudes[b])!r},{int(selected[b])}\n")

    report_mod.save_spectrum_plot(ps, bins, out.register(out_dir / "spectrum.png"))
    print(f"modes: K={modal.n_modes} band {modal.mode_frequencies[0]:.3g}-"
          f"{modal.mode_frequencies[-1]:.3g} Hz -> {modal_path}")


def cmd_estimate(args: argparse.Namespace, out: _Outputs) -> None:
    """Interaction clip + modal container -> force texture, contact CSV, overlays."""
    cfg = _load_pipeline_config(args)
    if cfg.modal is None:
        raise ValueError("--modal (modes.msh1 from cmd_modes) is required")
    if not Path(cfg.modal).is_file():
        raise FileNotFoundError(f"modal file not found: {cfg.modal}")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    modal = spectrum_mod.read_modal_file(cfg.modal)
    if cfg.roi is not None:
        x, y, w, h = cfg.roi
        r = modal.roi
        if (x, y, w, h) != (r.x0, r.y0, r.width, r.height):
            raise ValueError(
                f"requested ROI {cfg.roi} does not match the modal file's "
                f"({r.x0}, {r.y0}, {r.width}, {r.height})")

    motion, frames = _load_motion(cfg)
    corr = None
    if cfg.mode == "disp":
        corr = solver_mod.correction_matrix(cfg.correction, modal.mode_frequencies,
                                            1.0 / motion.fps)
    ft = solver_mod.estimate_force_texture(modal, motion, mode=cfg.mode,
                                           corr=corr, rtol=cfg.rtol)

    ftx_path = out.register(out_dir / "force.ftx1")
    solver_mod.write_force_file(ft, ftx_path)

    # The aggregated signal comes from the raw solve; the doubly normalized
    # texture is a display scale used for the overlay arrows.
    source = contact_mod.normalize_texture(ft) if cfg.normalize else ft
    signal = contact_mod.contact_force(source, normalization=cfg.contact_normalization)
    contact_mod.write_signal_csv(signal, out.register(out_dir / "contact.csv"))
    report_mod.save_signal_plot(signal, out.register(out_dir / "contact.png"))

    shown = contact_mod.normalize_texture(ft)
    overlay_dir = out_dir / "overlays"
    overlay_dir.mkdir(exist_ok=True)
    for t in range(0, len(ft), max(1, cfg.overlay_every)):
        if frames is not None:
            base = frames.frames[t]
        else:
            base = np.full(motion.image_shape, 0.5)
        img = contact_mod.render_overlay(base, shown, t, stride=cfg.overlay_stride)
        flow_mod.save_image(img, out.register(overlay_dir / f"frame_{t:04d}.png"))
    print(f"estimate: {len(ft)} frames, mode {ft.mode}, "
          f"imag residual {ft.imag_residual:.3g} -> {ftx_path}")


def cmd_eval(args: argparse.Namespace, out: _Outputs) -> None:
    """Predicted contact CSV vs reference force CSV -> metrics + alignment plot."""
    cfg = _load_pipeline_config(args)
    if cfg.prediction is None or cfg.reference is None:
        raise ValueError("--prediction and --reference are required")
    for p in (cfg.prediction, cfg.reference):
        if not Path(p).is_file():
            raise FileNotFoundError(f"input not found: {p}")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    _, pred_u, pred_v = contact_mod.read_signal_csv(cfg.prediction)

    with open(cfg.reference) as f:
        header = f.readline().strip().split(",")
    if header[:4] == ["t", "fx", "fy", "fz"]:
        if cfg.camera is None:
            raise ValueError("--camera is required for 3D reference forces")
        series = eval_mod.read_reference_csv(cfg.reference)
        cam = eval_mod.load_camera(cfg.camera)
        projected = eval_mod.project_force(series, cam)
        ref_u, ref_v = projected[:, 0], projected[:, 1]
    else:
        _, ref_u, ref_v = contact_mod.read_signal_csv(cfg.reference)

    max_lag = cfg.max_lag if cfg.max_lag is not None else len(pred_u) // 4
    rep = eval_mod.evaluate_signals(pred_u, pred_v, ref_u, ref_v, max_lag=max_lag)
    eval_mod.write_metrics_csv(rep, out.register(out_dir / "metrics.csv"))

    ref2 = eval_mod.resample_linear(np.stack([ref_u, ref_v], axis=1), len(pred_u))
    report_mod.save_alignment_plot(
        eval_mod.znorm(np.hypot(pred_u, pred_v)),
        eval_mod.znorm(np.hypot(ref2[:, 0], ref2[:, 1])),
        rep.norm.lag, rep.norm.cc, cfg.fps, out.register(out_dir / "alignment.png"))
    print(f"eval: CC(norm) = {rep.norm.cc:.4f} at lag {rep.norm.lag}")


def cmd_synth(args: argparse.Namespace, out: _Outputs) -> None:
    """Run the membrane simulator and persist the dataset."""
    values = _read_config_section(args.config, "synth", _SYNTH_KEYS)
    for key in _SYNTH_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if args.poke_center is not None:
        values["poke_center"] = _parse_pair(args.poke_center)
    if args.poke_direction is not None:
        values["poke_direction"] = _parse_pair(args.poke_direction)

    config = synth_mod.SynthConfig(**values)
    ds = synth_mod.simulate(config)

    out_dir = Path(args.out if args.out is not None else "out")
    out_dir.mkdir(parents=True, exist_ok=True)

    render = args.render
    if render:
        fields = synth_mod.upsample_fields(ds, (render, render))
        texture = synth_mod.make_texture((render, render), seed=config.seed)
        frames = synth_mod.render_textured(ds, texture)
        frames_dir = out_dir / "frames"
        frames_dir.mkdir(exist_ok=True)
        for t in range(len(frames)):
            flow_mod.save_image(frames.frames[t],
                                out.register(frames_dir / f"frame_{t:04d}.png"))
    else:
        fields = None

    for p in synth_mod.save_dataset(ds, out_dir, fields=fields):
        out.register(p)
    print(f"synth: {len(ds)} frames at {config.fps:g} fps -> {out_dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalforce",
        description="Vision-based contact force estimation from soft-tissue video")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", help="output directory")

    p_modes = sub.add_parser("modes", help="build the modal basis from a baseline clip")
    common(p_modes)
    p_modes.add_argument("--frames", help="directory of numbered raster frames")
    p_modes.add_argument("--flow-dir", dest="flow_dir", help="directory of flow files")
    p_modes.add_argument("--mask", help="organ mask PNG")
    p_modes.add_argument("--roi", type=_parse_roi, help="region of interest x,y,w,h")
    p_modes.add_argument("--k", type=int, help="number of modes")
    p_modes.add_argument("--skip-dc", dest="skip_dc", action="store_true", default=None)
    p_modes.add_argument("--band-strategy", dest="band_strategy",
                         choices=("first", "top_energy"))
    p_modes.add_argument("--weighting", choices=("none", "contrast", "gaussian"))
    p_modes.add_argument("--fps", type=float, help="frame rate of the inputs")
    p_modes.set_defaults(func=cmd_modes)

    p_est = sub.add_parser("estimate", help="recover forces on an interaction clip")
    common(p_est)
    p_est.add_argument("--modal", help="modal container from `modes`")
    p_est.add_argument("--frames", help="directory of numbered raster frames")
    p_est.add_argument("--flow-dir", dest="flow_dir", help="directory of flow files")
    p_est.add_argument("--mask", help="organ mask PNG")
    p_est.add_argument("--roi", type=_parse_roi, help="must match the modal file")
    p_est.add_argument("--mode", choices=("accel", "vel", "disp"),
                       help="constraint mode (default vel)")
    p_est.add_argument("--correction", choices=("identity", "sinc2"))
    p_est.add_argument("--rtol", type=float, help="pseudoinverse truncation")
    p_est.add_argument("--weighting", choices=("none", "contrast", "gaussian"))
    p_est.add_argument("--fps", type=float)
    p_est.add_argument("--normalize", dest="normalize", action="store_true",
                       default=None,
                       help="aggregate the doubly normalized texture instead of the raw solve")
    p_est.add_argument("--overlay-stride", dest="overlay_stride", type=int)
    p_est.add_argument("--overlay-every", dest="overlay_every", type=int)
    p_est.set_defaults(func=cmd_estimate)

    p_eval = sub.add_parser("eval", help="score a contact signal against a reference")
    common(p_eval)
    p_eval.add_argument("--prediction", help="contact CSV from `estimate`")
    p_eval.add_argument("--reference", help="reference CSV (t,fx,fy,fz or t,fu,fv,norm)")
    p_eval.add_argument("--camera", help="camera INI for 3D references")
    p_eval.add_argument("--max-lag", dest="max_lag", type=int)
    p_eval.add_argument("--fps", type=float)
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic membrane dataset")
    common(p_synth)
    p_synth.add_argument("--n", type=int, help="grid size")
    p_synth.add_argument("--fps", type=float)
    p_synth.add_argument("--duration", type=float, help="seconds")
    p_synth.add_argument("--dt", type=float, help="integrator step")
    p_synth.add_argument("--seed", type=int)
    p_synth.add_argument("--stiffness", type=float)
    p_synth.add_argument("--damping", type=float)
    p_synth.add_argument("--pump-amplitude", dest="pump_amplitude", type=float)
    p_synth.add_argument("--pump-frequency", dest="pump_frequency", type=float)
    p_synth.add_argument("--poke-peak", dest="poke_peak", type=float,
                         help="poke force peak (0 = baseline pump-only run)")
    p_synth.add_argument("--poke-radius", dest="poke_radius", type=float)
    p_synth.add_argument("--poke-center", dest="poke_center", help="x,y")
    p_synth.add_argument("--poke-direction", dest="poke_direction", help="u,v")
    p_synth.add_argument("--render", type=int, default=0, metavar="SIZE",
                         help="also render textured frames at SIZE x SIZE")
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    outputs = _Outputs()
    try:
        args.func(args, outputs)
    except Exception as exc:  # clean slate on failure, nonzero exit
        outputs.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

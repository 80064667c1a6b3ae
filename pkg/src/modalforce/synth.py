"""Synthetic ground-truth generator: a driven 2D mass-spring membrane.

An n x n grid of unit-spaced nodes (pinned boundary, 4-neighbor springs
acting on displacement differences) is driven by a smoothed-square-wave
radial pumping force plus an optional localized poke whose magnitude
follows a rest/push/lock/release trapezoid.  The simulator emits dense
displacement fields in pixels, the applied poke force signal, and can
advect a texture to produce rendered frames for end-to-end flow tests.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .flow import FrameSequence


@dataclass
class SynthConfig:
    """Parameters of one membrane run.

    The poke pushes along ``poke_direction`` with a Gaussian spatial
    profile of scale ``poke_radius`` centered at ``poke_center`` (x, y);
    ``poke_peak = 0`` disables it (pump-only baseline).  Phase durations
    are rest, push, lock, release in seconds; the clip may extend past the
    release.  The integrator step is shortened as needed to divide the
    frame interval exactly.
    """

    n: int = 32
    stiffness: float = 40.0
    damping: float = 0.8
    mass: float = 1.0
    pump_frequency: float = 2.0
    pump_amplitude: float = 2.0
    poke_center: tuple[float, float] = (15.5, 15.5)
    poke_radius: float = 3.0
    poke_peak: float = 0.0
    poke_direction: tuple[float, float] = (0.8, -0.6)
    phases: tuple[float, float, float, float] = (2.0, 1.0, 1.0, 1.0)
    dt: float = 1e-3
    fps: float = 30.0
    duration: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 4:
            raise ValueError("grid must be at least 4x4")
        for name in ("stiffness", "mass", "poke_radius", "dt", "fps", "duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.damping <= 0:
            raise ValueError("damping must be positive")
        if self.pump_amplitude < 0 or self.poke_peak < 0:
            raise ValueError("forcing amplitudes must be nonnegative")
        if any(p <= 0 for p in self.phases):
            raise ValueError("phase durations must be positive")
        if self.dt > 1.0 / (10.0 * self.fps):
            raise ValueError("integrator dt must be at most 1/(10*fps)")


@dataclass
class SynthDataset:
    """Simulator output sampled at the configured frame rate."""

    displacements: np.ndarray  # (T, n, n, 2)
    force: np.ndarray  # (T, 2) applied poke force (u, v)
    contact_center: tuple[float, float]
    fps: float
    config: SynthConfig
    energy: np.ndarray = field(default=None)  # (T,) kinetic + elastic

    @property
    def force_norm(self) -> np.ndarray:
        return np.hypot(self.force[:, 0], self.force[:, 1])

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.displacements.shape[0]) / self.fps

    def __len__(self) -> int:
        return self.displacements.shape[0]


def poke_profile(t: np.ndarray | float, phases: tuple[float, float, float, float]) -> np.ndarray | float:
    """Trapezoidal contact profile in [0, 1] over rest/push/lock/release.

    Zero through the rest phase, linear rise over the push phase, one
    through the lock phase, linear fall over the release phase, zero after.
    """
    rest, push, lock, release = phases
    if min(rest, push, lock, release) <= 0:
        raise ValueError("phase durations must be positive")
    knots = np.array([0.0, rest, rest + push, rest + push + lock,
                      rest + push + lock + release])
    values = np.array([0.0, 0.0, 1.0, 1.0, 0.0])
    return np.interp(t, knots, values, left=0.0, right=0.0)


def simulate(config: SynthConfig) -> SynthDataset:
    """Integrate the membrane and sample it at the output frame rate.

    Semi-implicit Euler: velocities absorb the net force first, then
    positions advance with the updated velocities.  Boundary nodes stay
    pinned.  A displacement blowup beyond 1000 grid spacings aborts with a
    hint to reduce dt.
    """
    n = config.n
    k = config.stiffness
    m = config.mass
    t_total = int(round(config.duration * config.fps))
    steps_per_frame = max(1, int(np.ceil(1.0 / (config.fps * config.dt))))
    edt = 1.0 / (config.fps * steps_per_frame)

    ys, xs = np.meshgrid(np.arange(n, dtype=np.float64),
                         np.arange(n, dtype=np.float64), indexing="ij")
    center = (n - 1) / 2.0
    rx = xs - center
    ry = ys - center
    rnorm = np.hypot(rx, ry)
    safe = np.where(rnorm > 1e-9, rnorm, 1.0)
    radial = np.stack([rx / safe, ry / safe], axis=-1)
    radial[rnorm <= 1e-9] = 0.0

    px, py = config.poke_center
    gauss = np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2.0 * config.poke_radius ** 2))
    direction = np.asarray(config.poke_direction, dtype=np.float64)
    norm_dir = np.linalg.norm(direction)
    if norm_dir <= 0:
        raise ValueError("poke direction must be nonzero")
    direction = direction / norm_dir
    poke_spatial = gauss[:, :, None] * direction[None, None, :]

    disp = np.zeros((n, n, 2))
    vel = np.zeros((n, n, 2))
    inner = slice(1, n - 1)

    fields = np.empty((t_total, n, n, 2))
    energy = np.empty(t_total)
    applied = np.empty((t_total, 2))

    def record(i: int) -> None:
        fields[i] = disp
        kin = 0.5 * m * float(np.sum(vel * vel))
        dx = disp[:, 1:] - disp[:, :-1]
        dy = disp[1:, :] - disp[:-1, :]
        elastic = 0.5 * k * (float(np.sum(dx * dx)) + float(np.sum(dy * dy)))
        energy[i] = kin + elastic
        t_i = i / config.fps
        applied[i] = config.poke_peak * poke_profile(t_i, config.phases) * direction
        if np.abs(disp).max() > 1e3:
            raise ValueError("unstable integration (displacement blowup); reduce dt")

    record(0)
    two_pi_f = 2.0 * np.pi * config.pump_frequency
    for i in range(1, t_total):
        base = (i - 1) / config.fps
        for s in range(steps_per_frame):
            t_now = base + s * edt
            wave = np.tanh(np.sin(two_pi_f * t_now) / 0.2)
            lap = (disp[:-2, inner] + disp[2:, inner]
                   + disp[inner, :-2] + disp[inner, 2:]
                   - 4.0 * disp[inner, inner])
            force = k * lap - config.damping * vel[inner, inner]
            force = force + config.pump_amplitude * wave * radial[inner, inner]
            force = force + (config.poke_peak
                             * poke_profile(t_now, config.phases)) * poke_spatial[inner, inner]
            vel[inner, inner] += (edt / m) * force
            disp[inner, inner] += edt * vel[inner, inner]
        record(i)

    return SynthDataset(displacements=fields, force=applied,
                        contact_center=config.poke_center, fps=config.fps,
                        config=config, energy=energy)


def make_texture(shape: tuple[int, int], seed: int = 0) -> np.ndarray:
    """Deterministic smooth random texture in [0.1, 0.9] for rendering."""
    rng = np.random.default_rng(seed)
    fine = ndimage.gaussian_filter(rng.random(shape), 1.0, mode="wrap")
    coarse = ndimage.gaussian_filter(rng.random(shape), 3.0, mode="wrap")
    tex = 0.6 * fine + 0.4 * coarse
    lo, hi = tex.min(), tex.max()
    if hi > lo:
        tex = (tex - lo) / (hi - lo)
    return 0.1 + 0.8 * tex


def render_textured(ds: SynthDataset, texture: np.ndarray) -> FrameSequence:
    """Advect a texture by each displacement field, producing a clip.

    The texture must be at least grid resolution; displacement fields are
    upsampled (and their vectors rescaled) when the texture is larger.
    Frame t samples the texture at position x - D_t(x) bilinearly, so the
    reference content moves along the field.
    """
    texture = np.asarray(texture, dtype=np.float64)
    if texture.ndim != 2:
        raise ValueError("texture must be a grayscale image")
    th, tw = texture.shape
    n = ds.displacements.shape[1]
    if th < n or tw < n:
        raise ValueError("texture must be at least grid resolution")

    t_total = len(ds)
    ys, xs = np.meshgrid(np.arange(th, dtype=np.float64),
                         np.arange(tw, dtype=np.float64), indexing="ij")
    sy, sx = th / n, tw / n

    frames = np.empty((t_total, th, tw))
    for t in range(t_total):
        fld = ds.displacements[t]
        if (th, tw) != (n, n):
            u = sx * ndimage.zoom(fld[..., 0], (sy, sx), order=1, grid_mode=True,
                                  mode="nearest")
            v = sy * ndimage.zoom(fld[..., 1], (sy, sx), order=1, grid_mode=True,
                                  mode="nearest")
        else:
            u, v = fld[..., 0], fld[..., 1]
        frames[t] = ndimage.map_coordinates(texture, [ys - v, xs - u], order=1,
                                            mode="nearest")
    return FrameSequence(frames, fps=ds.fps, reference_index=0)


def upsample_fields(ds: SynthDataset, shape: tuple[int, int]) -> np.ndarray:
    """Displacement fields resized to an image shape with rescaled vectors."""
    th, tw = shape
    n = ds.displacements.shape[1]
    if (th, tw) == (n, n):
        return ds.displacements.copy()
    sy, sx = th / n, tw / n
    out = np.empty((len(ds), th, tw, 2))
    for t in range(len(ds)):
        out[t, ..., 0] = sx * ndimage.zoom(ds.displacements[t, ..., 0], (sy, sx),
                                           order=1, grid_mode=True, mode="nearest")
        out[t, ..., 1] = sy * ndimage.zoom(ds.displacements[t, ..., 1], (sy, sx),
                                           order=1, grid_mode=True, mode="nearest")
    return out


def save_dataset(ds: SynthDataset, out_dir: str | Path,
                 fields: np.ndarray | None = None) -> list[Path]:
    """Persist a dataset: per-frame flow files, force CSV, config echo.

    ``fields`` overrides the stored displacement fields (e.g. after
    upsampling to a render resolution).  Returns the written paths.
    """
    from .flow import write_flow_file  # local import avoids cycle at module load

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flow_dir = out_dir / "flow"
    flow_dir.mkdir(exist_ok=True)
    if fields is None:
        fields = ds.displacements

    written: list[Path] = []
    for t in range(len(ds)):
        p = flow_dir / f"frame_{t:04d}.flo"
        write_flow_file(fields[t], p)
        written.append(p)

    force_path = out_dir / "force.csv"
    times = ds.times
    norm = ds.force_norm
    with open(force_path, "w", newline="") as f:
        f.write("t,fu,fv,norm\n")
        for i in range(len(ds)):
            f.write(f"{float(times[i])!r},{float(ds.force[i, 0])!r},"
                    f"{float(ds.force[i, 1])!r},{float(norm[i])!r}\n")
    written.append(force_path)

    echo = configparser.ConfigParser()
    cfg = asdict(ds.config)
    echo["synth"] = {key: repr(value) for key, value in cfg.items()}
    config_path = out_dir / "config.ini"
    with open(config_path, "w") as f:
        echo.write(f)
    written.append(config_path)
    return written

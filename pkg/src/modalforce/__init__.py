"""modalforce: image-space modal analysis and vision-based contact force recovery.

The pipeline has two stages.  A baseline clip of periodically moving soft
tissue is turned into a dense motion texture (per-frame displacement maps
relative to a reference frame); per-pixel temporal FFT of that texture
yields complex mode shapes, and a truncated band of them forms the modal
basis of the imaged surface.  On an interaction clip, each frame's motion
state is explained through that basis by solving a dynamic constraint
problem, recovering a dense image-space force map whose aggregation over a
region of interest gives a contact-force signal suitable for comparison
against force-sensor readings (after weak-perspective projection,
resampling, z-normalization, and lag-searched cross-correlation).

Main entry points
-----------------
compute_flow / load_flow_dir -> MotionTexture
mode_shapes, select_band, assemble_modal_matrix -> ModalMatrix
estimate_force_texture -> ForceTexture
normalize_texture, contact_force -> ContactForceSignal
evaluate_signals -> MetricsReport
simulate, render_textured -> synthetic ground-truth datasets

The ``modalforce`` console script exposes the same pipeline as the
``modes``, ``estimate``, ``eval`` and ``synth`` subcommands.
"""

from .contact import (
    ContactForceSignal,
    contact_force,
    normalize_texture,
    render_overlay,
)
from .evaluate import (
    CameraModel,
    MetricsReport,
    ReferenceForceSeries,
    evaluate_signals,
    max_cross_correlation,
    metrics_at_lag,
    project_force,
    resample_linear,
    znorm,
)
from .flow import (
    FrameSequence,
    MotionTexture,
    RegionOfInterest,
    apply_weighting,
    compute_flow,
    load_flow_dir,
    load_frames,
    read_flow_file,
    warp_image,
    write_flow_file,
)
from .solver import (
    CorrectionMatrix,
    ForceTexture,
    correction_matrix,
    estimate_force_texture,
    finite_difference,
    pseudo_solve,
    read_force_file,
    solve_acceleration,
    solve_displacement,
    solve_velocity,
    write_force_file,
)
from .spectrum import (
    ModalMatrix,
    PowerSpectrum,
    SpectralStack,
    assemble_modal_matrix,
    mode_shapes,
    power_spectrum,
    read_modal_file,
    select_band,
    write_modal_file,
)
from .synth import (
    SynthConfig,
    SynthDataset,
    make_texture,
    poke_profile,
    render_textured,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "ContactForceSignal",
    "CorrectionMatrix",
    "ForceTexture",
    "FrameSequence",
    "MetricsReport",
    "ModalMatrix",
    "MotionTexture",
    "PowerSpectrum",
    "ReferenceForceSeries",
    "RegionOfInterest",
    "SpectralStack",
    "SynthConfig",
    "SynthDataset",
    "apply_weighting",
    "assemble_modal_matrix",
    "compute_flow",
    "contact_force",
    "correction_matrix",
    "estimate_force_texture",
    "evaluate_signals",
    "finite_difference",
    "load_flow_dir",
    "load_frames",
    "make_texture",
    "max_cross_correlation",
    "metrics_at_lag",
    "mode_shapes",
    "normalize_texture",
    "poke_profile",
    "power_spectrum",
    "project_force",
    "pseudo_solve",
    "read_flow_file",
    "read_force_file",
    "read_modal_file",
    "render_overlay",
    "render_textured",
    "resample_linear",
    "select_band",
    "simulate",
    "solve_acceleration",
    "solve_displacement",
    "solve_velocity",
    "warp_image",
    "write_flow_file",
    "write_force_file",
    "write_modal_file",
    "znorm",
]

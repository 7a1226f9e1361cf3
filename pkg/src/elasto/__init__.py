"""Regularized 2-D displacement and axial-strain estimation for ultrasound RF frames."""

from .io import (
    DisplacementField,
    RfFrame,
    StrainImage,
    read_field,
    read_frame,
    read_strain,
    write_csv,
    write_field,
    write_frame,
    write_pgm,
    write_strain,
)
from .phantom import (
    DeformationModel,
    FrameGeometry,
    GroundTruth,
    PsfModel,
    ScattererField,
    add_noise,
    analytic_inclusion_displacement,
    analytic_layer_displacement,
    make_phantom_pair,
    make_scatterers,
    render_rf,
)
from .dpinit import DpConfig, dp_estimate, dp_line
from .solver import (
    AdaptiveEps,
    SolverConfig,
    adaptive_eps,
    assemble_system,
    cost_value,
    first_order_derivs,
    irls_weight,
    make_solver_config,
    refine,
    second_order_derivs,
    smoothed_abs,
    solve_sparse,
    warp_and_gradient,
)
from .strain import EsfProfile, edge_resolution, esf_profile, lsq_strain
from .metrics import (
    QualityReport,
    TTestResult,
    WindowSpec,
    cnr,
    cnr_histogram,
    l2_error,
    mean_ssim,
    paired_t_test,
    snr,
    strain_ratio,
    window_stats,
)

__version__ = "0.1.0"

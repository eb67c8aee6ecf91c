"""Rotating shallow water simulation, transport-noise calibration, and
ensemble uncertainty quantification on staggered grids."""

from .grid import (
    GridSpec,
    ModelState,
    PhysicalParams,
    StaggeredField,
    interpolate,
    paper_grid,
    read_snapshot,
    write_snapshot,
    zeros,
)
from .coarsen import (
    CoarseningSpec,
    Kernel,
    kernel_c4,
    kernel_c8,
    kernel_for_factor,
    mollify,
    mollify_subsample,
    subsample,
)
from .dynamics import (
    Tendency,
    balanced_initial_state,
    boundary_fluxes,
    geostrophic_velocities,
    initial_elevation,
    integrate,
    integrated_potential_vorticity,
    mass_fluxes,
    potential_vorticity,
    robert_asselin,
    spinup,
    step_euler,
    step_leapfrog,
    step_rk4,
    tendency,
    total_energy,
    total_mass,
)
from .calibrate import (
    CalibrationReport,
    DecorrelationEstimate,
    EOFBasis,
    IncrementSeries,
    advecting_field,
    autocorrelation,
    calibrate_noise_basis,
    calibration_grid,
    decorrelation_time,
    discrepancy_increments,
    empty_basis,
    eof_decomposition,
    load_eof_basis,
    perturbation_velocity,
    save_eof_basis,
    solve_calibration_equation,
    transport_operator,
)
from .ensemble import (
    EnsembleRun,
    NoiseRealization,
    member_trajectory,
    noise_weights,
    run_ensemble,
    salt_perturbation,
    step_srsw_rk4,
)
from .metrics import (
    PointSeries,
    RankHistogram,
    bias,
    central_point,
    ensemble_mean_relative_l2,
    ensemble_spread,
    point_series,
    rank_histogram,
    rank_histogram_from_run,
    relative_l2,
    rmse,
    time_average_table,
)
from .config import ScenarioConfig, load_config

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

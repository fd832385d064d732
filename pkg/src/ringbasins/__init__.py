"""Basins of attraction of twisted states on a ring of identical oscillators."""

__version__ = "0.1.0"

from .coupling import (  # noqa: E402
    BUILTINS,
    CouplingSpec,
    ValidationReport,
    coupling_from_table,
    get_coupling,
    load_coupling_table,
    validate_hypotheses,
    wrap_angle,
)
from .dynamics import (  # noqa: E402
    DiffState,
    IntegrationError,
    IntegrationOptions,
    RingState,
    TrajectoryRecord,
    TwistedState,
    WindingUndefined,
    energy,
    eta_to_theta,
    integrate,
    rhs_eta,
    rhs_theta,
    theta_to_eta,
    winding_number,
)
from .census import (  # noqa: E402
    CensusResult,
    dynamical_census,
    exact_basin_measure,
    exact_basin_measures,
    fit_decay_constant,
    gaussian_prediction,
    grid_convolution_measures,
    initial_winding_census,
    sample_uniform_diffstate,
)
from .geometry import (  # noqa: E402
    HeadStats,
    RayDirection,
    RayResult,
    boundary_proximity_count,
    head_statistics,
    lambda_star_closed_form,
    master_distance_experiment,
    ray_survey,
    sample_ray_direction,
    torus_distance,
)
from .stability import SpectrumReport, stability_table, twisted_spectrum  # noqa: E402

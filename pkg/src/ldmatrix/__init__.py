"""Spectral theory, exact tilting and tail asymptotics for products of random matrices."""

__version__ = "0.1.0"

from .ensemble import (
    MatrixEnsemble,
    check_conditions,
    cone_metric,
    contraction_coefficient,
    ensemble_from_config,
    iota,
    preset,
    sample,
)
from .grid import SphereGrid, build_grid
from .spectral import (
    SpectralProfile,
    cgf_profile,
    dominant_pair,
    enum_moment,
    lyapunov,
    mc_moment,
    profile_at,
    rate_function,
    solve_alpha,
)
from .tilt import bias_function, cumulant_estimates, simulate, tilted_path, tilted_step
from .ldp import br_prediction, edgeworth_curve, naive_tail, tilted_tail
from .kesten import (
    RdeModel,
    arch2_preset,
    fixed_point_test,
    kesten_condition,
    moment_bound_scan,
    rde_sample,
    tail_report,
)
from ._rng import Substream

"""Cooperative mmWave positioning and mapping.

Per-vehicle Rao-Blackwellized multiple-model GM-PHD SLAM filters driven by
channel-parameter measurements (pseudorange, DOA, DOD) from a geometric
radio environment, with asynchronous FoV-aware arithmetic-average map
fusion at a base station, plus the simulator and metrics used to evaluate
the stack.
"""

from .ckf import (BirthInversionError, UpdateComponents, cubature_points,
                  invert_measurement, iterative_ml_point, update_components,
                  update_components_source)
from .fusion import (AccumulatedFoV, BSMap, accumulate_fov, average_map,
                     downlink_apply, fuse, fuse_gm, proximity_matrices)
from .geometry import (GeometryError, Source, SourceType, incidence_point,
                       jacobian, measure, va_from_incidence)
from .gm import GaussianMixture, TypedMap, extract_means, mahalanobis_sq, \
    prune_merge
from .metrics import ErrorStats, GospaParams, gospa, mae_rmse
from .motion import (ProcessNoiseSpec, make_state, sample_transition,
                     transition, wrap_angle)
from .phd_slam import (DetectionModel, FilterDivergenceError, Particle,
                       append_births, birth_append, estimate_state,
                       extract_sources, normalize_and_resample,
                       normalized_weights, predict, update_log_weight,
                       update_maps)
from .sim import (Mode, RunResult, Scenario, SyncEvent, run_monte_carlo,
                  run_once, synthesize_measurements)

__version__ = "0.1.0"

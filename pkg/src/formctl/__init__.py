"""Distributed leader-follower formation maneuver control for high-order integrators.

Leaders track a time-varying affine maneuver of a nominal formation; followers
reach their places through displacement constraints with their neighbors,
using observers on measured outputs.
"""
__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .formation import (NominalFormation, FollowerMatrixSet, build_follower_matrices,  # noqa: F401
                        check_localizable, compute_displacement_parameters, edge_weights)
from .gains import GainSet, build_plant, synthesize  # noqa: F401
from .maneuver import ManeuverPlan, Segment, Signal, desired_formation, solve_shape  # noqa: F401
from .kernel import BACKEND  # noqa: F401
from .sim import SimConfig, SimTrace, run_scenario, tracking_errors, verify_bounds  # noqa: F401
from .scenario import build_pipeline, load_scenario, parse_scenario  # noqa: F401

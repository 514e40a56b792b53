"""Cache replication, request matching and blocking in edge server fleets.

Modules
-------
model
    System description: server classes, content catalog, load.
jam
    Joint allocation and matching: greedy, exact and max-flow helpers.
alloc
    Random and greedy cache policies and their limiting fractions.
sim
    Discrete-event loss simulation under random-available-server dispatch.
fluid
    Mean-field limit: drift, projected Euler integration, closed forms.
experiment
    Seeded parameter sweeps with CSV, manifest and SVG output.
"""

from .alloc import (
    PolicyKind,
    ThetaVector,
    allocate,
    config_fractions,
    greedy_theta,
    sample_p2p,
    sample_unif,
    theta_greedy,
)
from .errors import *  # noqa: F401,F403
from .experiment import ExperimentPlan, default_plan, derive_seed, run_experiment
from .fluid import FluidModel, Trajectory, per_content_y, stationary, stationary_values
from .jam import (
    Allocation,
    FlowAssignment,
    JamInstance,
    exact_solve,
    greedy_solve,
    max_matching_value,
    three_partition_instance,
)
from .model import Catalog, ServerClass, SystemSpec, build_spec, load_spec, system_load, zipf_rates
from .sim import Metrics, ServiceDist, erlang_b, ras_match, simulate

__version__ = "0.1.0"

"""Frequency-domain simulation and gradient-based synthesis of square-mesh
programmable photonic circuits built from tunable Mach-Zehnder cells."""

from .compact_model import PhysicalConstants, TbuParams, power_coupling, tbu_transfer, tbu_transfer_nonideal
from .errors import (
    DegenerateRow,
    DomainError,
    IllConditionedWarning,
    InvalidRange,
    MeshError,
    NegativePower,
    NoProgress,
    ScenarioError,
    SingularBarState,
    SolveFailure,
)
from .mesh import (
    MeshSpec,
    ParamIndex,
    PortId,
    direct_responses,
    direct_solve,
    forward_map,
    global_scatter,
    mesh_response,
    param_index,
    solve_fields,
)
from .objectives import COST_KINDS, FrequencyGrid, TargetSpec, make_grid, unit_excitation
from .autodiff import d_cost, evaluate, finite_difference_check, response_jacobian
from .optimizer import OptimizerOptions, SynthesisResult, multi_restart, synthesize, synthesize_restarts

__version__ = "0.1.0"

from .core import (
    TimeGrid,
    PriceSignal,
    StepSchedule,
    NoiseStream,
    ProblemInstance,
    derive_stream,
    step_rho,
)
from .dual_ascent import (
    DualTrace,
    stochastic_uzawa,
    sampled_stochastic_uzawa,
    deterministic_uzawa,
    estimate_dual_value,
    estimate_gap,
)
from .lqg import LQGFamily, BiasVarianceReport, bias_variance_experiment
from .qp import QPProblem, QPSolution, qp_solve
from .tcl import TCLParams, TCLGrid, OnOffPolicy, TCLPopulation
from .unit_commitment import UCInstance, AggregateProfile, uc_cost, aggregate_response
from .coordination import CoordinationResult, coordination_experiment

from typing import Literal

__version__: Literal["0.1.0"] = "0.1.0"
__all__: list[str] = [
    "TimeGrid",
    "PriceSignal",
    "StepSchedule",
    "NoiseStream",
    "ProblemInstance",
    "derive_stream",
    "step_rho",
    "DualTrace",
    "stochastic_uzawa",
    "sampled_stochastic_uzawa",
    "deterministic_uzawa",
    "estimate_dual_value",
    "estimate_gap",
    "LQGFamily",
    "BiasVarianceReport",
    "bias_variance_experiment",
    "QPProblem",
    "QPSolution",
    "qp_solve",
    "TCLParams",
    "TCLGrid",
    "OnOffPolicy",
    "TCLPopulation",
    "UCInstance",
    "AggregateProfile",
    "uc_cost",
    "aggregate_response",
    "CoordinationResult",
    "coordination_experiment",
]

"""Orchestrated end-to-end reproductions of the quantitative constructions."""

from .report import ExperimentReport, Verdict, config_hash
from .jacobian import (dimensional_constant, find_delta_cutoff,
                       jacobian_superlevel_experiment, radial_jacobian_oracle)
from .inflation import (InflationConfig, build_phi, canonical_datum,
                        norm_inflation_experiment, zero_background_inflation)
from .scaling import concentration_scaling_experiment
from .composition import (CascadeTriple, IntakeRejection, bck_range_satisfied,
                          make_cascade_triple,
                          nonuniqueness_composition_experiment)
from .staged import (build_staged_compression, covering_radius,
                     ode_time_reversal_experiment,
                     staged_compression_experiment)

__all__ = [
    "ExperimentReport", "Verdict", "config_hash",
    "dimensional_constant", "find_delta_cutoff",
    "jacobian_superlevel_experiment", "radial_jacobian_oracle",
    "InflationConfig", "build_phi", "canonical_datum",
    "norm_inflation_experiment", "zero_background_inflation",
    "concentration_scaling_experiment",
    "CascadeTriple", "IntakeRejection", "bck_range_satisfied",
    "make_cascade_triple", "nonuniqueness_composition_experiment",
    "build_staged_compression", "covering_radius",
    "ode_time_reversal_experiment", "staged_compression_experiment",
]

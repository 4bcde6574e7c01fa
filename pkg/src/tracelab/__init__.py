"""Numerical laboratory for L2 traces of angular square functions on quadratic surfaces."""
from __future__ import annotations

__version__ = "0.1.0"

from .exceptions import (ConstructionError, ContractError, DomainError, EvaluationError, FitError,
                         ResourceError, TraceLabError, UnsupportedInputError)
from .surface import (QuadraticSurface, RefinementWindow, SurfaceQuadrature, build_quadrature,
                      chart_map, extreme_strip_member, integrate, tangency, tangency_line)
from .frequency import (AnnulusTiling, BoxClass, FrequencyBox, PartitionWeight, classify_box,
                        partition_weights, tile_annulus)
from .packets import (PacketProfile, Tube, TubeFamily, WavePacket, build_tube_family,
                      dilate_transverse, evaluate, make_model_packet, parallelize_to_center)
from .fitting import LogLogFit, fit_loglog, growth_fit
from .square_function import (PacketSum, TraceNormResult, box_component, diagonal_cost_audit,
                              square_function, trace_norm)
from .lab import (EXPERIMENTS, ExperimentConfig, ScalingReport, check_invariants, refit_csv,
                  run_experiment)

__all__ = [
    "AnnulusTiling", "BoxClass", "ConstructionError", "ContractError", "DomainError",
    "EXPERIMENTS", "EvaluationError", "ExperimentConfig", "FitError", "FrequencyBox",
    "LogLogFit", "PacketProfile", "PacketSum", "PartitionWeight", "QuadraticSurface",
    "RefinementWindow", "ResourceError", "ScalingReport", "SurfaceQuadrature", "TraceLabError",
    "TraceNormResult", "Tube", "TubeFamily", "UnsupportedInputError", "WavePacket",
    "box_component", "build_quadrature", "build_tube_family", "chart_map", "check_invariants",
    "classify_box", "diagonal_cost_audit", "dilate_transverse", "evaluate",
    "extreme_strip_member", "fit_loglog", "growth_fit", "integrate", "make_model_packet",
    "parallelize_to_center", "partition_weights", "refit_csv", "run_experiment",
    "square_function", "tangency", "tangency_line", "tile_annulus", "trace_norm",
]

"""Data-driven synthesis and verification of safe controllers for
discrete-time nonlinear systems with polyhedral safe sets.

The toolkit collects excitation data from a dictionary-based plant,
parameterizes the closed loop directly through a right inverse of the
data regressor, solves LP feasibility programs that certify one-step
contraction of a polyhedral C-set, and independently verifies the
result by dense grid evaluation and Monte Carlo rollouts.
"""

from .datagen import (
    ExperimentData,
    collect,
    collect_informative,
    identification_rank,
    regressor_rank,
)
from .dynamics import (
    CosM1Term,
    Dictionary,
    ExpansionPoint,
    Monomial,
    PlantModel,
    SinTerm,
    Trajectory,
    expansion_point,
)
from .lpcore import LinearProgram, LpOutcome, LpStatus, polytope_max
from .polytope import (
    Box,
    PolyhedralSet,
    enumerate_vertices,
    interval_enclosure,
    sample_grid,
)
from .synthesis import (
    BaselineResult,
    Controller,
    SynthesisCertificate,
    baseline_search,
    lumped_disturbance_bounds,
    minimal_contraction,
    pick_expansion_point,
    smallest_eigenvalue,
    synthesize_min_remainder,
    synthesize_noiseless,
    synthesize_robust,
)
from .verify import (
    VerificationReport,
    conservatism_report,
    disturbance_offsets,
    dual_gap_check,
    grid_contractivity,
    monte_carlo_invariance,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "BaselineResult",
    "Controller",
    "CosM1Term",
    "Dictionary",
    "ExpansionPoint",
    "ExperimentData",
    "LinearProgram",
    "LpOutcome",
    "LpStatus",
    "Monomial",
    "PlantModel",
    "PolyhedralSet",
    "SinTerm",
    "SynthesisCertificate",
    "Trajectory",
    "VerificationReport",
    "baseline_search",
    "collect",
    "collect_informative",
    "conservatism_report",
    "disturbance_offsets",
    "dual_gap_check",
    "enumerate_vertices",
    "expansion_point",
    "grid_contractivity",
    "identification_rank",
    "interval_enclosure",
    "lumped_disturbance_bounds",
    "minimal_contraction",
    "monte_carlo_invariance",
    "pick_expansion_point",
    "polytope_max",
    "regressor_rank",
    "sample_grid",
    "smallest_eigenvalue",
    "synthesize_min_remainder",
    "synthesize_noiseless",
    "synthesize_robust",
]

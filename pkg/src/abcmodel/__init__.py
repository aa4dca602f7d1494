"""Boundary-driven ABC model: particle simulator, hydrodynamic PDE solver and
finite-N oracle."""
from .species import (
    BoundaryAsymmetryError,
    ExponentOrderError,
    ModelParams,
    NegativeRateError,
    ParameterError,
    RegimeKind,
    RegimeSpec,
    ReservoirDensities,
    ReservoirDensityError,
    Species,
    classify_regime,
    cyclic_next,
    validate_params,
)
from .simulator import (
    DynkinTables,
    EnsembleResult,
    LatticeState,
    RateTable,
    Trajectory,
    sample_initial,
    simulate,
    simulate_ensemble,
    step,
)

__version__ = "0.1.0"

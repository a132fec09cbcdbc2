"""Nudging data assimilation for the 3D periodic Navier-Stokes equations,
with an observable regularity criterion and a numerical inequality lab."""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    DomainSpec,
    ForcingSpec,
    SpectralVelocity,
    h1_norm,
    l2_norm,
    make_forcing,
    random_divfree_field,
)
from .observers import Observer, ObservationGrid, ObservationSet, observe  # noqa: E402
from .assimilation import (  # noqa: E402
    InstabilityError,
    NudgingConfig,
    TwinSeries,
    run_truth,
    run_twin,
    step_nse,
    step_nudged,
)
from .criterion import CriterionReport, check_criterion, find_admissible_h  # noqa: E402

__all__ = [
    "__version__",
    "DomainSpec",
    "ForcingSpec",
    "SpectralVelocity",
    "h1_norm",
    "l2_norm",
    "make_forcing",
    "random_divfree_field",
    "Observer",
    "ObservationGrid",
    "ObservationSet",
    "observe",
    "InstabilityError",
    "NudgingConfig",
    "TwinSeries",
    "run_truth",
    "run_twin",
    "step_nse",
    "step_nudged",
    "CriterionReport",
    "check_criterion",
    "find_admissible_h",
]

"""Removal of shared systematic measurement error from simultaneous
observations of dependent quantities (three-quarter-sibling regression)."""

__version__ = "0.1.0"

from .data_model import (  # noqa: F401
    ObservationTable,
    load_table,
    log_transform_counts,
    save_table,
    select_top_species,
    split_by_group,
)
from .estimators import (  # noqa: F401
    DenoiseResult,
    center,
    hs_estimate,
    tqs_eq1,
    tqs_eq2,
    tqs_multi_species,
)
from .regress import FittedRegressor, RegressorConfig, fit, predict  # noqa: F401

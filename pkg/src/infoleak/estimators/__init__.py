"""Sample-based information density estimators."""

from .baselines import kde_estimator, oracle_field, plugin_estimator, silverman_bandwidth, wmae
from .network import (
    DensityField,
    TideModel,
    TrainConfig,
    cond_density_estimate,
    dv_gradient,
    dv_objective,
    dv_value,
    final_objective,
    tide_eval,
    tide_train,
)
from .samples import SampleSet

__all__ = [
    "DensityField",
    "SampleSet",
    "TideModel",
    "TrainConfig",
    "cond_density_estimate",
    "dv_gradient",
    "dv_objective",
    "dv_value",
    "final_objective",
    "kde_estimator",
    "oracle_field",
    "plugin_estimator",
    "silverman_bandwidth",
    "tide_eval",
    "tide_train",
    "wmae",
]

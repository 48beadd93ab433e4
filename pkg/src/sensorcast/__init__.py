"""Short-horizon forecasting of plant sensor readings.

Cleaning and resampling (``timeseries``), window features (``features``),
persistence and linear baselines (``linear``), gradient-boosted trees
(``gbt``), a quantile network (``qnn``), evaluation (``evaluation``,
``experiment``), synthetic data (``synth``) and the ``sensorcast`` command.
"""
from .features import WindowSpec, build_samples, compute_features
from .gbt import GBTRegressor
from .linear import LastValueRegressor, LinearRegressor
from .qnn import QuantileNetRegressor, count_parameters, hidden_dim, pinball_loss
from .timeseries import GridSeries, PreparedDataset, SensorSeries, resample_last

__version__ = "0.1.0"

__all__ = [
    "GBTRegressor", "GridSeries", "LastValueRegressor", "LinearRegressor", "PreparedDataset",
    "QuantileNetRegressor", "SensorSeries", "WindowSpec", "build_samples", "compute_features",
    "count_parameters", "hidden_dim", "pinball_loss", "resample_last",
]

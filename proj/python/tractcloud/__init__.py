"""Tract point-cloud score regression with critical region localization."""

from ._tractcloud import (
    ConfigError,
    ConsistencyError,
    Error,
    FormatError,
    IoError,
    Predictor,
    ShapeError,
    SingularMatrixError,
    ValidationError,
    evaluate,
    fit_elastic_net,
    fit_ols,
    localize,
    mean_features,
    pearson_r,
    read_points,
    run_baseline,
    synth,
    tract_profile,
    train,
    write_tract,
)

__all__ = [
    "ConfigError",
    "ConsistencyError",
    "Error",
    "FormatError",
    "IoError",
    "Predictor",
    "ShapeError",
    "SingularMatrixError",
    "ValidationError",
    "evaluate",
    "fit_elastic_net",
    "fit_ols",
    "localize",
    "mean_features",
    "pearson_r",
    "read_points",
    "run_baseline",
    "synth",
    "tract_profile",
    "train",
    "write_tract",
]

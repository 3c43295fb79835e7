"""Python bindings for the sadreg C++ core."""

from ._sadreg import (
    DatasetError,
    Model,
    NumericError,
    ShapeError,
    bilinear_warp,
    conv2d,
    estimate_field,
    evaluate_pair,
    gradcheck,
    instance_norm,
    make_pair,
    ncc,
    pair_seed,
    read_sart,
    rtre,
    transform_landmarks,
    write_sart,
)

__all__ = [
    "DatasetError",
    "Model",
    "NumericError",
    "ShapeError",
    "bilinear_warp",
    "conv2d",
    "estimate_field",
    "evaluate_pair",
    "gradcheck",
    "instance_norm",
    "make_pair",
    "ncc",
    "pair_seed",
    "read_sart",
    "rtre",
    "transform_landmarks",
    "write_sart",
]

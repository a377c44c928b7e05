"""Fractal convolutional network generator with a numpy training engine."""

from .arch import ComputationGraph, ConvUnitSpec, ModelSpec, build_model, canonicalize, expand_fractal, param_count
from .generator import ManifestEntry, SearchSpace, enumerate_specs, model_name
from .runner import TrainConfig, run_campaign, train_model, verify

__version__ = "0.1.0"

__all__ = [
    "ComputationGraph",
    "ConvUnitSpec",
    "ManifestEntry",
    "ModelSpec",
    "SearchSpace",
    "TrainConfig",
    "build_model",
    "canonicalize",
    "enumerate_specs",
    "expand_fractal",
    "model_name",
    "param_count",
    "run_campaign",
    "train_model",
    "verify",
]

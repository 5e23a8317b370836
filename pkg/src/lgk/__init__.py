"""Weakly asymmetric multi-species lattice gas: simulation and verification toolkit."""

__version__ = "0.1.0"

from .errors import LgkError  # noqa: F401
from .kernels import BACKENDS, default_backend  # noqa: F401
from .velocity import VelocitySet, build_velocity_set, model_one, sqrt2_set  # noqa: F401

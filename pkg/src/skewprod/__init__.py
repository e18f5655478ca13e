"""Simulation and verification toolkit for randomly and quasiperiodically forced skew products."""

from . import attractor, base, driving, models, semiuniform, skew
from .base import BaseOrbit, BaseSpec, sample_orbit, shift
from .driving import DrivingSystem, GridSet
from .skew import SkewSystem

__version__ = "0.1.0"

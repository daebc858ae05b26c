"""Gradient-memory optimization laboratory.

Discrete optimizers with configurable gradient forgetting, continuous-time
ODE/SDE models of the same dynamics, closed-form convergence bounds, and an
experiment harness that checks trajectories against the theory.
"""

from memgrad.memory import MemoryFunction
from memgrad.optimizers import OptimizerState
from memgrad.problems import NoiseModel, Objective

__all__ = ["MemoryFunction", "NoiseModel", "Objective", "OptimizerState"]

__version__ = "0.1.0"

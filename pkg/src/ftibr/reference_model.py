"""Fault-free reference current dynamics tracked by each low-level controller."""
import math
from dataclasses import dataclass, field

import numpy as np

from .plant import J


@dataclass(frozen=True)
class RefModelParams:
    r_m: float
    l_m: float
    k: float

    def __post_init__(self):
        if not (self.r_m > 0 and self.l_m > 0 and self.k > 0):
            raise ValueError("r_m, l_m and k must be positive")

    @property
    def decay_rate(self):
        """Exponential convergence rate (r_m + k) / l_m in 1/s."""
        return (self.r_m + self.k) / self.l_m


@dataclass(frozen=True, eq=False)
class RefModelState:
    i_m: np.ndarray = field(default_factory=lambda: np.zeros(2))


def refmodel_derivative(state, i_ref, params, env):
    e = state.i_m - i_ref
    return -((params.r_m + params.k) * e - params.l_m * env.omega_g * (J @ e)) / params.l_m


def power_tracking_bound(p_m0, q_m0, p_ref, q_ref, params, t):
    """Upper bound on the reference model's power-tracking error at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return math.hypot(p_m0 - p_ref, q_m0 - q_ref) * math.exp(-params.decay_rate * t)

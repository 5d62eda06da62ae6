"""dq-frame dynamics of a grid-following inverter behind an RL line.

Vectors in the synchronous frame are plain length-2 float arrays (d, q).
"""
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FaultedPlant

# Rotation used for the cross product and the dq coupling terms.
J = np.array([[0.0, 1.0], [-1.0, 0.0]])
J.setflags(write=False)


def dq(d, q=0.0):
    return np.array([float(d), float(q)])


class FaultMode(enum.Enum):
    NONE = "none"
    OPEN_LINE = "open_line"


@dataclass(frozen=True)
class LineParams:
    r_g: float
    l_g: float
    l_g0: float

    def __post_init__(self):
        if not self.r_g > 0 or not self.l_g > 0 or not self.l_g0 > 0:
            raise ValueError("line resistance and inductances must be positive")

    @property
    def delta_l_g(self):
        return self.l_g - self.l_g0

    @classmethod
    def from_nominal(cls, r_g, l_g0, delta_l_g=0.0):
        return cls(r_g=r_g, l_g=l_g0 + delta_l_g, l_g0=l_g0)


@dataclass(frozen=True, eq=False)
class GridEnv:
    v_g: np.ndarray
    omega_g: float

    def __post_init__(self):
        object.__setattr__(self, "v_g", np.asarray(self.v_g, dtype=float).reshape(2))
        if not np.linalg.norm(self.v_g) > 0 or not self.omega_g > 0:
            raise ValueError("grid voltage and frequency must be nonzero")

    @classmethod
    def from_hz(cls, v_gd, v_gq=0.0, f_hz=60.0):
        return cls(dq(v_gd, v_gq), 2.0 * math.pi * f_hz)


@dataclass(frozen=True, eq=False)
class PlantState:
    i: np.ndarray = field(default_factory=lambda: np.zeros(2))
    fault_mode: FaultMode = FaultMode.NONE

    @property
    def faulted(self):
        return self.fault_mode is not FaultMode.NONE


def plant_derivative(state, v, line, env):
    """di/dt of the line current for control voltage ``v``."""
    if state.faulted:
        raise FaultedPlant("open-line plant has no current dynamics")
    i = state.i
    return (-line.r_g * i + line.l_g * env.omega_g * (J @ i) + v - env.v_g) / line.l_g


def measure_powers(state, env):
    """Active and reactive power ``(v_g . i, v_g . J i)``."""
    i = state.i
    return float(env.v_g @ i), float(env.v_g @ (J @ i))


def inject_fault(state, mode):
    if mode is None or mode is FaultMode.NONE:
        raise ValueError("fault mode must be a real fault")
    if state.fault_mode is mode:
        return state
    return replace(state, i=np.zeros(2), fault_mode=mode)


def apply_swell(env, fraction):
    if not fraction > -1.0:
        raise ValueError("swell fraction must exceed -1")
    return GridEnv(env.v_g * (1.0 + fraction), env.omega_g)

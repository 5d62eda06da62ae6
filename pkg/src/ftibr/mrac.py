"""Model-reference adaptive current control with projected resistance estimation.

The control law cancels the nominal line dynamics using the current
resistance estimate, so that the tracking error obeys

    l_g de/dt = -(r_m + k) e + (r_hat - r_g) i + (l_g - l_g0) w J i + (l_m - l_g) di_m/dt

where the last two terms vanish for an exactly known inductance with l_m = l_g,
and the estimate is driven by ``-e . i`` through a smooth projection that
keeps ``|r_hat| <= r_bar + epsilon``.
"""
import math
from dataclasses import dataclass, replace

import numpy as np

from .plant import J


@dataclass(frozen=True)
class EstimatorState:
    r_hat: float
    gamma_r: float
    r_bar: float
    epsilon: float

    def __post_init__(self):
        if not (self.gamma_r > 0 and self.r_bar > 0 and self.epsilon > 0):
            raise ValueError("gamma_r, r_bar and epsilon must be positive")

    @property
    def bound(self):
        return self.r_bar + self.epsilon


@dataclass(frozen=True, eq=False)
class ControllerOutput:
    v: np.ndarray
    i_tilde: np.ndarray
    v_dot_lyap: float


def tracking_error(i, i_m):
    return np.asarray(i, dtype=float) - np.asarray(i_m, dtype=float)


def control_voltage(i, i_m, i_ref, est, refp, l_g0, env):
    w = env.omega_g
    gain = refp.r_m + refp.k
    return (
        (est.r_hat - gain) * i
        - l_g0 * w * (J @ i)
        + refp.l_m * w * (J @ i_m)
        + gain * i_ref
        - refp.l_m * w * (J @ i_ref)
        + env.v_g
    )


def boundary_function(r, r_bar, epsilon):
    """Convex level function: 0 on ``|r| = r_bar``, 1 on ``|r| = r_bar + epsilon``."""
    return (r * r - r_bar * r_bar) / (2.0 * epsilon * r_bar + epsilon * epsilon)


def boundary_gradient(r, r_bar, epsilon):
    return 2.0 * r / (2.0 * epsilon * r_bar + epsilon * epsilon)


def projection(theta, y, r_bar, epsilon):
    """Smooth scalar projection of the update direction ``y`` at estimate ``theta``.

    Works elementwise on arrays.
    """
    f = boundary_function(theta, r_bar, epsilon)
    outward = (f > 0.0) & (boundary_gradient(theta, r_bar, epsilon) * y > 0.0)
    return np.where(outward, y * (1.0 - f), y)


def estimator_rate(est, i, i_tilde):
    y = -float(np.dot(i_tilde, i))
    return est.gamma_r * float(projection(est.r_hat, y, est.r_bar, est.epsilon))


def estimator_step(est, i, i_tilde, dt):
    """Advance the resistance estimate by one explicit Euler step.

    A step that would overshoot the projection boundary is clamped onto it.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    r_new = est.r_hat + dt * estimator_rate(est, i, i_tilde)
    r_new = min(max(r_new, -est.bound), est.bound)
    return replace(est, r_hat=r_new)


def lyapunov_value(i_tilde, r_tilde, l_g, gamma_r):
    i_tilde = np.asarray(i_tilde, dtype=float)
    return 0.5 * l_g * float(i_tilde @ i_tilde) + r_tilde * r_tilde / (2.0 * gamma_r)


def lyapunov_rate(i_tilde, refp):
    """Nominal decay rate ``-(r_m + k) |e|^2`` of the Lyapunov function."""
    i_tilde = np.asarray(i_tilde, dtype=float)
    return -(refp.r_m + refp.k) * float(i_tilde @ i_tilde)


def proposition1_radius(i_tilde0, r_bar, gamma_r):
    """Uniform bound on the tracking error norm, ``|e(0)| + r_bar / sqrt(2 gamma_r)``."""
    if not gamma_r > 0:
        raise ValueError("gamma_r must be positive")
    return float(np.linalg.norm(i_tilde0)) + r_bar / math.sqrt(2.0 * gamma_r)


def power_ball_radius(i_tilde0, r_bar, gamma_r, v_g):
    return float(np.linalg.norm(v_g)) * proposition1_radius(i_tilde0, r_bar, gamma_r)


def controller_output(i, i_m, i_ref, est, refp, l_g0, env):
    i_tilde = tracking_error(i, i_m)
    v = control_voltage(i, i_m, i_ref, est, refp, l_g0, env)
    return ControllerOutput(v=v, i_tilde=i_tilde, v_dot_lyap=lyapunov_rate(i_tilde, refp))

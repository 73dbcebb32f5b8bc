"""Vehicle state layout and coordinated-turn (CTRV) motion.

State vector layout (length 7), used everywhere in this package:

    [x, y, z, heading, speed, turn_rate, clock_bias]

with positions and clock bias in meters, heading in rad, speed in m/s and
turn rate in rad/s.  The vehicle moves in the horizontal plane: ``z`` is
constant under the transition.  Speed and turn rate are carried as known
quantities; process noise acts on (x, y, heading, clock_bias) only.

All functions accept arrays with leading batch dimensions, i.e. shape
``(..., 7)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STATE_DIM = 7
IDX_X, IDX_Y, IDX_Z, IDX_HEAD, IDX_SPEED, IDX_TURN, IDX_BIAS = range(STATE_DIM)

# Below this turn rate the circular arc is replaced by its straight-line
# limit (the exact expression divides by the turn rate).
TURN_RATE_EPS = 1e-6


def wrap_angle(a):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


def make_state(x=0.0, y=0.0, z=0.0, heading=0.0, speed=0.0, turn_rate=0.0,
               clock_bias=0.0) -> np.ndarray:
    """Build a single state vector from named components."""
    return np.array([x, y, z, heading, speed, turn_rate, clock_bias],
                    dtype=float)


@dataclass(frozen=True)
class ProcessNoiseSpec:
    """Standard deviations of the additive Gaussian process noise.

    The implied covariance is diag([sx^2, sy^2, 0, sa^2, 0, 0, sb^2]) on the
    state layout above: only x, y, heading and clock bias are perturbed.
    """

    sigma_x: float = 0.2
    sigma_y: float = 0.2
    sigma_heading: float = 0.001
    sigma_bias: float = 0.2

    def __post_init__(self):
        for name in ("sigma_x", "sigma_y", "sigma_heading", "sigma_bias"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def zero(cls) -> "ProcessNoiseSpec":
        return cls(0.0, 0.0, 0.0, 0.0)


def transition(state: np.ndarray, dt: float) -> np.ndarray:
    """Deterministic coordinated-turn step over ``dt`` seconds.

    For turn rates below ``TURN_RATE_EPS`` the displacement uses the
    straight-line limit plus its first turn-rate correction, which keeps the
    two branches continuous to second order at the switch point.

    Args:
        state: array (..., 7).
        dt: time step, > 0.

    Returns:
        New state array, same shape.  z, speed and turn rate are preserved
        exactly, heading is wrapped to (-pi, pi].
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=float)
    out = state.copy()

    alpha = state[..., IDX_HEAD]
    zeta = state[..., IDX_SPEED]
    rho = state[..., IDX_TURN]

    small = np.abs(rho) < TURN_RATE_EPS
    rho_safe = np.where(small, 1.0, rho)
    sin_a, cos_a = np.sin(alpha), np.cos(alpha)
    sin_b, cos_b = np.sin(alpha + rho * dt), np.cos(alpha + rho * dt)

    dx_arc = zeta / rho_safe * (sin_b - sin_a)
    dy_arc = zeta / rho_safe * (cos_a - cos_b)
    dx_lim = zeta * dt * cos_a - 0.5 * zeta * dt * dt * rho * sin_a
    dy_lim = zeta * dt * sin_a + 0.5 * zeta * dt * dt * rho * cos_a

    out[..., IDX_X] = state[..., IDX_X] + np.where(small, dx_lim, dx_arc)
    out[..., IDX_Y] = state[..., IDX_Y] + np.where(small, dy_lim, dy_arc)
    out[..., IDX_HEAD] = wrap_angle(alpha + rho * dt)
    return out


def sample_transition(state: np.ndarray, dt: float, noise: ProcessNoiseSpec,
                      rng: np.random.Generator) -> np.ndarray:
    """Coordinated-turn step plus Gaussian noise on (x, y, heading, bias).

    Speed and turn rate are never perturbed.  One ``standard_normal`` call of
    shape (..., 4) is consumed from ``rng``, so batched invocations are
    reproducible for a fixed generator state.
    """
    out = transition(state, dt)
    eps = rng.standard_normal(out.shape[:-1] + (4,))
    out[..., IDX_X] += noise.sigma_x * eps[..., 0]
    out[..., IDX_Y] += noise.sigma_y * eps[..., 1]
    out[..., IDX_HEAD] = wrap_angle(out[..., IDX_HEAD]
                                    + noise.sigma_heading * eps[..., 2])
    out[..., IDX_BIAS] += noise.sigma_bias * eps[..., 3]
    return out

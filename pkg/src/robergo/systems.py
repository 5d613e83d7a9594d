"""Single-axis double-integrator plant and the augmented-state integrator.

State is ``x = (x1, x2)`` (position, velocity) with dynamics
``x1' = x2, x2' = u + d`` under box-bounded control ``|u| <= u_max`` and
disturbance ``|d| <= d_max``.  The exploration map selects position.  The
combined integrator steps plant and augmented coverage state together with
explicit Euler, evaluating the basis at the pre-step position so the
discrete-time metric identity holds exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .ergodic import BasisSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlantState:
    x1: float
    x2: float

    def __post_init__(self):
        if not (np.isfinite(self.x1) and np.isfinite(self.x2)):
            raise ValueError(f"plant state must be finite, got ({self.x1}, {self.x2})")


@dataclass(frozen=True)
class ControlBounds:
    u_max: float
    d_max: float

    def __post_init__(self):
        if self.u_max <= 0:
            raise ValueError(f"u_max must be positive, got {self.u_max}")
        if self.d_max < 0:
            raise ValueError(f"d_max must be nonnegative, got {self.d_max}")
        if self.d_max > self.u_max:
            raise ValueError(
                f"d_max {self.d_max} exceeds u_max {self.u_max}; the game is "
                "uncontrollable"
            )


@dataclass(frozen=True)
class FullState:
    """Plant state, augmented coverage state, and clock."""

    x: PlantState
    z: NDArray
    t: float


def clamp_inputs(u, d, bounds: ControlBounds):
    """Clamp control/disturbance to their boxes (defensive; logs violations)."""
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(np.abs(u) > bounds.u_max) or np.any(np.abs(d) > bounds.d_max):
        logger.warning("control or disturbance outside bounds; clamping")
    return (
        np.clip(u, -bounds.u_max, bounds.u_max),
        np.clip(d, -bounds.d_max, bounds.d_max),
    )


def plant_deriv(x: PlantState, u: float, d: float, bounds: ControlBounds) -> tuple[float, float]:
    """``(x1', x2') = (x2, u + d)`` with inputs clamped to their boxes."""
    u_c, d_c = clamp_inputs(u, d, bounds)
    return (x.x2, float(u_c + d_c))


def exploration_map(x: PlantState) -> NDArray:
    """Project the plant state to the exploration space (position)."""
    return np.array([x.x1])


def euler_step(
    s: FullState,
    u: float,
    d: float,
    dt: float,
    basis: BasisSet,
    phi_k: NDArray,
    bounds: ControlBounds,
) -> FullState:
    """One explicit-Euler step of the combined plant + coverage state.

    The z update uses the pre-step position (the state the agent occupied
    during the interval under left-Riemann accounting).
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    dx1, dx2 = plant_deriv(s.x, u, d, bounds)
    zdot = basis.eval(exploration_map(s.x)) - phi_k
    return FullState(
        x=PlantState(s.x.x1 + dx1 * dt, s.x.x2 + dx2 * dt),
        z=s.z + zdot * dt,
        t=s.t + dt,
    )

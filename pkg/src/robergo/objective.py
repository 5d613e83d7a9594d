"""Running cost, boundary barrier, terminal ergodic value, cost accounting.

The game's running cost is

    g(x, z, u) = q * sum_k Lam_k z_k^2  +  u R u  +  barr(x1),

and the terminal cost is the horizon-normalized ergodic term
``(1/horizon) * sum_k Lam_k z_k^2`` (no extra terminal state cost).  The
barrier is a squared hinge outside a margin-shrunk box: zero strictly
inside, once-differentiable at the walls — differentiable enough for both
the trajectory adjoint and the Hamiltonian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .ergodic import BasisSet, ExplorationSpace


@dataclass(frozen=True)
class CostParams:
    q: float = 1.0
    R: float = 0.05
    barrier_weight: float = 100.0
    barrier_margin: float = 0.0
    horizon_duration: float = 1.0

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.q < 0 or self.barrier_weight < 0 or self.barrier_margin < 0:
            raise ValueError("q, barrier_weight, barrier_margin must be nonnegative")
        if self.horizon_duration <= 0:
            raise ValueError(
                f"horizon_duration must be positive, got {self.horizon_duration}"
            )


@dataclass(frozen=True)
class CostBreakdown:
    running_ergodic: float
    control_effort: float
    barrier: float
    terminal_ergodic: float
    terminal_h: float

    @property
    def total(self) -> float:
        return (
            self.running_ergodic
            + self.control_effort
            + self.barrier
            + self.terminal_ergodic
            + self.terminal_h
        )


def barrier(x1, space: ExplorationSpace, params: CostParams):
    """Squared-hinge wall penalty on position; vectorized over ``x1``."""
    L = space.lengths[0]
    m = params.barrier_margin
    x1 = np.asarray(x1, dtype=float)
    over = np.maximum(0.0, x1 - (L - m))
    under = np.maximum(0.0, m - x1)
    return params.barrier_weight * (over * over + under * under)


def barrier_grad(x1, space: ExplorationSpace, params: CostParams):
    """d barr / d x1; continuous (zero) at the hinge points."""
    L = space.lengths[0]
    m = params.barrier_margin
    x1 = np.asarray(x1, dtype=float)
    over = np.maximum(0.0, x1 - (L - m))
    under = np.maximum(0.0, m - x1)
    return params.barrier_weight * (2.0 * over - 2.0 * under)


def running_cost(
    x1, z: NDArray, u, basis: BasisSet, params: CostParams
):
    """``g = q * sum_k Lam_k z_k^2 + R u^2 + barr(x1)``.

    Accepts batched inputs: ``z`` with shape ``(..., K)``, ``x1``/``u``
    broadcastable to the leading shape.
    """
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    erg = params.q * np.sum(basis.weights * z * z, axis=-1)
    return erg + params.R * u * u + barrier(x1, basis.space, params)


def terminal_value(z: NDArray, params: CostParams, basis: BasisSet):
    """Horizon-normalized terminal ergodic cost ``(1/horizon) sum Lam z^2``.

    The extra terminal state cost h is identically zero here.  Note the
    single horizon division: this is the game's terminal cost, which equals
    the ergodic metric exactly when the horizon is one second.
    """
    z = np.asarray(z, dtype=float)
    return np.sum(basis.weights * z * z, axis=-1) / params.horizon_duration


def trajectory_cost(
    x1_steps: NDArray,
    z_steps: NDArray,
    u_steps: NDArray,
    z_terminal: NDArray,
    dt: float,
    basis: BasisSet,
    params: CostParams,
    normalization: float = 1.0,
) -> CostBreakdown:
    """Left-Riemann cost accounting for a completed rollout.

    ``x1_steps``/``z_steps``/``u_steps`` hold the T pre-step samples the
    agent occupied while each control acted; ``z_terminal`` closes the
    trajectory.  The three running components are each divided by
    ``normalization`` (e.g. 20 for a 20 s trial driven by a 1 s-horizon
    game, to preserve the running/terminal weighting).
    """
    x1_steps = np.asarray(x1_steps, dtype=float)
    z_steps = np.asarray(z_steps, dtype=float)
    u_steps = np.asarray(u_steps, dtype=float)
    if len(x1_steps) == 0:
        raise ValueError("empty rollout")
    if normalization <= 0:
        raise ValueError(f"normalization must be positive, got {normalization}")
    erg = params.q * float(np.sum(basis.weights * z_steps * z_steps)) * dt
    effort = params.R * float(np.sum(u_steps * u_steps)) * dt
    barr = float(np.sum(barrier(x1_steps, basis.space, params))) * dt
    return CostBreakdown(
        running_ergodic=erg / normalization,
        control_effort=effort / normalization,
        barrier=barr / normalization,
        terminal_ergodic=float(terminal_value(z_terminal, params, basis)),
        terminal_h=0.0,
    )

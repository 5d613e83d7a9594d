"""Receding-horizon controllers and the closed-form Hamiltonian optimizers.

Three policies share one discretized game: explicit-Euler rollout of the
double integrator plus coverage state over a T-step horizon, scored by the
running cost and the horizon-normalized terminal ergodic term.

* ``mpc``   — projected gradient descent on controls, disturbance pinned to 0.
* ``rempc`` — simultaneous descent on controls / projected ascent on
  disturbances (a first-order minimax solver over the same rollout).
* ``range`` — one-step extraction from a trained value net: for this
  control-affine plant the inner minimax has the closed form
  ``u* = clip(-p/(2R))`` and ``d* = d_max * sign(p)`` with ``p = dV/dx2``.

The rollout and its discrete adjoint are fused and batched: every operation
is an elementwise or per-row cumulative-sum chain, so a batch of B rollouts
is bit-identical to B independent single rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .ergodic import BasisSet
from .objective import CostParams
from .systems import ControlBounds, FullState

__all__ = [
    "HorizonPlan",
    "ReMPCConfig",
    "pred_rollout",
    "pred_rollout_grad",
    "rempc_step",
    "mpc_step",
    "plan_update_batch",
    "rollout_cost_grad_batch",
    "opt_control_from_costate",
    "worst_case_disturbance",
    "sign_plus",
    "MPCPolicy",
    "ReMPCPolicy",
    "RangePolicy",
]


@dataclass
class HorizonPlan:
    """Paired control/disturbance sequences over the receding horizon."""

    controls: NDArray
    disturbances: NDArray

    def __post_init__(self):
        self.controls = np.asarray(self.controls, dtype=float)
        self.disturbances = np.asarray(self.disturbances, dtype=float)
        if self.controls.shape != self.disturbances.shape or self.controls.ndim != 1:
            raise ValueError("controls and disturbances must be equal-length 1-D")
        if len(self.controls) < 1:
            raise ValueError("empty plan")

    @classmethod
    def zeros(cls, horizon_steps: int) -> "HorizonPlan":
        return cls(np.zeros(horizon_steps), np.zeros(horizon_steps))


@dataclass(frozen=True)
class ReMPCConfig:
    horizon_steps: int = 100
    dt: float = 0.01
    iters: int = 30
    step_u: float = 0.5
    step_d: float = 0.5

    def __post_init__(self):
        if self.horizon_steps < 1 or self.dt <= 0:
            raise ValueError("horizon_steps must be >= 1 and dt positive")
        if self.iters < 0 or self.step_u <= 0 or self.step_d <= 0:
            raise ValueError("iters must be >= 0 and step sizes positive")


def rollout_cost_grad_batch(
    x1_0: NDArray,
    x2_0: NDArray,
    z0: NDArray,
    U: NDArray,
    D: NDArray,
    dt: float,
    basis: BasisSet,
    phi_k: NDArray,
    params: CostParams,
    with_grad: bool = True,
):
    """Fused rollout cost and exact discrete adjoint for a batch of plans.

    Shapes: ``x1_0, x2_0: (B,)``; ``z0: (B, K)``; ``U, D: (B, T)``.  Returns
    ``(J, gU, gD)`` with ``J: (B,)`` and gradients of shape ``(B, T)`` (or
    ``None`` when ``with_grad`` is false).  Inputs are taken as-is (callers
    enforce bounds); positions are clamped to the box for basis evaluation
    only, the barrier sees the raw position.
    """
    if basis.space.dim != 1:
        raise ValueError("controller rollouts require a 1-D exploration space")
    B, T = U.shape
    L = basis.space.lengths[0]
    lam = basis.weights
    ang = basis.modes[:, 0] * np.pi / L      # (K,)
    hk = basis.normalizers

    a = U + D
    x2_pre = np.empty((B, T))
    x2_pre[:, 0] = x2_0
    x2_pre[:, 1:] = x2_0[:, None] + np.cumsum(a[:, :-1], axis=1) * dt
    x1_pre = np.empty((B, T))
    x1_pre[:, 0] = x1_0
    x1_pre[:, 1:] = x1_0[:, None] + np.cumsum(x2_pre[:, :-1], axis=1) * dt

    x1c = np.clip(x1_pre, 0.0, L)
    phase = x1c[:, :, None] * ang
    cosp = np.cos(phase)
    F = cosp / hk
    dz = F - phi_k
    z_pre = np.empty((B, T, len(lam)))
    z_pre[:, 0, :] = z0
    z_pre[:, 1:, :] = z0[:, None, :] + np.cumsum(dz[:, :-1, :], axis=1) * dt
    z_T = z_pre[:, -1, :] + dz[:, -1, :] * dt

    m = params.barrier_margin
    over = np.maximum(0.0, x1_pre - (L - m))
    under = np.maximum(0.0, m - x1_pre)
    barr = params.barrier_weight * (over * over + under * under)

    horizon = T * dt
    run_erg = params.q * np.einsum("btk,k->b", z_pre * z_pre, lam) * dt
    effort = params.R * np.sum(U * U, axis=1) * dt
    term = np.einsum("bk,k->b", z_T * z_T, lam) / horizon
    J = run_erg + effort + np.sum(barr, axis=1) * dt + term
    if not with_grad:
        return J, None, None

    # Adjoint of the Euler chain, reverse-accumulated as cumsum chains.
    pzT = 2.0 * lam * z_T / horizon                       # (B, K)
    rc = np.cumsum(z_pre[:, ::-1, :], axis=1)[:, ::-1, :]  # sum_{j>=s} z_j
    s_tail = rc - z_pre                                    # sum_{j>s} z_j
    PZ1 = pzT[:, None, :] + (2.0 * params.q * dt) * lam * s_tail
    inside = (x1_pre >= 0.0) & (x1_pre <= L)
    Fp = -(ang * np.sin(phase)) / hk * inside[:, :, None]
    barr_g = params.barrier_weight * (2.0 * over - 2.0 * under)
    r = np.einsum("btk,btk->bt", PZ1, Fp) + barr_g
    P1 = np.cumsum(r[:, ::-1], axis=1)[:, ::-1] * dt       # p^x1 at tau=0..T-1
    rp = np.cumsum(P1[:, ::-1], axis=1)[:, ::-1]
    G = np.zeros((B, T))
    G[:, : T - 2] = rp[:, 2:] * (dt * dt)                  # dt * p^x2_{tau+1}
    gU = 2.0 * params.R * dt * U + G
    gD = G.copy()
    return J, gU, gD


def pred_rollout(
    s0: FullState,
    plan: HorizonPlan,
    params: CostParams,
    basis: BasisSet,
    phi_k: NDArray,
    bounds: ControlBounds,
    dt: float | None = None,
) -> float:
    """Cost of rolling the plan out from ``s0`` (plan clamped to bounds).

    ``dt`` defaults to ``horizon_duration / T`` so the terminal term divides
    by the configured horizon.
    """
    U = np.clip(plan.controls, -bounds.u_max, bounds.u_max)[None, :]
    D = np.clip(plan.disturbances, -bounds.d_max, bounds.d_max)[None, :]
    J, _, _ = rollout_cost_grad_batch(
        np.array([s0.x.x1]),
        np.array([s0.x.x2]),
        s0.z[None, :],
        U,
        D,
        dt=dt if dt is not None else _plan_dt(params, plan),
        basis=basis,
        phi_k=phi_k,
        params=params,
        with_grad=False,
    )
    return float(J[0])


def _plan_dt(params: CostParams, plan: HorizonPlan) -> float:
    return params.horizon_duration / len(plan.controls)


def pred_rollout_grad(
    s0: FullState,
    plan: HorizonPlan,
    params: CostParams,
    basis: BasisSet,
    phi_k: NDArray,
    bounds: ControlBounds,
    dt: float | None = None,
) -> tuple[float, NDArray, NDArray]:
    """Rollout cost plus exact gradients w.r.t. every control/disturbance.

    Entries strictly outside the bound boxes are clamped for the rollout and
    get zero gradient; on the closed box the gradient is the plain adjoint.
    """
    u_raw, d_raw = plan.controls, plan.disturbances
    U = np.clip(u_raw, -bounds.u_max, bounds.u_max)[None, :]
    D = np.clip(d_raw, -bounds.d_max, bounds.d_max)[None, :]
    J, gU, gD = rollout_cost_grad_batch(
        np.array([s0.x.x1]),
        np.array([s0.x.x2]),
        s0.z[None, :],
        U,
        D,
        dt=dt if dt is not None else _plan_dt(params, plan),
        basis=basis,
        phi_k=phi_k,
        params=params,
    )
    gU = gU[0] * (np.abs(u_raw) <= bounds.u_max)
    gD = gD[0] * (np.abs(d_raw) <= bounds.d_max)
    return float(J[0]), gU, gD


def plan_update_batch(
    x1: NDArray,
    x2: NDArray,
    z: NDArray,
    U: NDArray,
    D: NDArray,
    cfg: ReMPCConfig,
    params: CostParams,
    basis: BasisSet,
    phi_k: NDArray,
    bounds: ControlBounds,
    robust: bool,
) -> tuple[NDArray, NDArray]:
    """One control cycle for a batch of rollouts: shift, then iterate.

    Both sequences shift left with zero fill; each iteration applies the
    simultaneous update (gradients evaluated at the iterate entering the
    loop body) with projection onto the control/disturbance boxes.  With
    ``robust`` false the disturbance plan is left untouched — pinned at zero
    this is the conventional MPC.
    """
    B, T = U.shape
    U = np.concatenate([U[:, 1:], np.zeros((B, 1))], axis=1)
    D = np.concatenate([D[:, 1:], np.zeros((B, 1))], axis=1)
    for _ in range(cfg.iters):
        _, gU, gD = rollout_cost_grad_batch(
            x1, x2, z, U, D, cfg.dt, basis, phi_k, params
        )
        U = np.clip(U - cfg.step_u * gU, -bounds.u_max, bounds.u_max)
        if robust:
            D = np.clip(D + cfg.step_d * gD, -bounds.d_max, bounds.d_max)
    return U, D


def _step(s, plan, cfg, params, basis, phi_k, bounds, robust):
    U, D = plan_update_batch(
        np.array([s.x.x1]),
        np.array([s.x.x2]),
        s.z[None, :],
        plan.controls[None, :],
        plan.disturbances[None, :],
        cfg,
        params,
        basis,
        phi_k,
        bounds,
        robust,
    )
    new_plan = HorizonPlan(U[0], D[0])
    return float(new_plan.controls[0]), new_plan


def rempc_step(s, plan, cfg, params, basis, phi_k, bounds):
    """Robust control cycle: returns the control to apply and the new plan."""
    return _step(s, plan, cfg, params, basis, phi_k, bounds, robust=True)


def mpc_step(s, plan, cfg, params, basis, phi_k, bounds):
    """Non-robust control cycle (disturbance plan pinned to zero)."""
    return _step(s, plan, cfg, params, basis, phi_k, bounds, robust=False)


def opt_control_from_costate(p, R: float, u_max: float):
    """Unique minimizer of ``R u^2 + p u`` over ``[-u_max, u_max]``."""
    if R <= 0:
        raise ValueError(f"R must be positive, got {R}")
    return np.clip(-np.asarray(p, dtype=float) / (2.0 * R), -u_max, u_max)


def sign_plus(p):
    """Sign with the 0 -> +1 tie-break used for the adversary."""
    return np.where(np.asarray(p, dtype=float) >= 0.0, 1.0, -1.0)


def worst_case_disturbance(u_star, d_max: float):
    """``-sign(u*) * d_max``; a zero control draws the positive extreme."""
    return np.where(np.asarray(u_star, dtype=float) > 0.0, -d_max, d_max)


class MPCPolicy:
    """Receding-horizon descent controller with a persistent warm start."""

    robust = False

    def __init__(self, cfg: ReMPCConfig, params: CostParams, basis: BasisSet,
                 phi_k: NDArray, bounds: ControlBounds):
        self.cfg = cfg
        self.params = params
        self.basis = basis
        self.phi_k = phi_k
        self.bounds = bounds
        self.plan = HorizonPlan.zeros(cfg.horizon_steps)

    def reset(self):
        self.plan = HorizonPlan.zeros(self.cfg.horizon_steps)

    def evaluate(self, s: FullState) -> float:
        u0, self.plan = _step(
            s, self.plan, self.cfg, self.params, self.basis, self.phi_k,
            self.bounds, robust=self.robust,
        )
        return u0


class ReMPCPolicy(MPCPolicy):
    """Minimax variant: ascends the disturbance plan alongside the descent."""

    robust = True


class RangePolicy:
    """Value-gradient policy extracted from a trained net.

    The net is queried at a fixed interior time each step (receding-horizon
    use of a fixed-horizon value function); the control and the matching
    worst-case disturbance come from the closed-form inner optimizers.
    """

    def __init__(self, net, params: CostParams, bounds: ControlBounds,
                 query_time: float = 0.02):
        self.net = net
        self.params = params
        self.bounds = bounds
        self.query_time = query_time

    def _costate(self, s: FullState) -> float:
        _, gx, _, _ = self.net.grads_np(
            np.array([[s.x.x1, s.x.x2]]),
            s.z[None, self.net.mode_mask],
            np.array([self.query_time]),
        )
        return float(gx[0, 1])

    def evaluate(self, s: FullState) -> float:
        p = self._costate(s)
        return float(opt_control_from_costate(p, self.params.R, self.bounds.u_max))

    def evaluate_pair(self, s: FullState) -> tuple[float, float]:
        """(u*, d*) from one net query; d* = d_max * sign(dV/dx2)."""
        p = self._costate(s)
        u = float(opt_control_from_costate(p, self.params.R, self.bounds.u_max))
        d = float(self.bounds.d_max * sign_plus(p))
        return u, d

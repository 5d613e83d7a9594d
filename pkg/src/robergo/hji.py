"""Minimax Hamiltonian and the physics-informed value-function trainer.

The value function of the disturbed coverage game satisfies a terminal-value
PDE: ``-dV/dt = min_u max_d H(x, z, t, u, d)`` backward from ``t_f``, with
the horizon-normalized ergodic terminal condition.  For the control-affine
double integrator the inner minimax is closed-form (``u* = clip(-p/(2R))``,
``d* = d_max sign(p)`` with ``p = dV/dx2``), so the PDE residual is cheap to
evaluate at sampled states.

Training follows the usual two-phase curriculum for terminal-value PDEs:
fit the terminal condition first, then widen the sampled time window
backwards from ``t_f`` until it covers ``[t0, tf]``, minimizing

    loss = mean |V(., tf) - terminal|  +  lambda * mean |dV/dt + H*|.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from numpy.typing import NDArray

from .controllers import opt_control_from_costate, sign_plus
from .ergodic import BasisSet
from .objective import CostParams, barrier, running_cost
from .systems import ControlBounds
from .valuenet import ValueNet, build_metadata, make_net

logger = logging.getLogger(__name__)


def hamiltonian_optimal(
    x1: float,
    x2: float,
    z: NDArray,
    gx1: float,
    gx2: float,
    gz: NDArray,
    params: CostParams,
    basis: BasisSet,
    phi_k: NDArray,
    bounds: ControlBounds,
) -> float:
    """Hamiltonian evaluated at the closed-form saddle point.

    ``z`` and ``gz`` are full-length mode vectors (the k = 0 entry of ``gz``
    is multiplied by a zero deficit for any normalized density, so it may be
    arbitrary).  Returns ``g(x, z, u*) + dV/dx . f(x, u*, d*) + sum_k
    dV/dz_k zdot_k``.
    """
    u = float(opt_control_from_costate(gx2, params.R, bounds.u_max))
    d = float(bounds.d_max * sign_plus(gx2))
    zdot = basis.eval(np.array([x1])) - phi_k
    run = float(running_cost(x1, z, u, basis, params))
    return run + gx1 * x2 + gx2 * (u + d) + float(np.dot(gz, zdot))


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 30000
    batch_interior: int = 1024
    batch_terminal: int = 256
    lam_weight: float = 1.0
    learning_rate: float = 1e-4
    curriculum_fraction: float = 0.2
    expansion_fraction: float = 0.5
    seed: int = 0
    hidden_layers: tuple[int, ...] = (128, 128, 128)
    omega: float = 30.0
    x1_range: tuple[float, float] = (-0.1, 1.1)
    x2_range: tuple[float, float] = (-2.0, 2.0)
    z_range: tuple[float, float] = (-0.5, 0.5)
    t0: float = 0.0
    tf: float = 1.0
    log_every: int = 250
    # Frozen evaluation thresholds (checked by `check` and the test suite).
    terminal_mae_frac_max: float = 0.02
    residual_improvement_min: float = 10.0
    residual_abs_max: float = 1.0
    rollout_ratio_max: float = 0.5

    def __post_init__(self):
        if self.iterations < 1 or self.batch_interior < 1 or self.batch_terminal < 1:
            raise ValueError("iterations and batch sizes must be positive")
        if self.lam_weight < 0:
            raise ValueError("lam_weight must be nonnegative")
        if not (0.0 <= self.curriculum_fraction < 1.0):
            raise ValueError("curriculum_fraction must be in [0, 1)")
        if not (0.0 < self.expansion_fraction <= 1.0):
            raise ValueError("expansion_fraction must be in (0, 1]")
        if self.tf <= self.t0:
            raise ValueError("tf must exceed t0")


def earliest_time(cfg: TrainConfig, iteration: int) -> float:
    """Lower edge of the sampled time window at a given iteration.

    Pinned to ``tf`` during terminal pretraining, then linear down to ``t0``
    over the expansion span, then flat.  Nonincreasing in the iteration.
    """
    pre = int(cfg.curriculum_fraction * cfg.iterations)
    expand = max(1, int(cfg.expansion_fraction * (cfg.iterations - pre)))
    if iteration < pre:
        return cfg.tf
    frac = min(1.0, (iteration - pre + 1) / expand)
    return cfg.tf - frac * (cfg.tf - cfg.t0)


class _Sampler:
    """Uniform state sampler over the configured box (deterministic)."""

    def __init__(self, cfg: TrainConfig, n_modes_used: int, seed: int):
        self.cfg = cfg
        self.kin = n_modes_used
        self.gen = torch.Generator().manual_seed(seed)

    def _box(self, n, lo, hi):
        u = torch.rand((n, 1), generator=self.gen, dtype=torch.float64)
        return lo + (hi - lo) * u

    def states(self, n: int):
        c = self.cfg
        x1 = self._box(n, *c.x1_range)
        x2 = self._box(n, *c.x2_range)
        zs = [self._box(n, *c.z_range) for _ in range(self.kin)]
        return torch.cat([x1, x2] + zs, dim=1)

    def times(self, n: int, t_lo: float):
        c = self.cfg
        u = torch.rand((n, 1), generator=self.gen, dtype=torch.float64)
        return t_lo + (c.tf - t_lo) * u


class HJIProblem:
    """Torch-side constants of the game, precomputed for the used modes."""

    def __init__(self, basis: BasisSet, phi_k: NDArray, params: CostParams,
                 bounds: ControlBounds):
        if basis.space.dim != 1:
            raise ValueError("training requires a 1-D exploration space")
        self.basis = basis
        self.params = params
        self.bounds = bounds
        self.phi_k = phi_k
        used = np.flatnonzero(np.any(basis.modes != 0, axis=1))
        self.modes_in_use = used
        L = basis.space.lengths[0]
        self.L = L
        self.ang = torch.from_numpy(basis.modes[used, 0] * np.pi / L)
        self.hk = torch.from_numpy(basis.normalizers[used])
        self.lam = torch.from_numpy(basis.weights[used])
        self.phi_used = torch.from_numpy(phi_k[used])

    def terminal_target(self, states: torch.Tensor) -> torch.Tensor:
        """Horizon-normalized terminal ergodic value of sampled (x, z)."""
        z = states[:, 2:]
        horizon = self.params.horizon_duration
        return (self.lam * z * z).sum(dim=1, keepdim=True) / horizon

    def hamiltonian_star(self, states: torch.Tensor, grads: torch.Tensor) -> torch.Tensor:
        """Closed-form minimax Hamiltonian for a batch of (state, dV) rows."""
        p = self.params
        b = self.bounds
        x1, x2, z = states[:, 0], states[:, 1], states[:, 2:]
        gx1, gx2, gz = grads[:, 0], grads[:, 1], grads[:, 2:]
        u = torch.clamp(-gx2 / (2.0 * p.R), -b.u_max, b.u_max)
        d = b.d_max * torch.where(gx2 >= 0.0, 1.0, -1.0)
        x1c = torch.clamp(x1, 0.0, self.L)
        F = torch.cos(x1c[:, None] * self.ang) / self.hk
        zdot = F - self.phi_used
        over = torch.clamp(x1 - (self.L - p.barrier_margin), min=0.0)
        under = torch.clamp(p.barrier_margin - x1, min=0.0)
        barr = p.barrier_weight * (over * over + under * under)
        run = p.q * (self.lam * z * z).sum(dim=1) + p.R * u * u + barr
        return run + gx1 * x2 + gx2 * (u + d) + (gz * zdot).sum(dim=1)


def _forward_with_grads(net: ValueNet, states: torch.Tensor, times: torch.Tensor,
                        create_graph: bool):
    inp = torch.cat([states, times], dim=1)
    if not inp.requires_grad:
        inp = inp.requires_grad_(True)
    V = net.core(inp)
    (g,) = torch.autograd.grad(
        V.sum(), inp, create_graph=create_graph
    )
    return V, g


def loss_terminal(net: ValueNet, problem: HJIProblem, states: torch.Tensor) -> torch.Tensor:
    """Mean absolute deviation from the terminal condition at t = tf."""
    if states.shape[0] == 0:
        raise ValueError("empty terminal sample set")
    times = torch.full((states.shape[0], 1), float(net.meta["tf"]),
                       dtype=torch.float64)
    V = net.core(torch.cat([states, times], dim=1))
    return (V - problem.terminal_target(states)).abs().mean()


def loss_differential(net: ValueNet, problem: HJIProblem, states: torch.Tensor,
                      times: torch.Tensor, create_graph: bool = True) -> torch.Tensor:
    """Mean absolute HJI residual ``|dV/dt + H*|`` over interior samples."""
    if states.shape[0] == 0:
        raise ValueError("empty interior sample set")
    V, g = _forward_with_grads(net, states, times, create_graph)
    gt = g[:, -1]
    H = problem.hamiltonian_star(states, g[:, :-1])
    return (gt + H).abs().mean()


def loss_total(net: ValueNet, problem: HJIProblem, interior_states, interior_times,
               terminal_states, lam_weight: float):
    """``(l, l_B, l_D)`` with ``l = l_B + lambda * l_D``."""
    lB = loss_terminal(net, problem, terminal_states)
    lD = loss_differential(net, problem, interior_states, interior_times)
    return lB + lam_weight * lD, lB, lD


@dataclass
class TrainResult:
    net: ValueNet
    history: list[dict] = field(default_factory=list)

    def write_history(self, path: str | Path):
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(
                f, fieldnames=["iteration", "loss", "loss_B", "loss_D", "t_lo"]
            )
            w.writeheader()
            for row in self.history:
                w.writerow(row)


def train(
    cfg: TrainConfig,
    basis: BasisSet,
    phi_k: NDArray,
    params: CostParams,
    bounds: ControlBounds,
    distribution_spec: dict,
) -> TrainResult:
    """Curriculum training of the value net for one problem setup.

    Deterministic given ``cfg.seed``.  Aborts with diagnostics if the loss
    goes non-finite.  The returned history carries one row per log interval
    with the three loss components and the current window edge.
    """
    if abs(params.horizon_duration - (cfg.tf - cfg.t0)) > 1e-12:
        raise ValueError(
            "cost horizon_duration must equal the trained time span tf - t0"
        )
    problem = HJIProblem(basis, phi_k, params, bounds)
    kin = len(problem.modes_in_use)
    lo = [cfg.x1_range[0], cfg.x2_range[0]] + [cfg.z_range[0]] * kin + [cfg.t0]
    hi = [cfg.x1_range[1], cfg.x2_range[1]] + [cfg.z_range[1]] * kin + [cfg.tf]
    meta = build_metadata(
        modes_per_axis=basis.modes_per_axis,
        space_lengths=basis.space.lengths,
        modes_in_use=[int(i) for i in problem.modes_in_use],
        u_max=bounds.u_max,
        d_max=bounds.d_max,
        q=params.q,
        R=params.R,
        barrier_weight=params.barrier_weight,
        barrier_margin=params.barrier_margin,
        t0=cfg.t0,
        tf=cfg.tf,
        hidden_layers=list(cfg.hidden_layers),
        omega=cfg.omega,
        init_seed=cfg.seed,
        input_lo=lo,
        input_hi=hi,
        distribution=distribution_spec,
        extra={"train_config": asdict(cfg)},
    )
    torch.manual_seed(cfg.seed)
    net = make_net(meta)
    sampler = _Sampler(cfg, kin, cfg.seed + 1)
    opt = torch.optim.Adam(net.core.parameters(), lr=cfg.learning_rate)
    pre = int(cfg.curriculum_fraction * cfg.iterations)

    history: list[dict] = []
    for i in range(cfg.iterations):
        t_lo = earliest_time(cfg, i)
        term_states = sampler.states(cfg.batch_terminal)
        lB = loss_terminal(net, problem, term_states)
        if i < pre:
            loss = lB
            lD = None
        else:
            int_states = sampler.states(cfg.batch_interior)
            int_times = sampler.times(cfg.batch_interior, t_lo)
            lD = loss_differential(net, problem, int_states, int_times)
            loss = lB + cfg.lam_weight * lD
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"training diverged at iteration {i}: "
                f"loss_B={float(lB.detach()):.3g}, "
                f"loss_D={float(lD.detach()) if lD is not None else float('nan'):.3g}"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()

        if i % cfg.log_every == 0 or i == cfg.iterations - 1:
            if lD is None:
                probe_states = sampler.states(256)
                probe_times = sampler.times(256, t_lo)
                lD_val = float(
                    loss_differential(net, problem, probe_states, probe_times,
                                      create_graph=False).detach()
                )
            else:
                lD_val = float(lD.detach())
            lB_val = float(lB.detach())
            history.append(
                {
                    "iteration": i,
                    "loss": lB_val + cfg.lam_weight * lD_val,
                    "loss_B": lB_val,
                    "loss_D": lD_val,
                    "t_lo": t_lo,
                }
            )
    return TrainResult(net=net, history=history)

"""Experiment harness: configs, adversaries, closed-loop rollouts, comparisons.

A single canonical-JSON config describes the whole experiment (space, basis
size, target density, bounds, cost, planner, trial grid).  Rollouts step the
true plant with ``euler_step`` while the controller re-plans each cycle and
the adversary answers the applied control; ``compare_experiment`` sweeps the
controller x adversary grid over paired seeds and writes one CSV whose first
line embeds the effective config, making reruns byte-identical.

The descent controllers are run through the batched planner (one vectorized
solve covers all seeds of a cell); the batch path reproduces the scalar
``rollout`` bit for bit because every kernel op is elementwise or a per-row
cumulative sum.  The net-based policy runs per seed.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .controllers import (
    MPCPolicy,
    RangePolicy,
    ReMPCConfig,
    ReMPCPolicy,
    plan_update_batch,
    sign_plus,
    worst_case_disturbance,
)
from .ergodic import (
    BasisSet,
    ExplorationSpace,
    InfoDistribution,
    build_basis,
    ergodic_metric_from_aug,
    info_coeffs,
)
from .objective import CostBreakdown, CostParams, running_cost, trajectory_cost
from .systems import ControlBounds, FullState, PlantState, euler_step

logger = logging.getLogger(__name__)

CONTROLLER_KINDS = ("mpc", "rempc", "range")
ADVERSARY_KINDS = ("zero", "uniform", "gaussian", "opposing", "range-worst")

# Substream codes: one fixed integer per random purpose, combined with the
# trial seed so streams are paired across controllers by construction.
_STREAM_INIT = 1000
_STREAM_ADVERSARY = {"uniform": 1, "gaussian": 2}


def canonical_json(obj) -> str:
    """Key-sorted, whitespace-free JSON; the determinism currency."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


_DEFAULTS: dict = {
    "space": {"lengths": [1.0]},
    "modes_per_axis": 6,
    "distribution": {"kind": "uniform", "components": []},
    "bounds": {"u_max": 5.0, "d_max": 2.0},
    "cost": {
        "q": 1.0,
        "R": 0.05,
        "barrier_weight": 100.0,
        "barrier_margin": 0.0,
        "horizon_duration": 1.0,
    },
    "planner": {
        "plan_steps": 100,
        "plan_dt": 0.01,
        "iterations": 30,
        "step_u": 0.5,
        "step_d": 0.5,
    },
    "trial": {
        "duration": 20.0,
        "dt": 0.01,
        "seeds": [0, 1],
        "x1_range": [0.1, 0.9],
        "x2_range": [-0.5, 0.5],
    },
    "controllers": ["mpc", "rempc"],
    "adversaries": ["zero"],
    "range_query_time": 0.02,
    "train": {
        "iterations": 30000,
        "batch_interior": 1024,
        "batch_terminal": 256,
        "lam_weight": 1.0,
        "learning_rate": 1e-4,
        "curriculum_fraction": 0.2,
        "expansion_fraction": 0.5,
        "seed": 0,
        "hidden_layers": [128, 128, 128],
        "omega": 30.0,
        "x1_range": [-0.1, 1.1],
        "x2_range": [-2.0, 2.0],
        "z_range": [-0.5, 0.5],
        "t0": 0.0,
        "tf": 1.0,
        "log_every": 250,
        "terminal_mae_frac_max": 0.02,
        "residual_improvement_min": 10.0,
        "residual_abs_max": 1.0,
        "rollout_ratio_max": 0.5,
    },
    "levelset": {"eps": 0.5, "n_grid": 101},
}


def _merge(defaults, override):
    if isinstance(defaults, dict):
        if not isinstance(override, dict):
            raise ValueError(f"expected object, got {type(override).__name__}")
        out = {}
        for k in defaults:
            out[k] = _merge(defaults[k], override[k]) if k in override else copy.deepcopy(defaults[k])
        extra = set(override) - set(defaults)
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return out
    return copy.deepcopy(override)


class ExperimentConfig:
    """Validated experiment description (file values merged over defaults)."""

    def __init__(self, data: dict | None = None):
        self.data = _merge(_DEFAULTS, data or {})
        self._validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as f:
            return cls(json.load(f))

    def _validate(self):
        d = self.data
        if not d["trial"]["seeds"]:
            raise ValueError("trial.seeds must be nonempty")
        n = d["trial"]["duration"] / d["trial"]["dt"]
        if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)):
            raise ValueError(
                f"trial duration {d['trial']['duration']} is not a multiple "
                f"of dt {d['trial']['dt']}"
            )
        for c in d["controllers"]:
            if c not in CONTROLLER_KINDS:
                raise ValueError(f"unknown controller {c!r}; choose from {CONTROLLER_KINDS}")
        for a in d["adversaries"]:
            if a not in ADVERSARY_KINDS:
                raise ValueError(f"unknown adversary {a!r}; choose from {ADVERSARY_KINDS}")

    # --- typed accessors -------------------------------------------------
    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.data["trial"]["seeds"]]

    @property
    def duration(self) -> float:
        return float(self.data["trial"]["duration"])

    @property
    def dt(self) -> float:
        return float(self.data["trial"]["dt"])

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def controllers(self) -> list[str]:
        return list(self.data["controllers"])

    @property
    def adversaries(self) -> list[str]:
        return list(self.data["adversaries"])

    @property
    def query_time(self) -> float:
        return float(self.data["range_query_time"])

    def canonical(self) -> str:
        return canonical_json(self.data)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


@dataclass
class Problem:
    """Constructed objects shared by every rollout of one experiment."""

    cfg: ExperimentConfig
    space: ExplorationSpace
    basis: BasisSet
    dist: InfoDistribution
    phi_k: NDArray
    params: CostParams
    bounds: ControlBounds
    plan_cfg: ReMPCConfig


def build_problem(cfg: ExperimentConfig) -> Problem:
    d = cfg.data
    space = ExplorationSpace(lengths=tuple(float(L) for L in d["space"]["lengths"]))
    basis = build_basis(space, modes_per_axis=int(d["modes_per_axis"]))
    comps = tuple(
        (tuple(float(x) for x in mean), float(std), float(w))
        for mean, std, w in d["distribution"]["components"]
    )
    dist = InfoDistribution(space, d["distribution"]["kind"], comps)
    phi_k = info_coeffs(basis, dist)
    c = d["cost"]
    params = CostParams(
        q=float(c["q"]),
        R=float(c["R"]),
        barrier_weight=float(c["barrier_weight"]),
        barrier_margin=float(c["barrier_margin"]),
        horizon_duration=float(c["horizon_duration"]),
    )
    b = d["bounds"]
    bounds = ControlBounds(u_max=float(b["u_max"]), d_max=float(b["d_max"]))
    p = d["planner"]
    plan_cfg = ReMPCConfig(
        horizon_steps=int(p["plan_steps"]),
        dt=float(p["plan_dt"]),
        iters=int(p["iterations"]),
        step_u=float(p["step_u"]),
        step_d=float(p["step_d"]),
    )
    return Problem(cfg, space, basis, dist, phi_k, params, bounds, plan_cfg)


def initial_state(cfg: ExperimentConfig, seed: int, basis: BasisSet) -> FullState:
    """Paired initial condition: keyed by seed only, never by controller."""
    rng = np.random.default_rng([seed, _STREAM_INIT])
    t = cfg.data["trial"]
    x1 = rng.uniform(*t["x1_range"])
    x2 = rng.uniform(*t["x2_range"])
    return FullState(x=PlantState(x1, x2), z=np.zeros(basis.num_modes), t=0.0)


# --- adversaries ---------------------------------------------------------


class Adversary:
    """Per-step disturbance source; sees the applied control and the state."""

    kind = "zero"

    def respond(self, step: int, u: float, state: FullState | None = None) -> float:
        return 0.0


class _SequenceAdversary(Adversary):
    def __init__(self, kind: str, seq: NDArray):
        self.kind = kind
        self.seq = seq

    def respond(self, step, u, state=None):
        return float(self.seq[step])


class _OpposingAdversary(Adversary):
    kind = "opposing"

    def __init__(self, d_max: float):
        self.d_max = d_max

    def respond(self, step, u, state=None):
        return float(worst_case_disturbance(u, self.d_max))


class _RangeWorstAdversary(Adversary):
    """Worst-case response read from a trained value net's costate."""

    kind = "range-worst"

    def __init__(self, net, d_max: float, query_time: float):
        self.net = net
        self.d_max = d_max
        self.query_time = query_time

    def respond(self, step, u, state=None):
        if state is None:
            raise ValueError("range-worst adversary requires the full state")
        _, gx, _, _ = self.net.grads_np(
            np.array([[state.x.x1, state.x.x2]]),
            state.z[None, self.net.mode_mask],
            np.array([self.query_time]),
        )
        return float(self.d_max * sign_plus(gx[0, 1]))


def make_adversary(
    kind: str,
    bounds: ControlBounds,
    seed: int,
    n_steps: int,
    net=None,
    query_time: float = 0.02,
) -> Adversary:
    """Build one trial's adversary; random kinds pre-draw their sequence
    from the (seed, kind) substream so pairing across controllers is exact."""
    d = bounds.d_max
    if kind == "zero":
        return Adversary()
    if kind == "uniform":
        rng = np.random.default_rng([seed, _STREAM_ADVERSARY[kind]])
        return _SequenceAdversary(kind, rng.uniform(-d, d, n_steps))
    if kind == "gaussian":
        rng = np.random.default_rng([seed, _STREAM_ADVERSARY[kind]])
        return _SequenceAdversary(kind, np.clip(rng.normal(0.0, d / 2.0, n_steps), -d, d))
    if kind == "opposing":
        return _OpposingAdversary(d)
    if kind == "range-worst":
        if net is None:
            raise ValueError("range-worst adversary requires a trained net")
        return _RangeWorstAdversary(net, d, query_time)
    raise ValueError(f"unknown adversary kind {kind!r}")


def make_policy(kind: str, problem: Problem, net=None):
    if kind == "mpc":
        return MPCPolicy(problem.plan_cfg, problem.params, problem.basis,
                         problem.phi_k, problem.bounds)
    if kind == "rempc":
        return ReMPCPolicy(problem.plan_cfg, problem.params, problem.basis,
                           problem.phi_k, problem.bounds)
    if kind == "range":
        if net is None:
            raise ValueError("range controller requires a trained net")
        return RangePolicy(net, problem.params, problem.bounds,
                           query_time=problem.cfg.query_time)
    raise ValueError(f"unknown controller kind {kind!r}")


# --- rollouts ------------------------------------------------------------


@dataclass
class RolloutRecord:
    controller: str
    adversary: str
    seed: int
    dt: float
    duration: float
    times: NDArray
    x1: NDArray
    x2: NDArray
    u: NDArray
    d: NDArray
    running: NDArray
    z_terminal: NDArray
    metric: float
    breakdown: CostBreakdown
    config_fingerprint: str

    def summary(self) -> dict:
        b = self.breakdown
        return {
            "controller": self.controller,
            "adversary": self.adversary,
            "seed": self.seed,
            "metric": self.metric,
            "cost_total": b.total,
            "running_ergodic": b.running_ergodic,
            "control_effort": b.control_effort,
            "barrier": b.barrier,
            "terminal_ergodic": b.terminal_ergodic,
            "config_fingerprint": self.config_fingerprint,
        }

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as f:
            f.write("t,x1,x2,u,d,running_cost\n")
            T = len(self.u)
            for i in range(T):
                f.write(
                    f"{float(self.times[i])!r},{float(self.x1[i])!r},"
                    f"{float(self.x2[i])!r},{float(self.u[i])!r},"
                    f"{float(self.d[i])!r},{float(self.running[i])!r}\n"
                )
            # final state row: no control acted from it
            f.write(
                f"{float(self.times[T])!r},{float(self.x1[T])!r},"
                f"{float(self.x2[T])!r},,,\n"
            )


def rollout(
    policy,
    adversary: Adversary,
    s0: FullState,
    problem: Problem,
    duration: float,
    dt: float,
    seed: int = 0,
    controller_kind: str = "",
) -> RolloutRecord:
    """Close the loop for one trial: u first, then d, then the Euler step."""
    n = int(round(duration / dt))
    if abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"duration {duration} is not a multiple of dt {dt}")
    basis, phi_k, params, bounds = (
        problem.basis, problem.phi_k, problem.params, problem.bounds,
    )
    T1 = n + 1
    times = np.empty(T1)
    x1 = np.empty(T1)
    x2 = np.empty(T1)
    us = np.empty(n)
    ds = np.empty(n)
    run = np.empty(n)
    z_steps = np.empty((n, basis.num_modes))
    s = s0
    for i in range(n):
        times[i], x1[i], x2[i] = s.t, s.x.x1, s.x.x2
        z_steps[i] = s.z
        u = float(policy.evaluate(s))
        d = float(adversary.respond(i, u, s))
        us[i], ds[i] = u, d
        run[i] = float(running_cost(s.x.x1, s.z, u, basis, params))
        try:
            s = euler_step(s, u, d, dt, basis, phi_k, bounds)
        except ValueError as e:
            raise RuntimeError(
                f"rollout aborted at step {i} (t={s.t:.4f}): state went "
                f"non-finite (x1={s.x.x1}, x2={s.x.x2}, u={u}, d={d}): {e}"
            ) from e
    times[n], x1[n], x2[n] = s.t, s.x.x1, s.x.x2
    metric = float(ergodic_metric_from_aug(s.z, duration, basis))
    breakdown = trajectory_cost(
        x1[:-1], z_steps, us, s.z, dt, basis, params,
        normalization=duration / params.horizon_duration,
    )
    return RolloutRecord(
        controller=controller_kind or type(policy).__name__,
        adversary=adversary.kind,
        seed=seed,
        dt=dt,
        duration=duration,
        times=times,
        x1=x1,
        x2=x2,
        u=us,
        d=ds,
        running=run,
        z_terminal=s.z.copy(),
        metric=metric,
        breakdown=breakdown,
        config_fingerprint=problem.cfg.fingerprint(),
    )


def run_cell_batch(
    problem: Problem,
    controller: str,
    adversary_kind: str,
    seeds: list[int],
    net=None,
) -> list[RolloutRecord]:
    """All seeds of one (controller, adversary) cell.

    mpc/rempc plan for every seed in a single vectorized solve per cycle;
    the range policy falls back to per-seed scalar rollouts (its net query
    is already the dominant cost and batching torch would not preserve
    bit-identity with the scalar path).
    """
    cfg = problem.cfg
    if controller == "range":
        out = []
        for seed in seeds:
            pol = make_policy(controller, problem, net)
            adv = make_adversary(adversary_kind, problem.bounds, seed,
                                 cfg.n_steps, net, cfg.query_time)
            s0 = initial_state(cfg, seed, problem.basis)
            out.append(rollout(pol, adv, s0, problem, cfg.duration, cfg.dt,
                               seed=seed, controller_kind=controller))
        return out

    if controller not in ("mpc", "rempc"):
        raise ValueError(f"unknown controller kind {controller!r}")
    robust = controller == "rempc"
    basis, phi_k, params, bounds = (
        problem.basis, problem.phi_k, problem.params, problem.bounds,
    )
    B = len(seeds)
    n = cfg.n_steps
    dt = cfg.dt
    K = basis.num_modes
    advs = [
        make_adversary(adversary_kind, bounds, seed, n, net, cfg.query_time)
        for seed in seeds
    ]
    s0s = [initial_state(cfg, seed, basis) for seed in seeds]
    x1v = np.array([s.x.x1 for s in s0s])
    x2v = np.array([s.x.x2 for s in s0s])
    zv = np.zeros((B, K))
    U = np.zeros((B, problem.plan_cfg.horizon_steps))
    D = np.zeros((B, problem.plan_cfg.horizon_steps))

    times = np.empty(n + 1)
    X1 = np.empty((B, n + 1))
    X2 = np.empty((B, n + 1))
    Us = np.empty((B, n))
    Ds = np.empty((B, n))
    Run = np.empty((B, n))
    Zs = np.empty((B, n, K))
    t = 0.0
    for i in range(n):
        times[i] = t
        X1[:, i], X2[:, i] = x1v, x2v
        Zs[:, i] = zv
        U, D = plan_update_batch(
            x1v, x2v, zv, U, D, problem.plan_cfg, params, basis, phi_k,
            bounds, robust,
        )
        u = U[:, 0].copy()
        d = np.empty(B)
        for b, adv in enumerate(advs):
            state = FullState(x=PlantState(x1v[b], x2v[b]), z=zv[b], t=t)
            d[b] = adv.respond(i, float(u[b]), state)
        Us[:, i], Ds[:, i] = u, d
        Run[:, i] = running_cost(x1v, zv, u, basis, params)
        if not (np.all(np.isfinite(x1v)) and np.all(np.isfinite(x2v))):
            bad = int(np.flatnonzero(~np.isfinite(x1v + x2v))[0])
            raise RuntimeError(
                f"batch rollout aborted at step {i}: seed {seeds[bad]} went "
                f"non-finite"
            )
        # mirror euler_step exactly: clamp inputs, z from pre-step position
        u_c = np.clip(u, -bounds.u_max, bounds.u_max)
        d_c = np.clip(d, -bounds.d_max, bounds.d_max)
        zv = zv + (basis.eval(x1v[:, None]) - phi_k) * dt
        x1v, x2v = x1v + x2v * dt, x2v + (u_c + d_c) * dt
        t += dt
    times[n] = t
    X1[:, n], X2[:, n] = x1v, x2v

    out = []
    fp = cfg.fingerprint()
    for b, seed in enumerate(seeds):
        metric = float(ergodic_metric_from_aug(zv[b], cfg.duration, basis))
        breakdown = trajectory_cost(
            X1[b, :-1], Zs[b], Us[b], zv[b], dt, basis, params,
            normalization=cfg.duration / params.horizon_duration,
        )
        out.append(
            RolloutRecord(
                controller=controller,
                adversary=adversary_kind,
                seed=seed,
                dt=dt,
                duration=cfg.duration,
                times=times.copy(),
                x1=X1[b].copy(),
                x2=X2[b].copy(),
                u=Us[b].copy(),
                d=Ds[b].copy(),
                running=Run[b].copy(),
                z_terminal=zv[b].copy(),
                metric=metric,
                breakdown=breakdown,
                config_fingerprint=fp,
            )
        )
    return out


# --- the comparison table ------------------------------------------------

_CSV_COLUMNS = (
    "controller", "adversary", "record", "seed", "metric", "cost_total",
    "running_ergodic", "control_effort", "barrier", "terminal_ergodic",
)
_VALUE_COLUMNS = _CSV_COLUMNS[4:]


def _fmt(v) -> str:
    return repr(float(v))


def compare_experiment(cfg: ExperimentConfig, out_path: str | Path, net=None) -> Path:
    """Sweep controllers x adversaries over the paired seeds; write the CSV.

    A failed cell is recorded as a single ``record=error`` row and the sweep
    continues.  Reruns with an identical config produce identical bytes.
    """
    problem = build_problem(cfg)
    out_path = Path(out_path)
    lines = [f"# config: {cfg.canonical()}", ",".join(_CSV_COLUMNS)]
    for controller in cfg.controllers:
        for adv_kind in cfg.adversaries:
            try:
                recs = run_cell_batch(problem, controller, adv_kind,
                                      cfg.seeds, net)
            except Exception:
                logger.exception("cell (%s, %s) failed", controller, adv_kind)
                lines.append(
                    ",".join([controller, adv_kind, "error", ""]
                             + ["nan"] * len(_VALUE_COLUMNS))
                )
                continue
            table = [r.summary() for r in recs]
            for row in table:
                lines.append(
                    ",".join(
                        [controller, adv_kind, "trial", str(row["seed"])]
                        + [_fmt(row[c]) for c in _VALUE_COLUMNS]
                    )
                )
            cols = {c: np.array([row[c] for row in table]) for c in _VALUE_COLUMNS}
            for agg_name, agg in (("min", np.min), ("median", np.median),
                                  ("max", np.max)):
                lines.append(
                    ",".join(
                        [controller, adv_kind, agg_name, ""]
                        + [_fmt(agg(cols[c])) for c in _VALUE_COLUMNS]
                    )
                )
    with open(out_path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
    return out_path


# --- synthesis / inspection ----------------------------------------------


def reconstruct_density(coeffs: NDArray, basis: BasisSet, n_grid: int):
    """Fourier synthesis ``sum_k c_k F_k(m)`` on a uniform grid over M.

    Returns ``(axes, values)`` where ``axes`` is one coordinate vector per
    dimension and ``values`` has shape ``(n_grid,) * dim``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.num_modes,):
        raise ValueError(
            f"coefficient vector length {coeffs.shape} does not match basis "
            f"({basis.num_modes} modes)"
        )
    axes = [np.linspace(0.0, L, n_grid) for L in basis.space.lengths]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    values = basis.eval(pts) @ coeffs
    return axes, values.reshape((n_grid,) * basis.space.dim)


def levelset_slice(
    net,
    eps: float,
    z_fixed: NDArray,
    t_fixed: float,
    x1_grid: NDArray,
    x2_grid: NDArray,
):
    """Value slice over position/velocity at frozen (z, t).

    Returns ``(V, inside)`` with shape ``(len(x2_grid), len(x1_grid))``;
    ``inside`` is the sublevel set ``V <= eps``.
    """
    X1, X2 = np.meshgrid(x1_grid, x2_grid)
    npts = X1.size
    x = np.column_stack([X1.ravel(), X2.ravel()])
    z = np.tile(np.asarray(z_fixed, dtype=float)[None, :], (npts, 1))
    t = np.full(npts, t_fixed)
    V = net.eval_np(x, z, t).reshape(X1.shape)
    return V, V <= eps


def write_levelset_csv(
    path: str | Path,
    x1_grid: NDArray,
    x2_grid: NDArray,
    V: NDArray,
    inside: NDArray,
    eps: float,
    t_fixed: float,
):
    with open(path, "w", newline="") as f:
        f.write(f"# levelset: eps={eps!r} t={t_fixed!r}\n")
        f.write("x1,x2,value,inside\n")
        for j, xx2 in enumerate(x2_grid):
            for i, xx1 in enumerate(x1_grid):
                f.write(
                    f"{float(xx1)!r},{float(xx2)!r},{float(V[j, i])!r},"
                    f"{int(inside[j, i])}\n"
                )
    return Path(path)

"""Command-line entry points.

Subcommands: ``train`` (fit the value net, write checkpoint + loss history),
``rollout`` (one closed-loop trial), ``compare`` (controller x adversary
sweep), ``levelset`` (value-function sublevel slice), ``check`` (invariant
suite; nonzero exit on any failure).  All take ``--config`` (canonical JSON,
defaults apply for missing keys) and write into ``--out``.

Torch is imported only on the paths that need a net, so ``compare`` and
``check`` without ``--net`` stay numpy-only.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .ergodic import (
    ExplorationSpace,
    build_basis,
    ergodic_metric_from_aug,
    ergodic_metric_spectral,
    info_coeffs,
    traj_coeffs,
    InfoDistribution,
)
from .harness import (
    ExperimentConfig,
    build_problem,
    compare_experiment,
    initial_state,
    levelset_slice,
    make_adversary,
    make_policy,
    rollout,
    run_cell_batch,
    write_levelset_csv,
)
from .systems import FullState, PlantState, euler_step
from .controllers import (
    HorizonPlan,
    opt_control_from_costate,
    pred_rollout,
    pred_rollout_grad,
    sign_plus,
)


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return ExperimentConfig.from_file(args.config)
    return ExperimentConfig()


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_net(path: str, cfg: ExperimentConfig, problem):
    from .valuenet import load_checkpoint, verify_fingerprint

    net = load_checkpoint(path)
    tr = cfg.data["train"]
    expected = {
        "modes_per_axis": problem.basis.modes_per_axis,
        "space_lengths": list(problem.space.lengths),
        "u_max": problem.bounds.u_max,
        "d_max": problem.bounds.d_max,
        "q": problem.params.q,
        "R": problem.params.R,
        "barrier_weight": problem.params.barrier_weight,
        "barrier_margin": problem.params.barrier_margin,
        "t0": float(tr["t0"]),
        "tf": float(tr["tf"]),
    }
    verify_fingerprint(net, expected)
    return net


def _train_config(cfg: ExperimentConfig, seed_override: int | None):
    from .hji import TrainConfig

    d = dict(cfg.data["train"])
    if seed_override is not None:
        d["seed"] = seed_override
    for key in ("hidden_layers", "x1_range", "x2_range", "z_range"):
        d[key] = tuple(d[key])
    for key in ("iterations", "batch_interior", "batch_terminal", "seed", "log_every"):
        d[key] = int(d[key])
    return TrainConfig(**d)


def _cmd_train(args) -> int:
    from .hji import train
    from .valuenet import save_checkpoint

    cfg = _load_config(args)
    tc = _train_config(cfg, args.seed)
    problem = build_problem(cfg)
    result = train(tc, problem.basis, problem.phi_k, problem.params,
                   problem.bounds, cfg.data["distribution"])
    out = _out_dir(args)
    ck_path = out / "value_net.rgv"
    save_checkpoint(result.net, ck_path)
    result.write_history(out / "loss_history.csv")
    last = result.history[-1]
    print(
        f"trained {tc.iterations} iterations (seed {tc.seed}): "
        f"loss={last['loss']:.4g} loss_B={last['loss_B']:.4g} "
        f"loss_D={last['loss_D']:.4g}"
    )
    print(f"checkpoint: {ck_path}")
    print(f"loss history: {out / 'loss_history.csv'}")
    return 0


def _cmd_rollout(args) -> int:
    cfg = _load_config(args)
    problem = build_problem(cfg)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    controller = cfg.controllers[0]
    adversary = cfg.adversaries[0]
    needs_net = controller == "range" or adversary == "range-worst"
    net = None
    if needs_net:
        if not args.net:
            print("error: --net is required for the range controller or "
                  "range-worst adversary", file=sys.stderr)
            return 2
        net = _load_net(args.net, cfg, problem)
    pol = make_policy(controller, problem, net)
    adv = make_adversary(adversary, problem.bounds, seed, cfg.n_steps, net,
                         cfg.query_time)
    s0 = initial_state(cfg, seed, problem.basis)
    rec = rollout(pol, adv, s0, problem, cfg.duration, cfg.dt, seed=seed,
                  controller_kind=controller)
    out = _out_dir(args)
    rec.write_csv(out / "rollout.csv")
    summary = rec.summary()
    summary["duration"] = rec.duration
    summary["dt"] = rec.dt
    with open(out / "rollout_summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"{controller} vs {adversary} seed {seed}: "
          f"metric={rec.metric:.6g} cost={rec.breakdown.total:.6g}")
    print(f"trace: {out / 'rollout.csv'}")
    print(f"summary: {out / 'rollout_summary.json'}")
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    needs_net = "range" in cfg.controllers or "range-worst" in cfg.adversaries
    net = None
    if needs_net:
        if not args.net:
            print("error: --net is required when the grid includes the range "
                  "controller or range-worst adversary", file=sys.stderr)
            return 2
        net = _load_net(args.net, cfg, build_problem(cfg))
    out = _out_dir(args)
    path = compare_experiment(cfg, out / "compare.csv", net)
    n_cells = len(cfg.controllers) * len(cfg.adversaries)
    print(f"{n_cells} cells x {len(cfg.seeds)} seeds -> {path}")
    return 0


def _cmd_levelset(args) -> int:
    cfg = _load_config(args)
    problem = build_problem(cfg)
    if not args.net:
        print("error: levelset requires --net", file=sys.stderr)
        return 2
    net = _load_net(args.net, cfg, problem)
    ls = cfg.data["levelset"]
    eps = float(ls["eps"])
    n = int(ls["n_grid"])
    tr = cfg.data["train"]
    x1_grid = np.linspace(0.0, problem.space.lengths[0], n)
    x2_grid = np.linspace(tr["x2_range"][0], tr["x2_range"][1], n)
    kin = net.input_dim - 3
    V, inside = levelset_slice(net, eps, np.zeros(kin), float(tr["t0"]),
                               x1_grid, x2_grid)
    out = _out_dir(args)
    path = write_levelset_csv(out / "levelset.csv", x1_grid, x2_grid, V,
                              inside, eps, float(tr["t0"]))
    print(f"levelset eps={eps}: {int(inside.sum())}/{inside.size} grid points "
          f"inside -> {path}")
    return 0


# --- invariant suite ------------------------------------------------------


def _check_basis_orthonormality(problem):
    basis = problem.basis
    from .ergodic import _gauss_legendre_nodes

    nodes, w = _gauss_legendre_nodes(0.0, basis.space.lengths[0])
    F = basis.eval(nodes[:, None])
    gram = (F * w[:, None]).T @ F
    err = float(np.max(np.abs(gram - np.eye(basis.num_modes))))
    return err <= 1e-10, f"max |gram - I| = {err:.2e}"


def _check_density_mass(problem):
    from .ergodic import _gauss_legendre_nodes

    nodes, w = _gauss_legendre_nodes(0.0, problem.space.lengths[0])
    mass = float(np.sum(w * problem.dist.pdf(nodes[:, None])))
    return abs(mass - 1.0) <= 1e-6, f"|mass - 1| = {abs(mass - 1.0):.2e}"


def _check_metric_identity(problem):
    basis, phi_k = problem.basis, problem.phi_k
    dt, n = 0.01, 2000
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng([seed, 77])
        pts = rng.uniform(0.0, problem.space.lengths[0], (n + 1, 1))
        times = np.arange(n + 1) * dt
        ck = traj_coeffs(basis, times, pts)
        e_spec = ergodic_metric_spectral(ck, phi_k, basis)
        z = np.sum(basis.eval(pts[:-1]) - phi_k, axis=0) * dt
        e_aug = ergodic_metric_from_aug(z, n * dt, basis)
        worst = max(worst, abs(e_spec - e_aug) / (1.0 + e_spec))
    return worst <= 1e-9, f"max rel gap = {worst:.2e}"


def _check_stationary_oracle(_problem):
    space = ExplorationSpace(lengths=(1.0,))
    basis = build_basis(space, modes_per_axis=6)
    phi = info_coeffs(basis, InfoDistribution(space, "uniform"))
    ck = basis.eval(np.array([0.5]))
    m = float(ergodic_metric_spectral(ck, phi, basis))
    target = 0.4 + 2.0 / 17.0
    return abs(m - target) <= 1e-6, f"|metric - (0.4 + 2/17)| = {abs(m - target):.2e}"


def _check_adjoint_fd(problem):
    basis, phi_k, params, bounds = (problem.basis, problem.phi_k,
                                    problem.params, problem.bounds)
    dt = 0.01
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng([seed, 78])
        s = FullState(x=PlantState(rng.uniform(0.2, 0.8), rng.uniform(-1, 1)),
                      z=rng.normal(0, 0.3, basis.num_modes), t=0.0)
        plan = HorizonPlan(rng.uniform(-2, 2, 20), rng.uniform(-1, 1, 20))
        _, gU, gD = pred_rollout_grad(s, plan, params, basis, phi_k, bounds, dt=dt)
        eps = 1e-6
        for arr, grad in ((plan.controls, gU), (plan.disturbances, gD)):
            for idx in (0, 10, 17):
                orig = arr[idx]
                arr[idx] = orig + eps
                cp = pred_rollout(s, plan, params, basis, phi_k, bounds, dt=dt)
                arr[idx] = orig - eps
                cm = pred_rollout(s, plan, params, basis, phi_k, bounds, dt=dt)
                arr[idx] = orig
                fd = (cp - cm) / (2 * eps)
                worst = max(worst, abs(grad[idx] - fd) / (1.0 + abs(fd)))
    return worst <= 1e-4, f"max rel err = {worst:.2e}"


def _check_minimax_closed_form(problem):
    params, bounds = problem.params, problem.bounds
    u_grid = np.linspace(-bounds.u_max, bounds.u_max, 101)
    d_grid = np.linspace(-bounds.d_max, bounds.d_max, 101)
    cell_u = u_grid[1] - u_grid[0]
    cell_d = d_grid[1] - d_grid[0] if bounds.d_max > 0 else 0.0
    worst_u = worst_d = 0.0
    rng = np.random.default_rng(79)
    for _ in range(20):
        p = rng.normal(0, 2)
        # input-dependent part of the Hamiltonian: R u^2 + p (u + d)
        Hud = params.R * u_grid[:, None] ** 2 + p * (u_grid[:, None] + d_grid[None, :])
        iu = int(np.argmin(np.max(Hud, axis=1)))
        idd = int(np.argmax(Hud[iu]))
        u_star = float(opt_control_from_costate(p, params.R, bounds.u_max))
        d_star = float(bounds.d_max * sign_plus(p))
        worst_u = max(worst_u, abs(u_star - u_grid[iu]))
        worst_d = max(worst_d, abs(d_star - d_grid[idd]))
    ok = worst_u <= cell_u + 1e-12 and worst_d <= cell_d + 1e-12
    return ok, f"max |u* - grid| = {worst_u:.3f}, |d* - grid| = {worst_d:.3f}"


def _check_reduction(problem):
    cfg_data = json.loads(problem.cfg.canonical())
    cfg_data["bounds"]["d_max"] = 0.0
    cfg_data["trial"]["duration"] = 1.0
    cfg_data["trial"]["seeds"] = [0, 1]
    cfg0 = ExperimentConfig(cfg_data)
    prob0 = build_problem(cfg0)
    ra = run_cell_batch(prob0, "mpc", "zero", cfg0.seeds)
    rb = run_cell_batch(prob0, "rempc", "zero", cfg0.seeds)
    same = all(np.array_equal(a.u, b.u) for a, b in zip(ra, rb))
    return same, "mpc/rempc traces identical" if same else "traces differ"


def _check_z0_invariant(problem):
    basis, phi_k, bounds = problem.basis, problem.phi_k, problem.bounds
    rng = np.random.default_rng(81)
    s = FullState(x=PlantState(0.4, 0.1), z=np.zeros(basis.num_modes), t=0.0)
    for _ in range(200):
        u = rng.uniform(-bounds.u_max, bounds.u_max)
        s = euler_step(s, u, 0.0, 0.01, basis, phi_k, bounds)
    z0 = abs(float(s.z[0]))
    return z0 <= 1e-12, f"|z_0| = {z0:.2e} after 200 random steps"


def _check_net_gradients(problem, net):
    rng = np.random.default_rng(82)
    kin = net.input_dim - 3
    worst = 0.0
    for _ in range(3):
        x = rng.uniform(0.1, 0.9, (1, 2))
        z = rng.uniform(-0.5, 0.5, (1, kin))
        t = rng.uniform(0.1, 0.9, (1,))
        _, gx, gz, gt = net.grads_np(x, z, t)
        grads = np.concatenate([gx[0], gz[0], gt])
        eps = 1e-4
        for j in range(2 + kin + 1):
            def value(shift):
                xx, zz, tt = x.copy(), z.copy(), t.copy()
                if j < 2:
                    xx[0, j] += shift
                elif j < 2 + kin:
                    zz[0, j - 2] += shift
                else:
                    tt[0] += shift
                return float(net.eval_np(xx, zz, tt)[0])

            fd = (value(eps) - value(-eps)) / (2 * eps)
            worst = max(worst, abs(grads[j] - fd) / (1.0 + abs(fd)))
    return worst <= 1e-4, f"max rel err = {worst:.2e}"


def _check_levelset_nesting(problem, net):
    kin = net.input_dim - 3
    x1g = np.linspace(0.0, problem.space.lengths[0], 21)
    x2g = np.linspace(-1.0, 1.0, 21)
    V, _ = levelset_slice(net, 0.0, np.zeros(kin), 0.0, x1g, x2g)
    lo, hi = float(np.min(V)), float(np.max(V))
    e1, e2 = lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)
    _, in1 = levelset_slice(net, e1, np.zeros(kin), 0.0, x1g, x2g)
    _, in2 = levelset_slice(net, e2, np.zeros(kin), 0.0, x1g, x2g)
    nested = bool(np.all(in2 | ~in1))
    return nested, "sublevel sets nest" if nested else "nesting violated"


def _cmd_check(args) -> int:
    cfg = _load_config(args)
    problem = build_problem(cfg)
    checks = [
        ("basis-orthonormality", _check_basis_orthonormality),
        ("density-mass", _check_density_mass),
        ("metric-identity", _check_metric_identity),
        ("stationary-oracle", _check_stationary_oracle),
        ("adjoint-fd", _check_adjoint_fd),
        ("minimax-closed-form", _check_minimax_closed_form),
        ("controller-reduction", _check_reduction),
        ("z0-invariant", _check_z0_invariant),
    ]
    net = None
    if args.net:
        try:
            net = _load_net(args.net, cfg, problem)
        except (ValueError, OSError) as e:
            print(f"FAIL checkpoint-load: {e}")
            return 1
        checks += [
            ("net-gradient-fd", lambda p: _check_net_gradients(p, net)),
            ("levelset-nesting", lambda p: _check_levelset_nesting(p, net)),
        ]
    failures = 0
    for name, fn in checks:
        try:
            ok, detail = fn(problem)
        except Exception as e:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        status = "ok  " if ok else "FAIL"
        print(f"{status} {name}: {detail}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} of {len(checks)} checks failed")
        return 1
    print(f"all {len(checks)} checks passed")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="robergo",
        description="Robust ergodic exploration: train, simulate, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "train": _cmd_train,
        "rollout": _cmd_rollout,
        "compare": _cmd_compare,
        "levelset": _cmd_levelset,
        "check": _cmd_check,
    }
    helps = {
        "train": "fit the value net; write checkpoint and loss history",
        "rollout": "run one closed-loop trial; write trace CSV + summary JSON",
        "compare": "sweep controllers x adversaries; write aggregate CSV",
        "levelset": "slice the value net's sublevel set; write grid CSV",
        "check": "run the invariant suite; nonzero exit on failure",
    }
    for name in handlers:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="experiment config (canonical JSON)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: .)")
        p.add_argument("--net", help="value-net checkpoint path")
    args = parser.parse_args(argv)
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())

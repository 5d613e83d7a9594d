#!/usr/bin/env python3
"""Train the reduced-scale value net and evaluate the three quality gates.

Runs the full pipeline behind the `robergo train` command on the shipped
reduced configuration, then measures:

  1. terminal fit        mean |V(., tf) - target| vs the sampled target range
  2. PDE residual        mean |dV/dt + H*| on fresh samples, vs initialization
  3. closed-loop value   metric of a range-policy rollout under the
                         opposing adversary, vs the stationary baseline

Thresholds come from the config's train section.  Writes the checkpoint,
loss history, and a levelset slice into --out.

Usage:
    python scripts/train_and_evaluate.py [--config configs/reduced_n2.json]
                                         [--out results/reduced] [--seed N]
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "reduced_n2.json"))
    ap.add_argument("--out", default="results/reduced")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    # torch only below this line; keep the import cost off --help
    from robergo.cli import _train_config
    from robergo.ergodic import ergodic_metric_spectral, traj_coeffs
    from robergo.harness import (
        ExperimentConfig,
        build_problem,
        initial_state,
        make_adversary,
        make_policy,
        rollout,
    )
    from robergo.hji import (
        HJIProblem,
        _Sampler,
        loss_differential,
        loss_terminal,
        train,
    )
    from robergo.valuenet import make_net, save_checkpoint

    cfg = ExperimentConfig.from_file(args.config)
    tc = _train_config(cfg, args.seed)
    problem = build_problem(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    result = train(tc, problem.basis, problem.phi_k, problem.params,
                   problem.bounds, cfg.data["distribution"])
    print(f"trained {tc.iterations} iterations in {time.time() - t0:.0f} s")
    net = result.net
    save_checkpoint(net, out / "value_net.rgv")
    result.write_history(out / "loss_history.csv")

    hp = HJIProblem(problem.basis, problem.phi_k, problem.params,
                    problem.bounds)
    sampler = _Sampler(tc, len(net.meta["modes_in_use"]), seed=987654)
    n = 10_000

    states = sampler.states(n)
    mae = float(loss_terminal(net, hp, states).detach())
    target = hp.terminal_target(states)
    t_range = float(target.max() - target.min())
    ok1 = mae <= tc.terminal_mae_frac_max * t_range
    print(f"[1] terminal MAE {mae:.3g} = {mae / t_range:.2%} of range "
          f"{t_range:.3g} (cap {tc.terminal_mae_frac_max:.0%}): "
          f"{'ok' if ok1 else 'VIOLATED'}")

    def mean_residual(network):
        s = sampler.states(n)
        t = sampler.times(n, tc.t0)
        return float(loss_differential(network, hp, s, t,
                                       create_graph=False).detach())

    res = mean_residual(net)
    res0 = mean_residual(make_net(net.meta))
    ok2 = res0 >= tc.residual_improvement_min * res and res <= tc.residual_abs_max
    print(f"[2] residual {res:.3g} vs init {res0:.3g} "
          f"({res0 / res:.0f}x, floor {tc.residual_improvement_min:.0f}x; "
          f"abs cap {tc.residual_abs_max}): {'ok' if ok2 else 'VIOLATED'}")

    pol = make_policy("range", problem, net)
    adv = make_adversary("opposing", problem.bounds, cfg.seeds[0], cfg.n_steps)
    s0 = initial_state(cfg, cfg.seeds[0], problem.basis)
    rec = rollout(pol, adv, s0, problem, cfg.duration, cfg.dt,
                  seed=cfg.seeds[0], controller_kind="range")
    times = np.arange(cfg.n_steps + 1) * cfg.dt
    parked = np.full((cfg.n_steps + 1, 1), s0.x.x1)
    baseline = ergodic_metric_spectral(
        traj_coeffs(problem.basis, times, parked), problem.phi_k, problem.basis)
    ok3 = rec.metric <= tc.rollout_ratio_max * baseline
    print(f"[3] closed-loop metric {rec.metric:.3g} vs stationary baseline "
          f"{baseline:.3g} (cap {tc.rollout_ratio_max}x): "
          f"{'ok' if ok3 else 'VIOLATED'}")

    return 0 if (ok1 and ok2 and ok3) else 1


if __name__ == "__main__":
    sys.exit(main())

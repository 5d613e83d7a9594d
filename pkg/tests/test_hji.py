"""HJI trainer: Hamiltonian agreement, curriculum, losses, determinism."""

import csv

import numpy as np
import pytest
import torch

from robergo.ergodic import (
    ExplorationSpace,
    InfoDistribution,
    build_basis,
    info_coeffs,
)
from robergo.hji import (
    HJIProblem,
    TrainConfig,
    _Sampler,
    earliest_time,
    hamiltonian_optimal,
    loss_differential,
    loss_terminal,
    train,
)
from robergo.objective import CostParams
from robergo.systems import ControlBounds


@pytest.fixture(scope="module")
def basis2():
    return build_basis(ExplorationSpace((1.0,)), modes_per_axis=2)


@pytest.fixture(scope="module")
def phi2(basis2):
    dist = InfoDistribution(
        basis2.space, "gaussian-mixture", (((0.35,), 0.1, 1.0),)
    )
    return info_coeffs(basis2, dist)


def _tiny_cfg(**kw):
    base = dict(
        iterations=60,
        batch_interior=32,
        batch_terminal=16,
        learning_rate=1e-3,
        curriculum_fraction=0.2,
        expansion_fraction=0.5,
        seed=0,
        hidden_layers=(8, 8),
        log_every=20,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_interior=0)
    with pytest.raises(ValueError):
        TrainConfig(curriculum_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(expansion_fraction=0.0)
    with pytest.raises(ValueError):
        TrainConfig(tf=0.0, t0=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lam_weight=-1.0)


def test_curriculum_schedule():
    cfg = _tiny_cfg(iterations=100)  # pretrain 20 iters, expansion 40
    assert earliest_time(cfg, 0) == cfg.tf
    assert earliest_time(cfg, 19) == cfg.tf
    vals = [earliest_time(cfg, i) for i in range(100)]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))
    assert earliest_time(cfg, 59) == pytest.approx(cfg.t0)
    assert earliest_time(cfg, 99) == cfg.t0
    # first post-pretrain window already opens a sliver below tf
    assert earliest_time(cfg, 20) == pytest.approx(cfg.tf - (cfg.tf - cfg.t0) / 40)


def test_hamiltonian_torch_matches_numpy(basis2, phi2, params, bounds, rng):
    hp = HJIProblem(basis2, phi2, params, bounds)
    n = 50
    x1 = rng.uniform(-0.1, 1.1, n)
    x2 = rng.uniform(-2, 2, n)
    z1 = rng.normal(0, 0.4, n)
    g = rng.normal(0, 1.0, (n, 3))  # gx1, gx2, gz1
    states = torch.from_numpy(np.column_stack([x1, x2, z1]))
    grads = torch.from_numpy(g)
    got = hp.hamiltonian_star(states, grads).numpy()
    for i in range(n):
        # full-length vectors on the scalar side; the k = 0 deficit is
        # identically zero along real trajectories, so z_0 = 0 and the
        # gz_0 entry is irrelevant
        want = hamiltonian_optimal(
            x1[i], x2[i], np.array([0.0, z1[i]]),
            g[i, 0], g[i, 1], np.array([0.0, g[i, 2]]),
            params, basis2, phi2, bounds,
        )
        assert got[i] == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_hamiltonian_is_grid_minimax(basis2, phi2, params, bounds, rng):
    # closed-form saddle value vs brute force over a fine input grid
    from robergo.objective import running_cost

    u_grid = np.linspace(-bounds.u_max, bounds.u_max, 401)
    d_grid = np.linspace(-bounds.d_max, bounds.d_max, 401)
    for _ in range(10):
        x1, x2 = rng.uniform(0, 1), rng.uniform(-2, 2)
        z = np.array([0.0, rng.normal(0, 0.4)])
        gx1, gx2 = rng.normal(), rng.normal()
        gz = np.array([0.0, rng.normal()])
        zdot = basis2.eval(np.array([x1])) - phi2
        run = np.array([running_cost(x1, z, u, basis2, params) for u in u_grid])
        H = (run[:, None] + gx1 * x2 + gx2 * (u_grid[:, None] + d_grid[None, :])
             + float(np.dot(gz, zdot)))
        brute = float(np.min(np.max(H, axis=1)))
        closed = hamiltonian_optimal(x1, x2, z, gx1, gx2, gz, params, basis2,
                                     phi2, bounds)
        du, dd = u_grid[1] - u_grid[0], d_grid[1] - d_grid[0]
        slack = abs(gx2) * (du + dd) + params.R * du * (2 * bounds.u_max)
        assert abs(closed - brute) <= slack + 1e-12


def test_terminal_target_hand_value(basis2, phi2, params, bounds):
    hp = HJIProblem(basis2, phi2, params, bounds)
    states = torch.tensor([[0.3, 0.0, 0.8]], dtype=torch.float64)
    # lam_1 = 1/2, horizon 1.0
    want = 0.5 * 0.8**2 / params.horizon_duration
    assert float(hp.terminal_target(states)) == pytest.approx(want, rel=1e-15)


def test_losses_match_manual_recompute(basis2, phi2, params, bounds, rng):
    from robergo.valuenet import make_net

    cfg = _tiny_cfg()
    res = train(cfg, basis2, phi2, params, bounds, {"kind": "test"})
    net = res.net
    hp = HJIProblem(basis2, phi2, params, bounds)

    n = 40
    states = torch.from_numpy(
        np.column_stack([rng.uniform(-0.1, 1.1, n), rng.uniform(-2, 2, n),
                         rng.normal(0, 0.3, n)])
    )
    times = torch.from_numpy(rng.uniform(0, 1, n)[:, None])

    lB = float(loss_terminal(net, hp, states).detach())
    v = net.eval_np(states.numpy()[:, :2], states.numpy()[:, 2:],
                    np.full(n, cfg.tf))
    target = hp.terminal_target(states).numpy()[:, 0]
    assert lB == pytest.approx(float(np.abs(v - target).mean()), rel=1e-12)

    lD = float(loss_differential(net, hp, states, times,
                                 create_graph=False).detach())
    _, gx, gz, gt = net.grads_np(states.numpy()[:, :2], states.numpy()[:, 2:],
                                 times.numpy()[:, 0])
    res_rows = []
    for i in range(n):
        ham = hamiltonian_optimal(
            float(states[i, 0]), float(states[i, 1]),
            np.array([0.0, float(states[i, 2])]),
            gx[i, 0], gx[i, 1], np.array([0.0, gz[i, 0]]),
            params, basis2, phi2, bounds,
        )
        res_rows.append(abs(gt[i] + ham))
    assert lD == pytest.approx(float(np.mean(res_rows)), rel=1e-10)


def test_sampler_respects_boxes():
    cfg = _tiny_cfg()
    smp = _Sampler(cfg, 1, seed=5)
    s = smp.states(500).numpy()
    assert s.shape == (500, 3)
    assert s[:, 0].min() >= cfg.x1_range[0] and s[:, 0].max() <= cfg.x1_range[1]
    assert s[:, 1].min() >= cfg.x2_range[0] and s[:, 1].max() <= cfg.x2_range[1]
    assert s[:, 2].min() >= cfg.z_range[0] and s[:, 2].max() <= cfg.z_range[1]
    t = smp.times(500, 0.25).numpy()
    assert t.min() >= 0.25 and t.max() <= cfg.tf


def test_train_is_bit_deterministic(basis2, phi2, params, bounds):
    cfg = _tiny_cfg()
    a = train(cfg, basis2, phi2, params, bounds, {"kind": "test"})
    b = train(cfg, basis2, phi2, params, bounds, {"kind": "test"})
    assert np.array_equal(a.net.param_vector(), b.net.param_vector())
    assert a.history == b.history


def test_train_reduces_terminal_loss(basis2, phi2, params, bounds):
    cfg = _tiny_cfg(iterations=300, log_every=50)
    res = train(cfg, basis2, phi2, params, bounds, {"kind": "test"})
    assert res.history[-1]["loss_B"] < res.history[0]["loss_B"]
    # window edge sweeps from tf down to t0 across the run
    assert res.history[0]["t_lo"] == cfg.tf
    assert res.history[-1]["t_lo"] == cfg.t0


def test_train_rejects_horizon_mismatch(basis2, phi2, bounds):
    bad = CostParams(horizon_duration=2.0)
    with pytest.raises(ValueError, match="horizon_duration"):
        train(_tiny_cfg(), basis2, phi2, bad, bounds, {"kind": "test"})


def test_train_aborts_on_nonfinite_loss(basis2, phi2, params, bounds):
    cfg = _tiny_cfg(iterations=5, curriculum_fraction=0.0,
                    lam_weight=float("inf"))
    with pytest.raises(RuntimeError, match="diverged"):
        train(cfg, basis2, phi2, params, bounds, {"kind": "test"})


def test_history_csv_layout(tmp_path, basis2, phi2, params, bounds):
    cfg = _tiny_cfg()
    res = train(cfg, basis2, phi2, params, bounds, {"kind": "test"})
    out = tmp_path / "h.csv"
    res.write_history(out)
    rows = list(csv.DictReader(open(out)))
    assert list(rows[0]) == ["iteration", "loss", "loss_B", "loss_D", "t_lo"]
    assert int(rows[-1]["iteration"]) == cfg.iterations - 1
    # logged at 0, 20, 40 and the final iteration
    assert [int(r["iteration"]) for r in rows] == [0, 20, 40, 59]

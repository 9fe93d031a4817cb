import math
from dataclasses import replace

import numpy as np
import pytest

from forgetmeter.envs import datasets
from forgetmeter.envs.cartpole import (
    THETA_LIMIT,
    CartpoleEnv,
    CartpoleParams,
    cartpole_energy,
    cartpole_step,
    cartpole_step_batch,
    random_episode_lengths,
)
from forgetmeter.envs.generative import make_moons_generative
from forgetmeter.envs.supervised import class_incremental_stream, make_moons, make_sinusoid, supervised_epoch_stream
from forgetmeter.errors import PreconditionError
from forgetmeter.process import NULL_OUTPUT, History, Output, start_history
from forgetmeter.streams import child_rng, child_seed
from oracles import cartpole_loops

# -- datasets ---------------------------------------------------------------------


def test_noiseless_moons_lie_on_unit_arcs():
    x, y = datasets.gen_two_moons(100, 0.0, np.random.default_rng(0))
    up = x[y == 0]
    assert np.max(np.abs(np.linalg.norm(up, axis=1) - 1)) < 1e-12 and np.all(up[:, 1] >= 0)
    low = x[y == 1] - [1.0, 0.5]
    assert np.max(np.abs(np.linalg.norm(low, axis=1) - 1)) < 1e-12 and np.all(low[:, 1] <= 0)


def test_moons_balanced_and_deterministic():
    x, y = datasets.gen_two_moons(100, 0.1, np.random.default_rng(4))
    assert (y == 0).sum() == 50
    x2, y2 = datasets.gen_two_moons(100, 0.1, np.random.default_rng(4))
    assert np.array_equal(x, x2) and np.array_equal(y, y2)


def test_dataset_preconditions():
    with pytest.raises(PreconditionError):
        datasets.gen_two_moons(0, 0.1, np.random.default_rng(0))
    with pytest.raises(PreconditionError):
        datasets.gen_sinusoid(5, 0.1, np.random.default_rng(0), lo=1.0, hi=1.0)


def test_csv_dump(tmp_path):
    env = make_sinusoid(np.random.default_rng(0))
    path = env.dump(tmp_path / "d.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "x0,y,split,task" and len(lines) == 1 + 40 + 100


# -- supervised streams -----------------------------------------------------------


def test_epoch_stream_partitions_dataset():
    env = make_sinusoid(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    a, b = supervised_epoch_stream(env, 0, rng), supervised_epoch_stream(env, 1, rng)
    assert len(a) == 4 and all(len(x) == 10 for x in a)
    assert sorted(np.concatenate(a).tolist()) == list(range(40)) == sorted(np.concatenate(b).tolist())
    assert not all(np.array_equal(u, v) for u, v in zip(a, b))


def test_class_incremental_schedule():
    env = make_moons(np.random.default_rng(0), incremental=True)
    assert [len(p) for p in env.pools] == [100, 100]
    _, y0, flag0 = class_incremental_stream(env, 0, 0, np.random.default_rng(0))
    assert np.all(y0 == 0) and not flag0
    _, y1, flag1 = class_incremental_stream(env, env.num_epochs // 2, 0, np.random.default_rng(0))
    assert np.all(y1 == 1) and flag1
    assert env.boundary_time() == 15 * 4


def test_real_stream_flags_boundary():
    env = make_moons(np.random.default_rng(0), incremental=True)
    h = start_history(env, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    while h.time < env.boundary_time():
        h.append(env.next(h, NULL_OUTPUT, rng), NULL_OUTPUT)
    assert h.last_observation.info["boundary"] and h.last_observation.info["epoch"] == 15


def test_hybrid_inputs_come_from_current_task():
    env = make_moons(np.random.default_rng(0), incremental=True)
    x = env.hybrid_inputs(np.random.default_rng(0), env.boundary_time() - 1)
    task0 = {tuple(r) for r in env.train_x[env.pools[0]]}
    assert all(tuple(r) in task0 for r in x)


# -- cartpole ---------------------------------------------------------------------


def test_cartpole_matches_oracle_and_batch():
    rng = np.random.default_rng(0)
    states = rng.uniform(-0.2, 0.2, (50, 4))
    actions = rng.integers(0, 2, 50)
    batch, _ = cartpole_step_batch(states, actions)
    for s, a, b in zip(states, actions, batch):
        new, reward, _ = cartpole_step(s, int(a))
        assert reward == 1.0
        assert np.max(np.abs(new - cartpole_loops(s, int(a)))) < 1e-15
        assert np.max(np.abs(new - b)) < 1e-15


def test_rest_state_does_not_terminate():
    for a in (0, 1):
        new, _, terminal = cartpole_step(np.zeros(4), a)
        assert abs(new[2]) < THETA_LIMIT and not terminal


def test_unforced_rest_state_is_an_equilibrium():
    for g in (0.0, 9.8):
        p = CartpoleParams(gravity=g, force=0.0)
        s = np.zeros(4)
        for _ in range(200):
            s, _, _ = cartpole_step(s, 0, p)
        assert np.all(s == 0.0)


def test_zero_gravity_push_tilts_pole_by_reaction():
    # with g = 0, theta = 0, omega = 0 the angular acceleration is -temp / (l (4/3 - m_p / m))
    p = CartpoleParams(gravity=0.0)
    new, _, _ = cartpole_step(np.zeros(4), 1, p)
    total = p.cart_mass + p.pole_mass
    thacc = -(p.force / total) / (p.half_length * (4.0 / 3.0 - p.pole_mass / total))
    assert new[3] == pytest.approx(p.dt * thacc, rel=1e-12)


def _energy_drift(dt, steps):
    p = CartpoleParams(force=0.0, dt=dt)
    s = np.array([0.0, 0.0, 0.05, 0.0])
    e0, worst = cartpole_energy(s, p), 0.0
    for _ in range(steps):
        s, _, _ = cartpole_step(s, 0, p)
        worst = max(worst, abs(cartpole_energy(s, p) - e0) / abs(e0))
    return abs(cartpole_energy(s, p) - e0) / abs(e0), worst


def test_energy_drift_without_force():
    end, _ = _energy_drift(0.02, 1000)
    assert end < 0.05


def test_energy_error_is_first_order_in_dt():
    _, coarse = _energy_drift(0.02, 1000)
    _, fine = _energy_drift(0.01, 2000)
    assert 1.7 < coarse / fine < 2.3


def test_episode_reset_and_truncation():
    env = CartpoleEnv(replace(CartpoleParams(), max_steps=20))
    h = start_history(env, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for _ in range(60):
        h.append(env.next(h, Output("action", 1), rng), Output("action", 1))
    obs = h.observations()
    ends = [i for i, o in enumerate(obs) if o.terminal]
    assert ends and all(obs[i + 1].info["episode_step"] == 0 for i in ends if i + 1 < len(obs))
    assert all(o.info["episode_step"] <= 20 for o in obs)


def test_random_policy_episode_length():
    lengths = random_episode_lengths(300, np.random.default_rng(0))
    assert 15 < lengths.mean() < 30  # random play on cart-pole lasts about 22 steps


def test_probes_are_visited_states():
    env = CartpoleEnv()
    pts = env.probes().points
    assert pts.shape == (64, 4) and np.all(np.abs(pts[:, 2]) <= THETA_LIMIT + 0.05)
    assert np.array_equal(pts, CartpoleEnv().probes().points)


# -- generative -------------------------------------------------------------------


def test_generative_env_epochs():
    env = make_moons_generative(np.random.default_rng(0), num_samples=100, num_val=20, batch_size=30, num_epochs=2)
    assert env.steps_per_run() == 8
    h = start_history(env, np.random.default_rng(1))
    assert h.last_observation.x is None
    rng = np.random.default_rng(2)
    for _ in range(4):
        h.append(env.next(h, NULL_OUTPUT, rng), NULL_OUTPUT)
    sizes = [len(o.x) for o in h.observations()[1:]]
    assert sizes == [30, 30, 30, 10]
    hy = env.borrow(h, Output("sample", np.zeros((5, 2))), rng, h.time)
    assert hy.hybrid and hy.x.shape == (5, 2)


# -- streams ----------------------------------------------------------------------


def test_child_streams_are_independent_and_stable():
    a = child_rng(3, "run").random(3)
    assert np.array_equal(a, child_rng(3, "run").random(3))
    assert not np.array_equal(a, child_rng(3, "gamma").random(3))
    assert not np.array_equal(a, child_rng(4, "run").random(3))
    assert child_seed(3, "eval", 5).entropy == child_seed(3, "eval", 5).entropy


def test_history_type():
    assert isinstance(start_history(make_sinusoid(np.random.default_rng(0)), np.random.default_rng(0)), History)
    assert math.isclose(THETA_LIMIT, 12 * math.pi / 180)

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgetmeter import predictive as pd
from forgetmeter.envs.cartpole import CartpoleEnv
from forgetmeter.envs.signals import BitEnv, EventEnv
from forgetmeter.envs.supervised import make_pairs
from forgetmeter.errors import PreconditionError
from forgetmeter.learners import mlp
from forgetmeter.learners.bayes import (
    BayesLinReg,
    BayesLinRegState,
    PointEstimateState,
    PointLinReg,
    VariationalDiagLinReg,
    VariationalDiagState,
    bayes_predictive,
    bayes_update,
    neg_elbo,
    neg_elbo_grad,
    point_step,
    variational_step,
)
from forgetmeter.learners.dqn import DqnConfig, DqnLearner, ReplayBuffer, dqn_act, epsilon, q_values
from forgetmeter.learners.flow import FlowLearner, flow_generate, flow_loss_and_grad
from forgetmeter.learners.thought import Clock, FifoStack, ParityChecker
from forgetmeter.process import Observation, Output, run_interaction
from oracles import (
    central_difference_check,
    mlp_forward_loops,
    mse_loss_loops,
    neg_elbo_loops,
    posterior_grid_2d,
    xent_loss_loops,
)

# -- MLP forward and gradients ----------------------------------------------------


def test_forward_zero_and_identity_nets():
    z = {k: np.zeros_like(v) for k, v in mlp.init_params(np.random.default_rng(0), 3, 4, 2).items()}
    assert np.all(mlp.forward(z, np.ones((5, 3))) == 0)
    one = {"W1": np.ones((1, 1, 1)), "b1": np.zeros((1, 1)), "W2": np.ones((1, 1, 1)), "b2": np.zeros((1, 1))}
    assert mlp.forward(one, np.zeros((1, 1)))[0, 0, 0] == 0.0


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(1)
    p = mlp.init_params(rng, 3, 7, 2)
    X = rng.standard_normal((6, 3))
    out = mlp.forward(p, X)[0]
    for b in range(6):
        ref = mlp_forward_loops(p["W1"][0], p["b1"][0], p["W2"][0], p["b2"][0], X[b])
        assert np.max(np.abs(out[b] - ref)) < 1e-12


def test_gradient_vanishes_at_perfect_fit():
    rng = np.random.default_rng(2)
    p = mlp.init_params(rng, 1, 4, 1)
    X = rng.standard_normal((8, 1))
    T = mlp.forward(p, X)[0]
    lv, g = mlp.loss_and_grad(p, X, T)
    assert lv[0] == 0.0 and np.sqrt(sum((v**2).sum() for v in g.values())) <= 1e-12


@pytest.mark.parametrize("loss", ["mse", "xent"])
def test_mlp_gradient_finite_differences(loss):
    rng = np.random.default_rng(3)
    p = mlp.init_params(rng, 2, 6, 3)
    X = rng.standard_normal((5, 2))
    if loss == "mse":
        T = rng.standard_normal((5, 3))
        f = lambda v: mse_loss_loops(mlp.unflatten(v, p), X, T)  # noqa: E731
    else:
        labels = rng.integers(0, 3, 5)
        T = np.eye(3)[labels]
        f = lambda v: xent_loss_loops(mlp.unflatten(v, p), X, labels)  # noqa: E731
    lv, g = mlp.loss_and_grad(p, X, T, loss)
    flat = mlp.flatten(p)
    assert lv[0] == pytest.approx(f(flat), abs=1e-12)
    coords = rng.choice(len(flat), 20, replace=False)
    assert central_difference_check(f, flat, mlp.flatten(g), coords) < 1e-4


def test_softmax_xent_logit_gradient_identity():
    # single example, W2 = I and b2 free: d loss / d b2 = softmax(y) - onehot
    rng = np.random.default_rng(4)
    p = mlp.init_params(rng, 2, 3, 3)
    x = rng.standard_normal((1, 2))
    T = np.array([[0.0, 1.0, 0.0]])
    _, g = mlp.loss_and_grad(p, x, T, "xent")
    probs = mlp.softmax(mlp.forward(p, x)[0])
    assert np.allclose(g["b2"][0], probs[0] - T[0], atol=1e-14)


# -- optimisers -------------------------------------------------------------------


def _p(v):
    return {"w": np.array(v, float)}


def test_sgd_without_momentum_is_gradient_step():
    p, _ = mlp.sgd_momentum_step(_p([1.0, 2.0]), _p([0.5, -1.0]), _p([0.0, 0.0]), 0.1, 0.0)
    assert np.allclose(p["w"], [0.95, 2.1])


def test_sgd_momentum_two_steps_and_carry():
    g, lr = _p([2.0]), 0.1
    p, buf = mlp.sgd_momentum_step(_p([0.0]), g, _p([0.0]), lr, 0.9)
    p, buf = mlp.sgd_momentum_step(p, g, buf, lr, 0.9)
    assert p["w"][0] == pytest.approx(-lr * 2.0 * (1 + 1.9))
    q, buf2 = mlp.sgd_momentum_step(p, _p([0.0]), buf, lr, 0.9)
    assert q["w"][0] != p["w"][0] and buf2["w"][0] == pytest.approx(0.9 * buf["w"][0])


def test_adam_first_step_moves_by_lr():
    g = _p([3.0, -0.01, 1e4])
    p, *_ = mlp.adam_step(_p([0.0, 0.0, 0.0]), g, _p([0, 0, 0]), _p([0, 0, 0]), 0, 0.01)
    assert np.allclose(np.abs(p["w"]), 0.01, rtol=1e-5) and np.all(np.sign(p["w"]) == -np.sign(g["w"]))


def test_adam_zero_gradient_is_fixed_point():
    p, m, v, c = _p([1.0, -2.0]), _p([0, 0]), _p([0, 0]), 0
    for _ in range(50):
        p, m, v, c = mlp.adam_step(p, _p([0.0, 0.0]), m, v, c, 0.1)
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_matches_scalar_oracle_over_100_steps():
    rng = np.random.default_rng(5)
    grads = rng.standard_normal((100, 3))
    p, m, v, c = _p([0.1, 0.2, 0.3]), _p([0, 0, 0]), _p([0, 0, 0]), 0
    ref = [0.1, 0.2, 0.3]
    rm, rv = [0.0] * 3, [0.0] * 3
    for t, g in enumerate(grads, start=1):
        p, m, v, c = mlp.adam_step(p, {"w": g}, m, v, c, 0.01)
        for i in range(3):
            rm[i] = 0.9 * rm[i] + 0.1 * g[i]
            rv[i] = 0.999 * rv[i] + 0.001 * g[i] * g[i]
            ref[i] -= 0.01 * (rm[i] / (1 - 0.9**t)) / (math.sqrt(rv[i] / (1 - 0.999**t)) + 1e-8)
    assert np.max(np.abs(p["w"] - ref)) < 1e-12


def test_optimizer_validation():
    with pytest.raises(PreconditionError):
        mlp.OptimizerState("rmsprop")
    with pytest.raises(PreconditionError):
        mlp.OptimizerState("sgd", lr=0.1, momentum=1.0)


# -- exact Bayesian linear regression ---------------------------------------------


X4 = np.array([[1.0, -1.2], [1.0, 0.3], [1.0, 0.9], [1.0, 2.1]])
Y4 = np.array([-0.7, 0.4, 0.5, 1.6])


def _prior(noise=0.5):
    return BayesLinRegState(np.zeros(2), np.eye(2), noise)


def test_no_observations_is_prior():
    s = bayes_update(_prior(), np.zeros((0, 2)), np.zeros(0))
    assert np.array_equal(s.mean, np.zeros(2)) and np.array_equal(s.cov, np.eye(2))


def test_posterior_permutation_invariance():
    ref = None
    for perm in itertools.permutations(range(4)):
        s = _prior()
        for i in perm:
            s = bayes_update(s, X4[i : i + 1], Y4[i : i + 1])
        if ref is None:
            ref = s
        assert np.max(np.abs(s.mean - ref.mean)) < 1e-10 and np.max(np.abs(s.cov - ref.cov)) < 1e-10


def test_posterior_matches_grid_quadrature():
    s = bayes_update(_prior(), X4, Y4)
    m, c = posterior_grid_2d(X4, Y4, 0.5)
    assert np.max(np.abs(s.mean - m)) < 1e-3 and np.max(np.abs(s.cov - c)) < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=6), st.floats(-4, 4))
def test_predictive_variance_at_least_noise(data, x):
    s = _prior(0.2)
    for a, b in data:
        s = bayes_update(s, np.array([[1.0, a]]), np.array([b]))
    g = bayes_predictive(s, np.array([[1.0, x]]))
    assert float(g.var[0]) >= 0.2


def test_projective_identity_by_quadrature():
    s = bayes_update(_prior(), X4[:2], Y4[:2])
    phi = np.array([[1.0, 0.7]])
    pred = bayes_predictive(s, phi)
    mu, sd = float(pred.mean[0]), math.sqrt(float(pred.var[0]))
    nodes, weights = np.polynomial.hermite_e.hermegauss(60)
    weights = weights / weights.sum()
    mean = np.zeros(2)
    second = np.zeros((2, 2))
    for z, w in zip(nodes, weights):
        post = bayes_update(s, phi, np.array([mu + sd * z]))
        mean += w * post.mean
        second += w * (post.cov + np.outer(post.mean, post.mean))
    cov = second - np.outer(mean, mean)
    assert np.max(np.abs(mean - s.mean)) < 1e-6 and np.max(np.abs(cov - s.cov)) < 1e-6


# -- approximate learners ---------------------------------------------------------


def test_elbo_gradient_finite_differences():
    rng = np.random.default_rng(6)
    F = 4
    mean, logvar = rng.standard_normal(F), rng.standard_normal(F) * 0.3
    phi, y, eps = rng.standard_normal((3, F)), rng.standard_normal(3), rng.standard_normal((2, F))
    args = (phi, y, eps, 0.3, 1.5, 0.7)
    assert neg_elbo(mean, logvar, *args) == pytest.approx(neg_elbo_loops(mean, logvar, *args), rel=1e-12)
    gm, gl = neg_elbo_grad(mean, logvar, *args)
    f = lambda v: neg_elbo_loops(v[:F], v[F:], *args)  # noqa: E731
    worst = central_difference_check(f, np.concatenate([mean, logvar]), np.concatenate([gm, gl]), range(2 * F))
    assert worst < 1e-4


def test_zero_data_variational_step_follows_prior_kl():
    st0 = VariationalDiagState(np.array([1.0, -2.0]), np.array([0.5, -0.5]), 0.1)
    new = variational_step(st0, np.zeros((0, 2)), [], np.zeros((1, 2)), lr=0.1, prior_var=1.0, kl_weight=1.0)
    assert np.allclose(new.mean, st0.mean - 0.1 * st0.mean)
    assert np.allclose(new.logvar, st0.logvar - 0.1 * 0.5 * (np.exp(st0.logvar) - 1.0))


def test_variational_variance_floor():
    st0 = VariationalDiagState(np.zeros(1), np.array([math.log(1e-8)]), 0.1)
    new = variational_step(st0, np.zeros((0, 1)), [], np.zeros((1, 1)), lr=10.0)
    assert new.logvar[0] >= math.log(1e-8)


def test_point_step_size_bound():
    s = PointEstimateState(np.array([0.2, -0.1]), 0.1)
    lr = 1e-6
    new = point_step(s, X4[:1], Y4[:1], lr)
    g = -(Y4[0] - X4[0] @ s.w) * X4[0]
    assert np.linalg.norm(new.w - s.w) <= lr * np.linalg.norm(g) * (1 + 1e-9)


@pytest.mark.parametrize("learner", [VariationalDiagLinReg(), PointLinReg()])
def test_approximate_learners_depend_on_order(learner):
    x = np.array([-1.5, -0.5, 0.5, 1.5])
    y = np.array([-0.8, 0.1, 0.6, 1.4])

    def final(order):
        env = make_pairs(x[order], y[order])
        return run_interaction(env, learner, 4, (), np.random.default_rng(0), init_rng=np.random.default_rng(1)).final_state

    a, b = final([0, 1, 2, 3]), final([3, 2, 1, 0])
    wa, wb = (getattr(s, "mean", getattr(s, "w", None)) for s in (a, b))
    assert np.max(np.abs(wa - wb)) > 1e-6
    exact = [run_interaction(make_pairs(x[o], y[o]), BayesLinReg(), 4, (), np.random.default_rng(0)).final_state
             for o in ([0, 1, 2, 3], [3, 2, 1, 0])]
    assert np.max(np.abs(exact[0].mean - exact[1].mean)) < 1e-10


# -- DQN --------------------------------------------------------------------------


def _dqn_state(q_bias=(0.0, 0.0), step=0, cfg=DqnConfig()):
    L = DqnLearner(cfg)
    s = L.init_state(np.random.default_rng(0))
    for k in s.params:
        s.params[k][:] = 0.0
    s.params["b2"][0] = q_bias
    s.step = step
    return L, s


def test_epsilon_schedule():
    cfg = DqnConfig()
    assert epsilon(cfg, 0) == 1.0
    assert epsilon(cfg, cfg.total_timesteps // 2) == pytest.approx(0.05)
    assert epsilon(cfg, cfg.total_timesteps) == pytest.approx(0.05)


def test_full_exploration_is_uniform():
    L, s = _dqn_state((2.0, 1.0))
    rng = np.random.default_rng(0)
    acts = np.array([dqn_act(s, L.cfg, np.zeros(4), rng) for _ in range(10_000)])
    assert abs(acts.sum() - 5000) < 3 * math.sqrt(10_000 * 0.25)


def test_greedy_action():
    cfg = DqnConfig(start_e=0.0, end_e=0.0)
    L, s = _dqn_state((2.0, 1.0), cfg=cfg)
    rng = np.random.default_rng(0)
    assert all(dqn_act(s, cfg, np.zeros(4), rng) == 0 for _ in range(200))


def test_target_sync_copies_online_network():
    cfg = DqnConfig(learning_starts=4, batch_size=4, train_frequency=1, target_network_frequency=8,
                    buffer_size=50, lr=0.05, total_timesteps=100)
    L = DqnLearner(cfg)
    env = CartpoleEnv()
    seen = []

    def on(t, st, h):
        if t % 8 == 0:
            seen.append(all(np.array_equal(st.params[k], st.target[k]) for k in st.params))
        elif t % 8 == 3 and t > 8:
            seen.append(not all(np.array_equal(st.params[k], st.target[k]) for k in st.params))

    run_interaction(env, L, 40, (), np.random.default_rng(0), init_rng=np.random.default_rng(1), on_step=on)
    assert seen and all(seen)


def test_td_gradient_finite_differences():
    rng = np.random.default_rng(7)
    cfg = DqnConfig(hidden=6)
    L = DqnLearner(cfg)
    s = L.init_state(rng)
    S, S2 = rng.standard_normal((9, 4)), rng.standard_normal((9, 4))
    A, r, d = rng.integers(0, 2, 9), rng.random(9), (rng.random(9) < 0.2).astype(float)
    q2 = np.array([max(mlp_forward_loops(s.target["W1"][0], s.target["b1"][0], s.target["W2"][0],
                                         s.target["b2"][0], x)) for x in S2])
    y = r + cfg.gamma * (1 - d) * q2

    def f(v):
        p = mlp.unflatten(v, s.params)
        return sum((mlp_forward_loops(p["W1"][0], p["b1"][0], p["W2"][0], p["b2"][0], S[b])[A[b]] - y[b]) ** 2
                   for b in range(9)) / 9

    flat = mlp.flatten(s.params)
    assert L.td_loss(s.params, s.target, S, A, r, S2, d) == pytest.approx(f(flat), rel=1e-12)
    lv, g = L._td_grad(s.params, S[None], A[None], y[None])
    coords = rng.choice(len(flat), 20, replace=False)
    assert central_difference_check(f, flat, mlp.flatten(g), coords) < 1e-4


def test_replay_buffer_views_are_immutable():
    b0 = ReplayBuffer.empty(3)
    b1 = b0.add(np.zeros(4), 0, 1.0, np.ones(4), False)
    b2 = b1.add(np.ones(4), 1, 1.0, np.zeros(4), True)
    b2_alt = b1.add(np.full(4, 7.0), 0, 0.0, np.zeros(4), False)  # branches from b1
    assert (b0.size, b1.size, b2.size, b2_alt.size) == (0, 1, 2, 2)
    assert b2.window()[0][1, 0] == 1.0 and b2_alt.window()[0][1, 0] == 7.0
    b = b2
    for i in range(5):
        b = b.add(np.full(4, float(i)), 0, 0.0, np.zeros(4), False)
    assert b.size == 3 and b.window()[0][:, 0].tolist() == [2.0, 3.0, 4.0]
    assert b2.window()[0][1, 0] == 1.0


def test_terminal_observation_not_stored_after_reset():
    cfg = DqnConfig(learning_starts=10_000, buffer_size=1000)
    L = DqnLearner(cfg)
    env = CartpoleEnv()
    tr = run_interaction(env, L, 300, (), np.random.default_rng(0), init_rng=np.random.default_rng(0))
    terminals = sum(o.terminal for o in tr.history.observations()[1:-1])
    assert terminals > 0
    assert tr.final_state.buffer.size == 300 - terminals
    bd = tr.final_state.buffer.window()[4]
    assert bd.sum() == sum(o.terminal and not o.info.get("truncated") for o in tr.history.observations()[1:])


def test_probe_is_temperature_softmax():
    L, s = _dqn_state((1.0, 0.0))
    probs = L.probe(s, np.zeros((2, 4))).probs
    assert np.allclose(probs[:, 0], 1 / (1 + math.exp(-1.0)))
    assert q_values(s.params, np.zeros(4)).tolist() == [[1.0, 0.0]]


# -- flow matching ----------------------------------------------------------------


def test_zero_field_is_identity_flow():
    params = {k: np.zeros_like(v) for k, v in mlp.init_params(np.random.default_rng(0), 3, 8, 2).items()}
    z = np.random.default_rng(1).standard_normal((50, 2))
    assert np.array_equal(flow_generate(params, z), z)


def test_flow_gradient_finite_differences():
    rng = np.random.default_rng(8)
    p = mlp.init_params(rng, 3, 5, 2)
    x1, x0, t = rng.standard_normal((7, 2)), rng.standard_normal((7, 2)), rng.random(7)
    X = np.concatenate([(1 - t[:, None]) * x0 + t[:, None] * x1, t[:, None]], 1)
    T = x1 - x0
    f = lambda v: mse_loss_loops(mlp.unflatten(v, p), X, T)  # noqa: E731
    lv, g = flow_loss_and_grad(p, x1, x0, t)
    flat = mlp.flatten(p)
    assert lv[0] == pytest.approx(f(flat), rel=1e-12)
    coords = rng.choice(len(flat), 20, replace=False)
    assert central_difference_check(f, flat, mlp.flatten(g), coords) < 1e-4


def test_flow_learns_a_point_mass():
    L = FlowLearner(dim=1, hidden=16, lr=0.02, num_steps=50)
    s = L.init_state(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    obs = Observation("generative", x=np.ones((256, 1)))
    for _ in range(600):
        s = L.learn(s, obs, Output("sample"), rng)
    gen = L.generate(s, np.random.default_rng(2).standard_normal((2000, 1)))
    assert abs(gen.mean() - 1.0) < 0.1


# -- thought-experiment learners --------------------------------------------------


def test_clock_counts_updates():
    L, env = Clock(), EventEnv()
    tr = run_interaction(env, L, 7, (), np.random.default_rng(0))
    assert np.all(L.probe(tr.final_state, np.zeros((2, 1))).value == 7)


def test_zero_bit_stack_never_changes():
    L, env = FifoStack(0), BitEnv(p=0.5)
    tr = run_interaction(env, L, 20, (0,), np.random.default_rng(0))
    assert L.digest(tr.final_state) == L.digest(tr.snapshots[0])
    assert isinstance(L.predict(tr.final_state, None), pd.Dirac)


def test_fifo_unassigned_address_is_null():
    L = FifoStack(3)
    s = L.init_state()
    assert np.all(L.probe(s, np.arange(3)).value == pd.NULL)


def test_parity_after_two_ones_predicts_even():
    L, env = ParityChecker(), BitEnv(prefix=(1, 1, 0), borrow_inputs=True)
    tr = run_interaction(env, L, 2, (), np.random.default_rng(0))
    assert [o.x for o in tr.history.observations()] == [1, 1, 0]
    assert L.predict(tr.final_state, None).value == 1

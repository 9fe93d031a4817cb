"""Cross-checks between the compiled and numpy kernels, and between the
vectorised particle paths and the generic clone-and-roll path."""
import os

import numpy as np
import pytest

from forgetmeter import kernels
from forgetmeter import predictive as pd
from forgetmeter.envs.cartpole import CartpoleEnv
from forgetmeter.envs.generative import make_moons_generative
from forgetmeter.envs.signals import BitEnv
from forgetmeter.envs.supervised import make_moons, make_sinusoid
from forgetmeter.futures import HybridEnvironment
from forgetmeter.learners.bayes import BayesLinReg
from forgetmeter.learners.dqn import DqnConfig, DqnLearner
from forgetmeter.learners.flow import FlowLearner
from forgetmeter.learners.supervised import MlpLearner
from forgetmeter.learners.thought import CoinFlipBayes
from forgetmeter.process import Learner, run_interaction
from forgetmeter.streams import child_rng, particle_rngs
from oracles import mlp_forward_loops

BACKENDS = kernels.backends()


def _net(rng, M=3, D=2, H=7, O=3):
    return (rng.normal(size=(M, H, D)), rng.normal(size=(M, H)), rng.normal(size=(M, O, H)), rng.normal(size=(M, O)))


def test_compiled_backend_is_built_and_selected():
    from forgetmeter.kernels import _ckernels  # noqa: F401  (fails if the extension was not built)

    forced = os.environ.get("FORGETMETER_KERNELS", "").lower() == "python"
    assert kernels.BACKEND == ("python" if forced else "cython")


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_forward_matches_loops(name):
    rng = np.random.default_rng(0)
    W1, b1, W2, b2 = _net(rng)
    X = rng.normal(size=(3, 5, 2))
    y = BACKENDS[name].mlp_forward(W1, b1, W2, b2, X)
    for m in range(3):
        for b in range(5):
            assert np.max(np.abs(y[m, b] - mlp_forward_loops(W1[m], b1[m], W2[m], b2[m], X[m, b]))) < 1e-12


@pytest.mark.parametrize("loss_kind, masked", [(kernels.MSE, False), (kernels.MSE, True), (kernels.XENT, False)])
def test_backends_agree_on_gradients(loss_kind, masked):
    if len(BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(1)
    W1, b1, W2, b2 = _net(rng)
    X = rng.normal(size=(3, 6, 2))
    if loss_kind == kernels.XENT:
        T = rng.dirichlet(np.ones(3), size=(3, 6))
    else:
        T = rng.normal(size=(3, 6, 3))
    mask = rng.integers(0, 2, (3, 6, 3)).astype(float) if masked else None
    a = BACKENDS["python"].mlp_grad(W1, b1, W2, b2, X, T, mask, loss_kind)
    b = BACKENDS["cython"].mlp_grad(W1, b1, W2, b2, X, T, mask, loss_kind)
    for u, v in zip(a, b):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-12)


def test_broadcast_inputs_accepted():
    rng = np.random.default_rng(2)
    W1, b1, W2, b2 = _net(rng)
    X = rng.normal(size=(1, 4, 2))
    full = np.repeat(X, 3, axis=0)
    for mod in BACKENDS.values():
        assert np.allclose(mod.mlp_forward(W1, b1, W2, b2, np.broadcast_to(X, (3, 4, 2))),
                           mod.mlp_forward(W1, b1, W2, b2, full))


def test_rbf_kernels_against_naive_sums():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(9, 2)), rng.normal(size=(11, 2))
    naive = sum(np.exp(-0.7 * np.sum((u - v) ** 2)) for u in a for v in b)
    S, R = rng.normal(size=(4, 5, 2)), rng.normal(size=(6, 2))
    for mod in BACKENDS.values():
        assert mod.rbf_sum(a, b, 0.7) == pytest.approx(naive, rel=1e-12)
        G, c = mod.rbf_block_sums(S, R, 0.7)
        assert G[1, 2] == pytest.approx(mod.rbf_sum(S[1], S[2], 0.7), rel=1e-12)
        assert c[3] == pytest.approx(mod.rbf_sum(S[3], R, 0.7), rel=1e-12)


# -- vectorised particle paths ----------------------------------------------------


def _compare(learner, env, steps, ks, M=6, atol=1e-10, seed=0):
    tr = run_interaction(env, learner, steps, (), child_rng(seed, "run"), init_rng=child_rng(seed, "init"))
    state = learner.prepare_estimate(tr.final_state, env) if hasattr(learner, "prepare_estimate") else tr.final_state
    hy = HybridEnvironment(env, learner, tr.history.time)
    probes = env.probes().points
    fast, alive_f = learner.particle_predictives(state, tr.history, hy, ks, particle_rngs(7, 1, M), probes)
    slow, alive_s = Learner.particle_predictives(learner, state, tr.history, hy, ks, particle_rngs(7, 1, M), probes)
    assert np.array_equal(alive_f, alive_s)
    for f, s in zip(fast, slow):
        for name in ("mean", "var", "probs", "samples"):
            if hasattr(f, name):
                assert np.allclose(getattr(f, name), getattr(s, name), atol=atol, rtol=1e-9), name


def test_vectorised_regression_mlp():
    _compare(MlpLearner(1, 5), make_sinusoid(np.random.default_rng(0)), 20, [1, 3])


def test_vectorised_classification_mlp():
    _compare(MlpLearner(2, 6, task="classification"), make_moons(np.random.default_rng(0)), 20, [1, 4])


def test_vectorised_bayes_linear():
    _compare(BayesLinReg(1), make_sinusoid(np.random.default_rng(0)), 8, [1, 2])


def test_vectorised_coin():
    _compare(CoinFlipBayes(), BitEnv(p=0.5, borrow_inputs=False), 5, [1, 5, 20], M=30)


def test_vectorised_flow():
    env = make_moons_generative(np.random.default_rng(0), num_samples=60, num_val=20, batch_size=20, num_epochs=2)
    _compare(FlowLearner(hidden=8, num_steps=5, hybrid_batch=20), env, 3, [1, 2], M=3, atol=1e-8)


def test_vectorised_dqn():
    cfg = DqnConfig(hidden=5, lr=5e-3, batch_size=16, buffer_size=400, learning_starts=40, total_timesteps=400,
                    target_network_frequency=50)
    _compare(DqnLearner(cfg), CartpoleEnv(), 120, [1, 3], M=4, atol=1e-8)


def test_dispatch_wrappers_coerce_dtypes():
    rng = np.random.default_rng(4)
    W1, b1, W2, b2 = (a.astype(np.float32) for a in _net(rng))
    y = kernels.mlp_forward(W1, b1, W2, b2, rng.normal(size=(3, 2, 2)).astype(np.float32))
    assert y.dtype == np.float64 and y.shape == (3, 2, 3)
    assert isinstance(pd.Dirac(0.0), pd.Dirac)

import numpy as np
import pytest

from forgetmeter import predictive as pd
from forgetmeter.envs.signals import CoinFlipEnv
from forgetmeter.envs.supervised import make_moons, make_sinusoid
from forgetmeter.errors import InterfaceError, NumericalDivergenceError, PreconditionError, StepError
from forgetmeter.learners.supervised import MlpLearner
from forgetmeter.learners.thought import Degenerate
from forgetmeter.process import (
    NULL_OUTPUT,
    History,
    Learner,
    Observation,
    run_interaction,
    start_history,
    step_interaction,
)


def test_degenerate_step_keeps_state_and_grows_history():
    env, learner = CoinFlipEnv(), Degenerate()
    rng = np.random.default_rng(0)
    state = learner.init_state()
    h = start_history(env, rng)
    for n in range(1, 6):
        _, _, new = step_interaction(env, learner, state, h, rng)
        assert new is state and learner.digest(new) == learner.digest(state)
        assert len(h) == n + 1


def test_time_zero_has_null_output():
    h = start_history(CoinFlipEnv(), np.random.default_rng(0))
    assert h.time == 0 and h.steps[0][1] is NULL_OUTPUT


def test_sinusoid_targets_follow_previous_inputs():
    env = make_sinusoid(np.random.default_rng(3))
    learner = MlpLearner(1, 5)
    tr = run_interaction(env, learner, 40, (), np.random.default_rng(1), init_rng=np.random.default_rng(2))
    obs = tr.history.observations()
    resid = np.concatenate([o.target - np.sin(prev.x[:, 0]) for prev, o in zip(obs, obs[1:])])
    assert abs(resid.mean()) < 0.05 and 0.07 < resid.std() < 0.13
    xs = np.concatenate([o.x[:, 0] for o in obs])
    assert xs.min() >= -4 and xs.max() <= 4


def test_regression_defaults_give_120_updates():
    env = make_sinusoid(np.random.default_rng(0))
    assert env.steps_per_run() == 40 // 10 * 30 == 120
    tr = run_interaction(env, MlpLearner(1, 5), env.steps_per_run(), (), np.random.default_rng(0))
    assert len(tr.metrics["loss"]) == 121


def test_zero_steps_rejected():
    with pytest.raises(PreconditionError):
        run_interaction(CoinFlipEnv(), Degenerate(), 0, (), np.random.default_rng(0))


def test_identical_seeds_identical_traces():
    def go():
        env = make_moons(np.random.default_rng(5))
        L = MlpLearner(2, 10, task="classification")
        tr = run_interaction(env, L, 30, (10, 20), np.random.default_rng(9), init_rng=np.random.default_rng(8))
        return tr, L

    (a, L), (b, _) = go(), go()
    for key in a.metrics:
        np.testing.assert_array_equal(a.metrics[key], b.metrics[key])
    assert L.digest(a.final_state) == L.digest(b.final_state)
    assert all(L.digest(a.snapshots[t]) == L.digest(b.snapshots[t]) for t in (10, 20))


def test_interface_mismatch():
    env = make_moons(np.random.default_rng(0))
    with pytest.raises(InterfaceError):
        run_interaction(env, MlpLearner(1, 5), 3, (), np.random.default_rng(0))


class _Exploder(Learner):
    def init_state(self, rng=None):
        return {"w": np.ones(2)}

    def predict(self, state, obs):
        return pd.Dirac(0)

    def learn(self, state, obs, out, rng):
        with np.errstate(over="ignore"):
            return {"w": state["w"] * 1e308 * 10}

    def probe(self, state, points):
        return pd.Dirac(np.zeros(len(points)))


def test_non_finite_state_reports_step():
    with pytest.raises(StepError) as info:
        run_interaction(CoinFlipEnv(), _Exploder(), 5, (), np.random.default_rng(0))
    assert info.value.time == 1 and isinstance(info.value.__cause__, NumericalDivergenceError)


def test_history_branch_reads_parent():
    h = History()
    h.append(Observation("signal", x=1), NULL_OUTPUT)
    b = h.branch()
    assert b.time == 0 and b.last_observation.x == 1
    b.append(Observation("signal", x=2), NULL_OUTPUT)
    assert b.time == 1 and len(h) == 1


def test_observation_validation():
    with pytest.raises(PreconditionError):
        Observation("nonsense")
    with pytest.raises(PreconditionError):
        Observation("signal", terminal=True)
    with pytest.raises(PreconditionError):
        Observation("rl", reward=float("nan"))

"""The twelve thought-experiment scenarios as runnable consistency checks.

Each scenario builds a learner, runs it on its environment for a short
while and then asks :func:`forgetmeter.meter.check_consistency` for a
verdict. Deterministic learners are judged against a zero threshold;
stochastic ones against a Monte Carlo noise threshold calibrated on an
analytic consistent learner with seeds disjoint from the test seeds.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import predictive as pd
from .envs.signals import BitEnv, CoinFlipEnv, EventEnv, KeyValueEnv
from .envs.supervised import SupervisedEnv, make_moons, make_sinusoid
from .futures import EvalProbe
from .learners import thought
from .learners.bayes import BayesLinReg, FeatureMap
from .learners.supervised import MlpLearner
from .meter import ForgettingConfig, calibrate_tau, check_consistency
from .process import run_interaction
from .streams import child_rng

CALIBRATION_SEEDS = tuple(range(10_000, 10_020))
# verdict threshold in units of the calibrated 99th-percentile noise level
TAU_FACTOR = 2.0


@dataclass
class Scenario:
    number: int
    name: str
    expected: str  # "consistent" or "forgetting"
    build: Callable[[int], tuple]  # seed -> (learner, state, history, env)
    divergence: str = "kl_categorical"
    calibrate: Callable[[int], tuple] | None = None  # None: exact zero threshold
    probes: object = None


def _run(env, learner, steps, seed, init_rng=None):
    tr = run_interaction(env, learner, steps, (), child_rng(seed, "scenario-run"),
                         init_rng=init_rng or child_rng(seed, "scenario-init"))
    return learner, tr.final_state, tr.history, env


# -- builders -----------------------------------------------------------------


def _degenerate(seed):
    return _run(CoinFlipEnv(), thought.Degenerate(), 20, seed)


def _stack(capacity):
    def build(seed):
        env = BitEnv(pattern=(1, 0, 1, 1, 0), probes=5)
        return _run(env, thought.FifoStack(capacity), 12, seed)
    return build


def _hashmap(seed):
    return _run(KeyValueEnv(8), thought.HashMap(), 30, seed)


def _clock(seed):
    return _run(EventEnv(), thought.Clock(), 7, seed)


def _moody(seed):
    return _run(CoinFlipEnv(), thought.Moody(thought.CoinFlipBayes()), 15, seed)


def _picker(seed):
    return _run(EventEnv(), thought.FunctionPicker(4), 10, seed)


def _flipper(seed):
    return _run(EventEnv(), thought.BinaryFlipper(), 11, seed)


def _trained_moons_classifier(seed):
    env = make_moons(child_rng(seed, "moons-data"))
    net = MlpLearner(2, 10, task="classification", lr=0.1)
    tr = run_interaction(env, net, env.steps_per_run(), (), child_rng(seed, "moons-run"),
                         init_rng=child_rng(seed, "moons-init"))
    return net, tr.final_state


def _permuted(seed):
    net, st = _trained_moons_classifier(seed)
    env = EventEnv(input_dim=2, lo=-1.5, hi=2.5, permute_at=(5,), n_probes=9)
    return _run(env, thought.LabelPermuted(net, st), 10, seed)


def _sinusoid_grid():
    return EvalProbe(np.linspace(-3.9, 3.9, 25)[:, None], "held-out grid")


def _generalising_mlp(seed):
    env = make_sinusoid(child_rng(seed, "sinusoid-data"))
    return _run(env, MlpLearner(1, 10, lr=0.05), 60, seed)


def _sinusoid_bayes(seed):
    env = make_sinusoid(child_rng(seed, "sinusoid-data"))
    feats = FeatureMap("rbf", np.linspace(-4, 4, 9)[:, None], lengthscale=1.0)
    return _run(env, BayesLinReg(1, feats, noise_var=0.01), 60, seed)


def _parity(seed):
    env = BitEnv(p=0.5, prefix=(1, 1, 0), borrow_inputs=True)
    learner = thought.ParityChecker()
    tr = run_interaction(env, learner, 3, (), child_rng(seed, "scenario-run"))
    return learner, tr.final_state, tr.history, env


def _coin(seed):
    env = CoinFlipEnv(prefix=(1,) * 10 + (0,))
    return _run(env, thought.CoinFlipBayes(), 11, seed)


def _coin_calibration(seed):
    return _run(CoinFlipEnv(p=0.5), thought.CoinFlipBayes(), 11, seed)


def objective_env(seed) -> SupervisedEnv:
    """Evaluations of a 1-d objective: high values first, then a region holding a lower minimum."""
    rng = child_rng(seed, "objective")
    f = lambda x: 1.5 - np.exp(-((x - 2.0) ** 2) / 0.3) * 2.5 + 0.3 * np.sin(3 * x)
    early = rng.uniform(-3.0, 0.5, size=(12, 1))
    late = rng.uniform(1.0, 3.0, size=(6, 1))
    x = np.concatenate([early, late])
    y = f(x[:, 0]) + rng.normal(0.0, 0.05, len(x))
    grid = np.linspace(-3.0, 3.0, 25)[:, None]
    task = np.r_[np.zeros(len(early), int), np.ones(len(late), int)]
    return SupervisedEnv(x, y, grid, f(grid[:, 0]), batch_size=1, num_epochs=2,
                         task="regression", task_ids=task, grid=grid)


def _bayesopt(seed):
    env = objective_env(seed)
    feats = FeatureMap("rbf", np.linspace(-3, 3, 13)[:, None], lengthscale=0.6)
    # 12 early evaluations then the first 4 of the late region
    return _run(env, BayesLinReg(1, feats, noise_var=0.01, prior_var=1.0), 16, seed)


SCENARIOS = [
    Scenario(1, "degenerate learner", "consistent", _degenerate),
    Scenario(2, "0-bit stack", "consistent", _stack(0)),
    Scenario(2, "5-bit stack at capacity", "forgetting", _stack(5)),
    Scenario(3, "hash map", "consistent", _hashmap),
    Scenario(4, "clock", "consistent", _clock),
    Scenario(5, "moody learner", "consistent", _moody, calibrate=_coin_calibration),
    Scenario(6, "function picker", "consistent", _picker),
    Scenario(7, "binary flipper", "consistent", _flipper),
    Scenario(8, "label permutation", "consistent", _permuted),
    Scenario(9, "generalisation loss on unseen inputs", "forgetting", _generalising_mlp,
             divergence="kl_gaussian", calibrate=_sinusoid_bayes, probes=_sinusoid_grid),
    Scenario(10, "even-parity checker", "consistent", _parity),
    Scenario(11, "surprising coin flip", "consistent", _coin, calibrate=_coin_calibration),
    Scenario(12, "Bayesian optimisation", "consistent", _bayesopt,
             divergence="kl_gaussian", calibrate=_bayesopt, probes="grid"),
]


@dataclass
class VerdictRow:
    number: int
    name: str
    seed: int
    expected: str
    verdict: str
    threshold: float
    gammas: dict
    passed: bool
    seconds: float = 0.0


def run_verdict_suite(seeds=(0, 1, 2, 3), ks=(1, 10, 40), num_particles: int = 1000,
                      calibration_seeds=CALIBRATION_SEEDS, scenarios=None) -> list[VerdictRow]:
    """Classify every scenario on every seed; thresholds are calibrated once per scenario."""
    rows = []
    taus: dict = {}
    for sc in scenarios or SCENARIOS:
        probes = sc.probes() if callable(sc.probes) else sc.probes
        cfg = ForgettingConfig(k=max(ks), num_particles=num_particles,
                               divergence=pd.DivergenceKind(sc.divergence),
                               probes=probes if probes is not None else "validation", bootstrap=0)
        if sc.calibrate is None:
            threshold = 0.0
        else:
            key = (sc.calibrate, sc.divergence, id(probes) if probes is not None else None)
            if key not in taus:
                taus[key] = calibrate_tau(sc.calibrate, calibration_seeds, cfg, 0.99, ks)
            threshold = TAU_FACTOR * taus[key]
        for seed in seeds:
            t0 = time.perf_counter()
            learner, state, history, env = sc.build(seed)
            verdict, ests = check_consistency(learner, state, history, env, cfg, threshold, seed, ks)
            rows.append(VerdictRow(sc.number, sc.name, seed, sc.expected, verdict, threshold,
                                   {e.k: e.gamma for e in ests}, verdict == sc.expected,
                                   time.perf_counter() - t0))
    return rows

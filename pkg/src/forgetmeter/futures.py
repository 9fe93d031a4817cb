"""Induced futures: hybrid observations and learner rollouts.

A rollout branches off the realised history and never touches it or the
live learner state. In learning mode the learner applies ``u`` to hybrid
observations whose targets it sampled itself; in inference mode it applies
``u'``. Futures are truncated to a finite horizon and compared through the
learner's predictive marginals on a fixed probe set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import predictive as pd
from .errors import PreconditionError
from .process import Environment, History, Learner, Observation, Output


class HybridEnvironment:
    """Observation source for futures rollouts.

    Targets come from ``learner``'s own samples; inputs, dynamics and anything
    else the learner does not model are borrowed from ``base`` as it stood at
    ``at_time``.
    """

    def __init__(self, base: Environment, learner: Learner, at_time: int = 0):
        self.base = base
        self.learner = learner
        self.at_time = at_time

    def next(self, history: History, output: Output, rng: np.random.Generator) -> Observation:
        return self.base.borrow(history, output, rng, self.at_time)


def hybrid_next(hybrid: HybridEnvironment, state, history: History, rng: np.random.Generator):
    """``Y^s ~ q_f(. | Z^{s-1}, X^{s-1})`` then ``X^s ~ q_e(. | H, Y^s)``."""
    learner = hybrid.learner
    out = Output(learner.output_kind, learner.sample_output(state, history.last_observation, rng))
    return out, hybrid.next(history, out, rng)


@dataclass
class FuturesRollout:
    future_history: History
    terminal_state: Any
    mode: str


def rollout(learner: Learner, state, history: History, horizon: int, mode: str,
            rng: np.random.Generator, *, hybrid: HybridEnvironment) -> FuturesRollout:
    """Roll ``horizon`` futures steps from ``state`` without mutating it."""
    if horizon < 1:
        raise PreconditionError("horizon must be at least 1")
    if mode not in ("learning", "inference"):
        raise PreconditionError(f"unknown rollout mode {mode!r}")
    update = learner.learn if mode == "learning" else learner.infer
    future = history.branch()
    z = state
    for s in range(horizon):
        out, obs = hybrid_next(hybrid, z, future, rng)
        z = update(z, obs, out, rng)
        learner.check_finite(z, future.time + 1)
        future.append(obs, out)
    return FuturesRollout(future, z, mode)


@dataclass
class EvalProbe:
    """Fixed probe points at which predictive marginals are compared."""

    points: Any
    label: str = "probes"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.points is None or len(self.points) == 0:
            raise PreconditionError("probe set must be non-empty")

    def __len__(self):
        return len(self.points)


def probe_predictives(learner: Learner, state, probes: EvalProbe) -> pd.PredictiveDistribution:
    return learner.probe(state, probes.points)

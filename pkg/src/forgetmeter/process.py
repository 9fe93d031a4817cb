"""Learner/environment roles and the learning-mode interaction process.

Time zero is stored as ``(X_0, NULL_OUTPUT)`` so a history is always a
sequence of observation/output pairs. At every later step the learner
samples an output from its predictive distribution at the previous
observation, the environment answers with the next observation, and the
learner updates its state.
"""
from __future__ import annotations

import copy
import hashlib
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from . import predictive as pd
from .errors import InterfaceError, NumericalDivergenceError, PreconditionError, StepError


@dataclass(frozen=True)
class Observation:
    """One environment emission.

    ``kind`` is ``"supervised"`` (``x`` = current input batch, ``target`` =
    targets of the previous batch), ``"rl"`` (``x`` = state, ``reward``,
    ``terminal``), ``"generative"`` (``x`` = data batch) or ``"signal"`` for
    the small discrete streams used by the thought-experiment learners.
    ``hybrid`` marks observations synthesised from the learner's own
    predictions during futures rollouts.
    """

    kind: str
    x: Any = None
    target: Any = None
    reward: float = 0.0
    terminal: bool = False
    hybrid: bool = False
    info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("supervised", "rl", "generative", "signal"):
            raise PreconditionError(f"unknown observation kind {self.kind!r}")
        if not math.isfinite(self.reward):
            raise PreconditionError("reward must be finite")
        if self.terminal and self.kind != "rl":
            raise PreconditionError("only RL observations carry a terminal flag")


@dataclass(frozen=True)
class Output:
    kind: str  # "null", "target", "action", "sample"
    value: Any = None


NULL_OUTPUT = Output("null")


class History:
    """Append-only sequence of (observation, output) pairs.

    A futures history points at the realised history it branches from, so
    rollouts can read ``H_{0:t}`` without copying it.
    """

    def __init__(self, origin_time: int = 0, parent: "History | None" = None):
        self.origin_time = origin_time
        self.parent = parent
        self.steps: list[tuple[Observation, Output]] = []

    def append(self, obs: Observation, out: Output) -> None:
        self.steps.append((obs, out))

    def __len__(self):
        return len(self.steps)

    @property
    def time(self) -> int:
        """Index of the most recent step."""
        if not self.steps:
            return self.origin_time - 1
        return self.origin_time + len(self.steps) - 1

    @property
    def last_observation(self) -> Observation:
        if self.steps:
            return self.steps[-1][0]
        if self.parent is not None:
            return self.parent.last_observation
        raise PreconditionError("history is empty")

    def observations(self) -> list[Observation]:
        return [o for o, _ in self.steps]

    def branch(self) -> "History":
        return History(origin_time=self.time + 1, parent=self)

    def copy(self) -> "History":
        h = History(self.origin_time, self.parent)
        h.steps = list(self.steps)
        return h


class Environment(ABC):
    """Sampler for ``X_0`` and for ``X_t`` given history and current output.

    Sampling must depend only on its arguments: the same history, output and
    generator state always give the same observation.
    """

    input_dim: int | None = None

    @abstractmethod
    def initial(self, rng: np.random.Generator) -> Observation: ...

    @abstractmethod
    def next(self, history: History, output: Output, rng: np.random.Generator) -> Observation: ...

    def borrow(self, history: History, output: Output, rng: np.random.Generator, at_time: int) -> Observation:
        """Observation for a futures step: the learner's output stands in for
        whatever the learner models, the rest comes from this environment."""
        raise NotImplementedError(f"{type(self).__name__} has no hybrid borrow policy")

    def probes(self):
        raise NotImplementedError

    def validation_set(self):
        return None


class Learner(ABC):
    """A learner ``(Z, f, u, u', p_Z0)``.

    ``learn`` is the learning-mode update and ``infer`` the inference-mode
    update; neither may mutate the state it is given. Learners whose
    inference-mode update leaves every prediction unchanged set
    ``frozen_inference``; for the others the meter rolls the reference
    futures forward in inference mode.
    """

    input_dim: int | None = None
    output_kind = "target"
    frozen_inference = True
    steps_per_update = 1  # interaction steps per parameter update (k counts updates)

    @abstractmethod
    def init_state(self, rng: np.random.Generator): ...

    @abstractmethod
    def predict(self, state, obs: Observation) -> pd.PredictiveDistribution: ...

    @abstractmethod
    def learn(self, state, obs: Observation, out: Output, rng: np.random.Generator): ...

    def infer(self, state, obs: Observation, out: Output, rng: np.random.Generator):
        return state

    def observe_initial(self, state, obs: Observation):
        """Hook for the time-zero observation (e.g. the first input batch)."""
        return state

    def sample_output(self, state, obs: Observation, rng: np.random.Generator):
        return pd.sample(self.predict(state, obs), rng)

    @abstractmethod
    def probe(self, state, points) -> pd.PredictiveDistribution:
        """Predictive distribution at every probe point (leading axis = probes)."""

    def clone(self, state):
        return copy.deepcopy(state)

    def prepare_estimate(self, state, env: Environment):
        """Refresh auxiliary predictive quantities before a forgetting estimate."""
        return state

    def loss_of(self, state) -> float:
        return float(getattr(state, "last_loss", float("nan")))

    def check_finite(self, state, step: int | None = None) -> None:
        for a in _arrays(state):
            if a.dtype.kind == "f" and not np.all(np.isfinite(a)):
                raise NumericalDivergenceError("non-finite value in learner state", step)

    def digest(self, state) -> str:
        """Stable hash of every array and scalar in ``state``."""
        h = hashlib.sha256()
        for a in _arrays(state):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr(_scalars(state)).encode())
        return h.hexdigest()

    def particle_predictives(self, state, history, hybrid, ks, rngs, probes, mode="learning"):
        """Probe predictives of every particle after each update count in ``ks``.

        Returns ``(preds, alive)`` where ``preds[i]`` stacks the particles'
        probe predictives after ``ks[i]`` steps and ``alive`` flags particles
        that stayed numerically finite. This generic version clones and rolls
        each particle independently; learners with vectorised dynamics
        override it and must consume each particle's stream identically.
        """
        from .futures import rollout

        ks = sorted(ks)
        per_k: list[list] = [[] for _ in ks]
        alive = np.ones(len(rngs), dtype=bool)
        reference = None
        for m, rng in enumerate(rngs):
            z = self.clone(state)
            hist = history
            done = 0
            got = []
            try:
                for k in ks:
                    horizon = (k - done) * self.steps_per_update
                    ro = rollout(self, z, hist, horizon, mode, rng, hybrid=hybrid)
                    z, done, hist = ro.terminal_state, k, ro.future_history
                    got.append(self.probe(z, probes))
            except NumericalDivergenceError:
                alive[m] = False
                if reference is None:
                    reference = self.probe(state, probes)
                got = [reference] * len(ks)
            for i, g in enumerate(got):
                per_k[i].append(g)
        return [pd.stack(p) for p in per_k], alive


def _arrays(obj, depth=0) -> Iterable[np.ndarray]:
    if depth > 6:
        return
    if isinstance(obj, np.ndarray):
        yield obj
    elif isinstance(obj, dict):
        for k in sorted(obj, key=str):
            yield from _arrays(obj[k], depth + 1)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            yield from _arrays(v, depth + 1)
    elif hasattr(obj, "__dict__"):
        for k in sorted(vars(obj)):
            yield from _arrays(vars(obj)[k], depth + 1)


def _scalars(obj, depth=0):
    if depth > 6:
        return None
    if isinstance(obj, (int, float, str, bool)) or obj is None:
        return obj
    if isinstance(obj, np.ndarray):
        return None
    if isinstance(obj, dict):
        return tuple((str(k), _scalars(obj[k], depth + 1)) for k in sorted(obj, key=str))
    if isinstance(obj, (list, tuple)):
        return tuple(_scalars(v, depth + 1) for v in obj)
    if hasattr(obj, "__dict__"):
        return tuple((k, _scalars(v, depth + 1)) for k, v in sorted(vars(obj).items()))
    return repr(obj)


@dataclass
class InteractionTrace:
    history: History
    snapshots: dict[int, Any]
    metrics: dict[str, list[float]]
    final_state: Any = None


def check_interface(env: Environment, learner: Learner) -> None:
    if env.input_dim is not None and learner.input_dim is not None and env.input_dim != learner.input_dim:
        raise InterfaceError(
            f"environment emits {env.input_dim}-d inputs but learner expects {learner.input_dim}"
        )


def start_history(env: Environment, rng: np.random.Generator) -> History:
    h = History(0)
    h.append(env.initial(rng), NULL_OUTPUT)
    return h


def step_interaction(env: Environment, learner: Learner, state, history: History, rng: np.random.Generator):
    """Advance the process by one step; returns ``(X_t, Y_t, Z_t)``."""
    if len(history) == 0 and history.parent is None:
        raise PreconditionError("history must contain the time-zero observation")
    check_interface(env, learner)
    prev = history.last_observation
    out = Output(learner.output_kind, learner.sample_output(state, prev, rng))
    obs = env.next(history, out, rng)
    new_state = learner.learn(state, obs, out, rng)
    learner.check_finite(new_state, history.time + 1)
    history.append(obs, out)
    return obs, out, new_state


def run_interaction(
    env: Environment,
    learner: Learner,
    total_steps: int,
    snapshot_schedule: Iterable[int] = (),
    rng: np.random.Generator | None = None,
    *,
    state=None,
    init_rng: np.random.Generator | None = None,
    on_step: Callable[[int, Any, History], None] | None = None,
) -> InteractionTrace:
    """Run ``total_steps`` learning-mode steps after the time-zero bootstrap.

    ``snapshot_schedule`` lists times whose states are cloned into the trace
    (time 0 is the initial state). ``on_step(t, state, history)`` is called
    after every step with the live objects; it must not mutate them.
    """
    if total_steps < 1:
        raise PreconditionError("total_steps must be at least 1")
    if rng is None:
        raise PreconditionError("an explicit generator is required")
    check_interface(env, learner)
    if state is None:
        state = learner.init_state(init_rng if init_rng is not None else rng)
    history = start_history(env, rng)
    state = learner.observe_initial(state, history.last_observation)
    schedule = set(int(s) for s in snapshot_schedule)
    snapshots = {}
    if 0 in schedule:
        snapshots[0] = learner.clone(state)
    metrics: dict[str, list[float]] = {"loss": [float("nan")], "reward": [0.0]}
    for t in range(1, total_steps + 1):
        try:
            obs, _, state = step_interaction(env, learner, state, history, rng)
        except Exception as exc:  # attach the failing time index
            raise StepError(t, exc) from exc
        metrics["loss"].append(learner.loss_of(state))
        metrics["reward"].append(float(obs.reward))
        if t in schedule:
            snapshots[t] = learner.clone(state)
        if on_step is not None:
            on_step(t, state, history)
    return InteractionTrace(history, snapshots, metrics, state)

"""Executable versions of the thought-experiment learners.

Discrete learners predict Dirac distributions; unassigned retrievals predict
the distinguished ``NULL`` value.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import predictive as pd
from ..errors import PreconditionError
from ..process import Learner

NULL = pd.NULL


def _points(points) -> int:
    return len(points)


class Degenerate(Learner):
    """Never changes its state."""

    def __init__(self, value: int = 0):
        self.value = value

    def init_state(self, rng=None):
        return {"value": self.value}

    def clone(self, state):
        return state

    def predict(self, state, obs):
        return pd.Dirac(state["value"])

    def learn(self, state, obs, out, rng):
        return state

    def probe(self, state, points):
        return pd.Dirac(np.full(_points(points), state["value"]))


class FifoStack(Learner):
    """First-in first-out register of ``capacity`` bits.

    ``u`` pushes the observed bit and drops the oldest once full. The
    predictive is the newest stored bit; probes read every address (address
    0 is the oldest).
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise PreconditionError("capacity must be non-negative")
        self.capacity = capacity

    def init_state(self, rng=None):
        return ()

    def clone(self, state):
        return state  # tuples are immutable

    def predict(self, state, obs):
        return pd.Dirac(state[-1] if state else NULL)

    def learn(self, state, obs, out, rng):
        if self.capacity == 0:
            return state
        bits = state + (int(obs.x),)
        return bits[-self.capacity :]

    def probe(self, state, points):
        addr = np.asarray(points, dtype=int).ravel()
        vals = [state[a] if 0 <= a < len(state) else NULL for a in addr]
        return pd.Dirac(np.asarray(vals, dtype=int))


class HashMap(Learner):
    """Associative memory that stores a value only under an unassigned key."""

    def init_state(self, rng=None):
        return {"table": {}, "pending": None}

    def clone(self, state):
        return {"table": dict(state["table"]), "pending": state["pending"]}

    def observe_initial(self, state, obs):
        return {"table": dict(state["table"]), "pending": int(obs.x)}

    def predict(self, state, obs):
        return pd.Dirac(state["table"].get(int(obs.x), NULL))

    def learn(self, state, obs, out, rng):
        table = dict(state["table"])
        key = state["pending"]
        if key is not None and obs.target is not None and int(obs.target) != NULL:
            table.setdefault(key, int(obs.target))
        return {"table": table, "pending": None if obs.x is None else int(obs.x)}

    def infer(self, state, obs, out, rng):
        return {"table": state["table"], "pending": None if obs.x is None else int(obs.x)}

    def probe(self, state, points):
        return pd.Dirac(np.asarray([state["table"].get(int(k), NULL) for k in np.ravel(points)], dtype=int))


class Clock(Learner):
    """Advances its register on every clock tick; predicts the register."""

    def __init__(self, start: int = 0):
        self.start = start

    def init_state(self, rng=None):
        return {"time": self.start}

    def clone(self, state):
        return dict(state)

    def predict(self, state, obs):
        return pd.Dirac(state["time"])

    def learn(self, state, obs, out, rng):
        if obs.info.get("tick"):
            return {"time": state["time"] + 1}
        return state

    def probe(self, state, points):
        return pd.Dirac(np.full(_points(points), state["time"]))


class BinaryFlipper(Learner):
    """Threshold classifier whose labels flip on every clock tick."""

    def __init__(self, threshold: float = 0.5):
        self.threshold = threshold

    def init_state(self, rng=None):
        return {"phase": 0}

    def clone(self, state):
        return dict(state)

    def _labels(self, state, x):
        x = np.asarray(x, float).reshape(-1, np.shape(x)[-1] if np.ndim(x) > 1 else 1)
        return (x[:, 0] > self.threshold).astype(int) ^ state["phase"]

    def predict(self, state, obs):
        return pd.Dirac(int(self._labels(state, np.atleast_1d(obs.x)[None])[0]))

    def learn(self, state, obs, out, rng):
        if obs.info.get("tick"):
            return {"phase": 1 - state["phase"]}
        return state

    def probe(self, state, points):
        return pd.Dirac(self._labels(state, points))


class LabelPermuted(Learner):
    """A fixed trained classifier whose logit-to-label map is permuted on
    permutation events. Parameters never change."""

    def __init__(self, inner: Learner, inner_state, permutation=(1, 0)):
        self.inner = inner
        self.inner_state = inner_state
        self.permutation = np.asarray(permutation)
        self.input_dim = inner.input_dim

    def init_state(self, rng=None):
        return {"permuted": False}

    def clone(self, state):
        return dict(state)

    def _dist(self, state, x):
        d = self.inner.probe(self.inner_state, np.atleast_2d(x))
        if state["permuted"]:
            d = pd.Categorical(d.probs[..., self.permutation], d.support)
        return d

    def predict(self, state, obs):
        d = self._dist(state, obs.x)
        return pd.Categorical(d.probs[0], d.support)

    def learn(self, state, obs, out, rng):
        if obs.info.get("permute"):
            return {"permuted": not state["permuted"]}
        return state

    def probe(self, state, points):
        return self._dist(state, points)


class FunctionPicker(Learner):
    """Re-selects one of ``L`` threshold functions uniformly at every step.

    The pick is part of the state and is redrawn in both update modes, so
    the reference futures are themselves rolled forward.
    """

    frozen_inference = False

    def __init__(self, L: int = 4):
        if L < 1:
            raise PreconditionError("need at least one function")
        self.L = L
        self.thresholds = (np.arange(L) + 1.0) / (L + 1.0)

    def init_state(self, rng):
        return {"pick": int(rng.integers(self.L))}

    def clone(self, state):
        return dict(state)

    def _labels(self, state, x):
        x = np.asarray(x, float).reshape(len(np.atleast_1d(x)), -1)
        return (x[:, 0] > self.thresholds[state["pick"]]).astype(int)

    def predict(self, state, obs):
        return pd.Dirac(int(self._labels(state, np.atleast_1d(obs.x)[None])[0]))

    def learn(self, state, obs, out, rng):
        return {"pick": int(rng.integers(self.L))}

    infer = learn

    def probe(self, state, points):
        return pd.Dirac(self._labels(state, points))


class ParityChecker(Learner):
    """Predicts 1 after an even number of observed ones, else 0."""

    frozen_inference = False

    def init_state(self, rng=None):
        return {"ones": 0}

    def clone(self, state):
        return dict(state)

    def _pred(self, state) -> int:
        return 1 if state["ones"] % 2 == 0 else 0

    def predict(self, state, obs):
        return pd.Dirac(self._pred(state))

    def learn(self, state, obs, out, rng):
        return {"ones": (state["ones"] + int(obs.x)) % 2}

    infer = learn

    def observe_initial(self, state, obs):
        return self.learn(state, obs, None, None)

    def probe(self, state, points):
        return pd.Dirac(np.full(_points(points), self._pred(state)))


@dataclass(frozen=True)
class CoinState:
    heads: int = 0
    total: int = 0


class CoinFlipBayes(Learner):
    """Beta-Bernoulli counting with a Beta(a, b) prior."""

    def __init__(self, a: float = 1.0, b: float = 1.0):
        if not (a > 0 and b > 0):
            raise PreconditionError("Beta prior parameters must be positive")
        self.a, self.b = a, b

    def init_state(self, rng=None):
        return CoinState()

    def clone(self, state):
        return state

    def p_heads(self, state) -> float:
        return (state.heads + self.a) / (state.total + self.a + self.b)

    def predict(self, state, obs=None):
        p = self.p_heads(state)
        return pd.Categorical(np.array([1.0 - p, p]), (0, 1))

    def learn(self, state, obs, out, rng):
        return CoinState(state.heads + int(obs.x), state.total + 1)

    def probe(self, state, points):
        p = self.p_heads(state)
        probs = np.tile([1.0 - p, p], (_points(points), 1))
        return pd.Categorical(probs, (0, 1))

    def particle_predictives(self, state, history, hybrid, ks, rngs, probes, mode="learning"):
        if getattr(hybrid.base, "borrow_inputs", True):
            return super().particle_predictives(state, history, hybrid, ks, rngs, probes, mode)
        return coin_particles(self, state.heads, state.total, np.ones(max(ks), dtype=bool), ks, rngs, len(probes))


def coin_particles(coin: CoinFlipBayes, heads: int, total: int, update_mask, ks, rngs, n_probes):
    """Vectorised Beta-Bernoulli futures; ``update_mask[s]`` says whether
    futures step ``s`` applies the update. One uniform per particle per step,
    as in the generic path."""
    M = len(rngs)
    h = np.full(M, float(heads))
    n = np.full(M, float(total))
    out, done = [], 0
    for k in sorted(ks):
        for s in range(done, k):
            p = (h + coin.a) / (n + coin.a + coin.b)
            u = np.array([rng.random() for rng in rngs])
            flip = (u >= 1.0 - p).astype(float)  # categorical_index over (1-p, p)
            if update_mask[s]:
                h += flip
                n += 1.0
        done = k
        p = (h + coin.a) / (n + coin.a + coin.b)
        probs = np.stack([1.0 - p, p], -1)[:, None, :].repeat(n_probes, axis=1)
        out.append(pd.Categorical(probs, (0, 1)))
    return out, np.ones(M, dtype=bool)


class Moody(Learner):
    """Applies the inner learner's update only on even time steps."""

    def __init__(self, inner: Learner):
        self.inner = inner
        self.input_dim = inner.input_dim
        self.frozen_inference = inner.frozen_inference

    def init_state(self, rng=None):
        return {"inner": self.inner.init_state(rng), "t": 0}

    def clone(self, state):
        return {"inner": self.inner.clone(state["inner"]), "t": state["t"]}

    def predict(self, state, obs):
        return self.inner.predict(state["inner"], obs)

    def learn(self, state, obs, out, rng):
        t = state["t"] + 1
        inner = self.inner.learn(state["inner"], obs, out, rng) if t % 2 == 0 else state["inner"]
        return {"inner": inner, "t": t}

    def infer(self, state, obs, out, rng):
        return {"inner": self.inner.infer(state["inner"], obs, out, rng), "t": state["t"] + 1}

    def probe(self, state, points):
        return self.inner.probe(state["inner"], points)

    def particle_predictives(self, state, history, hybrid, ks, rngs, probes, mode="learning"):
        if (isinstance(self.inner, CoinFlipBayes) and mode == "learning"
                and not getattr(hybrid.base, "borrow_inputs", True)):
            mask = (state["t"] + 1 + np.arange(max(ks))) % 2 == 0
            z = state["inner"]
            return coin_particles(self.inner, z.heads, z.total, mask, ks, rngs, len(probes))
        return super().particle_predictives(state, history, hybrid, ks, rngs, probes, mode)

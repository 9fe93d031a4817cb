"""Small discrete streams for the thought-experiment learners.

Each environment states what a futures step borrows from it. Whatever the
learner itself models is replaced by the learner's sampled output; external
events (clock ticks, label permutations) are never borrowed, because the
learner's own belief about them stands.
"""
from __future__ import annotations

import numpy as np

from ..errors import PreconditionError
from ..futures import EvalProbe
from ..process import Environment, Observation


class BitEnv(Environment):
    """Bernoulli(``p``) bits, or a repeating ``pattern``, after a fixed ``prefix``.

    ``borrow_inputs=False`` (coin flips, stacks): the learner predicts the
    bit, so a futures step observes the learner's output. ``True`` (parity
    checker): the learner predicts something else, so futures bits are fresh
    draws from the same stream.
    """

    def __init__(self, p: float = 0.5, pattern=None, prefix=(), borrow_inputs: bool = False,
                 probes: int = 1):
        if not 0.0 <= p <= 1.0:
            raise PreconditionError("p must lie in [0, 1]")
        self.p = p
        self.pattern = None if pattern is None else tuple(int(b) for b in pattern)
        self.prefix = tuple(int(b) for b in prefix)
        self.borrow_inputs = borrow_inputs
        self.n_probes = probes

    def _bit(self, t: int, rng) -> int:
        if t < len(self.prefix):
            return self.prefix[t]
        if self.pattern is not None:
            return self.pattern[(t - len(self.prefix)) % len(self.pattern)]
        return int(rng.random() < self.p)

    def initial(self, rng):
        return Observation("signal", x=self._bit(0, rng), info={"t": 0})

    def next(self, history, output, rng):
        t = history.time + 1
        return Observation("signal", x=self._bit(t, rng), info={"t": t})

    def borrow(self, history, output, rng, at_time):
        if self.borrow_inputs:
            return Observation("signal", x=int(rng.random() < self.p), hybrid=True)
        return Observation("signal", x=int(output.value), hybrid=True)

    def probes(self):
        return EvalProbe(np.arange(self.n_probes), "addresses")


class CoinFlipEnv(BitEnv):
    def __init__(self, p: float = 0.5, prefix=()):
        super().__init__(p=p, prefix=prefix)


class KeyValueEnv(Environment):
    """Keys uniform on ``range(n_keys)``; each presentation carries a fresh
    random bit as value. The observation at ``t`` holds key ``t`` and the
    value of key ``t - 1``."""

    def __init__(self, n_keys: int = 8):
        if n_keys < 1:
            raise PreconditionError("need at least one key")
        self.n_keys = n_keys

    def initial(self, rng):
        return Observation("signal", x=int(rng.integers(self.n_keys)))

    def next(self, history, output, rng):
        value = int(rng.random() < 0.5)
        return Observation("signal", x=int(rng.integers(self.n_keys)), target=value)

    def borrow(self, history, output, rng, at_time):
        return Observation("signal", x=int(rng.integers(self.n_keys)), target=output.value, hybrid=True)

    def probes(self):
        return EvalProbe(np.arange(self.n_keys), "keys")


class EventEnv(Environment):
    """Uniform inputs on ``[lo, hi]^d`` with external events.

    Every real step carries a clock tick; ``permute_at`` lists times at which
    the label mapping is permuted. Futures steps carry fresh inputs only.
    """

    def __init__(self, input_dim: int = 1, lo: float = 0.0, hi: float = 1.0, permute_at=(), n_probes: int = 11):
        self.input_dim = input_dim
        self.lo, self.hi = lo, hi
        self.permute_at = frozenset(int(t) for t in permute_at)
        self.n_probes = n_probes

    def _x(self, rng):
        return rng.uniform(self.lo, self.hi, size=self.input_dim)

    def initial(self, rng):
        return Observation("signal", x=self._x(rng), info={"t": 0})

    def next(self, history, output, rng):
        t = history.time + 1
        return Observation("signal", x=self._x(rng), info={"t": t, "tick": True, "permute": t in self.permute_at})

    def borrow(self, history, output, rng, at_time):
        return Observation("signal", x=self._x(rng), hybrid=True)

    def probes(self):
        if self.input_dim == 1:
            return EvalProbe(np.linspace(self.lo, self.hi, self.n_probes)[:, None], "grid")
        g = np.linspace(self.lo, self.hi, self.n_probes)
        gx, gy = np.meshgrid(g, g)
        return EvalProbe(np.stack([gx.ravel(), gy.ravel()], 1), "grid")

"""Conditional flow matching on low-dimensional data.

The vector field is a tanh network on ``(x_t, t)``. Training regresses it
onto ``x_1 - x_0`` at ``x_t = (1 - t) x_0 + t x_1`` with ``x_0`` standard
normal and ``x_1`` a data point; sampling integrates the field with Euler
steps from noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .. import predictive as pd
from ..errors import NumericalDivergenceError, PreconditionError
from ..process import Learner
from . import mlp


@dataclass
class FlowState:
    params: dict
    opt: mlp.OptimizerState
    last_loss: float = float("nan")
    steps: int = 0


def flow_generate(params: dict, z: np.ndarray, num_steps: int = 100) -> np.ndarray:
    """Integrate the field from noise ``z`` of shape (M|1, n, d) or (n, d)."""
    x = np.asarray(z, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    M = params["W1"].shape[0]
    if x.shape[0] != M:
        x = np.broadcast_to(x, (M,) + x.shape[1:])
    h = 1.0 / num_steps
    inp = np.empty(x.shape[:-1] + (x.shape[-1] + 1,))
    for i in range(num_steps):
        inp[..., :-1] = x
        inp[..., -1] = i * h
        x = x + h * kernels.mlp_forward(params["W1"], params["b1"], params["W2"], params["b2"], inp)
    if not np.all(np.isfinite(x)):
        raise NumericalDivergenceError("non-finite generated sample")
    return x[0] if squeeze else x


def flow_inputs(x1: np.ndarray, x0: np.ndarray, t: np.ndarray):
    """Network inputs and regression targets for a flow-matching batch."""
    t = t[..., None]
    xt = (1.0 - t) * x0 + t * x1
    return np.concatenate([xt, t], -1), x1 - x0


def flow_loss_and_grad(params: dict, x1, x0, t):
    X, T = flow_inputs(x1, x0, t)
    return mlp.loss_and_grad(params, X, T, "mse")


class FlowLearner(Learner):
    """Generative learner: the observation is a data batch; the output is a
    batch of generated samples (``hybrid_batch`` of them if set)."""

    output_kind = "sample"

    def __init__(self, dim: int = 2, hidden: int = 64, lr: float = 0.01, num_steps: int = 100,
                 hybrid_batch: int | None = None):
        if num_steps < 1:
            raise PreconditionError("need at least one integration step")
        self.input_dim = dim
        self.dim = dim
        self.hidden = hidden
        self.num_steps = num_steps
        self.hybrid_batch = hybrid_batch
        self.opt_template = mlp.OptimizerState("adam", lr)

    def init_state(self, rng):
        params = mlp.init_params(rng, self.dim + 1, self.hidden, self.dim)
        return FlowState(params, self.opt_template.zeros_like(params))

    def clone(self, state):
        return FlowState(mlp.copy_params(state.params), state.opt.copy(), state.last_loss, state.steps)

    def generate(self, state, z) -> np.ndarray:
        return flow_generate(state.params, z, self.num_steps)

    def predict(self, state, obs):
        n = self.hybrid_batch or (len(obs.x) if obs.x is not None else 256)
        return pd.Empirical(self.generate(state, np.random.default_rng(0).standard_normal((n, self.dim))))

    def _batch(self, obs) -> int:
        if self.hybrid_batch:
            return self.hybrid_batch
        if obs.x is None:
            raise PreconditionError("batch size unknown before the first data batch")
        return len(obs.x)

    def sample_output(self, state, obs, rng):
        return self.generate(state, rng.standard_normal((self._batch(obs), self.dim)))

    def probe(self, state, points):
        return pd.Empirical(self.generate(state, points))

    def learn(self, state, obs, out, rng):
        if obs.x is None:
            return state
        x1 = np.asarray(obs.x, float)
        x0 = rng.standard_normal(x1.shape)
        t = rng.random(len(x1))
        lv, grads = flow_loss_and_grad(state.params, x1, x0, t)
        params, opt = mlp.apply_update(state.params, grads, state.opt)
        return FlowState(params, opt, float(lv[0]), state.steps + 1)

    def particle_predictives(self, state, history, hybrid, ks, rngs, probes, mode="learning"):
        """Particles generate and train together; per-particle streams are
        drawn in the generic order (generation noise, then training noise)."""
        if mode != "learning":
            return super().particle_predictives(state, history, hybrid, ks, rngs, probes, mode)
        ks = sorted(ks)
        M = len(rngs)
        n = self._batch(history.last_observation)
        P = mlp.tile(state.params, M)
        opt = state.opt.tile(M)
        out, done = [], 0
        z = np.empty((M, n, self.dim))
        x0 = np.empty((M, n, self.dim))
        t = np.empty((M, n))
        for k in ks:
            for _ in range(k - done):
                for m, rng in enumerate(rngs):
                    z[m] = rng.standard_normal((n, self.dim))
                x1 = flow_generate(P, z, self.num_steps)
                for m, rng in enumerate(rngs):
                    x0[m] = rng.standard_normal((n, self.dim))
                    t[m] = rng.random(n)
                X, T = flow_inputs(x1, x0, t)
                lv, *g = kernels.mlp_grad(P["W1"], P["b1"], P["W2"], P["b2"], X, T, None, kernels.MSE)
                if not np.all(np.isfinite(lv)):
                    raise NumericalDivergenceError("non-finite flow-matching loss")
                P, opt = mlp.apply_update(P, dict(zip(mlp.KEYS, g)), opt)
            done = k
            out.append(pd.Empirical(flow_generate(P, np.asarray(probes, float)[None], self.num_steps)))
        return out, np.ones(M, dtype=bool)

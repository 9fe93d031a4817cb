"""Single-hidden-layer tanh networks trained on minibatch supervised streams."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import kernels
from .. import predictive as pd
from ..errors import PreconditionError
from ..process import Learner
from . import mlp


@dataclass
class MlpState:
    params: dict
    opt: mlp.OptimizerState
    pending: np.ndarray | None = None  # inputs whose targets arrive next
    noise_var: float = 1.0
    last_loss: float = float("nan")
    steps: int = 0


class MlpLearner(Learner):
    """Regression (Gaussian predictive) or classification (softmax) network.

    ``u`` takes one optimiser step on the pending input batch against the
    targets carried by the observation, then stores the observation's inputs
    as the new pending batch. ``u'`` only refreshes the pending batch.
    """

    def __init__(self, input_dim: int, hidden: int, *, task: str = "regression", n_classes: int = 2,
                 optimizer: str = "adam", lr: float = 0.1, momentum: float = 0.0):
        if task not in ("regression", "classification"):
            raise PreconditionError(f"unknown task {task!r}")
        if hidden < 1:
            raise PreconditionError("hidden width must be positive")
        self.input_dim = input_dim
        self.hidden = hidden
        self.task = task
        self.n_out = 1 if task == "regression" else n_classes
        self.loss = "mse" if task == "regression" else "xent"
        self.opt_template = mlp.OptimizerState(optimizer, lr, momentum)

    # -- construction -------------------------------------------------------

    def init_state(self, rng):
        params = mlp.init_params(rng, self.input_dim, self.hidden, self.n_out)
        return MlpState(params, self.opt_template.zeros_like(params))

    def state_from_params(self, params: dict) -> MlpState:
        return MlpState(mlp.copy_params(params), self.opt_template.zeros_like(params))

    def clone(self, state):
        return MlpState(
            mlp.copy_params(state.params), state.opt.copy(),
            None if state.pending is None else state.pending.copy(),
            state.noise_var, state.last_loss, state.steps,
        )

    # -- beliefs ------------------------------------------------------------

    def _dist(self, out: np.ndarray, noise_var: float):
        """Predictive from network outputs of shape (..., n_out)."""
        if self.task == "regression":
            return pd.Gaussian(out[..., 0], np.full(out.shape[:-1], noise_var))
        return pd.Categorical(mlp.softmax(out))

    def predict(self, state, obs):
        if obs.x is None:
            raise PreconditionError("supervised learners need an input batch")
        return self._dist(mlp.forward(state.params, obs.x)[0], state.noise_var)

    def probe(self, state, points):
        return self._dist(mlp.forward(state.params, points)[0], state.noise_var)

    def predict_mean(self, state, inputs):
        out = mlp.forward(state.params, inputs)[0]
        return out[:, 0] if self.task == "regression" else mlp.softmax(out)

    def encode_targets(self, targets, batch: int) -> np.ndarray:
        t = np.asarray(targets)
        if self.task == "regression":
            return t.reshape(-1, batch, 1).astype(float)
        t = t.reshape(-1, batch).astype(np.int64)
        if np.any(t < 0) or np.any(t >= self.n_out):
            raise PreconditionError("class index out of range")
        return np.eye(self.n_out)[t]

    def dataset_loss(self, state, inputs, targets) -> float:
        X = np.asarray(inputs, float)
        lv, _ = mlp.loss_and_grad(state.params, X, self.encode_targets(targets, len(X)), self.loss)
        return float(lv[0])

    # -- updates ------------------------------------------------------------

    def observe_initial(self, state, obs):
        return replace(self.clone(state), pending=np.asarray(obs.x, float))

    def learn(self, state, obs, out, rng):
        new = self.clone(state)
        if state.pending is not None and obs.target is not None:
            T = self.encode_targets(obs.target, len(state.pending))
            lv, grads = mlp.loss_and_grad(state.params, state.pending, T, self.loss)
            new.params, new.opt = mlp.apply_update(state.params, grads, state.opt)
            new.last_loss = float(lv[0])
            new.steps += 1
        new.pending = None if obs.x is None else np.asarray(obs.x, float)
        return new

    def infer(self, state, obs, out, rng):
        new = self.clone(state)
        new.pending = None if obs.x is None else np.asarray(obs.x, float)
        return new

    def prepare_estimate(self, state, env):
        if self.task != "regression":
            return state
        val = env.validation_set()
        if val is None:
            return state
        new = self.clone(state)
        new.noise_var = pd.fit_residual_variance(state, self, val)
        return new

    # -- vectorised futures -------------------------------------------------

    def particle_predictives(self, state, history, hybrid, ks, rngs, probes, mode="learning"):
        """All particles advance together through one batched kernel call per
        step. Each particle's generator is consumed exactly as in the generic
        path: target noise for the pending batch, then the hybrid inputs."""
        base = hybrid.base
        if mode != "learning" or not hasattr(base, "hybrid_inputs") or state.pending is None:
            return super().particle_predictives(state, history, hybrid, ks, rngs, probes, mode)
        ks = sorted(ks)
        M = len(rngs)
        P = mlp.tile(state.params, M)
        opt = state.opt.tile(M)
        pending = np.repeat(state.pending[None], M, axis=0)
        B = pending.shape[1]
        alive = np.ones(M, dtype=bool)
        loss_kind = mlp.LOSS_KINDS[self.loss]
        sd = np.sqrt(state.noise_var)
        out, done = [], 0
        for k in ks:
            for _ in range(k - done):
                y = kernels.mlp_forward(P["W1"], P["b1"], P["W2"], P["b2"], pending)
                if self.task == "classification":
                    probs = mlp.softmax(y)
                T = np.empty((M, B, self.n_out))
                new_x = np.empty_like(pending)
                for m, rng in enumerate(rngs):
                    if self.task == "regression":
                        T[m, :, 0] = y[m, :, 0] + sd * rng.standard_normal(B)
                    else:
                        T[m] = np.eye(self.n_out)[pd.categorical_index(probs[m], rng.random(B))]
                    new_x[m] = base.hybrid_inputs(rng, hybrid.at_time)
                _, *g = kernels.mlp_grad(P["W1"], P["b1"], P["W2"], P["b2"], pending, T, None, loss_kind)
                P, opt = mlp.apply_update(P, dict(zip(mlp.KEYS, g)), opt)
                pending = new_x
                bad = ~np.all(np.isfinite(P["W1"].reshape(M, -1)), axis=1)
                for key in mlp.KEYS[1:]:
                    bad |= ~np.all(np.isfinite(P[key].reshape(M, -1)), axis=1)
                if np.any(bad & alive):
                    alive &= ~bad
                    for key in mlp.KEYS:
                        P[key][bad] = state.params[key][0]
                        opt.m[key][bad] = 0.0
                        if opt.v:
                            opt.v[key][bad] = 0.0
            done = k
            pr = np.asarray(probes, float)
            dist = self._dist(kernels.mlp_forward(P["W1"], P["b1"], P["W2"], P["b2"], pr[None]), state.noise_var)
            out.append(dist)
        if not alive.all():
            ref = self.probe(state, probes)
            out = [_replace_rows(d, ~alive, ref) for d in out]
        return out, alive


def _replace_rows(dist, rows, ref):
    if isinstance(dist, pd.Gaussian):
        mean, var = dist.mean.copy(), dist.var.copy()
        mean[rows], var[rows] = ref.mean, ref.var
        return pd.Gaussian(mean, var)
    probs = dist.probs.copy()
    probs[rows] = ref.probs
    return pd.Categorical(probs, dist.support)

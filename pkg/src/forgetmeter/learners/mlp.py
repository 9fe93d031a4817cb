"""Single-hidden-layer tanh networks, held as ensembles with a leading axis.

A lone learner is an ensemble of size one; particle rollouts tile it to M
members and advance all of them with one kernel call per step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import NumericalDivergenceError, PreconditionError

KEYS = ("W1", "b1", "W2", "b2")
LOSS_KINDS = {"mse": kernels.MSE, "xent": kernels.XENT}


def init_params(rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int) -> dict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    a1 = 1.0 / np.sqrt(in_dim)
    a2 = 1.0 / np.sqrt(hidden)
    return {
        "W1": rng.uniform(-a1, a1, size=(1, hidden, in_dim)),
        "b1": rng.uniform(-a1, a1, size=(1, hidden)),
        "W2": rng.uniform(-a2, a2, size=(1, out_dim, hidden)),
        "b2": rng.uniform(-a2, a2, size=(1, out_dim)),
    }


def num_params(params: dict) -> int:
    return sum(int(np.prod(params[k].shape[1:])) for k in KEYS)


def tile(params: dict, m: int) -> dict:
    return {k: np.repeat(v, m, axis=0) for k, v in params.items()}


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def flatten(params: dict, member: int = 0) -> np.ndarray:
    return np.concatenate([params[k][member].ravel() for k in KEYS])


def unflatten(vec: np.ndarray, like: dict) -> dict:
    out, i = {}, 0
    for k in KEYS:
        shape = like[k].shape[1:]
        n = int(np.prod(shape))
        out[k] = vec[i : i + n].reshape((1,) + shape).copy()
        i += n
    return out


def forward(params: dict, X) -> np.ndarray:
    """Outputs ``(M, B, O)`` for inputs ``X`` of shape ``(M|1, B, D)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if not np.all(np.isfinite(X)):
        raise NumericalDivergenceError("non-finite network input")
    if X.shape[-1] != params["W1"].shape[-1]:
        raise PreconditionError(f"input dimension {X.shape[-1]} != {params['W1'].shape[-1]}")
    return kernels.mlp_forward(params["W1"], params["b1"], params["W2"], params["b2"], X)


def loss_and_grad(params: dict, X, T, loss: str = "mse", mask=None):
    """Mean batch loss per member and its gradient (same keys as ``params``)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    T = np.asarray(T, dtype=float)
    if T.ndim == 2:
        T = T[None]
    if X.shape[1] == 0:
        raise PreconditionError("empty batch")
    M = params["W1"].shape[0]
    if T.shape[0] != M:
        T = np.broadcast_to(T, (M,) + T.shape[1:])
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        if mask.ndim == 2:
            mask = mask[None]
        if mask.shape[0] != M:
            mask = np.broadcast_to(mask, (M,) + mask.shape[1:])
    lv, gW1, gb1, gW2, gb2 = kernels.mlp_grad(
        params["W1"], params["b1"], params["W2"], params["b2"], X, T, mask, LOSS_KINDS[loss]
    )
    if not np.all(np.isfinite(lv)):
        raise NumericalDivergenceError("non-finite loss")
    return lv, {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# optimisers


@dataclass
class OptimizerState:
    """Optimiser hyper-parameters plus per-parameter buffers.

    ``kind="sgd"`` keeps one momentum buffer ``m``; ``kind="adam"`` keeps
    first and second moments and the shared step count.
    """

    kind: str = "adam"
    lr: float = 0.1
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    count: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise PreconditionError(f"unknown optimiser {self.kind!r}")
        if not self.lr > 0:
            raise PreconditionError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise PreconditionError("momentum must lie in [0, 1)")

    def zeros_like(self, params: dict) -> "OptimizerState":
        st = self.copy()
        st.m = {k: np.zeros_like(v) for k, v in params.items()}
        st.v = {k: np.zeros_like(v) for k, v in params.items()} if self.kind == "adam" else {}
        st.count = 0
        return st

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.kind, self.lr, self.momentum, self.beta1, self.beta2, self.eps,
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            self.count,
        )

    def tile(self, n: int) -> "OptimizerState":
        st = self.copy()
        st.m = tile(self.m, n)
        st.v = tile(self.v, n) if self.v else {}
        return st


def sgd_momentum_step(params: dict, grads: dict, buf: dict, lr: float, beta: float):
    """``v <- beta v + g``; ``theta <- theta - lr v``. Returns new (params, buf)."""
    if not lr > 0:
        raise PreconditionError("learning rate must be positive")
    if not 0.0 <= beta < 1.0:
        raise PreconditionError("momentum must lie in [0, 1)")
    new_buf = {k: beta * buf[k] + grads[k] for k in params}
    return {k: params[k] - lr * new_buf[k] for k in params}, new_buf


def adam_step(params: dict, grads: dict, m: dict, v: dict, count: int, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam. Returns new (params, m, v, count)."""
    if not lr > 0:
        raise PreconditionError("learning rate must be positive")
    t = count + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_m, new_v, new_p = {}, {}, {}
    for k in params:
        g = grads[k]
        new_m[k] = beta1 * m[k] + (1.0 - beta1) * g
        new_v[k] = beta2 * v[k] + (1.0 - beta2) * g * g
        new_p[k] = params[k] - lr * (new_m[k] / c1) / (np.sqrt(new_v[k] / c2) + eps)
    return new_p, new_m, new_v, t


def apply_update(params: dict, grads: dict, opt: OptimizerState):
    """One optimiser step; returns (params, opt) without touching the inputs."""
    if opt.kind == "sgd":
        p, buf = sgd_momentum_step(params, grads, opt.m, opt.lr, opt.momentum)
        return p, OptimizerState(
            opt.kind, opt.lr, opt.momentum, opt.beta1, opt.beta2, opt.eps, buf, {}, opt.count + 1
        )
    p, m, v, t = adam_step(params, grads, opt.m, opt.v, opt.count, opt.lr, opt.beta1, opt.beta2, opt.eps)
    return p, OptimizerState(opt.kind, opt.lr, opt.momentum, opt.beta1, opt.beta2, opt.eps, m, v, t)

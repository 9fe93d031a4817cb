"""Linear-Gaussian regression learners: exact conjugate, diagonal variational, point estimate.

All three share a feature map and the minibatch supervised observation
convention of :mod:`forgetmeter.envs.supervised`. The exact learner is the
calibration reference for Monte Carlo noise thresholds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import predictive as pd
from ..errors import NumericalDivergenceError, PreconditionError
from ..process import Learner


class FeatureMap:
    """``linear``: ``[1, x]``; ``rbf``: ``[1, exp(-|x-c|^2 / (2 l^2)) for c in centres]``."""

    def __init__(self, kind: str = "linear", centres=None, lengthscale: float = 1.0):
        if kind not in ("linear", "rbf"):
            raise PreconditionError(f"unknown feature map {kind!r}")
        self.kind = kind
        self.centres = None if centres is None else np.atleast_2d(np.asarray(centres, float))
        if kind == "rbf":
            if self.centres is None:
                raise PreconditionError("rbf features need centres")
            if self.centres.shape[0] == 1 and self.centres.shape[1] > 1:
                self.centres = self.centres.T
            if not lengthscale > 0:
                raise PreconditionError("lengthscale must be positive")
        self.lengthscale = lengthscale

    def dim(self, input_dim: int) -> int:
        return 1 + (input_dim if self.kind == "linear" else len(self.centres))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if x.ndim == 1:
            x = x[:, None]
        lead = x.shape[:-1]
        x2 = x.reshape(-1, x.shape[-1])
        if self.kind == "linear":
            f = x2
        else:
            d = x2[:, None, :] - self.centres[None, :, :]
            f = np.exp(-(d * d).sum(-1) / (2.0 * self.lengthscale**2))
        out = np.concatenate([np.ones((len(x2), 1)), f], axis=1)
        return out.reshape(lead + (out.shape[-1],))


@dataclass
class BayesLinRegState:
    mean: np.ndarray
    cov: np.ndarray
    noise_var: float
    pending: np.ndarray | None = None
    last_loss: float = float("nan")


def bayes_update(state: BayesLinRegState, phi, y) -> BayesLinRegState:
    """Conjugate update with rows of ``phi`` (already featurised) and targets ``y``.

    Sequential rank-one (Kalman) updates keep the covariance symmetric; the
    result is order independent up to rounding.
    """
    phi = np.atleast_2d(np.asarray(phi, float))
    y = np.atleast_1d(np.asarray(y, float)).ravel()
    if len(phi) != len(y):
        raise PreconditionError("features and targets disagree in length")
    mu, S = state.mean.copy(), state.cov.copy()
    for f, t in zip(phi, y):
        Sf = S @ f
        s = float(f @ Sf) + state.noise_var
        K = Sf / s
        mu = mu + K * (t - f @ mu)
        S = S - np.outer(K, Sf)
        S = 0.5 * (S + S.T)
    _check_spd(S)
    return BayesLinRegState(mu, S, state.noise_var, state.pending, state.last_loss)


def bayes_predictive(state: BayesLinRegState, phi) -> pd.Gaussian:
    phi = np.asarray(phi, float)
    mean = phi @ state.mean
    var = np.einsum("...i,ij,...j->...", phi, state.cov, phi) + state.noise_var
    return pd.Gaussian(mean, np.maximum(var, state.noise_var))


def _check_spd(S):
    if not np.all(np.isfinite(S)):
        raise NumericalDivergenceError("non-finite posterior covariance")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalDivergenceError("posterior covariance lost positive definiteness") from exc


class _LinearBase(Learner):
    def __init__(self, input_dim: int, features: FeatureMap | None = None, noise_var: float = 0.1):
        if not noise_var > 0:
            raise PreconditionError("noise variance must be positive")
        self.input_dim = input_dim
        self.features = features or FeatureMap("linear")
        self.noise_var = noise_var
        self.n_features = self.features.dim(input_dim)

    def observe_initial(self, state, obs):
        new = self.clone(state)
        new.pending = np.asarray(obs.x, float)
        return new

    def infer(self, state, obs, out, rng):
        new = self.clone(state)
        new.pending = None if obs.x is None else np.asarray(obs.x, float)
        return new

    def predict(self, state, obs):
        return self.probe(state, obs.x)

    def predict_mean(self, state, inputs):
        return self.probe(state, inputs).mean

    def _update(self, state, phi, y, rng):
        raise NotImplementedError

    def learn(self, state, obs, out, rng):
        if state.pending is not None and obs.target is not None:
            y = np.asarray(obs.target, float).ravel()
            new = self._update(state, self.features(state.pending), y, rng)
            new.last_loss = float(np.mean((self.predict_mean(state, state.pending) - y) ** 2))
        else:
            new = self.clone(state)
        new.pending = None if obs.x is None else np.asarray(obs.x, float)
        return new


class BayesLinReg(_LinearBase):
    """Exact conjugate Gaussian linear regression with prior N(0, prior_var I)."""

    def __init__(self, input_dim: int = 1, features: FeatureMap | None = None, noise_var: float = 0.1,
                 prior_var: float = 1.0):
        super().__init__(input_dim, features, noise_var)
        self.prior_var = prior_var

    def init_state(self, rng=None):
        F = self.n_features
        return BayesLinRegState(np.zeros(F), self.prior_var * np.eye(F), self.noise_var)

    def clone(self, state):
        return BayesLinRegState(state.mean.copy(), state.cov.copy(), state.noise_var,
                                None if state.pending is None else state.pending.copy(), state.last_loss)

    def _update(self, state, phi, y, rng):
        return bayes_update(state, phi, y)

    def probe(self, state, points):
        return bayes_predictive(state, self.features(points))

    def particle_predictives(self, state, history, hybrid, ks, rngs, probes, mode="learning"):
        base = hybrid.base
        if mode != "learning" or not hasattr(base, "hybrid_inputs") or state.pending is None:
            return super().particle_predictives(state, history, hybrid, ks, rngs, probes, mode)
        M = len(rngs)
        mu = np.repeat(state.mean[None], M, axis=0)
        S = np.repeat(state.cov[None], M, axis=0)
        pending = np.repeat(state.pending[None], M, axis=0)
        B = pending.shape[1]
        s2 = state.noise_var
        Phi_probe = self.features(probes)
        out, done = [], 0
        for k in sorted(ks):
            for _ in range(k - done):
                phi = self.features(pending)  # (M, B, F)
                mean = np.einsum("mbf,mf->mb", phi, mu)
                var = np.maximum(np.einsum("mbf,mfg,mbg->mb", phi, S, phi) + s2, s2)
                y = np.empty((M, B))
                new_x = np.empty_like(pending)
                for m, rng in enumerate(rngs):
                    y[m] = mean[m] + np.sqrt(var[m]) * rng.standard_normal(B)
                    new_x[m] = base.hybrid_inputs(rng, hybrid.at_time)
                for b in range(B):
                    f = phi[:, b, :]
                    Sf = np.einsum("mfg,mg->mf", S, f)
                    s = np.einsum("mf,mf->m", f, Sf) + s2
                    K = Sf / s[:, None]
                    mu = mu + K * (y[:, b] - np.einsum("mf,mf->m", f, mu))[:, None]
                    S = S - K[:, :, None] * Sf[:, None, :]
                    S = 0.5 * (S + np.swapaxes(S, 1, 2))
                pending = new_x
            done = k
            pm = np.einsum("pf,mf->mp", Phi_probe, mu)
            pv = np.maximum(np.einsum("pf,mfg,pg->mp", Phi_probe, S, Phi_probe) + s2, s2)
            out.append(pd.Gaussian(pm, pv))
        return out, np.ones(M, dtype=bool)


# --------------------------------------------------------------------------
# approximate learners


@dataclass
class VariationalDiagState:
    mean: np.ndarray
    logvar: np.ndarray
    noise_var: float
    pending: np.ndarray | None = None
    last_loss: float = float("nan")


VAR_FLOOR = 1e-8


def neg_elbo(mean, logvar, phi, y, eps, noise_var, prior_var, kl_weight):
    """Reparameterised negative ELBO for fixed noise draws ``eps`` (S, F)."""
    w = mean[None, :] + np.exp(0.5 * logvar)[None, :] * eps
    r = y[None, :] - w @ phi.T if len(y) else np.zeros((len(eps), 0))
    nll = 0.5 * (r * r).sum(-1).mean() / noise_var
    v = np.exp(logvar)
    kl = 0.5 * np.sum(v / prior_var + mean * mean / prior_var - 1.0 - np.log(v / prior_var))
    return nll + kl_weight * kl


def neg_elbo_grad(mean, logvar, phi, y, eps, noise_var, prior_var, kl_weight):
    """Gradient of :func:`neg_elbo` with respect to ``(mean, logvar)``."""
    sd = np.exp(0.5 * logvar)
    if len(y):
        w = mean[None, :] + sd[None, :] * eps
        r = y[None, :] - w @ phi.T  # (S, B)
        dw = -(r @ phi) / noise_var  # (S, F)
        g_mean = dw.mean(0)
        g_logvar = (dw * eps * 0.5 * sd[None, :]).mean(0)
    else:
        g_mean = np.zeros_like(mean)
        g_logvar = np.zeros_like(logvar)
    g_mean = g_mean + kl_weight * mean / prior_var
    g_logvar = g_logvar + kl_weight * 0.5 * (sd * sd / prior_var - 1.0)
    return g_mean, g_logvar


def variational_step(state: VariationalDiagState, phi, y, eps, lr, prior_var=1.0, kl_weight=1.0):
    """One gradient step on the negative ELBO; variances are floored at 1e-8."""
    phi = np.atleast_2d(np.asarray(phi, float)) if np.size(phi) else np.zeros((0, len(state.mean)))
    y = np.atleast_1d(np.asarray(y, float)).ravel()
    gm, gl = neg_elbo_grad(state.mean, state.logvar, phi, y, eps, state.noise_var, prior_var, kl_weight)
    mean = state.mean - lr * gm
    logvar = np.maximum(state.logvar - lr * gl, np.log(VAR_FLOOR))
    return VariationalDiagState(mean, logvar, state.noise_var, state.pending, state.last_loss)


class VariationalDiagLinReg(_LinearBase):
    """Diagonal-Gaussian variational posterior updated by one reparameterised
    gradient step per observation batch."""

    def __init__(self, input_dim=1, features=None, noise_var=0.1, prior_var=1.0, lr=0.05,
                 num_samples=1, kl_weight=0.25):
        super().__init__(input_dim, features, noise_var)
        if not lr > 0:
            raise PreconditionError("learning rate must be positive")
        self.prior_var, self.lr, self.num_samples, self.kl_weight = prior_var, lr, num_samples, kl_weight

    def init_state(self, rng=None):
        F = self.n_features
        return VariationalDiagState(np.zeros(F), np.full(F, np.log(self.prior_var)), self.noise_var)

    def clone(self, state):
        return VariationalDiagState(state.mean.copy(), state.logvar.copy(), state.noise_var,
                                    None if state.pending is None else state.pending.copy(), state.last_loss)

    def _update(self, state, phi, y, rng):
        eps = rng.standard_normal((self.num_samples, self.n_features))
        return variational_step(state, phi, y, eps, self.lr, self.prior_var, self.kl_weight)

    def probe(self, state, points):
        phi = self.features(points)
        var = (phi * phi) @ np.exp(state.logvar) + state.noise_var
        return pd.Gaussian(phi @ state.mean, var)


@dataclass
class PointEstimateState:
    w: np.ndarray
    noise_var: float
    pending: np.ndarray | None = None
    last_loss: float = float("nan")


def point_step(state: PointEstimateState, phi, y, lr) -> PointEstimateState:
    """Gradient step on half the mean squared error."""
    phi = np.atleast_2d(np.asarray(phi, float))
    y = np.atleast_1d(np.asarray(y, float)).ravel()
    if not lr > 0:
        raise PreconditionError("learning rate must be positive")
    g = -(phi.T @ (y - phi @ state.w)) / len(y)
    return PointEstimateState(state.w - lr * g, state.noise_var, state.pending, state.last_loss)


class PointLinReg(_LinearBase):
    def __init__(self, input_dim=1, features=None, noise_var=0.1, lr=0.5):
        super().__init__(input_dim, features, noise_var)
        if not lr > 0:
            raise PreconditionError("learning rate must be positive")
        self.lr = lr

    def init_state(self, rng=None):
        return PointEstimateState(np.zeros(self.n_features), self.noise_var)

    def clone(self, state):
        return PointEstimateState(state.w.copy(), state.noise_var,
                                  None if state.pending is None else state.pending.copy(), state.last_loss)

    def _update(self, state, phi, y, rng):
        return point_step(state, phi, y, self.lr)

    def probe(self, state, points):
        phi = self.features(points)
        return pd.Gaussian(phi @ state.w, np.full(phi.shape[:-1], state.noise_var))

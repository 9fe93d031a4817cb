"""Particle Monte Carlo estimate of the k-step propensity to forget.

The live state is cloned into ``M`` particles, each rolled ``k`` learning-mode
updates through the hybrid environment. The mixture of the particles' probe
predictives approximates the expected post-update futures, which are compared
against the reference predictives of the live state, point by point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import predictive as pd
from .errors import NumericalDivergenceError, PreconditionError
from .futures import EvalProbe, HybridEnvironment
from .kernels import rbf_block_sums, rbf_sum
from .streams import child_rng, derive_int, particle_rngs

MIXTURE = "mixture"
MEAN_PER_PARTICLE = "mean_per_particle"


@dataclass
class ForgettingConfig:
    k: int = 40
    num_particles: int = 1000
    divergence: pd.DivergenceKind = field(default_factory=pd.DivergenceKind)
    probes: Any = "validation"  # "validation", "grid" or an EvalProbe
    mixture_policy: str = MIXTURE
    label: str = "particles"
    bootstrap: int = 200
    max_dropped: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise PreconditionError("k must be at least 1")
        if self.num_particles < 1:
            raise PreconditionError("need at least one particle")
        if self.mixture_policy not in (MIXTURE, MEAN_PER_PARTICLE):
            raise PreconditionError(f"unknown mixture policy {self.mixture_policy!r}")
        if isinstance(self.divergence, str):
            self.divergence = pd.DivergenceKind(self.divergence)


@dataclass
class ForgettingEstimate:
    gamma: float
    std_error: float
    per_probe: np.ndarray
    k: int
    M: int
    t: int
    dropped: int = 0
    infinite_probes: tuple = ()
    flags: dict = field(default_factory=dict)

    @property
    def infinite(self) -> bool:
        return bool(self.infinite_probes)


def resolve_probes(which, env) -> EvalProbe:
    if isinstance(which, EvalProbe):
        return which
    if which == "validation" or which is None:
        return env.probes()
    if which == "grid":
        return env.grid_probes()
    raise PreconditionError(f"cannot resolve probe set {which!r}")


def _root_seed(rng) -> int:
    if rng is None:
        raise PreconditionError("an explicit seed or generator is required")
    if isinstance(rng, np.random.Generator):
        return derive_int(rng)
    return int(rng)


def _select(dist, rows):
    if isinstance(dist, pd.Categorical):
        return pd.Categorical(dist.probs[rows], dist.support)
    if isinstance(dist, (pd.Gaussian, pd.DiagGaussianVec)):
        return type(dist)(dist.mean[rows], dist.var[rows])
    if isinstance(dist, pd.Dirac):
        return pd.Dirac(dist.value[rows])
    return pd.Empirical(dist.samples[rows])


def _per_particle(kind, ref, parts):
    """Divergence of ``ref`` against each particle (leading axis)."""
    if isinstance(parts, pd.Empirical):
        bw = kind.bandwidth or pd.median_heuristic_bandwidth(ref.samples)
        return np.array([[pd.mmd2_rbf(ref.samples, s, bw)] for s in parts.samples])
    return np.asarray(pd.divergence(kind, ref, parts), float)


def _gamma_from(kind, policy, ref, parts):
    if policy == MEAN_PER_PARTICLE:
        per = _per_particle(kind, ref, parts).reshape(len_particles(parts), -1).mean(0)
    else:
        mix = pd.mixture_predictive(parts)
        per = np.atleast_1d(np.asarray(pd.divergence(kind, ref, mix), float))
    return per


def len_particles(dist) -> int:
    if isinstance(dist, pd.Categorical):
        return dist.probs.shape[0]
    if isinstance(dist, (pd.Gaussian, pd.DiagGaussianVec)):
        return dist.mean.shape[0]
    if isinstance(dist, pd.Dirac):
        return dist.value.shape[0]
    return dist.samples.shape[0]


def _weighted_mix(parts, w):
    """Mixtures for every bootstrap weight row ``w`` (R, M) summing to 1."""
    if isinstance(parts, pd.Dirac):
        support = tuple(np.unique(parts.value).tolist())
        parts = pd.as_categorical(parts, support)
    if isinstance(parts, pd.Categorical):
        P = parts.probs.reshape(parts.probs.shape[0], -1)
        mix = (w @ P).reshape((len(w),) + parts.probs.shape[1:])
        mix = mix / mix.sum(-1, keepdims=True)
        return [pd.Categorical(m, parts.support) for m in mix]
    mu = parts.mean.reshape(parts.mean.shape[0], -1)
    var = parts.var.reshape(parts.var.shape[0], -1)
    mean = w @ mu
    second = w @ (var + mu * mu)
    v = np.maximum(second - mean * mean, np.finfo(float).tiny)
    shape = parts.mean.shape[1:]
    return [type(parts)(m.reshape(shape), s.reshape(shape)) for m, s in zip(mean, v)]


def _bootstrap_se(kind, policy, ref, ref_parts, parts, reps, rng) -> float:
    """Standard error of gamma under multinomial resampling of particles."""
    M = len_particles(parts)
    if reps <= 1 or M < 2:
        return 0.0
    counts = rng.multinomial(M, np.full(M, 1.0 / M), size=reps).astype(float)
    w = counts / M
    if isinstance(parts, pd.Empirical):
        S = parts.samples
        R = ref.samples
        bw = kind.bandwidth or pd.median_heuristic_bandwidth(R)
        gamma = 1.0 / (2.0 * bw * bw)
        G, c = rbf_block_sums(S, R, gamma)
        n, nr = S.shape[1], R.shape[0]
        rr = rbf_sum(R, R, gamma) / (nr * nr)
        if policy == MEAN_PER_PARTICLE:
            per = rr + np.diag(G) / (n * n) - 2.0 * c / (n * nr)
            g = w @ per
        else:
            g = rr + np.einsum("rm,mn,rn->r", w, G, w) / (n * n) - 2.0 * (w @ c) / (n * nr)
        g = np.maximum(g, 0.0)
        return float(np.std(g, ddof=1))
    if policy == MEAN_PER_PARTICLE:
        per = _per_particle(kind, ref, parts).reshape(M, -1).mean(1)
        return float(np.std(w @ per, ddof=1))
    mixes = _weighted_mix(parts, w)
    refs = _weighted_mix(ref_parts, w) if ref_parts is not None else [ref] * reps
    g = []
    for r, m in zip(refs, mixes):
        d = np.asarray(pd.divergence(kind, r, m), float)
        g.append(np.mean(d))
    g = np.asarray(g)
    g = g[np.isfinite(g)]
    return float(np.std(g, ddof=1)) if len(g) > 1 else 0.0


def estimate_gammas(learner, state, history, env, cfg: ForgettingConfig, rng, ks: Sequence[int] | None = None):
    """Estimates for every update count in ``ks`` from one shared particle run."""
    ks = sorted(set(int(k) for k in (ks if ks is not None else [cfg.k])))
    if not ks or ks[0] < 1:
        raise PreconditionError("update counts must be positive")
    root = _root_seed(rng)
    t = history.time
    M = cfg.num_particles
    probes = resolve_probes(cfg.probes, env)
    ref_state = learner.prepare_estimate(state, env)
    hybrid = HybridEnvironment(env, learner, at_time=t)
    preds, alive = learner.particle_predictives(
        ref_state, history, hybrid, ks, particle_rngs(root, t, M, cfg.label), probes.points, "learning"
    )
    ref_parts = None
    if learner.frozen_inference:
        reference = [learner.probe(ref_state, probes.points)] * len(ks)
    else:
        # the reference futures keep evolving auxiliary state; common random
        # numbers pair each inference-mode particle with its learning twin
        ref_parts, ref_alive = learner.particle_predictives(
            ref_state, history, hybrid, ks, particle_rngs(root, t, M, cfg.label), probes.points, "inference"
        )
        alive = alive & ref_alive
        reference = None
    dropped = int((~alive).sum())
    if dropped > cfg.max_dropped * M:
        raise NumericalDivergenceError(f"{dropped} of {M} particles diverged", t)
    rows = np.flatnonzero(alive)
    flags = {}
    transitory = getattr(learner, "transitory", None)
    if transitory is not None:
        flags["transitory"] = bool(transitory(state))
    kind = cfg.divergence
    out = []
    for i, k in enumerate(ks):
        parts = _select(preds[i], rows) if dropped else preds[i]
        rp = None
        if reference is None:
            rp = _select(ref_parts[i], rows) if dropped else ref_parts[i]
            ref = pd.mixture_predictive(rp)
        else:
            ref = reference[i]
        per = _gamma_from(kind, cfg.mixture_policy, ref, parts)
        inf_idx = tuple(int(j) for j in np.flatnonzero(~np.isfinite(per)))
        gamma = float(np.mean(per))
        se = _bootstrap_se(kind, cfg.mixture_policy, ref, rp, parts, cfg.bootstrap,
                           child_rng(root, "bootstrap", t, k))
        out.append(ForgettingEstimate(gamma, se, per, k, M, t, dropped, inf_idx, dict(flags)))
    return out


def estimate_gamma(learner, state, history, env, cfg: ForgettingConfig, rng) -> ForgettingEstimate:
    """Gamma_k(t) for ``cfg.k``; the live state is never modified."""
    return estimate_gammas(learner, state, history, env, cfg, rng, [cfg.k])[0]


def sweep_k(learner, state, history, env, base_cfg: ForgettingConfig, k_values, rng):
    """(k, estimate) pairs sharing probes, reference and particle streams."""
    k_values = list(k_values)
    if not k_values or min(k_values) < 1:
        raise PreconditionError("k values must be non-empty and positive")
    ests = estimate_gammas(learner, state, history, env, base_cfg, rng, k_values)
    return [(e.k, e) for e in ests]


def check_consistency(learner, state, history, env, cfg: ForgettingConfig, threshold: float, rng,
                      ks: Sequence[int] | None = None):
    """``"consistent"`` iff every estimate is at most ``threshold``."""
    if threshold < 0:
        raise PreconditionError("threshold must be non-negative")
    ests = estimate_gammas(learner, state, history, env, cfg, rng, ks)
    verdict = "consistent" if all(e.gamma <= threshold for e in ests) else "forgetting"
    return verdict, ests


def calibrate_tau(make_case: Callable[[int], tuple], seeds: Sequence[int], cfg: ForgettingConfig,
                  quantile: float = 0.99, ks: Sequence[int] | None = None) -> float:
    """Monte Carlo noise threshold from a learner known to be consistent.

    ``make_case(seed)`` returns ``(learner, state, history, env)``; the
    threshold is the ``quantile`` of all gamma estimates over the seeds.
    """
    gammas = []
    for s in seeds:
        learner, state, history, env = make_case(s)
        for e in estimate_gammas(learner, state, history, env, cfg, int(s), ks):
            gammas.append(e.gamma)
    return float(np.quantile(gammas, quantile))

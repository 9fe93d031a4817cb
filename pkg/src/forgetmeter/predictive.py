"""Predictive distributions and the divergences compared by the forgetting meter.

Distributions carry optional leading batch axes (particles, probes), so one
object can describe a learner's beliefs over a whole probe set and the
divergences broadcast over those axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import (
    DegenerateBandwidthError,
    DomainError,
    InfiniteDivergenceError,
    PreconditionError,
)
from .kernels import rbf_sum

VARIANCE_FLOOR = 1e-6
NULL = -1  # encodes an unassigned retrieval for discrete learners


@dataclass(frozen=True, eq=False)
class Categorical:
    probs: np.ndarray
    support: tuple | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if p.ndim == 0 or p.shape[-1] == 0:
            raise PreconditionError("categorical needs at least one class")
        if np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1.0) > 1e-9):
            raise PreconditionError("categorical probabilities must lie on the simplex")
        if self.support is not None and len(self.support) != p.shape[-1]:
            raise PreconditionError("support labels do not match the number of classes")

    @property
    def batch_shape(self):
        return self.probs.shape[:-1]


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        m, v = np.broadcast_arrays(np.asarray(self.mean, float), np.asarray(self.var, float))
        if np.any(~(v > 0)):
            raise DomainError("Gaussian variance must be strictly positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "var", v)

    @property
    def batch_shape(self):
        return self.mean.shape


@dataclass(frozen=True, eq=False)
class DiagGaussianVec:
    mean: np.ndarray  # (..., d)
    var: np.ndarray

    def __post_init__(self):
        m, v = np.broadcast_arrays(np.asarray(self.mean, float), np.asarray(self.var, float))
        if np.any(~(v > 0)):
            raise DomainError("Gaussian variance must be strictly positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "var", v)

    @property
    def batch_shape(self):
        return self.mean.shape[:-1]


@dataclass(frozen=True, eq=False)
class Dirac:
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", np.asarray(self.value))

    @property
    def batch_shape(self):
        return self.value.shape


@dataclass(frozen=True, eq=False)
class Empirical:
    samples: np.ndarray  # (..., n, d)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim < 2 or s.shape[-2] == 0:
            raise PreconditionError("empirical distribution needs at least one sample")
        object.__setattr__(self, "samples", s)

    @property
    def batch_shape(self):
        return self.samples.shape[:-2]


PredictiveDistribution = Union[Categorical, Gaussian, DiagGaussianVec, Dirac, Empirical]


@dataclass(frozen=True)
class DivergenceKind:
    """Which divergence compares reference and post-update futures.

    ``bandwidth`` is only read for ``mmd_rbf``: a positive float fixes the
    RBF scale, ``None`` selects the median heuristic on the reference samples.
    ``smoothing`` clamps categorical probabilities away from zero; leave it
    ``None`` to report support violations as infinite divergence.
    """

    kind: str = "kl_gaussian"
    bandwidth: float | None = None
    smoothing: float | None = None
    reverse: bool = False

    def __post_init__(self):
        if self.kind not in ("kl_categorical", "kl_gaussian", "mmd_rbf"):
            raise PreconditionError(f"unknown divergence kind {self.kind!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise PreconditionError("fixed bandwidth must be positive")


# --------------------------------------------------------------------------
# divergences


def kl_categorical(p, q, *, smoothing: float | None = None, allow_inf: bool = False):
    """KL(p || q) over the last axis, broadcasting over the rest."""
    p = np.asarray(p.probs if isinstance(p, Categorical) else p, dtype=float)
    q = np.asarray(q.probs if isinstance(q, Categorical) else q, dtype=float)
    if p.shape[-1] != q.shape[-1]:
        raise PreconditionError("categorical KL needs equal-length probability vectors")
    for v in (p, q):
        if np.any(v < 0) or np.any(np.abs(v.sum(-1) - 1.0) > 1e-9):
            raise PreconditionError("arguments must be probability vectors")
    if smoothing is not None:
        p = (p + smoothing) / (1.0 + smoothing * p.shape[-1])
        q = (q + smoothing) / (1.0 + smoothing * q.shape[-1])
    p, q = np.broadcast_arrays(p, q)
    violation = (p > 0) & (q == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0) / np.where(q > 0, q, 1.0)), 0.0)
    out = terms.sum(-1)
    bad = violation.any(-1)
    if np.any(bad):
        if not allow_inf:
            raise InfiniteDivergenceError(
                "p assigns mass to outcomes q rules out", indices=np.argwhere(bad)
            )
        out = np.where(bad, np.inf, out)
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def kl_gaussian(p: Gaussian, q: Gaussian):
    """Closed-form KL between univariate normals (arguments carry variances)."""
    vp, vq = np.asarray(p.var, float), np.asarray(q.var, float)
    if np.any(~(vp > 0)) or np.any(~(vq > 0)):
        raise DomainError("variances must be positive")
    d = np.asarray(p.mean, float) - np.asarray(q.mean, float)
    out = 0.5 * (np.log(vq / vp) + (vp + d * d) / vq - 1.0)
    out = np.maximum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def kl_diag_gaussian(p: DiagGaussianVec, q: DiagGaussianVec):
    per_dim = kl_gaussian(Gaussian(p.mean, p.var), Gaussian(q.mean, q.var))
    return np.sum(per_dim, axis=-1)


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return np.ascontiguousarray(a)


def mmd2_rbf(a, b, bandwidth: float) -> float:
    """Biased (V-statistic) squared MMD with kernel exp(-|x-y|^2 / (2 bw^2))."""
    a, b = _as_points(a), _as_points(b)
    if len(a) == 0 or len(b) == 0:
        raise PreconditionError("MMD needs non-empty sample sets")
    if not bandwidth > 0:
        raise PreconditionError("bandwidth must be positive")
    gamma = 1.0 / (2.0 * bandwidth * bandwidth)
    kaa = rbf_sum(a, a, gamma) / (len(a) * len(a))
    kbb = rbf_sum(b, b, gamma) / (len(b) * len(b))
    # both orientations so that swapping a and b is bit-exact
    kab = 0.5 * (rbf_sum(a, b, gamma) + rbf_sum(b, a, gamma)) / (len(a) * len(b))
    return max(float((kaa + kbb) - 2.0 * kab), 0.0)


def median_heuristic_bandwidth(samples) -> float:
    x = _as_points(samples)
    if len(x) < 2:
        raise PreconditionError("median heuristic needs at least two samples")
    iu = np.triu_indices(len(x), k=1)
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))[iu]
    med = float(np.median(d))
    if med <= 0:
        if np.all(d == 0):
            raise DegenerateBandwidthError("all samples identical; bandwidth undefined")
        med = float(np.median(d[d > 0]))
    return med


def fit_residual_variance(state, learner, validation_set, floor: float = VARIANCE_FLOOR) -> float:
    """Mean squared validation residual of the learner's point predictions."""
    inputs, targets = validation_set
    inputs, targets = np.asarray(inputs, float), np.asarray(targets, float)
    if len(inputs) == 0:
        raise PreconditionError("validation set is empty")
    pred = np.asarray(learner.predict_mean(state, inputs), float).reshape(targets.shape)
    return max(float(np.mean((pred - targets) ** 2)), floor)


# --------------------------------------------------------------------------
# sampling and mixtures


def sample(dist: PredictiveDistribution, rng: np.random.Generator):
    """One draw per batch element.

    The number of underlying uniform/normal draws depends only on the batch
    shape, never on the distribution's values; vectorised particle paths rely
    on this to replay the per-particle streams exactly.
    """
    if isinstance(dist, Dirac):
        return dist.value.copy() if dist.value.ndim else dist.value.item()
    if isinstance(dist, Categorical):
        u = rng.random(dist.batch_shape)
        idx = categorical_index(dist.probs, u)
        if dist.support is not None:
            idx = np.asarray(dist.support)[idx]
        return idx if np.ndim(idx) else idx.item()
    if isinstance(dist, Gaussian):
        z = rng.standard_normal(dist.batch_shape)
        out = dist.mean + np.sqrt(dist.var) * z
        return out if np.ndim(out) else float(out)
    if isinstance(dist, DiagGaussianVec):
        z = rng.standard_normal(dist.mean.shape)
        return dist.mean + np.sqrt(dist.var) * z
    if isinstance(dist, Empirical):
        n = dist.samples.shape[-2]
        j = rng.integers(0, n, size=dist.batch_shape)
        return np.take_along_axis(dist.samples, np.asarray(j)[..., None, None], axis=-2)[..., 0, :]
    raise TypeError(f"cannot sample {type(dist).__name__}")


def categorical_index(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    idx = (np.asarray(u)[..., None] >= cdf).sum(-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def stack(dists: Sequence[PredictiveDistribution]) -> PredictiveDistribution:
    """Stack homogeneous distributions along a new leading axis."""
    if len(dists) == 0:
        raise PreconditionError("nothing to stack")
    kinds = {type(d) for d in dists}
    if len(kinds) != 1:
        raise PreconditionError(f"mixed distribution variants: {sorted(k.__name__ for k in kinds)}")
    first = dists[0]
    if isinstance(first, Categorical):
        return Categorical(np.stack([d.probs for d in dists]), first.support)
    if isinstance(first, Gaussian):
        return Gaussian(np.stack([d.mean for d in dists]), np.stack([d.var for d in dists]))
    if isinstance(first, DiagGaussianVec):
        return DiagGaussianVec(np.stack([d.mean for d in dists]), np.stack([d.var for d in dists]))
    if isinstance(first, Dirac):
        return Dirac(np.stack([d.value for d in dists]))
    return Empirical(np.stack([d.samples for d in dists]))


def _identical_components(arrays: Sequence[np.ndarray]) -> bool:
    return all(np.array_equal(a, a[:1].repeat(len(a), axis=0)) for a in arrays)


def mixture_predictive(particles) -> PredictiveDistribution:
    """Equal-weight mixture over the leading (particle) axis.

    Categorical mixtures average probabilities, Gaussian mixtures are moment
    matched and Empirical mixtures pool samples. A mixture of identical
    components returns that component exactly.
    """
    if isinstance(particles, (list, tuple)):
        particles = stack(particles)
    d = particles
    if isinstance(d, Categorical):
        if _identical_components([d.probs]):
            return Categorical(d.probs[0], d.support)
        mix = d.probs.mean(axis=0)
        return Categorical(mix / mix.sum(-1, keepdims=True), d.support)
    if isinstance(d, (Gaussian, DiagGaussianVec)):
        cls = type(d)
        if _identical_components([d.mean, d.var]):
            return cls(d.mean[0], d.var[0])
        mean = d.mean.mean(axis=0)
        var = d.var.mean(axis=0) + ((d.mean - mean) ** 2).mean(axis=0)
        return cls(mean, var)
    if isinstance(d, Dirac):
        if _identical_components([d.value]):
            return Dirac(d.value[0])
        support = tuple(np.unique(d.value).tolist())
        onehot = np.stack([(d.value == s) for s in support], axis=-1).astype(float)
        return Categorical(onehot.mean(axis=0), support)
    if isinstance(d, Empirical):
        s = d.samples
        if s.ndim < 3:
            raise PreconditionError("empirical stack needs a particle axis")
        pooled = np.moveaxis(s, 0, -3)
        return Empirical(pooled.reshape(pooled.shape[:-3] + (-1, s.shape[-1])))
    raise TypeError(f"cannot mix {type(d).__name__}")


def as_categorical(dist, support: tuple) -> Categorical:
    """Express a discrete distribution over an explicit support."""
    if isinstance(dist, Dirac):
        onehot = np.stack([(dist.value == s) for s in support], axis=-1).astype(float)
        if np.any(onehot.sum(-1) != 1):
            raise PreconditionError("Dirac value outside the requested support")
        return Categorical(onehot, support)
    if isinstance(dist, Categorical):
        if dist.support is None or tuple(dist.support) == tuple(support):
            return dist
        lookup = {s: i for i, s in enumerate(dist.support)}
        probs = np.zeros(dist.batch_shape + (len(support),))
        for j, s in enumerate(support):
            if s in lookup:
                probs[..., j] = dist.probs[..., lookup[s]]
        return Categorical(probs, support)
    raise TypeError(f"{type(dist).__name__} is not discrete")


def _discrete_support(*dists) -> tuple:
    vals: set = set()
    for d in dists:
        if isinstance(d, Dirac):
            vals.update(np.unique(d.value).tolist())
        elif d.support is not None:
            vals.update(d.support)
    return tuple(sorted(vals))


def divergence(kind: DivergenceKind, p: PredictiveDistribution, q: PredictiveDistribution):
    """Per-batch-element D(p || q) (or D(q || p) when ``kind.reverse``).

    Categorical and Dirac arguments are aligned on a common support first.
    Support violations come back as ``inf`` entries.
    """
    if kind.reverse:
        p, q = q, p
    if kind.kind == "kl_gaussian":
        if isinstance(p, DiagGaussianVec):
            return kl_diag_gaussian(p, q)
        return kl_gaussian(p, q)
    if kind.kind == "kl_categorical":
        if isinstance(p, Dirac) or isinstance(q, Dirac) or (
            isinstance(p, Categorical) and p.support is not None
        ) or (isinstance(q, Categorical) and q.support is not None):
            support = _discrete_support(p, q)
            p, q = as_categorical(p, support), as_categorical(q, support)
        return kl_categorical(p, q, smoothing=kind.smoothing, allow_inf=True)
    if kind.kind == "mmd_rbf":
        bw = kind.bandwidth if kind.bandwidth is not None else median_heuristic_bandwidth(p.samples)
        return mmd2_rbf(p.samples, q.samples, bw)
    raise PreconditionError(kind.kind)

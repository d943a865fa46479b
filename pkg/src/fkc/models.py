"""Analytic score oracles: diffused Gaussian mixtures and the LJ-13 energy.

Every model here is exact, so the weight formulas in :mod:`fkc.rules` can be
checked against ground truth rather than against a learned network.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, ParameterError, ShapeError, SingularityError
from .schedules import NoiseSchedule

DENSITY = "density"
SCORE = "score"
LAPLACIAN = "laplacian"

LOG_2PI = math.log(2.0 * math.pi)


class ScoreModel(Protocol):
    """Diffused density evaluated in generation time ``t``."""

    schedule: NoiseSchedule
    capabilities: frozenset

    def log_density(self, x, t): ...

    def score(self, x, t): ...

    def laplacian_log_density(self, x, t): ...


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Mixture of isotropic Gaussians ``sum_k w_k N(mu_k, v_k I)``."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        v = np.broadcast_to(np.asarray(self.variances, dtype=float), w.shape).copy()
        if mu.shape[0] != w.shape[0]:
            raise ShapeError("weights and means disagree on the number of components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError(f"weights must be a probability vector (sum={w.sum()!r})")
        if np.any(v <= 0):
            raise ParameterError("component variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", v)

    @classmethod
    def from_log_weights(cls, log_weights, means, variances):
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - logsumexp(lw))
        return cls(w / w.sum(), means, variances)

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def log_prob(self, x):
        return _mixture_terms(x, _log(self.weights), self.means, self.variances)[0]

    def to_dict(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"], float), np.asarray(d["means"], float),
                   np.asarray(d["variances"], float))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def gaussian(mean, variance) -> GaussianMixture:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return GaussianMixture(np.ones(1), mean[None, :], np.array([float(variance)]))


def gmm40(seed=0, n_modes=40, box=40.0, variance=1.0, dim=2) -> GaussianMixture:
    """Benchmark layout: equal-weight modes uniform in ``[-box, box]^dim``."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(-box, box, size=(n_modes, dim))
    return GaussianMixture(np.full(n_modes, 1.0 / n_modes), means, np.full(n_modes, variance))


def _mixture_terms(x, log_w, means, variances):
    """Log-density, responsibilities and squared distances to each mean.

    Loops run over coordinates rather than building a ``(..., K, d)`` tensor;
    this is faster for low ``d`` and keeps every row's arithmetic independent
    of the batch size.
    """
    x = np.asarray(x, dtype=float)
    d = means.shape[1]
    if x.shape[-1:] != (d,):
        raise ShapeError(f"expected trailing dimension {d}, got shape {x.shape}")
    sq = 0.0
    for j in range(d):
        diff = means[:, j] - x[..., j, None]              # (..., K)
        sq = sq + diff * diff
    log_comp = log_w - 0.5 * d * (LOG_2PI + np.log(variances)) - 0.5 * sq / variances
    # one exp pass serves both the log-sum-exp and the responsibilities
    top = np.max(log_comp, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(log_comp - top)
    total = np.sum(e, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        log_p = (top + np.log(total))[..., 0]
    return log_p, e / total, sq


def _mixture_score(x, resp, means, variances):
    """``sum_k r_k (mu_k - x) / v_k`` computed coordinate by coordinate."""
    x = np.asarray(x, dtype=float)
    rv = resp / variances
    mass = np.sum(rv, axis=-1)
    return np.stack([np.sum(rv * means[:, j], axis=-1) - mass * x[..., j]
                     for j in range(means.shape[1])], axis=-1)


class DiffusedGaussianMixture:
    """A Gaussian mixture pushed through the schedule's noising kernel.

    At generation time ``t`` the component means become ``a * mu`` and the
    variances ``a**2 v + s2`` where ``(a, s2)`` are the schedule's marginal
    coefficients at noising time ``1 - t``.
    """

    capabilities = frozenset({DENSITY, SCORE, LAPLACIAN})

    def __init__(self, gmm: GaussianMixture, schedule: NoiseSchedule):
        if gmm.dim != schedule.dim:
            raise ShapeError(f"mixture dim {gmm.dim} != schedule dim {schedule.dim}")
        self.gmm = gmm
        self.schedule = schedule
        self._log_w = _log(gmm.weights)

    def marginal(self, t) -> GaussianMixture:
        a, s2 = self.schedule.gen_marginal_coefficients(t)
        return GaussianMixture(self.gmm.weights, a * self.gmm.means,
                               a * a * self.gmm.variances + s2)

    def _params(self, t):
        a, s2 = self.schedule.gen_marginal_coefficients(t)
        return a * self.gmm.means, a * a * self.gmm.variances + s2

    def log_density(self, x, t):
        mu, v = self._params(t)
        return _mixture_terms(x, self._log_w, mu, v)[0]

    def score(self, x, t):
        return self.score_and_log_density(x, t)[0]

    def laplacian_log_density(self, x, t):
        # Delta log p = sum_k r_k (|mu_k - x|^2 / v_k^2 - d / v_k) - |score|^2
        mu, v = self._params(t)
        _, resp, sq = _mixture_terms(x, self._log_w, mu, v)
        s = _mixture_score(x, resp, mu, v)
        d = mu.shape[1]
        second = np.sum(resp * (sq / (v * v) - d / v), axis=-1)
        return second - np.sum(s * s, axis=-1)

    def score_and_log_density(self, x, t):
        mu, v = self._params(t)
        log_p, resp, _ = _mixture_terms(x, self._log_w, mu, v)
        return _mixture_score(x, resp, mu, v), log_p


class DiffusedGaussian(DiffusedGaussianMixture):
    """Single diffused Gaussian ``N(mean, variance I)``."""

    def __init__(self, mean, variance, schedule: NoiseSchedule):
        super().__init__(gaussian(mean, variance), schedule)


def diffused_log_density(m: DiffusedGaussianMixture, x, t):
    return m.log_density(x, t)


def diffused_score(m: DiffusedGaussianMixture, x, t):
    return m.score(x, t)


def diffused_laplacian_log(m: DiffusedGaussianMixture, x, t):
    return m.laplacian_log_density(x, t)


def gmm_product(g1: GaussianMixture, g2: GaussianMixture, max_components=250_000) -> GaussianMixture:
    """Exact normalized mixture proportional to ``g1(x) * g2(x)``."""
    if g1.dim != g2.dim:
        raise ShapeError("mixtures live in different dimensions")
    n = g1.n_components * g2.n_components
    if n > max_components:
        raise CapacityError(f"product has {n} components (cap {max_components})")
    d = g1.dim
    v1 = g1.variances[:, None]
    v2 = g2.variances[None, :]
    var = v1 * v2 / (v1 + v2)
    means = var[..., None] * (g1.means[:, None, :] / v1[..., None] + g2.means[None, :, :] / v2[..., None])
    sq = np.sum((g1.means[:, None, :] - g2.means[None, :, :]) ** 2, axis=-1)
    # Gaussian product constant: N(mu1 | mu2, (v1 + v2) I)
    log_c = -0.5 * d * (LOG_2PI + np.log(v1 + v2)) - 0.5 * sq / (v1 + v2)
    log_w = _log(g1.weights)[:, None] + _log(g2.weights)[None, :] + log_c
    return GaussianMixture.from_log_weights(log_w.ravel(), means.reshape(-1, d), var.ravel())


def gmm_integer_power(g: GaussianMixture, beta: int, max_components=250_000) -> GaussianMixture:
    """Exact mixture proportional to ``g(x) ** beta`` for integer ``beta >= 1``.

    The result has one component per multi-index ``(k_1, ..., k_beta)``.
    """
    if int(beta) != beta or beta < 1:
        raise ParameterError("beta must be a positive integer")
    beta = int(beta)
    if g.n_components**beta > max_components:
        raise CapacityError(f"g**{beta} has {g.n_components ** beta} components (cap {max_components})")
    out = GaussianMixture.from_log_weights(_log(g.weights), g.means, g.variances)
    for _ in range(beta - 1):
        out = gmm_product(out, g, max_components)
    return out


def sample_mixture(g: GaussianMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws, shape ``(n, dim)``."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    k = rng.choice(g.n_components, size=n, p=g.weights)
    eps = rng.standard_normal((n, g.dim))
    return g.means[k] + np.sqrt(g.variances[k])[:, None] * eps


# -- Lennard-Jones ----------------------------------------------------------

@dataclass(frozen=True)
class LennardJonesSystem:
    """LJ cluster with a harmonic centre-of-mass restraint.

    ``E = eps / (2 tau) * sum_{i != j} ((r_m / d_ij)^12 - (r_m / d_ij)^6)
    + c / 2 * sum_i |x_i - x_com|^2``.
    """

    n_particles: int = 13
    spatial_dim: int = 3
    r_m: float = 1.0
    tau: float = 1.0
    eps: float = 2.0
    c: float = 1.0
    min_distance: float = 1e-9

    @property
    def n_coords(self):
        return self.n_particles * self.spatial_dim

    def _positions(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] == self.n_coords and x.shape[-2:] != (self.n_particles, self.spatial_dim):
            x = x.reshape(x.shape[:-1] + (self.n_particles, self.spatial_dim))
        if x.shape[-2:] != (self.n_particles, self.spatial_dim):
            raise ShapeError(f"expected (..., {self.n_particles}, {self.spatial_dim}) coordinates")
        return x

    def _pairs(self, pos):
        diff = pos[..., :, None, :] - pos[..., None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        off = ~np.eye(self.n_particles, dtype=bool)
        if np.any(dist[..., off] < self.min_distance):
            raise SingularityError("coincident particles in LJ configuration")
        # diagonal set to r_m so its pair term is exactly zero
        dist = np.where(off, dist, self.r_m)
        return diff, dist

    def lj_energy(self, x):
        pos = self._positions(x)
        _, dist = self._pairs(pos)
        r6 = (self.r_m / dist) ** 6
        return self.eps / (2 * self.tau) * np.sum(r6 * r6 - r6, axis=(-2, -1))

    def oscillator_energy(self, x):
        pos = self._positions(x)
        centred = pos - pos.mean(axis=-2, keepdims=True)
        return 0.5 * np.sum(centred * centred, axis=(-2, -1))

    def energy(self, x):
        return self.lj_energy(x) + self.c * self.oscillator_energy(x)

    def energy_grad(self, x):
        """Analytic gradient, same shape as the ``(..., n, 3)`` positions."""
        pos = self._positions(x)
        diff, dist = self._pairs(pos)
        r6 = (self.r_m / dist) ** 6
        # d/dd of (r^12 - r^6), divided by d to scale the displacement vector
        dphi_over_d = (-12.0 * r6 * r6 + 6.0 * r6) / (dist * dist)
        g_lj = (self.eps / self.tau) * np.sum(dphi_over_d[..., None] * diff, axis=-2)
        centred = pos - pos.mean(axis=-2, keepdims=True)
        return g_lj + self.c * centred


def lj_energy(x, system: LennardJonesSystem | None = None):
    return (system or LennardJonesSystem()).energy(x)


def lj_energy_grad(x, system: LennardJonesSystem | None = None):
    return (system or LennardJonesSystem()).energy_grad(x)


def pairwise_distances(x, spatial_dim=3):
    """Flattened upper-triangle interparticle distances per configuration."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1] // spatial_dim
    pos = x.reshape(x.shape[:-1] + (n, spatial_dim))
    iu = np.triu_indices(n, k=1)
    diff = pos[..., iu[0], :] - pos[..., iu[1], :]
    return np.sqrt(np.sum(diff * diff, axis=-1))

"""Weighted SDEs for annealed, product, geometric and reward-tilted targets.

Every builder returns a :class:`WeightedSde` whose drift, diffusion scale and
(un-centred) weight rate ``g_t(x)`` make the weighted particle density follow
the target path.  All functions take generation time ``t`` (``t = 0`` noise,
``t = 1`` data).  The Feynman-Kac residual oracle :func:`pde_residual`
checks any assembled SDE against an analytic density path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import CapabilityError, ConfigurationError, ParameterError
from .models import DENSITY, LAPLACIAN, SCORE
from .schedules import NoiseSchedule

Array = np.ndarray


def _sqnorm(v):
    return np.sum(v * v, axis=-1)


def _dot(u, v):
    return np.sum(u * v, axis=-1)


@dataclass(frozen=True)
class WeightedSde:
    """Drift ``v_t``, diffusion ``zeta * sigma_t`` and weight rate ``g_t``.

    ``fields(x, t)`` returns ``(drift, weight_rate)`` in one pass so the
    scores are evaluated once per step.  ``init_exponent`` is the total power
    the target applies to the schedule's reference Gaussian at ``t = 0``;
    the particle engine starts from ``N(0, reference_variance / init_exponent)``.
    """

    fields: Callable[[Array, float], tuple]
    diffusion_scale: Callable[[float], float]
    schedule: NoiseSchedule
    target_logdensity_unnorm: Optional[Callable[[Array, float], Array]] = None
    init_exponent: float = 1.0
    name: str = ""
    params: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.schedule.dim

    def drift(self, x, t):
        return self.fields(x, t)[0]

    def weight_rate(self, x, t):
        return self.fields(x, t)[1]

    def init_variance(self):
        return self.schedule.reference_variance() / self.init_exponent


@dataclass(frozen=True)
class AnnealSpec:
    """Inverse temperature ``beta`` (constant or ``t -> beta_t``) and family parameter ``a``.

    ``a = 0`` gives the target-score SDE, ``a = 1/2`` the tempered-noise SDE.
    A callable ``beta`` needs ``dbeta_dt``.
    """

    beta: float | Callable[[float], float] = 1.0
    a: float = 0.0
    dbeta_dt: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if callable(self.beta):
            if self.dbeta_dt is None:
                raise ParameterError("a time-dependent beta needs dbeta_dt")
            for t in np.linspace(0.0, 1.0, 101):
                self._check(float(self.beta(t)))
        else:
            self._check(float(self.beta))

    def _check(self, beta):
        if not beta > 0:
            raise ParameterError(f"annealing needs beta > 0, got {beta}")
        if (beta + (1.0 - beta) * 2.0 * self.a) / beta < 0:
            raise ParameterError(
                f"(beta + (1 - beta) 2a) / beta < 0 for beta={beta}, a={self.a}")

    @property
    def time_dependent(self):
        return callable(self.beta)

    def beta_at(self, t):
        return float(self.beta(t)) if callable(self.beta) else float(self.beta)

    def dbeta_at(self, t):
        return float(self.dbeta_dt(t)) if self.dbeta_dt is not None else 0.0

    def coefficients(self, t):
        """``(eta, zeta)`` at time ``t``."""
        b = self.beta_at(t)
        return b + (1.0 - b) * self.a, math.sqrt((b + (1.0 - b) * 2.0 * self.a) / b)


def _require(model, capability, what):
    if capability not in getattr(model, "capabilities", frozenset({SCORE})):
        raise CapabilityError(f"{what} needs a model with '{capability}'")


def _shared_schedule(models, sched):
    scheds = [m.schedule for m in models]
    if sched is None:
        sched = scheds[0]
    for s in scheds:
        if s != sched:
            raise ConfigurationError("all composed models must share one noise schedule")
    return sched


def _has_density(models):
    return all(DENSITY in getattr(m, "capabilities", ()) for m in models)


def build_annealed(model, sched: NoiseSchedule | None = None, spec: AnnealSpec = AnnealSpec()) -> WeightedSde:
    """Annealed target ``q_t^beta`` via the ``a``-family of weighted SDEs."""
    sched = _shared_schedule([model], sched)
    if spec.time_dependent:
        _require(model, DENSITY, "time-dependent annealing")

    def fields(x, t):
        beta = spec.beta_at(t)
        eta, _ = spec.coefficients(t)
        f, div_f = sched.gen_drift(x, t)
        sig2 = sched.gen_sigma(t) ** 2
        if spec.time_dependent:
            s, log_q = model.score_and_log_density(x, t)
        else:
            s = model.score(x, t)
        drift = -f + eta * sig2 * s
        g = (beta - 1.0) * (div_f + 0.5 * sig2 * beta * _sqnorm(s))
        if spec.time_dependent:
            g = g + spec.dbeta_at(t) * log_q
        return drift, g

    def scale(t):
        return spec.coefficients(t)[1] * sched.gen_sigma(t)

    logp = None
    if _has_density([model]):
        def logp(x, t):
            return spec.beta_at(t) * model.log_density(x, t)

    return WeightedSde(fields, scale, sched, logp, init_exponent=spec.beta_at(0.0),
                       name="annealed", params={"beta": spec.beta, "a": spec.a})


def build_product(m1, m2, sched: NoiseSchedule | None = None, spec: AnnealSpec = AnnealSpec()) -> WeightedSde:
    """Product of experts ``(q1 q2)^beta``."""
    sched = _shared_schedule([m1, m2], sched)
    if spec.time_dependent:
        _require(m1, DENSITY, "time-dependent annealing")
        _require(m2, DENSITY, "time-dependent annealing")

    def fields(x, t):
        beta = spec.beta_at(t)
        eta, _ = spec.coefficients(t)
        f, div_f = sched.gen_drift(x, t)
        sig2 = sched.gen_sigma(t) ** 2
        if spec.time_dependent:
            s1, l1 = m1.score_and_log_density(x, t)
            s2, l2 = m2.score_and_log_density(x, t)
        else:
            s1, s2 = m1.score(x, t), m2.score(x, t)
        ssum = s1 + s2
        drift = -f + eta * sig2 * ssum
        g = (beta * (beta - 1.0) * 0.5 * sig2 * _sqnorm(ssum)
             + beta * sig2 * _dot(s1, s2) + (2.0 * beta - 1.0) * div_f)
        if spec.time_dependent:
            g = g + spec.dbeta_at(t) * (l1 + l2)
        return drift, g

    def scale(t):
        return spec.coefficients(t)[1] * sched.gen_sigma(t)

    logp = None
    if _has_density([m1, m2]):
        def logp(x, t):
            return spec.beta_at(t) * (m1.log_density(x, t) + m2.log_density(x, t))

    return WeightedSde(fields, scale, sched, logp, init_exponent=2.0 * spec.beta_at(0.0),
                       name="product", params={"beta": spec.beta, "a": spec.a})


def geometric_factors(beta, a):
    """``(drift factor, noise variance factor)`` for the geometric-average family."""
    if beta == 0:
        if a != 0:
            raise ParameterError("beta = 0 is only admissible with a = 0")
        return 1.0, 1.0
    ratio = a * (1.0 - beta) / beta
    if 1.0 + 2.0 * ratio < 0:
        raise ParameterError(f"(beta + 2a(1 - beta)) / beta < 0 for beta={beta}, a={a}")
    return 1.0 + ratio, 1.0 + 2.0 * ratio


def build_geometric(m1, m2, sched: NoiseSchedule | None = None, beta: float = 0.5, a: float = 0.0) -> WeightedSde:
    """Geometric average ``q1^(1-beta) q2^beta`` (classifier-free guidance for a = 0)."""
    sched = _shared_schedule([m1, m2], sched)
    drift_factor, noise_factor = geometric_factors(beta, a)
    noise_factor = math.sqrt(noise_factor)

    def fields(x, t):
        f, _ = sched.gen_drift(x, t)
        sig2 = sched.gen_sigma(t) ** 2
        s1, s2 = m1.score(x, t), m2.score(x, t)
        drift = -f + sig2 * drift_factor * ((1.0 - beta) * s1 + beta * s2)
        # The cross term cancels once the product-diffusion rule is applied
        # with the matched noise sigma^2 * noise_factor, so g does not depend on a.
        g = 0.5 * sig2 * beta * (beta - 1.0) * _sqnorm(s1 - s2)
        return drift, g

    def scale(t):
        return noise_factor * sched.gen_sigma(t)

    logp = None
    if _has_density([m1, m2]):
        def logp(x, t):
            return (1.0 - beta) * m1.log_density(x, t) + beta * m2.log_density(x, t)

    return WeightedSde(fields, scale, sched, logp, init_exponent=1.0,
                       name="geometric", params={"beta": beta, "a": a})


def build_weighted_product(models: Sequence, betas: Sequence[float], sched: NoiseSchedule | None = None) -> WeightedSde:
    """Weighted product ``prod_i q_i^beta_i`` simulated with the target score."""
    if len(models) == 0:
        raise ParameterError("weighted product needs at least one model")
    if len(models) != len(betas):
        raise ConfigurationError("models and betas differ in length")
    sched = _shared_schedule(models, sched)
    betas = [float(b) for b in betas]
    total = sum(betas)

    def fields(x, t):
        f, div_f = sched.gen_drift(x, t)
        sig2 = sched.gen_sigma(t) ** 2
        scores = [m.score(x, t) for m in models]
        combo = sum(b * s for b, s in zip(betas, scores))
        drift = -f + sig2 * combo
        g = ((total - 1.0) * div_f + 0.5 * sig2 * _sqnorm(combo)
             - 0.5 * sig2 * sum(b * _sqnorm(s) for b, s in zip(betas, scores)))
        return drift, g

    logp = None
    if _has_density(models):
        def logp(x, t):
            return sum(b * m.log_density(x, t) for b, m in zip(betas, models))

    return WeightedSde(fields, sched.gen_sigma, sched, logp, init_exponent=total if total > 0 else 1.0,
                       name="weighted_product", params={"betas": betas})


def build_poe_cfg(uncond, cond1, cond2, sched: NoiseSchedule | None = None, beta: float = 1.0) -> WeightedSde:
    """Product of two guided models ``q^(2(1-beta)) (q1 q2)^beta``."""
    sched = _shared_schedule([uncond, cond1, cond2], sched)

    def fields(x, t):
        f, div_f = sched.gen_drift(x, t)
        sig2 = sched.gen_sigma(t) ** 2
        s0, s1, s2 = uncond.score(x, t), cond1.score(x, t), cond2.score(x, t)
        v1 = (1.0 - beta) * s0 + beta * s1
        v2 = (1.0 - beta) * s0 + beta * s2
        drift = -f + sig2 * (v1 + v2)
        g = (0.5 * sig2 * beta * (beta - 1.0) * (_sqnorm(s0 - s1) + _sqnorm(s0 - s2))
             + sig2 * _dot(v1, v2) + div_f)
        return drift, g

    logp = None
    if _has_density([uncond, cond1, cond2]):
        def logp(x, t):
            return (2.0 * (1.0 - beta) * uncond.log_density(x, t)
                    + beta * (cond1.log_density(x, t) + cond2.log_density(x, t)))

    return WeightedSde(fields, sched.gen_sigma, sched, logp, init_exponent=2.0,
                       name="poe_cfg", params={"beta": beta})


def build_reward_tilted(model, sched: NoiseSchedule | None, reward: Callable, grad_reward: Callable,
                        beta_schedule: float | Callable[[float], float] = 1.0,
                        dbeta_dt: Optional[Callable[[float], float]] = None) -> WeightedSde:
    """Reward-tilted target ``q_t(x) exp(beta_t r(x))``."""
    sched = _shared_schedule([model], sched)
    if callable(beta_schedule):
        if dbeta_dt is None:
            raise ParameterError("a time-dependent beta needs dbeta_dt")
        beta_at = beta_schedule
        dbeta_at = dbeta_dt
    else:
        const = float(beta_schedule)
        beta_at = lambda t: const  # noqa: E731
        dbeta_at = lambda t: 0.0  # noqa: E731

    def fields(x, t):
        b = float(beta_at(t))
        f, _ = sched.gen_drift(x, t)
        sig2 = sched.gen_sigma(t) ** 2
        s = model.score(x, t)
        gr = b * np.asarray(grad_reward(x), dtype=float)
        drift = -f + sig2 * (s + 0.5 * gr)
        g = float(dbeta_at(t)) * reward(x) - _dot(gr, f) + 0.5 * sig2 * _dot(gr, s)
        return drift, g

    logp = None
    if _has_density([model]):
        def logp(x, t):
            return model.log_density(x, t) + float(beta_at(t)) * reward(x)

    return WeightedSde(fields, sched.gen_sigma, sched, logp, init_exponent=1.0,
                       name="reward_tilted", params={})


def build_base(model, sched: NoiseSchedule | None = None) -> WeightedSde:
    """The model's own denoising SDE (zero weights)."""
    return build_annealed(model, sched, AnnealSpec(beta=1.0))


# -- conversion rules --------------------------------------------------------

class Conversion(NamedTuple):
    """Simulated term after conversion and its additive weight-rate contribution."""

    simulated: str
    scale: float
    rate: Array


def _need(inputs, term, *names):
    missing = [n for n in names if inputs.get(n) is None]
    if missing:
        raise CapabilityError(f"{term} needs {', '.join(missing)}")
    return [inputs[n] for n in names]


def conversion_weight(term: str, **inputs) -> Conversion:
    """One row of the conversion table for annealed or product densities.

    Rows: ``anneal_continuity`` (beta, div_v), ``anneal_continuity_scaled``
    (beta, score, v), ``anneal_diffusion`` (beta, sigma, score),
    ``anneal_diffusion_scaled`` (beta, sigma, laplacian), ``anneal_reweight``
    (beta, g), ``anneal_time`` (dbeta_dt, log_q), ``product_continuity``
    (score1, score2, v1, v2), ``product_diffusion`` (sigma, score1, score2),
    ``product_reweight`` (g1, g2).  Correctors from several rows add up.
    """
    if term == "anneal_continuity":
        beta, div_v = _need(inputs, term, "beta", "div_v")
        return Conversion("v dt", 1.0, -(beta - 1.0) * np.asarray(div_v, float))
    if term == "anneal_continuity_scaled":
        beta, s, v = _need(inputs, term, "beta", "score", "v")
        return Conversion("v dt", beta, beta * (beta - 1.0) * _dot(np.asarray(s, float), np.asarray(v, float)))
    if term == "anneal_diffusion":
        beta, sigma, s = _need(inputs, term, "beta", "sigma", "score")
        return Conversion("sigma dW", 1.0, -beta * (beta - 1.0) * 0.5 * sigma**2 * _sqnorm(np.asarray(s, float)))
    if term == "anneal_diffusion_scaled":
        beta, sigma, lap = _need(inputs, term, "beta", "sigma", "laplacian")
        return Conversion("sigma dW", 1.0 / math.sqrt(beta), (beta - 1.0) * 0.5 * sigma**2 * np.asarray(lap, float))
    if term == "anneal_reweight":
        beta, g = _need(inputs, term, "beta", "g")
        return Conversion("reweight", 1.0, beta * np.asarray(g, float))
    if term == "anneal_time":
        db, log_q = _need(inputs, term, "dbeta_dt", "log_q")
        return Conversion("reweight", 1.0, db * np.asarray(log_q, float))
    if term == "product_continuity":
        s1, s2, v1, v2 = (np.asarray(a, float) for a in _need(inputs, term, "score1", "score2", "v1", "v2"))
        return Conversion("(v1 + v2) dt", 1.0, _dot(s1, v2) + _dot(s2, v1))
    if term == "product_diffusion":
        sigma, s1, s2 = _need(inputs, term, "sigma", "score1", "score2")
        return Conversion("sigma dW", 1.0, -sigma**2 * _dot(np.asarray(s1, float), np.asarray(s2, float)))
    if term == "product_reweight":
        g1, g2 = _need(inputs, term, "g1", "g2")
        return Conversion("reweight", 1.0, np.asarray(g1, float) + np.asarray(g2, float))
    raise ParameterError(f"unknown conversion term {term!r}")


def model_laplacian(model, x, t):
    """Laplacian of ``log q_t`` with a capability check."""
    _require(model, LAPLACIAN, "the scaled diffusion rule")
    return model.laplacian_log_density(x, t)


# -- Feynman-Kac residual oracle ----------------------------------------------

class PdeResidual(NamedTuple):
    residual: Array
    max_abs: float
    nodes: Array


def _lattice(bounds, h):
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    axes = [np.arange(lo, hi + 0.5 * h, h) for lo, hi in bounds]
    if any(len(ax) < 5 for ax in axes):
        raise ParameterError("grid too coarse for the finite-difference stencil")
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def _d1(a, axis, h):
    return (np.roll(a, -1, axis) - np.roll(a, 1, axis)) / (2.0 * h)


def _d2(a, axis, h):
    return (np.roll(a, -1, axis) - 2.0 * a + np.roll(a, 1, axis)) / (h * h)


def pde_residual(sde: WeightedSde, target_logp: Callable | None, bounds, t: float, dt: float, h: float) -> PdeResidual:
    """Residual of the Feynman-Kac PDE for ``sde`` along a density path.

    ``R = d/dt log p - [(-div(p v) + D/2 Lap p) / p + g - E_p g]`` with
    ``D = diffusion_scale(t)^2``, all derivatives by central differences on a
    uniform lattice of spacing ``h`` over ``bounds`` (one ``(lo, hi)`` pair per
    axis).  The path is normalized by quadrature on the lattice, so
    ``target_logp`` may be unnormalized.  Only interior nodes are reported.
    """
    target_logp = target_logp or sde.target_logdensity_unnorm
    if target_logp is None:
        raise CapabilityError("pde_residual needs an analytic target log-density")
    if dt <= 0 or h <= 0:
        raise ParameterError("dt and h must be positive")
    X = _lattice(bounds, h)
    ndim = X.shape[-1]
    log_cell = ndim * math.log(h)

    def normalized(tt):
        L = np.asarray(target_logp(X, tt), dtype=float)
        return L - (logsumexp(L) + log_cell)

    dlogp_dt = (normalized(t + dt) - normalized(t - dt)) / (2.0 * dt)
    ell = normalized(t)
    drift, g = sde.fields(X, t)
    D = sde.diffusion_scale(t) ** 2

    grad = np.stack([_d1(ell, k, h) for k in range(ndim)], axis=-1)
    lap = sum(_d2(ell, k, h) for k in range(ndim))
    div_v = sum(_d1(drift[..., k], k, h) for k in range(ndim))
    fp_over_p = -(div_v + np.sum(grad * drift, axis=-1)) + 0.5 * D * (lap + np.sum(grad * grad, axis=-1))

    p = np.exp(ell)
    mean_g = np.sum(p * g) * h**ndim
    R = dlogp_dt - (fp_over_p + g - mean_g)
    interior = tuple(slice(1, -1) for _ in range(ndim))
    R = R[interior]
    return PdeResidual(R, float(np.max(np.abs(R))), X[interior])

"""Reference noising dynamics shared by every composed model.

The functions in this module are indexed by the *noising clock* ``tau``
(``tau = 0`` is data, ``tau = 1`` is the reference Gaussian).  Samplers run
in generation time ``t = 1 - tau``; :meth:`NoiseSchedule.gen_sigma` and
:meth:`NoiseSchedule.gen_drift` do the conversion so callers never flip
the clock by hand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError, ShapeError, UnsupportedKindError

VE = "ve"
VP = "vp"
_TIME_TOL = 1e-12


def _check_time(tau):
    if not (-_TIME_TOL <= tau <= 1.0 + _TIME_TOL):
        raise DomainError(f"time {tau!r} outside [0, 1]")
    return min(max(float(tau), 0.0), 1.0)


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-exploding geometric or variance-preserving linear-beta schedule.

    VE: ``sigma(tau) = sigma_min * (sigma_max / sigma_min) ** tau`` and zero drift.
    VP: ``f(x) = -beta_hat(tau) x / 2`` and ``sigma(tau) = sqrt(beta_hat(tau))`` with
    ``beta_hat`` linear between ``beta_min`` and ``beta_max``.
    """

    kind: str = VE
    dim: int = 1
    sigma_min: float = 0.01
    sigma_max: float = 500.0
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if self.kind not in (VE, VP):
            raise ParameterError(f"unknown schedule kind {self.kind!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ParameterError("dim must be a positive integer")
        if self.kind == VE:
            if not (0 < self.sigma_min < self.sigma_max):
                raise ParameterError("VE schedule needs 0 < sigma_min < sigma_max")
        elif not (0 < self.beta_min and 0 < self.beta_max):
            raise ParameterError("VP schedule needs positive beta endpoints")

    @classmethod
    def ve(cls, sigma_min=0.01, sigma_max=500.0, dim=1):
        return cls(kind=VE, dim=dim, sigma_min=sigma_min, sigma_max=sigma_max)

    @classmethod
    def vp(cls, beta_min=0.1, beta_max=20.0, dim=1):
        return cls(kind=VP, dim=dim, beta_min=beta_min, beta_max=beta_max)

    def to_dict(self):
        if self.kind == VE:
            return {"kind": VE, "dim": self.dim, "sigma_min": self.sigma_min,
                    "sigma_max": self.sigma_max}
        return {"kind": VP, "dim": self.dim, "beta_min": self.beta_min,
                "beta_max": self.beta_max}

    # -- noising clock -----------------------------------------------------

    def beta_hat(self, tau):
        """Continuous-time VP rate ``beta_hat(tau)``."""
        if self.kind != VP:
            raise UnsupportedKindError("beta_hat is only defined for VP schedules")
        tau = _check_time(tau)
        return self.beta_min + (self.beta_max - self.beta_min) * tau

    def integrated_beta(self, tau):
        if self.kind != VP:
            raise UnsupportedKindError("integrated_beta is only defined for VP schedules")
        tau = _check_time(tau)
        return self.beta_min * tau + 0.5 * (self.beta_max - self.beta_min) * tau**2

    def sigma(self, tau):
        tau = _check_time(tau)
        if self.kind == VE:
            return self.sigma_min * (self.sigma_max / self.sigma_min) ** tau
        return math.sqrt(self.beta_hat(tau))

    def drift(self, x, tau):
        """Noising drift ``f(x)`` and its divergence (constant in ``x``)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ShapeError(f"expected trailing dimension {self.dim}, got shape {x.shape}")
        tau = _check_time(tau)
        if self.kind == VE:
            return np.zeros_like(x), 0.0
        b = self.beta_hat(tau)
        return -0.5 * b * x, -0.5 * self.dim * b

    def accumulated_variance(self, tau):
        """Variance added to a point mass between data time and ``tau``.

        VE uses the closed form of the integral of ``sigma(s)**2``; VP returns
        ``1 - exp(-int beta_hat)``.
        """
        tau = _check_time(tau)
        if self.kind == VE:
            log_ratio = math.log(self.sigma_max / self.sigma_min)
            return self.sigma_min**2 / (2.0 * log_ratio) * math.expm1(2.0 * log_ratio * tau)
        return -math.expm1(-self.integrated_beta(tau))

    def marginal_coefficients(self, tau):
        """``(scale, added_variance)`` such that ``x_tau = scale * x_0 + sqrt(var) * eps``."""
        if self.kind == VE:
            return 1.0, self.accumulated_variance(tau)
        return vp_marginal_params(self, tau)

    def reference_variance(self):
        """Per-axis variance of the Gaussian the sampler starts from."""
        if self.kind == VE:
            return self.accumulated_variance(1.0)
        return 1.0

    # -- generation clock --------------------------------------------------

    def gen_sigma(self, t):
        """Diffusion coefficient of the generation-time SDE at ``t``."""
        return self.sigma(1.0 - _check_time(t))

    def gen_drift(self, x, t):
        """Noising drift ``f`` and divergence evaluated at generation time ``t``."""
        return self.drift(x, 1.0 - _check_time(t))

    def gen_marginal_coefficients(self, t):
        return self.marginal_coefficients(1.0 - _check_time(t))


def sigma_at(s: NoiseSchedule, t: float) -> float:
    """Noise scale of schedule ``s`` on its own clock."""
    return s.sigma(t)


def drift_at(s: NoiseSchedule, x, t: float):
    """``(f(x), div f)`` for schedule ``s``; VE returns zeros."""
    return s.drift(x, t)


def vp_marginal_params(s: NoiseSchedule, t: float):
    """``(alpha_t, sigma2_t)`` of the VP marginal ``q(x_t | x_0) = N(alpha x_0, sigma2)``."""
    if s.kind != VP:
        raise UnsupportedKindError("vp_marginal_params requires a VP schedule")
    integral = s.integrated_beta(t)
    return math.exp(-0.5 * integral), -math.expm1(-integral)


def ddpm_alphas(s: NoiseSchedule, n_steps: int) -> np.ndarray:
    """Discrete DDPM ``prod sqrt(1 - beta_j)`` with ``beta_i = beta_hat(i/N) / N``.

    Entry ``i`` corresponds to time ``i / N``; entry 0 is 1.
    """
    if s.kind != VP:
        raise UnsupportedKindError("ddpm_alphas requires a VP schedule")
    i = np.arange(1, n_steps + 1)
    betas = (s.beta_min + (s.beta_max - s.beta_min) * i / n_steps) / n_steps
    if np.any(betas >= 1.0):
        raise ParameterError("discrete betas must be < 1; increase n_steps")
    return np.concatenate([[1.0], np.exp(np.cumsum(0.5 * np.log1p(-betas)))])

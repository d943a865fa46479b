"""Feynman-Kac corrected sampling from annealed, product and guided diffusion marginals."""

__version__ = "0.1.0"

from .engine import (ParticleEnsemble, ResamplingPolicy, SimulationConfig, SimulationResult, ess, simulate,
                     snis_expectation, snis_select, systematic_resample)
from .models import DiffusedGaussian, DiffusedGaussianMixture, GaussianMixture, LennardJonesSystem, gmm40
from .rules import (AnnealSpec, WeightedSde, build_annealed, build_geometric, build_poe_cfg, build_product,
                    build_reward_tilted, build_weighted_product)
from .schedules import NoiseSchedule

__all__ = [
    "AnnealSpec", "DiffusedGaussian", "DiffusedGaussianMixture", "GaussianMixture", "LennardJonesSystem",
    "NoiseSchedule", "ParticleEnsemble", "ResamplingPolicy", "SimulationConfig", "SimulationResult",
    "WeightedSde", "build_annealed", "build_geometric", "build_poe_cfg", "build_product",
    "build_reward_tilted", "build_weighted_product", "ess", "gmm40", "simulate", "snis_expectation",
    "snis_select", "systematic_resample",
]

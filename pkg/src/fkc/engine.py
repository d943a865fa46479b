"""Weighted particle simulation with SMC resampling.

Particles follow Euler-Maruyama steps of a :class:`~fkc.rules.WeightedSde`
while their log-weights integrate the mean-centred rate ``g_t``.  The
ensemble is corrected by systematic resampling, a jump process or
birth-death exponential clocks, or left weighted for self-normalized
importance sampling at the end.

Randomness is counter based.  Step ``s`` draws one ``K x d`` Gaussian block
from a Philox stream whose counter is set to ``s``, so a run is a pure
function of ``(seed, config, policy)`` whatever the thread count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateEnsembleError, ParameterError, SimulationError
from .rules import WeightedSde

SCHEMES = ("none", "snis_final", "systematic", "jump", "bdc_clocks")

_NOISE, _INIT, _RESAMPLE = 0, 1, 2


def _stream(seed, purpose, counter=0):
    key = np.random.SeedSequence([int(seed), purpose]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, counter, 0, 0]))


@dataclass(frozen=True)
class ResamplingPolicy:
    """Resampling scheme and the generation-time interval where it is active."""

    scheme: str = "systematic"
    t_min: float = 0.0
    t_max: float = 1.0
    cadence: int = 1
    ess_threshold: Optional[float] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ParameterError(f"unknown resampling scheme {self.scheme!r}")
        if not (0.0 <= self.t_min <= self.t_max <= 1.0):
            raise ParameterError("need 0 <= t_min <= t_max <= 1")
        if int(self.cadence) != self.cadence or self.cadence < 1:
            raise ParameterError("cadence must be an integer >= 1")
        if self.ess_threshold is not None and not (0.0 < self.ess_threshold <= 1.0):
            raise ParameterError("ess_threshold is a fraction in (0, 1]")

    def active(self, t):
        return self.t_min <= t <= self.t_max


@dataclass(frozen=True)
class SimulationConfig:
    """Particle count, time grid and numerical knobs.

    The grid is ``linspace(t_start, 1, n_steps + 1)`` unless ``time_grid``
    is given.  ``t_start > 0`` warm-starts from the reference Gaussian
    matched to the schedule's variance at that time.
    """

    n_particles: int = 1000
    n_steps: int = 1000
    seed: int = 0
    t_start: float = 0.0
    time_grid: Optional[tuple] = None
    clip: Optional[float] = None
    exclude_outside_from_logz: bool = False
    init_weights: bool = True

    def __post_init__(self):
        if self.n_particles < 1:
            raise ParameterError("n_particles must be >= 1")
        if self.n_steps < 1:
            raise ParameterError("n_steps must be >= 1")
        if not (0.0 <= self.t_start < 1.0):
            raise ParameterError("t_start must lie in [0, 1)")
        if self.clip is not None and self.clip <= 0:
            raise ParameterError("clip must be positive")
        if self.time_grid is not None:
            g = np.asarray(self.time_grid, dtype=float)
            if g.ndim != 1 or len(g) < 2 or np.any(np.diff(g) <= 0):
                raise ParameterError("time_grid must be strictly increasing")
            if abs(g[0] - self.t_start) > 1e-12 or abs(g[-1] - 1.0) > 1e-12:
                raise ParameterError("time_grid must span [t_start, 1] within 1e-12")

    def grid(self):
        if self.time_grid is not None:
            return np.asarray(self.time_grid, dtype=float)
        return np.linspace(self.t_start, 1.0, self.n_steps + 1)


@dataclass
class ParticleEnsemble:
    """Positions, selection log-weights and per-particle clock state."""

    positions: np.ndarray
    log_weights: np.ndarray
    t: float = 0.0
    clock_rate: Optional[np.ndarray] = None
    clock_threshold: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)

    @property
    def n_particles(self):
        return self.positions.shape[0]

    def normalized_weights(self):
        return _softmax(self.log_weights)

    def snapshot(self):
        return replace(self, positions=self.positions.copy(), log_weights=self.log_weights.copy(),
                       clock_rate=None if self.clock_rate is None else self.clock_rate.copy(),
                       clock_threshold=None if self.clock_threshold is None else self.clock_threshold.copy(),
                       stats=dict(self.stats))


@dataclass
class SimulationResult:
    ensemble: ParticleEnsemble
    weighted: ParticleEnsemble
    log_z: float
    diagnostics: dict


# -- weight utilities --------------------------------------------------------

def _check_finite_any(log_weights):
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(np.isfinite(lw)):
        raise DegenerateEnsembleError("every log-weight is -inf")
    return lw


def _softmax(log_weights):
    lw = _check_finite_any(log_weights)
    w = np.exp(lw - np.max(lw))
    return w / w.sum()


def ess(log_weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2`` in log space."""
    lw = _check_finite_any(log_weights)
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


def snis_expectation(ensemble: ParticleEnsemble, phi: Callable) -> float:
    """Self-normalized importance-sampling estimate of ``E[phi(x)]``."""
    w = ensemble.normalized_weights()
    vals = np.asarray(phi(ensemble.positions), dtype=float)
    return np.tensordot(w, vals, axes=(0, 0)) if vals.ndim > 1 else float(np.sum(w * vals))


def snis_select(ensemble: ParticleEnsemble, rng: np.random.Generator, size=None):
    """Categorical draw(s) of particle indices proportional to the weights."""
    w = ensemble.normalized_weights()
    return rng.choice(len(w), size=size, p=w)


def systematic_indices(weights, u: float) -> np.ndarray:
    """Systematic resampling with one offset ``u`` in ``[0, 1/K)``."""
    w = np.asarray(weights, dtype=float)
    K = len(w)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    positions = u + np.arange(K) / K
    return np.minimum(np.searchsorted(cdf, positions, side="right"), K - 1)


def systematic_resample(log_weights, rng: np.random.Generator) -> np.ndarray:
    """Parent indices by systematic resampling of ``softmax(log_weights)``."""
    w = _softmax(log_weights)
    return systematic_indices(w, rng.uniform(0.0, 1.0 / len(w)))


# -- jump and clock kernels ----------------------------------------------------

def _row_categorical(weights, u):
    """Inverse-cdf draw per row of ``weights`` for uniforms ``u`` of matching leading shape."""
    weights = np.asarray(weights, dtype=float)
    lead, K = weights.shape[:-1], weights.shape[-1]
    w2 = weights.reshape(-1, K)
    u2 = np.asarray(u, dtype=float).reshape(w2.shape[0], -1)
    cdf = np.cumsum(w2, axis=1)
    cdf = cdf / cdf[:, -1:]
    offsets = np.arange(w2.shape[0])[:, None]
    flat = (cdf + 2.0 * offsets).ravel()
    idx = np.searchsorted(flat, (u2 + 2.0 * offsets).ravel(), side="right")
    idx = idx.reshape(u2.shape) - K * offsets
    return np.minimum(idx, K - 1).reshape(lead + u2.shape[1:])


def jump_rates(g):
    """``(lambda, destination mass)`` = ``((g - mean g)^-, (g - mean g)^+)`` per row."""
    g = np.asarray(g, dtype=float)
    c = g - g.mean(axis=-1, keepdims=True)
    return np.maximum(-c, 0.0), np.maximum(c, 0.0)


def jump_parents(g, dt: float, rng: np.random.Generator):
    """Parent indices after one jump-process step, batched over leading axes.

    Particle ``k`` jumps with probability ``lambda_k dt`` to a particle drawn
    proportionally to the positive excess.  Steps with ``dt max(lambda) > 1``
    are split into equal substeps, carrying each particle's ``g`` along.
    Returns ``(parents, n_jumps)``.
    """
    g = np.asarray(g, dtype=float)
    K = g.shape[-1]
    parents = np.broadcast_to(np.arange(K), g.shape).copy()
    lam, _ = jump_rates(g)
    n_sub = max(1, math.ceil(dt * float(np.max(lam, initial=0.0))))
    h = dt / n_sub
    n_jumps = 0
    cur = g
    for _ in range(n_sub):
        lam, pos = jump_rates(cur)
        jump = rng.random(g.shape) < lam * h
        if not np.any(jump):
            continue
        mass = pos.sum(axis=-1, keepdims=True)
        assert np.all(mass[np.any(jump, axis=-1)] > 0), "positive rate without positive excess"
        safe = np.where(mass > 0, pos, 1.0)
        dest = _row_categorical(safe, rng.random(g.shape))
        new = np.where(jump, dest, np.broadcast_to(np.arange(K), g.shape))
        parents = np.take_along_axis(parents, new, axis=-1)
        cur = np.take_along_axis(cur, new, axis=-1)
        n_jumps += int(np.count_nonzero(jump))
    return parents, n_jumps


def bdc_parents(g, dt: float, accumulated, thresholds, rng: np.random.Generator):
    """Birth-death exponential clocks, batched over leading axes.

    Each particle integrates ``Lambda += lambda dt``; when ``Lambda`` passes
    its Exp(1) threshold the particle copies a donor drawn proportionally to
    the positive excess and restarts its clock.  Returns
    ``(parents, accumulated, thresholds, n_fired)``.
    """
    g = np.asarray(g, dtype=float)
    K = g.shape[-1]
    lam, pos = jump_rates(g)
    accumulated = accumulated + lam * dt
    fire = accumulated >= thresholds
    parents = np.broadcast_to(np.arange(K), g.shape).copy()
    n_fired = int(np.count_nonzero(fire))
    if n_fired:
        mass = pos.sum(axis=-1, keepdims=True)
        assert np.all(mass[np.any(fire, axis=-1)] > 0), "positive rate without positive excess"
        dest = _row_categorical(np.where(mass > 0, pos, 1.0), rng.random(g.shape))
        parents = np.where(fire, dest, parents)
        accumulated = np.where(fire, 0.0, accumulated)
        thresholds = np.where(fire, rng.exponential(size=g.shape), thresholds)
    return parents, accumulated, thresholds, n_fired


def jump_resample_step(ensemble: ParticleEnsemble, g, dt: float, rng) -> ParticleEnsemble:
    """Apply one jump-process step and equalize the log-weights."""
    parents, n = jump_parents(g, dt, rng)
    out = ensemble.snapshot()
    out.positions = ensemble.positions[parents]
    out.log_weights = np.zeros(ensemble.n_particles)
    out.stats["jumps"] = out.stats.get("jumps", 0) + n
    out.stats["parents"] = parents
    return out


def bdc_clocks_step(ensemble: ParticleEnsemble, g, dt: float, rng) -> ParticleEnsemble:
    """Advance the exponential clocks by ``dt`` and move the particles that fire."""
    K = ensemble.n_particles
    acc = ensemble.clock_rate if ensemble.clock_rate is not None else np.zeros(K)
    thr = ensemble.clock_threshold if ensemble.clock_threshold is not None else rng.exponential(size=K)
    parents, acc, thr, n = bdc_parents(g, dt, acc, thr, rng)
    out = ensemble.snapshot()
    out.positions = ensemble.positions[parents]
    out.log_weights = np.zeros(K)
    out.clock_rate, out.clock_threshold = acc, thr
    out.stats["jumps"] = out.stats.get("jumps", 0) + n
    out.stats["parents"] = parents
    return out


# -- driver ------------------------------------------------------------------

def _n_threads():
    try:
        return max(1, int(os.environ.get("FKC_THREADS", "1")))
    except ValueError:
        return 1


def _evaluate(sde: WeightedSde, x, t, pool, n_chunks):
    if pool is None:
        return sde.fields(x, t)
    chunks = np.array_split(np.arange(len(x)), n_chunks)
    parts = list(pool.map(lambda idx: sde.fields(x[idx], t), chunks))
    drift = np.concatenate([np.asarray(p[0], dtype=float) for p in parts])
    g = np.concatenate([np.broadcast_to(np.asarray(p[1], dtype=float), (len(c),)) for p, c in zip(parts, chunks)])
    return drift, g


def initial_variance(sde: WeightedSde, t_start: float = 0.0) -> float:
    """Per-axis variance of the Gaussian that seeds the particles."""
    sched = sde.schedule
    if t_start > 0.0 and sched.kind == "ve":
        return sched.gen_marginal_coefficients(t_start)[1] / sde.init_exponent
    return sde.init_variance() if t_start == 0.0 else 1.0 / sde.init_exponent


def _clip_rows(v, max_norm):
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norms > max_norm, v * (max_norm / np.maximum(norms, 1e-300)), v)


def simulate(sde: WeightedSde, cfg: SimulationConfig, policy: ResamplingPolicy = ResamplingPolicy()) -> SimulationResult:
    """Run the weighted SDE and return the final ensemble, ``log Z`` and diagnostics.

    ``log Z`` estimates the log normalizer of ``sde.target_logdensity_unnorm``
    at ``t = 1``.  It starts from the importance weights of the initial
    Gaussian (when the target density is available) and multiplies in the
    weighted mean of ``exp(g dt)`` at each step.
    """
    K, d = cfg.n_particles, sde.dim
    grid = cfg.grid()
    n_steps = len(grid) - 1
    init_rng = _stream(cfg.seed, _INIT)
    resample_rng = _stream(cfg.seed, _RESAMPLE)

    var0 = initial_variance(sde, cfg.t_start)
    x = math.sqrt(var0) * init_rng.standard_normal((K, d))
    lz = np.zeros(K)
    log_z = 0.0
    if cfg.init_weights and sde.target_logdensity_unnorm is not None:
        log_init = -0.5 * d * math.log(2.0 * math.pi * var0) - 0.5 * np.sum(x * x, axis=1) / var0
        lz = np.asarray(sde.target_logdensity_unnorm(x, grid[0]), dtype=float) - log_init
        log_z = float(logsumexp(lz) - math.log(K))
        lz = lz - np.max(lz)

    ens = ParticleEnsemble(x, np.zeros(K), float(grid[0]), stats={"jumps": 0, "resamples": 0})
    if policy.scheme == "bdc_clocks":
        ens.clock_rate = np.zeros(K)
        ens.clock_threshold = resample_rng.exponential(size=K)

    diag = {"t": [], "ess": [], "log_z": [], "resampled": [], "jumps": [], "mean_centered_increment": []}
    n_threads = _n_threads()
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 and K >= 2 * n_threads else None
    since_resample = 0
    try:
        for s in range(n_steps):
            t, dt = float(grid[s]), float(grid[s + 1] - grid[s])
            drift, g = _evaluate(sde, ens.positions, t, pool, n_threads)
            drift = np.asarray(drift, dtype=float)
            g = np.broadcast_to(np.asarray(g, dtype=float), (K,))
            bad = ~np.isfinite(g) | ~np.all(np.isfinite(drift), axis=1)
            if np.any(bad):
                k = int(np.flatnonzero(bad)[0])
                raise SimulationError(f"non-finite drift or weight at step {s}, particle {k}", step=s, particle=k)
            if cfg.clip is not None:
                drift = _clip_rows(drift, cfg.clip)

            noise = _stream(cfg.seed, _NOISE, s).standard_normal((K, d))
            x_new = ens.positions + drift * dt + sde.diffusion_scale(t) * math.sqrt(dt) * noise

            inc = g * dt
            active = policy.active(t)
            if active or not cfg.exclude_outside_from_logz:
                log_z += float(logsumexp(lz + inc) - logsumexp(lz))
                lz = lz + inc
            w_sel = ens.normalized_weights()
            centered = inc - np.sum(w_sel * inc)
            diag["mean_centered_increment"].append(float(np.sum(w_sel * centered)))

            ens.positions = x_new
            ens.t = float(grid[s + 1])
            resampled, jumps = False, 0
            if active and policy.scheme in ("none", "snis_final", "systematic"):
                ens.log_weights = ens.log_weights + centered
                ens.log_weights -= np.max(ens.log_weights)
            elif active:
                step_rng = resample_rng
                if policy.scheme == "jump":
                    parents, jumps = jump_parents(g, dt, step_rng)
                else:
                    parents, ens.clock_rate, ens.clock_threshold, jumps = bdc_parents(
                        g, dt, ens.clock_rate, ens.clock_threshold, step_rng)
                ens.positions = ens.positions[parents]
                # the move absorbs this step's increment
                lz = (lz - inc)[parents]
                ens.stats["jumps"] += jumps

            cur_ess = ess(ens.log_weights)
            since_resample += 1
            if active and policy.scheme == "systematic":
                due = since_resample >= policy.cadence
                if policy.ess_threshold is not None:
                    due = cur_ess < policy.ess_threshold * K
                if due:
                    idx = systematic_resample(ens.log_weights, resample_rng)
                    lz = (lz - ens.log_weights)[idx]
                    ens.positions = ens.positions[idx]
                    ens.log_weights = np.zeros(K)
                    ens.stats["resamples"] += 1
                    resampled = True
                    since_resample = 0
            lz -= np.max(lz)

            diag["t"].append(ens.t)
            diag["ess"].append(cur_ess)
            diag["log_z"].append(log_z)
            diag["resampled"].append(resampled)
            diag["jumps"].append(jumps)
    finally:
        if pool is not None:
            pool.shutdown()

    weighted = ens.snapshot()
    if policy.scheme == "snis_final":
        idx = snis_select(ens, resample_rng, size=K)
        ens.positions = ens.positions[idx]
        ens.log_weights = np.zeros(K)
    diag.update(n_particles=K, n_steps=n_steps, scheme=policy.scheme, seed=cfg.seed,
                final_log_z=log_z, resample_events=ens.stats["resamples"], total_jumps=ens.stats["jumps"])
    return SimulationResult(ens, weighted, log_z, diag)

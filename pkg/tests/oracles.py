"""Independent oracles shared by the unit tests and the acceptance suite."""
import itertools
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from fkc.engine import bdc_parents, jump_parents, jump_rates
from fkc.models import SCORE, DiffusedGaussianMixture, GaussianMixture
from fkc.rules import (AnnealSpec, WeightedSde, build_annealed, build_geometric, build_product,
                       build_reward_tilted, build_weighted_product, pde_residual)
from fkc.schedules import NoiseSchedule

PDE_BOUNDS = [(-8.0, 8.0)]
COARSE = (4e-4, 0.08)
FINE = (1e-4, 0.02)


def path_models(sched):
    """Two 1D mixtures with unequal weights and widths."""
    g1 = GaussianMixture(np.array([0.3, 0.7]), np.array([[-1.5], [1.0]]), np.array([0.5, 0.8]))
    g2 = GaussianMixture(np.array([0.6, 0.4]), np.array([[-0.5], [2.0]]), np.array([1.0, 0.4]))
    return DiffusedGaussianMixture(g1, sched), DiffusedGaussianMixture(g2, sched)


def quadratic_reward(center=1.0):
    return (lambda x: -0.5 * np.sum((x - center) ** 2, axis=-1),
            lambda x: -(x - center))


def pde_cases(sched, seed=0):
    """``(label, sde)`` for every builder configuration of the residual suite."""
    m1, m2 = path_models(sched)
    rng = np.random.default_rng(seed)
    cases = []
    for a in (0.0, 0.5):
        for b in (0.5, 2.0, 3.0):
            cases.append((f"annealed a={a} beta={b}", build_annealed(m1, sched, AnnealSpec(b, a))))
    for b in (0.5, 1.0, 2.0):
        cases.append((f"product beta={b}", build_product(m1, m2, sched, AnnealSpec(b))))
    for b in (0.0, 0.5, 1.0, 1.4):
        cases.append((f"geometric beta={b}", build_geometric(m1, m2, sched, b)))
    for b, a in ((0.5, 0.5), (1.4, 0.3)):
        cases.append((f"geometric beta={b} a={a}", build_geometric(m1, m2, sched, b, a)))
    for _ in range(3):
        betas = rng.uniform(0.2, 1.5, 3)
        label = "weighted product " + ",".join(f"{x:.2f}" for x in betas)
        cases.append((label, build_weighted_product([m1, m2, m1], betas, sched)))
    r, gr = quadratic_reward()
    cases.append(("reward tilted beta_t=t", build_reward_tilted(m1, sched, r, gr, lambda t: t, lambda t: 1.0)))
    cases.append(("annealed beta_t=t+1", build_annealed(m1, sched, AnnealSpec(lambda t: t + 1.0, 0.0,
                                                                             lambda t: 1.0))))
    return cases


def drop_weight(sde):
    """Mutation control: the same SDE with its weight rate removed."""
    def fields(x, t):
        drift, _ = sde.fields(x, t)
        return drift, np.zeros(x.shape[:-1])
    return WeightedSde(fields, sde.diffusion_scale, sde.schedule, sde.target_logdensity_unnorm)


def weight_is_constant(sde, t, bounds=PDE_BOUNDS):
    x = np.linspace(bounds[0][0], bounds[0][1], 201)[:, None]
    g = np.broadcast_to(np.asarray(sde.weight_rate(x, t), float), (len(x),))
    return float(np.ptp(g)) == 0.0


def residual_study(sde, t):
    """``(coarse, fine, mutated)`` max residuals."""
    coarse = pde_residual(sde, None, PDE_BOUNDS, t, *COARSE).max_abs
    fine = pde_residual(sde, None, PDE_BOUNDS, t, *FINE).max_abs
    mutated = pde_residual(drop_weight(sde), None, PDE_BOUNDS, t, *FINE).max_abs
    return coarse, fine, mutated


class FixedScores:
    """Stand-in model whose score is a preset array (one row per draw)."""

    capabilities = frozenset({SCORE})

    def __init__(self, scores, schedule):
        self.scores = np.asarray(scores, float)
        self.schedule = schedule

    def score(self, x, t):
        return self.scores


def lemma_gap(u, w, lam, gam):
    lhs = -lam * (1 - gam) * np.sum(u * u, -1) - lam * gam * np.sum(w * w, -1)
    v = lam * (1 - gam) * u + lam * gam * w
    rhs = -lam * gam * (1 - gam) * np.sum((u - w) ** 2, -1) - np.sum(v * v, -1) / lam
    return np.abs(lhs - rhs)


def cross_identity_gaps(n=200, seed=0):
    """Max abs gaps of the builder identities over ``n`` random draws."""
    rng = np.random.default_rng(seed)
    out = {"geometric": 0.0, "product": 0.0, "annealed": 0.0, "lemma": 0.0}
    for i in range(n):
        sched = NoiseSchedule.ve(0.01, 10.0, dim=3) if i % 2 else NoiseSchedule.vp(dim=3)
        t = float(rng.uniform(0.05, 0.95))
        x = rng.normal(size=(1, 3))
        s1 = FixedScores(rng.normal(0, 2, (1, 3)), sched)
        s2 = FixedScores(rng.normal(0, 2, (1, 3)), sched)
        beta = float(rng.uniform(0.05, 3.0))
        geo_beta = float(rng.uniform(0.0, 2.0))

        wp = build_weighted_product([s1, s2], [1 - geo_beta, geo_beta], sched)
        geo = build_geometric(s1, s2, sched, geo_beta)
        out["geometric"] = max(out["geometric"], _field_gap(wp, geo, x, t))

        wp = build_weighted_product([s1, s2], [beta, beta], sched)
        prod = build_product(s1, s2, sched, AnnealSpec(beta))
        out["product"] = max(out["product"], _field_gap(wp, prod, x, t))

        wp = build_weighted_product([s1], [beta], sched)
        ann = build_annealed(s1, sched, AnnealSpec(beta))
        out["annealed"] = max(out["annealed"], _field_gap(wp, ann, x, t))

        lam, gam = float(rng.uniform(0.1, 3.0)), float(rng.uniform(-1.0, 2.0))
        u, w = rng.normal(0, 2, 3), rng.normal(0, 2, 3)
        out["lemma"] = max(out["lemma"], float(lemma_gap(u, w, lam, gam)))
    return out


def _field_gap(a, b, x, t):
    da, ga = a.fields(x, t)
    db, gb = b.fields(x, t)
    return float(max(np.max(np.abs(da - db)), np.max(np.abs(np.asarray(ga) - np.asarray(gb)))))


# -- jump process oracles ------------------------------------------------------

def ctmc_occupancy(values, horizon):
    """Exact mean state occupancy of the jump/clock particle system.

    Particles start in distinct states ``0..K-1`` with per-state rates
    ``values``; the chain on configurations is integrated with ``expm``.
    """
    values = np.asarray(values, float)
    K = len(values)
    confs = list(itertools.product(range(K), repeat=K))
    index = {c: i for i, c in enumerate(confs)}
    Q = np.zeros((len(confs), len(confs)))
    for c in confs:
        lam, pos = jump_rates(values[list(c)])
        total = pos.sum()
        for k in range(K):
            for j in range(K):
                if lam[k] > 0 and pos[j] > 0:
                    nxt = list(c)
                    nxt[k] = c[j]
                    Q[index[c], index[tuple(nxt)]] += lam[k] * pos[j] / total
    np.fill_diagonal(Q, -Q.sum(axis=1))
    p = expm(Q * horizon)[index[tuple(range(K))]]
    occ = np.array([[np.mean(np.array(c) == j) for j in range(K)] for c in confs])
    return p @ occ


def simulate_occupancy(values, dt, n_steps, reps, seed, kind):
    """Monte Carlo mean occupancy after ``n_steps`` of the jump or clock kernel."""
    values = np.asarray(values, float)
    K = len(values)
    rng = np.random.default_rng(seed)
    states = np.tile(np.arange(K), (reps, 1))
    acc = np.zeros((reps, K))
    thr = rng.exponential(size=(reps, K))
    for _ in range(n_steps):
        g = values[states]
        if kind == "jump":
            parents, _ = jump_parents(g, dt, rng)
        else:
            parents, acc, thr, _ = bdc_parents(g, dt, acc, thr, rng)
        states = np.take_along_axis(states, parents, axis=1)
    return np.array([(states == j).mean() for j in range(K)])


def gaussian_anneal_logz(beta):
    """log of the integral of N(0,1)^beta."""
    return 0.5 * (1 - beta) * math.log(2 * math.pi) - 0.5 * math.log(beta)


def annealed_weight_log_moment(sched, beta, m, a=0.0, cap=1e12):
    """``log E[W^m]`` of the annealed N(0,1) weighted SDE in continuous time.

    With ``x_t`` Gaussian-linear and ``g`` quadratic in ``x``,
    ``E[exp(m int g dt) | x_t = x] = exp(A x^2 + B)`` where ``A`` solves a
    Riccati equation.  Returns ``inf`` when ``A`` blows up or the final
    Gaussian integral diverges, which means the m-th weight moment is infinite.
    """
    eta, zeta = AnnealSpec(beta, a).coefficients(0.0)

    def var(tau):
        alpha, s2 = sched.marginal_coefficients(tau)
        return alpha * alpha + s2

    def rhs(tau, y):
        A = y[0]
        sig2 = sched.sigma(tau) ** 2
        v = var(tau)
        b = sched.beta_hat(tau) if sched.kind == "vp" else 0.0
        k = eta * sig2 / v - 0.5 * b
        D = zeta**2 * sig2
        c = (beta - 1) * beta * sig2 / (2 * v * v)
        return [-2 * k * A + 2 * D * A * A + m * c, D * A - 0.5 * m * (beta - 1) * b]

    def blowup(tau, y):
        return y[0] - cap
    blowup.terminal = True

    sol = solve_ivp(rhs, (0.0, 1.0), [0.0, 0.0], method="LSODA", rtol=1e-11, atol=1e-14, events=blowup)
    if sol.t[-1] < 1.0:
        return math.inf
    A, B = sol.y[:, -1]
    var0 = var(1.0) / beta
    return math.inf if 2 * A * var0 >= 1 else B - 0.5 * math.log(1 - 2 * A * var0)

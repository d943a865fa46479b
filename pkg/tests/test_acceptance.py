"""Acceptance suite: every criterion at its stated tolerance, one summary line each.

Criterion 3 and the DDPM part of criterion 7 fail; see the decisions ledger.
"""
import math
import time
from importlib import resources

import numpy as np
import pytest

from conftest import ACCEPTANCE
from fkc.config import build_sde, load_config, reference_mixture, simulation_config
from fkc.engine import ResamplingPolicy, jump_rates, simulate, systematic_indices
from fkc.metrics import SampleSet, mmd_rbf, total_variation_grid, wasserstein_1d
from fkc.models import (DiffusedGaussianMixture, GaussianMixture, LennardJonesSystem, diffused_laplacian_log,
                        diffused_score, lj_energy_grad, sample_mixture)
from fkc.schedules import NoiseSchedule, ddpm_alphas, vp_marginal_params

import oracles


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def _config(name):
    return load_config(resources.files("fkc") / "configs" / name)


# 1 -------------------------------------------------------------------------

def test_criterion_1_pde_residual_suite():
    failures, worst_fine, worst_ratio, n = [], 0.0, math.inf, 0
    for sched, t in ((NoiseSchedule.vp(), 0.3), (NoiseSchedule.ve(0.01, 10.0), 0.6)):
        for label, sde in oracles.pde_cases(sched):
            coarse, fine, mutated = oracles.residual_study(sde, t)
            n += 1
            worst_fine = max(worst_fine, fine)
            ok = fine <= 1e-3 and fine < coarse
            if not oracles.weight_is_constant(sde, t):
                worst_ratio = min(worst_ratio, mutated / fine)
                ok = ok and mutated >= 10 * fine
            if not ok:
                failures.append(f"{sched.kind} {label}")
    ok = report(1, not failures, f"{n} cases, max fine residual {worst_fine:.2e} (<=1e-3), "
                                 f"min mutation ratio {worst_ratio:.0f}x (>=10x)"
                + (f", failing: {failures}" if failures else ""))
    assert ok


# 2 -------------------------------------------------------------------------

def test_criterion_2_identities():
    gaps = oracles.cross_identity_gaps(n=200, seed=0)
    worst = max(gaps.values())
    ok = report(2, worst <= 1e-10, "max gaps " + ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()) + " (<=1e-10)")
    assert ok


# 3 -------------------------------------------------------------------------

def test_criterion_3_annealed_gaussian():
    cfg = _config("gaussian_anneal.json")
    assert cfg["target"]["beta"] == 4 and cfg["schedule"]["kind"] == "ve"
    sde = build_sde(cfg)
    r = simulate(sde, simulation_config(cfg, 0), ResamplingPolicy("snis_final"))
    w = r.weighted.normalized_weights()
    x2 = r.weighted.positions[:, 0] ** 2
    m = float(np.sum(w * x2))
    se = math.sqrt(float(np.sum(w * w * (x2 - m) ** 2)))
    z_exact = math.exp(oracles.gaussian_anneal_logz(4.0))
    ratio = math.exp(r.log_z) / z_exact
    ok_m, ok_z = abs(m - 0.25) <= 3 * se, abs(ratio - 1) <= 0.02
    ok = report(3, ok_m and ok_z, f"E[x^2]={m:.4f} (0.25 +- 3se, se={se:.4f}), exp(logZ)/exact={ratio:.3f} "
                                  f"(1 +- 0.02), ESS={1 / np.sum(w * w):.1f}; weight variance is infinite")
    assert ok


# 4 -------------------------------------------------------------------------

def test_criterion_4_two_gaussian_product():
    cfg = _config("two_gaussian_product.json")
    sde = build_sde(cfg)
    fkc, plain = [], []
    for seed in range(5):
        ref = SampleSet(np.random.default_rng(1000 + seed).normal(0.0, math.sqrt(0.5), (10000, 1)))
        a = simulate(sde, simulation_config(cfg, seed), ResamplingPolicy("systematic"))
        b = simulate(sde, simulation_config(cfg, seed), ResamplingPolicy("none"))
        fkc.append(wasserstein_1d(SampleSet(a.ensemble.positions), ref, 2))
        plain.append(wasserstein_1d(SampleSet(b.ensemble.positions), ref, 2))
    ok = all(f <= 0.05 for f in fkc) and all(f < p for f, p in zip(fkc, plain))
    report(4, ok, "W2 FKC " + "/".join(f"{v:.3f}" for v in fkc) + " (<=0.05) vs no weights "
           + "/".join(f"{v:.3f}" for v in plain))
    assert ok


# 5 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def gmm40_runs():
    """TV and MMD for (target-score FKC, target-score no-FKC, tempered-noise no-FKC) over 5 seeds."""
    base = _config("gmm40_beta3_target_score_fkc.json")
    arms = {"ts_fkc": (0.0, "systematic"), "ts_plain": (0.0, "none"), "tn_plain": (0.5, "none")}
    out = {k: {"tv": [], "mmd": []} for k in arms}
    for seed in range(5):
        rng = np.random.default_rng(base["metrics"]["reference_seed"] + seed)
        ref = sample_mixture(reference_mixture(base), base["metrics"]["reference_samples"], rng)
        for arm, (a, scheme) in arms.items():
            cfg = dict(base, target=dict(base["target"], a=a))
            r = simulate(build_sde(cfg), simulation_config(cfg, seed), ResamplingPolicy(scheme))
            s = SampleSet(r.ensemble.positions)
            out[arm]["tv"].append(total_variation_grid(s, ref, base["metrics"]["tv_bins"],
                                                       base["metrics"]["tv_bounds"]))
            out[arm]["mmd"].append(mmd_rbf(s, ref))
    return out


def test_criterion_5_gmm40(gmm40_runs):
    r = gmm40_runs
    fkc_tv, ts_tv, tn_tv = (np.array(r[k]["tv"]) for k in ("ts_fkc", "ts_plain", "tn_plain"))
    fkc_mmd, ts_mmd = np.array(r["ts_fkc"]["mmd"]), np.array(r["ts_plain"]["mmd"])
    ok_i = fkc_tv.mean() <= 0.45 and np.all(ts_tv >= fkc_tv)
    ok_ii = int(np.sum(fkc_mmd < ts_mmd)) >= 4
    ok_iii = tn_tv.mean() > fkc_tv.mean()
    fmt = lambda v: "/".join(f"{x:.3f}" for x in v)  # noqa: E731
    ok = report(5, ok_i and ok_ii and ok_iii,
                f"TV FKC {fmt(fkc_tv)} mean {fkc_tv.mean():.3f} (<=0.45), TS no-FKC {fmt(ts_tv)}, "
                f"TN no-FKC mean {tn_tv.mean():.3f}; MMD FKC<no-FKC in {int(np.sum(fkc_mmd < ts_mmd))}/5")
    assert ok


# 6 -------------------------------------------------------------------------

def test_criterion_6_resamplers():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        K = int(rng.integers(2, 30))
        w = rng.dirichlet(np.full(K, 0.5))
        for u in np.linspace(0, 1, 1001)[:-1] / K:
            counts = np.bincount(systematic_indices(w, u), minlength=K)
            worst = max(worst, float(np.max(np.abs(counts - K * w))))
    lam, pos = jump_rates(np.full(5, 1.7))
    zero_rate = bool(np.all(lam == 0) and np.all(pos == 0))
    t0 = time.perf_counter()
    values, dt, steps = (-1.0, 0.0, 1.0), 1e-3, 200
    exact = oracles.ctmc_occupancy(values, dt * steps)
    jump = oracles.simulate_occupancy(values, dt, steps, 100_000, 1, "jump")
    bdc = oracles.simulate_occupancy(values, dt, steps, 100_000, 2, "bdc")
    gap = float(np.max(np.abs(jump - bdc)))
    ok = worst < 1 and zero_rate and gap <= 2e-2
    report(6, ok, f"max |N-Kw| {worst:.4f} (<1), zero rate at uniform {zero_rate}, |jump-BDC| {gap:.1e} "
                  f"(<=2e-2; vs exact chain {np.max(np.abs(jump - exact)):.1e}/{np.max(np.abs(bdc - exact)):.1e}, "
                  f"{time.perf_counter() - t0:.0f}s)")
    assert ok


# 7 -------------------------------------------------------------------------

def _fd_grad(f, x, h):
    g = np.zeros_like(x)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = h
        g[..., i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_criterion_7_score_and_gradient_oracles():
    rng = np.random.default_rng(0)
    g = GaussianMixture(np.array([0.2, 0.5, 0.3]), rng.normal(0, 2, (3, 2)), np.array([0.4, 1.0, 1.6]))
    score_err = lap_err = 0.0
    for sched in (NoiseSchedule.ve(0.01, 50.0, dim=2), NoiseSchedule.vp(dim=2)):
        m = DiffusedGaussianMixture(g, sched)
        for t in (0.2, 0.6, 1.0):
            x = rng.normal(0, 2, (50, 2))
            s = diffused_score(m, x, t)
            fd = _fd_grad(lambda y: m.log_density(y, t), x, 1e-5)
            score_err = max(score_err, float(np.max(np.linalg.norm(s - fd, axis=1) / (1 + np.linalg.norm(s, axis=1)))))
            lap = diffused_laplacian_log(m, x, t)
            h = 1e-3
            div = sum((-m.score(x + 2 * h * e, t)[:, i] + 8 * m.score(x + h * e, t)[:, i]
                       - 8 * m.score(x - h * e, t)[:, i] + m.score(x - 2 * h * e, t)[:, i]) / (12 * h)
                      for i, e in enumerate(np.eye(2)))
            lap_err = max(lap_err, float(np.max(np.abs(lap - div) / (1 + np.abs(lap)))))

    lj = LennardJonesSystem()
    grid = np.stack(np.meshgrid(*[np.arange(3)] * 3, indexing="ij"), -1).reshape(-1, 3)[:13]
    lj_err = 0.0
    for _ in range(20):
        x = (1.1 * grid + rng.normal(0, 0.08, (13, 3))).ravel()
        gr = lj_energy_grad(x).ravel()
        fd = np.array([(lj.energy(x + 1e-6 * e) - lj.energy(x - 1e-6 * e)) / 2e-6 for e in np.eye(len(x))])
        lj_err = max(lj_err, float(np.linalg.norm(gr - fd) / np.linalg.norm(gr)))

    s = NoiseSchedule.vp(0.1, 20.0)
    disc = ddpm_alphas(s, 1000)
    ddpm_gap = float(np.max(np.abs(disc - [vp_marginal_params(s, i / 1000)[0] for i in range(1001)])))

    ok = score_err <= 1e-6 and lap_err <= 1e-5 and lj_err <= 1e-5 and ddpm_gap <= 1e-3
    report(7, ok, f"score {score_err:.1e} (<=1e-6), laplacian {lap_err:.1e} (<=1e-5), LJ-13 grad {lj_err:.1e} "
                  f"(<=1e-5), DDPM vs VP(0.1,20) at N=1000 {ddpm_gap:.2e} (<=1e-3; first-order gap)")
    assert ok


# 8 -------------------------------------------------------------------------

def test_criterion_8_documented_exclusions():
    # pretrained-network and external-oracle experiments are out of scope
    report(8, True, "excluded by design: image-model, LJ-13 learned-sampler and docking tables")

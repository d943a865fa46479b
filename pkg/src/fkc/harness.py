"""Config-driven experiments: single runs, seed repeats, sweeps and plot data.

Every run directory holds ``report.json``, ``diagnostics.json``, the final
samples (``samples.csv`` and/or ``samples.fkc1``) and, when the target has
an exact sampler, ``reference.csv``.  Tabular outputs are CSV; all files
are written atomically.
"""
from __future__ import annotations

import subprocess
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .config import (build_sde, config_hash, load_config, reference_mixture, resampling_policy,
                     simulation_config, sweep_cells, validate)
from .engine import simulate
from .errors import FKCError
from .metrics import (SampleSet, energy_distance, mmd_rbf, total_variation_grid, wasserstein_1d,
                      wasserstein_2d)
from .models import sample_mixture

ESS_FILE = "ess_curve.csv"
HEATMAP_FILE = "heatmap.csv"
SCATTER_FILE = "scatter.csv"
ENERGY_FILE = "energy_hist.csv"


def _num(v) -> str:
    """Round-trippable text for a float, numpy scalars included."""
    return repr(float(v))


class MissingDumpError(FKCError, FileNotFoundError):
    """A run directory lacks the dumps needed for plot data."""


def provenance() -> str:
    """``fkc <version>`` plus the short commit of the source tree when available."""
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"fkc {__version__}" + (f" ({sha})" if sha else "")


def _energy_fn(sde):
    return lambda x: -np.asarray(sde.target_logdensity_unnorm(x, 1.0))


def compute_metrics(cfg, samples: SampleSet, reference: np.ndarray, sde, seed: int):
    """Metric records ``{metric, value, params, seed}`` in the configured order."""
    m = cfg["metrics"]
    ref = SampleSet(reference)
    out = []
    for name in m["names"]:
        params = {}
        if name == "total_variation":
            params = {"bins": m["tv_bins"], "bounds": m["tv_bounds"]}
            value = total_variation_grid(samples, ref, m["tv_bins"], m["tv_bounds"])
        elif name == "mmd":
            a, b = samples, ref
            cap = m.get("mmd_max_points")
            if cap:
                a = SampleSet(a.resample(cap, seed=seed).points) if len(a) > cap else a
                b = SampleSet(b.points[:cap])
            params = {"median_multiples": [0.5, 1, 2, 4, 8], "max_points": cap}
            value = mmd_rbf(a, b)
        elif name in ("w1", "w2"):
            p = 1 if name == "w1" else 2
            if samples.dim == 1:
                value = wasserstein_1d(samples, ref, p)
                params = {"p": p}
            else:
                params = {"p": p, "method": m["w2_method"], "max_points": m["w2_max_points"]}
                value = wasserstein_2d(samples, ref, p, method=m["w2_method"],
                                       max_points=m["w2_max_points"], seed=seed)
        else:
            p = 1 if name == "energy_w1" else 2
            params = {"p": p, "energy_max": m["energy_max"]}
            value = energy_distance(samples, ref, _energy_fn(sde), p, m["energy_max"])
        out.append({"metric": name, "value": float(value), "params": params, "seed": seed})
    return out


def run_experiment(cfg, seed: int, out_dir) -> dict:
    """Simulate one seed, score it and write its run directory."""
    out_dir = Path(out_dir)
    sde = build_sde(cfg)
    start = time.perf_counter()
    result = simulate(sde, simulation_config(cfg, seed), resampling_policy(cfg))
    ens = result.ensemble
    log_w = ens.log_weights if cfg["simulation"]["fkc"] else np.zeros(ens.n_particles)
    samples = SampleSet.from_log_weights(ens.positions, log_w)

    records, ref_points = [], None
    mix = reference_mixture(cfg) if cfg["metrics"]["names"] else None
    if mix is not None:
        rng = np.random.default_rng(int(cfg["metrics"]["reference_seed"]) + seed)
        ref_points = sample_mixture(mix, int(cfg["metrics"]["reference_samples"]), rng)
        records = compute_metrics(cfg, samples, ref_points, sde, seed)
    wall = time.perf_counter() - start

    formats = cfg["output"]["formats"]
    if "csv" in formats:
        io.write_samples_csv(out_dir / "samples.csv", ens.positions, log_w)
    if "bin" in formats:
        io.write_samples_bin(out_dir / "samples.fkc1", ens.positions, log_w, ens.t)
    if ref_points is not None:
        io.write_samples_csv(out_dir / "reference.csv", ref_points, np.zeros(len(ref_points)))
    io.write_diagnostics(out_dir / "diagnostics.json", result.diagnostics)
    report = {
        "name": cfg["name"], "config_hash": config_hash(cfg), "provenance": provenance(),
        "seed": seed, "wall_time": wall, "log_z": result.log_z, "metrics": records,
        "diagnostics_path": "diagnostics.json", "scheme": result.diagnostics["scheme"],
        "fkc": cfg["simulation"]["fkc"], "config": cfg,
    }
    io.write_json(out_dir / "report.json", report)
    return report


def aggregate(records):
    """``(metric, mean, std, n)`` rows over seeds, metrics in first-seen order."""
    by = {}
    for r in records:
        by.setdefault(r["metric"], []).append(r["value"])
    return [(k, float(np.mean(v)), float(np.std(v)), len(v)) for k, v in by.items()]


def _seeds(cfg, n):
    base = int(cfg["simulation"]["seed"])
    return [base + i for i in range(n)]


def run(config_path, seeds: int = 1, out=None, dry_run: bool = False):
    """Validate, then simulate ``seeds`` consecutive seeds; returns the reports."""
    cfg = load_config(config_path)
    if dry_run:
        return []
    out = Path(out or cfg["output"]["dir"])
    reports = [run_experiment(cfg, s, out / f"seed_{s}") for s in _seeds(cfg, seeds)]
    records = [r for rep in reports for r in rep["metrics"]]
    io.write_csv(out / "metrics.csv", ["seed", "metric", "value"],
                 ([r["seed"], r["metric"], _num(r["value"])] for r in records))
    io.write_csv(out / "log_z.csv", ["seed", "log_z"], ([r["seed"], _num(r["log_z"])] for r in reports))
    agg = aggregate(records)
    io.write_csv(out / "aggregate.csv", ["metric", "mean", "std", "n"],
                 ([m, _num(mu), _num(sd), n] for m, mu, sd, n in agg))
    return reports


def sweep(config_path, seeds: int = 1, out=None):
    """Run every grid cell for every seed; returns the aggregate rows."""
    cfg = load_config(config_path)
    cells = sweep_cells(cfg)
    out = Path(out or cfg["output"]["dir"])
    axis_names = list(cells[0][0].keys())
    rows, agg_rows = [], []
    for i, (labels, cell_cfg) in enumerate(cells):
        reports = [run_experiment(cell_cfg, s, out / f"cell_{i:03d}" / f"seed_{s}")
                   for s in _seeds(cell_cfg, seeds)]
        for rep in reports:
            for r in rep["metrics"]:
                rows.append([i] + [labels[a] for a in axis_names] + [rep["seed"], r["metric"], _num(r["value"])])
        for m, mu, sd, n in aggregate([r for rep in reports for r in rep["metrics"]]):
            agg_rows.append([i] + [labels[a] for a in axis_names] + [m, _num(mu), _num(sd), n])
    io.write_csv(out / "sweep.csv", ["cell"] + axis_names + ["seed", "metric", "value"], rows)
    io.write_csv(out / "sweep_aggregate.csv", ["cell"] + axis_names + ["metric", "mean", "std", "n"], agg_rows)
    return agg_rows


# -- plot data ---------------------------------------------------------------

def _run_dirs(root: Path):
    if (root / "report.json").exists():
        return [root]
    dirs = sorted(p.parent for p in root.rglob("report.json"))
    if not dirs:
        raise MissingDumpError(f"no run reports under {root}")
    return dirs


def _load_samples(run_dir: Path):
    if (run_dir / "samples.csv").exists():
        return io.read_samples_csv(run_dir / "samples.csv")
    if (run_dir / "samples.fkc1").exists():
        x, lw, _ = io.read_samples_bin(run_dir / "samples.fkc1")
        return x, lw
    raise MissingDumpError(f"no sample dump in {run_dir}")


def _weights(lw):
    w = np.exp(lw - np.max(lw))
    return w / w.sum()


def emit_plot_data(run_dir, n_scatter: int = 2000, energy_bins: int = 60):
    """Write plot-ready CSVs under ``<run>/plots`` for every run below ``run_dir``."""
    root = Path(run_dir)
    if not root.exists():
        raise MissingDumpError(f"{root} does not exist")
    written = []
    for d in _run_dirs(root):
        if not (d / "diagnostics.json").exists():
            raise MissingDumpError(f"no diagnostics in {d}")
        report = io.read_json(d / "report.json")
        cfg = validate(report["config"])
        diag = io.read_json(d / "diagnostics.json")
        x, lw = _load_samples(d)
        w = _weights(lw)
        ref = io.read_samples_csv(d / "reference.csv")[0] if (d / "reference.csv").exists() else None
        plots = d / "plots"

        io.write_csv(plots / ESS_FILE, ["step", "t", "ess", "log_z"],
                     ([i + 1, _num(t), _num(e), _num(z)] for i, (t, e, z) in
                      enumerate(zip(diag["t"], diag["ess"], diag["log_z"]))))

        if x.shape[1] == 2:
            bins, bounds = cfg["metrics"]["tv_bins"], np.asarray(cfg["metrics"]["tv_bounds"], float)
            hs, xe, ye = np.histogram2d(x[:, 0], x[:, 1], bins=bins, range=bounds, weights=w)
            hr = (np.histogram2d(ref[:, 0], ref[:, 1], bins=bins, range=bounds)[0] / len(ref)
                  if ref is not None else np.full_like(hs, np.nan))
            xc, yc = 0.5 * (xe[1:] + xe[:-1]), 0.5 * (ye[1:] + ye[:-1])
            io.write_csv(plots / HEATMAP_FILE, ["x", "y", "sample_mass", "reference_mass"],
                         ([_num(xc[i]), _num(yc[j]), _num(hs[i, j]), _num(hr[i, j])]
                          for i in range(len(xc)) for j in range(len(yc))))

        step = max(1, len(x) // n_scatter)
        rows = [["sample", _num(p[0]), _num(p[1] if x.shape[1] > 1 else 0.0), _num(l)]
                for p, l in zip(x[::step], lw[::step])]
        if ref is not None:
            rstep = max(1, len(ref) // n_scatter)
            rows += [["reference", _num(p[0]), _num(p[1] if ref.shape[1] > 1 else 0.0), "0.0"] for p in ref[::rstep]]
        io.write_csv(plots / SCATTER_FILE, ["source", "x", "y", "log_weight"], rows)

        sde = build_sde(cfg)
        if sde.target_logdensity_unnorm is not None:
            energy = _energy_fn(sde)
            es = energy(x)
            er = energy(ref) if ref is not None else None
            pool = es if er is None else np.concatenate([es, er])
            lo, hi = np.quantile(pool, [0.001, 0.999])
            edges = np.linspace(lo, hi if hi > lo else lo + 1.0, energy_bins + 1)
            cs = np.histogram(es, edges, weights=w)[0]
            cr = np.histogram(er, edges)[0] / len(er) if er is not None else np.full(energy_bins, np.nan)
            io.write_csv(plots / ENERGY_FILE, ["bin_left", "bin_right", "sample_mass", "reference_mass"],
                         ([_num(edges[i]), _num(edges[i + 1]), _num(cs[i]), _num(cr[i])]
                          for i in range(energy_bins)))
        written.append(plots)
    return written

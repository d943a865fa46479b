"""Experiment configuration: parsing, validation and object construction.

A config is a JSON object with ``schedule``, ``models``, ``target``,
``simulation``, ``resampling``, ``metrics``, ``output`` and an optional
``sweep`` block.  :func:`load_config` fills defaults and validates every
field, raising :class:`ConfigError` with a dotted field path.
"""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
from pathlib import Path

import numpy as np

from . import rules
from .engine import ResamplingPolicy, SimulationConfig
from .errors import FKCError
from .models import (DiffusedGaussianMixture, GaussianMixture, gaussian, gmm40, gmm_integer_power,
                     gmm_product)
from .schedules import NoiseSchedule

METRIC_NAMES = ("total_variation", "mmd", "w1", "w2", "energy_w1", "energy_w2")
TARGET_KINDS = ("base", "annealed", "product", "geometric", "weighted_product", "poe_cfg", "reward_tilted")

DEFAULTS = {
    "name": "experiment",
    "schedule": {"kind": "ve", "dim": 1, "sigma_min": 0.01, "sigma_max": 500.0,
                 "beta_min": 0.1, "beta_max": 20.0},
    "models": {},
    "target": {},
    "simulation": {"n_particles": 1000, "n_steps": 1000, "seed": 0, "t_start": 0.0,
                   "clip": None, "fkc": True, "exclude_outside_from_logz": False},
    "resampling": {"scheme": "systematic", "t_min": 0.0, "t_max": 1.0, "cadence": 1,
                   "ess_threshold": None},
    "metrics": {"names": [], "reference_samples": 10000, "reference_seed": 12345,
                "tv_bins": 200, "tv_bounds": [[-50.0, 50.0], [-50.0, 50.0]],
                "w2_max_points": 2000, "w2_method": "exact", "mmd_max_points": None,
                "energy_max": None},
    "output": {"dir": "runs", "formats": ["csv", "bin"]},
}


class ConfigError(FKCError, ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("models",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(cfg, path, *, lo=None, hi=None, strict_lo=False, integer=False, allow_none=False):
    node = cfg
    keys = path.split(".")
    for k in keys:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(path, "missing")
        node = node[k]
    if node is None and allow_none:
        return None
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(path, f"expected a number, got {node!r}")
    if integer and int(node) != node:
        raise ConfigError(path, f"expected an integer, got {node!r}")
    if not math.isfinite(node):
        raise ConfigError(path, "must be finite")
    if lo is not None and (node <= lo if strict_lo else node < lo):
        raise ConfigError(path, f"must be {'>' if strict_lo else '>='} {lo}")
    if hi is not None and node > hi:
        raise ConfigError(path, f"must be <= {hi}")
    return node


def _choice(cfg, path, options):
    node = cfg
    for k in path.split("."):
        node = node.get(k) if isinstance(node, dict) else None
    if node not in options:
        raise ConfigError(path, f"must be one of {list(options)}, got {node!r}")
    return node


def _validate_model(name, spec, dim):
    path = f"models.{name}"
    if not isinstance(spec, dict):
        raise ConfigError(path, "must be an object")
    kind = _choice({"m": spec}, "m.type", ("gaussian", "gmm", "gmm40"))
    try:
        if kind == "gaussian":
            g = gaussian(spec.get("mean", [0.0] * dim), spec.get("variance", 1.0))
        elif kind == "gmm":
            g = GaussianMixture(spec["weights"], spec["means"], spec["variances"])
        else:
            g = gmm40(seed=int(spec.get("seed", 0)), n_modes=int(spec.get("n_modes", 40)),
                      box=float(spec.get("box", 40.0)), variance=float(spec.get("variance", 1.0)),
                      dim=dim)
    except KeyError as exc:
        raise ConfigError(f"{path}.{exc.args[0]}", "missing") from None
    except FKCError as exc:
        raise ConfigError(path, str(exc)) from None
    if g.dim != dim:
        raise ConfigError(path, f"dimension {g.dim} differs from schedule.dim {dim}")
    return g


def _model_refs(target):
    if "model" in target:
        return [("target.model", target["model"])]
    return [(f"target.models[{i}]", m) for i, m in enumerate(target.get("models", []))]


def validate(cfg: dict) -> dict:
    """Fill defaults and check every field; returns the completed config."""
    if not isinstance(cfg, dict):
        raise ConfigError("$", "config must be a JSON object")
    unknown = set(cfg) - set(DEFAULTS) - {"sweep", "description"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level key")
    cfg = _merge(DEFAULTS, cfg)

    kind = _choice(cfg, "schedule.kind", ("ve", "vp"))
    dim = int(_num(cfg, "schedule.dim", lo=1, integer=True))
    if kind == "ve":
        smin = _num(cfg, "schedule.sigma_min", lo=0, strict_lo=True)
        if _num(cfg, "schedule.sigma_max", lo=0, strict_lo=True) <= smin:
            raise ConfigError("schedule.sigma_max", "must exceed sigma_min")
    else:
        _num(cfg, "schedule.beta_min", lo=0, strict_lo=True)
        _num(cfg, "schedule.beta_max", lo=0, strict_lo=True)

    if not isinstance(cfg["models"], dict) or not cfg["models"]:
        raise ConfigError("models", "declare at least one model")
    for name, spec in cfg["models"].items():
        _validate_model(name, spec, dim)

    t = cfg["target"]
    tk = _choice(cfg, "target.kind", TARGET_KINDS)
    refs = _model_refs(t)
    expected = {"base": 1, "annealed": 1, "reward_tilted": 1, "product": 2, "geometric": 2, "poe_cfg": 3}
    if tk in expected and len(refs) != expected[tk]:
        raise ConfigError("target", f"{tk} needs {expected[tk]} model reference(s)")
    if tk == "weighted_product" and not refs:
        raise ConfigError("target.models", "weighted product needs at least one model")
    for path, ref in refs:
        if ref not in cfg["models"]:
            raise ConfigError(path, f"unknown model {ref!r}")
    if tk in ("annealed", "product"):
        beta = _num(cfg, "target.beta", lo=0, strict_lo=True)
        a = _num(cfg, "target.a") if "a" in t else 0.0
        if (beta + (1 - beta) * 2 * a) / beta < 0:
            raise ConfigError("target.a", "(beta + (1 - beta) 2a) / beta must be >= 0")
    if tk == "geometric":
        beta = _num(cfg, "target.beta", lo=0)
        a = _num(cfg, "target.a") if "a" in t else 0.0
        if beta == 0 and a != 0:
            raise ConfigError("target.a", "beta = 0 requires a = 0")
        if beta > 0 and (beta + 2 * a * (1 - beta)) / beta < 0:
            raise ConfigError("target.a", "(beta + 2a(1 - beta)) / beta must be >= 0")
    if tk == "poe_cfg":
        _num(cfg, "target.beta")
    if tk == "weighted_product":
        betas = t.get("betas")
        if not isinstance(betas, list) or len(betas) != len(refs):
            raise ConfigError("target.betas", "need one beta per model")
        for i in range(len(betas)):
            if isinstance(betas[i], bool) or not isinstance(betas[i], (int, float)):
                raise ConfigError(f"target.betas[{i}]", "expected a number")
    if tk == "reward_tilted":
        _num(cfg, "target.beta", lo=0)
        if "beta_schedule" in t:
            _choice(cfg, "target.beta_schedule", ("constant", "linear"))
        r = t.get("reward")
        if not isinstance(r, dict) or r.get("type") != "quadratic":
            raise ConfigError("target.reward.type", "only 'quadratic' rewards are supported")
        c = np.asarray(r.get("center", [0.0] * dim), dtype=float)
        if c.shape != (dim,):
            raise ConfigError("target.reward.center", f"needs {dim} coordinates")
        _num(cfg, "target.reward.scale", lo=0, strict_lo=True)

    _num(cfg, "simulation.n_particles", lo=1, integer=True)
    _num(cfg, "simulation.n_steps", lo=1, integer=True)
    _num(cfg, "simulation.seed", lo=0, integer=True)
    ts = _num(cfg, "simulation.t_start", lo=0)
    if ts >= 1:
        raise ConfigError("simulation.t_start", "must be < 1")
    _num(cfg, "simulation.clip", lo=0, strict_lo=True, allow_none=True)
    if not isinstance(cfg["simulation"]["fkc"], bool):
        raise ConfigError("simulation.fkc", "expected true or false")

    _choice(cfg, "resampling.scheme", ("none", "snis_final", "systematic", "jump", "bdc_clocks"))
    lo = _num(cfg, "resampling.t_min", lo=0, hi=1)
    if _num(cfg, "resampling.t_max", lo=0, hi=1) < lo:
        raise ConfigError("resampling.t_max", "must be >= t_min")
    _num(cfg, "resampling.cadence", lo=1, integer=True)
    _num(cfg, "resampling.ess_threshold", lo=0, hi=1, strict_lo=True, allow_none=True)

    names = cfg["metrics"]["names"]
    if not isinstance(names, list):
        raise ConfigError("metrics.names", "expected a list")
    for i, n in enumerate(names):
        if n not in METRIC_NAMES:
            raise ConfigError(f"metrics.names[{i}]", f"unknown metric {n!r}")
    if "total_variation" in names and dim != 2:
        raise ConfigError("metrics.names", "total_variation needs a 2-D schedule")
    if any(n in names for n in ("w1", "w2")) and dim != 2 and dim != 1:
        raise ConfigError("metrics.names", "w1/w2 are implemented for 1-D and 2-D samples")
    if names and reference_mixture(cfg) is None:
        raise ConfigError("metrics.names", "no exact reference sampler exists for this target")
    _num(cfg, "metrics.reference_samples", lo=2, integer=True)
    _num(cfg, "metrics.tv_bins", lo=1, integer=True)
    _num(cfg, "metrics.w2_max_points", lo=2, integer=True)
    _choice(cfg, "metrics.w2_method", ("exact", "sliced"))
    _num(cfg, "metrics.energy_max", allow_none=True)
    b = np.asarray(cfg["metrics"]["tv_bounds"], dtype=float)
    if b.shape != (2, 2) or np.any(b[:, 1] <= b[:, 0]):
        raise ConfigError("metrics.tv_bounds", "need [[lo, hi], [lo, hi]] with lo < hi")
    for i, f in enumerate(cfg["output"]["formats"]):
        if f not in ("csv", "bin"):
            raise ConfigError(f"output.formats[{i}]", f"unknown format {f!r}")
    if "sweep" in cfg:
        _validate_sweep(cfg)
    return cfg


def _validate_sweep(cfg):
    sw = cfg["sweep"]
    if not isinstance(sw, dict):
        raise ConfigError("sweep", "must be an object")
    axes = sw.get("axes", [])
    if not isinstance(axes, list):
        raise ConfigError("sweep.axes", "expected a list")
    for i, ax in enumerate(axes):
        if not isinstance(ax, dict) or "name" not in ax:
            raise ConfigError(f"sweep.axes[{i}]", "each axis needs a name")
        if "values" in ax:
            if "path" not in ax or not isinstance(ax["values"], list) or not ax["values"]:
                raise ConfigError(f"sweep.axes[{i}]", "value axes need a path and a non-empty values list")
        elif "variants" in ax:
            if not isinstance(ax["variants"], dict) or not ax["variants"]:
                raise ConfigError(f"sweep.axes[{i}].variants", "expected a non-empty object")
        else:
            raise ConfigError(f"sweep.axes[{i}]", "needs 'values' or 'variants'")
    if "max_cells" in sw:
        _num(cfg, "sweep.max_cells", lo=1, integer=True)


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("$", f"no such file {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None
    return validate(raw)


def canonical_json(cfg) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


# -- object construction -------------------------------------------------------

def build_schedule(cfg) -> NoiseSchedule:
    s = cfg["schedule"]
    if s["kind"] == "ve":
        return NoiseSchedule.ve(s["sigma_min"], s["sigma_max"], dim=int(s["dim"]))
    return NoiseSchedule.vp(s["beta_min"], s["beta_max"], dim=int(s["dim"]))


def data_mixture(cfg, name) -> GaussianMixture:
    return _validate_model(name, cfg["models"][name], int(cfg["schedule"]["dim"]))


def _reward(t, dim):
    r = t["reward"]
    center = np.asarray(r.get("center", [0.0] * dim), dtype=float)
    scale = float(r["scale"])

    def reward(x):
        d = np.asarray(x) - center
        return -0.5 * scale * np.sum(d * d, axis=-1)

    def grad(x):
        return -scale * (np.asarray(x) - center)

    return reward, grad, center, scale


def build_sde(cfg) -> rules.WeightedSde:
    sched = build_schedule(cfg)
    t = cfg["target"]
    refs = [r for _, r in _model_refs(t)]
    models = {name: DiffusedGaussianMixture(data_mixture(cfg, name), sched) for name in refs}
    kind = t["kind"]
    if kind == "base":
        return rules.build_base(models[refs[0]], sched)
    if kind == "annealed":
        return rules.build_annealed(models[refs[0]], sched, rules.AnnealSpec(t["beta"], t.get("a", 0.0)))
    if kind == "product":
        return rules.build_product(models[refs[0]], models[refs[1]], sched,
                                   rules.AnnealSpec(t["beta"], t.get("a", 0.0)))
    if kind == "geometric":
        return rules.build_geometric(models[refs[0]], models[refs[1]], sched, t["beta"], t.get("a", 0.0))
    if kind == "weighted_product":
        return rules.build_weighted_product([models[r] for r in refs], t["betas"], sched)
    if kind == "poe_cfg":
        return rules.build_poe_cfg(*(models[r] for r in refs), sched=sched, beta=t["beta"])
    reward, grad, _, _ = _reward(t, sched.dim)
    beta = float(t["beta"])
    if t.get("beta_schedule", "constant") == "linear":
        return rules.build_reward_tilted(models[refs[0]], sched, reward, grad,
                                         lambda s: beta * s, lambda s: beta)
    return rules.build_reward_tilted(models[refs[0]], sched, reward, grad, beta)


def _power(g, beta):
    if float(beta) != int(beta) or beta < 1:
        return None
    return gmm_integer_power(g, int(beta))


def reference_mixture(cfg) -> GaussianMixture | None:
    """Exact mixture of the target at ``t = 1`` when one exists, else ``None``."""
    t = cfg["target"]
    refs = [r for _, r in _model_refs(t)]
    dim = int(cfg["schedule"]["dim"])
    g = [data_mixture(cfg, r) for r in refs]
    kind = t["kind"]
    if kind == "base":
        return g[0]
    if kind == "annealed":
        return _power(g[0], t["beta"])
    if kind == "product":
        p1, p2 = _power(g[0], t["beta"]), _power(g[1], t["beta"])
        return None if p1 is None or p2 is None else gmm_product(p1, p2)
    if kind == "geometric":
        if t["beta"] in (0, 1):
            return g[int(t["beta"])]
        return None
    if kind == "weighted_product":
        out = None
        for gi, b in zip(g, t["betas"]):
            if b == 0:
                continue
            p = _power(gi, b)
            if p is None:
                return None
            out = p if out is None else gmm_product(out, p)
        return out
    if kind == "reward_tilted":
        _, _, center, scale = _reward(t, dim)
        beta = float(t["beta"])
        if beta == 0:
            return g[0]
        return gmm_product(g[0], gaussian(center, 1.0 / (beta * scale)))
    return None


def simulation_config(cfg, seed=None) -> SimulationConfig:
    s = cfg["simulation"]
    return SimulationConfig(n_particles=int(s["n_particles"]), n_steps=int(s["n_steps"]),
                            seed=int(s["seed"] if seed is None else seed), t_start=float(s["t_start"]),
                            clip=s["clip"], exclude_outside_from_logz=bool(s["exclude_outside_from_logz"]))


def resampling_policy(cfg) -> ResamplingPolicy:
    r = cfg["resampling"]
    if not cfg["simulation"]["fkc"]:
        return ResamplingPolicy("none")
    return ResamplingPolicy(r["scheme"], float(r["t_min"]), float(r["t_max"]), int(r["cadence"]),
                            r["ess_threshold"])


# -- sweep grids ----------------------------------------------------------------

def set_path(cfg, path, value):
    node = cfg
    keys = path.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = copy.deepcopy(value)


def sweep_cells(cfg):
    """Cartesian grid in declared axis order; yields ``(labels, config)`` per cell."""
    sw = cfg.get("sweep", {})
    axes = sw.get("axes", [])
    base = {k: v for k, v in cfg.items() if k != "sweep"}
    options = []
    for ax in axes:
        if "values" in ax:
            options.append([(ax["name"], repr(v) if not isinstance(v, str) else v, {ax["path"]: v})
                            for v in ax["values"]])
        else:
            options.append([(ax["name"], label, patch) for label, patch in ax["variants"].items()])
    n_cells = int(np.prod([len(o) for o in options])) if options else 1
    cap = int(sw.get("max_cells", 256))
    if n_cells > cap:
        raise ConfigError("sweep.axes", f"grid has {n_cells} cells, above the cap of {cap}")
    cells = []
    for combo in itertools.product(*options):
        c = copy.deepcopy(base)
        labels = {}
        for name, label, patch in combo:
            labels[name] = label
            for path, value in patch.items():
                set_path(c, path, value)
        try:
            c = validate(c)
        except ConfigError as exc:
            raise ConfigError(f"sweep[{labels}].{exc.path}", str(exc).split(": ", 1)[-1]) from None
        cells.append((labels, c))
    return cells

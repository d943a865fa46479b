"""Sample-quality metrics for weighted or resampled particle sets.

All metrics accept a :class:`SampleSet`, whose optional weights let a
weighted ensemble be scored without resampling it first.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ParameterError, ShapeError
from .models import GaussianMixture, pairwise_distances

MEDIAN_MULTIPLES = (0.5, 1.0, 2.0, 4.0, 8.0)
TV_BINS = 200
TV_BOUNDS = ((-50.0, 50.0), (-50.0, 50.0))


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Points with an optional probability vector of weights (uniform by default)."""

    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeError("a sample set needs at least one point, shape (N, d)")
        object.__setattr__(self, "points", x)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (x.shape[0],):
                raise ShapeError("weights must have one entry per point")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ParameterError("weights must be nonnegative and sum to 1")
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_log_weights(cls, points, log_weights):
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - np.max(lw))
        return cls(points, w / w.sum())

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def uniform(self):
        return self.weights is None

    def w(self):
        n = len(self)
        return np.full(n, 1.0 / n) if self.weights is None else self.weights

    def resample(self, n: int | None = None, seed: int = 0) -> "SampleSet":
        """Equal-weight set drawn with replacement proportionally to the weights."""
        n = len(self) if n is None else n
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(self), size=n, p=self.w())
        return SampleSet(self.points[idx])


def _as_set(s):
    return s if isinstance(s, SampleSet) else SampleSet(s)


# -- one-dimensional transport -------------------------------------------------

def _quantile_coupling(xa, wa, xb, wb, p):
    ia, ib = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, wa, xb, wb = xa[ia], wa[ia], xb[ib], wb[ib]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca /= ca[-1]
    cb /= cb[-1]
    levels = np.union1d(ca, cb)
    du = np.diff(np.concatenate([[0.0], levels]))
    # quantile of each set at the left-open interval ending at each level
    mid = levels - 0.5 * du
    qa = xa[np.minimum(np.searchsorted(ca, mid), len(xa) - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mid), len(xb) - 1)]
    return float(np.sum(du * np.abs(qa - qb) ** p))


def wasserstein_1d(a, b, p: int = 1) -> float:
    """Exact ``W_p`` between two weighted 1-D empirical laws via the quantile coupling."""
    a, b = _as_set(a), _as_set(b)
    if a.dim != 1 or b.dim != 1:
        raise ShapeError("wasserstein_1d needs one-dimensional samples")
    if p < 1:
        raise ParameterError("p must be >= 1")
    cost = _quantile_coupling(a.points[:, 0], a.w(), b.points[:, 0], b.w(), p)
    return cost ** (1.0 / p)


def mixture_energy(gmm: GaussianMixture, beta: float = 1.0) -> Callable:
    """Energy ``-beta log q(x)`` of a Gaussian mixture."""
    return lambda x: -beta * gmm.log_prob(x)


def _filtered(s: SampleSet, energy, max_energy):
    e = np.asarray(energy(s.points), dtype=float)
    w = s.w()
    if max_energy is not None:
        keep = np.isfinite(e) & (e <= max_energy)
        if not np.any(keep):
            raise ParameterError("the energy filter removed every sample")
        e, w = e[keep], w[keep] / w[keep].sum()
    return SampleSet(e, w)


def energy_distance(a, b, energy: Callable, p: int = 2, max_energy: Optional[float] = None) -> float:
    """``W_p`` between the energy distributions of two sample sets.

    Samples with energy above ``max_energy`` are dropped first (the LJ setting
    uses 100).
    """
    a, b = _as_set(a), _as_set(b)
    return wasserstein_1d(_filtered(a, energy, max_energy), _filtered(b, energy, max_energy), p)


def distance_w2_pairwise(a, b, spatial_dim: int = 3) -> float:
    """``W_2`` between the flattened interatomic-distance clouds of two configuration sets."""
    a, b = _as_set(a), _as_set(b)
    clouds = []
    for s in (a, b):
        if s.dim % spatial_dim:
            raise ShapeError(f"row length {s.dim} is not divisible by {spatial_dim}")
        d = pairwise_distances(s.points, spatial_dim)
        n_pairs = d.shape[1]
        if n_pairs == 0:
            raise ShapeError("need at least two particles per configuration")
        w = np.repeat(s.w() / n_pairs, n_pairs)
        clouds.append(SampleSet(d.ravel(), w))
    return wasserstein_1d(clouds[0], clouds[1], p=2)


# -- kernel two-sample statistic --------------------------------------------

def median_distance(a, b, max_points: int = 2000) -> float:
    """Median pairwise distance of the pooled sets on a deterministic stride subsample."""
    pts = np.concatenate([_as_set(a).points, _as_set(b).points])
    step = max(1, len(pts) // max_points)
    pts = pts[::step]
    d = np.sqrt(np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1))
    return float(np.median(d[np.triu_indices(len(pts), 1)]))


def _kernel_sums(x, wx, y, wy, bandwidths, same, chunk_elems=2_000_000):
    """Weighted kernel sums ``sum_ij wx_i wy_j k_h(x_i, y_j)`` for every bandwidth.

    With ``same`` the diagonal is skipped.  When each bandwidth doubles the
    previous one, narrower kernels are obtained by repeated squaring.
    """
    bw = np.asarray(bandwidths, dtype=float)
    order = np.argsort(bw)[::-1]
    widest = bw[order]
    doubling = len(widest) > 1 and np.allclose(widest[:-1] / widest[1:], 2.0, rtol=0, atol=1e-12)
    out = np.zeros(len(bw))
    rows = max(1, chunk_elems // max(1, len(y) * x.shape[1]))
    for start in range(0, len(x), rows):
        xs = x[start:start + rows]
        d2 = np.sum((xs[:, None, :] - y[None, :, :]) ** 2, axis=-1)
        if same:
            r = np.arange(len(xs))
            d2[r, start + r] = np.inf
        wrow = wx[start:start + rows]
        if doubling:
            k = np.exp(-d2 / (2.0 * widest[0] ** 2))
            for j, idx in enumerate(order):
                if j:
                    k = k * k
                    k = k * k
                out[idx] += wrow @ k @ wy
        else:
            for idx, h in enumerate(bw):
                out[idx] += wrow @ np.exp(-d2 / (2.0 * h * h)) @ wy
    return out


def mmd_rbf(a, b, scales: Optional[Sequence[float]] = None,
            median_multiples: Sequence[float] = MEDIAN_MULTIPLES) -> float:
    """Multi-scale RBF MMD from the unbiased weighted estimator.

    ``scales`` are absolute bandwidths; when omitted they are
    ``median_multiples`` times the pooled median pairwise distance.  The
    squared statistic is summed over bandwidths and clamped at 0 before the
    square root.
    """
    a, b = _as_set(a), _as_set(b)
    if len(a) < 2 or len(b) < 2:
        raise ParameterError("the unbiased MMD needs at least two points per set")
    if a.dim != b.dim:
        raise ShapeError("sample sets differ in dimension")
    if scales is None:
        med = median_distance(a, b)
        scales = [m * med for m in median_multiples]
    scales = [float(s) for s in scales]
    if not scales or min(scales) <= 0:
        raise ParameterError("bandwidths must be positive")
    wa, wb = a.w(), b.w()
    norm_a, norm_b = 1.0 - np.sum(wa * wa), 1.0 - np.sum(wb * wb)
    if norm_a <= 0 or norm_b <= 0:
        raise ParameterError("weights concentrated on one point")
    xx = _kernel_sums(a.points, wa, a.points, wa, scales, same=True) / norm_a
    yy = _kernel_sums(b.points, wb, b.points, wb, scales, same=True) / norm_b
    xy = _kernel_sums(a.points, wa, b.points, wb, scales, same=False)
    return float(np.sqrt(max(np.sum(xx + yy - 2.0 * xy), 0.0)))


# -- grid and Euclidean transport --------------------------------------------

def total_variation_grid(a, b, bins: int | Sequence[int] = TV_BINS, bounds=TV_BOUNDS) -> float:
    """Half the L1 distance between weighted 2-D histograms on a shared grid.

    Mass outside ``bounds`` is kept in one overflow cell per set.
    """
    a, b = _as_set(a), _as_set(b)
    if a.dim != 2 or b.dim != 2:
        raise ShapeError("total_variation_grid needs 2-D samples")
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (2, 2) or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ParameterError("bounds must be ((lo, hi), (lo, hi)) with positive area")
    hists = []
    for s in (a, b):
        h, _, _ = np.histogram2d(s.points[:, 0], s.points[:, 1], bins=bins, range=bounds, weights=s.w())
        hists.append(np.append(h.ravel(), max(0.0, 1.0 - h.sum())))
    return float(min(1.0, 0.5 * np.sum(np.abs(hists[0] - hists[1]))))


def _prepare_exact(s: SampleSet, max_points, rng):
    if not s.uniform:
        s = s.resample(len(s), seed=int(rng.integers(2**31)))
    if len(s) > max_points:
        s = SampleSet(s.points[rng.choice(len(s), size=max_points, replace=False)])
    return s.points


def wasserstein_2d(a, b, p: int = 2, method: str = "exact", max_points: int = 2000,
                   n_projections: int = 256, seed: int = 0) -> float:
    """Euclidean ``W_p`` between two point clouds.

    ``exact`` solves the assignment problem on equal-size uniform sets:
    weighted sets are resampled, then both are subsampled to the smaller
    size (at most ``max_points``) with a seeded generator.  ``sliced`` averages 1-D ``W_p^p`` over random directions and
    is an approximation.
    """
    a, b = _as_set(a), _as_set(b)
    if a.dim != b.dim:
        raise ShapeError("sample sets differ in dimension")
    rng = np.random.default_rng(seed)
    if method == "exact":
        n = min(len(a), len(b), max_points)
        x = _prepare_exact(a, n, rng)
        y = _prepare_exact(b, n, rng)
        cost = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1) ** (p / 2.0)
        r, c = linear_sum_assignment(cost)
        return float(np.mean(cost[r, c]) ** (1.0 / p))
    if method == "sliced":
        dirs = rng.standard_normal((n_projections, a.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        total = 0.0
        for u in dirs:
            total += _quantile_coupling(a.points @ u, a.w(), b.points @ u, b.w(), p)
        return float((total / n_projections) ** (1.0 / p))
    raise ParameterError(f"unknown method {method!r}")

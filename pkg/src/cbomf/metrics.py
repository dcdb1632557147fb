"""Distances between empirical measures, and between samples and grid densities.

All samples carry uniform weights ``1/n``.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from . import rng
from .errors import DomainError, PreconditionError

logger = logging.getLogger(__name__)

ASSIGNMENT_MAX_N = 2048


def as_sample(a) -> np.ndarray:
    """Validate a point cloud and return it as an ``(n, d)`` float array."""
    x = np.asarray(a, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise PreconditionError(f"a sample must be a nonempty (n, d) array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("sample contains non-finite points")
    return x


def _w2_sorted(a: np.ndarray, b: np.ndarray) -> float:
    """W2 between sorted 1D samples through their quantile functions.

    With unequal sizes this integrates ``(F_a^-1(u) - F_b^-1(u))^2`` over the
    merged breakpoints ``i/n_a, j/n_b``, which equals sorting after replicating
    both samples to ``lcm(n_a, n_b)`` points.
    """
    na, nb = a.size, b.size
    if na == nb:
        return math.sqrt(float(np.mean((a - b) ** 2)))
    u = np.union1d(np.arange(1, na + 1) / na, np.arange(1, nb + 1) / nb)
    u[-1] = 1.0
    widths = np.diff(u, prepend=0.0)
    mid = u - 0.5 * widths
    ia = np.minimum((mid * na).astype(int), na - 1)
    ib = np.minimum((mid * nb).astype(int), nb - 1)
    return math.sqrt(float(np.sum(widths * (a[ia] - b[ib]) ** 2)))


def w2_1d(a, b) -> float:
    """Exact 2-Wasserstein distance between two 1D empirical measures."""
    a, b = as_sample(a), as_sample(b)
    if a.shape[1] != 1 or b.shape[1] != 1:
        raise PreconditionError("w2_1d needs one-dimensional samples")
    return _w2_sorted(np.sort(a[:, 0]), np.sort(b[:, 0]))


def w2_assignment(a, b) -> float:
    """Exact W2 via a minimum-cost perfect matching on squared distances.

    Equal sample sizes up to ``ASSIGNMENT_MAX_N`` only.
    """
    a, b = as_sample(a), as_sample(b)
    if a.shape != b.shape:
        raise PreconditionError(f"assignment needs equal shapes, got {a.shape} and {b.shape}")
    if a.shape[0] > ASSIGNMENT_MAX_N:
        raise PreconditionError(f"n={a.shape[0]} exceeds the exact assignment budget {ASSIGNMENT_MAX_N}")
    cost = cdist(a, b, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(float(cost[rows, cols].mean()))


def w2_sliced(a, b, n_projections: int = 64, seed: int = 0) -> float:
    """Sliced W2: root-mean-square of 1D W2 over random unit directions."""
    a, b = as_sample(a), as_sample(b)
    if a.shape[1] != b.shape[1]:
        raise PreconditionError("samples differ in dimension")
    if n_projections < 1:
        raise DomainError("need at least one projection")
    d = a.shape[1]
    if d == 1:
        # every unit direction is +-1 and W2 is sign-invariant
        return w2_1d(a, b)
    g = rng.generator(seed, (rng.PROJECTIONS,))
    dirs = g.standard_normal((n_projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = np.sort(a @ dirs.T, axis=0), np.sort(b @ dirs.T, axis=0)
    sq = [_w2_sorted(pa[:, j], pb[:, j]) ** 2 for j in range(n_projections)]
    return math.sqrt(float(np.mean(sq)))


def histogram_masses(a, density) -> tuple[np.ndarray, float]:
    """Bin a 1D sample on ``density``'s mesh.

    Points outside the mesh are counted in the nearest boundary cell; the
    returned fraction reports how much mass that was.
    """
    x = as_sample(a)
    if x.shape[1] != 1:
        raise PreconditionError("histogram comparison needs a one-dimensional sample")
    x = x[:, 0]
    edges = density.edges
    outside = float(np.mean((x < edges[0]) | (x > edges[-1])))
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, density.n_cells - 1)
    counts = np.bincount(idx, minlength=density.n_cells)
    if outside > 0:
        logger.warning("%.3g of the sample lies outside [%g, %g]", outside, edges[0], edges[-1])
    return counts / x.size, outside


def histogram_l1(a, density) -> float:
    """``sum_cells |p_hat - p|`` between a binned sample and a grid density, in [0, 2]."""
    p_hat, _ = histogram_masses(a, density)
    return float(np.sum(np.abs(p_hat - density.masses)))


def moments(a, orders=(1, 2, 4)) -> dict[int, float]:
    """Absolute moments ``(1/n) sum |x_i|^k``."""
    x = as_sample(a)
    bad = set(orders) - {1, 2, 4}
    if bad:
        raise DomainError(f"unsupported moment orders {sorted(bad)}")
    r2 = np.sum(x * x, axis=1)
    out = {}
    for k in sorted(set(orders)):
        out[k] = float(np.mean(np.sqrt(r2) if k == 1 else r2 ** (k // 2)))
    return out

"""Parzen-window density baseline with a product Gaussian kernel.

Serves as the classical comparator for the moment-based detector:
density high = normal.  Bandwidths follow Silverman's rule per dimension
unless fixed explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .moments import DegenerateDataError, _as_points

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class KdeModel:
    """Training points plus one positive bandwidth per dimension."""

    points: np.ndarray
    bandwidth: np.ndarray


def silverman_bandwidth(data) -> np.ndarray:
    """Per-dimension rule-of-thumb bandwidth sigma_j (4/((n+2)N))^(1/(n+4))."""
    pts = _as_points(data)
    n_samples, n = pts.shape
    if n_samples < 2:
        raise ValueError("Silverman's rule needs at least 2 points")
    sigma = pts.std(axis=0)
    if np.any(sigma <= 0.0):
        flat = int(np.argmin(sigma))
        raise DegenerateDataError(
            f"dimension {flat + 1} has zero variance; Silverman bandwidth undefined"
        )
    factor = (4.0 / ((n + 2.0) * n_samples)) ** (1.0 / (n + 4.0))
    return sigma * factor


def kde_fit(data, rule: str = "silverman", bandwidth=None) -> KdeModel:
    """Fit the Parzen model; rule is "silverman" or "fixed".

    With "fixed", ``bandwidth`` is a positive scalar or per-dimension
    vector passed through unchanged.
    """
    pts = _as_points(data)
    n = pts.shape[1]
    if rule == "silverman":
        if bandwidth is not None:
            raise ValueError("bandwidth is computed by the rule; do not pass one")
        h = silverman_bandwidth(pts)
    elif rule == "fixed":
        if bandwidth is None:
            raise ValueError("rule 'fixed' needs an explicit bandwidth")
        h = np.broadcast_to(np.asarray(bandwidth, float), (n,)).copy()
        if np.any(h <= 0.0) or not np.all(np.isfinite(h)):
            raise ValueError(f"bandwidths must be positive and finite, got {h}")
    else:
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    return KdeModel(points=pts, bandwidth=h)


def kde_score(model: KdeModel, x):
    """Density estimate at x: mean of product Gaussian kernels.

    Accepts a single point (returns a float) or an (M, n) batch
    (returns an array).
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts.reshape(1, -1)
    if pts.shape[1] != model.points.shape[1]:
        raise ValueError(
            f"query dimension {pts.shape[1]} != model dimension "
            f"{model.points.shape[1]}"
        )
    h = model.bandwidth
    # (M, N, n) standardized distances; fine at the data sizes used here.
    t = (pts[:, None, :] - model.points[None, :, :]) / h
    kernel = np.exp(-0.5 * np.sum(t * t, axis=2)) / np.prod(_SQRT_2PI * h)
    dens = kernel.mean(axis=1)
    return float(dens[0]) if single else dens

"""Anomaly detector scoring queries by neighborhood-probability bounds.

Fitting stores nothing about the training set except a whitening
transform and the truncated moment sequence of the whitened data.  A
query is scored by the largest probability mass any distribution with
those moments can place in a small ball (or box) around the query; low
scores flag anomalies.  Both the radius and the neighborhood live in
whitened coordinates, since the transform rescales measurement noise
along with the data.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .moments import (
    MomentSequence,
    Polynomial,
    Whitener,
    estimate_moments,
    fit_whitener,
    _as_points,
)
from .multiindex import MultiIndex
from .relaxation import (
    BoundResult,
    RankCertificate,
    SemialgebraicSet,
    upper_bound,
)
from .sdp_core import SolveStatus, SolverOptions

logger = logging.getLogger(__name__)

DEFAULT_RADIUS = 1e-3
THREADS_ENV_VAR = "MOMENT_SENTINEL_THREADS"


class ClassificationError(RuntimeError):
    """Raised when a query cannot be classified because its solve failed."""

    def __init__(self, status: SolveStatus):
        super().__init__(f"score is unusable: solver status {status.value}")
        self.status = status


@dataclass(frozen=True)
class DetectorModel:
    """Fitted detector: whitener + moments + neighborhood configuration."""

    dimension: int
    degree: int
    whitener: Whitener | None
    gamma: MomentSequence
    neighborhood_shape: str
    radius: float

    @property
    def order(self) -> int:
        """Relaxation order used for scoring."""
        return math.ceil(self.degree / 2)


@dataclass(frozen=True)
class Score:
    """Bound and solver status for one query point."""

    rho: float
    status: SolveStatus
    rank_certificate: RankCertificate | None = None


def fit(
    data,
    degree: int,
    *,
    whiten: bool | None = None,
    shape: str = "ball",
    radius: float = DEFAULT_RADIUS,
) -> DetectorModel:
    """Fit a model: whiten (by default for n >= 2), then estimate moments.

    ``whiten=None`` enables whitening exactly when the data is
    multivariate; pass an explicit flag to override.
    """
    pts = _as_points(data)
    n = pts.shape[1]
    if degree < 2:
        raise ValueError(f"degree must be >= 2, got {degree}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if shape not in ("ball", "box"):
        raise ValueError(f"neighborhood shape must be 'ball' or 'box', got {shape!r}")
    if whiten is None:
        whiten = n >= 2
    whitener = fit_whitener(pts) if whiten else None
    work = whitener.whiten(pts) if whitener else pts
    gamma = estimate_moments(work, degree)
    return DetectorModel(
        dimension=n,
        degree=degree,
        whitener=whitener,
        gamma=gamma,
        neighborhood_shape=shape,
        radius=radius,
    )


def with_neighborhood(
    model: DetectorModel, *, shape: str | None = None, radius: float | None = None
) -> DetectorModel:
    """Copy of the model with a different neighborhood configuration."""
    if shape is not None and shape not in ("ball", "box"):
        raise ValueError(f"neighborhood shape must be 'ball' or 'box', got {shape!r}")
    if radius is not None and radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    return replace(
        model,
        neighborhood_shape=shape if shape is not None else model.neighborhood_shape,
        radius=radius if radius is not None else model.radius,
    )


def neighborhood(model: DetectorModel, x) -> SemialgebraicSet:
    """The query's neighborhood as constraints in whitened coordinates.

    Ball: one quadratic constraint r^2 - |u - c|^2 >= 0 (with radius 0
    this pins the single point c).  Box: 2n linear constraints
    r - (u_j - c_j) >= 0 and r + (u_j - c_j) >= 0.
    """
    pt = np.asarray(x, dtype=float).reshape(-1)
    if pt.shape[0] != model.dimension:
        raise ValueError(
            f"query dimension {pt.shape[0]} != model dimension {model.dimension}"
        )
    center = model.whitener.whiten(pt) if model.whitener is not None else pt
    n = model.dimension
    r = model.radius
    if model.neighborhood_shape == "ball":
        terms = {MultiIndex.zero(n): r * r - float(center @ center)}
        for j in range(n):
            terms[MultiIndex.unit(n, j)] = 2.0 * center[j]
        for j in range(n):
            two = [0] * n
            two[j] = 2
            terms[MultiIndex(two)] = -1.0
        return SemialgebraicSet(n, (Polynomial(n, terms),))
    constraints = []
    for j in range(n):
        e_j = MultiIndex.unit(n, j)
        constraints.append(
            Polynomial(n, {MultiIndex.zero(n): r + center[j], e_j: -1.0})
        )
        constraints.append(
            Polynomial(n, {MultiIndex.zero(n): r - center[j], e_j: 1.0})
        )
    return SemialgebraicSet(n, tuple(constraints))


def score(
    model: DetectorModel,
    x,
    *,
    certificate: bool = False,
    options: SolverOptions | None = None,
) -> Score:
    """Upper bound on neighborhood probability for one query.

    Solver failures never raise; they surface as a non-optimal status
    with a NaN bound, so batch scoring can continue.
    """
    region = neighborhood(model, x)
    try:
        result: BoundResult = upper_bound(
            model.gamma, region, model.order,
            certificate=certificate, options=options,
        )
    except Exception:
        logger.warning("scoring failed for query %s", np.asarray(x), exc_info=True)
        return Score(rho=math.nan, status=SolveStatus.NUMERICAL_FAILURE)
    if result.status != SolveStatus.OPTIMAL:
        logger.warning(
            "solver returned %s for query %s", result.status.value, np.asarray(x)
        )
        return Score(rho=math.nan, status=result.status)
    return Score(
        rho=result.rho,
        status=result.status,
        rank_certificate=result.rank_certificate,
    )


def _score_worker(args) -> Score:
    model, point, certificate = args
    return score(model, point, certificate=certificate)


def resolve_workers(workers: int | None, n_tasks: int) -> int:
    """Worker count clamped by the task count and the env-var cap."""
    if workers is None:
        workers = os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV_VAR)
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            logger.warning("ignoring malformed %s=%r", THREADS_ENV_VAR, cap)
    return max(1, min(workers, n_tasks))


def score_many(
    model: DetectorModel,
    points,
    *,
    workers: int | None = None,
    certificate: bool = False,
) -> list[Score]:
    """Score a batch, fanning out to a process pool when it pays off.

    Output order matches input order; per-point failures yield sentinel
    scores without aborting the batch.
    """
    pts = _as_points(points)
    if pts.shape[1] != model.dimension:
        raise ValueError(
            f"data dimension {pts.shape[1]} != model dimension {model.dimension}"
        )
    n_workers = resolve_workers(workers, pts.shape[0])
    if n_workers <= 1 or pts.shape[0] < 4:
        return [score(model, p, certificate=certificate) for p in pts]
    tasks = [(model, p, certificate) for p in pts]
    chunk = max(1, len(tasks) // (4 * n_workers))
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_score_worker, tasks, chunksize=chunk))


def classify(model: DetectorModel, x, threshold: float) -> str:
    """"anomalous" when the bound falls strictly below the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    s = score(model, x)
    if s.status != SolveStatus.OPTIMAL:
        raise ClassificationError(s.status)
    return "anomalous" if s.rho < threshold else "normal"

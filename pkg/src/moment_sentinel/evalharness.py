"""ROC/AUC evaluation, synthetic benchmark distributions, and experiments.

The three synthetic families — a bimodal line, a noisy "P"-shaped plane
curve, and a Swiss-roll surface in 3-D — come with an outlier sampler
that draws uniformly from an inflated bounding box and rejects anything
within a guard distance of a dense inlier reference sample, so test
labels are unambiguous.  ``run_experiment`` ties generation, fitting,
scoring, and AUC into one seeded, reproducible row.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from . import detector as _detector
from .baseline_kde import kde_fit, kde_score
from .sdp_core import SolveStatus

logger = logging.getLogger(__name__)

DISTRIBUTIONS = ("bimodal", "pshape", "swissroll")

# Scale of the finest structure per family; outliers must clear 3x this.
GUARD_SIGMA = {"bimodal": 0.1, "pshape": 0.05, "swissroll": 0.8}

_BOX_SAMPLE = 10_000
_GUARD_REFERENCE = 50_000
_BOX_INFLATION = 1.2
_MAX_REJECTION_ATTEMPTS = 1_000_000


# ---------------------------------------------------------------------------
# Scored-set container, ROC and AUC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledScores:
    """Scores with 0/1 labels (1 = inlier) and a score orientation flag."""

    scores: np.ndarray
    labels: np.ndarray
    higher_is_normal: bool = True

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        labels = np.asarray(self.labels)
        if scores.ndim != 1 or labels.shape != scores.shape:
            raise ValueError("scores and labels must be equal-length vectors")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0 (outlier) or 1 (inlier)")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(int))

    def oriented(self) -> np.ndarray:
        """Scores flipped so that higher always means more normal."""
        return self.scores if self.higher_is_normal else -self.scores


def _require_both_classes(ls: LabeledScores):
    n_pos = int(ls.labels.sum())
    if n_pos == 0 or n_pos == ls.labels.size:
        raise ValueError("need both inliers and outliers to evaluate")
    return n_pos, ls.labels.size - n_pos


def auc(ls: LabeledScores) -> float:
    """Probability a random inlier outscores a random outlier, ties at 1/2."""
    n_pos, n_neg = _require_both_classes(ls)
    ranks = rankdata(ls.oriented())
    pos_ranks = ranks[ls.labels == 1].sum()
    return float((pos_ranks - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc(ls: LabeledScores) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) rows sweeping every distinct score.

    A point counts as predicted-normal at threshold t when its oriented
    score is >= t; the first row (threshold +inf) is the (0, 0) corner.
    """
    n_pos, n_neg = _require_both_classes(ls)
    s = ls.oriented()
    order = np.argsort(-s, kind="stable")
    sorted_scores = s[order]
    sorted_labels = ls.labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    last_of_value = np.nonzero(
        np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    )[0]
    points = [(math.inf, 0.0, 0.0)]
    for i in last_of_value:
        points.append(
            (float(sorted_scores[i]), float(fp[i] / n_neg), float(tp[i] / n_pos))
        )
    return points


# ---------------------------------------------------------------------------
# Synthetic distributions
# ---------------------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def gen_bimodal(n_points: int, seed) -> np.ndarray:
    """Mixture 0.5 N(0, 1) + 0.5 N(5, 0.1^2) as (N, 1) points."""
    if n_points < 1:
        raise ValueError("need at least one point")
    rng = _rng(seed)
    wide = rng.normal(0.0, 1.0, n_points)
    narrow = rng.normal(5.0, 0.1, n_points)
    pick_wide = rng.random(n_points) < 0.5
    return np.where(pick_wide, wide, narrow).reshape(-1, 1)


def pshape_curve(t) -> np.ndarray:
    """Noise-free "P" curve (2 cos(1.5 t), 4 sinc(0.9 t)), normalized sinc."""
    t = np.asarray(t, dtype=float)
    return np.column_stack((2.0 * np.cos(1.5 * t), 4.0 * np.sinc(0.9 * t)))


def gen_pshape(n_points: int, seed) -> np.ndarray:
    """P-shaped plane curve with uniform jitter, t uniform on [pi/4, pi]."""
    if n_points < 1:
        raise ValueError("need at least one point")
    rng = _rng(seed)
    t = rng.uniform(np.pi / 4.0, np.pi, n_points)
    pts = pshape_curve(t)
    pts[:, 0] += rng.uniform(-0.05, 0.05, n_points)
    pts[:, 1] += rng.uniform(0.0, 0.02, n_points)
    return pts


def swissroll_surface(y1, y2) -> np.ndarray:
    """Noise-free Swiss-roll map (y1 cos y1, y1 sin y1, y2)."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    return np.column_stack((y1 * np.cos(y1), y1 * np.sin(y1), y2))


def gen_swissroll(n_points: int, seed) -> np.ndarray:
    """Swiss roll: y1 ~ U[3pi/2, 9pi/2], y2 ~ U[1, 2], Gaussian noise."""
    if n_points < 1:
        raise ValueError("need at least one point")
    rng = _rng(seed)
    y1 = rng.uniform(1.5 * np.pi, 4.5 * np.pi, n_points)
    y2 = rng.uniform(1.0, 2.0, n_points)
    pts = swissroll_surface(y1, y2)
    pts[:, 0] += rng.normal(0.0, 0.8, n_points)
    pts[:, 1] += rng.normal(0.0, 0.3, n_points)
    pts[:, 2] += rng.normal(0.0, 0.25, n_points)
    return pts


_GENERATORS = {
    "bimodal": gen_bimodal,
    "pshape": gen_pshape,
    "swissroll": gen_swissroll,
}


def gen_outliers(distribution: str, n_points: int, seed) -> np.ndarray:
    """Off-manifold points for a synthetic family.

    Candidates are uniform over the axis-aligned bounding box of 10^4
    inlier draws inflated by 20% about its center; a candidate survives
    only if its nearest neighbor in a dense inlier reference sample is
    farther than 3x the family's guard sigma.
    """
    if distribution not in _GENERATORS:
        raise ValueError(f"unknown distribution {distribution!r}")
    if n_points < 1:
        raise ValueError("need at least one point")
    gen = _GENERATORS[distribution]
    guard = 3.0 * GUARD_SIGMA[distribution]
    box_ss, ref_ss, draw_ss = _seedseq(seed).spawn(3)
    box_sample = gen(_BOX_SAMPLE, box_ss)
    lo, hi = box_sample.min(axis=0), box_sample.max(axis=0)
    center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    lo = center - _BOX_INFLATION * half
    hi = center + _BOX_INFLATION * half
    tree = cKDTree(gen(_GUARD_REFERENCE, ref_ss))
    rng = _rng(draw_ss)
    accepted: list[np.ndarray] = []
    attempts = 0
    batch = 4096
    while len(accepted) < n_points:
        if attempts >= _MAX_REJECTION_ATTEMPTS:
            raise RuntimeError(
                f"outlier sampling for {distribution!r} rejected "
                f"{attempts} candidates; guard distance too aggressive"
            )
        cand = rng.uniform(lo, hi, size=(batch, lo.shape[0]))
        attempts += batch
        dist, _ = tree.query(cand, k=1)
        accepted.extend(cand[dist > guard])
    return np.asarray(accepted[:n_points])


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """One benchmark row: distribution, sizes, method, and seed."""

    distribution: str
    n_train: int
    n_test_inliers: int
    n_test_outliers: int
    method: str
    degree: int | None = None
    radius: float = _detector.DEFAULT_RADIUS
    seed: int = 0
    whiten: bool | None = None
    shape: str = "ball"

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if min(self.n_train, self.n_test_inliers, self.n_test_outliers) < 1:
            raise ValueError("all point counts must be positive")
        if self.method not in ("moments", "parzen"):
            raise ValueError(f"method must be 'moments' or 'parzen', got {self.method!r}")
        if self.method == "moments" and (self.degree is None or self.degree < 2):
            raise ValueError("the moments method needs a degree >= 2")


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    auc: float
    failures: int
    roc_points: list[tuple[float, float, float]]
    scores: np.ndarray
    labels: np.ndarray


def experiment_data(spec: ExperimentSpec):
    """Seeded train points plus labeled test points for a spec."""
    train_ss, in_ss, out_ss = _seedseq(spec.seed).spawn(3)
    gen = _GENERATORS[spec.distribution]
    train = gen(spec.n_train, train_ss)
    test_in = gen(spec.n_test_inliers, in_ss)
    test_out = gen_outliers(spec.distribution, spec.n_test_outliers, out_ss)
    test = np.vstack((test_in, test_out))
    labels = np.concatenate(
        (np.ones(spec.n_test_inliers, int), np.zeros(spec.n_test_outliers, int))
    )
    return train, test, labels


def run_experiment(spec: ExperimentSpec, *, workers: int | None = None) -> ExperimentResult:
    """Train on inliers, score the labeled test set, and report AUC.

    Per-point solver failures are counted and scored as most-anomalous
    (score 0) rather than aborting the run.
    """
    train, test, labels = experiment_data(spec)
    failures = 0
    if spec.method == "moments":
        model = _detector.fit(
            train,
            spec.degree,
            whiten=spec.whiten,
            shape=spec.shape,
            radius=spec.radius,
        )
        raw = _detector.score_many(model, test, workers=workers)
        values = np.empty(len(raw))
        for i, s in enumerate(raw):
            if s.status == SolveStatus.OPTIMAL:
                values[i] = s.rho
            else:
                values[i] = 0.0
                failures += 1
        if failures:
            logger.warning(
                "%d of %d solves failed; failed points scored as anomalous",
                failures,
                len(raw),
            )
    else:
        model = kde_fit(train)
        values = np.asarray(kde_score(model, test))
    ls = LabeledScores(values, labels, higher_is_normal=True)
    return ExperimentResult(
        spec=spec,
        auc=auc(ls),
        failures=failures,
        roc_points=roc(ls),
        scores=values,
        labels=labels,
    )

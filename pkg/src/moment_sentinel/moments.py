"""Truncated moment sequences, polynomials, and data whitening.

The only artifact kept from a training set is its truncated moment
sequence: the empirical averages of every monomial up to a chosen degree.
This module estimates those sequences, evaluates linear functionals of
polynomials against them, and fits the affine whitening transform that
maps data to zero mean and identity covariance before estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .multiindex import MultiIndex, MonomialBasis, enumerate_basis


class DegenerateDataError(ValueError):
    """Raised when data is too degenerate for the requested operation."""


def _as_points(data) -> np.ndarray:
    pts = np.asarray(data, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError(f"expected a non-empty (N, n) point array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("data contains non-finite values")
    return pts


@dataclass(frozen=True)
class MomentSequence:
    """Moments gamma_alpha for every multi-index of degree <= max_degree."""

    n: int
    max_degree: int
    values: dict[MultiIndex, float]

    def __post_init__(self):
        basis = enumerate_basis(self.n, self.max_degree)
        missing = [a for a in basis if a not in self.values]
        if missing:
            raise ValueError(f"moment sequence missing indices, first: {missing[0]!r}")
        if not all(np.isfinite(v) for v in self.values.values()):
            raise ValueError("moment sequence contains non-finite values")

    def __getitem__(self, alpha: MultiIndex) -> float:
        try:
            return self.values[alpha]
        except KeyError:
            raise KeyError(
                f"moment {alpha!r} outside the known index set "
                f"(max degree {self.max_degree})"
            ) from None

    @property
    def basis(self) -> MonomialBasis:
        return enumerate_basis(self.n, self.max_degree)

    def restrict(self, k: int) -> "MomentSequence":
        """The same sequence truncated to degree <= k."""
        if k > self.max_degree:
            raise ValueError(f"cannot extend degree {self.max_degree} to {k}")
        kept = {a: self.values[a] for a in enumerate_basis(self.n, k)}
        return MomentSequence(self.n, k, kept)


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial stored as a sparse map multi-index -> coefficient.

    Zero coefficients are dropped at construction, so the zero polynomial
    has an empty term map and degree -1 by convention.
    """

    n: int
    terms: dict[MultiIndex, float] = field(default_factory=dict)

    def __post_init__(self):
        cleaned = {}
        for alpha, coef in self.terms.items():
            if not isinstance(alpha, MultiIndex):
                alpha = MultiIndex(alpha)
            if len(alpha) != self.n:
                raise ValueError(
                    f"term {alpha!r} has {len(alpha)} variables, expected {self.n}"
                )
            c = float(coef)
            if not np.isfinite(c):
                raise ValueError(f"non-finite coefficient for {alpha!r}")
            if c != 0.0:
                cleaned[alpha] = c
        object.__setattr__(self, "terms", cleaned)

    @property
    def degree(self) -> int:
        if not self.terms:
            return -1
        return max(a.degree for a in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.n, {a: -c for a, c in self.terms.items()})

    def __call__(self, x) -> float:
        pt = np.asarray(x, dtype=float).reshape(-1)
        if pt.shape[0] != self.n:
            raise ValueError(f"point has dimension {pt.shape[0]}, expected {self.n}")
        total = 0.0
        for alpha, coef in self.terms.items():
            total += coef * float(np.prod(pt ** np.asarray(alpha.exponents)))
        return total

    @classmethod
    def constant(cls, n: int, value: float) -> "Polynomial":
        return cls(n, {MultiIndex.zero(n): value})


def estimate_moments(data, k: int) -> MomentSequence:
    """Empirical moments (1/N) sum_i x_i^alpha for every |alpha| <= k.

    The zeroth moment is pinned to exactly 1.0 (it is the total
    probability mass, not an estimate).
    """
    pts = _as_points(data)
    if k < 0:
        raise ValueError(f"max degree must be >= 0, got {k}")
    n = pts.shape[1]
    basis = enumerate_basis(n, k)
    # Per-variable power table: powers[j][e] = column j elementwise to the e.
    powers = [
        np.vander(pts[:, j], N=k + 1, increasing=True) for j in range(n)
    ]
    values: dict[MultiIndex, float] = {}
    for alpha in basis:
        mono = powers[0][:, alpha[0]].copy()
        for j in range(1, n):
            if alpha[j]:
                mono *= powers[j][:, alpha[j]]
        values[alpha] = float(mono.mean())
    values[MultiIndex.zero(n)] = 1.0
    return MomentSequence(n, k, values)


def riesz(p: Polynomial, y: MomentSequence) -> float:
    """Apply the moment functional: sum of p's coefficients times moments."""
    if p.n != y.n:
        raise ValueError(f"dimension mismatch: polynomial {p.n}, moments {y.n}")
    total = 0.0
    for alpha, coef in p.terms.items():
        total += coef * y[alpha]
    return total


@dataclass(frozen=True)
class Whitener:
    """Affine map x -> transform @ (x - mean) with stored inverse.

    Fitted so the training data maps to zero mean and identity covariance
    (population 1/N convention).
    """

    mean: np.ndarray
    transform: np.ndarray
    inverse: np.ndarray

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def whiten(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts.reshape(1, -1)
        if pts.shape[1] != self.n:
            raise ValueError(f"point dimension {pts.shape[1]}, whitener expects {self.n}")
        out = (pts - self.mean) @ self.transform.T
        return out[0] if single else out

    def unwhiten(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts.reshape(1, -1)
        if pts.shape[1] != self.n:
            raise ValueError(f"point dimension {pts.shape[1]}, whitener expects {self.n}")
        out = pts @ self.inverse.T + self.mean
        return out[0] if single else out


# Relative eigenvalue floor below which a covariance direction counts as flat.
_SINGULAR_RTOL = 1e-12


def fit_whitener(data) -> Whitener:
    """PCA whitening transform from the population covariance of data.

    Eigendecomposition U diag(w) U^T of the 1/N covariance gives
    transform = diag(w)^{-1/2} U^T.  A direction with eigenvalue below
    1e-12 of the largest is degenerate and rejected by name.
    """
    pts = _as_points(data)
    n_samples, n = pts.shape
    if n_samples < n + 1:
        raise DegenerateDataError(
            f"need at least {n + 1} points to whiten in dimension {n}, got {n_samples}"
        )
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / n_samples
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[-1] <= 0.0 or eigvals[0] < _SINGULAR_RTOL * eigvals[-1]:
        worst = int(np.argmin(eigvals))
        direction = np.array2string(eigvecs[:, worst], precision=4)
        raise DegenerateDataError(
            f"covariance is singular along direction {direction} "
            f"(eigenvalue {eigvals[worst]:.3e})"
        )
    transform = (eigvecs / np.sqrt(eigvals)).T
    inverse = eigvecs * np.sqrt(eigvals)
    return Whitener(mean=mean, transform=transform, inverse=inverse)

"""Moment/localizing matrix layouts and neighborhood-probability bounds.

Given a truncated moment sequence gamma and a set S described by
polynomial inequalities, the upper bound on the probability any
representing distribution assigns to S is relaxed to a semidefinite
program: split the moments as y + z = gamma, require the moment matrices
of both parts and the localizing matrices of y (one per constraint of S)
to be PSD, and maximize the mass y_0 of the part supported on S.  The
bound decreases monotonically as the relaxation order grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .multiindex import MultiIndex, MonomialBasis, enumerate_basis
from .moments import MomentSequence, Polynomial
from .sdp_core import (
    ConicProgram,
    LinearEquality,
    PsdBlock,
    SolveStatus,
    SolverOptions,
    numerical_rank,
    solve,
)


@dataclass(frozen=True)
class SemialgebraicSet:
    """Set {x : f(x) >= 0 for every constraint polynomial f}."""

    n: int
    constraints: tuple[Polynomial, ...]

    def __post_init__(self):
        constraints = tuple(self.constraints)
        if not constraints:
            raise ValueError("semialgebraic set needs at least one constraint")
        for f in constraints:
            if f.n != self.n:
                raise ValueError(f"constraint dimension {f.n} != set dimension {self.n}")
            if f.is_zero():
                raise ValueError("zero polynomial is not a usable constraint")
        object.__setattr__(self, "constraints", constraints)

    @property
    def half_degrees(self) -> tuple[int, ...]:
        return tuple(math.ceil(f.degree / 2) for f in self.constraints)


class MomentMatrixLayout:
    """Symbolic moment matrix: entry (j, k) is the moment index a_j + a_k."""

    __slots__ = ("order", "basis", "entry_index")

    def __init__(self, order: int, basis: MonomialBasis):
        self.order = order
        self.basis = basis
        self.entry_index = tuple(
            tuple(a + b for b in basis) for a in basis
        )

    @property
    def size(self) -> int:
        return len(self.basis)


@lru_cache(maxsize=256)
def moment_matrix_layout(n: int, order: int) -> MomentMatrixLayout:
    """Layout of the order-d moment matrix in n variables."""
    return MomentMatrixLayout(order, enumerate_basis(n, order))


class LocalizingLayout:
    """Moment matrix shifted by a polynomial g.

    Entry (j, k) is the linear form sum_beta g_beta * y_{beta + a_j + a_k},
    stored as tuples of (coefficient, index).  With g identically 1 this
    reduces to the plain moment matrix layout.
    """

    __slots__ = ("g", "order", "inner_order", "basis", "entries")

    def __init__(self, g: Polynomial, order: int, inner_order: int):
        self.g = g
        self.order = order
        self.inner_order = inner_order
        self.basis = enumerate_basis(g.n, inner_order)
        self.entries = tuple(
            tuple(
                tuple((coef, beta + (a + b)) for beta, coef in g.terms.items())
                for b in self.basis
            )
            for a in self.basis
        )

    @property
    def size(self) -> int:
        return len(self.basis)


def localizing_layout(g: Polynomial, order: int) -> LocalizingLayout:
    """Localizing matrix layout of g at relaxation order ``order``.

    The matrix has rows indexed by monomials up to order - ceil(deg(g)/2),
    so every moment it references stays within degree 2 * order.
    """
    if g.is_zero():
        raise ValueError("cannot localize the zero polynomial")
    v = math.ceil(g.degree / 2)
    inner = order - v
    if inner < 0:
        raise ValueError(
            f"relaxation order too small for constraint degree: "
            f"order {order} < ceil({g.degree}/2) = {v}"
        )
    return LocalizingLayout(g, order, inner)


def moment_matrix_value(values: dict[MultiIndex, float], n: int, order: int) -> np.ndarray:
    """Numeric moment matrix of a moment assignment (dict or sequence)."""
    layout = moment_matrix_layout(n, order)
    s = layout.size
    out = np.empty((s, s))
    for j in range(s):
        for k in range(s):
            out[j, k] = values[layout.entry_index[j][k]]
    return out


@dataclass(frozen=True)
class RankCertificate:
    """Numerical ranks used by the flat-rank optimality test.

    ``satisfied`` is True when rank M_i(y) == rank M_{i-v}(y) and
    rank M_i(z) == rank M_{i-1}(z); this certifies the bound is exact for
    the underlying moment problem.  It is a diagnostic and never changes
    the reported bound.
    """

    order: int
    v: int
    rank_y: int
    rank_y_lower: int
    rank_z: int
    rank_z_lower: int
    satisfied: bool


@dataclass(frozen=True)
class BoundResult:
    """Outcome of one bound computation.

    ``rho`` is the recovered mass y_0 (NaN when the solve failed);
    ``y`` and ``z`` are the recovered moment splits up to degree
    2 * order.  ``guarded`` marks a retry with box bounds on the moment
    variables after a non-optimal first attempt.
    """

    rho: float
    order: int
    status: SolveStatus
    y: dict[MultiIndex, float] | None
    z: dict[MultiIndex, float] | None
    rank_certificate: RankCertificate | None = None
    guarded: bool = False
    iterations: int = 0


def _moment_block_patterns(n: int, order: int) -> dict[MultiIndex, np.ndarray]:
    layout = moment_matrix_layout(n, order)
    s = layout.size
    patterns: dict[MultiIndex, np.ndarray] = {}
    for j in range(s):
        for kk in range(s):
            idx = layout.entry_index[j][kk]
            mat = patterns.get(idx)
            if mat is None:
                mat = patterns.setdefault(idx, np.zeros((s, s)))
            mat[j, kk] = 1.0
    return patterns


def assemble_upper_bound(
    gamma: MomentSequence,
    region: SemialgebraicSet,
    order: int,
    *,
    guard_bound: float | None = None,
) -> ConicProgram:
    """Build the conic program whose optimum bounds the mass of the region.

    Variables are the y moments up to degree 2 * order followed by the z
    moments up to gamma's degree, both in graded-lex order.  Blocks are
    the moment matrix of y at ``order``, the moment matrix of z, and one
    localizing matrix per constraint; the only equalities are
    y_a + z_a = gamma_a over the known index set, each row scaled by
    max(1, |gamma_a|).

    The z moment matrix uses order floor(k/2), the largest order whose
    entries are all tied to known moments.  For odd k this drops the
    block with free top-degree entries; the optimum is unchanged (any
    strictly feasible smaller matrix extends to a PSD completion of the
    larger one), while the free entries would otherwise leave the
    interior-point method without a strictly feasible dual side.  The y
    moments above degree k remain free and are pinned only by the PSD
    blocks, unless ``guard_bound`` adds |v| <= guard_bound boxes.
    """
    n = gamma.n
    k = gamma.max_degree
    if region.n != n:
        raise ValueError(f"set dimension {region.n} != moment dimension {n}")
    v_max = max(region.half_degrees)
    if order < v_max:
        raise ValueError(
            f"relaxation order too small for constraint degree: "
            f"order {order} < {v_max}"
        )
    if 2 * order < k:
        raise ValueError(
            f"order {order} cannot use moments up to degree {k}; "
            f"restrict the sequence to degree {2 * order} or raise the order"
        )

    big = enumerate_basis(n, 2 * order)
    s_big = len(big)
    z_basis = enumerate_basis(n, k)
    num_vars = s_big + len(z_basis)
    y_pos = {alpha: j for j, alpha in enumerate(big)}
    z_pos = {alpha: s_big + j for j, alpha in enumerate(z_basis)}

    y_patterns = _moment_block_patterns(n, order)
    z_order = k // 2
    z_patterns = _moment_block_patterns(n, z_order)
    s = moment_matrix_layout(n, order).size
    s_z = moment_matrix_layout(n, z_order).size
    blocks = [
        PsdBlock(s, coeffs={y_pos[idx]: mat for idx, mat in y_patterns.items()}),
        PsdBlock(s_z, coeffs={z_pos[idx]: mat for idx, mat in z_patterns.items()}),
    ]
    for f in region.constraints:
        loc = localizing_layout(f, order)
        sl = loc.size
        coeffs: dict[int, np.ndarray] = {}
        for j in range(sl):
            for kk in range(sl):
                for coef, idx in loc.entries[j][kk]:
                    var = y_pos[idx]
                    mat = coeffs.get(var)
                    if mat is None:
                        mat = coeffs.setdefault(var, np.zeros((sl, sl)))
                    mat[j, kk] += coef
        blocks.append(PsdBlock(sl, coeffs=coeffs))

    if guard_bound is not None:
        one = np.ones((1, 1))
        box = float(guard_bound) * one
        for var in range(num_vars):
            blocks.append(PsdBlock(1, constant=box, coeffs={var: one}))
            blocks.append(PsdBlock(1, constant=box, coeffs={var: -one}))

    equalities = []
    for alpha in enumerate_basis(n, k):
        g = gamma[alpha]
        scale = max(1.0, abs(g))
        equalities.append(
            LinearEquality(
                coeffs={y_pos[alpha]: 1.0 / scale, z_pos[alpha]: 1.0 / scale},
                rhs=g / scale,
            )
        )

    objective = np.zeros(num_vars)
    objective[y_pos[MultiIndex.zero(n)]] = 1.0
    return ConicProgram(
        num_vars, objective, blocks, equalities, sense="maximize"
    )


def _recover(free_values: np.ndarray, n: int, order: int, k: int):
    big = enumerate_basis(n, 2 * order)
    s_big = len(big)
    y = {alpha: float(free_values[j]) for j, alpha in enumerate(big)}
    z = {
        alpha: float(free_values[s_big + j])
        for j, alpha in enumerate(enumerate_basis(n, k))
    }
    return y, z


def _certificate(y, z, n, order, v, k, rel_tol=1e-6) -> RankCertificate:
    """Flat-rank diagnostics at the largest orders the moments support.

    The y side compares orders (order, order - v).  The z side compares
    (floor(k/2), floor(k/2) - 1), which coincides with (order, order - 1)
    whenever the relaxation order matches the moment degree (k = 2 *
    order) and otherwise uses every known z moment.
    """
    z_order = k // 2
    rank_y = numerical_rank(moment_matrix_value(y, n, order), rel_tol)
    rank_y_lower = numerical_rank(moment_matrix_value(y, n, order - v), rel_tol)
    rank_z = numerical_rank(moment_matrix_value(z, n, z_order), rel_tol)
    rank_z_lower = numerical_rank(
        moment_matrix_value(z, n, max(z_order - 1, 0)), rel_tol
    )
    return RankCertificate(
        order=order,
        v=v,
        rank_y=rank_y,
        rank_y_lower=rank_y_lower,
        rank_z=rank_z,
        rank_z_lower=rank_z_lower,
        satisfied=(rank_y == rank_y_lower) and (rank_z == rank_z_lower),
    )


def upper_bound(
    gamma: MomentSequence,
    region: SemialgebraicSet,
    order: int,
    *,
    certificate: bool = False,
    options: SolverOptions | None = None,
    allow_guard_retry: bool = True,
) -> BoundResult:
    """Upper bound on the probability of the region, with solver status.

    A non-optimal first solve (typically an unbounded drift in moments
    above the known degree) is retried once with |variable| <= 10^(2 *
    order) guards; the result is then flagged ``guarded``.
    """
    prog = assemble_upper_bound(gamma, region, order)
    sol = solve(prog, options)
    guarded = False
    if sol.status not in (SolveStatus.OPTIMAL, SolveStatus.INFEASIBLE) and allow_guard_retry:
        guarded_prog = assemble_upper_bound(
            gamma, region, order, guard_bound=10.0 ** (2 * order)
        )
        retry = solve(guarded_prog, options)
        if retry.status == SolveStatus.OPTIMAL:
            sol = retry
            guarded = True

    if sol.free_values is None:
        return BoundResult(
            rho=math.nan,
            order=order,
            status=sol.status,
            y=None,
            z=None,
            guarded=guarded,
            iterations=sol.iterations,
        )

    y, z = _recover(sol.free_values, gamma.n, order, gamma.max_degree)
    rho = y[MultiIndex.zero(gamma.n)]
    cert = None
    if certificate and sol.status == SolveStatus.OPTIMAL and order >= 1:
        cert = _certificate(
            y, z, gamma.n, order, max(region.half_degrees), gamma.max_degree
        )
    return BoundResult(
        rho=rho,
        order=order,
        status=sol.status,
        y=y,
        z=z,
        rank_certificate=cert,
        guarded=guarded,
        iterations=sol.iterations,
    )


def lower_bound(
    gamma: MomentSequence,
    region: SemialgebraicSet,
    order: int,
    *,
    options: SolverOptions | None = None,
) -> BoundResult:
    """Lower bound via the complement: 1 minus the complement's upper bound.

    Only sets cut out by a single constraint g >= 0 are supported, since
    only then is the complement {-g >= 0} again a polynomial set of the
    same form.  The recovered y/z moments belong to the complement solve.
    """
    if len(region.constraints) != 1:
        raise ValueError(
            "lower bounds support single-constraint sets only "
            f"(got {len(region.constraints)} constraints)"
        )
    complement = SemialgebraicSet(region.n, (-region.constraints[0],))
    res = upper_bound(gamma, complement, order, options=options)
    rho = math.nan
    if math.isfinite(res.rho):
        rho = min(1.0, max(0.0, 1.0 - res.rho))
    return BoundResult(
        rho=rho,
        order=order,
        status=res.status,
        y=res.y,
        z=res.z,
        guarded=res.guarded,
        iterations=res.iterations,
    )


def rank_optimality(result: BoundResult, v: int) -> bool:
    """Flat-rank test on an optimal bound; certifies exactness when True."""
    if result.status != SolveStatus.OPTIMAL:
        raise ValueError(
            f"rank test requires an optimal bound, got status {result.status.value}"
        )
    if result.order < 1:
        raise ValueError("rank test needs relaxation order >= 1")
    if result.order - v < 0:
        raise ValueError(f"order {result.order} smaller than half-degree {v}")
    if result.y is None or result.z is None:
        raise ValueError("bound carries no recovered moments")
    n = len(next(iter(result.y)))
    k = max(alpha.degree for alpha in result.z)
    return _certificate(result.y, result.z, n, result.order, v, k).satisfied

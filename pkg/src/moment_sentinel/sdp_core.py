"""Dense conic programs with PSD blocks and their interior-point solver.

A :class:`ConicProgram` has scalar variables v, affine symmetric matrix
expressions ("blocks") required positive semidefinite, linear equality
constraints on v, and a linear objective.  This is the natural host for
moment relaxations, where the variables are moment values and the blocks
are moment and localizing matrices.

The solver is a primal-dual path-following interior-point method with
Nesterov-Todd scaling and a Mehrotra predictor-corrector step, using
dense Cholesky factorizations of the Schur complement.  Problems here
have blocks well under 200x200, where the dense path is simple and
robust.  Equality constraints are eliminated onto the nullspace before
the interior-point iteration, so they hold to machine precision in every
reported solution.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

__all__ = [
    "SolveStatus",
    "SolverOptions",
    "PsdBlock",
    "LinearEquality",
    "ConicProgram",
    "ConicSolution",
    "solve",
    "psd_min_eigenvalue",
    "numerical_rank",
    "symmetric_variable_block",
    "matrix_inner_coeffs",
    "dump_program",
]

_SYM_TOL = 1e-12


class SolveStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverOptions:
    """Termination tolerances for :func:`solve`.

    ``gap_tol`` and ``feas_tol`` are the targets; when progress stalls, a
    solution already within ``accept_gap`` / ``accept_feas`` is still
    reported optimal (reduced precision, same contract).
    """

    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iterations: int = 200
    accept_gap: float = 9e-7
    accept_feas: float = 1e-6
    step_fraction: float = 0.98
    trace: bool = False

    def acceptable(self, pinf: float, dinf: float, pobj: float, dobj: float) -> bool:
        """Reduced-precision acceptance: the reported pair still brackets
        the optimum within accept_gap * (1 + |pobj|) and both residuals
        are below accept_feas."""
        return (
            pinf <= self.accept_feas
            and dinf <= self.accept_feas
            and abs(pobj - dobj) <= self.accept_gap * (1.0 + abs(pobj))
        )


def _symmetrize(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{what} must be square, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{what} contains non-finite entries")
    scale = 1.0 + np.abs(mat).max(initial=0.0)
    if np.abs(mat - mat.T).max(initial=0.0) > _SYM_TOL * scale:
        raise ValueError(f"{what} is not symmetric")
    return (mat + mat.T) / 2.0


class PsdBlock:
    """Affine symmetric matrix expression constrained to be PSD.

    The block value at variables v is ``constant + sum_k v[k] * coeffs[k]``.
    """

    __slots__ = ("size", "constant", "coeffs")

    def __init__(self, size: int, constant=None, coeffs=None):
        if size < 1:
            raise ValueError(f"block size must be >= 1, got {size}")
        self.size = int(size)
        if constant is None:
            constant = np.zeros((size, size))
        self.constant = _symmetrize(constant, "block constant")
        if self.constant.shape != (size, size):
            raise ValueError("block constant has wrong shape")
        self.coeffs: dict[int, np.ndarray] = {}
        for k, mat in (coeffs or {}).items():
            sym = _symmetrize(mat, f"coefficient matrix for variable {k}")
            if sym.shape != (size, size):
                raise ValueError(f"coefficient for variable {k} has wrong shape")
            self.coeffs[int(k)] = sym

    def value_at(self, v: np.ndarray) -> np.ndarray:
        out = self.constant.copy()
        for k, mat in self.coeffs.items():
            out += v[k] * mat
        return out


@dataclass(frozen=True)
class LinearEquality:
    """Equality sum_k coeffs[k] v_k + sum_b <block_coeffs[b], Block_b(v)> = rhs."""

    coeffs: dict[int, float] = field(default_factory=dict)
    rhs: float = 0.0
    block_coeffs: dict[int, np.ndarray] = field(default_factory=dict)


class ConicProgram:
    """Immutable container: variables, PSD blocks, equalities, objective.

    ``objective_blocks`` lets the objective read block entries directly
    (``<M, Block_b(v)>`` terms); both it and equality block terms reduce
    to linear functions of v internally since blocks are affine in v.
    """

    def __init__(
        self,
        num_vars: int,
        objective,
        blocks,
        equalities=(),
        *,
        sense: str = "minimize",
        objective_offset: float = 0.0,
        objective_blocks: dict[int, np.ndarray] | None = None,
    ):
        if num_vars < 0:
            raise ValueError("num_vars must be >= 0")
        if sense not in ("minimize", "maximize"):
            raise ValueError(f"sense must be 'minimize' or 'maximize', got {sense!r}")
        self.num_vars = int(num_vars)
        self.sense = sense
        self.blocks: tuple[PsdBlock, ...] = tuple(blocks)
        if len(self.blocks) + len(tuple(equalities)) < 1:
            raise ValueError("program needs at least one block or equality")
        for blk in self.blocks:
            for k in blk.coeffs:
                if not 0 <= k < num_vars:
                    raise ValueError(f"block references unknown variable {k}")

        obj = np.zeros(num_vars) if objective is None else np.asarray(objective, float)
        if obj.shape != (num_vars,):
            raise ValueError(f"objective must have shape ({num_vars},)")
        offset = float(objective_offset)
        obj = obj.copy()
        for b, mat in (objective_blocks or {}).items():
            row, const = self._reduce_block_term(b, mat)
            obj += row
            offset += const
        if not (np.all(np.isfinite(obj)) and np.isfinite(offset)):
            raise ValueError("objective contains non-finite entries")
        self.objective = obj
        self.objective_offset = offset

        rows, rhs = [], []
        for eq in equalities:
            row = np.zeros(num_vars)
            r = float(eq.rhs)
            for k, c in eq.coeffs.items():
                if not 0 <= int(k) < num_vars:
                    raise ValueError(f"equality references unknown variable {k}")
                row[int(k)] += float(c)
            for b, mat in eq.block_coeffs.items():
                brow, const = self._reduce_block_term(b, mat)
                row += brow
                r -= const
            if not (np.all(np.isfinite(row)) and np.isfinite(r)):
                raise ValueError("equality contains non-finite entries")
            rows.append(row)
            rhs.append(r)
        self.eq_matrix = np.array(rows).reshape(len(rows), num_vars)
        self.eq_rhs = np.asarray(rhs, float)

    def _reduce_block_term(self, b: int, mat) -> tuple[np.ndarray, float]:
        if not 0 <= int(b) < len(self.blocks):
            raise ValueError(f"unknown block index {b}")
        blk = self.blocks[int(b)]
        sym = _symmetrize(mat, f"pairing matrix for block {b}")
        if sym.shape != (blk.size, blk.size):
            raise ValueError(f"pairing matrix for block {b} has wrong shape")
        row = np.zeros(self.num_vars)
        for k, coeff_mat in blk.coeffs.items():
            row[k] = float(np.tensordot(sym, coeff_mat))
        return row, float(np.tensordot(sym, blk.constant))

    @property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(blk.size for blk in self.blocks)

    @property
    def num_equalities(self) -> int:
        return self.eq_matrix.shape[0]


@dataclass(frozen=True)
class ConicSolution:
    """Solver output.

    ``primal_objective`` and ``dual_objective`` bracket the optimum with
    ``dual_objective <= primal_objective`` (up to roundoff) regardless of
    sense: for a maximization the attained objective is the dual side and
    the conic bound is the primal side, and vice versa for minimization.
    ``objective_value`` is the user's objective evaluated at
    ``free_values`` whenever an iterate is available.
    """

    status: SolveStatus
    primal_objective: float
    dual_objective: float
    block_values: tuple[np.ndarray, ...] | None
    free_values: np.ndarray | None
    iterations: int
    objective_value: float = math.nan


def psd_min_eigenvalue(mat) -> float:
    """Smallest eigenvalue of a symmetric matrix (symmetry enforced)."""
    sym = _symmetrize(mat, "matrix")
    return float(np.linalg.eigvalsh(sym)[0])


def numerical_rank(mat, rel_tol: float = 1e-6) -> int:
    """Count of eigenvalues exceeding rel_tol times the largest magnitude."""
    sym = _symmetrize(mat, "matrix")
    absw = np.abs(np.linalg.eigvalsh(sym))
    top = absw.max(initial=0.0)
    if top == 0.0:
        return 0
    return int(np.sum(absw > rel_tol * top))


def symmetric_variable_block(size: int, first_var: int = 0):
    """A PSD block whose entries are fresh scalar variables.

    Returns ``(block, var_of_entry, next_var)`` where ``var_of_entry(i, j)``
    maps a matrix entry to its variable index (upper-triangle layout) and
    ``next_var`` is the first unused variable index.
    """
    coeffs: dict[int, np.ndarray] = {}
    index: dict[tuple[int, int], int] = {}
    v = first_var
    for i in range(size):
        for j in range(i, size):
            mat = np.zeros((size, size))
            mat[i, j] = mat[j, i] = 1.0
            coeffs[v] = mat
            index[(i, j)] = v
            v += 1

    def var_of_entry(i: int, j: int) -> int:
        return index[(min(i, j), max(i, j))]

    return PsdBlock(size, coeffs=coeffs), var_of_entry, v


def matrix_inner_coeffs(mat, var_of_entry) -> dict[int, float]:
    """Variable coefficients of <mat, X> for a symmetric_variable_block X."""
    sym = _symmetrize(mat, "matrix")
    out: dict[int, float] = {}
    n = sym.shape[0]
    for i in range(n):
        for j in range(i, n):
            c = sym[i, j] * (1.0 if i == j else 2.0)
            if c != 0.0:
                out[var_of_entry(i, j)] = out.get(var_of_entry(i, j), 0.0) + c
    return out


def dump_program(program: ConicProgram, stream) -> None:
    """Write a plain-text sparse dump for cross-checking with other solvers.

    Lines are space separated:
      ``var``    count, then ``obj <var> <value>`` entries plus an
                 ``objconst`` line, with the sense recorded first;
      ``eq <row> <var> <value>`` sparse equality coefficients and
      ``rhs <row> <value>``;
      ``blk <block> <row> <col> <matrix> <value>`` upper-triangle entries,
                 where matrix 0 is the constant term and matrix k is the
                 coefficient of variable k-1.
    """
    w = stream.write
    w(f"sense {program.sense}\n")
    w(f"var {program.num_vars}\n")
    w(f"objconst {program.objective_offset!r}\n")
    for k, c in enumerate(program.objective):
        if c != 0.0:
            w(f"obj {k} {c!r}\n")
    for row in range(program.num_equalities):
        for k in np.nonzero(program.eq_matrix[row])[0]:
            w(f"eq {row} {k} {program.eq_matrix[row, k]!r}\n")
        w(f"rhs {row} {program.eq_rhs[row]!r}\n")
    for b, blk in enumerate(program.blocks):
        for i, j in zip(*np.triu_indices(blk.size)):
            if blk.constant[i, j] != 0.0:
                w(f"blk {b} {i} {j} 0 {blk.constant[i, j]!r}\n")
        for k in sorted(blk.coeffs):
            mat = blk.coeffs[k]
            for i, j in zip(*np.triu_indices(blk.size)):
                if mat[i, j] != 0.0:
                    w(f"blk {b} {i} {j} {k + 1} {mat[i, j]!r}\n")


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def solve(program: ConicProgram, options: SolverOptions | None = None) -> ConicSolution:
    """Solve a ConicProgram; failures are reported via status, not raised."""
    opts = options or SolverOptions()
    sign = 1.0 if program.sense == "maximize" else -1.0
    c = sign * program.objective  # internally always maximize c.v

    # Eliminate equality constraints: v = v0 + N w.  When every row owns a
    # pivot column unique to it (the moment-split structure), elimination
    # is sparse and exact; otherwise fall back to a dense SVD nullspace.
    E, r = program.eq_matrix, program.eq_rhs
    nv = program.num_vars
    if E.shape[0] > 0 and nv > 0:
        reduced = _pivot_elimination(E, r)
        if reduced is None:
            v0, *_ = np.linalg.lstsq(E, r, rcond=None)
            resid = np.abs(E @ v0 - r).max(initial=0.0)
            if resid > 1e-9 * (1.0 + np.abs(r).max(initial=0.0)):
                return _certificate_solution(SolveStatus.INFEASIBLE, 0)
            _, sv, Vt = np.linalg.svd(E, full_matrices=True)
            rank = int(
                np.sum(sv > max(E.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0))
            )
            N = Vt[rank:].T
        elif reduced == "infeasible":
            return _certificate_solution(SolveStatus.INFEASIBLE, 0)
        else:
            v0, N = reduced
    elif nv > 0:
        v0 = np.zeros(nv)
        N = scipy.sparse.identity(nv, format="csr")
    else:
        v0 = np.zeros(0)
        N = np.zeros((0, 0))

    m_full = N.shape[1] if nv > 0 else 0

    # Per-block reduction onto the w coordinates, keeping sparse triplet
    # form when the dense (m, s, s) tensor would be heavyweight.
    blocks_ops: list[_DenseBlockOps | _SparseBlockOps] = []
    for blk in program.blocks:
        blocks_ops.append(_reduce_block(blk, v0, N, m_full))
    b_full = np.asarray(N.T @ c).reshape(-1) if nv > 0 else np.zeros(0)
    offset = float(c @ v0)

    def finish(status, w, iterations, internal_pobj, internal_dobj):
        if w is None:
            return _certificate_solution(status, iterations)
        v = v0 + (N @ w if m_full else 0.0)
        blk_values = tuple(blk.value_at(v) for blk in program.blocks)
        attained = sign * (internal_dobj + offset) + program.objective_offset
        bound = sign * (internal_pobj + offset) + program.objective_offset
        if sign > 0:
            primal, dual = bound, attained
        else:
            primal, dual = attained, bound
        return ConicSolution(
            status=status,
            primal_objective=primal,
            dual_objective=dual,
            block_values=blk_values,
            free_values=np.asarray(v, dtype=float),
            iterations=iterations,
            objective_value=float(program.objective @ v) + program.objective_offset,
        )

    if m_full == 0:
        return _solve_fixed_point(blocks_ops, finish)

    # Remove directions the blocks cannot see.  A nullspace direction with
    # an objective component certifies unboundedness; without one it is
    # redundant and fixed to zero.  When nothing is degenerate (the normal
    # case) the variables are kept as they are.
    gram = np.zeros((m_full, m_full))
    for ops in blocks_ops:
        gram += ops.gram()
    gw, gv = np.linalg.eigh(gram)
    scale = gw[-1] if gw.size else 0.0
    keep = gw > max(scale, 1.0) * 1e-13
    if not keep.all():
        null_dirs = gv[:, ~keep]
        drift = null_dirs.T @ b_full
        if np.abs(drift).max(initial=0.0) > 1e-9 * (1.0 + np.abs(b_full).max(initial=0.0)):
            return _certificate_solution(SolveStatus.UNBOUNDED, 0, unbounded_sign=sign)
        Q = gv[:, keep]
        if Q.shape[1] == 0:
            return _solve_fixed_point(blocks_ops, finish)
        blocks_ops = [ops.rotate(Q) for ops in blocks_ops]
        b_red = Q.T @ b_full
    else:
        Q = None
        b_red = b_full

    for ops in blocks_ops:
        ops.equilibrate()

    state = _InteriorPointState(blocks_ops, b_red, opts)
    status, u_red, iterations, pobj, dobj = state.run()
    if u_red is None:
        return _certificate_solution(status, iterations, unbounded_sign=sign)
    return finish(status, Q @ u_red if Q is not None else u_red, iterations, pobj, dobj)


def _pivot_elimination(E, r):
    """Sparse elimination when each row has a column unique to that row.

    Returns (v0, N_csr), the string "infeasible", or None when the
    structure does not apply.
    """
    m_eq, nv = E.shape
    nonzero = E != 0.0
    col_rows = nonzero.sum(axis=0)
    pivot_of_row = np.full(m_eq, -1)
    is_pivot = np.zeros(nv, dtype=bool)
    for i in range(m_eq):
        cols = np.nonzero(nonzero[i])[0]
        if cols.size == 0:
            if abs(r[i]) > 1e-12:
                return "infeasible"
            continue
        unique = cols[col_rows[cols] == 1]
        if unique.size == 0:
            return None
        pick = unique[np.argmax(np.abs(E[i, unique]))]
        pivot_of_row[i] = pick
        is_pivot[pick] = True

    free_cols = np.nonzero(~is_pivot)[0]
    col_to_w = {int(cj): j for j, cj in enumerate(free_cols)}
    v0 = np.zeros(nv)
    rows_n, cols_n, vals_n = [], [], []
    for j, cj in enumerate(free_cols):
        rows_n.append(int(cj))
        cols_n.append(j)
        vals_n.append(1.0)
    for i in range(m_eq):
        p = pivot_of_row[i]
        if p < 0:
            continue
        piv = E[i, p]
        v0[p] = r[i] / piv
        for cj in np.nonzero(nonzero[i])[0]:
            if cj == p:
                continue
            rows_n.append(int(p))
            cols_n.append(col_to_w[int(cj)])
            vals_n.append(-E[i, cj] / piv)
    N = scipy.sparse.csr_matrix(
        (vals_n, (rows_n, cols_n)), shape=(nv, free_cols.size)
    )
    return v0, N


def _block_triplets(blk: PsdBlock):
    """COO triplets (var, row, col, val) of a block's coefficient maps."""
    var, row, col, val = [], [], [], []
    for k in sorted(blk.coeffs):
        mat = blk.coeffs[k]
        rr, cc = np.nonzero(mat)
        var.append(np.full(rr.size, k))
        row.append(rr)
        col.append(cc)
        val.append(mat[rr, cc])
    if not var:
        empty = np.zeros(0)
        return empty.astype(int), empty.astype(int), empty.astype(int), empty
    return (
        np.concatenate(var),
        np.concatenate(row),
        np.concatenate(col),
        np.concatenate(val),
    )


# A block whose dense reduced tensor would exceed this many floats stays
# in sparse triplet form (the Schur assembly then runs on grouped rows).
_DENSE_BLOCK_LIMIT = 2_000_000


def _reduce_block(blk: PsdBlock, v0, N, m_full):
    """Reduced block in internal sign convention: value = C - sum_j w_j A_j."""
    s = blk.size
    var, row, col, val = _block_triplets(blk)
    const = blk.constant.copy()
    if val.size:
        const_add = np.bincount(
            row * s + col, weights=val * v0[var], minlength=s * s
        ).reshape(s, s)
        const = const + const_add
    val = -val

    if scipy.sparse.issparse(N):
        if val.size:
            Ncsr = N.tocsr()
            starts = Ncsr.indptr[var]
            lens = np.diff(Ncsr.indptr)[var]
            total = int(lens.sum())
            if total:
                cum = np.cumsum(lens)
                take = np.arange(total) - np.repeat(cum - lens, lens) + np.repeat(starts, lens)
                w_var = Ncsr.indices[take]
                factor = Ncsr.data[take]
                w_row = np.repeat(row, lens)
                w_col = np.repeat(col, lens)
                w_val = np.repeat(val, lens) * factor
            else:
                w_var = np.zeros(0, dtype=int)
                w_row = w_col = w_var
                w_val = np.zeros(0)
        else:
            w_var = np.zeros(0, dtype=int)
            w_row = w_col = w_var
            w_val = np.zeros(0)
        if m_full * s * s <= _DENSE_BLOCK_LIMIT:
            A = np.zeros((m_full, s, s))
            np.add.at(A, (w_var, w_row, w_col), w_val)
            return _DenseBlockOps(const, A)
        return _SparseBlockOps(const, m_full, s, w_var, w_row, w_col, w_val)

    # Dense nullspace: reduce densely.
    A = np.zeros((m_full, s, s))
    if val.size:
        for k in np.unique(var):
            sel = var == k
            mat = np.zeros((s, s))
            mat[row[sel], col[sel]] = val[sel]
            A += N[k][:, None, None] * mat[None, :, :]
    return _DenseBlockOps(const, A)


class _DenseBlockOps:
    """Reduced block with a dense (m, s, s) coefficient tensor."""

    def __init__(self, C, A):
        self.C = (C + C.T) / 2.0
        self.A = A
        self.size = C.shape[0]
        self.m = A.shape[0]

    def var_norms(self):
        return np.linalg.norm(self.A.reshape(self.m, -1), axis=1)

    def data_scale(self):
        return max(
            float(np.abs(self.C).max(initial=0.0)),
            float(np.abs(self.A).max(initial=0.0)),
        )

    def equilibrate(self):
        scale = self.data_scale()
        if scale > 0.0 and (scale > 1e3 or scale < 1e-3):
            self.C = self.C / scale
            self.A = self.A / scale

    def rotate(self, Q):
        return _DenseBlockOps(self.C, np.tensordot(Q.T, self.A, axes=(1, 0)))

    def gram(self):
        flat = self.A.reshape(self.m, -1)
        return flat @ flat.T

    def apply_A(self, Xb):
        return self.A.reshape(self.m, -1) @ Xb.reshape(-1)

    def apply_At(self, u):
        return np.tensordot(u, self.A, axes=1)

    def prepare(self, Gb):
        """Per-iteration NT-scaled data: Schur contribution and the map
        R -> <A_j, G R G^T> for all j."""
        T = np.matmul(np.matmul(Gb.T[None, :, :], self.A), Gb)
        flat = T.reshape(self.m, -1)
        M = flat @ flat.T

        def inner(Rhat):
            return flat @ Rhat.reshape(-1)

        return M, inner


class _SparseBlockOps:
    """Reduced block kept as COO triplets grouped by variable."""

    def __init__(self, C, m, size, var, row, col, val):
        self.C = (C + C.T) / 2.0
        self.m = m
        self.size = size
        order = np.argsort(var, kind="stable")
        self.var = var[order]
        self.row = row[order]
        self.col = col[order]
        self.val = val[order]
        counts = np.bincount(self.var, minlength=m)
        self.ptr = np.concatenate(([0], np.cumsum(counts)))
        self.P = scipy.sparse.csr_matrix(
            (self.val, (self.var, self.row * size + self.col)),
            shape=(m, size * size),
        )

    def var_norms(self):
        return np.sqrt(
            np.bincount(self.var, weights=self.val**2, minlength=self.m)
        )

    def data_scale(self):
        return max(
            float(np.abs(self.C).max(initial=0.0)),
            float(np.abs(self.val).max(initial=0.0)) if self.val.size else 0.0,
        )

    def equilibrate(self):
        scale = self.data_scale()
        if scale > 0.0 and (scale > 1e3 or scale < 1e-3):
            self.C = self.C / scale
            self.val = self.val / scale
            self.P = self.P / scale

    def rotate(self, Q):
        dense = np.zeros((self.m, self.size, self.size))
        np.add.at(dense, (self.var, self.row, self.col), self.val)
        return _DenseBlockOps(self.C, np.tensordot(Q.T, dense, axes=(1, 0)))

    def gram(self):
        return np.asarray((self.P @ self.P.T).todense())

    def apply_A(self, Xb):
        return self.P @ Xb.reshape(-1)

    def apply_At(self, u):
        return np.asarray(self.P.T @ u).reshape(self.size, self.size)

    def prepare(self, Gb):
        W = Gb @ Gb.T
        s = self.size
        Wr = W[:, self.row] * self.val
        Wc = W[:, self.col]
        Y = np.zeros((self.m, s * s))
        ptr = self.ptr
        for k in range(self.m):
            a, b = ptr[k], ptr[k + 1]
            if a == b:
                continue
            Y[k] = (Wr[:, a:b] @ Wc[:, a:b].T).reshape(-1)
        M = np.asarray(self.P @ Y.T)
        M = (M + M.T) / 2.0

        def inner(Rhat):
            Z = Gb @ Rhat @ Gb.T
            return self.P @ Z.reshape(-1)

        return M, inner


def _certificate_solution(status, iterations, unbounded_sign=0.0):
    if status == SolveStatus.UNBOUNDED:
        val = math.inf if unbounded_sign > 0 else -math.inf
        primal = dual = val
    else:
        primal = dual = math.nan
    return ConicSolution(
        status=status,
        primal_objective=primal,
        dual_objective=dual,
        block_values=None,
        free_values=None,
        iterations=iterations,
    )


def _solve_fixed_point(blocks_ops, finish):
    """All variables pinned by equalities: pure feasibility check."""
    worst = min(
        (
            float(np.linalg.eigvalsh(ops.C)[0])
            / (1.0 + np.abs(ops.C).max(initial=0.0))
        )
        for ops in blocks_ops
    ) if blocks_ops else 0.0
    if worst < -1e-9:
        return _certificate_solution(SolveStatus.INFEASIBLE, 0)
    return finish(SolveStatus.OPTIMAL, np.zeros(0), 0, 0.0, 0.0)


class _InteriorPointState:
    """One interior-point run on max b.u s.t. C_b - sum_j u_j A_bj >= 0.

    Primal side: min <C, X> s.t. <A_j, X> = b_j, X >= 0 (blockwise).
    """

    def __init__(self, blocks_ops, b, opts: SolverOptions):
        self.ops = blocks_ops
        self.b = b
        self.C = [o.C for o in blocks_ops]
        self.opts = opts
        self.m = b.shape[0]
        self.sizes = [o.size for o in blocks_ops]
        self.total_dim = sum(self.sizes)
        self.norm_b = float(np.linalg.norm(b))
        self.norm_C = math.sqrt(sum(float(np.sum(cb * cb)) for cb in self.C))

    # -- linear operators ---------------------------------------------------
    def _apply_A(self, X):
        return sum(o.apply_A(Xb) for o, Xb in zip(self.ops, X))

    def _apply_At(self, u):
        return [o.apply_At(u) for o in self.ops]

    # -- initial point ------------------------------------------------------
    def _initial(self):
        X, S = [], []
        for o, cb, s in zip(self.ops, self.C, self.sizes):
            normsA = o.var_norms()
            xi = max(
                10.0,
                math.sqrt(s),
                s * float(np.max((1.0 + np.abs(self.b)) / (1.0 + normsA), initial=0.0)),
            )
            eta = max(
                10.0,
                math.sqrt(s),
                float(np.linalg.norm(cb)),
                float(np.max(normsA, initial=0.0)),
            )
            X.append(xi * np.eye(s))
            S.append(eta * np.eye(s))
        return X, np.zeros(self.m), S

    # -- certificates -------------------------------------------------------
    def _unbounded_quality(self, u):
        """How close u is to a ray certifying the LMI side unbounded."""
        bu = float(self.b @ u)
        if bu <= 0.0:
            return math.inf
        viol = 0.0
        scale = 1.0
        for Zb in self._apply_At(u):
            Zb = Zb / bu
            viol = max(viol, -float(np.linalg.eigvalsh(-(Zb + Zb.T) / 2.0)[0]))
            scale = max(scale, float(np.abs(Zb).max(initial=0.0)))
        return viol / scale

    def _infeasible_quality(self, X):
        """How close X is to a certificate that the LMI side is infeasible."""
        cx = sum(float(np.tensordot(cb, Xb)) for cb, Xb in zip(self.C, X))
        if cx >= 0.0:
            return math.inf
        nx = math.sqrt(sum(float(np.sum(Xb * Xb)) for Xb in X))
        if nx == 0.0:
            return math.inf
        resid = float(np.linalg.norm(self._apply_A(X))) / nx
        drop = -cx / nx / (1.0 + self.norm_C / math.sqrt(self.total_dim))
        if drop < 1e-12:
            return math.inf
        return resid / drop

    # -- main loop ------------------------------------------------------------
    def run(self):
        opts = self.opts
        X, u, S = self._initial()
        best = None  # (score, u, pobj, dobj, iteration, pinf, dinf, relgap)
        stall = 0
        last_score = math.inf

        for iteration in range(1, opts.max_iterations + 1):
            try:
                Lx = [np.linalg.cholesky(Xb) for Xb in X]
                Ls = [np.linalg.cholesky(Sb) for Sb in S]
            except np.linalg.LinAlgError:
                return self._final(best, SolveStatus.NUMERICAL_FAILURE, X, u, iteration)

            G, lam = [], []
            try:
                for Lxb, Lsb in zip(Lx, Ls):
                    _, db, Vtb = np.linalg.svd(Lsb.T @ Lxb)
                    if db[-1] <= 0.0:
                        raise np.linalg.LinAlgError
                    Gb = (Lxb @ Vtb.T) / np.sqrt(db)
                    G.append(Gb)
                    lam.append(db)
            except np.linalg.LinAlgError:
                return self._final(best, SolveStatus.NUMERICAL_FAILURE, X, u, iteration)

            mu = sum(float(np.sum(d * d)) for d in lam) / self.total_dim

            AX = self._apply_A(X)
            rp = self.b - AX
            Atu = self._apply_At(u)
            Rd = [cb - Sb - Zb for cb, Sb, Zb in zip(self.C, S, Atu)]

            pobj = sum(float(np.tensordot(cb, Xb)) for cb, Xb in zip(self.C, X))
            dobj = float(self.b @ u)
            relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
            pinf = float(np.linalg.norm(rp)) / (1.0 + self.norm_b)
            dinf = math.sqrt(sum(float(np.sum(R * R)) for R in Rd)) / (1.0 + self.norm_C)
            score = max(pinf, dinf, relgap)
            if opts.trace:
                print(
                    f"iter {iteration:3d} mu={mu:9.3e} gap={relgap:9.3e} "
                    f"pinf={pinf:9.3e} dinf={dinf:9.3e} "
                    f"pobj={pobj:+.9e} dobj={dobj:+.9e} "
                    f"dmin={min(float(d.min()) for d in lam):9.3e}"
                )

            if best is None or score < best[0]:
                best = (score, u.copy(), pobj, dobj, iteration, pinf, dinf, relgap)
            if score > 0.9 * last_score:
                stall += 1
            else:
                stall = 0
            last_score = score

            if pinf <= opts.feas_tol and dinf <= opts.feas_tol and relgap <= opts.gap_tol:
                return SolveStatus.OPTIMAL, u, iteration, pobj, dobj

            if self._unbounded_quality(u) <= 1e-11:
                return SolveStatus.UNBOUNDED, None, iteration, math.nan, math.nan
            if self._infeasible_quality(X) <= 1e-11:
                return SolveStatus.INFEASIBLE, None, iteration, math.nan, math.nan

            # Past the numerically reachable floor the iterates corrupt
            # quickly; stop and fall back to the best iterate seen.
            diverged = score > 100.0 * best[0] and iteration > best[4] + 3
            settled = stall >= 4 and opts.acceptable(best[5], best[6], best[2], best[3])
            if stall >= 10 or diverged or settled:
                return self._final(best, SolveStatus.NUMERICAL_FAILURE, X, u, iteration)

            # Schur complement in the scaled space.
            M = np.zeros((self.m, self.m))
            inners = []
            h_dual = np.zeros(self.m)
            Rdhat_inner = []
            for o, Gb, Rb in zip(self.ops, G, Rd):
                Mb, inner = o.prepare(Gb)
                M += Mb
                Rh = Gb.T @ Rb @ Gb
                h_dual += inner(Rh)
                inners.append(inner)
                Rdhat_inner.append(Rh)

            cho = self._factor_schur(M)
            if cho is None:
                return self._final(best, SolveStatus.NUMERICAL_FAILURE, X, u, iteration)

            def direction(Rc_hat):
                rhs = rp + h_dual
                for inner, Rcb in zip(inners, Rc_hat):
                    rhs = rhs - inner(Rcb)
                du = scipy.linalg.cho_solve(cho, rhs)
                dS = [Rb - Zb for Rb, Zb in zip(Rd, self._apply_At(du))]
                dShat = [Gb.T @ dSb @ Gb for Gb, dSb in zip(G, dS)]
                dXhat = [Rcb - dShb for Rcb, dShb in zip(Rc_hat, dShat)]
                return du, dXhat, dShat, dS

            # Predictor: aim straight at complementarity zero.
            Rc_aff = [-np.diag(d) for d in lam]
            du_a, dXh_a, dSh_a, _ = direction(Rc_aff)
            ap_a = min(1.0, _max_step(lam, dXh_a))
            ad_a = min(1.0, _max_step(lam, dSh_a))
            mu_aff = (
                sum(
                    float(np.tensordot(np.diag(d) + ap_a * dXb,
                                        np.diag(d) + ad_a * dSb))
                    for d, dXb, dSb in zip(lam, dXh_a, dSh_a)
                )
                / self.total_dim
            )
            # Aggressive reduction only when the affine step makes real
            # progress; near-blocked steps force strong centering so the
            # complementarity cannot collapse ahead of feasibility.
            expon = max(1.0, 3.0 * min(ap_a, ad_a) ** 2)
            sigma = min(1.0, max(0.0, mu_aff / mu) ** expon)
            infeasible = max(pinf, dinf) > 10.0 * max(relgap, opts.gap_tol)
            if infeasible:
                sigma = max(sigma, 0.05)

            # Corrector with Mehrotra second-order term.
            Rc = []
            for d, dXb, dSb in zip(lam, dXh_a, dSh_a):
                H = dXb @ dSb
                H = (H + H.T) / 2.0
                target = sigma * mu * np.eye(d.shape[0]) - np.diag(d * d) - H
                Rc.append(target * (2.0 / np.add.outer(d, d)))
            du, dXhat, dShat, dS = direction(Rc)
            ap = min(1.0, opts.step_fraction * _max_step(lam, dXhat))
            ad = min(1.0, opts.step_fraction * _max_step(lam, dShat))
            if infeasible:
                # While residuals dominate, move both sides in lockstep so
                # the duality measure cannot outrun feasibility.
                ap = ad = min(ap, ad)
            if ap < 1e-10 and ad < 1e-10:
                return self._final(best, SolveStatus.NUMERICAL_FAILURE, X, u, iteration)

            dX = [Gb @ dXb @ Gb.T for Gb, dXb in zip(G, dXhat)]
            X, u, S, ok = self._take_step(X, u, S, dX, du, dS, ap, ad)
            if not ok:
                return self._final(best, SolveStatus.NUMERICAL_FAILURE, X, u, iteration)

        return self._final(best, SolveStatus.MAX_ITERATIONS, X, u, opts.max_iterations)

    def _factor_schur(self, M):
        jitter = 0.0
        base = float(np.trace(M)) / max(1, self.m)
        for attempt in range(5):
            try:
                return scipy.linalg.cho_factor(
                    M + jitter * np.eye(self.m), lower=True
                )
            except np.linalg.LinAlgError:
                jitter = max(base, 1.0) * 10.0 ** (-14 + 3 * attempt)
        return None

    def _take_step(self, X, u, S, dX, du, dS, ap, ad):
        """Apply the step, backing off until both cones stay interior."""
        for _ in range(40):
            Xn = [(Xb + ap * dXb) for Xb, dXb in zip(X, dX)]
            Sn = [(Sb + ad * dSb) for Sb, dSb in zip(S, dS)]
            Xn = [(Mb + Mb.T) / 2.0 for Mb in Xn]
            Sn = [(Mb + Mb.T) / 2.0 for Mb in Sn]
            try:
                for Mb in Xn:
                    np.linalg.cholesky(Mb)
                for Mb in Sn:
                    np.linalg.cholesky(Mb)
            except np.linalg.LinAlgError:
                ap *= 0.5
                ad *= 0.5
                if ap < 1e-12 and ad < 1e-12:
                    return X, u, S, False
                continue
            return Xn, u + ad * du, Sn, True
        return X, u, S, False

    def _final(self, best, fallback_status, X, u, iteration):
        """Terminate from a stall: accept, certify, or report the stall."""
        opts = self.opts
        if best is not None:
            _, ub, pobj, dobj, _, pinf, dinf, _ = best
            if opts.acceptable(pinf, dinf, pobj, dobj):
                return SolveStatus.OPTIMAL, ub, iteration, pobj, dobj
        if self._unbounded_quality(u) <= 1e-7:
            return SolveStatus.UNBOUNDED, None, iteration, math.nan, math.nan
        if self._infeasible_quality(X) <= 1e-7:
            return SolveStatus.INFEASIBLE, None, iteration, math.nan, math.nan
        if best is not None:
            _, ub, pobj, dobj, *_ = best
            return fallback_status, ub, iteration, pobj, dobj
        return fallback_status, u, iteration, math.nan, math.nan


def _max_step(lam, dhat):
    """Largest step keeping diag(lam) + alpha * dhat PSD, capped at 1e12."""
    out = 1e12
    for d, Db in zip(lam, dhat):
        K = Db / np.sqrt(np.outer(d, d))
        wmin = float(np.linalg.eigvalsh((K + K.T) / 2.0)[0])
        if wmin < 0.0:
            out = min(out, -1.0 / wmin)
    return out

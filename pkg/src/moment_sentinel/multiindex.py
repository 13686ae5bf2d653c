"""Multi-index arithmetic and graded-lexicographic monomial bases.

A multi-index is a tuple of non-negative integer exponents, one per
variable; it names the monomial x1^a1 * ... * xn^an.  Every moment,
moment-matrix entry, and polynomial coefficient in this package is keyed
by a :class:`MultiIndex`, and every matrix row/column layout follows the
ordering produced by :func:`enumerate_basis`.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterator

# Enumeration is dense in C(n+d, n); past this the basis is unusable anyway.
MAX_SUPPORTED_DEGREE_SUM = 40


class MultiIndex:
    """Immutable exponent vector with componentwise addition.

    Hashes and compares like its exponent tuple, so it can key dicts
    cheaply.  Ordering (``<``) is graded lexicographic: lower total degree
    first, ties broken with the first variable heaviest.
    """

    __slots__ = ("exponents", "degree")

    def __init__(self, exponents) -> None:
        exps = tuple(int(e) for e in exponents)
        if not exps:
            raise ValueError("multi-index needs at least one exponent")
        if any(e < 0 for e in exps):
            raise ValueError(f"negative exponent in multi-index {exps}")
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "degree", sum(exps))

    def __setattr__(self, name, value):
        raise AttributeError("MultiIndex is immutable")

    def __reduce__(self):
        return (MultiIndex, (self.exponents,))

    def __len__(self) -> int:
        return len(self.exponents)

    def __iter__(self) -> Iterator[int]:
        return iter(self.exponents)

    def __getitem__(self, i: int) -> int:
        return self.exponents[i]

    def __hash__(self) -> int:
        return hash(self.exponents)

    def __eq__(self, other) -> bool:
        if isinstance(other, MultiIndex):
            return self.exponents == other.exponents
        if isinstance(other, tuple):
            return self.exponents == other
        return NotImplemented

    def __lt__(self, other: "MultiIndex") -> bool:
        return self.grlex_key() < other.grlex_key()

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        return add(self, other)

    def grlex_key(self):
        """Sort key for graded-lex order (degree, then x1 heaviest)."""
        return (self.degree, tuple(-e for e in self.exponents))

    def to_text(self) -> str:
        """Comma-separated exponent form used in files, e.g. ``"2,1"``."""
        return ",".join(str(e) for e in self.exponents)

    @classmethod
    def from_text(cls, text: str) -> "MultiIndex":
        try:
            return cls(int(part) for part in text.split(","))
        except ValueError as exc:
            raise ValueError(f"malformed multi-index text {text!r}") from exc

    @classmethod
    def zero(cls, n: int) -> "MultiIndex":
        return cls((0,) * n)

    @classmethod
    def unit(cls, n: int, j: int) -> "MultiIndex":
        exps = [0] * n
        exps[j] = 1
        return cls(exps)

    def __repr__(self) -> str:
        return f"MultiIndex({self.exponents})"


def add(alpha: MultiIndex, beta: MultiIndex) -> MultiIndex:
    """Componentwise sum of two multi-indices of equal length."""
    if len(alpha) != len(beta):
        raise ValueError(
            f"multi-index length mismatch: {len(alpha)} vs {len(beta)}"
        )
    return MultiIndex(a + b for a, b in zip(alpha.exponents, beta.exponents))


def basis_size(n: int, d: int) -> int:
    """Number of monomials in n variables of total degree at most d.

    Exact integer C(n+d, n).  Refuses n + d beyond the supported range
    rather than producing a count too large to enumerate.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    if d < 0:
        raise ValueError(f"degree must be >= 0, got {d}")
    if n + d > MAX_SUPPORTED_DEGREE_SUM:
        raise OverflowError(
            f"basis_size({n}, {d}) exceeds supported range n + d <= "
            f"{MAX_SUPPORTED_DEGREE_SUM}"
        )
    return math.comb(n + d, n)


def _degree_slices(n: int, total: int) -> Iterator[tuple[int, ...]]:
    """All exponent tuples of length n summing to total, x1 heaviest first."""
    if n == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _degree_slices(n - 1, total - first):
            yield (first,) + rest


class MonomialBasis:
    """Ordered monomial basis of all multi-indices with degree <= d.

    ``entries`` is graded-lex ordered (the constant monomial first) and
    ``positions`` is its exact inverse, so ``positions[entries[i]] == i``.
    """

    __slots__ = ("n", "d", "entries", "positions")

    def __init__(self, n: int, d: int, entries: tuple[MultiIndex, ...]):
        self.n = n
        self.d = d
        self.entries = entries
        self.positions = {alpha: i for i, alpha in enumerate(entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(self.entries)

    def __getitem__(self, i: int) -> MultiIndex:
        return self.entries[i]

    def position(self, alpha: MultiIndex) -> int:
        try:
            return self.positions[alpha]
        except KeyError:
            raise KeyError(
                f"{alpha!r} not in basis (n={self.n}, max degree {self.d})"
            ) from None

    def __repr__(self) -> str:
        return f"MonomialBasis(n={self.n}, d={self.d}, size={len(self)})"


@lru_cache(maxsize=256)
def enumerate_basis(n: int, d: int) -> MonomialBasis:
    """All multi-indices with |alpha| <= d in graded-lex order.

    The result is cached; bases are immutable and shared freely.
    """
    size = basis_size(n, d)  # validates n, d and the supported range
    entries = []
    for total in range(d + 1):
        for exps in _degree_slices(n, total):
            entries.append(MultiIndex(exps))
    assert len(entries) == size
    return MonomialBasis(n, d, tuple(entries))

"""Exact dense linear algebra over the prime field F_p.

Every solver in this package bottoms out here.  Matrices are plain numpy
int64 arrays holding residues in 0..p-1; the modulus travels as an explicit
argument.  Elimination uses a fixed pivot rule (first row with a nonzero
entry in the current column) so that every computed basis is reproducible
run to run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "is_prime",
    "check_prime",
    "reduce_mod",
    "rref",
    "rank",
    "nullspace",
    "solve",
    "lucas_binomial",
    "GradedSpace",
]


def is_prime(p: int) -> bool:
    if p < 2:
        return False
    d = 2
    while d * d <= p:
        if p % d == 0:
            return False
        d += 1
    return True


def check_prime(p: int) -> None:
    if not is_prime(p):
        raise ValueError(f"modulus {p} is not prime")


def reduce_mod(a, p: int) -> np.ndarray:
    return np.asarray(np.asarray(a, dtype=np.int64) % p, dtype=np.int64)


def _inv(a: int, p: int) -> int:
    return pow(int(a) % p, p - 2, p)


def rref(matrix, p: int) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over F_p.  Returns (R, pivot_columns)."""
    a = reduce_mod(matrix, p).copy()
    m, n = a.shape
    pivots: list[int] = []
    r = 0
    for c in range(n):
        if r == m:
            break
        rows = np.nonzero(a[r:, c])[0]
        if rows.size == 0:
            continue
        piv = r + int(rows[0])
        if piv != r:
            a[[r, piv]] = a[[piv, r]]
        a[r] = a[r] * _inv(a[r, c], p) % p
        others = np.nonzero(a[:, c])[0]
        others = others[others != r]
        if others.size:
            a[others] = (a[others] - np.outer(a[others, c], a[r])) % p
        pivots.append(c)
        r += 1
    return a, pivots


def rank(matrix, p: int) -> int:
    a = reduce_mod(matrix, p)
    if a.size == 0:
        return 0
    return len(rref(a, p)[1])


def nullspace(matrix, p: int) -> np.ndarray:
    """Basis of {v : Mv = 0}, one vector per row; shape (cols - rank, cols).

    The basis is in the standard "one free column set to 1" form, free
    columns taken in ascending order.
    """
    a = reduce_mod(matrix, p)
    m, n = a.shape
    if n == 0:
        return np.zeros((0, 0), dtype=np.int64)
    if m == 0:
        return np.eye(n, dtype=np.int64)
    r, pivots = rref(a, p)
    piv_set = set(pivots)
    free = [c for c in range(n) if c not in piv_set]
    basis = np.zeros((len(free), n), dtype=np.int64)
    for k, c in enumerate(free):
        basis[k, c] = 1
        for row, pc in enumerate(pivots):
            basis[k, pc] = (-int(r[row, c])) % p
    return basis


def solve(matrix, b, p: int) -> np.ndarray | None:
    """One solution x of Mx = b over F_p, or None when inconsistent.

    Free variables are set to 0.  Raises ValueError on a shape mismatch.
    The returned solution is verified by substitution before returning.
    """
    a = reduce_mod(matrix, p)
    rhs = reduce_mod(b, p).reshape(-1)
    m, n = a.shape
    if rhs.shape[0] != m:
        raise ValueError(f"rhs length {rhs.shape[0]} != row count {m}")
    aug = np.concatenate([a, rhs.reshape(-1, 1)], axis=1)
    r, pivots = rref(aug, p)
    if n in pivots:
        return None
    x = np.zeros(n, dtype=np.int64)
    for row, pc in enumerate(pivots):
        x[pc] = r[row, n]
    assert np.array_equal(a @ x % p, rhs), "solver postcondition failed"
    return x


def lucas_binomial(a: int, b: int, p: int) -> int:
    """C(a, b) mod p by base-p digit products; 0 when b > a."""
    if a < 0 or b < 0:
        raise ValueError("binomial arguments must be non-negative")
    if b > a:
        return 0
    result = 1
    while b:
        da, db = a % p, b % p
        if db > da:
            return 0
        result = result * math.comb(da, db) % p
        a //= p
        b //= p
    return result % p


@dataclass(frozen=True)
class GradedSpace:
    """Finite graded F_p space: an ordered basis of opaque labels per degree."""

    p: int
    components: dict[int, tuple]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        check_prime(self.p)
        for n, labels in self.components.items():
            if n < 0:
                raise ValueError(f"negative degree {n}")
            if len(set(labels)) != len(labels):
                raise ValueError(f"duplicate basis label in degree {n}")
            self._index[n] = {lab: i for i, lab in enumerate(labels)}

    def degrees(self) -> list[int]:
        return sorted(n for n, labels in self.components.items() if labels)

    def dim(self, n: int) -> int:
        return len(self.components.get(n, ()))

    def labels(self, n: int) -> tuple:
        return self.components.get(n, ())

    def index(self, n: int, label) -> int:
        return self._index[n][label]

    def total_dim(self) -> int:
        return sum(len(v) for v in self.components.values())

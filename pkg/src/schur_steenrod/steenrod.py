"""Reduced-power operations P^k modulo the Adem relations.

The algebra is the free unital graded F_p algebra on generators P^k of
degree k(p-1), cut down by the quadratic relations

    P^i P^j  =  sum_{t=0}^{[i/p]} (-1)^{i+t} C((p-1)(j-t)-1, i-pt) P^{i+j-t} P^t

for i < p*j.  A word P^{i_1}..P^{i_k} is admissible when i_j >= p*i_{j+1}
throughout; admissible words form a basis and `adem_normalize` rewrites any
word into it (leftmost inadmissible pair first, a strategy under which the
word moment sum(j * i_j) strictly decreases, so rewriting terminates).

The sign (-1)^{i+t} is invisible mod 2.  At odd primes a sign-free variant
of the relation also circulates; it is available as convention="unsigned"
but is inconsistent with the Milnor coaction used to define module actions
(on a tensor square at p=3, P^1 P^1 acts as 2*P^2, not P^2), so "signed"
is the default and is what every module in this package satisfies.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass

from .fp import check_prime, lucas_binomial

__all__ = [
    "SteenrodElement",
    "degree",
    "excess",
    "is_admissible",
    "adem_normalize",
    "multiply",
    "unit",
    "zero",
    "monomial",
    "parse_element",
    "format_monomial",
]

SIGNED = "signed"
UNSIGNED = "unsigned"
_CONVENTIONS = (SIGNED, UNSIGNED)


def degree(mono: tuple[int, ...], p: int) -> int:
    """Degree (p-1) * sum(indices); the empty word is the unit, degree 0."""
    return (p - 1) * sum(mono)


def is_admissible(mono: tuple[int, ...], p: int) -> bool:
    return all(mono[j] >= p * mono[j + 1] for j in range(len(mono) - 1))


def excess(mono: tuple[int, ...], p: int) -> int:
    """p*i_1 - (p-1)*sum(i_j); the unit gets 0 by convention."""
    if not mono:
        return 0
    return p * mono[0] - (p - 1) * sum(mono)


def _first_inadmissible(mono: tuple[int, ...], p: int) -> int | None:
    for j in range(len(mono) - 1):
        if mono[j] < p * mono[j + 1]:
            return j
    return None


@functools.lru_cache(maxsize=None)
def _normalize_word(word: tuple[int, ...], p: int, convention: str):
    """Admissible expansion of a word as a sorted tuple of (monomial, coeff)."""
    terms: dict[tuple[int, ...], int] = {}
    stack: list[tuple[tuple[int, ...], int]] = [(word, 1)]
    while stack:
        mono, coeff = stack.pop()
        pos = _first_inadmissible(mono, p)
        if pos is None:
            c = (terms.get(mono, 0) + coeff) % p
            if c:
                terms[mono] = c
            else:
                terms.pop(mono, None)
            continue
        i, j = mono[pos], mono[pos + 1]
        head, tail = mono[: pos], mono[pos + 2:]
        for t in range(i // p + 1):
            c = lucas_binomial((p - 1) * (j - t) - 1, i - p * t, p)
            if c == 0:
                continue
            if convention == SIGNED and (i + t) % 2:
                c = p - c
            mid = (i + j - t, t) if t else (i + j - t,)
            stack.append((head + mid + tail, coeff * c % p))
    return tuple(sorted(terms.items()))


@dataclass(frozen=True)
class SteenrodElement:
    """Homogeneous F_p combination of admissible words, zero-coefficient free."""

    p: int
    terms: tuple[tuple[tuple[int, ...], int], ...]

    def __post_init__(self):
        check_prime(self.p)
        degs = {degree(m, self.p) for m, _ in self.terms}
        if len(degs) > 1:
            raise ValueError(f"inhomogeneous element: degrees {sorted(degs)}")
        for m, c in self.terms:
            if not is_admissible(m, self.p):
                raise ValueError(f"inadmissible monomial {m}")
            if not 0 < c < self.p:
                raise ValueError(f"bad coefficient {c} mod {self.p}")

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def deg(self) -> int | None:
        if not self.terms:
            return None
        return degree(self.terms[0][0], self.p)

    def coefficient(self, mono: tuple[int, ...]) -> int:
        return dict(self.terms).get(tuple(mono), 0)

    def __add__(self, other: "SteenrodElement") -> "SteenrodElement":
        if self.p != other.p:
            raise ValueError("modulus mismatch")
        acc = dict(self.terms)
        for m, c in other.terms:
            v = (acc.get(m, 0) + c) % self.p
            if v:
                acc[m] = v
            else:
                acc.pop(m, None)
        return SteenrodElement(self.p, tuple(sorted(acc.items())))

    def scale(self, c: int) -> "SteenrodElement":
        c %= self.p
        if c == 0:
            return zero(self.p)
        return SteenrodElement(
            self.p, tuple(sorted((m, k * c % self.p) for m, k in self.terms))
        )

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for m, c in sorted(self.terms, reverse=True):
            if not m:
                parts.append(str(c))
            elif c == 1:
                parts.append(format_monomial(m))
            else:
                parts.append(f"{c}*{format_monomial(m)}")
        return " + ".join(parts)


def zero(p: int) -> SteenrodElement:
    return SteenrodElement(p, ())


def unit(p: int) -> SteenrodElement:
    return SteenrodElement(p, (((), 1),))


def monomial(word, p: int, coeff: int = 1, convention: str = SIGNED) -> SteenrodElement:
    """The element c * P^{i_1}..P^{i_k}, normalized to the admissible basis."""
    return adem_normalize(word, p, convention).scale(coeff)


def adem_normalize(word, p: int, convention: str = SIGNED) -> SteenrodElement:
    """Admissible-basis expansion of the word P^{i_1}..P^{i_k}.

    Indices must be >= 1 except that explicit 0 letters (the unit P^0) are
    dropped up front.
    """
    check_prime(p)
    if convention not in _CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    w = tuple(int(i) for i in word if int(i) != 0)
    if any(i < 0 for i in w):
        raise ValueError(f"negative index in {word}")
    return SteenrodElement(p, _normalize_word(w, p, convention))


def multiply(
    a: SteenrodElement, b: SteenrodElement, convention: str = SIGNED
) -> SteenrodElement:
    """Product in the algebra: concatenate wordwise, then normalize."""
    if a.p != b.p:
        raise ValueError("modulus mismatch")
    acc = zero(a.p)
    for ma, ca in a.terms:
        for mb, cb in b.terms:
            acc = acc + adem_normalize(ma + mb, a.p, convention).scale(ca * cb)
    return acc


_MONO_RE = re.compile(r"^\s*(?:P\s*(\d+)\s*)+$")


def format_monomial(mono: tuple[int, ...]) -> str:
    if not mono:
        return "1"
    return " ".join(f"P{i}" for i in mono)


def _parse_monomial(text: str) -> tuple[int, ...]:
    text = text.strip()
    if text == "1":
        return ()
    if not _MONO_RE.match(text):
        raise ValueError(f"cannot parse monomial {text!r}")
    return tuple(int(i) for i in re.findall(r"P\s*(\d+)", text))


def parse_element(text: str, p: int, convention: str = SIGNED) -> SteenrodElement:
    """Parse `c1*M1 + c2*M2` syntax; `0` and `1` are zero and the unit.

    Monomials are written `P{i1} P{i2} ...`; they need not be admissible
    and are normalized on the way in.
    """
    text = text.strip()
    if text == "0":
        return zero(p)
    acc = zero(p)
    for part in text.split("+"):
        part = part.strip()
        if "*" in part:
            c_str, m_str = part.split("*", 1)
            coeff = int(c_str)
        else:
            coeff, m_str = 1, part
        acc = acc + monomial(_parse_monomial(m_str), p, coeff, convention)
    return acc

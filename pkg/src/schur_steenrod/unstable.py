"""Truncated unstable modules over the reduced-power algebra.

A module is carried as a graded F_p space valid up to a truncation degree D
together with explicit matrices for each P^k on each degree component.
Action entries whose target degree would exceed D are not stored; any
operation that would need them raises TruncationOverflow instead of
returning a silently wrong value.

Concrete modules are built from "word" modules: tensor powers of the free
module on a degree-1 generator u (basis u^{p^e}), optionally tensored with
a trivial parameter space recorded as a color on each letter.  A letter is
a pair (e, color) standing for u^{p^e}; a word is a tuple of letters, and
the P^k action on a word is the Cartan expansion

    P^k(w) = sum over subsets S of positions with sum_{j in S} p^{e_j} = k
             of the word with the letters in S shifted e -> e+1.

Submodules (symmetric-group invariants, algebra closures) and quotients
(multiset and alternating identifications) are carried with explicit
embed/project data back to their word ambient, which is what the Milnor
coaction and the coaction-coefficient operators are computed through.

Every constructed module is validated on the spot: instability (P^k
vanishes above the degree) and compatibility of the stored action with the
admissible-basis rewriting of every composite P^i P^j in range.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import steenrod
from .fp import check_prime, nullspace, rank, reduce_mod, solve

__all__ = [
    "TruncationOverflow",
    "NotInImage",
    "ClosureError",
    "TruncatedModule",
    "Element",
    "GradedSubspace",
    "GradedMap",
    "HomSpaceU",
    "ModNilReport",
    "build_f1",
    "build_colored_f1",
    "tensor",
    "tensor_power",
    "young_invariants",
    "orbit_quotient",
    "closure_submodule",
    "element",
    "basis_element",
    "zero_element",
    "tensor_element",
    "act",
    "act_word",
    "act_element",
    "p0",
    "p0_iterate",
    "coaction",
    "milnor_op",
    "p0_injective_range",
    "sqrt_extract",
    "algebra_span",
    "modnil_generator_check",
    "hom_u",
    "hom_u_ladder",
    "format_label",
    "dump_module",
]


class TruncationOverflow(Exception):
    """The requested value lives above the truncation degree."""


class NotInImage(Exception):
    """No preimage exists; witnesses failure of root extraction."""


class ClosureError(Exception):
    """A subspace presented as a submodule is not closed under the action."""


# ---------------------------------------------------------------------------
# module container


class TruncatedModule:
    """Graded space with P^k action matrices, valid up to degree D."""

    def __init__(self, p, D, basis, action, provenance, is_word=False,
                 word_module=None, to_words=None, from_words=None,
                 presentation=None, validate=True):
        check_prime(p)
        self.p = p
        self.D = D
        self.presentation = "word" if is_word else presentation
        self.basis = {n: tuple(labels) for n, labels in sorted(basis.items())
                      if labels}
        self.action = {}
        q = p - 1
        for (k, n), mat in action.items():
            mat = reduce_mod(mat, p)
            if not mat.any():
                continue
            if n + k * q > D:
                raise ValueError(f"action entry ({k},{n}) beyond truncation")
            self.action[(k, n)] = mat
        self.provenance = provenance
        self.is_word = is_word
        self.word_module = self if is_word else word_module
        self.to_words = to_words
        self.from_words = from_words
        self._index = {n: {lab: i for i, lab in enumerate(labels)}
                       for n, labels in self.basis.items()}
        self._ops_by_degree = {}
        for (k, n) in self.action:
            self._ops_by_degree.setdefault(n, set()).add(k)
        if validate:
            self._check_instability()
            self._check_adem_compliance()

    # -- basic queries ------------------------------------------------------

    def degrees(self):
        return sorted(self.basis)

    def dim(self, n):
        return len(self.basis.get(n, ()))

    def total_dim(self):
        return sum(len(v) for v in self.basis.values())

    def labels(self, n):
        return self.basis.get(n, ())

    def index(self, n, label):
        return self._index[n][label]

    def action_matrix(self, k, n):
        """Matrix of P^k on the degree-n component (zeros when trivial)."""
        if k == 0:
            return np.eye(self.dim(n), dtype=np.int64)
        target = n + k * (self.p - 1)
        if target > self.D:
            raise TruncationOverflow(
                f"P^{k} on degree {n} lands in degree {target} > D={self.D}")
        got = self.action.get((k, n))
        if got is not None:
            return got
        return np.zeros((self.dim(target), self.dim(n)), dtype=np.int64)

    def operator_indices(self, n):
        """The k with a stored (hence possibly nonzero) P^k on degree n."""
        return sorted(self._ops_by_degree.get(n, ()))

    def __repr__(self):
        return (f"TruncatedModule({self.provenance}, p={self.p}, D={self.D}, "
                f"dim={self.total_dim()})")

    # -- construction-time validation ----------------------------------------

    def _check_instability(self):
        for (k, n), mat in self.action.items():
            if k > n and mat.any():
                raise ValueError(
                    f"instability violated: nonzero P^{k} on degree {n}")

    def _check_adem_compliance(self):
        """Each composite P^i P^j in range must act as its admissible expansion."""
        p, q, D = self.p, self.p - 1, self.D
        ks = self._ops_by_degree
        for n in self.degrees():
            if self.dim(n) == 0:
                continue
            top = (D - n) // q
            for j in range(1, top):
                for i in range(1, min(p * j, top - j + 1)):
                    expansion = steenrod._normalize_word((i, j), p, steenrod.SIGNED)
                    lhs_live = j in ks.get(n, ()) and i in ks.get(n + j * q, ())
                    rhs_live = any(
                        (len(m) == 1 and m[0] in ks.get(n, ())) or
                        (len(m) == 2 and m[1] in ks.get(n, ())
                         and m[0] in ks.get(n + m[1] * q, ()))
                        for m, _ in expansion)
                    if not (lhs_live or rhs_live):
                        continue
                    lhs = (self.action_matrix(i, n + j * q)
                           @ self.action_matrix(j, n)) % p
                    rhs = np.zeros_like(lhs)
                    for m, c in expansion:
                        a, t = (m[0], 0) if len(m) == 1 else m
                        rhs = (rhs + c * (self.action_matrix(a, n + t * q)
                                          @ self.action_matrix(t, n))) % p
                    if not np.array_equal(lhs, rhs):
                        raise ValueError(
                            f"Adem compliance failed on {self.provenance}: "
                            f"P^{i} P^{j} on degree {n}")


@dataclass
class Element:
    """Homogeneous element: coordinates over one degree component."""

    module: TruncatedModule
    degree: int
    coords: np.ndarray

    def __post_init__(self):
        self.coords = reduce_mod(self.coords, self.module.p).reshape(-1)
        if self.coords.shape[0] != self.module.dim(self.degree):
            raise ValueError(
                f"coordinate length {self.coords.shape[0]} != component "
                f"dimension {self.module.dim(self.degree)}")

    @property
    def is_zero(self):
        return not self.coords.any()

    def __add__(self, other):
        if other.module is not self.module or other.degree != self.degree:
            raise ValueError("elements live in different components")
        return Element(self.module, self.degree, self.coords + other.coords)

    def scale(self, c):
        return Element(self.module, self.degree, self.coords * (c % self.module.p))

    def __eq__(self, other):
        return (isinstance(other, Element) and other.module is self.module
                and other.degree == self.degree
                and np.array_equal(other.coords, self.coords))

    def support(self):
        labels = self.module.labels(self.degree)
        return [(labels[i], int(c)) for i, c in enumerate(self.coords) if c]


def element(module, n, coords):
    return Element(module, n, np.asarray(coords))


def zero_element(module, n):
    return Element(module, n, np.zeros(module.dim(n), dtype=np.int64))


def basis_element(module, n, label):
    v = np.zeros(module.dim(n), dtype=np.int64)
    v[module.index(n, label)] = 1
    return Element(module, n, v)


# ---------------------------------------------------------------------------
# word modules


def _letter_degree(letter, p):
    return p ** letter[0]


def _word_degree(word, p):
    return sum(p ** e for e, _ in word)


def _word_module(p, D, words, provenance):
    basis = {}
    for w in words:
        n = _word_degree(w, p)
        if n <= D:
            basis.setdefault(n, []).append(w)
    for n in basis:
        basis[n] = sorted(basis[n])
    index = {n: {w: i for i, w in enumerate(ws)} for n, ws in basis.items()}
    action = {}
    q = p - 1
    for n, ws in basis.items():
        for col, w in enumerate(ws):
            positions = range(len(w))
            for r in range(1, len(w) + 1):
                for S in itertools.combinations(positions, r):
                    k = sum(p ** w[j][0] for j in S)
                    target = n + k * q
                    if target > D:
                        continue
                    shifted = tuple(
                        (e + 1, c) if j in S else (e, c)
                        for j, (e, c) in enumerate(w))
                    mat = action.get((k, n))
                    if mat is None:
                        mat = np.zeros((len(basis.get(target, ())), len(ws)),
                                       dtype=np.int64)
                        action[(k, n)] = mat
                    mat[index[target][shifted], col] += 1
    return TruncatedModule(p, D, basis, action, provenance, is_word=True)


def build_f1(p, D):
    """Free module on a degree-1 generator u; basis u^{p^e} for p^e <= D."""
    if D < 1:
        raise ValueError("truncation degree must be >= 1")
    words = []
    e = 0
    while p ** e <= D:
        words.append(((e, None),))
        e += 1
    return _word_module(p, D, words, "F(1)")


def build_colored_f1(p, D, colors):
    """F(1) tensored with a trivial parameter space of dimension `colors`."""
    words = []
    e = 0
    while p ** e <= D:
        words.extend(((e, c),) for c in range(colors))
        e += 1
    return _word_module(p, D, words, f"F(1)[m={colors}]")


def tensor(M, N, D=None):
    """Tensor product with the Cartan action, truncated at min(D_M, D_N)."""
    if M.p != N.p:
        raise ValueError("modulus mismatch")
    p, q = M.p, M.p - 1
    if D is None:
        D = min(M.D, N.D)
    if D > min(M.D, N.D):
        raise ValueError("cannot extend truncation beyond the factors")
    if M.is_word and N.is_word:
        words = [a + b
                 for na in M.degrees() for nb in N.degrees()
                 if na + nb <= D
                 for a in M.labels(na) for b in N.labels(nb)]
        return _word_module(p, D, words,
                            f"({M.provenance})⊗({N.provenance})")

    basis, splits = {}, {}
    for na in M.degrees():
        for nb in N.degrees():
            n = na + nb
            if n > D:
                continue
            labs = [(a, b) for a in M.labels(na) for b in N.labels(nb)]
            basis.setdefault(n, []).extend(labs)
            splits.setdefault(n, []).append(
                (na, nb, len(basis[n]) - len(labs)))
    action = {}
    offsets = {}
    for n, parts in splits.items():
        offsets[n] = {(na, nb): off for (na, nb, off) in parts}
    for n, parts in splits.items():
        for (na, nb, off) in parts:
            dims = M.dim(na) * N.dim(nb)
            for k in range(1, (D - n) // q + 1):
                target = n + k * q
                if target not in basis:
                    continue
                block = np.zeros((len(basis[target]), dims), dtype=np.int64)
                live = False
                for i in range(k + 1):
                    j = k - i
                    ta, tb = na + i * q, nb + j * q
                    if (ta, tb) not in offsets.get(target, {}):
                        continue
                    A = M.action_matrix(i, na)
                    B = N.action_matrix(j, nb)
                    if not (A.any() and B.any()):
                        continue
                    kr = np.kron(A, B) % p
                    r0 = offsets[target][(ta, tb)]
                    block[r0:r0 + kr.shape[0], :] += kr
                    live = True
                if live:
                    mat = action.setdefault(
                        (k, n),
                        np.zeros((len(basis[target]), len(basis[n])),
                                 dtype=np.int64))
                    mat[:, off:off + dims] += block
    return TruncatedModule(p, D, basis, action,
                           f"({M.provenance})⊗({N.provenance})")


def tensor_power(M, d):
    if d < 1:
        raise ValueError("tensor power needs d >= 1")
    out = M
    for _ in range(d - 1):
        out = tensor(out, M)
    return out


def tensor_element(MN, x, y):
    """The element x⊗y inside a word tensor module built from x's and y's."""
    if not MN.is_word:
        raise ValueError("tensor_element needs a word tensor module")
    n = x.degree + y.degree
    out = zero_element(MN, n)
    for wa, ca in x.support():
        for wb, cb in y.support():
            out = out + basis_element(MN, n, wa + wb).scale(ca * cb)
    return out


# ---------------------------------------------------------------------------
# subquotients


def _derived_action(ambient, to_amb, from_amb, basis, provenance, check):
    """Action tables q . P^k . s for a subspace/quotient presentation."""
    p, q = ambient.p, ambient.p - 1
    action = {}
    for (k, n), A in ambient.action.items():
        if n not in to_amb or not basis.get(n):
            continue
        target = n + k * q
        sub = (from_amb[target] @ A @ to_amb[n]) % p if target in from_amb \
            else np.zeros((0, len(basis[n])), dtype=np.int64)
        if check == "sub":
            lhs = (A @ to_amb[n]) % p
            rhs = (to_amb[target] @ sub) % p if target in to_amb else \
                np.zeros_like(lhs)
            if not np.array_equal(lhs, rhs):
                col = int(np.nonzero((lhs - rhs) % p)[1][0])
                raise ClosureError(
                    f"{provenance}: P^{k} escapes the subspace on basis "
                    f"element {basis[n][col]!r} of degree {n}")
        elif check == "quot":
            lhs = (from_amb[target] @ A) % p if target in from_amb else \
                np.zeros((0, A.shape[1]), dtype=np.int64)
            rhs = (sub @ from_amb[n]) % p
            if not np.array_equal(lhs, rhs):
                col = int(np.nonzero((lhs - rhs) % p)[1][0])
                raise ClosureError(
                    f"{provenance}: P^{k} is not well defined on the "
                    f"quotient at ambient word index {col}, degree {n}")
        if sub.size and sub.any():
            action[(k, n)] = sub
    return action


def young_invariants(T, blocks, provenance=None):
    """Submodule of block-wise symmetric tensors of a word module.

    `blocks` lists consecutive block sizes summing to the word length; the
    basis consists of orbit sums under the product of symmetric groups
    permuting letters within each block, labelled by per-block sorted letter
    tuples.
    """
    cuts = []
    s = 0
    for b in blocks:
        cuts.append((s, s + b))
        s += b
    provenance = provenance or f"Inv{tuple(blocks)}({T.provenance})"

    def canonical(word):
        return tuple(tuple(sorted(word[a:b])) for a, b in cuts)

    basis, to_amb, from_amb = {}, {}, {}
    for n in T.degrees():
        words = T.labels(n)
        if words and len(words[0]) != s:
            raise ValueError("block sizes do not match the word length")
        orbits = {}
        for i, w in enumerate(words):
            orbits.setdefault(canonical(w), []).append(i)
        labels = sorted(orbits)
        E = np.zeros((len(words), len(labels)), dtype=np.int64)
        P = np.zeros((len(labels), len(words)), dtype=np.int64)
        for col, lab in enumerate(labels):
            for i in orbits[lab]:
                E[i, col] = 1
            P[col, T.index(n, tuple(c for blk in lab for c in blk))] = 1
        basis[n] = labels
        to_amb[n], from_amb[n] = E, P
    action = _derived_action(T, to_amb, from_amb, basis, provenance, "sub")
    return TruncatedModule(T.p, T.D, basis, action, provenance,
                           word_module=T, to_words=to_amb,
                           from_words=from_amb, presentation="sub")


def _sort_sign(word):
    """(sorted word, permutation sign); sign 0 when a letter repeats."""
    w = list(word)
    sign = 1
    for i in range(1, len(w)):
        j = i
        while j > 0 and w[j] < w[j - 1]:
            w[j], w[j - 1] = w[j - 1], w[j]
            sign = -sign
            j -= 1
    for i in range(1, len(w)):
        if w[i] == w[i - 1]:
            return tuple(w), 0
    return tuple(w), sign


def orbit_quotient(T, kind, provenance=None):
    """Quotient of a word module by the permutation-orbit identification.

    kind="sym" identifies each word with its sorted multiset; kind="ext"
    additionally kills words with a repeated letter and twists by the sign
    of the sorting permutation.
    """
    if kind not in ("sym", "ext"):
        raise ValueError(f"unknown quotient kind {kind!r}")
    provenance = provenance or f"{'Sym' if kind == 'sym' else 'Ext'}({T.provenance})"
    basis, to_amb, from_amb = {}, {}, {}
    p = T.p
    for n in T.degrees():
        words = T.labels(n)
        labels = []
        for w in words:
            srt, sign = _sort_sign(w)
            if kind == "sym":
                if srt == w:
                    labels.append(srt)
            elif sign != 0 and srt == w:
                labels.append(srt)
        labels = sorted(set(labels))
        lab_index = {lab: i for i, lab in enumerate(labels)}
        S = np.zeros((len(words), len(labels)), dtype=np.int64)
        P = np.zeros((len(labels), len(words)), dtype=np.int64)
        for i, w in enumerate(words):
            srt, sign = _sort_sign(w)
            if kind == "sym":
                P[lab_index[srt], i] = 1
            elif sign != 0:
                P[lab_index[srt], i] = sign % p
        for col, lab in enumerate(labels):
            S[T.index(n, lab), col] = 1
        basis[n] = labels
        to_amb[n], from_amb[n] = S, P
    action = _derived_action(T, to_amb, from_amb, basis, provenance, "quot")
    return TruncatedModule(T.p, T.D, basis, action, provenance,
                           word_module=T, to_words=to_amb,
                           from_words=from_amb, presentation="quot")


class GradedSubspace:
    """Reduced echelon bases per degree, supporting add/membership tests."""

    def __init__(self, p):
        self.p = p
        self._rows = {}
        self._pivots = {}

    def add(self, n, v) -> bool:
        v = reduce_mod(v, self.p).copy()
        rows = self._rows.setdefault(n, [])
        pivots = self._pivots.setdefault(n, [])
        for row, piv in zip(rows, pivots):
            if v[piv]:
                v = (v - v[piv] * row) % self.p
        nz = np.nonzero(v)[0]
        if nz.size == 0:
            return False
        piv = int(nz[0])
        v = v * pow(int(v[piv]), self.p - 2, self.p) % self.p
        for i, row in enumerate(rows):
            if row[piv]:
                rows[i] = (row - row[piv] * v) % self.p
        rows.append(v)
        pivots.append(piv)
        return True

    def contains(self, n, v) -> bool:
        v = reduce_mod(v, self.p).copy()
        for row, piv in zip(self._rows.get(n, ()), self._pivots.get(n, ())):
            if v[piv]:
                v = (v - v[piv] * row) % self.p
        return not v.any()

    def contains_space(self, other) -> bool:
        return all(self.contains(n, row)
                   for n in other.degrees() for row in other.rows(n))

    def dim(self, n) -> int:
        return len(self._rows.get(n, ()))

    def degrees(self):
        return sorted(n for n, rows in self._rows.items() if rows)

    def rows(self, n) -> np.ndarray:
        rows = self._rows.get(n, ())
        if not rows:
            return np.zeros((0, 0), dtype=np.int64)
        return np.stack(rows)


def algebra_span(M, x, Dmax=None):
    """Closure of {x} under all P^k within degrees <= Dmax, as a subspace."""
    if Dmax is None:
        Dmax = M.D
    if Dmax > M.D:
        raise ValueError("Dmax beyond the module truncation")
    span = GradedSubspace(M.p)
    queue = []
    if not x.is_zero and span.add(x.degree, x.coords):
        queue.append((x.degree, x.coords))
    while queue:
        n, v = queue.pop()
        for k in M.operator_indices(n):
            if n + k * (M.p - 1) > Dmax:
                continue
            w = M.action.get((k, n)) @ v % M.p
            if w.any() and span.add(n + k * (M.p - 1), w):
                queue.append((n + k * (M.p - 1), w))
    return span


def closure_submodule(M, gens, provenance=None, close=True):
    """Submodule spanned by `gens`, closed under the action within D.

    With close=False the given span must already be action-closed; a
    ClosureError naming the escaping element is raised otherwise.
    """
    p = M.p
    span = GradedSubspace(p)
    queue = []
    for g in gens:
        if not g.is_zero and span.add(g.degree, g.coords):
            queue.append((g.degree, g.coords))
    if close:
        while queue:
            n, v = queue.pop()
            for k in M.operator_indices(n):
                target = n + k * (p - 1)
                if target > M.D:
                    continue
                w = M.action.get((k, n)) @ v % p
                if w.any() and span.add(target, w):
                    queue.append((target, w))
    provenance = provenance or f"span({M.provenance})"
    basis, to_amb, from_amb = {}, {}, {}
    for n in span.degrees():
        rows = span.rows(n)
        basis[n] = [f"x{n}_{i}" for i in range(rows.shape[0])]
        to_amb[n] = rows.T % p
        # projection reads off pivot coordinates of the reduced rows
        pivots = span._pivots[n]
        P = np.zeros((rows.shape[0], M.dim(n)), dtype=np.int64)
        for i, c in enumerate(pivots):
            P[i, c] = 1
        from_amb[n] = P
    action = _derived_action(M, to_amb, from_amb, basis, provenance, "sub")
    word = M.word_module
    if word is not None and word is not M:
        to_w = {n: (M.to_words[n] @ to_amb[n]) % p for n in to_amb
                if n in M.to_words}
        from_w = {n: (from_amb[n] @ M.from_words[n]) % p for n in from_amb
                  if n in M.from_words}
    elif word is M:
        to_w, from_w = to_amb, from_amb
    else:
        to_w = from_w = None
        word = None
    return TruncatedModule(p, M.D, basis, action, provenance,
                           word_module=word, to_words=to_w,
                           from_words=from_w)


# ---------------------------------------------------------------------------
# acting on elements


def act(x, k):
    """P^k applied through the stored tables."""
    M = x.module
    if k == 0:
        return x
    target = x.degree + k * (M.p - 1)
    if target > M.D:
        raise TruncationOverflow(
            f"P^{k} from degree {x.degree} exceeds D={M.D}")
    return Element(M, target, M.action_matrix(k, x.degree) @ x.coords)


def act_word(x, word):
    """Apply the monomial P^{i_1}..P^{i_k}: rightmost factor acts first."""
    for k in reversed(tuple(word)):
        x = act(x, k)
    return x


def act_element(x, theta: steenrod.SteenrodElement):
    if theta.p != x.module.p:
        raise ValueError("modulus mismatch")
    if theta.is_zero:
        raise ValueError("cannot infer target degree of the zero operation")
    target = x.degree + theta.deg
    out = zero_element(x.module, target)
    for mono, c in theta.terms:
        out = out + act_word(x, mono).scale(c)
    return out


def p0(x):
    """The operation x -> P^{|x|} x (degree multiplies by p)."""
    if x.degree == 0:
        return x
    return act(x, x.degree)


def p0_iterate(x, r):
    for _ in range(r):
        x = p0(x)
    return x


# ---------------------------------------------------------------------------
# Milnor coaction


def _to_words(x):
    M = x.module
    if M.is_word:
        return M, x.coords
    if M.word_module is None or x.degree not in M.to_words:
        raise ValueError(f"{M.provenance} has no tensor-word presentation")
    return M.word_module, (M.to_words[x.degree] @ x.coords) % M.p


def _from_words(M, n, coords):
    if M.is_word:
        return Element(M, n, coords)
    v = (M.from_words[n] @ coords) % M.p if n in M.from_words else \
        np.zeros(M.dim(n), dtype=np.int64)
    back = (M.to_words[n] @ v) % M.p if n in M.to_words else \
        np.zeros_like(coords)
    if not np.array_equal(back, coords % M.p):
        raise ClosureError(
            f"value escapes {M.provenance} in degree {n}")
    return Element(M, n, v)


def coaction(x, bound):
    """Milnor coaction terms (x_R, R) with |x_R| <= bound.

    R is the finitely supported exponent tuple (r_1, r_2, ...) of the dual
    polynomial generators; the term of trivial R is x itself.  The element
    parts are returned inside x's own module.
    """
    M = x.module
    p = M.p
    W, wcoords = _to_words(x)
    acc = {}

    def letter_choices(e):
        i = 0
        out = []
        while p ** (e + i) <= bound:
            out.append((i, e + i))
            i += 1
        return out

    for wi, cw in enumerate(wcoords):
        if not cw:
            continue
        word = W.labels(x.degree)[wi]
        partial = [((), (), 0)]
        for (e, c) in word:
            nxt = []
            for letters, contrib, deg in partial:
                for i, e2 in letter_choices(e):
                    deg2 = deg + p ** e2
                    if deg2 > bound:
                        continue
                    add = ((i, p ** e),) if i else ()
                    nxt.append((letters + ((e2, c),), contrib + add, deg2))
            partial = nxt
        for letters, contrib, deg in partial:
            rmax = max((i for i, _ in contrib), default=0)
            R = [0] * rmax
            for i, v in contrib:
                R[i - 1] += v
            R = tuple(R)
            key = (deg, R)
            vec = acc.get(key)
            if vec is None:
                vec = np.zeros(W.dim(deg), dtype=np.int64)
                acc[key] = vec
            vec[W.index(deg, letters)] = (vec[W.index(deg, letters)] + cw) % p

    terms = []
    for (deg, R), vec in sorted(acc.items()):
        if vec.any():
            terms.append((_from_words(M, deg, vec), R))
    return terms


def milnor_op(n, r, x):
    """Coaction coefficient of the n-th power of the r-th dual generator.

    For a degree-n class this is the r-th iterate of P_0; the operator is
    computed directly from the word presentation, independent of the
    rewriting engine and of the composite action tables.
    """
    M = x.module
    p = M.p
    if r == 0:
        return x
    target = x.degree + n * (p ** r - 1)
    if target > M.D:
        raise TruncationOverflow(
            f"coaction coefficient lands in degree {target} > D={M.D}")
    W, wcoords = _to_words(x)
    out = np.zeros(W.dim(target), dtype=np.int64)
    for wi, cw in enumerate(wcoords):
        if not cw:
            continue
        word = W.labels(x.degree)[wi]
        for S in itertools.chain.from_iterable(
                itertools.combinations(range(len(word)), sz)
                for sz in range(len(word) + 1)):
            if sum(p ** word[j][0] for j in S) != n:
                continue
            shifted = tuple((e + r, c) if j in S else (e, c)
                            for j, (e, c) in enumerate(word))
            out[W.index(target, shifted)] = \
                (out[W.index(target, shifted)] + cw) % p
    return _from_words(M, target, out)


# ---------------------------------------------------------------------------
# reducedness, roots, mod-nil generators


def p0_injective_range(M):
    """Whether P_0 is injective on every component n with p*n <= D.

    Returns (verdict, max_degree_checked, first_failing_degree_or_None).
    """
    verdict, max_checked, failure = True, 0, None
    for n in M.degrees():
        if n == 0 or M.p * n > M.D:
            continue
        max_checked = max(max_checked, n)
        A = M.action_matrix(n, n)
        if rank(A, M.p) != M.dim(n):
            verdict, failure = False, n
            break
    return verdict, max_checked, failure


def sqrt_extract(M, z, n=1):
    """The x with P_0^n(x) = z, via the iterated linear system.

    Raises NotInImage when no preimage exists; in a reduced module that
    failure certifies that z has no p^n-th root.
    """
    if n == 0:
        return z
    if z.degree % (M.p ** n):
        raise NotInImage(
            f"degree {z.degree} is not divisible by p^{n}")
    source = z.degree // (M.p ** n)
    mat = np.eye(M.dim(source), dtype=np.int64)
    deg = source
    for _ in range(n):
        mat = M.action_matrix(deg, deg) @ mat % M.p
        deg *= M.p
    x = solve(mat, z.coords, M.p)
    if x is None:
        raise NotInImage(
            f"no degree-{source} element maps onto the given class")
    return Element(M, source, x)


@dataclass
class ModNilReport:
    module: TruncatedModule
    generator: Element
    Dcheck: int
    all_witnessed: bool
    max_shift: int
    witnesses: dict
    failure: object = None

    def __str__(self):
        head = (f"mod-nil generator check on {self.module.provenance} "
                f"(degrees <= {self.Dcheck}, D = {self.module.D}): ")
        if self.all_witnessed:
            return head + (f"all witnessed, max P_0 shift {self.max_shift}")
        n, label = self.failure
        return head + (f"inconclusive at truncation: degree-{n} basis "
                       f"element {label!r} has no in-range witness")


def modnil_generator_check(M, alpha, Dcheck):
    """Least P_0-shift landing each basis element in the span of alpha.

    For every basis element x of degree <= Dcheck this finds the least j
    with P_0^j(x) in the algebra span of alpha, subject to p^j |x| <= D.
    Failure is reported as "inconclusive at truncation", never as a
    refutation: the truncation cannot certify a negative.
    """
    span = algebra_span(M, alpha, M.D)
    witnesses = {}
    max_shift = 0
    for n in M.degrees():
        if n == 0 or n > Dcheck:
            continue
        dim = M.dim(n)
        iterate = np.eye(dim, dtype=np.int64)
        deg = n
        j = 0
        remaining = set(range(dim))
        while remaining:
            gone = set()
            for i in remaining:
                v = iterate[:, i]
                if not v.any() or span.contains(deg, v):
                    witnesses[(n, i)] = j
                    max_shift = max(max_shift, j)
                    gone.add(i)
            remaining -= gone
            if not remaining:
                break
            if deg * M.p > M.D:
                i = sorted(remaining)[0]
                return ModNilReport(M, alpha, Dcheck, False, max_shift,
                                    witnesses, (n, M.labels(n)[i]))
            iterate = M.action_matrix(deg, deg) @ iterate % M.p
            deg *= M.p
            j += 1
    return ModNilReport(M, alpha, Dcheck, True, max_shift, witnesses)


# ---------------------------------------------------------------------------
# graded maps and the Hom solver


@dataclass
class GradedMap:
    """Degree-0 graded map between truncated modules, block per degree."""

    source: TruncatedModule
    target: TruncatedModule
    blocks: dict

    def block(self, n):
        got = self.blocks.get(n)
        if got is not None:
            return got
        return np.zeros((self.target.dim(n), self.source.dim(n)),
                        dtype=np.int64)

    def apply(self, x):
        if x.module is not self.source:
            raise ValueError("element not in the source module")
        return Element(self.target, x.degree, self.block(x.degree) @ x.coords)

    def a_linear_defect(self, Dconstraint=None):
        """First (k, n) where the map fails to commute with P^k, or None."""
        M, N, p = self.source, self.target, self.source.p
        q = p - 1
        Dc = min(M.D, N.D) if Dconstraint is None else Dconstraint
        keys = sorted(set(M.action) | set(N.action))
        for (k, n) in keys:
            if n + k * q > Dc or not M.dim(n):
                continue
            AM = M.action_matrix(k, n)
            AN = N.action_matrix(k, n)
            lhs = self.block(n + k * q) @ AM % p
            rhs = AN @ self.block(n) % p
            if not np.array_equal(lhs, rhs):
                return (k, n)
        return None

    def as_vector(self, degrees):
        parts = [self.block(n).reshape(-1) for n in degrees]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(parts)

    def is_zero(self):
        return not any(b.any() for b in self.blocks.values())


@dataclass
class HomSpaceU:
    source: TruncatedModule
    target: TruncatedModule
    Dconstraint: int
    basis: tuple
    ladder: tuple = ()

    @property
    def dimension(self):
        return len(self.basis)


def hom_u_ladder(M, N, rungs):
    """Graded-map solver, recording dimensions at each truncation rung.

    Unknowns are the blocks of a degree-0 graded map on degrees <= max rung;
    the constraints phi(P^k x) = P^k phi(x) are imposed for every basis x
    and every k with |x| + k(p-1) <= rung.  Degrees are swept upward, so one
    pass yields the dimension at every rung; the reported dimension can only
    shrink as the rung grows.
    """
    if M.p != N.p:
        raise ValueError("modulus mismatch")
    p, q = M.p, M.p - 1
    rungs = sorted(set(rungs))
    top = rungs[-1]
    if top > min(M.D, N.D):
        raise ValueError("rung beyond a module truncation")

    offsets = {}
    total = 0
    B = np.zeros((0, 0), dtype=np.int64)
    dims_at = {}
    for n in range(top + 1):
        dM, dN = M.dim(n), N.dim(n)
        u = dM * dN
        offsets[n] = (total, dN, dM)
        if u:
            s = B.shape[0]
            B = np.block([
                [B, np.zeros((s, u), dtype=np.int64)],
                [np.zeros((u, total), dtype=np.int64),
                 np.eye(u, dtype=np.int64)],
            ]) if total else np.eye(u, dtype=np.int64)
        total += u

        constraints = []
        for k in range(1, n // q + 1):
            n0 = n - k * q
            if M.dim(n0) == 0:
                continue
            AM = M.action.get((k, n0))
            AN = N.action.get((k, n0))
            if AM is None and AN is None:
                continue
            AM = M.action_matrix(k, n0)
            AN = N.action_matrix(k, n0)
            s = B.shape[0]
            o_n, dN_n, dM_n = offsets[n]
            o_0, dN_0, dM_0 = offsets[n0]
            Phi_n = B[:, o_n:o_n + dN_n * dM_n].reshape(s, dN_n, dM_n)
            Phi_0 = B[:, o_0:o_0 + dN_0 * dM_0].reshape(s, dN_0, dM_0)
            lhs = np.einsum("sab,bc->sac", Phi_n, AM) % p
            rhs = np.einsum("ab,sbc->sac", AN, Phi_0) % p
            constraints.append(((lhs - rhs) % p).reshape(s, -1))
        if constraints:
            C = np.concatenate(constraints, axis=1)
            if C.any():
                kernel = nullspace(C.T, p)
                B = kernel @ B % p
        if n in dims_at or n in rungs:
            dims_at[n] = B.shape[0]

    ladder = tuple((r, dims_at[r]) for r in rungs)
    basis = []
    for row in B:
        blocks = {}
        for n, (off, dN, dM) in offsets.items():
            if dN * dM:
                blk = row[off:off + dN * dM].reshape(dN, dM) % p
                if blk.any():
                    blocks[n] = blk
        basis.append(GradedMap(M, N, blocks))
    return HomSpaceU(M, N, top, tuple(basis), ladder)


def hom_u(M, N, Dconstraint):
    """Basis of graded maps commuting with the action up to Dconstraint."""
    return hom_u_ladder(M, N, [Dconstraint])


# ---------------------------------------------------------------------------
# formatting


def format_label(label, p):
    """Human form of a basis label: words, multisets, or block tuples."""
    def letter(l):
        e, c = l
        return f"u{p ** e}" + (f"[{c}]" if c is not None else "")

    if isinstance(label, str):
        return label
    if isinstance(label, tuple) and label and isinstance(label[0], tuple):
        if label and label[0] and isinstance(label[0][0], tuple):
            return "(" + "|".join(".".join(letter(l) for l in blk)
                                  for blk in label) + ")"
        return "*".join(letter(l) for l in label)
    return repr(label)


def dump_module(M):
    """Dump: `degree<TAB>label` lines, then `P{k} label -> combination`."""
    lines = []
    for n in M.degrees():
        for lab in M.labels(n):
            lines.append(f"{n}\t{format_label(lab, M.p)}")
    for (k, n) in sorted(M.action):
        A = M.action[(k, n)]
        target = n + k * (M.p - 1)
        for col, lab in enumerate(M.labels(n)):
            terms = [(int(A[r, col]), M.labels(target)[r])
                     for r in np.nonzero(A[:, col])[0]]
            if not terms:
                continue
            rhs = " + ".join(
                (f"{c}*" if c != 1 else "") + format_label(l, M.p)
                for c, l in terms)
            lines.append(f"P{k} {format_label(lab, M.p)} -> {rhs}")
    return "\n".join(lines) + "\n"

"""Finite Grassmann algebras with Berezin integration.

Monomials are bitmasks over generator indices; a mask stands for the product
of its generators in ascending index order. Coefficients may be any type that
supports ``+``, ``*`` and negation (complex numbers or :class:`GPFunction`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "GENERATOR_CAP",
    "GrassmannElement",
    "SuperLayout",
    "product_sign",
    "grassmann_multiply",
    "berezin_integrate",
    "bilinear",
    "psi_square",
]

# 2mn <= 8 for a single supermatrix; identities with a second one use twice that
GENERATOR_CAP = 8


def _popcount(x: int) -> int:
    return bin(x).count("1")


def product_sign(x: int, y: int) -> int:
    """Sign from reordering ``mono(x) * mono(y)`` into ascending order (0 if they overlap)."""
    if x & y:
        return 0
    inversions = 0
    while y:
        b = y & -y
        inversions += _popcount(x & ~((b << 1) - 1))
        y ^= b
    return -1 if inversions & 1 else 1


def _is_zero(c: Any) -> bool:
    z = getattr(c, "is_zero", None)
    if z is not None:
        return z()
    return c == 0


class GrassmannElement:
    """Sparse element ``sum_mask c_mask * psi_mask`` of a Grassmann algebra."""

    __slots__ = ("n_gen", "terms")

    def __init__(self, n_gen: int, terms: dict[int, Any] | None = None):
        self.n_gen = int(n_gen)
        self.terms = {}
        for mask, c in (terms or {}).items():
            if mask >> self.n_gen:
                raise ValueError(f"monomial {mask:b} outside a {n_gen}-generator algebra")
            if not _is_zero(c):
                self.terms[int(mask)] = c

    @classmethod
    def scalar(cls, n_gen: int, c: Any = 1.0) -> "GrassmannElement":
        return cls(n_gen, {0: c})

    @classmethod
    def generator(cls, n_gen: int, i: int, c: Any = 1.0) -> "GrassmannElement":
        if not 0 <= i < n_gen:
            raise ValueError("generator index out of range")
        return cls(n_gen, {1 << i: c})

    @classmethod
    def monomial(cls, n_gen: int, gens: Sequence[int], c: Any = 1.0) -> "GrassmannElement":
        """Product of generators in the given (not necessarily sorted) order."""
        out = cls.scalar(n_gen, c)
        for g in gens:
            out = out * cls.generator(n_gen, g)
        return out

    def _check(self, other: "GrassmannElement"):
        if other.n_gen != self.n_gen:
            raise ValueError("elements live in different algebras")

    def __add__(self, other):
        if not isinstance(other, GrassmannElement):
            other = GrassmannElement.scalar(self.n_gen, other)
        self._check(other)
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out[k] + c if k in out else c
        return GrassmannElement(self.n_gen, out)

    __radd__ = __add__

    def __neg__(self):
        return GrassmannElement(self.n_gen, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, GrassmannElement):
            return GrassmannElement(self.n_gen, {k: c * other for k, c in self.terms.items()})
        return grassmann_multiply(self, other)

    def __rmul__(self, other):
        # scalars commute with everything
        return GrassmannElement(self.n_gen, {k: other * c for k, c in self.terms.items()})

    def scalar_part(self, default: Any = 0.0):
        return self.terms.get(0, default)

    def coefficient(self, mask: int, default: Any = 0.0):
        return self.terms.get(mask, default)

    def degree(self) -> int:
        return max((_popcount(k) for k in self.terms), default=0)

    def is_even(self) -> bool:
        return all(_popcount(k) % 2 == 0 for k in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def map(self, fn) -> "GrassmannElement":
        return GrassmannElement(self.n_gen, {k: fn(c) for k, c in self.terms.items()})

    def exp(self) -> "GrassmannElement":
        """``exp`` of an even element with complex coefficients, by the terminating series."""
        if not self.is_even():
            raise ValueError("exp is only defined here for even elements")
        s = complex(self.scalar_part())
        nil = GrassmannElement(self.n_gen, {k: c for k, c in self.terms.items() if k})
        out = GrassmannElement.scalar(self.n_gen, 1.0)
        power = GrassmannElement.scalar(self.n_gen, 1.0)
        k = 0
        while True:
            k += 1
            power = power * nil * (1.0 / k)
            if power.is_zero():
                break
            out = out + power
        return out * np.exp(s)

    def max_abs_difference(self, other: "GrassmannElement") -> float:
        """Coefficientwise sup-distance for complex-coefficient elements."""
        self._check(other)
        keys = set(self.terms) | set(other.terms)
        return max((abs(complex(self.terms.get(k, 0)) - complex(other.terms.get(k, 0))) for k in keys), default=0.0)

    def __repr__(self) -> str:
        body = " + ".join(f"({c})*{k:0{self.n_gen}b}" for k, c in sorted(self.terms.items()))
        return f"GrassmannElement[{self.n_gen}]({body or 0})"


def grassmann_multiply(x: GrassmannElement, y: GrassmannElement) -> GrassmannElement:
    x._check(y)
    out: dict[int, Any] = {}
    for mx, cx in x.terms.items():
        for my, cy in y.terms.items():
            sgn = product_sign(mx, my)
            if not sgn:
                continue
            c = cx * cy
            if sgn < 0:
                c = -c
            m = mx | my
            out[m] = out[m] + c if m in out else c
    return GrassmannElement(x.n_gen, out)


def berezin_integrate(x: GrassmannElement, order: Iterable[int]) -> GrassmannElement:
    """Iterated Berezin integrals, the first generator of ``order`` innermost.

    ``int (F0 + F1 g) dg = F1``: the generator is moved to the far right of each
    monomial (one sign per generator it passes) and dropped.
    """
    cur = x
    for g in order:
        bit = 1 << g
        out = {}
        for mask, c in cur.terms.items():
            if not mask & bit:
                continue
            passes = _popcount(mask >> (g + 1))
            out[mask ^ bit] = -c if passes & 1 else c
        cur = GrassmannElement(cur.n_gen, out)
    return cur


@dataclass(frozen=True)
class SuperLayout:
    """Generator indices of the Grassmann part of an ``m x n`` supermatrix.

    Column ``l`` owns ``psi_bar[0..m-1, l]`` followed by ``psi[0..m-1, l]``, so
    every monomial ``Psi_{abar, a}`` is already in ascending order.
    """

    m: int
    n: int
    offset: int = 0

    @property
    def size(self) -> int:
        return 2 * self.m * self.n

    def psi_bar(self, k: int, l: int) -> int:
        return self.offset + 2 * self.m * l + k

    def psi(self, k: int, l: int) -> int:
        return self.offset + 2 * self.m * l + self.m + k

    def column(self, k: int, c: int) -> int:
        """Generator in row ``k``, column ``c`` of the ``m x 2n`` matrix ``(psi_bar_l, psi_l)_l``."""
        l, which = divmod(c, 2)
        return self.psi_bar(k, l) if which == 0 else self.psi(k, l)

    def monomial_mask(self, abar: Sequence[Iterable[int]], a: Sequence[Iterable[int]]) -> int:
        mask = 0
        for l in range(self.n):
            for k in abar[l]:
                mask |= 1 << self.psi_bar(k, l)
            for k in a[l]:
                mask |= 1 << self.psi(k, l)
        return mask

    def full_mask(self) -> int:
        return ((1 << self.size) - 1) << self.offset

    def measure(self) -> list[int]:
        """Integration order of ``prod_{k,l} dpsi_bar_{k,l} dpsi_{k,l}``."""
        out = []
        for l in range(self.n):
            for k in range(self.m):
                out += [self.psi_bar(k, l), self.psi(k, l)]
        return out


def _j_block(n: int, j_sign: float) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    for l in range(n):
        J[2 * l, 2 * l + 1] = 0.5 * j_sign
        J[2 * l + 1, 2 * l] = -0.5 * j_sign
    return J


def bilinear(left: SuperLayout, right: SuperLayout, B: np.ndarray, n_gen: int, j_sign: float = 1.0) -> GrassmannElement:
    """Grassmann part of ``Phi . B Phi'``, i.e. ``sum_jk B_jk (Psi_j J Psi'_k^T)``."""
    if left.n != right.n:
        raise ValueError("supermatrices need the same number of columns")
    J = _j_block(left.n, j_sign)
    B = np.asarray(B)
    out: dict[int, complex] = {}
    for j in range(left.m):
        for k in range(right.m):
            if B[j, k] == 0:
                continue
            for c in range(2 * left.n):
                for d in range(2 * left.n):
                    if J[c, d] == 0:
                        continue
                    g1, g2 = left.column(j, c), right.column(k, d)
                    if g1 == g2:
                        continue
                    sgn = product_sign(1 << g1, 1 << g2)
                    mask = (1 << g1) | (1 << g2)
                    out[mask] = out.get(mask, 0) + sgn * B[j, k] * J[c, d]
    return GrassmannElement(n_gen, out)


def psi_square(layout: SuperLayout, n_gen: int, j_sign: float = 1.0) -> list[list[GrassmannElement]]:
    """Entries of ``Psi J Psi^T``."""
    m = layout.m
    out = []
    for j in range(m):
        row = []
        for k in range(m):
            E = np.zeros((m, m))
            E[j, k] = 1.0
            row.append(bilinear(layout, layout, E, n_gen, j_sign))
        out.append(row)
    return out

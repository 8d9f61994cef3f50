"""Polynomial-times-Gaussian functions of symmetric matrices.

A :class:`GPFunction` is a finite sum of terms ``p(M) exp(-Tr(M B))``. The
polynomial ``p`` is in the upper-triangular entries ``u_jk = M_jk`` (``j <= k``),
so ``M_jk = M_kj`` is a single variable. With ``d~_jk = (1 + delta_jk)/2 d/du_jk``
one has ``d~_jk exp(-Tr(M B)) = -B_jk exp(-Tr(M B))``.

Integrals over ``phi`` in ``R^{m x 2n}`` of ``f(phi phi^T)`` times an optional
``exp(sum_c l_c . phi_c)`` are done analytically: columns are independent
Gaussians, and polynomial moments follow from the non-centred Isserlis
recursion.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Poly",
    "GPFunction",
    "upper_index",
    "d_tilde",
    "d_operator",
    "index_pairs",
    "integrate_phi",
]


def upper_index(m: int) -> list[tuple[int, int]]:
    return [(j, k) for j in range(m) for k in range(j, m)]


class Poly:
    """Sparse polynomial ``{exponent tuple: coefficient}`` in ``nvars`` variables."""

    __slots__ = ("nvars", "c")

    def __init__(self, nvars: int, coeffs: Mapping[tuple, complex] | None = None):
        self.nvars = nvars
        self.c = {}
        for e, v in (coeffs or {}).items():
            if len(e) != nvars:
                raise ValueError("exponent length mismatch")
            if v != 0:
                self.c[tuple(int(x) for x in e)] = complex(v)

    @classmethod
    def constant(cls, nvars: int, v: complex = 1.0) -> "Poly":
        return cls(nvars, {(0,) * nvars: v})

    @classmethod
    def variable(cls, nvars: int, i: int, v: complex = 1.0) -> "Poly":
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): v})

    def __add__(self, other: "Poly") -> "Poly":
        out = dict(self.c)
        for e, v in other.c.items():
            out[e] = out.get(e, 0) + v
        return Poly(self.nvars, out)

    def __neg__(self) -> "Poly":
        return Poly(self.nvars, {e: -v for e, v in self.c.items()})

    def __sub__(self, other: "Poly") -> "Poly":
        return self + (-other)

    def scale(self, s: complex) -> "Poly":
        return Poly(self.nvars, {e: v * s for e, v in self.c.items()})

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return self.scale(other)
        out: dict[tuple, complex] = {}
        for e1, v1 in self.c.items():
            for e2, v2 in other.c.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + v1 * v2
        return Poly(self.nvars, out)

    __rmul__ = scale

    def deriv(self, i: int) -> "Poly":
        out = {}
        for e, v in self.c.items():
            if e[i]:
                f = list(e)
                f[i] -= 1
                out[tuple(f)] = v * e[i]
        return Poly(self.nvars, out)

    def evaluate(self, x: Sequence[complex]) -> complex:
        x = np.asarray(x)
        return complex(sum(v * np.prod(x ** np.array(e)) for e, v in self.c.items()))

    def is_zero(self) -> bool:
        return not self.c

    def max_abs(self) -> float:
        return max((abs(v) for v in self.c.values()), default=0.0)

    def degree(self) -> int:
        return max((sum(e) for e in self.c), default=0)


def _b_key(B: np.ndarray) -> tuple:
    m = B.shape[0]
    return tuple(complex(B[j, k]) for j, k in upper_index(m))


class GPFunction:
    """``sum_i p_i(M) exp(-Tr(M B_i))`` on symmetric ``m x m`` matrices."""

    __slots__ = ("m", "terms")

    def __init__(self, m: int, terms: Iterable[tuple[np.ndarray, Poly]] = ()):
        self.m = m
        self.terms: dict[tuple, tuple[np.ndarray, Poly]] = {}
        for B, p in terms:
            self._add_term(np.asarray(B, dtype=complex), p)

    def _add_term(self, B: np.ndarray, p: Poly):
        if B.shape != (self.m, self.m) or not np.allclose(B, B.T, rtol=0, atol=1e-14):
            raise ValueError("B must be a symmetric m x m matrix")
        key = _b_key(B)
        if key in self.terms:
            p = self.terms[key][1] + p
        if p.is_zero():
            self.terms.pop(key, None)
        else:
            self.terms[key] = (B, p)

    @property
    def nvars(self) -> int:
        return self.m * (self.m + 1) // 2

    @classmethod
    def exponential(cls, B, coeff: complex = 1.0) -> "GPFunction":
        B = np.atleast_2d(np.asarray(B, dtype=complex))
        m = B.shape[0]
        return cls(m, [(B, Poly.constant(m * (m + 1) // 2, coeff))])

    @classmethod
    def constant(cls, m: int, v: complex = 1.0) -> "GPFunction":
        return cls(m, [(np.zeros((m, m)), Poly.constant(m * (m + 1) // 2, v))])

    @classmethod
    def from_polynomial(cls, coeffs: Mapping[tuple, complex], B) -> "GPFunction":
        """``p(M) exp(-Tr(M B))`` with ``p`` given over the upper-triangular entries."""
        B = np.atleast_2d(np.asarray(B, dtype=complex))
        m = B.shape[0]
        return cls(m, [(B, Poly(m * (m + 1) // 2, coeffs))])

    @classmethod
    def entry(cls, m: int, j: int, k: int) -> "GPFunction":
        """The coordinate function ``M -> M_jk``."""
        i = upper_index(m).index((min(j, k), max(j, k)))
        return cls(m, [(np.zeros((m, m)), Poly.variable(m * (m + 1) // 2, i))])

    def copy_terms(self):
        return [(B, p) for B, p in self.terms.values()]

    def __add__(self, other):
        if not isinstance(other, GPFunction):
            other = GPFunction.constant(self.m, other)
        out = GPFunction(self.m, self.copy_terms())
        for B, p in other.terms.values():
            out._add_term(B, p)
        return out

    __radd__ = __add__

    def __neg__(self):
        return GPFunction(self.m, [(B, -p) for B, p in self.terms.values()])

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, GPFunction):
            return GPFunction(self.m, [(B, p.scale(other)) for B, p in self.terms.values()])
        out = GPFunction(self.m)
        for B1, p1 in self.terms.values():
            for B2, p2 in other.terms.values():
                out._add_term(B1 + B2, p1 * p2)
        return out

    def __rmul__(self, other):
        return self * other

    def is_zero(self) -> bool:
        return not self.terms

    def max_abs_coefficient(self) -> float:
        return max((p.max_abs() for _, p in self.terms.values()), default=0.0)

    def admissible(self) -> bool:
        """Every exponent matrix has positive definite real part."""
        return all(np.linalg.eigvalsh(B.real).min() > 0 for B, _ in self.terms.values())

    def __call__(self, M) -> complex:
        M = np.atleast_2d(np.asarray(M))
        u = [M[j, k] for j, k in upper_index(self.m)]
        return complex(sum(p.evaluate(u) * np.exp(-np.trace(M @ B)) for B, p in self.terms.values()))

    def at_phi(self, phi) -> complex:
        phi = np.asarray(phi, dtype=float).reshape(self.m, -1)
        return self(phi @ phi.T)

    def d_tilde(self, j: int, k: int) -> "GPFunction":
        j, k = min(j, k), max(j, k)
        i = upper_index(self.m).index((j, k))
        half = 1.0 if j == k else 0.5
        out = GPFunction(self.m)
        for B, p in self.terms.values():
            out._add_term(B, p.deriv(i).scale(half) - p.scale(B[j, k]))
        return out

    def __repr__(self) -> str:
        return f"GPFunction(m={self.m}, terms={len(self.terms)})"


def d_tilde(f: GPFunction, j: int, k: int) -> GPFunction:
    return f.d_tilde(j, k)


def _perm_sign(p: Sequence[int]) -> int:
    sign, seen = 1, [False] * len(p)
    for i in range(len(p)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = p[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _det_single(abar: Sequence[int], a: Sequence[int], f: GPFunction) -> GPFunction:
    rows, cols = sorted(abar), sorted(a)
    if len(rows) != len(cols):
        raise ValueError("index pair needs equal cardinalities")
    if not rows:
        return f
    out = GPFunction(f.m)
    for perm in itertools.permutations(range(len(rows))):
        g = f
        for r, c in zip(rows, perm):
            g = g.d_tilde(r, cols[c])
        out = out + (g if _perm_sign(perm) > 0 else -g)
    return out


def d_operator(abar: Sequence[Iterable[int]], a: Sequence[Iterable[int]], f: GPFunction) -> GPFunction:
    """``D_{abar, a} f = prod_l det(d~_{abar_l, a_l}) f`` (0-based indices).

    ``abar`` and ``a`` are n-tuples of index subsets; a single pair of subsets
    may be passed as one-element tuples.
    """
    if len(abar) != len(a):
        raise ValueError("tuples must have the same length")
    out = f
    for ab, aa in zip(abar, a):
        out = _det_single(tuple(ab), tuple(aa), out)
    return out


def _subsets(m: int) -> list[tuple[int, ...]]:
    return [c for r in range(m + 1) for c in itertools.combinations(range(m), r)]


def index_pairs(m: int, n: int) -> list[tuple[tuple, tuple]]:
    """All ``(abar, a)`` n-tuples with ``|abar_l| = |a_l|`` for every ``l``."""
    single = [(x, y) for x in _subsets(m) for y in _subsets(m) if len(x) == len(y)]
    out = []
    for combo in itertools.product(single, repeat=n):
        out.append((tuple(c[0] for c in combo), tuple(c[1] for c in combo)))
    return out


@lru_cache(maxsize=None)
def _moment(beta: tuple, mu: tuple, sigma: tuple) -> complex:
    """``E[x^beta]`` for ``x ~ N(mu, Sigma)`` (analytically continued to complex parameters)."""
    if not any(beta):
        return 1.0
    i = next(k for k, b in enumerate(beta) if b)
    rest = list(beta)
    rest[i] -= 1
    rest_t = tuple(rest)
    m = len(beta)
    val = mu[i] * _moment(rest_t, mu, sigma)
    for j in range(m):
        if rest[j]:
            r2 = list(rest)
            r2[j] -= 1
            val += sigma[i * m + j] * rest[j] * _moment(tuple(r2), mu, sigma)
    return val


def _phi_expansion(p: Poly, m: int, cols: int) -> dict[tuple, complex]:
    """Expand ``p(phi phi^T)`` into monomials of ``phi`` (row-major ``m x cols``)."""
    nv = m * cols
    idx = upper_index(m)
    entry_polys = []
    for j, k in idx:
        terms = {}
        for c in range(cols):
            e = [0] * nv
            e[j * cols + c] += 1
            e[k * cols + c] += 1
            terms[tuple(e)] = terms.get(tuple(e), 0) + 1.0
        entry_polys.append(Poly(nv, terms))
    powers: dict[tuple[int, int], Poly] = {}

    def power(i, e):
        if (i, e) not in powers:
            powers[(i, e)] = Poly.constant(nv) if e == 0 else power(i, e - 1) * entry_polys[i]
        return powers[(i, e)]

    out = Poly(nv)
    for e, v in p.c.items():
        term = Poly.constant(nv, v)
        for i, ei in enumerate(e):
            if ei:
                term = term * power(i, ei)
        out = out + term
    return out.c


def integrate_phi(f: GPFunction, n: int, linear: np.ndarray | None = None) -> complex:
    """``int f(phi phi^T) exp(sum_c l_c . phi_c) d^{2mn} phi`` over ``R^{m x 2n}``.

    ``linear`` is an ``m x 2n`` complex matrix of the ``l_c``; every exponent
    matrix of ``f`` must have positive definite real part.
    """
    m, cols = f.m, 2 * n
    L = np.zeros((m, cols), dtype=complex) if linear is None else np.asarray(linear, dtype=complex).reshape(m, cols)
    total = 0.0 + 0.0j
    for B, p in f.terms.values():
        if np.linalg.eigvalsh(B.real).min() <= 0:
            raise ValueError("Gaussian factor is not integrable (Re B not positive definite)")
        Binv = np.linalg.inv(B)
        norm = math.pi ** (m * n) * np.linalg.det(B) ** (-n)
        norm *= np.exp(0.25 * sum(L[:, c] @ Binv @ L[:, c] for c in range(cols)))
        sigma = tuple(complex(v) for v in (0.5 * Binv).ravel())
        mus = [tuple(complex(v) for v in 0.5 * Binv @ L[:, c]) for c in range(cols)]
        acc = 0.0 + 0.0j
        for e, v in _phi_expansion(p, m, cols).items():
            ex = np.array(e).reshape(m, cols)
            val = v
            for c in range(cols):
                val *= _moment(tuple(int(x) for x in ex[:, c]), mus[c], sigma)
            acc += val
        total += norm * acc
    return complex(total)

"""Super-Taylor expansion and mechanical checks of the supersymmetric identities.

All ``phi`` integrals are analytic (see :mod:`.gaussian`); Grassmann integrals
use :func:`.grassmann.berezin_integrate`. Every verifier returns a residual; the
suite compares residuals with fixed thresholds.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .gaussian import GPFunction, Poly, d_operator, index_pairs, integrate_phi, upper_index
from .grassmann import (
    GENERATOR_CAP,
    GrassmannElement,
    SuperLayout,
    berezin_integrate,
    bilinear,
    product_sign,
    psi_square,
)

__all__ = [
    "ScopeError",
    "check_scope",
    "sgn_a",
    "super_taylor",
    "super_taylor_direct",
    "superintegral",
    "verify_flat_integral",
    "verify_sup_identity",
    "T_transform",
    "verify_T_gaussian",
    "verify_T_involution",
    "verify_susy_gaussian_integral",
    "verify_leibniz",
    "verify_taylor_direct",
    "random_pe",
    "random_im_positive",
    "SuiteRecord",
    "THRESHOLDS",
    "run_suite",
    "DEFAULT_SIZES",
]

DEFAULT_SIZES = ((1, 1), (2, 1), (2, 2))
THRESHOLDS = {
    "flat_integral": 1e-10,
    "sup_identity": 1e-10,
    "T_gaussian": 1e-9,
    "T_involution": 1e-9,
    "susy_gaussian_integral": 1e-10,
    "leibniz": 1e-12,
    "taylor_direct": 1e-10,
}


class ScopeError(ValueError):
    """Requested sizes exceed the generator cap or violate ``2n >= m``."""


def check_scope(m: int, n: int) -> None:
    if m < 1 or n < 1:
        raise ScopeError("m and n must be positive")
    if 2 * m * n > GENERATOR_CAP:
        raise ScopeError(f"(m, n) = ({m}, {n}) needs {2 * m * n} generators, cap is {GENERATOR_CAP}")
    if 2 * n < m:
        raise ScopeError(f"(m, n) = ({m}, {n}) violates 2n >= m")


def sgn_a(a: Sequence[Iterable[int]]) -> int:
    s = 1
    for part in a:
        c = len(tuple(part))
        if (c * (c - 1) // 2) % 2:
            s = -s
    return s


def super_taylor(f: GPFunction, n: int, layout: SuperLayout | None = None,
                 n_gen: int | None = None) -> GrassmannElement:
    """``f(Phi^2) = sum sgn(a) D_{abar,a} f(phi^2) Psi_{abar,a}`` with symbolic coefficients."""
    layout = layout or SuperLayout(f.m, n)
    n_gen = layout.offset + layout.size if n_gen is None else n_gen
    terms = {}
    for abar, a in index_pairs(f.m, n):
        coeff = d_operator(abar, a, f)
        if coeff.is_zero():
            continue
        if sgn_a(a) < 0:
            coeff = -coeff
        terms[layout.monomial_mask(abar, a)] = coeff
    return GrassmannElement(n_gen, terms)


def super_taylor_direct(f: GPFunction, phi: np.ndarray, n: int, j_sign: float = 1.0) -> GrassmannElement:
    """``f(phi phi^T + Psi J Psi^T)`` at a numeric ``phi`` by Grassmann arithmetic.

    Independent of the D operators: the exponential is a terminating series
    and the polynomial is multiplied out entry by entry.
    """
    m = f.m
    layout = SuperLayout(m, n)
    n_gen = layout.size
    phi = np.asarray(phi, dtype=float).reshape(m, 2 * n)
    M0 = phi @ phi.T
    N = psi_square(layout, n_gen, j_sign)
    entries = [N[j][k] + M0[j, k] for j, k in upper_index(m)]
    out = GrassmannElement(n_gen)
    for B, p in f.terms.values():
        trBN = GrassmannElement(n_gen)
        for j in range(m):
            for k in range(m):
                if B[j, k] != 0:
                    trBN = trBN + N[k][j] * complex(B[j, k])
        gauss = (-trBN).exp() * complex(np.exp(-np.trace(B @ M0)))
        poly = GrassmannElement(n_gen)
        for e, v in p.c.items():
            term = GrassmannElement.scalar(n_gen, v)
            for i, ei in enumerate(e):
                for _ in range(ei):
                    term = term * entries[i]
            poly = poly + term
        out = out + gauss * poly
    return out


def _evaluate(F: GrassmannElement, phi: np.ndarray) -> GrassmannElement:
    return GrassmannElement(F.n_gen, {k: c.at_phi(phi) for k, c in F.terms.items()})


def verify_taylor_direct(f: GPFunction, n: int, phi: np.ndarray, j_sign: float = 1.0) -> float:
    """Sup-distance between the symbolic expansion and the direct one at ``phi``."""
    return _evaluate(super_taylor(f, n), phi).max_abs_difference(super_taylor_direct(f, phi, n, j_sign))


def superintegral(F: GrassmannElement, m: int, n: int, layout: SuperLayout | None = None) -> complex:
    """``int F(Phi) DPhi`` for ``F`` with GP coefficients, ``1/pi^{mn}`` normalised."""
    layout = layout or SuperLayout(m, n)
    top = berezin_integrate(F, layout.measure()).scalar_part(None)
    if top is None:
        return 0.0
    return integrate_phi(top, n) / math.pi ** (m * n)


def _full(m: int, n: int):
    full = tuple(range(m))
    return (full,) * n, (full,) * n


def verify_flat_integral(f: GPFunction, n: int) -> float:
    """``|(-1)^{mn} pi^{-mn} int D_{I,I} f(phi^2) dphi - f(0)|``."""
    m = f.m
    check_scope(m, n)
    I, I2 = _full(m, n)
    val = (-1) ** (m * n) * integrate_phi(d_operator(I, I2, f), n) / math.pi ** (m * n)
    return abs(val - f(np.zeros((m, m))))


def verify_sup_identity(f: GPFunction, n: int) -> float:
    """``|int f(Phi^2) DPhi - f(0)|`` through the full Berezin integral."""
    check_scope(f.m, n)
    return abs(superintegral(super_taylor(f, n), f.m, n) - f(np.zeros((f.m, f.m))))


def T_transform(f: GPFunction, n: int, phi_prime: np.ndarray) -> complex:
    """``Tf(phi'^2) = (-1)^{mn} pi^{-mn} int exp(i phi . phi') D_{I,I} f(phi^2) dphi``."""
    m = f.m
    check_scope(m, n)
    I, I2 = _full(m, n)
    L = 1j * np.asarray(phi_prime, dtype=float).reshape(m, 2 * n)
    return (-1) ** (m * n) * integrate_phi(d_operator(I, I2, f), n, L) / math.pi ** (m * n)


def _check_im_positive(Bt: np.ndarray):
    Bt = np.atleast_2d(np.asarray(Bt, dtype=complex))
    if not np.allclose(Bt, Bt.T):
        raise ValueError("B must be symmetric")
    if np.linalg.eigvalsh(Bt.imag).min() <= 0:
        raise ValueError("Im B must be positive definite")
    if abs(np.linalg.det(Bt)) < 1e-14:
        raise ValueError("B is singular")
    return Bt


def verify_T_gaussian(Bt: np.ndarray, n: int, test_points: Sequence[np.ndarray]) -> float:
    """Max over test points of ``|T(e^{i Tr(B M)}) - e^{-(i/4) Tr(B^{-1} M)}|`` at ``M = phi' phi'^T``."""
    Bt = _check_im_positive(Bt)
    m = Bt.shape[0]
    f = GPFunction.exponential(-1j * Bt)
    Binv = np.linalg.inv(Bt)
    dev = 0.0
    for ph in test_points:
        ph = np.asarray(ph, dtype=float).reshape(m, 2 * n)
        expect = np.exp(-0.25j * np.trace(Binv @ ph @ ph.T))
        dev = max(dev, abs(T_transform(f, n, ph) - expect))
    return dev


def verify_T_involution(Bt: np.ndarray, n: int, test_points: Sequence[np.ndarray]) -> float:
    """Apply the transform to ``f`` and to its image; the second image must return ``f``."""
    Bt = _check_im_positive(Bt)
    m = Bt.shape[0]
    f = GPFunction.exponential(-1j * Bt)
    g = GPFunction.exponential(0.25j * np.linalg.inv(Bt))
    dev = 0.0
    for ph in test_points:
        ph = np.asarray(ph, dtype=float).reshape(m, 2 * n)
        dev = max(dev, abs(T_transform(f, n, ph) - g.at_phi(ph)), abs(T_transform(g, n, ph) - f.at_phi(ph)))
    return dev


def _exp_commuting_pairs(x: GrassmannElement) -> GrassmannElement:
    """``exp`` of a sum of degree-two monomials as ``prod (1 + t)``."""
    out = GrassmannElement.scalar(x.n_gen, 1.0)
    for mask, c in x.terms.items():
        out = out * GrassmannElement(x.n_gen, {0: 1.0, mask: c})
    return out


def verify_susy_gaussian_integral(B: np.ndarray, A: np.ndarray, n: int, phi_prime: np.ndarray,
                                  j_sign: float = 1.0) -> float:
    """Coefficientwise residual of ``int e^{2 Phi.A Phi'} e^{-Phi.B Phi} DPhi = e^{Phi'.(A^T B^{-1} A) Phi'}``.

    ``Phi'`` keeps its Grassmann generators symbolic and its ``phi'`` at the
    given numeric point.
    """
    B = np.atleast_2d(np.asarray(B, dtype=complex))
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    m = B.shape[0]
    check_scope(m, n)
    L = SuperLayout(m, n, 0)
    Lp = SuperLayout(m, n, L.size)
    n_gen = 2 * L.size
    php = np.asarray(phi_prime, dtype=float).reshape(m, 2 * n)

    F = super_taylor(GPFunction.exponential(B), n, L, n_gen)
    H = _exp_commuting_pairs(bilinear(L, Lp, 2 * A, n_gen, j_sign))
    full = L.full_mask()
    measure = L.measure()
    reduced: dict[int, GPFunction] = {}
    for h, ch in H.terms.items():
        fmask = full ^ (h & full)
        cf = F.terms.get(fmask)
        if cf is None:
            continue
        sgn = product_sign(fmask, h)
        mono = berezin_integrate(GrassmannElement(n_gen, {fmask | h: float(sgn)}), measure)
        (rest, s), = mono.terms.items()
        coeff = cf * (ch * s)
        reduced[rest] = reduced[rest] + coeff if rest in reduced else coeff
    lin = 2 * A @ php
    lhs = GrassmannElement(n_gen, {k: integrate_phi(c, n, lin) / math.pi ** (m * n) for k, c in reduced.items()})

    C = A.T @ np.linalg.inv(B) @ A
    rhs = bilinear(Lp, Lp, C, n_gen, j_sign).exp() * complex(np.exp(np.trace(php.T @ C @ php)))
    return lhs.max_abs_difference(rhs)


def verify_leibniz(f: GPFunction, g: GPFunction, n: int) -> float:
    """Largest coefficient of ``ST(fg) - ST(f) ST(g)``, relative to the largest one of ``ST(fg)``."""
    check_scope(f.m, n)
    lhs = super_taylor(f * g, n)
    diff = lhs - super_taylor(f, n) * super_taylor(g, n)
    scale = max((c.max_abs_coefficient() for c in lhs.terms.values()), default=0.0)
    return max((c.max_abs_coefficient() for c in diff.terms.values()), default=0.0) / max(scale, 1.0)


def random_pe(rng: np.random.Generator, m: int, degree: int = 2, scale: float = 0.5) -> GPFunction:
    """Random ``p(M) exp(-Tr(M B))`` with ``Re B`` positive definite."""
    X = rng.normal(size=(m, m))
    Y = rng.normal(size=(m, m))
    B = X @ X.T / m + 0.5 * np.eye(m) + 0.5j * (Y + Y.T) / 2
    nv = m * (m + 1) // 2
    coeffs = {}
    for e in _exponents(nv, degree):
        coeffs[e] = complex(*rng.normal(scale=scale, size=2))
    return GPFunction.from_polynomial(coeffs, B)


def _exponents(nv: int, degree: int):
    if nv == 0:
        yield ()
        return
    for first in range(degree + 1):
        for rest in _exponents(nv - 1, degree - first):
            yield (first,) + rest


def random_im_positive(rng: np.random.Generator, m: int) -> np.ndarray:
    X = rng.normal(size=(m, m))
    Y = rng.normal(size=(m, m))
    return (X + X.T) / 4 + 1j * (Y @ Y.T / m + 0.5 * np.eye(m))


@dataclass(frozen=True)
class SuiteRecord:
    identity: str
    m: int
    n: int
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual < self.threshold)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def run_suite(sizes: Sequence[tuple[int, int]] = DEFAULT_SIZES, cases: int = 10, seed: int = 0,
              mutation: str | None = None) -> list[SuiteRecord]:
    """Randomised identity checks; one record per identity and size (worst case kept).

    ``mutation="j_block_sign"`` flips the sign of the ``J`` blocks in every
    place the Grassmann bilinear form enters, which must make the suite fail.
    """
    if mutation not in (None, "j_block_sign"):
        raise ValueError(f"unknown mutation {mutation!r}")
    j_sign = -1.0 if mutation == "j_block_sign" else 1.0
    for m, n in sizes:
        check_scope(m, n)
    out = []
    for m, n in sizes:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, m, n])))
        worst = {k: 0.0 for k in THRESHOLDS}
        for _ in range(cases):
            f = random_pe(rng, m)
            g = random_pe(rng, m, degree=1)
            phi = rng.normal(size=(m, 2 * n))
            worst["flat_integral"] = max(worst["flat_integral"], verify_flat_integral(f, n))
            worst["sup_identity"] = max(worst["sup_identity"], verify_sup_identity(f, n))
            worst["leibniz"] = max(worst["leibniz"], verify_leibniz(f, g, n))
            worst["taylor_direct"] = max(worst["taylor_direct"], verify_taylor_direct(f, n, phi, j_sign))
            Bt = random_im_positive(rng, m)
            pts = [rng.normal(size=(m, 2 * n)) for _ in range(3)]
            worst["T_gaussian"] = max(worst["T_gaussian"], verify_T_gaussian(Bt, n, pts))
            worst["T_involution"] = max(worst["T_involution"], verify_T_involution(Bt, n, pts))
            X = rng.normal(size=(m, m))
            Bg = X @ X.T / m + np.eye(m) + 0.3j * np.diag(rng.normal(size=m))
            Ag = rng.normal(scale=0.5, size=(m, m))
            worst["susy_gaussian_integral"] = max(
                worst["susy_gaussian_integral"],
                verify_susy_gaussian_integral(Bg, Ag, n, rng.normal(scale=0.5, size=(m, 2 * n)), j_sign))
        out += [SuiteRecord(k, m, n, float(v), THRESHOLDS[k]) for k, v in worst.items()]
    return out

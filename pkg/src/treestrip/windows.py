"""Theta matrices, determinant window conditions and the a.c. window.

For a strip with vertical eigenvalues ``a_1..a_m`` the shifted boundary values
``g^(q)_j = Gamma^(q)_{E - a_j}`` define, for every upper-triangular
nonnegative integer matrix ``J``, the diagonal ``s x s`` matrix

    theta_J = diag_q prod_{j <= k} (g^(q)_j g^(q)_k)^{J_jk}.

An energy of ``I_{A,S}`` belongs to the window when
``det(theta_J conj(theta_J') S - 1) != 0`` for all ``|J| + |J'| >= 1``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .free_green import EPS_IM, EnergyGrid, _merge_cells, boundary_values
from .model import SubstitutionModel, VerticalOperator, check_assumptions

__all__ = [
    "MissingBoundaryValue",
    "MultiIndex",
    "ShiftedGreenDiagonal",
    "ThetaMatrix",
    "ConditionPairs",
    "WindowReport",
    "FrechetSpectrum",
    "multi_indices",
    "shifted_diagonals",
    "theta",
    "cutoff_order",
    "enumerate_condition_pairs",
    "compute_window",
    "frechet_spectrum",
    "DET_TOL",
    "LOW_MARGIN",
]

DET_TOL = 1e-8
LOW_MARGIN = 1e-4
HARD_CAP = 4
MAX_PAIRS = 20000
CERT_TOL = 1e-6  # boundary values carry O(eta) error; certify only with room to spare


class MissingBoundaryValue(ValueError):
    def __init__(self, label: int | None, shift: float, E: float):
        who = "" if label is None else f" for label {label + 1}"
        super().__init__(f"no boundary value{who} at E - a = {E - shift:.6g} (a = {shift:.6g})")
        self.label = label
        self.shift = shift


@dataclass(frozen=True)
class MultiIndex:
    """Upper-triangular ``m x m`` matrix of nonnegative integers."""

    J: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        J = tuple(tuple(int(v) for v in row) for row in self.J)
        m = len(J)
        for j, row in enumerate(J):
            if len(row) != m:
                raise ValueError("multi-index must be square")
            for k, v in enumerate(row):
                if v < 0:
                    raise ValueError("multi-index entries must be nonnegative")
                if k < j and v != 0:
                    raise ValueError("multi-index must be upper triangular")
        object.__setattr__(self, "J", J)

    @property
    def m(self) -> int:
        return len(self.J)

    @property
    def order(self) -> int:
        return sum(map(sum, self.J))

    def exponents(self) -> np.ndarray:
        """Power of each ``g_j`` in ``theta_J``: row plus column sums of ``J``."""
        J = np.array(self.J, dtype=int).reshape(self.m, self.m)
        return J.sum(axis=0) + J.sum(axis=1)

    @classmethod
    def zero(cls, m: int) -> "MultiIndex":
        return cls(tuple((0,) * m for _ in range(m)))

    @classmethod
    def from_array(cls, J) -> "MultiIndex":
        return cls(tuple(tuple(row) for row in np.asarray(J, dtype=int)))

    def to_list(self) -> list[list[int]]:
        return [list(r) for r in self.J]

    def __str__(self) -> str:
        return "[" + ";".join(",".join(map(str, r)) for r in self.J) + "]"


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    # reverse-lexicographic in the first slot gives row-major lexicographic descending;
    # we emit ascending row-major order
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def multi_indices(m: int, order: int) -> list[MultiIndex]:
    """All multi-indices of a given order, lexicographic in row-major entries."""
    slots = [(j, k) for j in range(m) for k in range(j, m)]
    out = []
    for comp in _compositions(order, len(slots)):
        J = [[0] * m for _ in range(m)]
        for (j, k), v in zip(slots, comp):
            J[j][k] = v
        out.append(MultiIndex(tuple(map(tuple, J))))
    return out


@dataclass(frozen=True)
class ShiftedGreenDiagonal:
    """``g[q, j] = Gamma^(q)_{E - a_j}`` for one energy."""

    E: float
    g: np.ndarray  # (s, m)

    def matrix(self, q: int) -> np.ndarray:
        return np.diag(self.g[q])

    @property
    def gamma_max(self) -> float:
        return float(np.max(np.abs(self.g)))


@dataclass(frozen=True)
class ThetaMatrix:
    J: MultiIndex
    E: float
    diagonal: np.ndarray  # (s,)

    @property
    def theta(self) -> np.ndarray:
        return np.diag(self.diagonal)


def _as_vertical(vertical) -> VerticalOperator:
    if vertical is None:
        return VerticalOperator.zero(1)
    if isinstance(vertical, VerticalOperator):
        return vertical
    return VerticalOperator(np.asarray(vertical, dtype=float))


def _shifted_batch(model, vertical: VerticalOperator, energies: np.ndarray, ladder=None):
    """Boundary values at ``E - a_j`` for a batch: ``g (N, s, m)``, ``exists (N, m)``."""
    a = np.asarray(vertical.eigenvalues, dtype=float)
    E = np.asarray(energies, dtype=float)
    shifted = (E[:, None] - a[None, :]).ravel()
    # equal shifts (degenerate A) need only one solve
    uniq, inv = np.unique(shifted, return_inverse=True)
    out = boundary_values(model, uniq, ladder)
    N, m = len(E), len(a)
    g = out["gamma"][inv].reshape(N, m, -1).transpose(0, 2, 1)
    exists = out["exists"][inv].reshape(N, m)
    return g, exists


def shifted_diagonals(model: SubstitutionModel, vertical, E: float, ladder=None) -> ShiftedGreenDiagonal:
    """Boundary values ``Gamma^(q)_{E - a_j}`` for every label and eigenvalue of ``A``.

    Raises
    ------
    MissingBoundaryValue
        If some ``E - a_j`` has no boundary value.
    """
    vertical = _as_vertical(vertical)
    g, exists = _shifted_batch(model, vertical, np.array([E]), ladder)
    if not exists[0].all():
        # existence is decided jointly over labels, so only the shift is known
        j = int(np.argmin(exists[0]))
        raise MissingBoundaryValue(None, float(vertical.eigenvalues[j]), E)
    return ShiftedGreenDiagonal(float(E), g[0])


def _theta_diag(J: MultiIndex, g: np.ndarray) -> np.ndarray:
    # g (..., s, m) -> (..., s)
    return np.prod(g ** J.exponents(), axis=-1)


def theta(J: MultiIndex, diag: ShiftedGreenDiagonal) -> ThetaMatrix:
    if J.m != diag.g.shape[1]:
        raise ValueError("multi-index size does not match the strip width")
    return ThetaMatrix(J, diag.E, _theta_diag(J, diag.g))


def _norm_S(model) -> float:
    return check_assumptions(model).operator_norm_S


def cutoff_order(gamma_max: float, norm_S: float, cert_tol: float = CERT_TOL) -> int | None:
    """Smallest ``N >= 1`` with ``gamma_max^(2N) ||S|| < 1 - cert_tol``; None if there is none."""
    bound = 1.0 - cert_tol
    if norm_S < bound or gamma_max == 0:
        return 1
    if gamma_max >= 1:
        return None
    n = max(1, math.floor(math.log(norm_S / bound) / (-2 * math.log(gamma_max))))
    # correct the floating estimate in either direction
    while n > 1 and gamma_max ** (2 * (n - 1)) * norm_S < bound:
        n -= 1
    while not gamma_max ** (2 * n) * norm_S < bound:
        n += 1
    return n


@dataclass(frozen=True)
class ConditionPairs:
    """Pairs ``(J, J')`` to evaluate, with the tail cutoff and whether it is certified.

    ``max_order`` is the highest ``|J| + |J'|`` checked. When ``certificate`` is
    true, every pair of order ``>= cutoff`` has ``||theta_J conj(theta_J') S|| < 1``.
    """

    pairs: tuple[tuple[MultiIndex, MultiIndex], ...]
    max_order: int
    cutoff: int | None
    certificate: bool


def _pairs_of_order(m: int, n: int) -> Iterator[tuple[MultiIndex, MultiIndex]]:
    for left in range(n + 1):
        for J in multi_indices(m, left):
            for Jp in multi_indices(m, n - left):
                yield J, Jp


def enumerate_condition_pairs(model, vertical, E: float | None = None, gamma_max: float | None = None,
                              hard_cap: int = HARD_CAP) -> ConditionPairs:
    """Finite list of ``(J, J')`` that decides the window condition at one energy.

    Orders ``1 .. max(1, N* - 1)`` are returned, where ``N*`` is the cutoff
    order; without a finite cutoff, orders up to ``hard_cap`` are returned and
    ``certificate`` is False.
    """
    vertical = _as_vertical(vertical)
    if gamma_max is None:
        if E is None:
            raise ValueError("need E or gamma_max")
        gamma_max = shifted_diagonals(model, vertical, E).gamma_max
    n_star = cutoff_order(gamma_max, _norm_S(model))
    if n_star is None or n_star - 1 > hard_cap:
        top, cert = hard_cap, False
    else:
        top, cert = max(1, n_star - 1), True
    pairs = []
    for n in range(1, top + 1):
        pairs.extend(_pairs_of_order(vertical.m, n))
        if len(pairs) > MAX_PAIRS:
            raise ValueError(f"condition-pair enumeration exceeds {MAX_PAIRS} pairs at order {n}")
    return ConditionPairs(tuple(pairs), top, n_star, cert)


@dataclass
class WindowReport:
    energies: np.ndarray
    status: np.ndarray  # in | excluded | outside_I_AS | indeterminate
    worst_margin: np.ndarray
    excluding_pair: list
    cutoff_order_used: int
    certificate: bool
    low_margin: np.ndarray = field(default=None)
    grid_step: float = 0.0
    frechet_margin: np.ndarray = field(default=None)

    @property
    def in_window(self) -> np.ndarray:
        return self.status == "in"

    def intervals(self):
        return _merge_cells(self.energies, self.in_window, self.grid_step)

    def counts(self) -> dict[str, int]:
        keys, n = np.unique(self.status, return_counts=True)
        return {str(k): int(v) for k, v in zip(keys, n)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "status", "worst_margin", "excluding_pair", "frechet_margin"])
        fm = self.frechet_margin if self.frechet_margin is not None else np.full(len(self.energies), np.nan)
        fmt = lambda v: f"{v:.10g}" if np.isfinite(v) else ""
        for E, st, mg, pair, f in zip(self.energies, self.status, self.worst_margin, self.excluding_pair, fm):
            w.writerow([f"{E:.10g}", st, fmt(mg), "" if pair is None else f"{pair[0]}|{pair[1]}", fmt(f)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "intervals": self.intervals().to_dict()["intervals"],
            "grid_step": self.grid_step,
            "counts": self.counts(),
            "low_margin_cells": int(np.count_nonzero(self.low_margin)),
            "cutoff_order_used": self.cutoff_order_used,
            "certificate": self.certificate,
        }


def _det_batch(theta_prod: np.ndarray, S: np.ndarray) -> np.ndarray:
    # theta_prod (N, s): det(diag(t) S - 1) for every row
    s = S.shape[0]
    M = theta_prod[:, :, None] * S[None] - np.eye(s)[None]
    return np.linalg.det(M)


def compute_window(model: SubstitutionModel, vertical, grid: EnergyGrid, ladder=None,
                   eps_im: float = EPS_IM, det_tol: float = DET_TOL, hard_cap: int = HARD_CAP,
                   chunk: int = 2048) -> WindowReport:
    """Classify every grid energy as in the window, excluded, outside ``I_{A,S}`` or indeterminate."""
    vertical = _as_vertical(vertical)
    S = model.S.astype(float) if isinstance(model, SubstitutionModel) else np.asarray(model, float)
    E = grid.energies
    N = len(E)
    status = np.full(N, "outside_I_AS", dtype=object)
    margin = np.full(N, np.inf)
    fmargin = np.full(N, np.nan)
    excl: list = [None] * N
    top_used, cert_all = 0, True
    g_all = np.empty((N, S.shape[0], vertical.m), dtype=complex)
    ex_all = np.zeros((N, vertical.m), dtype=bool)
    for start in range(0, N, chunk):
        sl = slice(start, start + chunk)
        g_all[sl], ex_all[sl] = _shifted_batch(model, vertical, E[sl], ladder)
    has_all = ex_all.all(axis=1)
    inside = has_all & (g_all.imag.min(axis=(1, 2), initial=np.inf) > eps_im)
    status[~has_all] = "indeterminate"
    idx = np.flatnonzero(inside)
    if idx.size:
        # one enumeration for the worst gamma_max keeps the pair list shared across the grid
        gmax = float(np.abs(g_all[idx]).max())
        pairs = enumerate_condition_pairs(S, vertical, gamma_max=gmax, hard_cap=hard_cap)
        top_used, cert_all = pairs.max_order, pairs.certificate
        g = g_all[idx]
        worst = np.full(idx.size, np.inf)
        worst_pair = np.full(idx.size, -1)
        for k, (J, Jp) in enumerate(pairs.pairs):
            t = _theta_diag(J, g) * np.conj(_theta_diag(Jp, g))
            d = np.abs(_det_batch(t, S))
            better = d < worst
            worst[better] = d[better]
            worst_pair[better] = k
        margin[idx] = worst
        ok = worst > det_tol
        status[idx[ok]] = "in"
        status[idx[~ok]] = "excluded"
        for i, k in zip(idx[~ok], worst_pair[~ok]):
            excl[i] = pairs.pairs[k]
        fmargin[idx] = _frechet_margin_batch(g, S, vertical.m, pairs.cutoff if pairs.certificate else top_used)
    low = np.isfinite(margin) & (margin > det_tol) & (margin < LOW_MARGIN)
    return WindowReport(E, status.astype(str), margin, excl, top_used, cert_all, low, grid.step, fmargin)


def _frechet_margin_batch(g: np.ndarray, S: np.ndarray, m: int, order: int) -> np.ndarray:
    """``min |1 - eig|`` over one- and two-sided theta products up to ``order`` for a batch."""
    out = np.abs(1 - np.zeros(g.shape[0]))  # the listed eigenvalue 0
    for n in range(1, order + 1):
        for J in multi_indices(m, n):
            ev = np.linalg.eigvals(_theta_diag(J, g)[:, :, None] * S[None])
            out = np.minimum(out, np.abs(1 - ev).min(axis=1))
        for J, Jp in _pairs_of_order(m, n):
            t = _theta_diag(J, g) * np.conj(_theta_diag(Jp, g))
            ev = np.linalg.eigvals(t[:, :, None] * S[None])
            out = np.minimum(out, np.abs(1 - ev).min(axis=1))
    return out


@dataclass(frozen=True)
class FrechetSpectrum:
    """Eigenvalues of ``theta_J S`` (one-sided) and ``theta_J conj(theta_J') S`` (two-sided)."""

    E: float
    one_sided: np.ndarray
    two_sided: np.ndarray
    margin: float
    max_order: int
    certificate: bool

    def to_dict(self) -> dict:
        enc = lambda a: [[float(v.real), float(v.imag)] for v in a]
        return {"E": self.E, "one_sided": enc(self.one_sided), "two_sided": enc(self.two_sided),
                "margin": self.margin, "max_order": self.max_order, "certificate": self.certificate}


def frechet_spectrum(model: SubstitutionModel, vertical, E: float, max_order: int | None = None) -> FrechetSpectrum:
    """Finite eigenvalue lists for the linearised fixed-point map, with ``min |1 - eig|``.

    ``max_order`` defaults to the cutoff order ``N*``, beyond which every
    eigenvalue has modulus below one; ``0`` is always listed.
    """
    vertical = _as_vertical(vertical)
    S = model.S.astype(float)
    diag = shifted_diagonals(model, vertical, E)
    pairs = enumerate_condition_pairs(model, vertical, gamma_max=diag.gamma_max)
    if max_order is None:
        order = pairs.cutoff if pairs.certificate else pairs.max_order
    else:
        order = int(max_order)
    one = [np.zeros(1, dtype=complex)]
    two = [np.zeros(1, dtype=complex)]
    for n in range(1, order + 1):
        for J in multi_indices(vertical.m, n):
            one.append(np.linalg.eigvals(_theta_diag(J, diag.g)[:, None] * S))
        for J, Jp in _pairs_of_order(vertical.m, n):
            t = _theta_diag(J, diag.g) * np.conj(_theta_diag(Jp, diag.g))
            two.append(np.linalg.eigvals(t[:, None] * S))
    one_a, two_a = np.concatenate(one), np.concatenate(two)
    margin = float(np.min(np.abs(1 - np.concatenate([one_a, two_a]))))
    cert = pairs.certificate and order >= pairs.cutoff - 1
    return FrechetSpectrum(float(E), one_a, two_a, margin, order, cert)


def window_json(report: WindowReport) -> str:
    return json.dumps(report.summary(), indent=2, sort_keys=True)

"""Exact finite-volume reference computations on truncated tree-strips.

The Hamiltonian on a depth-``d`` truncation has diagonal blocks
``A + lam V(x)`` and identity blocks between neighbouring vertices
(Dirichlet truncation: no coupling past depth ``d``).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .free_green import EnergyGrid, SpectralPoint, solve_free_batch
from .model import (
    DEFAULT_DOF_BUDGET,
    DisorderModel,
    ModelError,
    SubstitutionModel,
    TruncatedStrip,
    VerticalOperator,
    build_truncated_strip,
    sample_potentials,
)

__all__ = [
    "StripHamiltonian",
    "DosHistogram",
    "ComparisonTable",
    "assemble",
    "green_at_root",
    "recursion_green",
    "eigenvalue_histogram",
    "count_below",
    "dos_vs_green",
    "DENSE_BUDGET",
]

DENSE_BUDGET = 8000
ETA_SMOOTH = 0.05


@dataclass(frozen=True)
class StripHamiltonian:
    strip: TruncatedStrip
    vertical: VerticalOperator
    lam: float
    potentials: np.ndarray  # (n_vertices, m, m) real symmetric
    matrix: sp.csr_matrix

    @property
    def dof(self) -> int:
        return self.matrix.shape[0]

    def diagonal_blocks(self) -> np.ndarray:
        return self.vertical.A[None] + self.lam * self.potentials

    def levels(self) -> list[np.ndarray]:
        depths = np.asarray(self.strip.depths)
        return [np.flatnonzero(depths == d) for d in range(self.strip.depth + 1)]


def assemble(strip: TruncatedStrip, vertical: VerticalOperator, lam: float = 0.0,
             disorder: DisorderModel | None = None, seed: int = 0,
             dof_budget: int = DEFAULT_DOF_BUDGET) -> StripHamiltonian:
    """Sparse Hamiltonian of a truncated strip with a recorded potential realization."""
    if strip.dof_count > dof_budget:
        raise ModelError(f"{strip.dof_count} degrees of freedom exceed the budget {dof_budget}")
    m = vertical.m
    if strip.m != m:
        raise ModelError("strip width does not match the vertical operator")
    n = strip.vertex_count
    if disorder is None or disorder.kind == "none" or lam == 0:
        V = np.zeros((n, m, m))
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 7])))
        V = sample_potentials(disorder, rng, n)
    blocks = vertical.A[None] + lam * V
    j, k = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    base = (np.arange(n) * m)[:, None, None]
    rows = [(base + j).ravel()]
    cols = [(base + k).ravel()]
    vals = [blocks.ravel()]
    parents = np.asarray([-1 if p is None else p for p in strip.parents])
    child = np.flatnonzero(parents >= 0)
    if child.size:
        par = parents[child]
        orb = np.arange(m)
        r = (par[:, None] * m + orb).ravel()
        c = (child[:, None] * m + orb).ravel()
        rows += [r, c]
        cols += [c, r]
        vals += [np.ones(r.size), np.ones(r.size)]
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * m, n * m)).tocsr()
    H.sum_duplicates()
    return StripHamiltonian(strip, vertical, float(lam), V, H)


def green_at_root(H: StripHamiltonian, z: SpectralPoint | complex) -> np.ndarray:
    """Root block of ``(H - z)^{-1}`` by sparse LU with one refinement step."""
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    if not z.imag > 0:
        raise ValueError("green_at_root needs Im z > 0")
    m = H.vertical.m
    M = (H.matrix.astype(complex) - z * sp.identity(H.dof, dtype=complex, format="csr")).tocsc()
    lu = spla.splu(M)
    b = np.zeros((H.dof, m), dtype=complex)
    b[np.arange(m), np.arange(m)] = 1.0
    u = lu.solve(b)
    u += lu.solve(b - M @ u)
    return u[:m, :m]


def recursion_green(H: StripHamiltonian, z: SpectralPoint | complex) -> np.ndarray:
    """Root Green's matrix by the leaf-up recursion on the same realization.

    ``G_x = -(z - A - lam V_x + sum_children G_c)^{-1}``, starting at the
    deepest level with no children.
    """
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    m = H.vertical.m
    n = H.strip.vertex_count
    parents = np.asarray([-1 if p is None else p for p in H.strip.parents])
    acc = np.zeros((n, m, m), dtype=complex)
    G = np.empty((n, m, m), dtype=complex)
    blocks = H.diagonal_blocks()
    for lvl in reversed(H.levels()):
        M = z * np.eye(m) - blocks[lvl] + acc[lvl]
        G[lvl] = -np.linalg.inv(M)
        par = parents[lvl]
        keep = par >= 0
        np.add.at(acc, par[keep], G[lvl][keep])
    return G[0]


def count_below(H: StripHamiltonian, sigma: float) -> int:
    """Number of eigenvalues ``< sigma`` by tree elimination and Sylvester inertia."""
    m = H.vertical.m
    n = H.strip.vertex_count
    parents = np.asarray([-1 if p is None else p for p in H.strip.parents])
    blocks = H.diagonal_blocks()
    acc = np.zeros((n, m, m))
    count = 0
    for lvl in reversed(H.levels()):
        D = blocks[lvl] - sigma * np.eye(m) - acc[lvl]
        w = np.linalg.eigvalsh(D)
        if np.any(np.abs(w) < 1e-13 * (1 + abs(sigma))):
            # sigma sits on an eigenvalue of a sub-block; nudge it
            return count_below(H, np.nextafter(sigma, -np.inf) - 1e-12 * (1 + abs(sigma)))
        count += int(np.count_nonzero(w < 0))
        par = parents[lvl]
        keep = par >= 0
        np.add.at(acc, par[keep], np.linalg.inv(D[keep]))
    return count


@dataclass(frozen=True)
class DosHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    m: int
    dof_count: int
    mode: str

    @property
    def normalization(self) -> np.ndarray:
        return self.counts / self.dof_count

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "density"])
        width = np.diff(self.bin_edges)
        for lo, hi, c, wd in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts, width):
            w.writerow([f"{lo:.10g}", f"{hi:.10g}", int(c), f"{c / self.dof_count / wd:.10g}"])
        return buf.getvalue()


def gershgorin_bound(H: StripHamiltonian) -> float:
    return float(np.max(np.abs(H.matrix).sum(axis=1)))


def eigenvalue_histogram(H: StripHamiltonian, bins: int | np.ndarray = 100, slicing: bool = False,
                         dense_budget: int = DENSE_BUDGET) -> DosHistogram:
    """Histogram of all eigenvalues of the finite Hamiltonian.

    Dense diagonalization up to ``dense_budget`` degrees of freedom; above it
    ``slicing=True`` counts eigenvalues per bin by inertia instead.
    """
    if np.ndim(bins) == 0:
        r = gershgorin_bound(H) + 1.0
        edges = np.linspace(-r, r, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    if H.dof <= dense_budget:
        ev = np.linalg.eigvalsh(H.matrix.toarray())
        if ev[0] < edges[0] or ev[-1] > edges[-1]:
            raise ValueError("bin edges do not cover the spectrum")
        counts, _ = np.histogram(ev, edges)
        mode = "dense"
    elif slicing:
        # the top edge is closed, as in the dense branch
        tops = list(edges[:-1]) + [np.nextafter(edges[-1], np.inf)]
        below = np.array([count_below(H, e) for e in tops])
        if below[0] != 0 or below[-1] != H.dof:
            raise ValueError("bin edges do not cover the spectrum")
        counts = np.diff(below)
        mode = "slicing"
    else:
        raise ValueError(f"{H.dof} degrees of freedom exceed the dense budget {dense_budget}; enable slicing")
    return DosHistogram(edges, counts.astype(int), H.vertical.m, H.dof, mode)


@dataclass(frozen=True)
class ComparisonTable:
    energies: np.ndarray
    reference: np.ndarray  # (1/pi) Im Tr A_{E + i eta}
    finite_volume: np.ndarray
    eta_smooth: float
    depth: int
    method: str

    @property
    def diff(self) -> np.ndarray:
        return self.finite_volume - self.reference

    @property
    def sup_difference(self) -> float:
        return float(np.max(np.abs(self.diff))) if self.diff.size else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "im_gamma_over_pi", "finite_volume_density", "diff"])
        for E, r, f, d in zip(self.energies, self.reference, self.finite_volume, self.diff):
            w.writerow([f"{E:.10g}", f"{r:.10g}", f"{f:.10g}", f"{d:.10g}"])
        return buf.getvalue()


def dos_vs_green(model: SubstitutionModel, vertical: VerticalOperator | None, grid: EnergyGrid, depth: int,
                 eta_smooth: float = ETA_SMOOTH, root_label: int = 0, method: str = "auto",
                 dense_budget: int = DENSE_BUDGET) -> ComparisonTable:
    """Lorentzian-smoothed finite-volume root density against ``(1/pi) Im Tr`` of the free Green's matrix.

    ``method="eigen"`` bins root weights ``sum_j |<root, j|v>|^2`` with the
    Lorentzian kernel, ``method="resolvent"`` evaluates ``Im Tr G_root(E + i eta)``
    directly; both give the same function. ``auto`` picks ``eigen`` when the
    truncation fits the dense budget.
    """
    vertical = VerticalOperator.zero(1) if vertical is None else vertical
    strip = build_truncated_strip(model, vertical, root_label, depth)
    H = assemble(strip, vertical, 0.0)
    E = grid.energies
    if method == "auto":
        method = "eigen" if H.dof <= dense_budget else "resolvent"
    if method == "eigen":
        ev, vec = np.linalg.eigh(H.matrix.toarray())
        w = (np.abs(vec[: vertical.m]) ** 2).sum(axis=0)
        fv = (w[None] * (eta_smooth / np.pi) / ((E[:, None] - ev[None]) ** 2 + eta_smooth ** 2)).sum(axis=1)
    elif method == "resolvent":
        fv = np.array([np.trace(recursion_green(H, e + 1j * eta_smooth)).imag / np.pi for e in E])
    else:
        raise ValueError(f"unknown method {method!r}")
    a = vertical.eigenvalues
    shifted = (E[:, None] + 1j * eta_smooth - a[None]).ravel()
    g, _, ok = solve_free_batch(model, shifted)
    if not ok.all():
        raise RuntimeError("free solve failed on the comparison grid")
    ref = g[:, root_label].reshape(len(E), len(a)).imag.sum(axis=1) / np.pi
    return ComparisonTable(E, ref, fv, eta_smooth, depth, method)

"""Free (lambda = 0) root Green's functions of substitution trees.

For ``Im z > 0`` the root Green's functions ``Gamma^(p)_z`` of the adjacency
operator are the unique solution with positive imaginary parts of

    Gamma^(p) * (z + sum_q S[p, q] Gamma^(q)) + 1 = 0,   p = 1..s.

Everything here is vectorised over a batch of spectral points: ``gamma`` arrays
have shape ``(N, s)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import SubstitutionModel, VerticalOperator

__all__ = [
    "SolverError",
    "SpectralPoint",
    "GreenVector",
    "BoundaryValue",
    "IntervalSet",
    "EnergyGrid",
    "SpectrumScan",
    "solve_free",
    "solve_free_batch",
    "residual",
    "eta_ladder",
    "boundary_value",
    "boundary_values",
    "compute_I_S",
    "default_energy_range",
    "scaling_check",
    "TOL_FP",
]

log = logging.getLogger(__name__)

TOL_FP = 1e-12
TOL_BV = 1e-7
EPS_IM = 1e-6
BOUND_CAP = 1e3
ETA_MIN = 1e-9
NEWTON_BASIN = 1e-4


class SolverError(RuntimeError):
    """Fixed-point solve did not converge; carries the last iterate."""

    def __init__(self, message, gamma=None, residual=None):
        super().__init__(message)
        self.gamma = gamma
        self.residual = residual


@dataclass(frozen=True)
class SpectralPoint:
    E: float
    eta: float = 0.0

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be non-negative")

    @property
    def z(self) -> complex:
        return complex(self.E, self.eta)

    @classmethod
    def from_complex(cls, z: complex) -> "SpectralPoint":
        return cls(float(np.real(z)), float(np.imag(z)))


@dataclass(frozen=True)
class GreenVector:
    z: SpectralPoint
    gamma: np.ndarray
    residual: float
    converged: bool


@dataclass(frozen=True)
class BoundaryValue:
    """Result of following ``Gamma_{E + i eta}`` down an eta ladder.

    ``exists`` is the Cauchy/boundedness verdict; ``robust`` is False when the
    last ladder differences shrink like ``sqrt(eta)`` (square-root branch point,
    i.e. a band edge) rather than linearly.
    """

    green: GreenVector
    exists: bool
    robust: bool
    last_difference: float
    difference_ratio: float
    eta_final: float

    @property
    def gamma(self) -> np.ndarray:
        return self.green.gamma


@dataclass(frozen=True)
class IntervalSet:
    intervals: tuple[tuple[float, float], ...]
    grid_resolution: float

    def __post_init__(self):
        ivs = tuple(sorted((float(lo), float(hi)) for lo, hi in self.intervals))
        for lo, hi in ivs:
            if not lo < hi:
                raise ValueError(f"empty interval ({lo}, {hi})")
        for (_, hi), (lo, _) in zip(ivs, ivs[1:]):
            if lo < hi:
                raise ValueError("intervals overlap")
        object.__setattr__(self, "intervals", ivs)

    def __contains__(self, E: float) -> bool:
        return any(lo < E < hi for lo, hi in self.intervals)

    def scaled(self, factor: float) -> "IntervalSet":
        return IntervalSet(tuple((lo * factor, hi * factor) for lo, hi in self.intervals),
                           self.grid_resolution * factor)

    def to_dict(self) -> dict:
        return {"intervals": [[lo, hi] for lo, hi in self.intervals], "grid_resolution": self.grid_resolution}


@dataclass(frozen=True)
class EnergyGrid:
    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("grid step must be positive")

    @property
    def energies(self) -> np.ndarray:
        if self.hi < self.lo:
            return np.empty(0)
        n = int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return self.lo + self.step * np.arange(n)

    @classmethod
    def parse(cls, text: str) -> "EnergyGrid":
        lo, hi, step = (float(x) for x in text.split(":"))
        return cls(lo, hi, step)


def _as_S(model) -> np.ndarray:
    if isinstance(model, SubstitutionModel):
        return model.S.astype(float)
    return np.asarray(model, dtype=float)


def residual(S: np.ndarray, z: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Per-point ``max_p |Gamma_p (z + (S Gamma)_p) + 1|``."""
    z = np.asarray(z)[..., None]
    return np.max(np.abs(gamma * (z + gamma @ S.T) + 1.0), axis=-1)


def _newton(S, z, gamma, tol, max_iter):
    """Batched damped Newton on the polynomial residual, keeping ``Im > 0``."""
    N, s = gamma.shape
    zc = z[:, None]
    eye = np.eye(s)
    res = residual(S, z, gamma)
    active = res >= tol
    for _ in range(max_iter):
        if not np.any(active):
            break
        g = gamma[active]
        zz = zc[active]
        lin = zz + g @ S.T
        F = g * lin + 1.0
        J = eye[None] * lin[:, :, None] + g[:, :, None] * S[None]
        try:
            step = np.linalg.solve(J, F[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J[0], F[0], rcond=None)[0][None] if len(g) == 1 else np.stack(
                [np.linalg.lstsq(Jk, Fk, rcond=None)[0] for Jk, Fk in zip(J, F)])
        r0 = np.max(np.abs(F), axis=-1)
        t = np.ones(len(g))
        new = g - step
        for _ in range(30):
            bad = (np.min(new.imag, axis=-1) <= 0) & (zz[:, 0].imag > 0)
            bad |= residual(S, zz[:, 0], new) > r0
            bad &= t > 1e-6
            if not np.any(bad):
                break
            t[bad] *= 0.5
            new[bad] = g[bad] - t[bad, None] * step[bad]
        gamma[active] = new
        res[active] = residual(S, zz[:, 0], new)
        active = res >= tol
    return gamma, res


def solve_free_batch(
    model,
    z: np.ndarray,
    warm_start: np.ndarray | None = None,
    tol: float = TOL_FP,
    max_iter: int = 2000,
    damping: float = 0.5,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve the self-consistency equations at every ``z`` of a batch.

    Returns ``(gamma, residual, converged)`` with ``gamma`` of shape ``(N, s)``.
    """
    S = _as_S(model)
    s = S.shape[0]
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.imag <= 0):
        raise ValueError("solve_free needs Im z > 0")
    N = z.shape[0]
    if warm_start is None:
        gamma = np.full((N, s), 1j, dtype=complex)
    else:
        gamma = np.array(np.broadcast_to(warm_start, (N, s)), dtype=complex)
        gamma.imag = np.abs(gamma.imag) + 1e-300
    res = residual(S, z, gamma)
    todo = res >= NEWTON_BASIN
    n_reflect = 0
    it = 0
    while np.any(todo) and it < max_iter:
        g = gamma[todo]
        upd = (1 - damping) * g + damping * (-1.0 / (z[todo, None] + g @ S.T))
        neg = upd.imag < 0
        if np.any(neg):
            n_reflect += int(np.count_nonzero(neg))
            upd.imag = np.abs(upd.imag)
        gamma[todo] = upd
        res[todo] = residual(S, z[todo], upd)
        todo = res >= NEWTON_BASIN
        it += 1
    if n_reflect:
        log.debug("reflected %d iterates back into the upper half plane", n_reflect)
    gamma, res = _newton(S, z, gamma, tol, max_iter=60)
    converged = (res < tol) & np.all(gamma.imag > 0, axis=-1) & np.all(np.isfinite(gamma), axis=-1)
    return gamma, res, converged


def solve_free(
    model,
    z: SpectralPoint | complex,
    warm_start: GreenVector | np.ndarray | None = None,
    tol: float = TOL_FP,
    max_iter: int = 2000,
) -> GreenVector:
    """Unique Herglotz solution ``Gamma^(1..s)_z`` for ``Im z > 0``.

    Raises
    ------
    SolverError
        If the residual does not fall below ``tol``; the exception carries the
        last iterate and residual.
    """
    point = z if isinstance(z, SpectralPoint) else SpectralPoint.from_complex(z)
    if not point.eta > 0:
        raise ValueError("solve_free needs eta > 0")
    warm = warm_start.gamma if isinstance(warm_start, GreenVector) else warm_start
    gamma, res, ok = solve_free_batch(model, np.array([point.z]), warm, tol=tol, max_iter=max_iter)
    if not ok[0]:
        raise SolverError(f"no convergence at z={point.z}: residual {res[0]:.3e}", gamma[0], float(res[0]))
    return GreenVector(point, gamma[0], float(res[0]), True)


def eta_ladder(start: float = 1.0, ratio: float = 0.5, eta_min: float = ETA_MIN) -> np.ndarray:
    """Geometric ladder ``start, start*ratio, ...`` ending at the first value ``<= eta_min``."""
    if not (0 < ratio < 1 and start > 0 and eta_min > 0):
        raise ValueError("need start > 0, 0 < ratio < 1 and eta_min > 0")
    n = max(int(math.ceil(math.log(eta_min / start) / math.log(ratio) - 1e-12)), 0) + 1
    return start * ratio ** np.arange(n)


def boundary_values(
    model,
    energies: np.ndarray,
    ladder: np.ndarray | None = None,
    tol_bv: float = TOL_BV,
    bound_cap: float = BOUND_CAP,
) -> dict[str, np.ndarray]:
    """Follow every energy of a batch down the ladder with warm starts.

    Returns arrays ``gamma (N, s)``, ``residual``, ``exists``, ``robust``,
    ``last_difference``, ``difference_ratio`` and the final ``eta``.
    """
    S = _as_S(model)
    E = np.atleast_1d(np.asarray(energies, dtype=float))
    ladder = eta_ladder() if ladder is None else np.asarray(ladder, dtype=float)
    if np.any(np.diff(ladder) >= 0) or ladder[-1] <= 0:
        raise ValueError("eta ladder must be strictly decreasing and positive")
    N, s = E.shape[0], S.shape[0]
    gamma = None
    diffs = []
    solved_ok = np.ones(N, dtype=bool)
    for eta in ladder:
        new, res, ok = solve_free_batch(S, E + 1j * eta, warm_start=gamma)
        solved_ok &= ok
        if gamma is not None:
            diffs.append(np.max(np.abs(new - gamma), axis=-1))
        gamma = new
    if gamma is None:
        gamma = np.empty((0, s), dtype=complex)
    last = diffs[-1] if diffs else np.full(N, np.inf)
    prev = diffs[-2] if len(diffs) > 1 else np.full(N, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(prev > 0, last / prev, 0.0)
    bounded = np.all(np.abs(gamma) < bound_cap, axis=-1)
    exists = (last < tol_bv) & bounded & solved_ok
    # analytic points shrink by ~ladder ratio per rung, square-root points by ~sqrt(ratio)
    r = ladder[1] / ladder[0] if len(ladder) > 1 else 0.5
    robust = exists & ((ratio < 0.5 * (r + math.sqrt(r))) | (last < 1e-12))
    return {
        "gamma": gamma,
        "residual": residual(S, E + 1j * ladder[-1], gamma) if N else np.empty(0),
        "exists": exists,
        "robust": robust,
        "last_difference": last,
        "difference_ratio": ratio,
        "eta": float(ladder[-1]),
    }


def boundary_value(model, E: float, ladder: np.ndarray | None = None,
                   tol_bv: float = TOL_BV, bound_cap: float = BOUND_CAP) -> BoundaryValue:
    """Boundary value ``Gamma_E = lim_{eta -> 0} Gamma_{E + i eta}`` at one energy."""
    out = boundary_values(model, np.array([E]), ladder, tol_bv, bound_cap)
    point = SpectralPoint(float(E), out["eta"])
    gv = GreenVector(point, out["gamma"][0], float(out["residual"][0]), bool(out["residual"][0] < TOL_FP))
    return BoundaryValue(gv, bool(out["exists"][0]), bool(out["robust"][0]),
                         float(out["last_difference"][0]), float(out["difference_ratio"][0]), out["eta"])


def default_energy_range(model, vertical: VerticalOperator | None = None) -> tuple[float, float]:
    S = _as_S(model)
    half = 2.0 * math.sqrt(float(S.sum(axis=1).max())) + (vertical.norm if vertical else 0.0) + 1.0
    return -half, half


@dataclass
class SpectrumScan:
    """Per-grid-point boundary values and the resulting interval set ``I_S``."""

    energies: np.ndarray
    gamma: np.ndarray
    exists: np.ndarray
    robust: np.ndarray
    status: np.ndarray  # "in" | "out" | "indeterminate"
    eta_final: float
    intervals: IntervalSet = field(default=None)

    @property
    def in_I_S(self) -> np.ndarray:
        return self.status == "in"


def _merge_cells(energies: np.ndarray, mask: np.ndarray, step: float) -> IntervalSet:
    ivs = []
    i, n = 0, len(energies)
    while i < n:
        if not mask[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and mask[j + 1]:
            j += 1
        ivs.append((energies[i] - step / 2, energies[j] + step / 2))
        i = j + 1
    return IntervalSet(tuple(ivs), step)


def compute_I_S(model, grid: EnergyGrid | None = None, ladder: np.ndarray | None = None,
                eps_im: float = EPS_IM, chunk: int = 4096) -> SpectrumScan:
    """Scan a uniform energy grid and return the cells in ``I_S``.

    A cell is in ``I_S`` when the boundary value exists and every label has
    ``Im Gamma > eps_im``; cells without a boundary value are indeterminate.
    """
    if grid is None:
        lo, hi = default_energy_range(model)
        grid = EnergyGrid(lo, hi, 1e-3)
    E = grid.energies
    s = _as_S(model).shape[0]
    gamma = np.empty((len(E), s), dtype=complex)
    exists = np.zeros(len(E), dtype=bool)
    robust = np.zeros(len(E), dtype=bool)
    eta_final = float((eta_ladder() if ladder is None else ladder)[-1])
    for start in range(0, len(E), chunk):
        sl = slice(start, start + chunk)
        out = boundary_values(model, E[sl], ladder)
        gamma[sl], exists[sl], robust[sl] = out["gamma"], out["exists"], out["robust"]
        eta_final = out["eta"]
    inside = exists & (np.min(gamma.imag, axis=-1, initial=np.inf) > eps_im)
    status = np.where(inside, "in", np.where(exists, "out", "indeterminate"))
    return SpectrumScan(E, gamma, exists, robust, status, eta_final, _merge_cells(E, inside, grid.step))


def scaling_check(model: SubstitutionModel, b: int, z: SpectralPoint | complex) -> float:
    """``max_q |Gamma^(q)_{sqrt(b) z}(bS) - Gamma^(q)_z(S) / sqrt(b)|``."""
    point = z if isinstance(z, SpectralPoint) else SpectralPoint.from_complex(z)
    if b == 1:
        return 0.0
    base = solve_free(model, point).gamma
    scaled = solve_free(model.scaled(b), point.z * math.sqrt(b)).gamma
    return float(np.max(np.abs(scaled - base / math.sqrt(b))))

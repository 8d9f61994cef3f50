"""Population dynamics for the random matrix Green's-function recursion.

One pool of ``N_pool`` complex symmetric ``m x m`` matrices is kept per label.
A generation rebuilds every pool from the previous one:

    G_new = -(z I - lam V - A + sum of S[p, q] samples drawn from pool q)^{-1}

with ``V`` drawn from the disorder law. Random numbers come from streams keyed
by ``(seed, label, generation, block)`` over fixed-size sample blocks, so a run
is bit-identical for any number of workers.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .free_green import SpectralPoint, eta_ladder, solve_free_batch, boundary_values
from .model import DisorderModel, SubstitutionModel, VerticalOperator, sample_potentials

__all__ = [
    "PoolError",
    "Pool",
    "MomentEstimate",
    "AcIndicator",
    "PopulationDynamics",
    "pool_init",
    "pool_step",
    "estimate_moments",
    "ac_indicator",
    "estimate_zeta",
    "estimate_xi",
    "free_matrices",
    "fixed_point_residual",
    "free_fixed_point_residual",
]

log = logging.getLogger(__name__)

BLOCK = 1024
COND_MAX = 1e12
DOMAIN_TAGS = {"init": 0, "step": 1, "resample": 2}


class PoolError(RuntimeError):
    pass


@dataclass(frozen=True)
class Pool:
    label: int
    samples: np.ndarray  # (N_pool, m, m) complex
    z: SpectralPoint
    generation: int

    @property
    def size(self) -> int:
        return self.samples.shape[0]


def _stream(seed: int, tag: str, label: int, generation: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), DOMAIN_TAGS[tag], int(label), int(generation), int(block)])
    return np.random.Generator(np.random.Philox(ss))


def _vertical(vertical, m_default: int = 1) -> VerticalOperator:
    if vertical is None:
        return VerticalOperator.zero(m_default)
    if isinstance(vertical, VerticalOperator):
        return vertical
    return VerticalOperator(np.asarray(vertical, dtype=float))


def pool_init(model: SubstitutionModel, vertical, disorder: DisorderModel | None, lam: float,
              z: SpectralPoint | complex, N_pool: int, seed: int) -> list[Pool]:
    """Pools filled with the leaf value ``G_0 = -(z I - A)^{-1}``."""
    point = z if isinstance(z, SpectralPoint) else SpectralPoint.from_complex(z)
    if not point.eta > 0:
        raise ValueError("pools need eta > 0")
    if N_pool < 1:
        raise ValueError("N_pool must be positive")
    vertical = _vertical(vertical)
    m = vertical.m
    G0 = -np.linalg.inv(point.z * np.eye(m) - vertical.A)
    G0 = 0.5 * (G0 + G0.T)
    return [Pool(q, np.broadcast_to(G0, (N_pool, m, m)).copy(), point, 0) for q in range(model.s)]


def _build_block(p, start, stop, pools, S, A, disorder, lam, z, seed, generation):
    rng = _stream(seed, "step", p, generation, start // BLOCK)
    B = stop - start
    m = A.shape[0]
    M = z * np.eye(m) - A
    M = np.broadcast_to(M, (B, m, m)).copy()
    if lam != 0 and disorder is not None and disorder.kind != "none":
        M -= lam * sample_potentials(disorder, rng, B)
    for q, pool in enumerate(pools):
        k = int(S[p, q])
        if k:
            idx = rng.integers(0, pool.size, size=(B, k))
            M += pool.samples[idx].sum(axis=1)
    G = _safe_inverse(M, p, start, pools, S, A, disorder, lam, z, seed, generation)
    return -0.5 * (G + np.swapaxes(G, -1, -2))


def _condition(M: np.ndarray, Minv: np.ndarray) -> np.ndarray:
    return np.linalg.norm(M, axis=(-2, -1)) * np.linalg.norm(Minv, axis=(-2, -1))


def _safe_inverse(M, p, start, pools, S, A, disorder, lam, z, seed, generation):
    with np.errstate(all="ignore"):
        try:
            Minv = np.linalg.inv(M)
        except np.linalg.LinAlgError:
            Minv = np.stack([np.linalg.pinv(x) for x in M])
        cond = _condition(M, Minv)
    bad = ~(cond < COND_MAX)
    if not np.any(bad):
        return Minv
    # resample offending draws once from a dedicated stream
    rng = _stream(seed, "resample", p, generation, start // BLOCK)
    m = A.shape[0]
    for i in np.flatnonzero(bad):
        Mi = z * np.eye(m) - A
        if lam != 0 and disorder is not None and disorder.kind != "none":
            Mi = Mi - lam * sample_potentials(disorder, rng, 1)[0]
        for q, pool in enumerate(pools):
            k = int(S[p, q])
            if k:
                Mi = Mi + pool.samples[rng.integers(0, pool.size, size=k)].sum(axis=0)
        Mi_inv = np.linalg.inv(Mi)
        c = float(_condition(Mi, Mi_inv))
        if not c < COND_MAX:
            raise PoolError(f"near-singular update for label {p + 1}, generation {generation}, "
                            f"sample {start + i}: condition estimate {c:.3e}")
        Minv[i] = Mi_inv
    return Minv


def pool_step(pools: Sequence[Pool], model: SubstitutionModel, vertical, disorder: DisorderModel | None,
              lam: float, seed: int, workers: int = 1, check_fraction: float = 0.01) -> list[Pool]:
    """One synchronous generation for every label."""
    vertical = _vertical(vertical, pools[0].samples.shape[-1])
    S = model.S
    A = vertical.A
    z = pools[0].z.z
    generation = pools[0].generation + 1
    jobs = []
    for p, pool in enumerate(pools):
        n = pool.size
        for start in range(0, n, BLOCK):
            jobs.append((p, start, min(start + BLOCK, n)))
    run = lambda job: _build_block(job[0], job[1], job[2], pools, S, A, disorder, lam, z, seed, generation)
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            blocks = list(ex.map(run, jobs))
    else:
        blocks = [run(j) for j in jobs]
    out = []
    for p, pool in enumerate(pools):
        parts = [b for (q, _, _), b in zip(jobs, blocks) if q == p]
        samples = np.concatenate(parts, axis=0)
        _herglotz_spot_check(samples, pool.z.eta, check_fraction, p, generation)
        out.append(Pool(p, samples, pool.z, generation))
    return out


def _herglotz_spot_check(samples, eta, fraction, label, generation):
    if eta <= 0 or fraction <= 0:
        return
    step = max(1, int(round(1 / fraction)))
    sub = samples[::step]
    im = (sub - sub.conj()) / 2j
    im = 0.5 * (im + np.swapaxes(im, -1, -2)).real
    low = np.linalg.eigvalsh(im)[:, 0]
    if np.any(low <= 0):
        log.warning("label %d generation %d: %d sampled Green's matrices lost positive imaginary part",
                    label + 1, generation, int(np.count_nonzero(low <= 0)))


@dataclass(frozen=True)
class MomentEstimate:
    mean_G: np.ndarray
    second_moment: np.ndarray
    trace_second: float
    stderr_mean: np.ndarray | None
    stderr_second: np.ndarray | None
    stderr_trace: float | None
    n_samples: int
    n_blocks: int

    def to_dict(self) -> dict:
        c = lambda a: None if a is None else [[[float(v.real), float(v.imag)] for v in r] for r in np.atleast_2d(a)]
        r = lambda a: None if a is None else np.asarray(a, float).tolist()
        return {"mean_G": c(self.mean_G), "second_moment": r(self.second_moment),
                "trace_second": self.trace_second, "stderr_mean": r(self.stderr_mean),
                "stderr_second": r(self.stderr_second), "stderr_trace": self.stderr_trace,
                "n_samples": self.n_samples, "n_blocks": self.n_blocks}


def _jackknife(block_means: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Weighted mean and delete-one-block jackknife standard error (elementwise)."""
    total = weights.sum()
    axes = (slice(None),) + (None,) * (block_means.ndim - 1)
    mean = (block_means * weights[axes]).sum(axis=0) / total
    nb = len(weights)
    if nb < 2:
        return mean, None
    loo = (mean * total - block_means * weights[axes]) / (total - weights)[axes]
    dev = loo - loo.mean(axis=0)
    var = (nb - 1) / nb * (np.abs(dev) ** 2).sum(axis=0)
    return mean, np.sqrt(var)


def estimate_moments(pools: Pool | Sequence[Pool], n_blocks: int = 20) -> MomentEstimate:
    """Mean and entrywise second absolute moment with jackknife errors.

    A sequence of generation snapshots of one label uses generations as blocks;
    a single pool is split into ``n_blocks`` contiguous sample blocks.
    """
    snaps = [pools] if isinstance(pools, Pool) else list(pools)
    if len(snaps) > 1:
        blocks = [s.samples for s in snaps]
    else:
        x = snaps[0].samples
        blocks = [b for b in np.array_split(x, min(n_blocks, x.shape[0])) if len(b)]
    w = np.array([len(b) for b in blocks], dtype=float)
    g = np.stack([b.mean(axis=0) for b in blocks])
    g2 = np.stack([(np.abs(b) ** 2).mean(axis=0) for b in blocks])
    mean, se = _jackknife(g, w)
    sec, se2 = _jackknife(g2, w)
    tr, setr = _jackknife(g2.sum(axis=(1, 2)), w)
    return MomentEstimate(mean, sec, float(tr), se, se2, None if setr is None else float(setr),
                          int(w.sum()), len(blocks))


def _quad(G: np.ndarray, phi: np.ndarray) -> np.ndarray:
    # Tr(G phi phi^T) = sum_c phi_c^T G phi_c for every sample
    return np.einsum("jc,njk,kc->n", phi, G, phi)


def _pool_average(values: np.ndarray) -> tuple[complex, float]:
    n = values.shape[0]
    mean = complex(values.mean())
    se = float(np.sqrt(np.var(values) / (n - 1))) if n > 1 else float("nan")
    return mean, se


def estimate_zeta(pool: Pool, phi_points: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Pool averages of ``exp((i/2) Tr(G phi phi^T))`` with standard errors."""
    vals, errs = [], []
    for phi in phi_points:
        phi = np.asarray(phi, dtype=float).reshape(pool.samples.shape[-1], -1)
        v, e = _pool_average(np.exp(0.5j * _quad(pool.samples, phi)))
        vals.append(v)
        errs.append(e)
    return np.array(vals), np.array(errs)


def estimate_xi(pool: Pool, phi_plus: Sequence[np.ndarray], phi_minus: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Pool averages of ``exp((i/2) Tr(G phi+ phi+^T - conj(G) phi- phi-^T))``."""
    m = pool.samples.shape[-1]
    vals, errs = [], []
    for pp, pm in zip(phi_plus, phi_minus):
        pp = np.asarray(pp, dtype=float).reshape(m, -1)
        pm = np.asarray(pm, dtype=float).reshape(m, -1)
        k = _quad(pool.samples, pp) - _quad(pool.samples.conj(), pm)
        v, e = _pool_average(np.exp(0.5j * k))
        vals.append(v)
        errs.append(e)
    return np.array(vals), np.array(errs)


@dataclass
class PopulationDynamics:
    """Convenience driver holding the problem and the current pools."""

    model: SubstitutionModel
    vertical: VerticalOperator
    disorder: DisorderModel | None
    lam: float
    N_pool: int = 10_000
    seed: int = 0
    workers: int = 1
    pools: list[Pool] = field(default_factory=list)

    def start(self, z) -> None:
        self.pools = pool_init(self.model, self.vertical, self.disorder, self.lam, z, self.N_pool, self.seed)

    def retarget(self, z) -> None:
        """Keep the samples as a warm start but move to a new spectral point."""
        point = z if isinstance(z, SpectralPoint) else SpectralPoint.from_complex(z)
        self.pools = [Pool(p.label, p.samples, point, p.generation) for p in self.pools]

    def step(self, n: int = 1) -> None:
        for _ in range(n):
            self.pools = pool_step(self.pools, self.model, self.vertical, self.disorder, self.lam,
                                   self.seed, self.workers)

    def burn_in(self, min_generations: int = 200, max_generations: int = 2000, window: int = 10) -> int:
        """Step until block means of ``Tr Im G`` over two windows agree within 2 stderr."""
        trace_im = []
        done = 0
        while done < max_generations:
            self.step()
            done += 1
            trace_im.append([float(np.trace(p.samples.imag, axis1=1, axis2=2).mean()) for p in self.pools])
            if done >= max(min_generations, 2 * window):
                a = np.array(trace_im[-2 * window:-window])
                b = np.array(trace_im[-window:])
                se = np.sqrt(a.var(axis=0) / window + b.var(axis=0) / window)
                if np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 2 * se + 1e-14):
                    break
        return done

    def measure(self, generations: int = 20) -> list[MomentEstimate]:
        history: list[list[Pool]] = [[] for _ in self.pools]
        for _ in range(generations):
            self.step()
            for h, p in zip(history, self.pools):
                h.append(p)
        return [estimate_moments(h) for h in history]


@dataclass(frozen=True)
class AcIndicator:
    """Heuristic absolute-continuity indicator; not a proof of anything."""

    E: float
    eta_ladder: np.ndarray
    trace_second_by_eta: np.ndarray  # (n_eta, s)
    stderr_by_eta: np.ndarray
    bounded: bool
    growth_ratio_max: float
    growth_cap: float
    tail: int

    def to_dict(self) -> dict:
        return {"E": self.E, "eta_ladder": self.eta_ladder.tolist(),
                "trace_second_by_eta": self.trace_second_by_eta.tolist(),
                "stderr_by_eta": self.stderr_by_eta.tolist(), "bounded": self.bounded,
                "growth_ratio_max": self.growth_ratio_max, "growth_cap": self.growth_cap, "tail": self.tail,
                "kind": "indicator"}


def ac_indicator(model: SubstitutionModel, vertical, disorder: DisorderModel | None, lam: float, E: float,
                 ladder: np.ndarray | None = None, N_pool: int = 10_000, seed: int = 0,
                 burn_in: int = 200, rung_burn_in: int = 100, measure: int = 20,
                 growth_cap: float = 2.0, tail: int = 4, workers: int = 1) -> AcIndicator:
    """Follow equilibrated pools down an eta ladder and watch ``sum_jk E|G_jk|^2``.

    ``bounded`` is true iff the trace grows by at most ``growth_cap`` between
    consecutive rungs among the last ``tail`` rungs, for every label.
    """
    ladder = eta_ladder(1e-1, 0.5, 1e-4) if ladder is None else np.asarray(ladder, dtype=float)
    if np.any(np.diff(ladder) >= 0):
        raise ValueError("eta ladder must be decreasing")
    vertical = _vertical(vertical)
    run = PopulationDynamics(model, vertical, disorder, lam, N_pool, seed, workers)
    traces, errs = [], []
    for k, eta in enumerate(ladder):
        z = SpectralPoint(float(E), float(eta))
        if k == 0:
            run.start(z)
            run.burn_in(burn_in)
        else:
            run.retarget(z)
            run.burn_in(rung_burn_in)
        est = run.measure(measure)
        traces.append([e.trace_second for e in est])
        errs.append([e.stderr_trace if e.stderr_trace is not None else np.nan for e in est])
    tr = np.array(traces)
    t = tr[-tail:] if tail else tr
    ratios = t[1:] / t[:-1] if len(t) > 1 else np.ones((1, tr.shape[1]))
    gmax = float(np.max(ratios))
    return AcIndicator(float(E), ladder, tr, np.array(errs), bool(gmax <= growth_cap), gmax, growth_cap, tail)


def free_matrices(model: SubstitutionModel, vertical, z: complex) -> list[np.ndarray]:
    """``A^(q)_z = O diag(Gamma^(q)_{z - a_j}) O^T`` for every label.

    For real ``z`` the boundary values are used.
    """
    vertical = _vertical(vertical)
    a = np.asarray(vertical.eigenvalues, dtype=float)
    O = vertical.diagonalizer
    z = complex(z)
    if z.imag > 0:
        g, res, ok = solve_free_batch(model, z - a)
        if not ok.all():
            raise RuntimeError(f"free solve failed at z={z}: residual {res.max():.3e}")
    else:
        out = boundary_values(model, z.real - a)
        if not out["exists"].all():
            raise RuntimeError(f"no boundary value at E={z.real}")
        g = out["gamma"]
    return [O @ np.diag(g[:, q]) @ O.T for q in range(g.shape[1])]


def fixed_point_residual(model: SubstitutionModel, vertical, z: complex, mats: Sequence[np.ndarray]) -> float:
    """``max_p ||A^(p) + (z I - A + sum_q S[p, q] A^(q))^{-1}||`` for given matrices."""
    vertical = _vertical(vertical)
    S = model.S
    m = vertical.m
    worst = 0.0
    for p in range(model.s):
        M = complex(z) * np.eye(m) - vertical.A + sum(S[p, q] * mats[q] for q in range(model.s))
        worst = max(worst, float(np.linalg.norm(mats[p] + np.linalg.inv(M), 2)))
    return worst


def free_fixed_point_residual(model: SubstitutionModel, vertical, z: complex) -> float:
    """Residual of the matrix fixed-point relation at zero disorder."""
    return fixed_point_residual(model, vertical, z, free_matrices(model, vertical, z))

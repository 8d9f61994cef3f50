"""Acceptance criteria 1-11, one recorded pass/fail line each.

Tolerances and runtime budgets are the pinned acceptance values; run with
``pytest tests/test_acceptance.py -v`` and read the "acceptance criteria"
section of the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from treestrip import disorder_mc as mc
from treestrip import free_green as fg
from treestrip import oracle, windows
from treestrip.model import DisorderModel, SubstitutionModel, VerticalOperator, build_truncated_strip
from treestrip.susy import run_suite

MODEL_SET = [np.array([[2]]), np.array([[2, 1], [2, 2]]), np.array([[4, 3], [2, 3]])]


def bethe_closed_form(E: np.ndarray, K: int) -> np.ndarray:
    return (-E + 1j * np.sqrt(4 * K - E ** 2)) / (2 * K)


def test_criterion_01_bethe_closed_form(report_criterion):
    t0 = time.perf_counter()
    worst_value, worst_edge = 0.0, 0.0
    step = 1e-3
    for K in (2, 3, 4):
        model = SubstitutionModel(np.array([[K]]))
        edge = 2 * math.sqrt(K)
        scan = fg.compute_I_S(model, fg.EnergyGrid(-edge - 0.5, edge + 0.5, step))
        inner = np.abs(scan.energies) < edge - 0.05
        assert scan.exists[inner].all()
        dev = np.abs(scan.gamma[inner, 0] - bethe_closed_form(scan.energies[inner], K))
        worst_value = max(worst_value, float(dev.max()))
        assert len(scan.intervals.intervals) == 1
        lo, hi = scan.intervals.intervals[0]
        worst_edge = max(worst_edge, abs(lo + edge), abs(hi - edge))
    elapsed = time.perf_counter() - t0
    ok = worst_value < 1e-8 and worst_edge <= step and elapsed < 10
    report_criterion(1, "Bethe closed form", ok,
                     f"max |dGamma|={worst_value:.2e} (<1e-8), endpoint err={worst_edge:.2e} (<=1e-3), {elapsed:.1f}s (<10s)")
    assert ok


def test_criterion_02_scaling_law(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for S in MODEL_SET:
        base = SubstitutionModel(S)
        for b in (2, 3):
            z = rng.uniform(-6, 6, 50) + 1j * rng.uniform(1e-3, 1, 50)
            g, _, ok = fg.solve_free_batch(base, z)
            gb, _, okb = fg.solve_free_batch(base.scaled(b), math.sqrt(b) * z)
            assert ok.all() and okb.all()
            worst = max(worst, float(np.abs(gb - g / math.sqrt(b)).max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and elapsed < 30
    report_criterion(2, "scaling law Gamma(bS)", ok, f"max deviation={worst:.2e} (<1e-8), {elapsed:.1f}s (<30s)")
    assert ok


def test_criterion_03_magnitude_bound(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, count = -np.inf, 0
    per_model = [167, 167, 166]
    for S, n in zip(MODEL_SET, per_model):
        model = SubstitutionModel(S)
        lo, hi = fg.default_energy_range(model)
        scan = fg.compute_I_S(model, fg.EnergyGrid(lo, hi, 1e-2))
        band = scan.energies[scan.in_I_S]
        E = rng.choice(band, size=n, replace=False)
        out = fg.boundary_values(model, E)
        assert out["exists"].all()
        bound = 1 / np.sqrt(np.diag(S).astype(float))
        worst = max(worst, float((np.abs(out["gamma"]) - bound[None]).max()))
        count += n
    elapsed = time.perf_counter() - t0
    ok = count == 500 and worst <= 1e-8 and elapsed < 30
    report_criterion(3, "|Gamma_q| <= 1/sqrt(S_qq)", ok,
                     f"{count} values, max excess={worst:.2e} (<=1e-8), {elapsed:.1f}s (<30s)")
    assert ok


def test_criterion_04_recursion_equals_solve(report_criterion):
    t0 = time.perf_counter()
    model = SubstitutionModel(np.array([[2, 1], [2, 2]]))
    vertical = VerticalOperator(np.diag([-0.5, 0.5]))
    disorder = DisorderModel("diagonal-iid", 2, "uniform", 1.0)
    worst = 0.0
    for lam in (0.0, 0.5):
        for depth in range(1, 7):
            strip = build_truncated_strip(model, vertical, 0, depth)
            H = oracle.assemble(strip, vertical, lam, disorder, seed=11)
            for z in (1j, 1 + 0.1j, -2 + 0.01j):
                worst = max(worst, float(np.abs(oracle.green_at_root(H, z) - oracle.recursion_green(H, z)).max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 60
    report_criterion(4, "recursion == sparse solve", ok, f"max entry deviation={worst:.2e} (<1e-9), {elapsed:.1f}s (<60s)")
    assert ok


def test_criterion_05_bethe_window(report_criterion):
    t0 = time.perf_counter()
    model = SubstitutionModel(np.array([[2]]))
    edge = 2 * math.sqrt(2)
    report = windows.compute_window(model, None, fg.EnergyGrid(-3.0, 3.0, 1e-3))
    interior = np.abs(report.energies) < edge - 0.05
    all_in = bool((report.status[interior] == "in").all())
    margin = windows.frechet_spectrum(model, None, 0.0).margin
    elapsed = time.perf_counter() - t0
    ok = all_in and abs(margin - 0.5) <= 1e-8 and elapsed < 20
    report_criterion(5, "Bethe window all in, Frechet margin 1/2", ok,
                     f"{int(interior.sum())} interior cells all in={all_in}, margin={margin:.10f} (0.5+-1e-8), {elapsed:.1f}s (<20s)")
    assert ok


def test_criterion_06_tail_certificate(report_criterion):
    t0 = time.perf_counter()
    model = SubstitutionModel(np.array([[2, 1], [2, 2]]))
    vertical = VerticalOperator(np.diag([-0.5, 0.5]))
    S = model.S.astype(float)
    K = int(np.min(np.diag(model.S)))
    report = windows.compute_window(model, vertical, fg.EnergyGrid(-4.0, 4.0, 1e-2))
    rng = np.random.default_rng(6)
    energies = rng.choice(report.energies[report.in_window], size=25, replace=False)
    min_det, max_ratio, n_pairs = np.inf, 0.0, 0
    for E in energies:
        diag = windows.shifted_diagonals(model, vertical, float(E))
        for left in range(3):
            for J in windows.multi_indices(2, left):
                for Jp in windows.multi_indices(2, 2 - left):
                    t = windows.theta(J, diag).diagonal * np.conj(windows.theta(Jp, diag).diagonal)
                    P = t[:, None] * S
                    min_det = min(min_det, abs(np.linalg.det(P - np.eye(2))))
                    max_ratio = max(max_ratio, np.linalg.norm(P, 2) / K ** (2 - J.order - Jp.order))
                    n_pairs += 1
    elapsed = time.perf_counter() - t0
    ok = min_det > 0 and max_ratio <= 1 and elapsed < 20
    report_criterion(6, "(S3) tail certificate at |J|+|J'|=2", ok,
                     f"{n_pairs} pairs at {len(energies)} energies, min|det|={min_det:.3f} (>0), "
                     f"max ||.||/K^(2-|J|-|J'|)={max_ratio:.4f} (<=1), {elapsed:.1f}s (<20s)")
    assert ok


def test_criterion_07_mc_collapse(report_criterion):
    t0 = time.perf_counter()
    cases = [(SubstitutionModel(MODEL_SET[0]), VerticalOperator.zero(1)),
             (SubstitutionModel(MODEL_SET[1]), VerticalOperator(np.diag([-0.5, 0.5]))),
             (SubstitutionModel(MODEL_SET[2]), VerticalOperator.zero(1))]
    worst_var, worst_dev = 0.0, 0.0
    for model, vertical in cases:
        for z in (0.5 + 0.8j, -1 + 1j, 0.3 + 0.6j):
            pools = mc.pool_init(model, vertical, None, 0.0, z, 512, seed=7)
            for _ in range(100):
                pools = mc.pool_step(pools, model, vertical, None, 0.0, seed=7)
            ref = mc.free_matrices(model, vertical, z)
            for p in pools:
                worst_var = max(worst_var, float(np.var(p.samples, axis=0).max()))
                worst_dev = max(worst_dev, float(np.abs(p.samples.mean(axis=0) - ref[p.label]).max()))
    elapsed = time.perf_counter() - t0
    ok = worst_var < 1e-18 and worst_dev < 1e-9 and elapsed < 60
    report_criterion(7, "lambda=0 pool collapse", ok,
                     f"max pool variance={worst_var:.2e} (<1e-18), max mean deviation={worst_dev:.2e} (<1e-9), "
                     f"100 generations, {elapsed:.1f}s (<60s)")
    assert ok


def test_criterion_08_free_fixed_point(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    cases = [(SubstitutionModel(MODEL_SET[0]), VerticalOperator.zero(1)),
             (SubstitutionModel(MODEL_SET[1]), VerticalOperator(np.array([[0.0, 1.0], [1.0, 0.0]]))),
             (SubstitutionModel(MODEL_SET[2]), VerticalOperator(np.diag([-0.5, 0.5])))]
    worst, n = 0.0, 0
    for k, (model, vertical) in enumerate(cases):
        count = 17 if k < 2 else 16
        for _ in range(count):
            z = complex(rng.uniform(-3, 3), rng.uniform(1e-3, 1))
            worst = max(worst, mc.free_fixed_point_residual(model, vertical, z))
            n += 1
    elapsed = time.perf_counter() - t0
    ok = n == 50 and worst < 1e-10 and elapsed < 10
    report_criterion(8, "lambda=0 matrix fixed-point residual", ok,
                     f"{n} points, max residual={worst:.2e} (<1e-10), {elapsed:.1f}s (<10s)")
    assert ok


@pytest.mark.slow
def test_criterion_09_ac_indicator(report_criterion):
    t0 = time.perf_counter()
    model = SubstitutionModel(np.array([[2, 1], [2, 2]]))
    disorder = DisorderModel("diagonal-iid", 1, "uniform", 1.0)
    results = [mc.ac_indicator(model, None, disorder, 0.1, 0.0, N_pool=10_000, seed=seed)
               for seed in (101, 202, 303)]
    elapsed = time.perf_counter() - t0
    verdicts = [r.bounded for r in results]
    growth = [r.growth_ratio_max for r in results]
    ladder = results[0].eta_ladder
    final = np.array([r.trace_second_by_eta[-1] for r in results])
    spread = float((final.max(axis=0) - final.min(axis=0)).max() / final.mean(axis=0).min())
    ok = (all(verdicts) and max(growth) <= 2.0 and ladder[0] == 1e-1 and ladder[-1] <= 1e-4
          and elapsed < 600)
    report_criterion(9, "a.c. indicator (indicator, not proof)", ok,
                     f"bounded={verdicts}, growth={[round(g, 4) for g in growth]} (<=2), "
                     f"last-rung relative spread={spread:.3f}, {elapsed:.0f}s (<600s)")
    assert ok


def test_criterion_10_susy_suite(report_criterion):
    t0 = time.perf_counter()
    records = run_suite(cases=10, seed=0)
    limits = {"flat_integral": 1e-10, "T_gaussian": 1e-9, "susy_gaussian_integral": 1e-10, "leibniz": 1e-12}
    worst = {name: max(r.residual for r in records if r.identity == name) for name in limits}
    sizes = sorted({(r.m, r.n) for r in records})
    elapsed = time.perf_counter() - t0
    ok = all(worst[k] < v for k, v in limits.items()) and sizes == [(1, 1), (2, 1), (2, 2)] and elapsed < 60
    detail = ", ".join(f"{k}={worst[k]:.1e} (<{limits[k]:.0e})" for k in limits)
    report_criterion(10, "supersymmetric identity suite", ok, f"{detail}, {elapsed:.1f}s (<60s)")
    assert ok


# frozen regression target for the smoothed finite-volume density
DOS_TARGET = 0.02


def test_criterion_11_dos_cross_check(report_criterion):
    t0 = time.perf_counter()
    table = oracle.dos_vs_green(SubstitutionModel(np.array([[2]])), None, fg.EnergyGrid(-2.0, 2.0, 0.01),
                                depth=12, eta_smooth=0.05)
    sup = table.sup_difference
    elapsed = time.perf_counter() - t0
    ok = sup < DOS_TARGET and elapsed < 120
    report_criterion(11, "DOS cross-check depth 12", ok,
                     f"sup difference={sup:.4f} (<{DOS_TARGET}), method={table.method}, {elapsed:.1f}s (<120s)")
    assert ok

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treestrip import disorder_mc as mc
from treestrip.free_green import solve_free
from treestrip.model import DisorderModel, SubstitutionModel, VerticalOperator

BETHE = SubstitutionModel(np.array([[2]]))
MIXED = SubstitutionModel(np.array([[2, 1], [2, 2]]))
UNIFORM1 = DisorderModel("diagonal-iid", 1, "uniform", 1.0)


def run(model, vertical, disorder, lam, z, n_pool, seed, generations, workers=1):
    pools = mc.pool_init(model, vertical, disorder, lam, z, n_pool, seed)
    for _ in range(generations):
        pools = mc.pool_step(pools, model, vertical, disorder, lam, seed, workers=workers)
    return pools


class TestInit:
    def test_scalar_leaf(self):
        pools = mc.pool_init(BETHE, None, None, 0.0, 1j, 5, 0)
        assert np.allclose(pools[0].samples, 1j)

    def test_matrix_leaf(self):
        pools = mc.pool_init(BETHE, VerticalOperator.diagonal([1.0, -1.0]), None, 0.0, 2j, 3, 0)
        expect = np.diag([-1 / (2j - 1), -1 / (2j + 1)])
        assert np.allclose(pools[0].samples, expect)

    def test_rejects_real_z(self):
        with pytest.raises(ValueError):
            mc.pool_init(BETHE, None, None, 0.0, 1.0, 5, 0)


class TestStep:
    def test_scalar_iteration(self):
        pools = mc.pool_init(BETHE, None, None, 0.0, 1j, 4, 0)
        pools = mc.pool_step(pools, BETHE, None, None, 0.0, 0)
        assert np.allclose(pools[0].samples, 1j / 3)
        pools = mc.pool_step(pools, BETHE, None, None, 0.0, 0)
        assert np.allclose(pools[0].samples, 3j / 5)
        pools = run(BETHE, None, None, 0.0, 1j, 4, 0, 80)
        assert np.allclose(pools[0].samples, 0.5j, atol=1e-12)

    def test_collapse_at_zero_disorder(self):
        pools = run(MIXED, VerticalOperator.diagonal([-0.5, 0.5]), None, 0.0, 0.2 + 0.7j, 300, 1, 50)
        assert max(np.var(p.samples, axis=0).max() for p in pools) < 1e-20

    def test_constant_shift_identity(self):
        c, lam = 0.7, 0.5
        d = DisorderModel("fixed-matrix-list", 1, matrices=(np.array([[c]]),))
        shifted = run(MIXED, None, d, lam, 0.3 + 0.6j, 64, 2, 60)
        free = run(MIXED, None, None, 0.0, 0.3 - lam * c + 0.6j, 64, 2, 60)
        for a, b in zip(shifted, free):
            assert np.allclose(a.samples, b.samples, atol=1e-12)

    def test_size_and_generation(self):
        pools = run(MIXED, None, UNIFORM1, 0.3, 0.1 + 0.2j, 100, 3, 3)
        assert all(p.size == 100 and p.generation == 3 for p in pools)

    def test_deterministic_and_worker_independent(self):
        a = run(MIXED, None, UNIFORM1, 0.5, 0.2j + 0.1, 3000, 9, 4, workers=1)
        b = run(MIXED, None, UNIFORM1, 0.5, 0.2j + 0.1, 3000, 9, 4, workers=4)
        for x, y in zip(a, b):
            assert np.array_equal(x.samples, y.samples)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.01, 1.0), st.floats(0, 3), st.integers(0, 2 ** 32))
    def test_herglotz_preserved(self, E, eta, lam, seed):
        d = DisorderModel("goe", 2, width=1.0)
        pools = run(MIXED, VerticalOperator(np.array([[0.0, 1.0], [1.0, 0.0]])), d, lam, complex(E, eta), 64, seed, 3)
        for p in pools:
            im = (p.samples - p.samples.conj()) / 2j
            assert np.all(np.linalg.eigvalsh(im.real)[:, 0] > 0)
            assert np.allclose(p.samples, np.swapaxes(p.samples, 1, 2))

    def test_singular_update_raises(self, monkeypatch):
        monkeypatch.setattr(mc, "COND_MAX", 0.5)
        pools = mc.pool_init(BETHE, None, None, 0.0, 1j, 4, 0)
        with pytest.raises(mc.PoolError):
            mc.pool_step(pools, BETHE, None, None, 0.0, 0)


class TestMoments:
    def test_zero_disorder_matches_free(self):
        z = 0.3 + 0.5j
        vertical = VerticalOperator.diagonal([-0.5, 0.5])
        pools = run(MIXED, vertical, None, 0.0, z, 200, 4, 120)
        ref = mc.free_matrices(MIXED, vertical, z)
        for p in pools:
            est = mc.estimate_moments(p)
            assert np.allclose(est.mean_G, ref[p.label], atol=1e-10)
            assert np.max(est.stderr_mean) < 1e-12

    def test_bethe_second_moment(self):
        pools = run(BETHE, None, None, 0.0, 1j, 50, 0, 80)
        est = mc.estimate_moments(pools[0])
        assert est.second_moment[0, 0] == pytest.approx(0.25, abs=1e-12)
        assert est.trace_second == pytest.approx(0.25, abs=1e-12)

    def test_single_sample_pool(self):
        pools = run(BETHE, None, UNIFORM1, 0.3, 1j, 1, 0, 5)
        est = mc.estimate_moments(pools[0])
        assert est.stderr_mean is None and est.stderr_trace is None
        assert est.mean_G.shape == (1, 1)

    def test_jensen_and_permutation_invariance(self):
        pools = run(MIXED, VerticalOperator.diagonal([0.0, 1.0]), DisorderModel("goe", 2, width=1.0), 1.0,
                    0.1 + 0.1j, 2000, 5, 30)
        p = pools[0]
        est = mc.estimate_moments(p)
        assert np.all(est.second_moment >= np.abs(est.mean_G) ** 2 - 3 * est.stderr_second)
        perm = np.random.default_rng(0).permutation(p.size)
        shuffled = mc.Pool(p.label, p.samples[perm], p.z, p.generation)
        est2 = mc.estimate_moments(shuffled, n_blocks=1)
        est1 = mc.estimate_moments(p, n_blocks=1)
        assert np.allclose(est1.mean_G, est2.mean_G, rtol=1e-13, atol=0)
        assert np.allclose(est1.second_moment, est2.second_moment, rtol=1e-13, atol=0)

    def test_generation_blocks(self):
        dyn = mc.PopulationDynamics(MIXED, VerticalOperator.zero(1), UNIFORM1, 0.2, N_pool=500, seed=6)
        dyn.start(0.5j)
        dyn.burn_in(30, 200)
        est = dyn.measure(8)
        assert len(est) == 2 and all(e.n_blocks == 8 and e.n_samples == 4000 for e in est)

    def test_small_lambda_continuity(self):
        z = 0.2 + 0.3j
        ref = mc.free_matrices(MIXED, None, z)[0][0, 0]
        devs, errs = [], []
        for lam in (0.2, 0.1, 0.05):
            dyn = mc.PopulationDynamics(MIXED, VerticalOperator.zero(1), UNIFORM1, lam, N_pool=4000, seed=10)
            dyn.start(z)
            dyn.burn_in(60, 300)
            est = dyn.measure(10)[0]
            devs.append(abs(est.mean_G[0, 0] - ref))
            errs.append(float(np.abs(est.stderr_mean).max()))
        for k in range(2):
            assert devs[k + 1] <= devs[k] + 3 * (errs[k] + errs[k + 1])


class TestCharacteristicEstimates:
    def test_zeta_at_zero(self):
        pools = run(MIXED, None, UNIFORM1, 0.5, 1j, 100, 0, 10)
        vals, _ = mc.estimate_zeta(pools[0], [np.zeros((1, 2))])
        assert vals[0] == 1

    def test_zeta_deterministic_value(self):
        pools = run(BETHE, None, None, 0.0, 1j, 10, 0, 80)
        phi = np.array([[1.0, 1.0]])
        vals, _ = mc.estimate_zeta(pools[0], [phi])
        assert vals[0] == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_zeta_gaussian_at_zero_disorder(self):
        z = -0.4 + 0.3j
        vertical = VerticalOperator.diagonal([-0.5, 0.5])
        pools = run(MIXED, vertical, None, 0.0, z, 100, 0, 400)
        ref = mc.free_matrices(MIXED, vertical, z)
        rng = np.random.default_rng(1)
        phis = [rng.normal(size=(2, 2)) for _ in range(20)]
        for p in pools:
            vals, errs = mc.estimate_zeta(p, phis)
            expect = np.array([np.exp(0.5j * np.trace(ref[p.label] @ f @ f.T)) for f in phis])
            assert np.all(np.abs(vals - expect) <= 3 * errs + 1e-12)

    def test_xi_reductions(self):
        pools = run(MIXED, None, UNIFORM1, 0.5, 0.1 + 0.2j, 500, 0, 20)
        rng = np.random.default_rng(2)
        phis = [rng.normal(size=(1, 2)) for _ in range(5)]
        zero = [np.zeros((1, 2))] * 5
        xi, _ = mc.estimate_xi(pools[0], zero, zero)
        assert np.all(xi == 1)
        xi, _ = mc.estimate_xi(pools[0], phis, zero)
        zeta, _ = mc.estimate_zeta(pools[0], phis)
        assert np.allclose(xi, zeta, rtol=1e-14)

    def test_xi_free_value(self):
        z = 0.3 + 0.4j
        pools = run(BETHE, None, None, 0.0, z, 10, 0, 100)
        G = solve_free(BETHE, z).gamma[0]
        pp, pm = np.array([[0.5, -1.0]]), np.array([[1.2, 0.3]])
        xi, _ = mc.estimate_xi(pools[0], [pp], [pm])
        expect = np.exp(0.5j * (G * (pp ** 2).sum() - np.conj(G) * (pm ** 2).sum()))
        assert xi[0] == pytest.approx(expect, abs=1e-12)


class TestFixedPoint:
    def test_bethe_split_orbitals(self):
        assert mc.free_fixed_point_residual(BETHE, VerticalOperator.diagonal([-1.0, 1.0]), 1j) < 1e-10

    def test_boundary_value_point(self):
        assert mc.free_fixed_point_residual(MIXED, VerticalOperator.diagonal([-0.5, 0.5]), 0.3) < 1e-7

    def test_sensitivity(self):
        vertical = VerticalOperator(np.array([[0.0, 1.0], [1.0, 0.0]]))
        mats = mc.free_matrices(MIXED, vertical, 0.4 + 0.5j)
        bumped = [mats[0] + 1e-3 * np.eye(2), mats[1]]
        assert mc.fixed_point_residual(MIXED, vertical, 0.4 + 0.5j, bumped) > 1e-4


class TestIndicator:
    def test_free_interior(self):
        ind = mc.ac_indicator(MIXED, None, None, 0.0, 0.0, N_pool=50, seed=0, burn_in=60, rung_burn_in=30,
                              measure=5)
        assert ind.bounded
        # relaxation takes O(1/eta) generations, so the short rungs only get close
        g = mc.free_matrices(MIXED, None, complex(0.0, ind.eta_ladder[-1]))
        assert ind.trace_second_by_eta[-1, 0] == pytest.approx(abs(g[0][0, 0]) ** 2, rel=1e-2)

    def test_free_outside_spectrum(self):
        ind = mc.ac_indicator(BETHE, None, None, 0.0, 3.5, N_pool=20, seed=0, burn_in=60, rung_burn_in=30, measure=5)
        assert ind.bounded

    def test_verdict_matches_growth(self):
        ind = mc.ac_indicator(MIXED, None, UNIFORM1, 0.1, 0.0, ladder=np.array([0.1, 0.05, 0.025]), N_pool=500,
                              seed=1, burn_in=50, rung_burn_in=20, measure=5)
        assert ind.bounded == (ind.growth_ratio_max <= ind.growth_cap)
        assert ind.to_dict()["kind"] == "indicator"

    @pytest.mark.slow
    def test_strong_disorder_grows(self):
        # exploratory diagnostic only: the large-coupling trace keeps growing as eta shrinks
        kw = dict(N_pool=3000, seed=5, burn_in=100, rung_burn_in=50, measure=10)
        weak = mc.ac_indicator(MIXED, None, UNIFORM1, 0.1, 0.0, **kw)
        strong = mc.ac_indicator(MIXED, None, UNIFORM1, 10.0, 0.0, **kw)
        grow = lambda ind: ind.trace_second_by_eta[-1].max() / ind.trace_second_by_eta[0].max()
        assert grow(weak) < 1.2 and grow(strong) > 10

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treestrip import disorder_mc as mc
from treestrip import oracle
from treestrip.free_green import EnergyGrid, solve_free
from treestrip.model import DisorderModel, ModelError, SubstitutionModel, VerticalOperator, build_truncated_strip

BETHE = SubstitutionModel(np.array([[2]]))
MIXED = SubstitutionModel(np.array([[2, 1], [2, 2]]))


def hamiltonian(model, vertical, depth, lam=0.0, disorder=None, seed=0, root=0):
    strip = build_truncated_strip(model, vertical, root, depth)
    return oracle.assemble(strip, vertical, lam, disorder, seed)


class TestAssemble:
    def test_star(self):
        H = hamiltonian(BETHE, VerticalOperator.zero(1), 1)
        assert H.matrix.toarray().tolist() == [[0, 1, 1], [1, 0, 0], [1, 0, 0]]

    def test_strip_blocks(self):
        A = np.array([[0.3, 1.0], [1.0, -0.2]])
        H = hamiltonian(MIXED, VerticalOperator(A), 1).matrix.toarray()
        assert H.shape == (8, 8)
        for v in range(4):
            assert np.array_equal(H[2 * v:2 * v + 2, 2 * v:2 * v + 2], A)
        for c in range(1, 4):
            assert np.array_equal(H[0:2, 2 * c:2 * c + 2], np.eye(2))
            assert np.array_equal(H[2 * c:2 * c + 2, 0:2], np.eye(2))
        # children are not coupled to each other
        assert not np.any(H[2:4, 4:8])

    def test_deterministic_and_recorded(self):
        d = DisorderModel("goe", 2, width=1.0)
        a = hamiltonian(MIXED, VerticalOperator.zero(2), 3, 1.0, d, seed=5)
        b = hamiltonian(MIXED, VerticalOperator.zero(2), 3, 1.0, d, seed=5)
        assert (a.matrix != b.matrix).nnz == 0
        assert np.allclose(a.diagonal_blocks(), a.potentials * 1.0)
        assert a.potentials.shape == (a.strip.vertex_count, 2, 2)

    def test_budget(self):
        strip = build_truncated_strip(BETHE, 1, 0, 10)
        with pytest.raises(ModelError):
            oracle.assemble(strip, VerticalOperator.zero(1), dof_budget=100)

    def test_symmetric(self):
        H = hamiltonian(MIXED, VerticalOperator(np.array([[0.0, 0.4], [0.4, 1.0]])), 4, 0.7,
                        DisorderModel("goe", 2, width=1.0), seed=1)
        assert abs(H.matrix - H.matrix.T).max() == 0


class TestGreen:
    def test_star_value(self):
        H = hamiltonian(BETHE, VerticalOperator.zero(1), 1)
        assert oracle.green_at_root(H, 1j)[0, 0] == pytest.approx(1j / 3, abs=1e-14)

    def test_rejects_real_z(self):
        H = hamiltonian(BETHE, VerticalOperator.zero(1), 1)
        with pytest.raises(ValueError):
            oracle.green_at_root(H, 1.0)

    def test_converges_to_free_value_off_axis(self):
        # far from the axis the truncation error contracts geometrically in depth
        H = hamiltonian(BETHE, VerticalOperator.zero(1), 14)
        z = 1 + 2j
        assert abs(oracle.recursion_green(H, z)[0, 0] - solve_free(BETHE, z).gamma[0]) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 6), st.floats(-3, 3), st.floats(1e-3, 2), st.floats(0, 2), st.integers(0, 2 ** 32),
           st.integers(0, 1))
    def test_recursion_equals_solve(self, depth, E, eta, lam, seed, root):
        vertical = VerticalOperator(np.array([[-0.5, 0.3], [0.3, 0.5]]))
        H = hamiltonian(MIXED, vertical, depth, lam, DisorderModel("goe", 2, width=1.0), seed, root)
        z = complex(E, eta)
        a = oracle.green_at_root(H, z)
        b = oracle.recursion_green(H, z)
        assert np.max(np.abs(a - b)) < 1e-9
        assert np.max(np.abs(a - a.T)) < 1e-12 * max(1.0, np.abs(a).max())
        im = (a - a.conj().T) / 2j
        assert np.linalg.eigvalsh(im)[0] > 0


class TestHistogram:
    def test_star_spectrum(self):
        H = hamiltonian(BETHE, VerticalOperator.zero(1), 1)
        hist = oracle.eigenvalue_histogram(H, np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]))
        assert hist.counts.tolist() == [1, 0, 1, 0, 1]
        assert hist.counts.sum() == H.dof

    def test_decoupled_copies(self):
        a = np.array([-0.7, 0.4])
        H2 = hamiltonian(MIXED, VerticalOperator.diagonal(a), 3)
        H1 = hamiltonian(MIXED, VerticalOperator.zero(1), 3)
        ev2 = np.linalg.eigvalsh(H2.matrix.toarray())
        ev1 = np.linalg.eigvalsh(H1.matrix.toarray())
        assert np.allclose(ev2, np.sort(np.concatenate([ev1 + a[0], ev1 + a[1]])), atol=1e-10)
        # edges offset from the degenerate tree eigenvalues
        edges = np.linspace(-6.0137, 6.0137, 41)
        h2 = oracle.eigenvalue_histogram(H2, edges).counts
        h_shift = np.histogram(ev1 + a[0], edges)[0] + np.histogram(ev1 + a[1], edges)[0]
        assert h2.tolist() == h_shift.tolist()

    def test_gershgorin_support(self):
        H = hamiltonian(MIXED, VerticalOperator(np.array([[0.0, 1.0], [1.0, 0.0]])), 4, 1.0,
                        DisorderModel("diagonal-iid", 2, "uniform", 1.0), seed=3)
        ev = np.linalg.eigvalsh(H.matrix.toarray())
        bound = MIXED.row_sums.max() + 1 + 1.0 * 1.0 + 1
        assert np.all(np.abs(ev) <= bound)
        hist = oracle.eigenvalue_histogram(H, 50)
        assert hist.counts.sum() == H.dof

    def test_slicing_matches_dense(self):
        H = hamiltonian(MIXED, VerticalOperator(np.array([[0.0, 0.5], [0.5, 0.3]])), 4, 0.8,
                        DisorderModel("goe", 2, width=1.0), seed=2)
        dense = oracle.eigenvalue_histogram(H, 30)
        sliced = oracle.eigenvalue_histogram(H, 30, slicing=True, dense_budget=10)
        assert sliced.mode == "slicing" and dense.mode == "dense"
        assert sliced.counts.tolist() == dense.counts.tolist()

    def test_budget_without_slicing(self):
        H = hamiltonian(BETHE, VerticalOperator.zero(1), 4)
        with pytest.raises(ValueError):
            oracle.eigenvalue_histogram(H, 10, dense_budget=5)

    def test_csv(self):
        H = hamiltonian(BETHE, VerticalOperator.zero(1), 1)
        lines = oracle.eigenvalue_histogram(H, 4).to_csv().splitlines()
        assert lines[0] == "bin_lo,bin_hi,count,density" and len(lines) == 5

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 5), st.floats(-4, 4), st.integers(0, 2 ** 32))
    def test_count_below_matches_dense(self, depth, sigma, seed):
        H = hamiltonian(MIXED, VerticalOperator.zero(1), depth, 1.0, DisorderModel("diagonal-iid", 1, "uniform", 1.0),
                        seed)
        ev = np.linalg.eigvalsh(H.matrix.toarray())
        if np.min(np.abs(ev - sigma)) > 1e-9:
            assert oracle.count_below(H, sigma) == int(np.count_nonzero(ev < sigma))


class TestDos:
    def test_closed_form_reference(self):
        table = oracle.dos_vs_green(BETHE, None, EnergyGrid(-2, 2, 0.5), depth=3)
        z = table.energies + 0.05j
        expect = ((-z + np.sqrt(z * z - 8 + 0j)) / 4)
        # choose the Herglotz branch
        expect = np.where(expect.imag > 0, expect, (-z - np.sqrt(z * z - 8 + 0j)) / 4)
        assert np.allclose(table.reference, expect.imag / np.pi, atol=1e-12)

    def test_routes_agree(self):
        grid = EnergyGrid(-3, 3, 0.1)
        a = oracle.dos_vs_green(MIXED, VerticalOperator.diagonal([-0.3, 0.3]), grid, 4, method="eigen")
        b = oracle.dos_vs_green(MIXED, VerticalOperator.diagonal([-0.3, 0.3]), grid, 4, method="resolvent")
        assert np.allclose(a.finite_volume, b.finite_volume, atol=1e-10)

    def test_outside_spectrum_small(self):
        table = oracle.dos_vs_green(BETHE, None, EnergyGrid(5, 6, 0.5), depth=6)
        assert np.all(table.reference < 0.01) and np.all(table.finite_volume < 0.01)

    def test_csv(self):
        table = oracle.dos_vs_green(BETHE, None, EnergyGrid(-1, 1, 0.5), depth=2)
        lines = table.to_csv().splitlines()
        assert lines[0] == "E,im_gamma_over_pi,finite_volume_density,diff" and len(lines) == 6

    def test_sup_difference_shrinks_with_depth(self):
        grid = EnergyGrid(-2, 2, 0.02)
        sups = [oracle.dos_vs_green(BETHE, None, grid, d, eta_smooth=0.5).sup_difference for d in (2, 6, 10)]
        assert sups[0] > sups[1] > sups[2]

    def test_density_positive_definite_in_window(self):
        # Monte Carlo mode: Im E(G) / pi at small coupling in the window
        vertical = VerticalOperator.diagonal([-0.5, 0.5])
        d = DisorderModel("diagonal-iid", 2, "uniform", 1.0)
        dyn = mc.PopulationDynamics(MIXED, vertical, d, 0.1, N_pool=2000, seed=3)
        dyn.start(0.2 + 0.01j)
        dyn.burn_in(100, 400)
        for est in dyn.measure(10):
            density = est.mean_G.imag / math.pi
            assert np.linalg.eigvalsh(0.5 * (density + density.T))[0] > 0

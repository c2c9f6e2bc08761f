import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chiralspec.fields import ConfigurationError, FourierField, standard_U
from chiralspec.lattice import SQRT3, DualIndex, MoireLattice
from chiralspec.operators import AssemblyConfig, assemble, chiral_hamiltonian
from chiralspec.spectral import (
    Disc,
    EigenCloud,
    PolygonRegion,
    SingularSpectrum,
    cluster_eigenvalues,
    count_in_region,
    count_small,
    eigenvalues,
    eigvec_regularity,
    magic_scan,
    band_floor,
    per_cell_counts,
    singular_values,
    smallest_singular_values,
    weyl_prediction,
)

LAT = MoireLattice()
U = standard_U(LAT)
ZERO_FIELD = FourierField({}, LAT)


def rand_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestSingularValues:
    def test_diagonal(self):
        s = singular_values(np.diag([3.0, -4.0j]))
        assert np.allclose(s.values, [3.0, 4.0])

    def test_inverse_reciprocal(self):
        rng = np.random.default_rng(0)
        A = rand_complex(rng, (6, 6)) + 3 * np.eye(6)
        t = singular_values(A).values
        s_inv = np.sort(np.linalg.svd(np.linalg.inv(A), compute_uv=False))[::-1]
        assert np.allclose(s_inv, 1.0 / t, rtol=1e-10)

    def test_adjoint_same_singular_values(self):
        rng = np.random.default_rng(1)
        A = rand_complex(rng, (8, 8))
        assert np.allclose(
            singular_values(A).values, singular_values(A.conj().T).values, rtol=1e-12
        )

    def test_weyl_perturbation_bound(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            A = rand_complex(rng, (7, 7))
            E = rand_complex(rng, (7, 7))
            tA = singular_values(A).values
            tAE = singular_values(A + E).values
            norm_E = singular_values(E).values[-1]
            assert np.all(np.abs(tAE - tA) <= norm_E + 1e-10)


class TestCountSmall:
    def test_below_t1(self):
        spec = SingularSpectrum(np.array([0.5, 1.0, 2.0]))
        assert count_small(spec, 0.4) == 0
        assert count_small(spec, 0.5) == 1
        assert count_small(spec, 5.0) == 3

    def test_negative_tau_rejected(self):
        with pytest.raises(ConfigurationError):
            count_small(SingularSpectrum(np.array([1.0])), -1.0)


class TestEigenvalues:
    def test_diagonal(self):
        d = np.array([1.0 + 2j, -0.5, 3j])
        cloud = eigenvalues(np.diag(d))
        assert np.allclose(np.sort_complex(cloud.values), np.sort_complex(d))

    def test_free_operator_exact(self):
        k = 0.2 + 0.1j
        op = assemble(AssemblyConfig(h=0.5, cutoff_radius=2.0, k=k), ZERO_FIELD)
        cloud = eigenvalues(op)
        expected = np.array([0.5 * (LAT.dual_point(m) + k) for m in op.modes] * 2)
        assert np.allclose(np.sort_complex(cloud.values), np.sort_complex(expected), atol=1e-12)


class TestRegions:
    def test_count_trivial_and_additive(self):
        rng = np.random.default_rng(3)
        cloud = EigenCloud(rand_complex(rng, 200))
        far = Disc(100.0 + 100.0j, 1.0)
        assert count_in_region(cloud, far) == 0
        left = PolygonRegion((-5 - 5j, 0 - 5j, 0 + 5j, -5 + 5j))
        right = PolygonRegion((0.000001 - 5j, 5 - 5j, 5 + 5j, 0.000001 + 5j))
        box = PolygonRegion((-5 - 5j, 5 - 5j, 5 + 5j, -5 + 5j))
        assert count_in_region(cloud, left) + count_in_region(cloud, right) == count_in_region(cloud, box)

    def test_boundary_counts_inside(self):
        cloud = EigenCloud(np.array([1.0 + 0j]))
        assert count_in_region(cloud, Disc(0.0, 1.0)) == 1
        assert count_in_region(cloud, PolygonRegion((1 + 0j, 2 + 1j, 2 - 1j))) == 1

    def test_polygon_area_positive_required(self):
        with pytest.raises(ConfigurationError):
            PolygonRegion((0j, 1 + 0j, 2 + 0j))


class TestPerCellCounts:
    def test_free_operator_two_per_cell(self):
        op = assemble(AssemblyConfig(h=0.5, cutoff_radius=4.0), ZERO_FIELD)
        cloud = eigenvalues(op)
        counts = per_cell_counts(cloud, 0.5, window=2)
        assert len(counts) == 25
        assert all(v == 2 for v in counts.values())

    def test_cells_sum_to_region_count(self):
        op = assemble(AssemblyConfig(h=0.5, cutoff_radius=4.0), ZERO_FIELD)
        cloud = eigenvalues(op)
        counts = per_cell_counts(cloud, 0.5, window=1)
        total = sum(counts.values())
        inside = sum(
            1
            for z in cloud.values
            if LAT.cell_of(z, 0.5) in counts
        )
        assert total == inside


class TestWeylPrediction:
    def test_zero_area(self):
        assert weyl_prediction(Disc(0.0, 0.0), 0.1) == 0.0

    def test_closed_form_value(self):
        # 2 * pi * |C/Gamma| / (2 pi h)^2 at r = 1, h = 0.1 equals 400 sqrt(3) pi
        val = weyl_prediction(Disc(0.3 + 0.1j, 1.0), 0.1)
        assert val == pytest.approx(400.0 * SQRT3 * math.pi, rel=1e-12)
        assert val == pytest.approx(2176.56, abs=0.01)

    def test_h_scaling_ratio(self):
        d = Disc(0.0, 0.7)
        assert weyl_prediction(d, 0.05) / weyl_prediction(d, 0.1) == pytest.approx(4.0)


class TestMagicScan:
    def test_free_operator_has_no_candidates(self):
        z0 = (LAT.eta1 + LAT.eta2) / 3
        res = magic_scan(np.linspace(0.4, 1.0, 7), z0, ZERO_FIELD, cutoff=3.0)
        assert res.candidates == ()
        # t1 = h * dist(z0, Gamma*) for the free operator
        for h, t1 in res.points:
            assert t1 == pytest.approx(h * abs(z0), rel=1e-9)

    @pytest.mark.slow
    def test_standard_U_finds_magic_candidates(self):
        z0 = (LAT.eta1 + LAT.eta2) / 3
        res = magic_scan(np.arange(0.35, 0.56, 0.025), z0, U, cutoff=8.0)
        assert len(res.candidates) >= 1
        assert min(abs(c - 0.4496) for c in res.candidates) < 5e-3


class TestBandFloor:
    def test_free_operator_touches_zero_on_dual_lattice(self):
        op_factory = lambda k: assemble(
            AssemblyConfig(h=0.5, cutoff_radius=2.0, k=k), ZERO_FIELD
        ).matrix
        ks = [0.0, -LAT.dual_point(DualIndex(1, 0))]
        assert band_floor(0.5, ks, op_factory) == pytest.approx(0.0, abs=1e-12)

    def test_perturbation_stability(self):
        rng = np.random.default_rng(4)
        A = rand_complex(rng, (30, 30))
        E = 0.01 * rand_complex(rng, (30, 30))
        bf_A = band_floor(0.5, [0], lambda k: A)
        bf_AE = band_floor(0.5, [0], lambda k: A + E)
        assert abs(bf_AE - bf_A) <= np.linalg.norm(E, 2) + 1e-12


class TestEigvecRegularity:
    def test_l2_level_flat(self):
        for h in (0.4, 0.2):
            op = assemble(AssemblyConfig(h=h, cutoff_radius=3.0, z=h * 0.1), U)
            ratio = eigvec_regularity(op, tau0=math.sqrt(h), s=-1.0, h=h, n_trials=5)
            assert ratio == pytest.approx(1.0, rel=1e-9)

    def test_componentwise_bounded(self):
        h = 0.4
        op = assemble(AssemblyConfig(h=h, cutoff_radius=3.0, z=h * 0.1), U)
        r = eigvec_regularity(
            op, tau0=math.sqrt(h), s=1.0, h=h, n_trials=5, componentwise=True
        )
        full = eigvec_regularity(op, tau0=math.sqrt(h), s=1.0, h=h, n_trials=5)
        assert r <= full * (1 + 1e-9)


def test_smallest_singular_values_sparse_matches_dense():
    import scipy.sparse as sp

    rng = np.random.default_rng(5)
    A = rand_complex(rng, (80, 80))
    dense = np.sort(np.linalg.svd(A, compute_uv=False))[:3]
    sparse = smallest_singular_values(sp.csr_matrix(A), 3)
    assert np.allclose(sparse, dense, rtol=1e-8)


def test_cluster_eigenvalues():
    vals = np.array([0.0, 1e-9, 1.0, 1.0 + 5e-9, 2.0])
    cl = cluster_eigenvalues(vals, tol=1e-6)
    assert [m for _, m in cl] == [2, 2, 1]


def test_chiral_hamiltonian_consistency():
    op = assemble(AssemblyConfig(h=0.6, cutoff_radius=2.0), U)
    H = chiral_hamiltonian(op)
    ev = np.sort(np.linalg.eigvalsh(H))
    s = singular_values(op).values
    assert np.allclose(ev[op.dim:], s, atol=1e-10)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_counting_consistency_property(seed):
    rng = np.random.default_rng(seed)
    vals = rand_complex(rng, 50)
    cloud = EigenCloud(vals)
    d = Disc(0.0, 1.0)
    assert count_in_region(cloud, d) == int(np.sum(np.abs(vals) <= 1.0))

import math

import numpy as np
import pytest
import scipy.linalg as la

from chiralspec.fields import ConfigurationError, admissible_basis, assemble_Q, standard_U
from chiralspec.grushin import (
    GapError,
    bordered_inverse_block,
    build,
    ky_fan_check,
    log_det_effective,
    perturb_effective,
    sandwich_check,
)
from chiralspec.lattice import MoireLattice
from chiralspec.operators import AssemblyConfig, assemble, perturb

LAT = MoireLattice()
U = standard_U(LAT)


def rand_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def normalized_Q(rng, n):
    Q = rand_complex(rng, (n, n))
    return Q / la.svdvals(Q)[0]


class TestBuild:
    def test_diagonal_example(self):
        A = np.diag([0.1, 0.5, 2.0])
        blocks = build(A, tau0=1.0)
        assert blocks.N == 2
        assert np.allclose(blocks.E_minus_plus, -np.diag([0.5, 0.1]), atol=1e-14)
        assert np.allclose(blocks.t_values, [0.1, 0.5])

    def test_empty_border(self):
        A = np.diag([2.0, 3.0])
        blocks = build(A, tau0=1.0)
        assert blocks.N == 0
        assert blocks.E_minus_plus.shape == (0, 0)

    def test_gap_error_on_degenerate_cutoff(self):
        # tau0 splits a near-degenerate pair: t_N ~ t_{N+1} within 1e-12
        A = np.diag([0.5, 0.5 + 1e-14, 2.0])
        with pytest.raises(GapError):
            build(A, tau0=0.5)

    def test_degenerate_pair_inside_border_is_fine(self):
        # both members of an exactly degenerate pair fall inside the border
        A = np.diag([0.5, 0.5, 2.0])
        blocks = build(A, tau0=0.5)
        assert blocks.N == 2

    def test_svd_pairing_reproduces_small_singular_values(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            A = rand_complex(rng, (12, 12))
            t = np.sort(la.svdvals(A))
            blocks = build(A, tau0=float(t[4] + t[5]) / 2)
            sE = np.sort(la.svdvals(blocks.E_minus_plus))
            assert np.allclose(sE, t[: blocks.N], atol=1e-10)

    def test_block_norms(self):
        rng = np.random.default_rng(1)
        A = rand_complex(rng, (10, 10))
        t = np.sort(la.svdvals(A))
        blocks = build(A, tau0=float(t[2] + t[3]) / 2)
        assert la.svdvals(blocks.E_minus_plus)[0] <= t[blocks.N - 1] * (1 + 1e-9)
        # tail inverse norm = 1/t_{N+1} by construction
        v = rand_complex(rng, 10)
        assert np.linalg.norm(blocks.apply_tail_inverse(v)) <= np.linalg.norm(v) / blocks.t_next * (
            1 + 1e-9
        )

    def test_matches_bordered_inverse_oracle(self):
        rng = np.random.default_rng(2)
        A = rand_complex(rng, (9, 9))
        t = np.sort(la.svdvals(A))
        blocks = build(A, tau0=float(t[3] + t[4]) / 2)
        oracle = bordered_inverse_block(A, blocks)
        assert np.allclose(blocks.E_minus_plus, oracle, atol=1e-10)

    def test_chiral_pairing_on_assembled_operator(self):
        op = assemble(AssemblyConfig(h=0.7, cutoff_radius=5.0), U)
        tau0 = math.sqrt(0.7)
        blocks = build(op, tau0, pairing="chiral")
        sE = np.sort(la.svdvals(blocks.E_minus_plus))
        assert np.allclose(sE, blocks.t_values, atol=1e-10)
        # and against the exact bordered inverse
        oracle = bordered_inverse_block(op, blocks)
        assert np.allclose(
            np.sort(la.svdvals(oracle)), blocks.t_values, atol=1e-10
        )

    def test_chiral_pairing_on_perturbed_operator(self):
        op = assemble(AssemblyConfig(h=0.7, cutoff_radius=4.0), U)
        basis = admissible_basis(0.7, 1.4, LAT)
        rng = np.random.default_rng(3)
        D = basis.dimension
        Q = assemble_Q(rand_complex(rng, D), rand_complex(rng, D), basis)
        ptd = perturb(op, Q, delta=0.01, kappa1=1.0)
        blocks = build(op.with_matrix(ptd.matrix), math.sqrt(0.7), pairing="chiral")
        sE = np.sort(la.svdvals(blocks.E_minus_plus))
        assert np.allclose(sE, blocks.t_values, atol=1e-10)

    def test_chiral_pairing_requires_operator(self):
        with pytest.raises(ConfigurationError):
            build(np.eye(4), 0.5, pairing="chiral")


class TestPerturbEffective:
    def _setup(self, seed=4, dim=10):
        rng = np.random.default_rng(seed)
        A = rand_complex(rng, (dim, dim))
        t = np.sort(la.svdvals(A))
        blocks = build(A, tau0=float(t[3] + t[4]) / 2)
        Q = normalized_Q(rng, dim)
        return A, blocks, Q

    def test_zero_delta(self):
        A, blocks, Q = self._setup()
        pert = perturb_effective(blocks, A, Q, 0.0)
        assert np.allclose(pert.E_minus_plus_delta, blocks.E_minus_plus, atol=1e-12)
        assert pert.residual_bound < 1e-10

    def test_first_order_error_bound(self):
        A, blocks, Q = self._setup()
        delta = blocks.t_next / 4
        pert = perturb_effective(blocks, A, Q, delta, neumann_order=1)
        err = la.svdvals(pert.exact - pert.first_order)[0]
        assert err <= 2 * delta**2 / blocks.t_next + 1e-12

    def test_delta_too_large_rejected(self):
        A, blocks, Q = self._setup()
        with pytest.raises(ConfigurationError):
            perturb_effective(blocks, A, Q, blocks.t_next)

    def test_perturbed_block_norms(self):
        # ||E^d|| <= 2/t_{N+1} and ||E+-^d|| <= 2 for the full bordered inverse
        A, blocks, Q = self._setup(seed=5)
        delta = blocks.t_next / 2.5
        dim, N = A.shape[0], blocks.N
        P = np.zeros((dim + N, dim + N), dtype=complex)
        P[:dim, :dim] = A + delta * Q
        P[:dim, dim:] = blocks.f_basis
        P[dim:, :dim] = blocks.e_basis.conj().T
        inv = la.inv(P)
        assert la.svdvals(inv[:dim, :dim])[0] <= 2 / blocks.t_next + 1e-10
        assert la.svdvals(inv[:dim, dim:])[0] <= 2 + 1e-10
        assert la.svdvals(inv[dim:, :dim])[0] <= 2 + 1e-10

    def test_higher_order_converges(self):
        A, blocks, Q = self._setup(seed=6)
        delta = blocks.t_next / 4
        res1 = perturb_effective(blocks, A, Q, delta, neumann_order=1).residual_bound
        res4 = perturb_effective(blocks, A, Q, delta, neumann_order=4).residual_bound
        assert res4 < res1


class TestSandwich:
    def test_zero_delta_equality(self):
        rng = np.random.default_rng(7)
        A = rand_complex(rng, (8, 8))
        t = np.sort(la.svdvals(A))
        blocks = build(A, tau0=float(t[2] + t[3]) / 2)
        pert = perturb_effective(blocks, A, np.zeros_like(A), 0.0)
        report = sandwich_check(blocks, pert, A)
        assert report.ok
        assert report.worst_upper == pytest.approx(0.0, abs=1e-10)

    def test_random_small_delta(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            A = rand_complex(rng, (9, 9))
            t = np.sort(la.svdvals(A))
            blocks = build(A, tau0=float(t[3] + t[4]) / 2)
            Q = normalized_Q(rng, 9)
            delta = blocks.t_next / 3
            pert = perturb_effective(blocks, A, Q, delta)
            assert sandwich_check(blocks, pert, A + delta * Q).ok

    def test_violation_injection_flags_failure(self):
        rng = np.random.default_rng(9)
        A = rand_complex(rng, (8, 8))
        t = np.sort(la.svdvals(A))
        blocks = build(A, tau0=float(t[2] + t[3]) / 2)
        pert = perturb_effective(blocks, A, np.zeros_like(A), 0.0)
        scaled = type(pert)(
            E_minus_plus_delta=pert.E_minus_plus_delta,
            exact=10.0 * pert.exact,
            neumann_order=pert.neumann_order,
            residual_bound=pert.residual_bound,
            delta=pert.delta,
            first_order=pert.first_order,
        )
        assert not sandwich_check(blocks, scaled, A).ok


class TestKyFan:
    def test_equality_case(self):
        rng = np.random.default_rng(10)
        A = rand_complex(rng, (6, 6))
        assert ky_fan_check(A, np.zeros_like(A), n=3, m=1)

    def test_random_pairs_all_indices(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            A = rand_complex(rng, (8, 8))
            B = rand_complex(rng, (8, 8))
            for n in range(1, 9):
                for m in range(1, 10 - n):
                    assert ky_fan_check(A, B, n, m)

    def test_index_validation(self):
        A = np.eye(4)
        with pytest.raises(ConfigurationError):
            ky_fan_check(A, A, 3, 3)


class TestLogDet:
    def test_identity(self):
        rng = np.random.default_rng(12)
        A = rand_complex(rng, (6, 6))
        t = np.sort(la.svdvals(A))
        blocks = build(A, tau0=float(t[2] + t[3]) / 2)
        pert = perturb_effective(blocks, A, np.zeros_like(A), 0.0)
        s = la.svdvals(pert.exact)
        assert log_det_effective(pert) == pytest.approx(float(np.sum(np.log(s))))

    def test_diag_example(self):
        # build a spectrum-controlled case: diag matrix, svd pairing
        A = np.diag([0.2, 0.3, 5.0])
        blocks = build(A, tau0=1.0)
        pert = perturb_effective(blocks, A, np.zeros_like(A), 0.0)
        assert log_det_effective(pert) == pytest.approx(math.log(0.2 * 0.3), rel=1e-10)


def test_schur_complement_spectral_equivalence():
    # z in Spec(A) iff det E-+(z) = 0: at an eigenvalue the effective block
    # is singular, away from the spectrum it is not
    rng = np.random.default_rng(13)
    A = rand_complex(rng, (8, 8))
    eigs = np.linalg.eigvals(A)
    z_on = eigs[0]
    t_on = np.sort(la.svdvals(A - z_on * np.eye(8)))
    blocks_on = build(A - z_on * np.eye(8), tau0=float(t_on[0] + t_on[1]) / 2)
    assert np.min(la.svdvals(blocks_on.E_minus_plus)) < 1e-8
    z_off = z_on + 2.0 * (1 + 1j)
    t_off = np.sort(la.svdvals(A - z_off * np.eye(8)))
    blocks_off = build(A - z_off * np.eye(8), tau0=float(t_off[1] + t_off[2]) / 2)
    assert np.min(la.svdvals(blocks_off.E_minus_plus)) > 1e-6

"""Well-posed Grushin (bordered-system) reduction onto the small singular values.

For a matrix A with singular triples (t_j, e_j, f_j) and a cutoff tau0 with
t_N <= tau0 < t_{N+1}, the bordered system [[A, R-], [R+, 0]] built from the
N smallest triples is invertible; its lower-right inverse block E-+ carries
the small singular values, and perturbations of A translate into a Neumann
series for E-+.  Border columns are ordered by decreasing t, so the SVD
pairing gives E-+ = -diag(t_N, ..., t_1) exactly.

Two pairings for the left border are supported: the SVD-paired f_j, and the
antilinear-image vectors f~_j = G e_j.  The latter reproduces the singular
values of A exactly when the matrix commutes with the symmetry (assembled
operators at k = 0, z = 0, perturbed or not); for z != 0 the image of the
small right-singular space under G is no longer the small left-singular
space and only the SVD pairing is contractual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .fields import ConfigurationError
from .operators import OperatorMatrix, apply_G_vector
from .spectral import SolverError, _as_array


class GapError(RuntimeError):
    """tau0 falls on a degenerate singular value; the caller must move it."""


@dataclass(frozen=True)
class GrushinBlocks:
    """SVD data and inverse blocks of one bordered reduction.

    Column nu of e_basis/f_basis is the border vector for singular index
    N-nu (descending t order); t_values lists t_1..t_N ascending.
    """

    N: int
    tau0: float
    t_values: np.ndarray          # ascending, length N
    t_all: np.ndarray             # ascending, full spectrum
    e_basis: np.ndarray           # dim x N, border order
    f_basis: np.ndarray           # dim x N, border order, chosen pairing
    f_svd: np.ndarray             # dim x N, border order, SVD pairing
    E_minus_plus: np.ndarray      # N x N
    pairing: str
    tail_vectors: np.ndarray      # dim x (dim-N) right singular vectors, t > tau0
    tail_covectors: np.ndarray    # dim x (dim-N) left singular vectors
    tail_values: np.ndarray       # ascending, t_{N+1}..

    @property
    def t_next(self) -> float:
        """t_{N+1}, +inf when the border exhausts the spectrum."""
        return float(self.tail_values[0]) if self.tail_values.size else np.inf

    def apply_tail_inverse(self, v: np.ndarray) -> np.ndarray:
        """E^{delta0} v = sum_{j>N} t_j^{-1} (v|f_j) e_j, via the SVD tail."""
        w = self.tail_covectors.conj().T @ v
        w = w / (self.tail_values[:, None] if w.ndim == 2 else self.tail_values)
        return self.tail_vectors @ w


@dataclass(frozen=True)
class PerturbedEffective:
    """Neumann-series and exact effective blocks for A + delta*Q."""

    E_minus_plus_delta: np.ndarray   # Neumann series to neumann_order
    exact: np.ndarray                # bordered re-solve
    neumann_order: int
    residual_bound: float            # ||neumann - exact||_2
    delta: float
    first_order: np.ndarray          # E-+ - delta * E- Q E+


@dataclass(frozen=True)
class SandwichReport:
    """Margins of t_k(E-+^d)/8 <= t_k(A^d) <= t_k(E-+^d) over k = 1..N."""

    ok: bool
    worst_lower: float
    worst_upper: float
    # informational: same margins with the unperturbed operator in the middle
    worst_lower_unperturbed: float
    worst_upper_unperturbed: float


def build(matrix, tau0: float, pairing: str = "svd") -> GrushinBlocks:
    """Construct the bordered reduction of one matrix at cutoff tau0.

    Raises GapError when tau0 falls on a degenerate singular value
    (t_N = t_{N+1} within 1e-12), in which case the caller should nudge tau0.
    The chiral pairing requires an OperatorMatrix (for the mode set) and is
    exact for symmetric assemblies at k = z = 0.
    """
    if pairing not in ("svd", "chiral"):
        raise ConfigurationError(f"unknown pairing {pairing!r}")
    if pairing == "chiral" and not isinstance(matrix, OperatorMatrix):
        raise ConfigurationError("chiral pairing needs an OperatorMatrix")
    A = _as_array(matrix)
    try:
        W, s, Vh = la.svd(A)
    except la.LinAlgError as exc:
        raise SolverError(f"SVD failed: {exc}") from exc
    dim = A.shape[0]
    t_all = s[::-1].copy()
    N = int(np.searchsorted(t_all, tau0, side="right"))
    if 0 < N < dim and (t_all[N] - t_all[N - 1]) <= 1e-12 * max(1.0, t_all[N]):
        raise GapError(
            f"no spectral gap at tau0={tau0}: t_N={t_all[N-1]!r} ~ t_N+1={t_all[N]!r}"
        )
    # ascending singular triples; border columns run through them descending
    E_asc = Vh.conj().T[:, ::-1]
    F_asc = W[:, ::-1]
    e_b = E_asc[:, :N][:, ::-1]
    f_svd = F_asc[:, :N][:, ::-1]
    t_b = t_all[:N][::-1]
    if pairing == "svd":
        f_b = f_svd
        Emp = -np.diag(t_b)
    else:
        f_b = apply_G_vector(e_b, matrix.modes)
        Emp = -(f_b.conj().T @ f_svd) @ np.diag(t_b)
    blocks = GrushinBlocks(
        N=N,
        tau0=tau0,
        t_values=t_all[:N].copy(),
        t_all=t_all,
        e_basis=e_b,
        f_basis=f_b,
        f_svd=f_svd,
        E_minus_plus=Emp,
        pairing=pairing,
        tail_vectors=E_asc[:, N:],
        tail_covectors=F_asc[:, N:],
        tail_values=t_all[N:],
    )
    # GP-block norm guarantees, asserted on every build
    if N:
        norm_emp = la.svdvals(Emp)[0]
        if norm_emp > t_all[N - 1] * (1 + 1e-9) + 1e-13:
            raise SolverError(
                f"||E-+|| = {norm_emp} exceeds t_N = {t_all[N-1]}"
            )
    return blocks


def bordered_inverse_block(matrix, blocks: GrushinBlocks, Q=None, delta: float = 0.0) -> np.ndarray:
    """Exact lower-right block of the inverse of [[A + delta*Q, R-], [R+, 0]].

    Reference implementation: inverts the bordered system directly.  Used as
    the test oracle and for the exact branch of perturb_effective, not in
    hot paths.
    """
    A = _as_array(matrix)
    if Q is not None and delta:
        A = A + delta * _as_array(Q)
    dim = A.shape[0]
    N = blocks.N
    if N == 0:
        return np.zeros((0, 0), dtype=complex)
    P = np.zeros((dim + N, dim + N), dtype=complex)
    P[:dim, :dim] = A
    P[:dim, dim:] = blocks.f_basis
    P[dim:, :dim] = blocks.e_basis.conj().T
    rhs = np.zeros((dim + N, N), dtype=complex)
    rhs[dim:, :] = np.eye(N)
    try:
        sol = la.solve(P, rhs)
    except la.LinAlgError as exc:
        raise SolverError(f"bordered solve failed: {exc}") from exc
    return sol[dim:, :]


def perturb_effective(
    blocks: GrushinBlocks,
    matrix,
    Q,
    delta: float,
    neumann_order: int = 1,
) -> PerturbedEffective:
    """Effective block of A + delta*Q via the Neumann series.

    Requires delta <= t_{N+1}/2 (with ||Q|| <= 1, the series converges and
    the returned first-order truncation error is bounded by 2*delta^2/t_{N+1}).
    The exact bordered re-solve is computed alongside and the spectral-norm
    gap is reported as residual_bound.
    """
    if delta < 0:
        raise ConfigurationError("delta must be >= 0")
    if delta > blocks.t_next / 2.0:
        raise ConfigurationError(
            f"delta={delta} exceeds t_(N+1)/2 = {blocks.t_next / 2.0}"
        )
    Qm = _as_array(Q)
    E_minus = blocks.f_basis.conj().T
    E_plus = blocks.e_basis
    term = Qm @ E_plus                      # Q E+
    series = blocks.E_minus_plus.copy()
    first_order = None
    for n in range(1, neumann_order + 1):
        contrib = ((-delta) ** n) * (E_minus @ term)
        series = series + contrib
        if n == 1:
            first_order = series.copy()
        term = Qm @ blocks.apply_tail_inverse(term)
    exact = bordered_inverse_block(matrix, blocks, Qm, delta)
    residual = float(la.svdvals(series - exact)[0]) if blocks.N else 0.0
    return PerturbedEffective(
        E_minus_plus_delta=series,
        exact=exact,
        neumann_order=neumann_order,
        residual_bound=residual,
        delta=delta,
        first_order=first_order if first_order is not None else series,
    )


def sandwich_check(
    blocks: GrushinBlocks,
    perturbed: PerturbedEffective,
    matrix_perturbed,
) -> SandwichReport:
    """Verify t_k(E-+^d)/8 <= t_k(A + delta Q) <= t_k(E-+^d) for k = 1..N.

    The middle term uses the perturbed operator (the effective block of the
    perturbed Grushin problem controls the perturbed singular values); the
    margins against the unperturbed t_k are recorded as well.
    """
    N = blocks.N
    if N == 0:
        return SandwichReport(True, 0.0, 0.0, 0.0, 0.0)
    tE = la.svdvals(perturbed.exact)[::-1]          # ascending, length N
    tD = la.svdvals(_as_array(matrix_perturbed))[::-1][:N]
    lower = tD - tE / 8.0
    upper = tE - tD
    t0 = blocks.t_values
    return SandwichReport(
        ok=bool(np.all(lower >= -1e-10) and np.all(upper >= -1e-10)),
        worst_lower=float(lower.min()),
        worst_upper=float(upper.min()),
        worst_lower_unperturbed=float((t0 - tE / 8.0).min()),
        worst_upper_unperturbed=float((tE - t0).min()),
    )


def ky_fan_check(A: np.ndarray, B: np.ndarray, n: int, m: int, rtol: float = 1e-10) -> bool:
    """Both Ky Fan inequalities s_{n+m-1}(A+B) <= s_n(A) + s_m(B) and
    s_{n+m-1}(AB) <= s_n(A) s_m(B), with descending 1-based indices."""
    dim = A.shape[0]
    if n + m - 1 > dim:
        raise ConfigurationError("n + m - 1 exceeds matrix dimension")
    sA = la.svdvals(A)
    sB = la.svdvals(B)
    sSum = la.svdvals(A + B)
    sProd = la.svdvals(A @ B)
    k = n + m - 2
    tol_sum = rtol * max(1.0, sA[0] + sB[0])
    tol_prod = rtol * max(1.0, sA[0] * sB[0])
    return bool(
        sSum[k] <= sA[n - 1] + sB[m - 1] + tol_sum
        and sProd[k] <= sA[n - 1] * sB[m - 1] + tol_prod
    )


def log_det_effective(perturbed: PerturbedEffective) -> float:
    """sum_k log s_k of the exact effective block; -inf when singular."""
    s = la.svdvals(perturbed.exact)
    if perturbed.exact.size == 0:
        return 0.0
    if np.any(s == 0.0):
        return -np.inf
    return float(np.sum(np.log(s)))

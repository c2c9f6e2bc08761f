"""Galerkin assembly of the chiral-model operator on truncated dual modes.

The 2x2-block operator [[2hD_xbar, U(x)], [U(-x), 2hD_xbar]] + hk - z acts on
plane-wave pairs indexed by a negation-symmetric cutoff set of dual points.
Derivative blocks are diagonal with entries h*(gamma* + k) - z; potential
blocks are pure frequency shifts, truncated to the mode set (Galerkin
projection).  Rows 0..M-1 hold component 1, rows M..2M-1 component 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fields import ConfigurationError, FourierField, TunnelingPotential, reflect
from .lattice import DualIndex, MoireLattice


@dataclass(frozen=True)
class AssemblyConfig:
    """Parameters of one Galerkin assembly of D_h(k) - z."""

    h: float
    cutoff_radius: float
    k: complex = 0.0
    z: complex = 0.0
    lattice: MoireLattice = field(default_factory=MoireLattice)

    def __post_init__(self):
        if not 0 < self.h:
            raise ConfigurationError("h must be positive")
        if self.cutoff_radius < 0:
            raise ConfigurationError("cutoff_radius must be >= 0")


class _ModeTable:
    """Integer lookup (m, n) -> mode position, -1 outside the cutoff set."""

    def __init__(self, modes: tuple[DualIndex, ...], pad: int):
        arr = np.array(modes, dtype=np.int64)
        self.offset = int(np.abs(arr).max()) + pad + 1
        size = 2 * self.offset + 1
        self.table = np.full((size, size), -1, dtype=np.int64)
        self.table[arr[:, 0] + self.offset, arr[:, 1] + self.offset] = np.arange(
            len(modes)
        )
        self.modes_arr = arr

    def positions(self, shifted: np.ndarray) -> np.ndarray:
        m = np.clip(shifted[:, 0] + self.offset, 0, self.table.shape[0] - 1)
        n = np.clip(shifted[:, 1] + self.offset, 0, self.table.shape[1] - 1)
        inside = (
            (shifted[:, 0] + self.offset >= 0)
            & (shifted[:, 0] + self.offset < self.table.shape[0])
            & (shifted[:, 1] + self.offset >= 0)
            & (shifted[:, 1] + self.offset < self.table.shape[1])
        )
        pos = self.table[m, n]
        pos[~inside] = -1
        return pos


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense complex Galerkin matrix over a fixed truncated mode set."""

    matrix: np.ndarray
    modes: tuple[DualIndex, ...]
    config: AssemblyConfig

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return 2 * len(self.modes)

    def index_of(self, component: int, idx: DualIndex) -> int:
        """Row of (component, dual index); component is 1 or 2."""
        if component not in (1, 2):
            raise ConfigurationError("component must be 1 or 2")
        return (component - 1) * self.n_modes + self.modes.index(idx)

    def with_matrix(self, matrix: np.ndarray) -> "OperatorMatrix":
        return OperatorMatrix(matrix, self.modes, self.config)

    def export_binary(self, path) -> None:
        """Row-major little-endian complex128 (pairs of LE float64)."""
        np.ascontiguousarray(self.matrix).astype("<c16").tofile(path)

    def export_json(self, path) -> None:
        obj = {
            "dim": self.dim,
            "modes": [[k.m, k.n] for k in self.modes],
            "re": self.matrix.real.tolist(),
            "im": self.matrix.imag.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(obj, fh)


@dataclass(frozen=True)
class PerturbedOperator:
    """base + delta * h^kappa1 * (off-diagonal tunneling blocks)."""

    base: OperatorMatrix
    Q: TunnelingPotential
    delta: float
    kappa1: float
    matrix: np.ndarray

    @property
    def modes(self) -> tuple[DualIndex, ...]:
        return self.base.modes

    @property
    def config(self) -> AssemblyConfig:
        return self.base.config

    def as_operator(self) -> OperatorMatrix:
        return self.base.with_matrix(self.matrix)


def _shift_entries(
    table: _ModeTable, coeffs: dict[DualIndex, complex]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """COO entries (rows, cols, vals) of multiplication by a field."""
    rows, cols, vals = [], [], []
    M = len(table.modes_arr)
    for shift, coeff in coeffs.items():
        if coeff == 0:
            continue
        shifted = table.modes_arr + np.array(shift, dtype=np.int64)
        pos = table.positions(shifted)
        keep = pos >= 0
        rows.append(pos[keep])
        cols.append(np.arange(M, dtype=np.int64)[keep])
        vals.append(np.full(int(keep.sum()), coeff, dtype=complex))
    if not rows:
        z = np.zeros(0)
        return z.astype(np.int64), z.astype(np.int64), z.astype(complex)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _max_shift(*fields_: FourierField) -> int:
    pads = [0]
    for f in fields_:
        for k in f.coeffs:
            pads.append(max(abs(k.m), abs(k.n)))
    return max(pads)


def _block_entries(config: AssemblyConfig, U: FourierField):
    """Diagonal values and off-diagonal COO entries of the assembly."""
    lattice = config.lattice
    modes = tuple(lattice.enumerate_dual(config.cutoff_radius))
    if not modes:
        raise ConfigurationError("empty mode set")
    Urefl = reflect(U)
    table = _ModeTable(modes, pad=_max_shift(U))
    diag = np.array(
        [config.h * (lattice.dual_point(k) + config.k) - config.z for k in modes],
        dtype=complex,
    )
    up = _shift_entries(table, U.raw_coeffs())       # block (1,2)
    low = _shift_entries(table, Urefl.raw_coeffs())  # block (2,1)
    return modes, diag, up, low


def assemble(config: AssemblyConfig, U: FourierField) -> OperatorMatrix:
    """Dense Galerkin matrix of D_h(k) - z with tunneling potential U.

    Frequency shifts leaving the cutoff set are dropped; the cutoff set is
    negation-symmetric, so the antilinear symmetry of the operator survives
    truncation exactly.
    """
    modes, diag, (ur, uc, uv), (lr, lc, lv) = _block_entries(config, U)
    M = len(modes)
    A = np.zeros((2 * M, 2 * M), dtype=complex)
    A[np.arange(M), np.arange(M)] = diag
    A[np.arange(M, 2 * M), np.arange(M, 2 * M)] = diag
    np.add.at(A, (ur, uc + M), uv)
    np.add.at(A, (lr + M, lc), lv)
    return OperatorMatrix(A, modes, config)


def assemble_sparse(config: AssemblyConfig, U: FourierField) -> tuple[sp.csr_matrix, tuple[DualIndex, ...]]:
    """CSR variant of :func:`assemble`, for shift-invert singular solves."""
    modes, diag, (ur, uc, uv), (lr, lc, lv) = _block_entries(config, U)
    M = len(modes)
    idx = np.arange(M)
    rows = np.concatenate([idx, idx + M, ur, lr + M])
    cols = np.concatenate([idx, idx + M, uc + M, lc])
    vals = np.concatenate([diag, diag, uv, lv])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(2 * M, 2 * M)).tocsr()
    return A, modes


def potential_matrix(
    Q: TunnelingPotential,
    modes: tuple[DualIndex, ...],
    sparse: bool = False,
):
    """Galerkin matrix of the off-diagonal blocks [[0, q1], [-q2, 0]]."""
    table = _ModeTable(modes, pad=0)
    M = len(modes)
    ur, uc, uv = _shift_entries(table, Q.q1.raw_coeffs())
    lr, lc, lv = _shift_entries(table, Q.q2.raw_coeffs())
    if sparse:
        rows = np.concatenate([ur, lr + M])
        cols = np.concatenate([uc + M, lc])
        vals = np.concatenate([uv, -lv])
        return sp.coo_matrix((vals, (rows, cols)), shape=(2 * M, 2 * M)).tocsr()
    P = np.zeros((2 * M, 2 * M), dtype=complex)
    np.add.at(P, (ur, uc + M), uv)
    np.add.at(P, (lr + M, lc), -lv)
    return P


def perturb(
    base: OperatorMatrix, Q: TunnelingPotential, delta: float, kappa1: float
) -> PerturbedOperator:
    """base + delta * h^kappa1 * Q-blocks; the base matrix is not modified."""
    scale = delta * base.config.h**kappa1
    P = potential_matrix(Q, base.modes)
    return PerturbedOperator(base, Q, delta, kappa1, base.matrix + scale * P)


def _g_permutation(modes: tuple[DualIndex, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Index permutation and signs realizing the antilinear map G.

    G(u1, u2) = (conj(u2), -conj(u1)); conjugation negates frequencies, so in
    coordinates (G c)^1_g = conj(c^2_{-g}) and (G c)^2_g = -conj(c^1_{-g}).
    Returns (sigma, sign) with (G c) = sign * conj(c)[sigma].
    """
    pos = {k: i for i, k in enumerate(modes)}
    M = len(modes)
    try:
        negperm = np.array([pos[-k] for k in modes], dtype=np.int64)
    except KeyError as exc:
        raise ConfigurationError(
            "mode set is not symmetric under negation"
        ) from exc
    sigma = np.concatenate([negperm + M, negperm])
    sign = np.concatenate([np.ones(M), -np.ones(M)])
    return sigma, sign


def apply_G_vector(vec: np.ndarray, modes: tuple[DualIndex, ...]) -> np.ndarray:
    """Coefficients of G applied to a coefficient vector (or column stack)."""
    sigma, sign = _g_permutation(modes)
    out = np.conj(np.asarray(vec))[sigma]
    return out * (sign[:, None] if out.ndim == 2 else sign)


def apply_G(op: OperatorMatrix) -> OperatorMatrix:
    """Matrix of G A G.

    For the assembled operator at k = 0, z = 0 (and for any admissible
    tunneling perturbation of it) this equals the conjugate transpose; the
    general identity is apply_G(A(k, z)) = A(-k, -z)^H.
    """
    sigma, sign = _g_permutation(op.modes)
    # G A G = P conj(A) P with P the signed permutation; the right factor
    # enters transposed and P^T = -P, hence the global sign flip
    B = np.conj(op.matrix)[np.ix_(sigma, sigma)]
    B *= -np.outer(sign, sign)
    return op.with_matrix(B)


def chiral_hamiltonian(op: OperatorMatrix | np.ndarray) -> np.ndarray:
    """Hermitian block matrix [[0, A], [A*, 0]] of dimension 2*dim(A).

    Its spectrum is symmetric about zero and the non-negative half equals the
    singular values of A.
    """
    A = op.matrix if isinstance(op, OperatorMatrix) else np.asarray(op)
    n = A.shape[0]
    H = np.zeros((2 * n, 2 * n), dtype=complex)
    H[:n, n:] = A
    H[n:, :n] = A.conj().T
    return H

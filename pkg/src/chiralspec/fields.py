"""Scalar fields on the moire torus as finite Fourier series over Gamma*.

Fields are finitely supported coefficient maps gamma* -> c; evaluation is
f(x) = sum_c c * exp(i*Re(x*conj(gamma*))), optionally divided by
sqrt(cell_area) when the coefficients refer to L2-normalized plane waves.
The admissible-potential machinery uses the flat Laplacian on C/Gamma, whose
eigenfunctions are exactly these plane waves with eigenvalue mu = h*|gamma*|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import SQRT3, DualIndex, MoireLattice


class ConfigurationError(ValueError):
    """Raised when caller-supplied numerical parameters are inconsistent."""


def _bracket(r: np.ndarray | float) -> np.ndarray | float:
    """Japanese bracket <r> = sqrt(1 + r^2)."""
    return np.sqrt(1.0 + np.square(r))


@dataclass(frozen=True)
class FourierField:
    """Finite Fourier series over the dual lattice.

    ``normalized=False`` means coefficients multiply raw plane waves
    exp(i*pairing); ``normalized=True`` means they multiply the
    L2-orthonormal waves exp(i*pairing)/sqrt(cell_area).
    """

    coeffs: dict[DualIndex, complex]
    lattice: MoireLattice = field(default_factory=MoireLattice)
    normalized: bool = False

    def raw_coeffs(self) -> dict[DualIndex, complex]:
        """Coefficient map in the raw plane-wave convention."""
        if not self.normalized:
            return dict(self.coeffs)
        scale = 1.0 / math.sqrt(self.lattice.cell_area)
        return {k: v * scale for k, v in self.coeffs.items()}

    def support(self) -> set[DualIndex]:
        return set(self.coeffs)

    def frequencies(self) -> np.ndarray:
        return np.array(
            [self.lattice.dual_point(k) for k in self.coeffs], dtype=complex
        )

    def __call__(self, x) -> np.ndarray | complex:
        """Evaluate at a complex point or array of points."""
        if not self.coeffs:
            return np.zeros_like(np.asarray(x, dtype=complex))
        pts = np.asarray(x, dtype=complex)
        freqs = self.frequencies()
        vals = np.array(list(self.coeffs.values()), dtype=complex)
        phases = np.real(np.multiply.outer(pts, np.conj(freqs)))
        out = np.exp(1j * phases) @ vals
        if self.normalized:
            out = out / math.sqrt(self.lattice.cell_area)
        return out if out.shape else complex(out)

    def __add__(self, other: "FourierField") -> "FourierField":
        a, b = self.raw_coeffs(), other.raw_coeffs()
        for k, v in b.items():
            a[k] = a.get(k, 0.0) + v
        return FourierField(a, self.lattice, normalized=False)

    def __rmul__(self, scalar: complex) -> "FourierField":
        return FourierField(
            {k: scalar * v for k, v in self.coeffs.items()},
            self.lattice,
            self.normalized,
        )

    def to_json_obj(self) -> list[dict]:
        return [
            {"m": k.m, "n": k.n, "re": v.real, "im": v.imag}
            for k, v in sorted(self.raw_coeffs().items())
        ]

    @staticmethod
    def from_json_obj(obj: list[dict], lattice: MoireLattice | None = None) -> "FourierField":
        lattice = lattice or MoireLattice()
        coeffs = {
            DualIndex(int(d["m"]), int(d["n"])): complex(d["re"], d["im"]) for d in obj
        }
        return FourierField(coeffs, lattice)


@dataclass(frozen=True)
class SymmetryReport:
    """Max deviations of the three tunneling-potential symmetries on a grid."""

    translation: float  # |U(x + a_j) - conj(w) U(x)|
    rotation: float     # |U(w x) - w U(x)|
    conjugation: float  # |conj(U(conj(x))) - U(x)|

    def max_deviation(self) -> float:
        return max(self.translation, self.rotation, self.conjugation)


@dataclass(frozen=True)
class AdmissibleBasis:
    """Plane-wave eigenbasis with frequency bound h*|gamma*| <= L.

    Modes are ordered by increasing eigenvalue mu = h*|gamma*|, ties broken
    lexicographically, so coefficient vectors have a deterministic layout.
    """

    h: float
    L: float
    modes: tuple[DualIndex, ...]
    mu: np.ndarray
    lattice: MoireLattice

    @property
    def dimension(self) -> int:
        return len(self.modes)

    def mode_field(self, coeff_vector: np.ndarray) -> FourierField:
        """Field sum_n coeff[n] * psi_n with psi_n the orthonormal waves."""
        vec = np.asarray(coeff_vector, dtype=complex)
        if vec.shape != (self.dimension,):
            raise ConfigurationError(
                f"coefficient vector has length {vec.shape}, basis dimension is {self.dimension}"
            )
        return FourierField(
            {k: c for k, c in zip(self.modes, vec) if c != 0},
            self.lattice,
            normalized=True,
        )

    def coeff_vector(self, f: FourierField) -> np.ndarray:
        """Normalized-mode coefficients of a field supported on this basis."""
        raw = f.raw_coeffs()
        scale = math.sqrt(self.lattice.cell_area)
        return np.array([raw.get(k, 0.0) * scale for k in self.modes], dtype=complex)


@dataclass(frozen=True)
class TunnelingPotential:
    """Off-diagonal 2x2 potential [[0, q1], [-q2, 0]].

    The diagonal is identically zero, so the antilinear-symmetry condition
    q11 = -q22 holds trivially.
    """

    q1: FourierField
    q2: FourierField

    def __rmul__(self, scalar: complex) -> "TunnelingPotential":
        return TunnelingPotential(scalar * self.q1, scalar * self.q2)

    def add(self, other: "TunnelingPotential") -> "TunnelingPotential":
        return TunnelingPotential(self.q1 + other.q1, self.q2 + other.q2)


def standard_U(lattice: MoireLattice | None = None) -> FourierField:
    """The first-shell tunneling potential U(x) = sum_k w^k exp(i*Im(x*conj(w)^k)).

    Each mode exp(i*Im(x * conj(w)^k)) is the plane wave with frequency
    i*w^k, which lies in Gamma*; the three symmetries of the tunneling
    potential hold exactly for this choice.
    """
    lattice = lattice or MoireLattice()
    w = lattice.omega
    coeffs: dict[DualIndex, complex] = {}
    for k in range(3):
        freq = 1j * w**k
        # integer coordinates of freq in the (eta1, eta2) frame
        s, t = lattice._dual_frame_inv @ (freq.real, freq.imag)
        idx = DualIndex(round(s), round(t))
        assert abs(lattice.dual_point(idx) - freq) < 1e-12
        coeffs[idx] = w**k
    return FourierField(coeffs, lattice)


def reflect(f: FourierField) -> FourierField:
    """The field x -> f(-x): coefficients move to negated indices."""
    return FourierField(
        {-k: v for k, v in f.coeffs.items()}, f.lattice, f.normalized
    )


def _fundamental_grid(lattice: MoireLattice, grid_size: int) -> np.ndarray:
    """grid_size^2 uniform points u*gamma1 + v*gamma2, u,v in [0,1)."""
    u = np.arange(grid_size) / grid_size
    return (
        u[:, None] * lattice.gamma1 + u[None, :] * lattice.gamma2
    ).ravel()


def check_symmetries(f: FourierField, grid_size: int = 24) -> SymmetryReport:
    """Measure the three tunneling-potential symmetry defects of a field."""
    if grid_size < 1:
        raise ConfigurationError("grid_size must be >= 1")
    lat = f.lattice
    w = lat.omega
    x = _fundamental_grid(lat, grid_size)
    fx = f(x)
    translation = max(
        float(np.max(np.abs(f(x + 4.0 / 3.0 * math.pi * 1j * w**j) - np.conj(w) * fx)))
        for j in (1, 2, 3)
    )
    rotation = float(np.max(np.abs(f(w * x) - w * fx)))
    conjugation = float(np.max(np.abs(np.conj(f(np.conj(x))) - fx)))
    return SymmetryReport(translation, rotation, conjugation)


def sobolev_norm(f: FourierField, s: float, h: float) -> float:
    """Semiclassical Sobolev norm via spectral weights.

    ||f||_{H^s_h} = ( sum <h|gamma*|>^{2s} |c|^2 * cell_area )^{1/2} with raw
    plane-wave coefficients c; s = 0 recovers the L2 norm.
    """
    if h <= 0:
        raise ConfigurationError("h must be > 0")
    raw = f.raw_coeffs()
    if not raw:
        return 0.0
    mods = np.abs(
        np.array([f.lattice.dual_point(k) for k in raw], dtype=complex)
    )
    c = np.abs(np.array(list(raw.values()), dtype=complex))
    weights = _bracket(h * mods) ** (2.0 * s)
    return float(math.sqrt(np.sum(weights * c**2) * f.lattice.cell_area))


def linf_norm(f: FourierField, grid_size: int = 64) -> float:
    """Max modulus on a uniform grid of the fundamental domain.

    This is a lower bound on the true sup-norm; for band-limited fields with
    grid_size well above the frequency diameter it is accurate in practice.
    """
    if grid_size < 16:
        raise ConfigurationError("grid_size must be >= 16")
    x = _fundamental_grid(f.lattice, grid_size)
    return float(np.max(np.abs(f(x))))


def admissible_basis(h: float, L: float, lattice: MoireLattice | None = None) -> AdmissibleBasis:
    """Orthonormal plane-wave basis of all modes with h*|gamma*| <= L."""
    if h <= 0:
        raise ConfigurationError("h must be > 0")
    if L < 0:
        raise ConfigurationError("L must be >= 0")
    lattice = lattice or MoireLattice()
    modes = lattice.enumerate_dual(L / h)
    mu = np.array([h * abs(lattice.dual_point(k)) for k in modes])
    order = np.lexsort((tuple(k.n for k in modes), tuple(k.m for k in modes), mu))
    modes_sorted = tuple(modes[i] for i in order)
    return AdmissibleBasis(h, L, modes_sorted, mu[order], lattice)


def dirac_truncation(
    a: complex,
    basis: AdmissibleBasis,
    s: float = 2.0,
    reference_radius: float | None = None,
) -> tuple[FourierField, float]:
    """L2 projection of delta(x - a) onto the basis, plus the tail norm.

    Returns the projected field (normalized-mode coefficients
    alpha_n = conj(psi_n(a))) and the H^{-s}_h norm of the remainder measured
    against a finite reference cutoff, by default 4x the basis cutoff.  The
    reported tail norm is therefore a lower bound on the true one.
    """
    lat = basis.lattice
    area = lat.cell_area
    basis_radius = basis.L / basis.h
    if reference_radius is None:
        reference_radius = 4.0 * basis_radius
    if reference_radius <= basis_radius:
        raise ConfigurationError(
            "reference cutoff must exceed the basis cutoff "
            f"({reference_radius} <= {basis_radius})"
        )
    alpha = np.array(
        [
            np.exp(-1j * lat.pairing(a, lat.dual_point(k))) / math.sqrt(area)
            for k in basis.modes
        ],
        dtype=complex,
    )
    field_ = basis.mode_field(alpha)

    # every raw Fourier coefficient of the delta has modulus 1/area
    in_basis = set(basis.modes)
    tail_sq = 0.0
    for k in lat.enumerate_dual(reference_radius):
        if k in in_basis:
            continue
        weight = float(_bracket(basis.h * abs(lat.dual_point(k)))) ** (-2.0 * s)
        tail_sq += weight / area
    return field_, math.sqrt(tail_sq)


def assemble_Q(
    alpha: np.ndarray, beta: np.ndarray, basis: AdmissibleBasis
) -> TunnelingPotential:
    """Tunneling potential with q1 = sum alpha_n psi_n, q2 = sum beta_n psi_n."""
    return TunnelingPotential(basis.mode_field(alpha), basis.mode_field(beta))

"""Singular values, eigenvalue clouds, counting functions, magic-angle scan.

All solver calls go through wrappers that turn LAPACK/ARPACK failures into
explicit errors; NaNs never propagate silently.  Smallest singular values of
large assemblies use shift-invert on A*A over a sparse assembly, everything
else is dense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from shapely.geometry import Point, Polygon

from .fields import ConfigurationError, FourierField, sobolev_norm
from .lattice import DualIndex, MoireLattice
from .operators import AssemblyConfig, OperatorMatrix, apply_G_vector, assemble, assemble_sparse


class SolverError(RuntimeError):
    """A numerical solver failed or returned non-finite output."""


def _as_array(matrix) -> np.ndarray:
    if isinstance(matrix, OperatorMatrix):
        return matrix.matrix
    return np.asarray(matrix, dtype=complex)


@dataclass(frozen=True)
class SingularSpectrum:
    """Ascending singular values t_1 <= t_2 <= ... of one matrix."""

    values: np.ndarray
    source: object = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def count_small(self, tau0: float) -> int:
        return int(np.searchsorted(self.values, tau0, side="right"))

    def to_csv_rows(self):
        return [(i + 1, t) for i, t in enumerate(self.values)]


@dataclass(frozen=True)
class EigenCloud:
    """Complex eigenvalue multiset of one matrix."""

    values: np.ndarray
    source: object = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))

    def to_csv_rows(self):
        return [(z.real, z.imag) for z in self.values]


@dataclass(frozen=True)
class Disc:
    center: complex
    radius: float

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boundary points count as inside."""
        return np.abs(np.asarray(points) - self.center) <= self.radius


@dataclass(frozen=True)
class PolygonRegion:
    vertices: tuple[complex, ...]
    _poly: Polygon = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        poly = Polygon([(v.real, v.imag) for v in self.vertices])
        if poly.area <= 0:
            raise ConfigurationError("polygon region must have positive area")
        object.__setattr__(self, "_poly", poly)

    @property
    def area(self) -> float:
        return float(self._poly.area)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(points))
        # covers() includes the boundary, matching the disc convention
        return np.array([self._poly.covers(Point(z.real, z.imag)) for z in pts])


Region = Disc | PolygonRegion


def singular_values(matrix) -> SingularSpectrum:
    """Full singular spectrum, ascending."""
    A = _as_array(matrix)
    try:
        s = la.svdvals(A)
    except la.LinAlgError as exc:
        raise SolverError(f"SVD failed: {exc}") from exc
    if not np.all(np.isfinite(s)):
        raise SolverError("SVD returned non-finite singular values")
    return SingularSpectrum(s[::-1].copy(), source=matrix)


def eigenvalues(matrix) -> EigenCloud:
    """All complex eigenvalues with multiplicity."""
    A = _as_array(matrix)
    try:
        w = la.eigvals(A)
    except la.LinAlgError as exc:
        raise SolverError(f"eigenvalue solver failed: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise SolverError("eigenvalue solver returned non-finite values")
    return EigenCloud(w, source=matrix)


def count_small(spectrum: SingularSpectrum, tau0: float) -> int:
    """N = #{j : t_j <= tau0}."""
    if tau0 < 0:
        raise ConfigurationError("tau0 must be >= 0")
    return spectrum.count_small(tau0)


def count_in_region(cloud: EigenCloud, region: Region) -> int:
    return int(np.count_nonzero(region.contains(cloud.values)))


def per_cell_counts(
    cloud: EigenCloud,
    h: float,
    window: int,
    lattice: MoireLattice | None = None,
) -> dict[DualIndex, int]:
    """Eigenvalue count per half-open cell h*C_{gamma*}.

    Only cells with anchor max(|m|, |n|) <= window are reported; the caller
    is responsible for keeping the window well inside the resolved part of
    the spectrum.
    """
    lattice = lattice or MoireLattice()
    counts: dict[DualIndex, int] = {
        DualIndex(m, n): 0
        for m in range(-window, window + 1)
        for n in range(-window, window + 1)
    }
    for z in cloud.values:
        anchor = lattice.cell_of(z, h)
        if anchor in counts:
            counts[anchor] += 1
    return counts


def weyl_prediction(region: Region, h: float, lattice: MoireLattice | None = None) -> float:
    """Leading Weyl term 2 * |Omega| * |C/Gamma| / (2 pi h)^2."""
    if h <= 0:
        raise ConfigurationError("h must be > 0")
    lattice = lattice or MoireLattice()
    return 2.0 * region.area * lattice.cell_area / (2.0 * math.pi * h) ** 2


_SPARSE_CROSSOVER = 600


def smallest_singular_values(matrix, k: int = 1) -> np.ndarray:
    """k smallest singular values, ascending.

    Dense matrices below the crossover use LAPACK; larger or sparse inputs
    use shift-invert Lanczos on A*A with a slightly negative shift, which
    stays factorizable even when A is numerically singular.
    """
    if sp.issparse(matrix):
        A = matrix.tocsc()
        dim = A.shape[0]
    else:
        A = _as_array(matrix)
        dim = A.shape[0]
        if dim <= _SPARSE_CROSSOVER:
            s = singular_values(A).values
            return s[:k]
        A = sp.csc_matrix(A)
    AHA = (A.conj().T @ A).tocsc()
    scale = spla.norm(AHA, np.inf)
    sigma = -1e-8 * max(scale, 1e-300)
    try:
        vals = spla.eigsh(
            AHA, k=k, sigma=sigma, which="LM", return_eigenvectors=False
        )
    except Exception as exc:  # ARPACK raises several exception types
        raise SolverError(f"shift-invert singular solve failed: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise SolverError("shift-invert returned non-finite values")
    return np.sqrt(np.clip(np.sort(vals), 0.0, None))[:k]


def cluster_eigenvalues(values: np.ndarray, tol: float) -> list[tuple[complex, int]]:
    """Union-find clustering of a complex multiset at pairwise distance tol.

    Returns (centroid, multiplicity) per cluster, sorted by |centroid|.
    """
    vals = np.asarray(values, dtype=complex)
    n = len(vals)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    dist = np.abs(vals[:, None] - vals[None, :])
    close = np.argwhere(dist <= tol)
    for i, j in close:
        if i < j:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    out = [(complex(np.mean(vals[g])), len(g)) for g in groups.values()]
    return sorted(out, key=lambda c: (abs(c[0]), c[0].real, c[0].imag))


@dataclass(frozen=True)
class MagicScanResult:
    points: tuple[tuple[float, float], ...]  # (h, t1)
    candidates: tuple[float, ...]            # refined magic h values
    threshold: float

    def to_csv_rows(self):
        return [(h, t1, t1 / h) for h, t1 in self.points]


def _t1_at(h: float, z0: complex, U: FourierField, cutoff: float) -> float:
    config = AssemblyConfig(h=h, cutoff_radius=cutoff, k=0.0, z=h * z0)
    dim = 2 * len(config.lattice.enumerate_dual(cutoff))
    if dim <= _SPARSE_CROSSOVER:
        return float(smallest_singular_values(assemble(config, U).matrix, 1)[0])
    A, _ = assemble_sparse(config, U)
    return float(smallest_singular_values(A, 1)[0])


def magic_scan(
    h_grid,
    z0: complex,
    U: FourierField,
    cutoff: float = 10.0,
    threshold: float = 1e-4,
    refine: bool = True,
    refine_tol: float = 1e-7,
) -> MagicScanResult:
    """Scan t_1(D_h - h*z0) over an h grid and flag flat-band candidates.

    z0 is a fixed interior dual-cell probe: away from magic h the spectrum is
    exactly h*Gamma*, so t_1 at h*z0 is bounded below and collapses precisely
    at magic h.  Grid dips with t_1/h below the threshold are refined by
    golden-section minimization of t_1/h on the bracketing interval.
    """
    hs = np.sort(np.asarray(list(h_grid), dtype=float))
    if hs.size == 0 or hs[0] <= 0:
        raise ConfigurationError("h grid must be positive and nonempty")
    t1s = np.array([_t1_at(h, z0, U, cutoff) for h in hs])
    ratios = t1s / hs
    candidates = []
    if refine:
        from scipy.optimize import minimize_scalar

        local_min = [
            i
            for i in range(len(hs))
            if (i == 0 or ratios[i] <= ratios[i - 1])
            and (i == len(hs) - 1 or ratios[i] <= ratios[i + 1])
        ]
        for i in local_min:
            lo = hs[max(i - 1, 0)]
            hi = hs[min(i + 1, len(hs) - 1)]
            if hi <= lo:
                continue
            res = minimize_scalar(
                lambda h: _t1_at(h, z0, U, cutoff) / h,
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": refine_tol},
            )
            if res.fun < threshold:
                candidates.append(float(res.x))
    else:
        candidates = [float(h) for h, r in zip(hs, ratios) if r < threshold]
    # deduplicate refined candidates that collapsed to the same minimum
    dedup: list[float] = []
    for c in sorted(candidates):
        if not dedup or abs(c - dedup[-1]) > 1e-5:
            dedup.append(c)
    return MagicScanResult(
        tuple((float(h), float(t)) for h, t in zip(hs, t1s)),
        tuple(dedup),
        threshold,
    )


def band_floor(h: float, k_samples, assembler) -> float:
    """min over Bloch samples k of t_1(D_h(k)); flat-band diagnostic.

    ``assembler`` maps a complex k to a matrix (dense array, sparse matrix or
    OperatorMatrix).
    """
    ks = list(k_samples)
    if not ks:
        raise ConfigurationError("k_samples must be nonempty")
    floors = []
    for k in ks:
        A = assembler(k)
        floors.append(float(smallest_singular_values(A, 1)[0]))
    return min(floors)


def eigvec_regularity(
    op: OperatorMatrix,
    tau0: float,
    s: float,
    h: float,
    n_trials: int = 20,
    rng: np.random.Generator | None = None,
    componentwise: bool = False,
) -> float:
    """Worst H^{s+1}_h-norm growth of random combinations of small singular vectors.

    Takes the right singular vectors e_j with t_j <= tau0, draws random unit
    coefficient vectors, and returns the max of
    sobolev_norm(sum lambda_j e_j, s+1, h) / ||lambda||.  With
    ``componentwise=True`` each term picks one random C^2 component of e_j.
    """
    rng = rng or np.random.default_rng(0)
    A = op.matrix
    try:
        _, svals, Vh = la.svd(A)
    except la.LinAlgError as exc:
        raise SolverError(f"SVD failed: {exc}") from exc
    order = np.argsort(svals)
    small = order[svals[order] <= tau0]
    if small.size == 0:
        raise ConfigurationError("no singular values below tau0")
    E = Vh.conj().T[:, small]  # columns e_1..e_N, ascending t
    M = op.n_modes
    area = op.config.lattice.cell_area
    scale = 1.0 / math.sqrt(area)

    def scalar_norm(coeff_m: np.ndarray) -> float:
        f = FourierField(
            {k: c * scale for k, c in zip(op.modes, coeff_m) if c != 0},
            op.config.lattice,
        )
        return sobolev_norm(f, s + 1.0, h)

    worst = 0.0
    N = E.shape[1]
    for _ in range(n_trials):
        lam = rng.standard_normal(N) + 1j * rng.standard_normal(N)
        lam /= np.linalg.norm(lam)
        if componentwise:
            # sum of randomly chosen C^2 components as one scalar field
            comps = rng.integers(1, 3, size=N)
            coeff = np.zeros(M, dtype=complex)
            for j in range(N):
                block = slice(0, M) if comps[j] == 1 else slice(M, 2 * M)
                coeff += lam[j] * E[block, j]
            worst = max(worst, scalar_norm(coeff))
        else:
            vec = E @ lam
            worst = max(
                worst, math.hypot(scalar_norm(vec[:M]), scalar_norm(vec[M:]))
            )
    return worst

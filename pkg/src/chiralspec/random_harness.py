"""Random tunneling perturbations: law, sampling, and Monte Carlo drivers.

Coefficient vectors gamma = (alpha, beta) are drawn from the truncated law
1_{B(0,R)} exp(phi) dL; trials derive independent streams from
(master seed, trial index), so results are order-independent and bit-exact
reproducible from the configuration alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .fields import AdmissibleBasis, ConfigurationError, assemble_Q
from .lattice import MoireLattice
from .operators import OperatorMatrix, potential_matrix
from .spectral import (
    Disc,
    EigenCloud,
    PolygonRegion,
    SolverError,
    count_in_region,
    per_cell_counts,
    smallest_singular_values,
    weyl_prediction,
)


class MCError(RuntimeError):
    """Too many per-trial failures to trust the run."""


@dataclass(frozen=True)
class PerturbationLaw:
    """Truncated density on C^D: uniform (phi = 0) or centered gaussian.

    The gaussian case records the gradient-bound exponent kappa4 of its
    log-density; samples always satisfy ||gamma|| <= R.
    """

    D: int
    R: float
    phi: str = "uniform"          # "uniform" | "gaussian"
    sigma: float = 1.0
    kappa4: float = 0.0

    def __post_init__(self):
        if self.D < 1:
            raise ConfigurationError("law dimension must be >= 1")
        if self.R <= 0:
            raise ConfigurationError("ball radius R must be > 0")
        if self.phi not in ("uniform", "gaussian"):
            raise ConfigurationError(f"unknown log-density {self.phi!r}")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One draw; rejection from the untruncated gaussian, or direct
        uniform-ball sampling when phi = 0."""
        if self.phi == "uniform":
            g = rng.standard_normal(2 * self.D)
            direction = g / np.linalg.norm(g)
            radius = self.R * rng.uniform() ** (1.0 / (2 * self.D))
            vec = radius * direction
            return vec[: self.D] + 1j * vec[self.D :]
        scale = self.sigma / math.sqrt(2.0)
        for attempt in range(10000):
            g = scale * (
                rng.standard_normal(self.D) + 1j * rng.standard_normal(self.D)
            )
            if np.linalg.norm(g) <= self.R:
                return g
        raise ConfigurationError(
            "rejection sampling stalled: sigma is too large for the ball radius R"
        )


def sample(law: PerturbationLaw, rng: np.random.Generator) -> np.ndarray:
    return law.sample(rng)


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent stream for one trial, derived from (master seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial,)))


@dataclass(frozen=True)
class Epsilon0:
    """Bookkeeping value C (log tau0^-1 + (log h^-1)^2)(h + h^2 log h^-1)."""

    C: float
    tau0: float
    h: float
    value: float


def epsilon0(C: float, tau0: float, h: float) -> Epsilon0:
    if not 0 < h < 1:
        raise ConfigurationError("epsilon0 needs 0 < h < 1")
    if not 0 < tau0 <= math.sqrt(h):
        raise ConfigurationError("epsilon0 needs 0 < tau0 <= sqrt(h)")
    logh = math.log(1.0 / h)
    val = C * (math.log(1.0 / tau0) + logh**2) * (h + h**2 * logh)
    return Epsilon0(C, tau0, h, val)


@dataclass(frozen=True)
class Threshold:
    """epsilon / (8 (C tau0)^(N-1)), kept in log space against underflow."""

    log_value: float
    value: float
    underflow: bool


def t1_threshold(epsilon: float, C: float, tau0: float, N: int) -> Threshold:
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be > 0")
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    log_value = math.log(epsilon) - math.log(8.0) - (N - 1) * math.log(C * tau0)
    underflow = log_value < math.log(5e-324)
    return Threshold(log_value, 0.0 if underflow else math.exp(log_value), underflow)


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    master_seed: int
    gamma_norm: float
    t1: float | None
    threshold: float | None
    passed: bool | None
    region_count: int | None
    cell_counts_ok: bool | None
    error: str | None = None

    def to_json_line(self, config_hash: str = "") -> str:
        obj = dict(self.__dict__)
        obj["config_hash"] = config_hash
        return json.dumps(obj, sort_keys=True)


@dataclass(frozen=True)
class MCResult:
    """Smallest-singular-value Monte Carlo summary."""

    records: tuple[TrialRecord, ...]
    t1_values: np.ndarray            # finite trials, in trial order
    threshold: float | None
    pass_fraction: float | None

    def log_t1_cdf(self) -> tuple[np.ndarray, np.ndarray]:
        """Empirical CDF of log t_1: (sorted log values, cumulative fractions)."""
        logs = np.sort(np.log(self.t1_values))
        return logs, np.arange(1, logs.size + 1) / logs.size

    def pass_fraction_at(self, threshold: float) -> float:
        return float(np.mean(self.t1_values >= threshold))


@dataclass(frozen=True)
class WeylMCResult:
    records: tuple[TrialRecord, ...]
    counts: np.ndarray
    prediction: float
    interior_cells: int

    @property
    def mean_count(self) -> float:
        return float(np.mean(self.counts))

    @property
    def median_abs_error(self) -> float:
        return float(np.median(np.abs(self.counts - self.prediction)))


def delta_eq6(tau0: float, h: float, kappa1: float, C0: float) -> float:
    """delta = tau0 h^(kappa1+2) / C0."""
    return tau0 * h ** (kappa1 + 2.0) / C0


def perturbed_matrix(
    base: OperatorMatrix,
    basis: AdmissibleBasis,
    gamma: np.ndarray,
    delta_scale: float,
    sparse: bool = False,
):
    """base + delta_scale * Q_gamma for gamma = (alpha, beta)."""
    D = basis.dimension
    if gamma.shape != (2 * D,):
        raise ConfigurationError(
            f"gamma has shape {gamma.shape}, expected ({2*D},)"
        )
    Q = assemble_Q(gamma[:D], gamma[D:], basis)
    P = potential_matrix(Q, base.modes, sparse=sparse)
    if sparse:
        import scipy.sparse as sp

        return sp.csr_matrix(base.matrix) + delta_scale * P
    return base.matrix + delta_scale * P


def mc_smallest_singular(
    base: OperatorMatrix,
    basis: AdmissibleBasis,
    law: PerturbationLaw,
    trials: int,
    delta_scale: float,
    master_seed: int = 0,
    threshold: float | None = None,
    sparse: bool | None = None,
) -> MCResult:
    """Per-trial smallest singular value of base + delta_scale * Q_gamma.

    The run fails when more than 1% of trials error out; individual failures
    are recorded, not fatal.
    """
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    if law.D != 2 * basis.dimension:
        raise ConfigurationError(
            f"law dimension {law.D} does not match 2 x basis dimension {2*basis.dimension}"
        )
    if sparse is None:
        sparse = base.dim > 600
    records = []
    t1s = []
    for trial in range(trials):
        rng = trial_rng(master_seed, trial)
        gamma = law.sample(rng)
        try:
            A = perturbed_matrix(base, basis, gamma, delta_scale, sparse=sparse)
            t1 = float(smallest_singular_values(A, 1)[0])
            records.append(
                TrialRecord(
                    trial=trial, master_seed=master_seed,
                    gamma_norm=float(np.linalg.norm(gamma)),
                    t1=t1,
                    threshold=threshold,
                    passed=(t1 >= threshold) if threshold is not None else None,
                    region_count=None, cell_counts_ok=None,
                )
            )
            t1s.append(t1)
        except (SolverError, la.LinAlgError) as exc:
            records.append(
                TrialRecord(
                    trial=trial, master_seed=master_seed,
                    gamma_norm=float(np.linalg.norm(gamma)),
                    t1=None, threshold=threshold, passed=None,
                    region_count=None, cell_counts_ok=None, error=str(exc),
                )
            )
    n_err = sum(1 for r in records if r.error)
    if n_err > 0.01 * trials:
        raise MCError(f"{n_err}/{trials} trials failed")
    t1_arr = np.array(t1s)
    frac = float(np.mean(t1_arr >= threshold)) if threshold is not None else None
    return MCResult(tuple(records), t1_arr, threshold, frac)


def mc_weyl(
    base: OperatorMatrix,
    basis: AdmissibleBasis,
    law: PerturbationLaw,
    trials: int,
    region: Disc | PolygonRegion,
    delta_scale: float,
    master_seed: int = 0,
    cell_window: int | None = None,
    lattice: MoireLattice | None = None,
) -> WeylMCResult:
    """Per-trial eigenvalue counts in a region, against the Weyl prediction.

    Also tallies per-cell counts inside a window of anchors when
    cell_window is given; a trial's cell_counts_ok records whether every
    such interior cell holds exactly 2 eigenvalues.
    """
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    lattice = lattice or base.config.lattice
    h = base.config.h
    zmax = (abs(region.center) + region.radius) if isinstance(region, Disc) else max(
        abs(v) for v in region.vertices
    )
    if zmax > h * base.config.cutoff_radius / 2.0:
        raise ConfigurationError(
            "region leaves the resolved spectral window |z| <= h*cutoff/2"
        )
    pred = weyl_prediction(region, h, lattice)
    records = []
    counts = []
    n_interior = 0
    for trial in range(trials):
        rng = trial_rng(master_seed, trial)
        gamma = law.sample(rng)
        try:
            A = perturbed_matrix(base, basis, gamma, delta_scale, sparse=False)
            w = la.eigvals(A)
            if not np.all(np.isfinite(w)):
                raise SolverError("non-finite eigenvalues")
            cloud = EigenCloud(w)
            cnt = count_in_region(cloud, region)
            cells_ok = None
            if cell_window is not None:
                cells = per_cell_counts(cloud, h, cell_window, lattice)
                n_interior = len(cells)
                cells_ok = all(v == 2 for v in cells.values())
            records.append(
                TrialRecord(
                    trial=trial, master_seed=master_seed,
                    gamma_norm=float(np.linalg.norm(gamma)),
                    t1=None, threshold=None, passed=None,
                    region_count=cnt, cell_counts_ok=cells_ok,
                )
            )
            counts.append(cnt)
        except (SolverError, la.LinAlgError) as exc:
            records.append(
                TrialRecord(
                    trial=trial, master_seed=master_seed,
                    gamma_norm=float(np.linalg.norm(gamma)),
                    t1=None, threshold=None, passed=None,
                    region_count=None, cell_counts_ok=None, error=str(exc),
                )
            )
    n_err = sum(1 for r in records if r.error)
    if n_err > 0.01 * trials:
        raise MCError(f"{n_err}/{trials} trials failed")
    return WeylMCResult(tuple(records), np.array(counts), pred, n_interior)

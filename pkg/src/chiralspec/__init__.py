"""Spectral laboratory for the chiral twisted-bilayer-graphene operator."""

from .lattice import DualCell, DualIndex, MoireLattice
from .fields import (
    AdmissibleBasis,
    ConfigurationError,
    FourierField,
    SymmetryReport,
    TunnelingPotential,
    admissible_basis,
    assemble_Q,
    check_symmetries,
    dirac_truncation,
    linf_norm,
    reflect,
    sobolev_norm,
    standard_U,
)
from .operators import (
    AssemblyConfig,
    OperatorMatrix,
    PerturbedOperator,
    apply_G,
    assemble,
    assemble_sparse,
    chiral_hamiltonian,
    perturb,
    potential_matrix,
)
from .spectral import (
    Disc,
    EigenCloud,
    MagicScanResult,
    PolygonRegion,
    SingularSpectrum,
    SolverError,
    band_floor,
    cluster_eigenvalues,
    count_in_region,
    count_small,
    eigenvalues,
    eigvec_regularity,
    magic_scan,
    per_cell_counts,
    singular_values,
    smallest_singular_values,
    weyl_prediction,
)

__version__ = "0.1.0"

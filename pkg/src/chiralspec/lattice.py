"""Moire lattice geometry.

The periodicity lattice Gamma = 4*pi*(i*w*Z + i*w^2*Z) with w = exp(2*pi*i/3),
its dual Gamma* = (w*Z + w^2*Z)/sqrt(3), and the half-open dual cells used for
per-cell eigenvalue counting.  Dual points are stored as integer index pairs;
complex values are recomputed on demand so lattice walks never accumulate
float error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

OMEGA: complex = complex(-0.5, math.sqrt(3.0) / 2.0)  # exp(2*pi*i/3)
SQRT3: float = math.sqrt(3.0)


class DualIndex(NamedTuple):
    """Integer coordinates (m, n) of the dual point (m*w + n*w^2)/sqrt(3)."""

    m: int
    n: int

    def __neg__(self) -> "DualIndex":
        return DualIndex(-self.m, -self.n)


@dataclass(frozen=True)
class MoireLattice:
    """Generators and cell geometry of Gamma and Gamma*."""

    omega: complex = OMEGA
    gamma1: complex = 4.0j * math.pi * OMEGA
    gamma2: complex = 4.0j * math.pi * OMEGA**2
    eta1: complex = OMEGA / SQRT3
    eta2: complex = OMEGA**2 / SQRT3
    cell_area: float = (4.0 * math.pi) ** 2 * SQRT3 / 2.0
    dual_cell_area: float = 1.0 / (2.0 * SQRT3)
    # columns of the inverse of [[Re eta1, Re eta2], [Im eta1, Im eta2]],
    # used to read off (s, t) cell coordinates of a complex point
    _dual_frame_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        frame = np.array(
            [[self.eta1.real, self.eta2.real], [self.eta1.imag, self.eta2.imag]]
        )
        object.__setattr__(self, "_dual_frame_inv", np.linalg.inv(frame))

    def dual_point(self, idx: DualIndex) -> complex:
        """Complex dual-lattice point named by integer indices (m, n)."""
        return (idx[0] * self.omega + idx[1] * self.omega**2) / SQRT3

    def lattice_point(self, m: int, n: int) -> complex:
        """Complex lattice point m*gamma1 + n*gamma2."""
        return m * self.gamma1 + n * self.gamma2

    def enumerate_dual(self, cutoff_radius: float) -> list[DualIndex]:
        """All dual indices with |dual_point| <= cutoff_radius.

        The result is lexicographically ordered in (m, n) and closed under
        negation.  |m*w + n*w^2|^2 = m^2 - m*n + n^2, so the membership test
        is exact integer arithmetic against 3*cutoff^2.
        """
        if cutoff_radius < 0:
            raise ValueError("cutoff_radius must be >= 0")
        bound = int(math.floor(cutoff_radius * math.sqrt(6.0))) + 1
        limit = 3.0 * cutoff_radius**2
        out = []
        for m in range(-bound, bound + 1):
            for n in range(-bound, bound + 1):
                if m * m - m * n + n * n <= limit:
                    out.append(DualIndex(m, n))
        return out

    def pairing(self, x: complex, freq: complex) -> float:
        """Phase Re(x * conj(freq)) of the plane wave exp(i*pairing)."""
        return (x * np.conj(freq)).real

    def cell_coords(self, point: complex, h: float) -> tuple[float, float]:
        """Coordinates (s, t) with point = h*(s*eta1 + t*eta2)."""
        w = point / h
        s, t = self._dual_frame_inv @ (w.real, w.imag)
        return float(s), float(t)

    def cell_of(self, point: complex, h: float) -> DualIndex:
        """Anchor index of the half-open cell h*C_{gamma*} containing point.

        The cell anchored at gamma* is the parallelogram
        gamma* + [0,1)*eta1 + [0,1)*eta2 scaled by h: it contains its anchor
        and the two edges emanating from it, and excludes the opposite edges;
        corner ties resolve toward the anchor.  Cell coordinates within 1e-9
        of an edge snap onto it, so anchors map to their own cell despite
        round-off; membership is exact for points farther from the boundary.
        """
        if h <= 0:
            raise ValueError("h must be > 0")
        s, t = self.cell_coords(point, h)
        return DualIndex(int(math.floor(s + 1e-9)), int(math.floor(t + 1e-9)))


@dataclass(frozen=True)
class DualCell:
    """Half-open primitive cell h*C_{gamma*} of the scaled dual lattice."""

    anchor: DualIndex
    h: float
    lattice: MoireLattice = field(default_factory=MoireLattice)

    def contains(self, point: complex) -> bool:
        return self.lattice.cell_of(point, self.h) == self.anchor

    @property
    def anchor_point(self) -> complex:
        return self.h * self.lattice.dual_point(self.anchor)

    @property
    def area(self) -> float:
        return self.h**2 * self.lattice.dual_cell_area

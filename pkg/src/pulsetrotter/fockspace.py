"""Truncated bosonic operators on a composite Fock space.

Composite basis states are ordered row-major over sites: site 0 is the
slowest-varying index, so for ``local_dims=[3, 3]`` the state ``|n0 n1>`` has
index ``3*n0 + n1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from itertools import product

import numpy as np


@dataclass(frozen=True)
class HilbertLayout:
    local_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.local_dims)
        if not dims:
            raise ValueError("layout needs at least one site")
        if any(d < 2 for d in dims):
            raise ValueError(f"local dimensions must be >= 2, got {dims}")
        object.__setattr__(self, "local_dims", dims)

    @property
    def site_count(self) -> int:
        return len(self.local_dims)

    @property
    def dim(self) -> int:
        return int(np.prod(self.local_dims))

    def occupations(self) -> np.ndarray:
        """(dim, site_count) integer array of occupation numbers per basis state."""
        return np.array(list(product(*(range(d) for d in self.local_dims))), dtype=int)

    def index(self, occupation) -> int:
        occ = tuple(occupation)
        if len(occ) != self.site_count:
            raise ValueError(f"expected {self.site_count} occupations, got {len(occ)}")
        idx = 0
        for n, d in zip(occ, self.local_dims):
            if not 0 <= n < d:
                raise ValueError(f"occupation {occ} outside layout {self.local_dims}")
            idx = idx * d + n
        return idx

    def label(self, index: int) -> str:
        return "|" + "".join(str(n) for n in self.occupations()[index]) + ">"


def as_layout(layout) -> HilbertLayout:
    if isinstance(layout, HilbertLayout):
        return layout
    return HilbertLayout(tuple(layout))


@dataclass(frozen=True, eq=False)
class FockOperator:
    """Dense operator on a :class:`HilbertLayout`.

    Supports ``+``, ``-``, scalar ``*`` and ``@`` between operators on the same
    layout. Units are whatever the caller put in (rad/ns for Hamiltonians).
    """

    layout: HilbertLayout
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        layout = as_layout(self.layout)
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (layout.dim, layout.dim):
            raise ValueError(f"matrix shape {m.shape} does not match layout dimension {layout.dim}")
        m.setflags(write=False)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "matrix", m)

    def _check(self, other: FockOperator):
        if other.layout != self.layout:
            raise ValueError(f"layout mismatch: {self.layout.local_dims} vs {other.layout.local_dims}")

    def __add__(self, other):
        self._check(other)
        return FockOperator(self.layout, self.matrix + other.matrix)

    def __sub__(self, other):
        self._check(other)
        return FockOperator(self.layout, self.matrix - other.matrix)

    def __mul__(self, scalar):
        return FockOperator(self.layout, scalar * self.matrix)

    __rmul__ = __mul__

    def __neg__(self):
        return FockOperator(self.layout, -self.matrix)

    def __matmul__(self, other):
        self._check(other)
        return FockOperator(self.layout, self.matrix @ other.matrix)

    def dag(self) -> FockOperator:
        return FockOperator(self.layout, self.matrix.conj().T)

    def commutator(self, other: FockOperator) -> FockOperator:
        return self @ other - other @ self

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= atol)


@dataclass(frozen=True, eq=False)
class SubspaceProjector:
    layout: HilbertLayout
    basis_indices: tuple[int, ...]

    def __post_init__(self):
        layout = as_layout(self.layout)
        idx = tuple(int(i) for i in self.basis_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("basis indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= layout.dim):
            raise ValueError(f"basis indices out of range [0, {layout.dim})")
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "basis_indices", idx)

    @property
    def rank(self) -> int:
        return len(self.basis_indices)

    @property
    def matrix(self) -> np.ndarray:
        p = np.zeros((self.layout.dim, self.layout.dim))
        p[self.basis_indices, self.basis_indices] = 1.0
        return p

    def restrict(self, full: np.ndarray) -> np.ndarray:
        """Block of ``full`` on the projector's basis, i.e. ``P full P`` in subspace coordinates."""
        ix = np.asarray(self.basis_indices)
        return np.asarray(full)[np.ix_(ix, ix)]


def _local_lowering(d: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1)


def _embed(layout: HilbertLayout, site: int, local: np.ndarray) -> np.ndarray:
    if not 0 <= site < layout.site_count:
        raise IndexError(f"site {site} out of range for {layout.site_count} sites")
    factors = [np.eye(d) for d in layout.local_dims]
    factors[site] = local
    return reduce(np.kron, factors)


def lowering_op(layout, site: int) -> FockOperator:
    layout = as_layout(layout)
    if not 0 <= site < layout.site_count:
        raise IndexError(f"site {site} out of range for {layout.site_count} sites")
    return FockOperator(layout, _embed(layout, site, _local_lowering(layout.local_dims[site])))


def raising_op(layout, site: int) -> FockOperator:
    return lowering_op(layout, site).dag()


def number_op(layout, site: int) -> FockOperator:
    layout = as_layout(layout)
    if not 0 <= site < layout.site_count:
        raise IndexError(f"site {site} out of range for {layout.site_count} sites")
    d = layout.local_dims[site]
    return FockOperator(layout, _embed(layout, site, np.diag(np.arange(d, dtype=float))))


def total_number_op(layout) -> FockOperator:
    layout = as_layout(layout)
    return FockOperator(layout, np.diag(layout.occupations().sum(axis=1).astype(float)))


def identity_op(layout) -> FockOperator:
    layout = as_layout(layout)
    return FockOperator(layout, np.eye(layout.dim))


def excitation_sectors(layout) -> dict[int, list[int]]:
    """Basis indices grouped by total excitation number, ascending in both."""
    layout = as_layout(layout)
    totals = layout.occupations().sum(axis=1)
    return {int(n): [int(i) for i in np.flatnonzero(totals == n)] for n in np.unique(totals)}


def computational_projector(layout) -> SubspaceProjector:
    """Projector onto states with every site occupation at most 1."""
    layout = as_layout(layout)
    occ = layout.occupations()
    return SubspaceProjector(layout, tuple(int(i) for i in np.flatnonzero((occ <= 1).all(axis=1))))

"""Extended Bose-Hubbard chain in the hard-core (two levels per site) space.

All coefficients are angular frequencies in rad/ns, times in ns, hbar = 1.
Chains use open boundaries: bonds (i, i+1) for i = 0 .. sites-2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fockspace import FockOperator, HilbertLayout, lowering_op, number_op, raising_op
from .propagation import matrix_exp

MAX_EXACT_SITES = 12
LABELS = ("BH_step", "E_step", "exact_full", "trotter")


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class EbhParams:
    """Hopping ``J`` and potential ``V = V_min + n_v * delta_V`` on an open chain.

    When ``V`` is given explicitly it overrides the grid value.
    """

    J: float = -0.1
    sites: int = 2
    V_min: float = 0.0
    delta_V: float = 0.1
    n_v: int = 1
    V: float | None = None

    def __post_init__(self):
        if self.sites < 2:
            raise ValueError("an EBH chain needs at least 2 sites")
        if not self.delta_V > 0:
            raise ValueError("delta_V must be positive")
        if self.n_v < 0:
            raise ValueError("n_v must be non-negative")
        if self.V is None:
            object.__setattr__(self, "V", self.V_min + self.n_v * self.delta_V)

    @property
    def layout(self) -> HilbertLayout:
        return HilbertLayout((2,) * self.sites)


@dataclass(frozen=True, eq=False)
class ModelUnitary:
    matrix: np.ndarray = field(repr=False)
    duration: float
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")
        m = np.asarray(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def hopping_bond(layout, i: int) -> FockOperator:
    """``b_i^dag b_{i+1} + b_i b_{i+1}^dag``."""
    return raising_op(layout, i) @ lowering_op(layout, i + 1) + lowering_op(layout, i) @ raising_op(layout, i + 1)


def density_bond(layout, i: int) -> FockOperator:
    return number_op(layout, i) @ number_op(layout, i + 1)


def ebh_terms(p: EbhParams) -> list[tuple[float, FockOperator]]:
    """Bond terms in Trotter product order: (J, hop_i), (V, nn_i) for each bond."""
    layout = p.layout
    terms = []
    for i in range(p.sites - 1):
        terms.append((p.J, hopping_bond(layout, i)))
        terms.append((p.V, density_bond(layout, i)))
    return terms


def ebh_hamiltonian(p: EbhParams) -> FockOperator:
    terms = ebh_terms(p)
    total = 0.0 * terms[0][1]
    for coeff, op in terms:
        total = total + coeff * op
    return total


_PAIR = HilbertLayout((2, 2))


def bh_step_unitary(J: float, dt: float) -> ModelUnitary:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return ModelUnitary(matrix_exp(J * hopping_bond(_PAIR, 0), dt), dt, "BH_step")


def e_step_unitary(V: float, dt: float) -> ModelUnitary:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return ModelUnitary(np.diag([1.0, 1.0, 1.0, np.exp(-1j * V * dt)]), dt, "E_step")


def exact_evolution(p: EbhParams, T_s: float) -> ModelUnitary:
    if T_s < 0:
        raise ValueError("T_s must be non-negative")
    if p.sites > MAX_EXACT_SITES:
        raise CapacityError(f"dense exponential limited to {MAX_EXACT_SITES} sites, got {p.sites}")
    return ModelUnitary(matrix_exp(ebh_hamiltonian(p), T_s), T_s, "exact_full")

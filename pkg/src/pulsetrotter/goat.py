"""Projected-infidelity objective and its exact GOAT gradient.

``g = 1 - |Tr(U_M^dag P U_D P)|^2 / dim^2`` with ``dim`` the projector rank
(4 for two transmons), so ``g(U, U) = 0`` and ``g`` lies in ``[0, 1]``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernel
from .device import ControlAnsatz, DeviceSpec, Saturation, coupling_operator, drift_diagonal, hamiltonian_evaluators
from .fockspace import SubspaceProjector, computational_projector, excitation_sectors
from .model import ModelUnitary
from .propagation import IntegratorConfig, PropagationError, propagate_goat, propagate_unitary

BACKENDS = ("compiled", "reference")


@dataclass(frozen=True, eq=False)
class GoatProblem:
    """One pulse-synthesis problem: reach ``target`` on the projector's subspace in ``T_c``.

    ``backend="compiled"`` propagates only the computational columns inside
    their excitation sectors with a numba kernel; ``"reference"`` integrates
    the full dense equations with :mod:`pulsetrotter.propagation`. Both solve
    the same equations.
    """

    device: DeviceSpec
    target: np.ndarray
    T_c: float
    M: int
    projector: SubspaceProjector | None = None
    saturation: Saturation | None = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    backend: str = "compiled"
    target_label: str = ""

    def __post_init__(self):
        if isinstance(self.target, ModelUnitary):
            object.__setattr__(self, "target_label", self.target_label or self.target.label)
            object.__setattr__(self, "target", self.target.matrix)
        tgt = np.array(self.target, dtype=complex)
        tgt.setflags(write=False)
        object.__setattr__(self, "target", tgt)
        if self.projector is None:
            object.__setattr__(self, "projector", computational_projector(self.device.layout))
        if self.saturation is None:
            object.__setattr__(self, "saturation", self.device.saturation())
        if self.projector.layout != self.device.layout:
            raise ValueError("projector layout differs from the device layout")
        if tgt.shape != (self.projector.rank, self.projector.rank):
            raise ValueError(f"target shape {tgt.shape} does not match projector rank {self.projector.rank}")
        if not self.T_c > 0:
            raise ValueError("T_c must be positive")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")

    @property
    def dim(self) -> int:
        return self.projector.rank

    @property
    def n_params(self) -> int:
        return 3 * self.M

    def with_integrator(self, cfg: IntegratorConfig) -> GoatProblem:
        return dataclasses.replace(self, integrator=cfg)

    def ansatz(self, params) -> ControlAnsatz:
        p = np.asarray(params, dtype=float)
        if p.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {p.shape}")
        return ControlAnsatz.from_params(self.T_c, p)

    @cached_property
    def sector_system(self) -> _kernel.SectorSystem:
        return _kernel.build_sector_system(drift_diagonal(self.device), coupling_operator(self.device),
                                           excitation_sectors(self.device.layout), self.projector.basis_indices)

    def metadata(self) -> dict:
        return {"dim": self.dim, "T_c_ns": self.T_c, "M": self.M, "target_label": self.target_label,
                "integrator_tolerances": {"abs_tol": self.integrator.abs_tol, "rel_tol": self.integrator.rel_tol},
                "backend": self.backend}


@dataclass(frozen=True)
class ObjectiveValue:
    infidelity: float
    overlap: complex
    gradient: np.ndarray | None = None
    steps: int = 0


def embed_target(U4, projector: SubspaceProjector) -> np.ndarray:
    U4 = np.asarray(U4, dtype=complex)
    if U4.shape != (projector.rank, projector.rank):
        raise ValueError(f"unitary shape {U4.shape} does not match projector rank {projector.rank}")
    full = np.zeros((projector.layout.dim,) * 2, dtype=complex)
    ix = np.asarray(projector.basis_indices)
    full[np.ix_(ix, ix)] = U4
    return full


def projected_overlap(target: np.ndarray, projected: np.ndarray) -> complex:
    """``Tr(U_M^dag P U P)`` with ``projected`` already restricted to the subspace."""
    return complex(np.sum(np.conj(target) * projected))


def _infidelity_from_overlap(ov: complex, dim: int) -> float:
    # integration error can push |ov| a hair past dim
    return float(min(1.0, max(0.0, 1.0 - abs(ov) ** 2 / dim ** 2)))


def _propagate_compiled(problem: GoatProblem, params, grad: bool):
    sysm = problem.sector_system
    a, mu, sg = problem.ansatz(params).columns()
    P = 1 + (problem.n_params if grad else 0)
    Y0 = np.zeros((P, sysm.size), dtype=complex)
    Y0[0] = sysm.y0
    cfg, s = problem.integrator, problem.saturation
    Y, ns, nr, nfev, status, t_reached = _kernel.propagate_flat(
        Y0, float(problem.T_c), cfg.abs_tol, cfg.rel_tol, float(cfg.max_step), sysm.diag, sysm.pair_i,
        sysm.pair_j, sysm.pair_v, problem.device.frame_detuning, np.ascontiguousarray(a),
        np.ascontiguousarray(mu), np.ascontiguousarray(sg), s.A, s.B, s.Q, s.gain, grad)
    if status != _kernel.STATUS_OK:
        what = "step size underflow" if status == _kernel.STATUS_UNDERFLOW else "non-finite right-hand side"
        raise PropagationError(f"{what} at t={t_reached:.6g} ns for params {np.asarray(params).tolist()}",
                               t_reached)
    proj = sysm.projected(Y, problem.projector.basis_indices)
    return proj[0], (proj[1:] if grad else None), ns


def _propagate_reference(problem: GoatProblem, params, grad: bool):
    ansatz = problem.ansatz(params)
    H, dH = hamiltonian_evaluators(problem.device, problem.saturation, ansatz)
    ix = np.asarray(problem.projector.basis_indices)
    U0 = np.eye(problem.device.layout.dim, dtype=complex)[:, ix]
    try:
        if grad:
            res = propagate_goat(H, dH, problem.T_c, problem.integrator, U0=U0)
        else:
            res = propagate_unitary(H, problem.T_c, problem.integrator, U0=U0)
    except PropagationError as exc:
        raise PropagationError(f"{exc} for params {np.asarray(params).tolist()}", exc.t_reached) from exc
    partials = res.partials[:, ix, :] if grad else None
    return res.U_final[ix, :], partials, res.steps_taken


def projected_propagator(problem: GoatProblem, params) -> np.ndarray:
    """``P U_D(params, T_c) P`` in subspace coordinates."""
    run = _propagate_compiled if problem.backend == "compiled" else _propagate_reference
    return run(problem, params, False)[0]


def full_propagator(problem: GoatProblem, params, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Dense device propagator on the whole truncated space (reference integrator)."""
    H, _ = hamiltonian_evaluators(problem.device, problem.saturation, problem.ansatz(params))
    return propagate_unitary(H, problem.T_c, cfg or problem.integrator).U_final


def infidelity(problem: GoatProblem, params) -> ObjectiveValue:
    run = _propagate_compiled if problem.backend == "compiled" else _propagate_reference
    U, _, ns = run(problem, params, False)
    ov = projected_overlap(problem.target, U)
    return ObjectiveValue(_infidelity_from_overlap(ov, problem.dim), ov, None, ns)


def infidelity_and_gradient(problem: GoatProblem, params) -> ObjectiveValue:
    run = _propagate_compiled if problem.backend == "compiled" else _propagate_reference
    U, dU, ns = run(problem, params, True)
    ov = projected_overlap(problem.target, U)
    dov = np.einsum("ij,kij->k", np.conj(problem.target), dU)
    grad = -2.0 / problem.dim ** 2 * np.real(np.conj(ov) * dov)
    return ObjectiveValue(_infidelity_from_overlap(ov, problem.dim), ov, grad, ns)

"""Unitary propagation: dense Hermitian exponentials and adaptive Runge-Kutta.

The integrator is the Dormand-Prince 5(4) embedded pair with FSAL and a
standard proportional step controller. It works on complex arrays of any
shape, so the same routine propagates a full unitary, a block of columns, or
the stacked GOAT state ``(U, dU/da_1, ..., dU/da_P)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fockspace import FockOperator

# Dormand-Prince 5(4) tableau
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between 5th and embedded 4th order weights
DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0


class PropagationError(RuntimeError):
    """Integration could not reach the final time."""

    def __init__(self, message: str, t_reached: float):
        super().__init__(message)
        self.t_reached = t_reached


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_step: float = np.inf
    method_order: int = 5

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.method_order != 5:
            raise ValueError("only the Dormand-Prince 5(4) pair (method_order=5) is implemented")

    @classmethod
    def tight(cls) -> IntegratorConfig:
        """Tolerances used for final verification of optimized pulses."""
        return cls(abs_tol=1e-12, rel_tol=1e-12)


@dataclass
class PropagationResult:
    U_final: np.ndarray
    partials: np.ndarray | None = None
    steps_taken: int = 0
    rhs_evals: int = 0
    rejected: int = 0
    times: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def _matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, FockOperator) else np.asarray(op)


def matrix_exp(H, t: float) -> np.ndarray:
    """``exp(-i H t)`` for Hermitian ``H`` via eigendecomposition."""
    m = _matrix(H).astype(complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix_exp needs a square matrix")
    if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-10:
        raise ValueError("matrix_exp requires a Hermitian generator")
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def _error_norm(err: np.ndarray, y: np.ndarray, y_new: np.ndarray, cfg: IntegratorConfig) -> float:
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((np.abs(err) / scale) ** 2)))


def _initial_step(f, t0, y0, f0, t_end, cfg: IntegratorConfig) -> float:
    # Hairer, Norsett & Wanner, Solving ODEs I, II.4
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y0)
    d0 = np.sqrt(np.mean((np.abs(y0) / scale) ** 2))
    d1 = np.sqrt(np.mean((np.abs(f0) / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_end - t0)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean((np.abs(f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, cfg.max_step, t_end - t0)


def _rk_stages(f, t, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        acc = y.copy()
        for a, k in zip(DP_A[i], ks):
            if a:
                acc += (h * a) * k
        if i == 6:
            y_new = acc
        ks.append(f(t + DP_C[i] * h, acc))
    return y_new, ks


def dormand_prince(f: Callable, y0: np.ndarray, t_end: float, cfg: IntegratorConfig,
                   t_grid: Sequence[float] | None = None):
    """Integrate ``y' = f(t, y)`` from 0 to ``t_end``.

    With ``t_grid`` the accepted-step sequence of a previous run is replayed
    without error control, which reproduces that run's step sequence exactly.

    Returns ``(y_final, times, rhs_evals, rejected)``.
    """
    y = np.array(y0, dtype=complex)
    t = 0.0
    if t_end == 0.0:
        return y, np.array([0.0]), 0, 0
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    k1 = f(t, y)
    nfev = 1
    if not np.all(np.isfinite(k1)):
        raise PropagationError("non-finite right-hand side at t=0", 0.0)

    if t_grid is not None:
        grid = np.asarray(t_grid, dtype=float)
        for t0, t1 in zip(grid[:-1], grid[1:]):
            y, ks = _rk_stages(f, t0, y, t1 - t0, k1)
            k1 = ks[6]
            nfev += 6
        return y, grid.copy(), nfev, 0

    h = _initial_step(f, t, y, k1, t_end, cfg)
    nfev += 1
    times = [0.0]
    rejected = 0
    while t < t_end:
        h = min(h, cfg.max_step)
        last = t + 1.01 * h >= t_end
        if last:
            h = t_end - t
        elif h <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise PropagationError(f"step size underflow at t={t:.6g}", t)
        y_new, ks = _rk_stages(f, t, y, h, k1)
        nfev += 6
        err_vec = h * sum(e * k for e, k in zip(DP_E, ks) if e)
        err = _error_norm(err_vec, y, y_new, cfg)
        if not np.isfinite(err):
            raise PropagationError(f"non-finite right-hand side near t={t:.6g}", t)
        if err <= 1.0:
            t = t_end if last else t + h
            y = y_new
            k1 = ks[6]
            times.append(t)
            fac = FAC_MAX if err == 0 else min(FAC_MAX, max(FAC_MIN, SAFETY * err ** -0.2))
            h *= fac
        else:
            rejected += 1
            h *= max(FAC_MIN, SAFETY * err ** -0.2)
    return y, np.array(times), nfev, rejected


def propagate_unitary(H_of_t: Callable[[float], np.ndarray], T_c: float, cfg: IntegratorConfig | None = None,
                      U0: np.ndarray | None = None, t_grid=None) -> PropagationResult:
    """Solve ``dU/dt = -i H(t) U`` on ``[0, T_c]``.

    ``U0`` defaults to the identity; passing a block of columns propagates only
    those columns.
    """
    cfg = cfg or IntegratorConfig()
    if U0 is None:
        dim = _matrix(H_of_t(0.0)).shape[0]
        U0 = np.eye(dim, dtype=complex)

    def rhs(t, u):
        return -1j * (_matrix(H_of_t(t)) @ u)

    y, times, nfev, rej = dormand_prince(rhs, U0, T_c, cfg, t_grid)
    return PropagationResult(U_final=y, steps_taken=len(times) - 1, rhs_evals=nfev,
                             rejected=rej, times=times)


def propagate_goat(H_of_t: Callable[[float], np.ndarray], dH_dalpha_of_t, T_c: float,
                   cfg: IntegratorConfig | None = None, U0: np.ndarray | None = None,
                   t_grid=None) -> PropagationResult:
    """Jointly propagate ``U`` and its parameter derivatives.

    ``dH_dalpha_of_t`` is either a callable returning a ``(P, n, n)`` stack or
    a sequence of ``P`` callables, one per parameter. All ``1 + P`` matrices
    share one adaptive step sequence.
    """
    cfg = cfg or IntegratorConfig()
    if callable(dH_dalpha_of_t):
        dH = dH_dalpha_of_t
    else:
        evaluators = list(dH_dalpha_of_t)

        def dH(t):
            return np.stack([_matrix(g(t)) for g in evaluators]) if evaluators else None

    h0 = _matrix(H_of_t(0.0))
    if U0 is None:
        U0 = np.eye(h0.shape[0], dtype=complex)
    d0 = dH(0.0)
    n_par = 0 if d0 is None else len(d0)
    y0 = np.zeros((1 + n_par,) + U0.shape, dtype=complex)
    y0[0] = U0

    def rhs(t, y):
        H = _matrix(H_of_t(t))
        out = H @ y
        if n_par:
            out[1:] += dH(t) @ y[0]
        return -1j * out

    y, times, nfev, rej = dormand_prince(rhs, y0, T_c, cfg, t_grid)
    return PropagationResult(U_final=y[0], partials=y[1:], steps_taken=len(times) - 1,
                             rhs_evals=nfev, rejected=rej, times=times)

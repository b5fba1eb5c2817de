"""Two-transmon device with a tunable coupling, in the idling-frequency frame.

Frequencies are stored as angular frequencies (rad/ns); the ``*_ghz``
constructors take linear frequencies and multiply by 2*pi.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fockspace import FockOperator, HilbertLayout, lowering_op, number_op, raising_op

TWO_PI = 2.0 * np.pi

# Table 1 of the device reference, linear GHz
TABLE1_GHZ = {
    "omega_ghz": (4.16, 4.00),
    "delta_ghz": (-0.220, -0.210),
    "omega_int_ghz": 4.16,
    "gamma_min_ghz": -0.04,
    "gamma_max_ghz": 0.002,
}
SATURATION_GAIN = 4.0


@dataclass(frozen=True)
class DeviceSpec:
    omega: tuple[float, ...]
    delta: tuple[float, ...]
    omega_int: float
    omega_idle: tuple[float, ...]
    gamma_min: float
    gamma_max: float
    levels: int = 3

    def __post_init__(self):
        for name in ("omega", "delta", "omega_idle"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if not len(self.omega) == len(self.delta) == len(self.omega_idle):
            raise ValueError("omega, delta and omega_idle must have equal lengths")
        if not self.gamma_min < 0 < self.gamma_max:
            raise ValueError("coupling bounds must satisfy gamma_min < 0 < gamma_max")
        if self.levels < 2:
            raise ValueError("each transmon needs at least 2 levels")

    @classmethod
    def from_ghz(cls, omega_ghz: Sequence[float], delta_ghz: Sequence[float], omega_int_ghz: float,
                 gamma_min_ghz: float, gamma_max_ghz: float, omega_idle_ghz: Sequence[float] | None = None,
                 levels: int = 3) -> DeviceSpec:
        idle = omega_ghz if omega_idle_ghz is None else omega_idle_ghz
        return cls(
            omega=tuple(TWO_PI * w for w in omega_ghz),
            delta=tuple(TWO_PI * d for d in delta_ghz),
            omega_int=TWO_PI * omega_int_ghz,
            omega_idle=tuple(TWO_PI * w for w in idle),
            gamma_min=TWO_PI * gamma_min_ghz,
            gamma_max=TWO_PI * gamma_max_ghz,
            levels=levels,
        )

    @classmethod
    def table1(cls, levels: int = 3) -> DeviceSpec:
        return cls.from_ghz(**TABLE1_GHZ, levels=levels)

    @property
    def layout(self) -> HilbertLayout:
        return HilbertLayout((self.levels,) * len(self.omega))

    @property
    def frame_detuning(self) -> float:
        """Oscillation frequency of the coupling term in the rotating frame."""
        return self.omega_idle[0] - self.omega_idle[1]

    def saturation(self, gain: float = SATURATION_GAIN) -> Saturation:
        return Saturation(self.gamma_min, self.gamma_max, gain)


@dataclass(frozen=True)
class ControlAnsatz:
    """Coupling waveform ``sum_m a_m exp(-(t - mu_m)^2 / (2 sigma_m^2))``."""

    T_c: float
    gaussians: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        g = tuple(tuple(float(v) for v in row) for row in self.gaussians)
        if not self.T_c > 0:
            raise ValueError("T_c must be positive")
        if any(len(row) != 3 for row in g):
            raise ValueError("each Gaussian is (a, mu, sigma)")
        if any(row[2] <= 0 for row in g):
            raise ValueError("Gaussian widths must be positive")
        object.__setattr__(self, "gaussians", g)

    @classmethod
    def from_params(cls, T_c: float, params) -> ControlAnsatz:
        p = np.asarray(params, dtype=float)
        if p.ndim != 1 or p.size % 3:
            raise ValueError("parameter vector length must be a multiple of 3")
        return cls(T_c, tuple(map(tuple, p.reshape(-1, 3))))

    @property
    def M(self) -> int:
        return len(self.gaussians)

    @property
    def params(self) -> np.ndarray:
        """Flat ``[a_0, mu_0, sigma_0, a_1, ...]``."""
        return np.array(self.gaussians, dtype=float).reshape(-1)

    def columns(self):
        g = np.array(self.gaussians, dtype=float).reshape(-1, 3)
        return g[:, 0], g[:, 1], g[:, 2]


@dataclass(frozen=True)
class Saturation:
    """Generalized logistic with asymptotes ``A < 0 < B`` and ``S(0) = 0``.

    ``S(eps) = A + (B - A) / (1 + Q exp(-2 gain eps / (B - A)))`` with
    ``Q = -B/A``. It is evaluated as
    ``(B - A) Q (1 - e^x) / ((1 + Q e^x)(1 + Q))``, which is the same function
    but gives ``S(0) = 0`` without rounding.
    """

    A: float
    B: float
    gain: float = SATURATION_GAIN

    def __post_init__(self):
        if not self.A < 0 < self.B:
            raise ValueError("saturation needs A < 0 < B")

    @property
    def Q(self) -> float:
        return -self.B / self.A

    @property
    def width(self) -> float:
        return self.B - self.A


_X_CLIP = 700.0


def _logistic_arg(s: Saturation, eps):
    return np.clip(-2.0 * s.gain * np.asarray(eps, dtype=float) / s.width, -_X_CLIP, _X_CLIP)


def saturate(s: Saturation, eps):
    x = _logistic_arg(s, eps)
    q = s.Q
    pos = x > 0
    # divide through by e^x where it is large
    e_neg = np.exp(-np.abs(x))
    num = np.where(pos, e_neg - 1.0, -np.expm1(x))
    den = np.where(pos, (e_neg + q), (1.0 + q * np.exp(np.minimum(x, 0.0)))) * (1.0 + q)
    out = s.width * q * num / den
    return out if np.ndim(out) else float(out)


def saturate_derivative(s: Saturation, eps):
    """``dS/deps = 2 gain Q e^x / (1 + Q e^x)^2``, ``x = -2 gain eps / (B - A)``."""
    x = _logistic_arg(s, eps)
    q = s.Q
    e = np.exp(-np.abs(x))
    # for x > 0 use Q e^-x / (e^-x + Q)^2
    out = 2.0 * s.gain * q * e / np.where(x > 0, (e + q) ** 2, (1.0 + q * e) ** 2)
    return out if np.ndim(out) else float(out)


def raw_coupling(ansatz: ControlAnsatz, t):
    a, mu, sig = ansatz.columns()
    t = np.asarray(t, dtype=float)
    z = (t[..., None] - mu) / sig
    out = np.exp(-0.5 * z * z) @ a
    return out if np.ndim(out) else float(out)


def ansatz_partials(ansatz: ControlAnsatz, t: float) -> np.ndarray:
    """Gradient of :func:`raw_coupling` at ``t`` in the flat parameter order."""
    a, mu, sig = ansatz.columns()
    d = t - mu
    g = np.exp(-0.5 * (d / sig) ** 2)
    out = np.empty((ansatz.M, 3))
    out[:, 0] = g
    out[:, 1] = a * d / sig ** 2 * g
    out[:, 2] = a * d ** 2 / sig ** 3 * g
    return out.reshape(-1)


def coupling_operator(spec: DeviceSpec) -> np.ndarray:
    """``a_1^dag a_2`` on the device layout (real matrix)."""
    lay = spec.layout
    return (raising_op(lay, 0) @ lowering_op(lay, 1)).matrix.real.copy()


def drift_diagonal(spec: DeviceSpec) -> np.ndarray:
    """Diagonal of ``sum_i (w_int - w_idle_i) n_i + delta_i/2 n_i (n_i - 1)``."""
    occ = spec.layout.occupations()
    diag = np.zeros(occ.shape[0])
    for i in range(occ.shape[1]):
        n = occ[:, i]
        diag += (spec.omega_int - spec.omega_idle[i]) * n + 0.5 * spec.delta[i] * n * (n - 1)
    return diag


def drift_hamiltonian(spec: DeviceSpec) -> FockOperator:
    return FockOperator(spec.layout, np.diag(drift_diagonal(spec)))


def control_matrix(spec: DeviceSpec, t: float, K: np.ndarray | None = None) -> np.ndarray:
    """``e^{i D t} a_1^dag a_2 + h.c.``, the operator multiplying the saturated coupling."""
    K = coupling_operator(spec) if K is None else K
    ph = np.exp(1j * spec.frame_detuning * t)
    return ph * K + np.conj(ph) * K.T


def rotating_frame_matrix(spec: DeviceSpec, coupling_value: float, t: float, out: np.ndarray | None = None,
                          drift: np.ndarray | None = None, K: np.ndarray | None = None) -> np.ndarray:
    if len(spec.omega) != 2:
        raise ValueError("the rotating-frame Hamiltonian is defined for two transmons")
    drift = drift_diagonal(spec) if drift is None else drift
    K = coupling_operator(spec) if K is None else K
    dim = drift.size
    if out is None:
        out = np.empty((dim, dim), dtype=complex)
    elif out.shape != (dim, dim):
        raise ValueError(f"scratch matrix has shape {out.shape}, expected {(dim, dim)}")
    ph = coupling_value * np.exp(1j * spec.frame_detuning * t)
    np.multiply(K, ph, out=out)
    out += np.conj(ph) * K.T
    out[np.diag_indices(dim)] += drift
    return out


def rotating_frame_hamiltonian(spec: DeviceSpec, coupling_value: float, t: float) -> FockOperator:
    return FockOperator(spec.layout, rotating_frame_matrix(spec, coupling_value, t))


def hamiltonian_evaluators(spec: DeviceSpec, saturation: Saturation, ansatz: ControlAnsatz):
    """``H(t)`` and the stacked ``dH/dalpha(t)`` for a saturated Gaussian control."""
    drift = drift_diagonal(spec)
    K = coupling_operator(spec)

    def H_of_t(t):
        return rotating_frame_matrix(spec, saturate(saturation, raw_coupling(ansatz, t)), t, drift=drift, K=K)

    def dH_of_t(t):
        slope = saturate_derivative(saturation, raw_coupling(ansatz, t))
        return (slope * ansatz_partials(ansatz, t))[:, None, None] * control_matrix(spec, t, K)

    return H_of_t, dH_of_t

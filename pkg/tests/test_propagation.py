import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_hermitian
from pulsetrotter.device import ControlAnsatz, hamiltonian_evaluators
from pulsetrotter.propagation import (IntegratorConfig, PropagationError, dormand_prince, matrix_exp,
                                      propagate_goat, propagate_unitary)

CFG = IntegratorConfig()
TIGHT = IntegratorConfig(1e-12, 1e-12)


def taylor_expm(A):
    # scaling and squaring with a plain Taylor series
    s = max(0, int(np.ceil(np.log2(max(np.linalg.norm(A, 1), 1e-300)))) + 1)
    B = A / 2 ** s
    out = np.eye(A.shape[0], dtype=complex)
    term = np.eye(A.shape[0], dtype=complex)
    for k in range(1, 30):
        term = term @ B / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def pulse_H(device, params=(-0.02, 25.0, 6.0, 0.01, 30.0, 3.0), T_c=50.0):
    a = ControlAnsatz.from_params(T_c, params)
    return hamiltonian_evaluators(device, device.saturation(), a)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(0.0, 1e-10)
    with pytest.raises(ValueError):
        IntegratorConfig(method_order=4)
    with pytest.raises(ValueError):
        IntegratorConfig(max_step=0.0)
    assert IntegratorConfig.tight().rel_tol == 1e-12


def test_matrix_exp(rng):
    H = random_hermitian(rng, 9)
    assert np.allclose(matrix_exp(H, 0.0), np.eye(9), atol=1e-15)
    d = np.array([0.3, -1.0, 2.0])
    assert np.allclose(matrix_exp(np.diag(d), 1.7), np.diag(np.exp(-1j * d * 1.7)), atol=1e-15)
    U = matrix_exp(H, 0.9)
    assert np.max(np.abs(U - taylor_expm(-1j * 0.9 * H))) <= 1e-11
    assert np.max(np.abs(U.conj().T @ U - np.eye(9))) <= 1e-12
    with pytest.raises(ValueError):
        matrix_exp(np.array([[0, 1], [0, 0]]), 1.0)
    with pytest.raises(ValueError):
        matrix_exp(np.ones((2, 3)), 1.0)


def test_zero_and_constant_hamiltonian(rng):
    res = propagate_unitary(lambda t: np.zeros((3, 3)), 10.0, CFG)
    assert np.allclose(res.U_final, np.eye(3), atol=1e-15)
    H = random_hermitian(rng, 4) * 0.3
    res = propagate_unitary(lambda t: H, 7.0, CFG)
    assert np.max(np.abs(res.U_final - matrix_exp(H, 7.0))) <= 10 * CFG.rel_tol * 7
    assert res.steps_taken == len(res.times) - 1 and res.rhs_evals > 6 * res.steps_taken


def test_zero_time():
    res = propagate_unitary(lambda t: np.eye(2), 0.0, CFG)
    assert np.array_equal(res.U_final, np.eye(2))


def test_errors():
    with pytest.raises(PropagationError):
        propagate_unitary(lambda t: np.full((2, 2), np.nan), 1.0, CFG)
    # a blow-up at t = 1 forces step-size underflow
    with pytest.raises(PropagationError) as info:
        dormand_prince(lambda t, y: y / (1.0 - t) ** 2 if t < 1 else np.full_like(y, np.inf), np.ones(2), 2.0, CFG)
    assert 0.5 < info.value.t_reached <= 1.0


@pytest.mark.xfail(strict=True, reason="DP5(4) at tol 1e-10 leaves a ~4.8e-8 unitarity defect over 50 ns "
                                       "(scipy RK45 gives the same); see test below at tol 1e-12")
def test_device_pulse_unitarity_default_tol(device):
    H, _ = pulse_H(device, (-0.00207, 25.0, 6.36))
    U = propagate_unitary(H, 50.0, CFG).U_final
    assert np.max(np.abs(U.conj().T @ U - np.eye(9))) <= 1e-8


def test_device_pulse_unitarity_tight_tol(device):
    H, _ = pulse_H(device, (-0.00207, 25.0, 6.36))
    U = propagate_unitary(H, 50.0, TIGHT).U_final
    assert np.max(np.abs(U.conj().T @ U - np.eye(9))) <= 1e-8


def test_goat_zero_derivative(device):
    H, _ = pulse_H(device)
    res = propagate_goat(H, [lambda t: np.zeros((9, 9))] * 2, 50.0, CFG)
    assert res.partials.shape == (2, 9, 9) and not res.partials.any()


def test_goat_analytic_commuting():
    H0 = np.diag([0.0, 1.0, -2.0])
    alpha, T = 0.7, 3.0
    res = propagate_goat(lambda t: alpha * H0, [lambda t: H0], T, TIGHT)
    expect = -1j * T * H0 @ matrix_exp(alpha * H0, T)
    assert np.allclose(res.partials[0], expect, atol=1e-10)


def test_goat_partials_match_fd(device):
    p0 = np.array([-0.02, 25.0, 6.0, 0.01, 30.0, 3.0])
    H, dH = pulse_H(device, p0)
    res = propagate_goat(H, dH, 50.0, TIGHT)
    for k in range(p0.size):
        h = 1e-6 * max(1.0, abs(p0[k]))
        e = np.zeros_like(p0)
        e[k] = h
        Up = propagate_unitary(pulse_H(device, p0 + e)[0], 50.0, TIGHT).U_final
        Um = propagate_unitary(pulse_H(device, p0 - e)[0], 50.0, TIGHT).U_final
        fd = (Up - Um) / (2 * h)
        scale = np.max(np.abs(fd))
        if scale > 1e-6:
            assert np.max(np.abs(res.partials[k] - fd)) <= 1e-4 * scale


def test_goat_block_equals_unitary_on_same_grid(device):
    H, dH = pulse_H(device)
    ref = propagate_unitary(H, 50.0, CFG)
    goat = propagate_goat(H, dH, 50.0, CFG, t_grid=ref.times)
    assert np.max(np.abs(goat.U_final - ref.U_final)) <= 1e-12
    assert np.array_equal(goat.times, ref.times)


def test_time_reversal(device):
    H, _ = pulse_H(device)
    T = 50.0
    U = propagate_unitary(H, T, CFG).U_final
    back = propagate_unitary(lambda t: -H(T - t), T, CFG, U0=U).U_final
    assert np.max(np.abs(back - np.eye(9))) <= 100 * 1e-10 * 10


def test_tolerance_convergence(device):
    H, _ = pulse_H(device)
    ref = propagate_unitary(H, 50.0, IntegratorConfig(1e-13, 1e-13)).U_final
    errs = [np.max(np.abs(propagate_unitary(H, 50.0, IntegratorConfig(tol, tol)).U_final - ref))
            for tol in (1e-6, 5e-7, 2.5e-7, 1.25e-7)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_max_step_respected():
    res = propagate_unitary(lambda t: np.diag([0.0, 0.1]), 10.0, IntegratorConfig(max_step=0.5))
    assert np.max(np.diff(res.times)) <= 0.5 + 1e-15


@given(st.floats(0.0, 5.0), st.integers(2, 5))
def test_unitarity_random_constant(T, n):
    rng = np.random.default_rng(n)
    H = random_hermitian(rng, n)
    U = propagate_unitary(lambda t: H, T, CFG).U_final
    assert np.max(np.abs(U.conj().T @ U - np.eye(n))) <= 100 * 1e-10

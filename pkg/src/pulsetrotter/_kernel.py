"""Compiled Dormand-Prince propagation of the computational columns.

Only the columns of U that start in the computational subspace are needed
for the projected objective, and excitation-number conservation confines each
such column to its own sector. The state is therefore a flat vector holding
``U[r, c]`` for every computational column ``c`` and every row ``r`` in the
sector of ``c`` (8 complex entries for two 3-level transmons instead of 81).

The step controller and initial-step heuristic mirror
:func:`pulsetrotter.propagation.dormand_prince`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_NONFINITE = 2


@dataclass(frozen=True)
class SectorSystem:
    """Flat-state bookkeeping for sector-restricted column propagation."""

    diag: np.ndarray        # (L,) drift energy of each flat entry's row
    pair_i: np.ndarray      # coupling pairs (i, j, v): H[i, j] = v * s * e^{iDt}
    pair_j: np.ndarray
    pair_v: np.ndarray
    rows: np.ndarray        # (L,) full-space row index of each flat entry
    cols: np.ndarray        # (L,) position of the entry's column in comp_cols
    comp_cols: tuple[int, ...]
    y0: np.ndarray          # identity columns in flat form

    @property
    def size(self) -> int:
        return self.diag.size

    def projected(self, flat: np.ndarray, comp_rows) -> np.ndarray:
        """``P U P`` in subspace coordinates from flat column data (leading axes kept)."""
        pos = {r: k for k, r in enumerate(comp_rows)}
        n = len(self.comp_cols)
        out = np.zeros(flat.shape[:-1] + (len(comp_rows), n), dtype=complex)
        for l, (r, c) in enumerate(zip(self.rows, self.cols)):
            if r in pos:
                out[..., pos[r], c] = flat[..., l]
        return out

    def full_columns(self, flat: np.ndarray, dim: int) -> np.ndarray:
        out = np.zeros(flat.shape[:-1] + (dim, len(self.comp_cols)), dtype=complex)
        out[..., self.rows, self.cols] = flat
        return out


def build_sector_system(drift: np.ndarray, K: np.ndarray, sectors: dict, comp_cols) -> SectorSystem:
    """Flatten the sector blocks that the columns ``comp_cols`` evolve in.

    ``K`` is the coupling operator ``a_1^dag a_2``; it must not connect
    different sectors.
    """
    sector_of = {i: n for n, idx in sectors.items() for i in idx}
    rows, cols, where = [], [], {}
    for c_pos, c in enumerate(comp_cols):
        for r in sectors[sector_of[c]]:
            where[(r, c_pos)] = len(rows)
            rows.append(r)
            cols.append(c_pos)
    pi, pj, pv = [], [], []
    r1s, r2s = np.nonzero(K)
    for r1, r2 in zip(r1s, r2s):
        if sector_of[r1] != sector_of[r2]:
            raise ValueError("coupling operator mixes excitation sectors")
        for c_pos in range(len(comp_cols)):
            if (r1, c_pos) in where:
                pi.append(where[(r1, c_pos)])
                pj.append(where[(r2, c_pos)])
                pv.append(K[r1, r2])
    rows = np.array(rows, dtype=np.int64)
    cols = np.array(cols, dtype=np.int64)
    y0 = np.array([1.0 + 0j if r == comp_cols[c] else 0j for r, c in zip(rows, cols)])
    return SectorSystem(diag=np.asarray(drift, dtype=float)[rows], pair_i=np.array(pi, dtype=np.int64),
                        pair_j=np.array(pj, dtype=np.int64), pair_v=np.array(pv, dtype=float),
                        rows=rows, cols=cols, comp_cols=tuple(comp_cols), y0=y0)


@njit(cache=True)
def _saturation(e, A, B, Q, gain):
    w = B - A
    x = -2.0 * gain * e / w
    x = min(max(x, -700.0), 700.0)
    if x > 0:
        en = np.exp(-x)
        s = w * Q * (en - 1.0) / ((en + Q) * (1.0 + Q))
        ds = 2.0 * gain * Q * en / (en + Q) ** 2
    else:
        ex = np.exp(x)
        s = w * Q * (-np.expm1(x)) / ((1.0 + Q * ex) * (1.0 + Q))
        ds = 2.0 * gain * Q * ex / (1.0 + Q * ex) ** 2
    return s, ds


@njit(cache=True)
def _rhs(t, Y, out, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad, gw, cu):
    M = a.size
    L = Y.shape[1]
    P = Y.shape[0]
    e = 0.0
    for m in range(M):
        x = (t - mu[m]) / sg[m]
        gw[m] = np.exp(-0.5 * x * x)
        e += a[m] * gw[m]
    s, ds = _saturation(e, A, B, Q, gain)
    ph = np.exp(1j * detuning * t)
    phc = np.conj(ph)
    for p in range(P):
        for l in range(L):
            out[p, l] = dg[l] * Y[p, l]
        for k in range(pi.size):
            i = pi[k]
            j = pj[k]
            v = pv[k] * s
            out[p, i] += v * ph * Y[p, j]
            out[p, j] += v * phc * Y[p, i]
    if grad:
        for l in range(L):
            cu[l] = 0.0
        for k in range(pi.size):
            i = pi[k]
            j = pj[k]
            v = pv[k]
            cu[i] += v * ph * Y[0, j]
            cu[j] += v * phc * Y[0, i]
        for m in range(M):
            x = (t - mu[m]) / sg[m]
            c0 = ds * gw[m]
            c1 = c0 * a[m] * x / sg[m]
            c2 = c1 * x
            b = 1 + 3 * m
            for l in range(L):
                out[b, l] += c0 * cu[l]
                out[b + 1, l] += c1 * cu[l]
                out[b + 2, l] += c2 * cu[l]
    for p in range(P):
        for l in range(L):
            out[p, l] *= -1j


@njit(cache=True)
def _rms(v, ref, atol, rtol):
    acc = 0.0
    P, L = v.shape
    for p in range(P):
        for l in range(L):
            sc = atol + rtol * abs(ref[p, l])
            acc += (v[p, l].real ** 2 + v[p, l].imag ** 2) / sc ** 2
    return np.sqrt(acc / (P * L))


@njit(cache=True)
def propagate_flat(Y0, T, atol, rtol, max_step, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad):
    """Returns ``(Y, steps, rejected, rhs_evals, status, t_reached)``."""
    P, L = Y0.shape
    Y = Y0.copy()
    gw = np.empty(a.size)
    cu = np.empty(L, np.complex128)
    k1 = np.empty_like(Y)
    k2 = np.empty_like(Y)
    k3 = np.empty_like(Y)
    k4 = np.empty_like(Y)
    k5 = np.empty_like(Y)
    k6 = np.empty_like(Y)
    k7 = np.empty_like(Y)
    tmp = np.empty_like(Y)
    yn = np.empty_like(Y)
    t = 0.0
    ns = 0
    nr = 0
    if T == 0.0:
        return Y, 0, 0, 0, STATUS_OK, 0.0
    _rhs(t, Y, k1, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad, gw, cu)
    nfev = 1
    for p in range(P):
        for l in range(L):
            if not np.isfinite(k1[p, l].real) or not np.isfinite(k1[p, l].imag):
                return Y, 0, 0, nfev, STATUS_NONFINITE, 0.0

    # initial step (Hairer-Norsett-Wanner II.4)
    d0 = _rms(Y, Y, atol, rtol)
    d1 = _rms(k1, Y, atol, rtol)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, T)
    for p in range(P):
        for l in range(L):
            tmp[p, l] = Y[p, l] + h0 * k1[p, l]
    _rhs(h0, tmp, k2, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad, gw, cu)
    nfev += 1
    for p in range(P):
        for l in range(L):
            tmp[p, l] = k2[p, l] - k1[p, l]
    d2 = _rms(tmp, Y, atol, rtol) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100 * h0, h1, max_step, T)

    eps = 2.220446049250313e-16
    while t < T:
        h = min(h, max_step)
        last = t + 1.01 * h >= T
        if last:
            h = T - t
        elif h <= 16 * eps * max(abs(t), 1.0):
            return Y, ns, nr, nfev, STATUS_UNDERFLOW, t
        for p in range(P):
            for l in range(L):
                tmp[p, l] = Y[p, l] + h * A21 * k1[p, l]
        _rhs(t + C2 * h, tmp, k2, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad, gw, cu)
        for p in range(P):
            for l in range(L):
                tmp[p, l] = Y[p, l] + h * (A31 * k1[p, l] + A32 * k2[p, l])
        _rhs(t + C3 * h, tmp, k3, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad, gw, cu)
        for p in range(P):
            for l in range(L):
                tmp[p, l] = Y[p, l] + h * (A41 * k1[p, l] + A42 * k2[p, l] + A43 * k3[p, l])
        _rhs(t + C4 * h, tmp, k4, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad, gw, cu)
        for p in range(P):
            for l in range(L):
                tmp[p, l] = Y[p, l] + h * (A51 * k1[p, l] + A52 * k2[p, l] + A53 * k3[p, l] + A54 * k4[p, l])
        _rhs(t + C5 * h, tmp, k5, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad, gw, cu)
        for p in range(P):
            for l in range(L):
                tmp[p, l] = Y[p, l] + h * (A61 * k1[p, l] + A62 * k2[p, l] + A63 * k3[p, l]
                                           + A64 * k4[p, l] + A65 * k5[p, l])
        _rhs(t + h, tmp, k6, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad, gw, cu)
        for p in range(P):
            for l in range(L):
                yn[p, l] = Y[p, l] + h * (B1 * k1[p, l] + B3 * k3[p, l] + B4 * k4[p, l]
                                          + B5 * k5[p, l] + B6 * k6[p, l])
        _rhs(t + h, yn, k7, dg, pi, pj, pv, detuning, a, mu, sg, A, B, Q, gain, grad, gw, cu)
        nfev += 6
        err = 0.0
        for p in range(P):
            for l in range(L):
                ee = h * (E1 * k1[p, l] + E3 * k3[p, l] + E4 * k4[p, l] + E5 * k5[p, l]
                          + E6 * k6[p, l] + E7 * k7[p, l])
                sc = atol + rtol * max(abs(Y[p, l]), abs(yn[p, l]))
                err += (ee.real ** 2 + ee.imag ** 2) / sc ** 2
        err = np.sqrt(err / (P * L))
        if not np.isfinite(err):
            return Y, ns, nr, nfev, STATUS_NONFINITE, t
        if err <= 1.0:
            t = T if last else t + h
            ns += 1
            for p in range(P):
                for l in range(L):
                    Y[p, l] = yn[p, l]
                    k1[p, l] = k7[p, l]
            if err == 0.0:
                h *= 5.0
            else:
                h *= min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            nr += 1
            h *= max(0.2, 0.9 * err ** -0.2)
    return Y, ns, nr, nfev, STATUS_OK, t

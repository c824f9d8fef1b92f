"""
Naive reference models used as independent checks.

Everything here is written from the device definitions directly: each layer is
materialized as a dense matrix and multiplied on one at a time, in extended
precision (``numpy.clongdouble``). Slow, but it shares no code with the
element-based evaluation in :mod:`unitary_mesh.devices`.
"""
from __future__ import annotations

import numpy as np

from .devices import ClementsDevice, MplcDevice

CLD = np.clongdouble


def _phase_matrix(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.longdouble)
    return np.diag(np.exp(1j * theta.astype(CLD)))


def _crosstalk(dev, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.longdouble)
    if dev.crosstalk is None:
        return p
    out = np.zeros_like(p)
    for idx in dev.phase_arrays():
        size = len(idx)
        for i in range(size):
            for offset, coef in dev.crosstalk.kernel:
                j = i + offset
                if 0 <= j < size:
                    out[idx[i]] += np.longdouble(coef) * p[idx[j]]
    return out


def reference_mplc(dev: MplcDevice, p) -> np.ndarray:
    q = _crosstalk(dev, p)
    n = dev.n_modes
    x = np.eye(n, dtype=CLD)
    for i in range(dev.n_layers):
        x = _phase_matrix(q[i * n:(i + 1) * n]) @ x
        x = dev.mixers[i].astype(CLD) @ x
    if dev.include_output_phases:
        m = dev.n_layers
        x = _phase_matrix(q[m * n:(m + 1) * n]) @ x
    return x


def reference_mzi(theta, phi) -> np.ndarray:
    bs = np.array([[1, 1j], [1j, 1]], dtype=CLD) / np.sqrt(np.longdouble(2))
    return bs @ _phase_matrix([theta, 0]) @ bs @ _phase_matrix([phi, 0])


def reference_clements(dev: ClementsDevice, p) -> np.ndarray:
    q = _crosstalk(dev, p)
    n = dev.n_modes
    x = np.eye(n, dtype=CLD)
    k = 0
    for j in range(1, dev.n_layers + 1):
        layer = np.eye(n, dtype=CLD)
        start = 0 if j % 2 else 1
        for r in range(start, n - 1, 2):
            layer[r:r + 2, r:r + 2] = reference_mzi(q[k], q[k + 1])
            k += 2
        x = layer @ x
    return _phase_matrix(q[k:k + n]) @ x


def reference_forward(dev, p) -> np.ndarray:
    if isinstance(dev, MplcDevice):
        return reference_mplc(dev, p)
    return reference_clements(dev, p)


def reference_frobenius(x, u) -> np.longdouble:
    n = x.shape[0]
    total = np.longdouble(0)
    for i in range(n):
        for j in range(n):
            total += abs(x[i, j] - u[i, j]) ** 2
    return total / (4 * n)


def reference_phase_insensitive(x, u) -> np.longdouble:
    """Sum of ``(delta_ij - |x_i . u_j|)^2`` built from rows of ``x`` and columns of ``u^H``."""
    n = x.shape[0]
    uh = np.conj(np.asarray(u, dtype=CLD)).T
    total = np.longdouble(0)
    for i in range(n):
        for j in range(n):
            amp = abs(np.sum(x[i, :] * uh[:, j]))
            total += ((1 if i == j else 0) - amp) ** 2
    return total


def reference_loss(kind, dev, p, u) -> np.longdouble:
    x = reference_forward(dev, p)
    u = np.asarray(u, dtype=CLD)
    if str(getattr(kind, "value", kind)) == "frobenius":
        return reference_frobenius(x, u)
    return reference_phase_insensitive(x, u)

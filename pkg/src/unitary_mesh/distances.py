"""
Distances between a realized unitary ``x`` and a target unitary ``u``.

``frobenius_loss`` is the squared Frobenius distance normalized by ``4N`` so
that it lies in ``[0, 1]`` for any pair of unitaries. ``spectral_loss`` computes
the same number from the eigen-angles of ``u^H x`` and is kept as an
independent check. ``phase_insensitive_loss`` only depends on the intensities
``|[x u^H]_ij|^2`` and is left unnormalized.
"""
from __future__ import annotations

import enum

import numpy as np

from .errors import InvalidArgumentError, InvalidDimensionError
from .linalg import RngStream, _as_generator, as_complex_matrix, eigenangles, haar_random_unitary


class LossKind(str, enum.Enum):
    FROBENIUS = "frobenius"
    PHASE_INSENSITIVE = "phase_insensitive"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            raise InvalidArgumentError(
                f"unknown loss {value!r}; expected one of {[k.value for k in cls]}"
            ) from None


def _pair(x, u) -> tuple[np.ndarray, np.ndarray]:
    x = as_complex_matrix(x)
    u = as_complex_matrix(u)
    if x.shape != u.shape or x.shape[0] != x.shape[1]:
        raise InvalidDimensionError(f"shape mismatch: {x.shape} vs {u.shape}")
    return x, u


def frobenius_loss(x, u) -> float:
    x, u = _pair(x, u)
    n = x.shape[0]
    d = x - u
    return float(np.vdot(d, d).real) / (4 * n)


def spectral_loss(x, u) -> float:
    x, u = _pair(x, u)
    n = x.shape[0]
    theta = eigenangles(u.conj().T @ x)
    return float(2 * n - 2 * np.sum(np.cos(theta))) / (4 * n)


def intensities(x, u) -> np.ndarray:
    """Matrix of ``a_ij = |[x u^H]_ij|^2``; what a detector array would record."""
    x, u = _pair(x, u)
    m = x @ u.conj().T
    return m.real**2 + m.imag**2


def phase_insensitive_loss(x, u) -> float:
    amp = np.sqrt(intensities(x, u))
    return float(np.sum((np.eye(amp.shape[0]) - amp) ** 2))


def loss(kind, x, u) -> float:
    kind = LossKind.parse(kind)
    if kind is LossKind.FROBENIUS:
        return frobenius_loss(x, u)
    return phase_insensitive_loss(x, u)


def loss_and_adjoint(kind: LossKind, x: np.ndarray, u: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Loss value and its conjugate derivative ``W = dL/d(conj x)``.

    ``W`` is scaled so that for any perturbation ``dx`` the first-order change
    is ``dL = 2 Re Tr[W^H dx]``. Inputs are assumed validated.
    """
    n = x.shape[0]
    if kind is LossKind.FROBENIUS:
        d = x - u
        return float(np.vdot(d, d).real) / (4 * n), d / (4 * n)
    m = x @ u.conj().T
    mag = np.abs(m)
    resid = mag - np.eye(n)
    value = float(np.sum(resid**2))
    # d|m|/d(conj m) = m / (2|m|); the |m| = 0 entries get a zero subgradient.
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(mag > 0, m / np.where(mag > 0, mag, 1.0), 0.0)
    w_m = resid * unit
    return value, w_m @ u


def expected_loss_estimate(n: int, samples: int, rng) -> tuple[float, float]:
    """
    Monte-Carlo mean of ``frobenius_loss`` over independent Haar pairs.

    Returns ``(mean, standard_error)``; the standard error is 0 for a single sample.
    """
    if samples < 1:
        raise InvalidArgumentError("samples must be >= 1")
    gen = _as_generator(rng)
    values = np.empty(samples)
    for s in range(samples):
        x = haar_random_unitary(n, gen)
        u = haar_random_unitary(n, gen)
        values[s] = frobenius_loss(x, u)
    stderr = float(values.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return float(values.mean()), stderr

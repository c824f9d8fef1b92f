"""
Dense complex linear algebra helpers: seeded random streams, Haar-random
unitaries and eigen-angles of unitary matrices.

All matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, InvariantViolationError

# Named streams live above the range used by per-trial integer streams.
_NAMED_STREAM_OFFSET = 1 << 32


def stream_id(name: str | int) -> int:
    """Map a stream label (trial index or name such as ``"target"``) to an integer id."""
    if isinstance(name, (int, np.integer)):
        if name < 0:
            raise ValueError("stream index must be non-negative")
        return int(name)
    return _NAMED_STREAM_OFFSET + zlib.crc32(name.encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream)``.

    The stream is value-like: every call to :meth:`generator` returns a fresh
    generator positioned at the start of the same sequence.
    """

    seed: int
    stream: int = 0

    @classmethod
    def named(cls, seed: int, name: str | int) -> "RngStream":
        return cls(int(seed), stream_id(name))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def as_complex_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidDimensionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvariantViolationError("matrix contains non-finite entries")
    return m


def unitarity_error(m: np.ndarray) -> float:
    """Frobenius norm of ``m^H m - I``."""
    n = m.shape[0]
    return float(np.linalg.norm(m.conj().T @ m - np.eye(n)))


def check_unitary(a, tol_per_mode: float = 1e-10) -> np.ndarray:
    """Return ``a`` as a complex matrix, raising if it is not square and unitary.

    The tolerance scales with the dimension: ``||M^H M - I||_F <= tol_per_mode * N``.
    """
    m = as_complex_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise InvariantViolationError(f"unitary matrix must be square, got shape {m.shape}")
    err = unitarity_error(m)
    if err > tol_per_mode * m.shape[0]:
        raise InvariantViolationError(f"matrix is not unitary (||M^H M - I||_F = {err:.3e})")
    return m


def haar_random_unitary(n: int, rng) -> np.ndarray:
    r"""
    Sample an ``n x n`` unitary from the Haar measure on U(n).

    A complex Ginibre matrix is QR-factorized and each column of Q is rotated by
    the phase of the matching diagonal entry of R; without that correction the
    QR output is not Haar distributed.

    :param n: Matrix size, ``n >= 1``.
    :param rng: :class:`RngStream`, ``numpy.random.Generator`` or seed.
    """
    if int(n) != n or n < 1:
        raise InvalidDimensionError(f"n must be a positive integer, got {n}")
    n = int(n)
    gen = _as_generator(rng)
    z = (gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def eigenangles(u) -> np.ndarray:
    """Arguments of the eigenvalues of a unitary matrix, in ``(-pi, pi]``, sorted ascending."""
    m = check_unitary(u)
    theta = np.angle(np.linalg.eigvals(m))
    theta = np.where(theta <= -np.pi, np.pi, theta)
    return np.sort(theta, kind="stable")


def matmul(a, b) -> np.ndarray:
    a = as_complex_matrix(a)
    b = as_complex_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise InvalidDimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(a).T

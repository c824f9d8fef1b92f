import numpy as np
import pytest
from hypothesis import given, strategies as st

from unitary_mesh.distances import (
    LossKind,
    expected_loss_estimate,
    frobenius_loss,
    intensities,
    loss,
    loss_and_adjoint,
    phase_insensitive_loss,
    spectral_loss,
)
from unitary_mesh.errors import InvalidDimensionError
from unitary_mesh.linalg import RngStream, haar_random_unitary

seeds = st.integers(0, 2**32)
dims = st.sampled_from([1, 2, 3, 4, 8])


def pair(seed, n):
    gen = RngStream(seed).generator()
    return haar_random_unitary(n, gen), haar_random_unitary(n, gen)


def test_frobenius_examples():
    u = haar_random_unitary(5, RngStream(1))
    assert frobenius_loss(u, u) == 0
    assert abs(frobenius_loss(-u, u) - 1) < 1e-12


def test_spectral_examples():
    assert spectral_loss(np.eye(3), np.eye(3)) == pytest.approx(0, abs=1e-15)
    assert spectral_loss(np.diag([1j, -1j]), np.eye(2)) == pytest.approx(0.5, abs=1e-15)


@given(seeds, dims)
def test_frobenius_equals_spectral_form(seed, n):
    x, u = pair(seed, n)
    assert abs(frobenius_loss(x, u) - spectral_loss(x, u)) < 1e-10
    assert 0 <= frobenius_loss(x, u) <= 1


@given(seeds, dims)
def test_frobenius_trace_identity(seed, n):
    x, u = pair(seed, n)
    direct = np.linalg.norm(x - u) ** 2
    assert abs(direct - (2 * n - 2 * np.trace(u.conj().T @ x).real)) < 1e-10
    assert abs(frobenius_loss(x, u) - direct / (4 * n)) < 1e-12


@given(seeds, dims)
def test_phase_insensitive_invariant_under_output_phases(seed, n):
    x, u = pair(seed, n)
    d = np.exp(1j * RngStream(seed, 1).generator().uniform(0, 2 * np.pi, n))
    assert abs(phase_insensitive_loss(d[:, None] * x, u) - phase_insensitive_loss(x, u)) < 1e-12
    # zero at any output-phase-rotated copy of the target
    assert phase_insensitive_loss(d[:, None] * u, u) < 1e-12


def test_phase_insensitive_vector_form():
    # row vectors of x against rows of u, as an independent oracle
    x, u = pair(3, 4)
    a = np.array([[abs(np.vdot(u[j], x[i])) for j in range(4)] for i in range(4)])
    assert abs(phase_insensitive_loss(x, u) - np.sum((np.eye(4) - a) ** 2)) < 1e-12
    assert np.allclose(intensities(x, u), a**2)


def test_dimension_mismatch():
    for f in (frobenius_loss, spectral_loss, phase_insensitive_loss):
        with pytest.raises(InvalidDimensionError):
            f(np.eye(2), np.eye(3))


def test_loss_kind_parse():
    assert LossKind.parse("frobenius") is LossKind.FROBENIUS
    assert LossKind.parse("phase-insensitive") is LossKind.PHASE_INSENSITIVE
    with pytest.raises(ValueError):
        LossKind.parse("trace")


@pytest.mark.parametrize("kind", list(LossKind))
def test_adjoint_directional_derivative(kind):
    # df = 2 Re Tr[W^H dX] checked by central differences along a tangent direction
    x, u = pair(8, 4)
    gen = RngStream(8, 5).generator()
    h = gen.normal(size=(4, 4)) + 1j * gen.normal(size=(4, 4))
    value, w = loss_and_adjoint(kind, x, u)
    assert value == pytest.approx(loss(kind, x, u))
    eps = 1e-6
    numeric = (loss(kind, x + eps * h, u) - loss(kind, x - eps * h, u)) / (2 * eps)
    assert abs(numeric - 2 * np.real(np.trace(w.conj().T @ h))) < 1e-6


@pytest.mark.parametrize("n", [2, 8])
def test_expected_loss_half(n):
    mean, se = expected_loss_estimate(n, 2000, RngStream(n))
    assert abs(mean - 0.5) < 3 * se


def test_expected_loss_single_sample():
    mean, _ = expected_loss_estimate(4, 1, RngStream(0))
    assert 0 <= mean <= 1

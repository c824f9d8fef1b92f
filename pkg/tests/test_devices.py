import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from unitary_mesh.devices import (
    DEFAULT_KERNEL,
    ClementsDevice,
    CrosstalkModel,
    MplcDevice,
    apply_crosstalk,
    clements_forward,
    dof_count,
    load_device,
    mplc_forward,
    mzi_transfer,
    param_count,
)
from unitary_mesh.errors import (
    InvalidArgumentError,
    InvalidParameterError,
    InvariantViolationError,
    UnsupportedDimensionError,
)
from unitary_mesh.linalg import RngStream, haar_random_unitary
from unitary_mesh.reference import reference_clements, reference_forward, reference_mplc, reference_mzi

CT = CrosstalkModel()


def unitarity(x):
    return np.max(np.abs(x @ x.conj().T - np.eye(x.shape[0])))


def test_mplc_identity_mixer():
    dev = MplcDevice(2, 1, (np.eye(2),))
    assert np.array_equal(mplc_forward(dev, np.zeros(dev.param_count)), np.eye(2))


def test_mplc_zero_phases_is_mixer_product():
    dev = MplcDevice.random(4, 3, RngStream(2))
    a1, a2, a3 = dev.mixers
    assert np.allclose(dev.forward(np.zeros(dev.param_count)), a3 @ a2 @ a1, atol=1e-15, rtol=0)


def test_mplc_rejects_repeated_mixers():
    with pytest.raises(InvariantViolationError):
        MplcDevice(2, 2, (np.eye(2), np.eye(2)))


def test_mplc_rejects_non_unitary_mixer():
    with pytest.raises(InvariantViolationError):
        MplcDevice(2, 1, (np.ones((2, 2)),))


@pytest.mark.parametrize("output_phases", [True, False])
@pytest.mark.parametrize("crosstalk", [None, CT])
def test_mplc_matches_naive_loop(output_phases, crosstalk):
    gen = RngStream(3).generator()
    dev = MplcDevice.random(4, 5, RngStream(4), output_phases, crosstalk)
    p = gen.uniform(0, 2 * np.pi, dev.param_count)
    ref = reference_mplc(dev, p).astype(complex)
    assert np.max(np.abs(dev.forward(p) - ref)) < 1e-12


def test_mplc_param_counts():
    dev = MplcDevice.random(8, 9, RngStream(0))
    assert dof_count(dev) == 71 and param_count(dev) == 80
    assert MplcDevice.random(8, 8, RngStream(0)).dof_count == 64
    assert MplcDevice.random(8, 9, RngStream(0), include_output_phases=False).param_count == 72
    assert not MplcDevice.random(8, 7, RngStream(0)).is_universal


def test_mplc_layer_shift_is_global_phase():
    gen = RngStream(6).generator()
    dev = MplcDevice.random(5, 4, RngStream(6))
    p = gen.uniform(0, 2 * np.pi, dev.param_count)
    q = p.copy()
    q[:5] += 0.7
    x_old, x_new = dev.forward(p), dev.forward(q)
    assert abs(abs(np.trace(x_new @ x_old.conj().T)) - 5) < 1e-8


def test_mzi_cross_and_bar():
    assert np.allclose(mzi_transfer(0, 0), 1j * np.array([[0, 1], [1, 0]]), atol=1e-15)
    t = mzi_transfer(np.pi, 0)
    assert abs(t[0, 1]) < 1e-14 and abs(t[1, 0]) < 1e-14


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_mzi_unitary_and_matches_factors(theta, phi):
    t = mzi_transfer(theta, phi)
    assert abs(abs(np.linalg.det(t)) - 1) < 1e-14
    assert unitarity(t) < 1e-14
    assert np.max(np.abs(t - reference_mzi(theta, phi).astype(complex))) < 1e-14


def test_clements_single_bar_state():
    dev = ClementsDevice(2, 1)
    x = clements_forward(dev, np.array([np.pi, 0, 0, 0]))
    assert abs(x[0, 1]) < 1e-14 and abs(x[1, 0]) < 1e-14


def test_clements_zero_params_unitary():
    dev = ClementsDevice(8, 8)
    assert unitarity(dev.forward(np.zeros(dev.param_count))) < 1e-10


@pytest.mark.parametrize("crosstalk", [None, CT])
def test_clements_matches_naive_loop(crosstalk):
    dev = ClementsDevice(8, 8, crosstalk)
    p = RngStream(9).generator().uniform(0, 2 * np.pi, dev.param_count)
    assert np.max(np.abs(dev.forward(p) - reference_clements(dev, p).astype(complex))) < 1e-12


def test_clements_layout():
    dev = ClementsDevice(8, 8)
    assert [dev.mzis_in_layer(j) for j in (1, 2, 3)] == [4, 3, 4]
    assert dev.param_count == 4 * 8 + 4 * 6 + 8 == 64
    with pytest.raises(UnsupportedDimensionError, match="n_modes must be even"):
        ClementsDevice(7, 7)


def test_parameter_length_checked():
    dev = ClementsDevice(4, 2)
    with pytest.raises(InvalidParameterError):
        dev.forward(np.zeros(dev.param_count + 1))
    with pytest.raises(InvalidParameterError):
        MplcDevice.random(3, 2, RngStream(0)).forward(np.zeros(4))


def test_batched_forward_matches_single():
    dev = MplcDevice.random(4, 3, RngStream(1), crosstalk=CT)
    ps = RngStream(2).generator().uniform(0, 6, (5, dev.param_count))
    stack = dev.forward(ps)
    for p, x in zip(ps, stack):
        assert np.allclose(x, dev.forward(p), rtol=0, atol=1e-14)


@given(st.integers(0, 2**32), st.sampled_from(["mplc", "clements"]), st.booleans())
def test_forward_unitary(seed, arch, with_ct):
    ct = CT if with_ct else None
    dev = MplcDevice.random(6, 4, RngStream(seed), crosstalk=ct) if arch == "mplc" else ClementsDevice(6, 5, ct)
    p = RngStream(seed, 1).generator().uniform(-20, 20, dev.param_count)
    assert unitarity(dev.forward(p)) < 1e-10


def test_crosstalk_examples():
    assert np.allclose(apply_crosstalk(np.array([0, 0, 1, 0, 0.0]), CT), [0.1, 0.5, 1.0, 0.5, 0.1])
    assert np.allclose(apply_crosstalk(np.array([1, 0, 0, 0, 0.0]), CT), [1.0, 0.5, 0.1, 0, 0])
    assert np.array_equal(apply_crosstalk(np.zeros(5), CT), np.zeros(5))
    out = apply_crosstalk([np.array([1.0, 0.0]), np.array([0.0, 0.0, 1.0])], CT)
    assert np.allclose(out[0], [1.0, 0.5]) and np.allclose(out[1], [0.1, 0.5, 1.0])


@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=12),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_crosstalk_linear(theta, a, b):
    t1 = np.array(theta)
    t2 = np.roll(t1, 1) - 0.5
    lhs = apply_crosstalk(a * t1 + b * t2, CT)
    rhs = a * apply_crosstalk(t1, CT) + b * apply_crosstalk(t2, CT)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_crosstalk_invertible_sizes():
    for size in range(2, 65):
        assert abs(np.linalg.det(CT.matrix(size))) > 0
        CT.check_invertible(size)


def test_crosstalk_kernel_validation():
    with pytest.raises(InvalidArgumentError):
        CrosstalkModel(((0, 0.9), (1, 0.1)))
    with pytest.raises(InvariantViolationError):
        CrosstalkModel(((-1, 1.0), (0, 1.0), (1, 1.0))).check_invertible(2)
    with pytest.raises(InvariantViolationError):
        MplcDevice.random(2, 1, RngStream(0), crosstalk=((-1, 1.0), (0, 1.0), (1, 1.0))).crosstalk_operator
    assert CrosstalkModel().kernel == DEFAULT_KERNEL


def test_crosstalk_per_array_in_clements():
    dev = ClementsDevice(4, 2, CT)
    # arrays: layer1 thetas, layer1 phis, layer2 theta, layer2 phi, outputs
    sizes = [len(a) for a in dev.phase_arrays()]
    assert sizes == [2, 2, 1, 1, 4]
    assert sorted(np.concatenate(dev.phase_arrays()).tolist()) == list(range(dev.param_count))


@pytest.mark.parametrize("kind", ["mplc", "clements"])
def test_json_round_trip(tmp_path, kind):
    if kind == "mplc":
        dev = MplcDevice.random(4, 3, RngStream.named(5, "device"), include_output_phases=False, crosstalk=CT)
    else:
        dev = ClementsDevice(4, 3, CT)
    path = tmp_path / "dev.json"
    dev.to_json(path)
    data = json.loads(path.read_text())
    assert {"schema_version", "kind", "n_modes", "n_layers", "include_output_phases", "crosstalk", "mixers", "seeds"} <= set(data)
    back = load_device(path)
    assert back.kind == dev.kind and back.param_count == dev.param_count
    assert back.crosstalk == dev.crosstalk
    if kind == "mplc":
        assert back.include_output_phases is False
        assert data["seeds"]["seed"] == 5
        for a, b in zip(dev.mixers, back.mixers):
            assert np.array_equal(a, b)
    p = RngStream(1).generator().uniform(0, 6, dev.param_count)
    assert np.array_equal(back.forward(p), dev.forward(p))


def test_reference_dispatch():
    dev = ClementsDevice(2, 1)
    assert np.allclose(reference_forward(dev, np.zeros(4)).astype(complex), dev.forward(np.zeros(4)))

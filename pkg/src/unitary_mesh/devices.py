"""
Transfer-matrix models of programmable unitary converters.

Two architectures are provided:

* :class:`MplcDevice` -- multi-plane light conversion. Arrays of ``N`` phase
  shifters alternate with fixed ``N``-port mixers ``A_1 .. A_m``:
  ``X = L_{m+1} A_m L_m ... A_1 L_1``. The trailing array ``L_{m+1}`` can be
  dropped (``include_output_phases=False``) for intensity-only operation.
* :class:`ClementsDevice` -- a rectangular mesh of MZIs followed by an array
  of ``N`` output phase shifters.

Parameter layout is layer-major. MPLC: ``L_1`` phases (mode 1..N), then
``L_2`` and so on. Clements: MZIs of layer 1 from the top mode downward, each
contributing ``(theta, phi)``, then layer 2, ..., then the ``N`` output phases.

Every device is internally a sequence of *elements* (phase arrays, fixed
mixers, MZI columns). Elements know how to multiply themselves onto a matrix
from either side and how to turn the adjoint quantities of a backward pass
into phase gradients; :mod:`unitary_mesh.gradients` drives that pass.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    InvalidArgumentError,
    InvalidParameterError,
    InvariantViolationError,
    UnsupportedDimensionError,
)
from .linalg import RngStream, check_unitary, haar_random_unitary

SCHEMA_VERSION = 1

DEFAULT_KERNEL = ((-2, 0.1), (-1, 0.5), (0, 1.0), (1, 0.5), (2, 0.1))

_BS = np.array([[1, 1j], [1j, 1]]) / np.sqrt(2)


# Crosstalk


@dataclass(frozen=True)
class CrosstalkModel:
    """Linear leakage between neighbouring shifters of one array.

    The effective phase of shifter ``i`` is ``sum_k c_k * theta_{i+k}`` over the
    ``(offset k, coefficient c_k)`` pairs of ``kernel``; neighbours beyond the
    array ends contribute nothing.
    """

    kernel: tuple = DEFAULT_KERNEL

    def __post_init__(self):
        kernel = tuple((int(o), float(c)) for o, c in self.kernel)
        offsets = [o for o, _ in kernel]
        if len(set(offsets)) != len(offsets):
            raise InvalidArgumentError("crosstalk kernel has duplicate offsets")
        if dict(kernel).get(0) != 1.0:
            raise InvalidArgumentError("crosstalk kernel must have coefficient 1.0 at offset 0")
        object.__setattr__(self, "kernel", tuple(sorted(kernel)))

    def matrix(self, size: int) -> np.ndarray:
        """Banded ``size x size`` matrix mapping applied phases to effective phases."""
        k = np.zeros((size, size))
        for offset, coef in self.kernel:
            if abs(offset) < size:
                k += coef * np.eye(size, k=offset)
        return k

    def check_invertible(self, size: int) -> None:
        sign, logdet = np.linalg.slogdet(self.matrix(size))
        if sign == 0 or not np.isfinite(logdet):
            raise InvariantViolationError(f"crosstalk map is singular for array size {size}")

    def to_list(self) -> list:
        return [[o, c] for o, c in self.kernel]


def apply_crosstalk(phases, model: CrosstalkModel):
    """
    Apply ``model`` independently to each phase-shifter array.

    ``phases`` is a single 1-D array or a list of them; the result has the same
    structure. There is no coupling between arrays.
    """
    if len(phases) == 0 or np.isscalar(phases[0]):
        arr = np.asarray(phases, dtype=float)
        return model.matrix(arr.size) @ arr
    return [model.matrix(len(a)) @ np.asarray(a, dtype=float) for a in phases]


def _crosstalk_operator(arrays: list[np.ndarray], n_params: int, model: CrosstalkModel | None):
    if model is None:
        return None
    c = np.zeros((n_params, n_params))
    for idx in arrays:
        model.check_invertible(len(idx))
        c[np.ix_(idx, idx)] = model.matrix(len(idx))
    return c


# Elements


class _PhaseArray:
    """Diagonal layer ``diag(exp(i q))``."""

    def __init__(self, index: np.ndarray):
        self.index = index

    def left(self, q, m):
        return np.exp(1j * q[..., self.index])[..., :, None] * m

    def right(self, q, m):
        return m * np.exp(1j * q[..., self.index])[..., None, :]

    def grad(self, q, p, r):
        gkk = np.einsum("ka,ak->k", p, r)
        return 2 * np.real(1j * np.exp(1j * q[self.index]) * gkk)


class _FixedMixer:
    index = np.zeros(0, dtype=int)

    def __init__(self, a: np.ndarray):
        self.a = a

    def left(self, q, m):
        return self.a @ m

    def right(self, q, m):
        return m @ self.a

    def grad(self, q, p, r):
        return np.zeros(0)


def _mzi_entries(theta, phi):
    et = np.exp(1j * theta)
    ep = np.exp(1j * phi)
    t00 = 0.5 * (et - 1) * ep
    t01 = 0.5j * (et + 1)
    t10 = 0.5j * (et + 1) * ep
    t11 = 0.5 * (1 - et)
    return t00, t01, t10, t11


class _MziColumn:
    """One layer of MZIs acting on mode pairs ``(r, r+1)`` for ``r = offset, offset+2, ...``."""

    def __init__(self, n_modes: int, offset: int, index: np.ndarray):
        self.top = np.arange(offset, n_modes - 1, 2)
        self.bot = self.top + 1
        self.index = index
        self.theta_idx = index[0::2]
        self.phi_idx = index[1::2]

    def left(self, q, m):
        t00, t01, t10, t11 = _mzi_entries(q[..., self.theta_idx], q[..., self.phi_idx])
        top = m[..., self.top, :]
        bot = m[..., self.bot, :]
        out = m.copy()
        out[..., self.top, :] = t00[..., None] * top + t01[..., None] * bot
        out[..., self.bot, :] = t10[..., None] * top + t11[..., None] * bot
        return out

    def right(self, q, m):
        t00, t01, t10, t11 = _mzi_entries(q[..., self.theta_idx], q[..., self.phi_idx])
        left = m[..., :, self.top]
        right = m[..., :, self.bot]
        out = m.copy()
        out[..., :, self.top] = left * t00[..., None, :] + right * t10[..., None, :]
        out[..., :, self.bot] = left * t01[..., None, :] + right * t11[..., None, :]
        return out

    def grad(self, q, p, r):
        theta = q[self.theta_idx]
        phi = q[self.phi_idx]
        pt, pb = p[self.top], p[self.bot]
        rt, rb = r[:, self.top], r[:, self.bot]
        g_tt = np.einsum("kc,ck->k", pt, rt)
        g_tb = np.einsum("kc,ck->k", pt, rb)
        g_bt = np.einsum("kc,ck->k", pb, rt)
        g_bb = np.einsum("kc,ck->k", pb, rb)
        t00, _, t10, _ = _mzi_entries(theta, phi)
        et = np.exp(1j * theta)
        ep = np.exp(1j * phi)
        # pairs dT[a, b] with G[b, a]
        d_theta = 0.5j * et * (g_tt * ep + g_bt * 1j + g_tb * 1j * ep - g_bb)
        d_phi = 1j * (g_tt * t00 + g_tb * t10)
        out = np.empty(2 * len(theta))
        out[0::2] = 2 * np.real(d_theta)
        out[1::2] = 2 * np.real(d_phi)
        return out


def mzi_transfer(theta: float, phi: float) -> np.ndarray:
    """
    2x2 transfer matrix of one MZI: phase ``phi`` on the upper input arm, a 50:50
    splitter ``(1/sqrt 2)[[1, i], [i, 1]]``, phase ``theta`` on the upper internal
    arm, then a second splitter.
    """
    return _BS @ np.diag([np.exp(1j * theta), 1]) @ _BS @ np.diag([np.exp(1j * phi), 1])


# Devices


class Device:
    """Common behaviour of the two architectures."""

    kind: str
    n_modes: int
    n_layers: int
    crosstalk: CrosstalkModel | None

    @property
    def param_count(self) -> int:
        raise NotImplementedError

    @property
    def elements(self) -> list:
        raise NotImplementedError

    def phase_arrays(self) -> list[np.ndarray]:
        """Parameter indices of each physical shifter array (crosstalk acts within these)."""
        raise NotImplementedError

    @cached_property
    def crosstalk_operator(self) -> np.ndarray | None:
        return _crosstalk_operator(self.phase_arrays(), self.param_count, self.crosstalk)

    def effective_phases(self, p: np.ndarray) -> np.ndarray:
        c = self.crosstalk_operator
        return p if c is None else p @ c.T

    def check_params(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape[-1:] != (self.param_count,) or p.ndim > 2:
            raise InvalidParameterError(
                f"{self.kind} device expects {self.param_count} parameters, got shape {p.shape}"
            )
        if not np.all(np.isfinite(p)):
            raise InvalidParameterError("parameters must be finite")
        return p

    def forward(self, p) -> np.ndarray:
        """Transfer matrix for ``p`` of shape ``(P,)``, or a stack for ``p`` of shape ``(B, P)``."""
        p = self.check_params(p)
        q = self.effective_phases(p)
        shape = q.shape[:-1] + (self.n_modes, self.n_modes)
        x = np.broadcast_to(np.eye(self.n_modes, dtype=complex), shape).copy()
        for el in self.elements:
            x = el.left(q, x)
        return x

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _crosstalk_from(value):
    if value is None or isinstance(value, CrosstalkModel):
        return value
    return CrosstalkModel(tuple(tuple(kv) for kv in value))


@dataclass(frozen=True, eq=False)
class MplcDevice(Device):
    n_modes: int
    n_layers: int
    mixers: tuple
    include_output_phases: bool = True
    crosstalk: CrosstalkModel | None = None
    seeds: dict = field(default_factory=dict)
    kind = "mplc"

    def __post_init__(self):
        n, m = int(self.n_modes), int(self.n_layers)
        if n < 1 or m < 1:
            raise InvalidArgumentError("n_modes and n_layers must be >= 1")
        if len(self.mixers) != m:
            raise InvalidArgumentError(f"expected {m} mixers, got {len(self.mixers)}")
        mixers = tuple(check_unitary(a) for a in self.mixers)
        for a in mixers:
            if a.shape != (n, n):
                raise InvalidArgumentError(f"mixer shape {a.shape} does not match N={n}")
            a.setflags(write=False)
        for i in range(m):
            for j in range(i + 1, m):
                if np.linalg.norm(mixers[i] - mixers[j]) <= 1e-6:
                    raise InvariantViolationError(f"mixers {i + 1} and {j + 1} are not distinct")
        object.__setattr__(self, "mixers", mixers)
        object.__setattr__(self, "crosstalk", _crosstalk_from(self.crosstalk))

    @classmethod
    def random(cls, n_modes, n_layers, rng: RngStream, include_output_phases=True, crosstalk=None):
        """Device whose mixers are Haar-sampled, in order, from ``rng``."""
        gen = rng.generator()
        mixers = tuple(haar_random_unitary(n_modes, gen) for _ in range(n_layers))
        return cls(
            n_modes, n_layers, mixers, include_output_phases, crosstalk,
            seeds={"seed": rng.seed, "stream": rng.stream},
        )

    @property
    def n_arrays(self) -> int:
        return self.n_layers + 1 if self.include_output_phases else self.n_layers

    @property
    def param_count(self) -> int:
        return self.n_modes * self.n_arrays

    @property
    def dof_count(self) -> int:
        return (self.n_layers + 1) * (self.n_modes - 1) + 1

    @property
    def is_universal(self) -> bool:
        return self.dof_count >= self.n_modes**2

    def phase_arrays(self):
        n = self.n_modes
        return [np.arange(i * n, (i + 1) * n) for i in range(self.n_arrays)]

    @cached_property
    def elements(self):
        arrays = self.phase_arrays()
        els = []
        for i, a in enumerate(self.mixers):
            els.append(_PhaseArray(arrays[i]))
            els.append(_FixedMixer(a))
        if self.include_output_phases:
            els.append(_PhaseArray(arrays[-1]))
        return els

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "n_modes": self.n_modes,
            "n_layers": self.n_layers,
            "include_output_phases": self.include_output_phases,
            "crosstalk": None if self.crosstalk is None else self.crosstalk.to_list(),
            "mixers": [
                [[float(z.real), float(z.imag)] for z in a.ravel()] for a in self.mixers
            ],
            "seeds": dict(self.seeds),
        }


@dataclass(frozen=True, eq=False)
class ClementsDevice(Device):
    n_modes: int
    n_layers: int
    crosstalk: CrosstalkModel | None = None
    kind = "clements"

    def __post_init__(self):
        if int(self.n_modes) < 2 or self.n_modes % 2:
            raise UnsupportedDimensionError("n_modes must be even")
        if int(self.n_layers) < 1:
            raise InvalidArgumentError("n_layers must be >= 1")
        object.__setattr__(self, "crosstalk", _crosstalk_from(self.crosstalk))

    def mzis_in_layer(self, j: int) -> int:
        """Number of MZIs in layer ``j`` (1-based)."""
        return self.n_modes // 2 if j % 2 else self.n_modes // 2 - 1

    @property
    def param_count(self) -> int:
        return sum(2 * self.mzis_in_layer(j) for j in range(1, self.n_layers + 1)) + self.n_modes

    def _layer_slices(self):
        start = 0
        for j in range(1, self.n_layers + 1):
            size = 2 * self.mzis_in_layer(j)
            yield j, np.arange(start, start + size)
            start += size

    def phase_arrays(self):
        # internal (theta) and input-arm (phi) shifters of a column are separate arrays
        arrays = []
        for _, idx in self._layer_slices():
            if len(idx):
                arrays.extend([idx[0::2], idx[1::2]])
        arrays.append(np.arange(self.param_count - self.n_modes, self.param_count))
        return arrays

    @cached_property
    def elements(self):
        els = [_MziColumn(self.n_modes, (j + 1) % 2, idx) for j, idx in self._layer_slices()]
        els.append(_PhaseArray(np.arange(self.param_count - self.n_modes, self.param_count)))
        return els

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "n_modes": self.n_modes,
            "n_layers": self.n_layers,
            "include_output_phases": True,
            "crosstalk": None if self.crosstalk is None else self.crosstalk.to_list(),
            "mixers": [],
            "seeds": {},
        }


def param_count(dev: Device) -> int:
    return dev.param_count


def dof_count(dev: MplcDevice) -> int:
    """Real degrees of freedom of an MPLC device: ``(m + 1)(N - 1) + 1``."""
    if not isinstance(dev, MplcDevice):
        raise InvalidArgumentError("dof_count is defined for MPLC devices")
    return dev.dof_count


def mplc_forward(dev: MplcDevice, p) -> np.ndarray:
    return dev.forward(p)


def clements_forward(dev: ClementsDevice, p) -> np.ndarray:
    return dev.forward(p)


def device_from_dict(d: dict) -> Device:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise InvalidArgumentError(f"unsupported device schema version {d.get('schema_version')!r}")
    kind = d.get("kind")
    n = int(d["n_modes"])
    if kind == "mplc":
        mixers = tuple(
            np.array([complex(re, im) for re, im in flat]).reshape(n, n) for flat in d["mixers"]
        )
        return MplcDevice(
            n, int(d["n_layers"]), mixers, bool(d["include_output_phases"]),
            d.get("crosstalk"), seeds=dict(d.get("seeds") or {}),
        )
    if kind == "clements":
        return ClementsDevice(n, int(d["n_layers"]), d.get("crosstalk"))
    raise InvalidArgumentError(f"unknown device kind {kind!r}")


def load_device(path) -> Device:
    with open(path) as fh:
        return device_from_dict(json.load(fh))

"""
Phase gradients of the device losses.

:func:`analytic_gradient` runs one forward pass storing prefix products and one
backward pass accumulating ``W^H S`` (``S`` = product of everything after an
element), so all components cost ``O(m N^3)``. :func:`approx_gradient` is the
forward-difference estimate that only needs loss values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .devices import ClementsDevice, CrosstalkModel, Device, MplcDevice
from .distances import LossKind, loss_and_adjoint
from .errors import InvalidArgumentError, InvalidParameterError
from .linalg import RngStream, check_unitary, haar_random_unitary
from .reference import reference_loss

#: Finite-difference steps ``2**-k`` used by the resolution sweeps.
DELTA_EXPONENTS = (6, 9, 10, 12, 15, 18)
STANDARD_DELTAS = tuple(2.0**-k for k in DELTA_EXPONENTS)


@dataclass(frozen=True)
class GradientMode:
    """``delta=None`` selects the analytic gradient; otherwise forward differences with step ``delta``."""

    delta: float | None = None

    def __post_init__(self):
        if self.delta is not None and not self.delta > 0:
            raise InvalidArgumentError("finite-difference delta must be > 0")

    @classmethod
    def analytic(cls) -> "GradientMode":
        return cls(None)

    @classmethod
    def forward_difference(cls, delta: float) -> "GradientMode":
        return cls(float(delta))

    @property
    def is_analytic(self) -> bool:
        return self.delta is None

    @classmethod
    def parse(cls, value) -> "GradientMode":
        """Accepts ``"analytic"``, ``"fd:<delta>"``, ``"2^-10"`` or a number."""
        if isinstance(value, cls):
            return value
        if value is None or str(value).lower() == "analytic":
            return cls.analytic()
        text = str(value).lower()
        if text.startswith("fd:"):
            text = text[3:]
        return cls.forward_difference(parse_delta(text))

    def label(self) -> str:
        if self.delta is None:
            return "analytic"
        k = -math.log2(self.delta)
        return f"fd:2^-{int(k)}" if k == int(k) else f"fd:{self.delta!r}"


def parse_delta(text: str) -> float:
    text = str(text).strip()
    if "^" in text:
        base, exp = text.split("^", 1)
        return float(base) ** float(exp)
    return float(text)


def _backprop(dev: Device, p: np.ndarray, u: np.ndarray, kind: LossKind):
    q = dev.effective_phases(p)
    n = dev.n_modes
    elements = dev.elements
    prefixes = []
    x = np.eye(n, dtype=complex)
    for el in elements:
        prefixes.append(x)
        x = el.left(q, x)
    value, w = loss_and_adjoint(kind, x, u)
    grad_q = np.zeros(dev.param_count)
    r = w.conj().T
    for el, pre in zip(reversed(elements), reversed(prefixes)):
        if len(el.index):
            grad_q[el.index] = el.grad(q, pre, r)
        r = el.right(q, r)
    c = dev.crosstalk_operator
    grad = grad_q if c is None else c.T @ grad_q
    return value, grad


def analytic_value_and_gradient(dev: Device, p, u, kind=LossKind.FROBENIUS):
    p = dev.check_params(p)
    if p.ndim != 1:
        raise InvalidParameterError("expected a single parameter vector")
    u = np.asarray(u, dtype=complex)
    if u.shape != (dev.n_modes, dev.n_modes):
        raise InvalidParameterError(f"target shape {u.shape} does not match device N={dev.n_modes}")
    return _backprop(dev, p, u, LossKind.parse(kind))


def analytic_gradient(dev: Device, p, u, kind=LossKind.FROBENIUS) -> np.ndarray:
    """Exact derivative of the loss with respect to every applied phase."""
    return analytic_value_and_gradient(dev, p, u, kind)[1]


def batch_loss(kind: LossKind, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Loss of each matrix in a stack ``x`` of shape ``(B, N, N)`` against ``u``."""
    n = u.shape[0]
    if kind is LossKind.FROBENIUS:
        d = x - u
        return np.sum(d.real**2 + d.imag**2, axis=(-2, -1)) / (4 * n)
    mag = np.abs(x @ u.conj().T)
    return np.sum((mag - np.eye(n)) ** 2, axis=(-2, -1))


class LossObjective:
    """
    Loss of a device configuration against a fixed target, as a function of
    the applied phases. Counts every loss evaluation in ``n_evals``; an
    analytic gradient costs one evaluation, a forward-difference gradient
    ``dim + 1``.
    """

    def __init__(self, dev: Device, target, kind=LossKind.FROBENIUS, mode: GradientMode | None = None):
        self.dev = dev
        self.target = check_unitary(target)
        if self.target.shape != (dev.n_modes, dev.n_modes):
            raise InvalidParameterError("target dimension does not match the device")
        self.kind = LossKind.parse(kind)
        self.mode = mode or GradientMode.analytic()
        self.n_evals = 0

    @property
    def dim(self) -> int:
        return self.dev.param_count

    def __call__(self, p) -> float:
        self.n_evals += 1
        x = self.dev.forward(p)
        return float(batch_loss(self.kind, x[None], self.target)[0])

    def batch(self, ps: np.ndarray) -> np.ndarray:
        ps = np.atleast_2d(ps)
        self.n_evals += ps.shape[0]
        return batch_loss(self.kind, self.dev.forward(ps), self.target)

    def value_and_grad(self, p):
        p = np.asarray(p, dtype=float)
        if self.mode.is_analytic:
            self.n_evals += 1
            return _backprop(self.dev, self.dev.check_params(p), self.target, self.kind)
        return approx_value_and_gradient(self, p, self.mode.delta)


def approx_value_and_gradient(objective, p, delta: float):
    """Forward differences sharing the base value; exactly ``dim + 1`` objective evaluations."""
    if not delta > 0:
        raise InvalidArgumentError("delta must be > 0")
    p = np.asarray(p, dtype=float)
    dim = p.size
    probes = np.repeat(p[None, :], dim + 1, axis=0)
    probes[np.arange(1, dim + 1), np.arange(dim)] += delta
    if hasattr(objective, "batch"):
        values = np.asarray(objective.batch(probes), dtype=float)
    else:
        values = np.array([objective(row) for row in probes], dtype=float)
    f0 = values[0]
    return float(f0), (values[1:] - f0) / delta


def approx_gradient(objective, p, delta: float) -> np.ndarray:
    """Forward-difference gradient ``(f(p + delta e_j) - f(p)) / delta``."""
    return approx_value_and_gradient(objective, p, delta)[1]


def central_difference(f, p, step: float = 1e-6) -> np.ndarray:
    """Central differences; evaluates ``f`` at ``p +/- step e_j`` with whatever precision ``f`` uses."""
    p = np.asarray(p, dtype=np.longdouble)
    g = np.empty(p.size)
    for j in range(p.size):
        e = np.zeros(p.size, dtype=np.longdouble)
        e[j] = step
        g[j] = float((f(p + e) - f(p - e)) / (2 * np.longdouble(step)))
    return g


@dataclass
class GradientCheckReport:
    max_rel_error: float
    trial: int
    component: int
    analytic: float
    numeric: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-5


def relative_errors(analytic, numeric, rtol: float = 1e-5, atol: float = 1e-9) -> np.ndarray:
    """
    Componentwise error relative to ``max(|a|, |n|, atol / rtol)``.

    A value below ``rtol`` means the component passes ``|a - n| <= max(rtol * |a|, atol)``.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
    return np.abs(analytic - numeric) / scale


def gradient_check(
    arch: str,
    n_modes: int,
    n_layers: int,
    kind=LossKind.FROBENIUS,
    trials: int = 10,
    rng: RngStream | None = None,
    crosstalk: CrosstalkModel | None = None,
    include_output_phases: bool = True,
    step: float = 1e-6,
) -> GradientCheckReport:
    """
    Compare :func:`analytic_gradient` against central differences on random
    ``(device, p, target)`` triples and report the worst component.

    The differences are taken on the extended-precision reference model so
    that their rounding noise stays well below the ``1e-9`` absolute floor.
    """
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    kind = LossKind.parse(kind)
    gen = (rng or RngStream(0)).generator()
    worst = GradientCheckReport(0.0, -1, -1, 0.0, 0.0)
    for t in range(trials):
        if arch == "mplc":
            mixers = tuple(haar_random_unitary(n_modes, gen) for _ in range(n_layers))
            dev = MplcDevice(n_modes, n_layers, mixers, include_output_phases, crosstalk)
        elif arch == "clements":
            dev = ClementsDevice(n_modes, n_layers, crosstalk)
        else:
            raise InvalidArgumentError(f"unknown architecture {arch!r}")
        target = haar_random_unitary(n_modes, gen)
        p = gen.uniform(0, 2 * np.pi, dev.param_count)
        g = analytic_gradient(dev, p, target, kind)
        g_fd = central_difference(lambda v: reference_loss(kind, dev, v, target), p, step)
        err = relative_errors(g, g_fd)
        j = int(np.argmax(err))
        if err[j] >= worst.max_rel_error:
            worst = GradientCheckReport(float(err[j]), t, j, float(g[j]), float(g_fd[j]))
    return worst

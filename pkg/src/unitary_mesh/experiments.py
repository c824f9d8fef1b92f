"""
Batch trials, summaries and landscape data.

A batch shares one device (mixers drawn from the ``"device"`` stream of the
base seed) and one Haar target (``"target"`` stream); trial ``t`` starts
from phases drawn uniformly on ``[0, 2pi)`` from stream ``t``. With
``vary_target`` every trial draws its own target from stream ``"target/t"``.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .devices import ClementsDevice, CrosstalkModel, Device, MplcDevice
from .distances import LossKind
from .errors import InvalidArgumentError, NumericalFailure
from .gradients import GradientMode, LossObjective
from .linalg import RngStream, haar_random_unitary
from .optimizer import LbfgsConfig, OptimResult, Termination, minimize

logger = logging.getLogger(__name__)

JOBS_ENV = "UNITARY_MESH_JOBS"

#: Optimizer settings for experiments. ``grad_tol`` applies to the raw
#: distance (``||X - U||^2`` or ``h``). The relative function tolerance ends runs whose progress has stalled.
#: Restarting after a collapsed line search keeps biased forward-difference
#: gradients from ending a run far above their noise floor.
EXPERIMENT_OPTIMIZER = LbfgsConfig(ftol=1e-7, grad_tol=1e-5, restart_on_weak_step=True)


@dataclass(frozen=True)
class TrialConfig:
    architecture: str = "mplc"
    n_modes: int = 8
    n_layers: int = 9
    loss: LossKind = LossKind.FROBENIUS
    gradient: GradientMode = field(default_factory=GradientMode)
    crosstalk: CrosstalkModel | None = None
    n_trials: int = 64
    base_seed: int = 0
    optimizer: LbfgsConfig = EXPERIMENT_OPTIMIZER
    record_param_history: bool = False
    vary_target: bool = False
    #: MPLC only; ``None`` keeps the output array for the Frobenius loss and
    #: drops it for the phase-insensitive loss
    output_phases: bool | None = None

    def __post_init__(self):
        arch = str(self.architecture).lower()
        if arch not in ("mplc", "clements"):
            raise InvalidArgumentError(f"architecture must be 'mplc' or 'clements', got {arch!r}")
        object.__setattr__(self, "architecture", arch)
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        object.__setattr__(self, "gradient", GradientMode.parse(self.gradient))
        if self.n_trials < 1:
            raise InvalidArgumentError("n_trials must be >= 1")
        if self.n_layers < 1 or self.n_modes < 1:
            raise InvalidArgumentError("n_modes and n_layers must be >= 1")
        if arch == "clements" and self.n_modes % 2:
            raise InvalidArgumentError("n_modes must be even for the Clements architecture")

    @property
    def include_output_phases(self) -> bool:
        if self.output_phases is not None:
            return bool(self.output_phases)
        return self.loss is LossKind.FROBENIUS

    def build_device(self) -> Device:
        if self.architecture == "mplc":
            return MplcDevice.random(
                self.n_modes, self.n_layers, RngStream.named(self.base_seed, "device"),
                include_output_phases=self.include_output_phases, crosstalk=self.crosstalk,
            )
        return ClementsDevice(self.n_modes, self.n_layers, self.crosstalk)

    def target(self, trial: int | None = None) -> np.ndarray:
        name = f"target/{trial}" if self.vary_target and trial is not None else "target"
        return haar_random_unitary(self.n_modes, RngStream.named(self.base_seed, name))

    def initial_params(self, trial: int, dim: int) -> np.ndarray:
        return RngStream.named(self.base_seed, trial).generator().uniform(0.0, 2 * np.pi, dim)

    def loss_scale(self) -> float:
        """Divide raw losses by this to put them on the ``[0, 1]`` scale of the Frobenius loss."""
        return 1.0 if self.loss is LossKind.FROBENIUS else 4.0 * self.n_modes

    def with_optimizer(self, **kwargs) -> "TrialConfig":
        return replace(self, optimizer=replace(self.optimizer, **kwargs))


@dataclass
class TrialResult:
    trial: int
    result: OptimResult

    @property
    def failed(self) -> bool:
        return self.result.failed


def _run_one(cfg: TrialConfig, trial: int, dev: Device | None = None) -> TrialResult:
    dev = dev or cfg.build_device()
    obj = LossObjective(dev, cfg.target(trial), cfg.loss, cfg.gradient)
    p0 = cfg.initial_params(trial, dev.param_count)
    # grad_tol refers to the raw distance (4N times the normalized Frobenius loss)
    raw_per_objective = 4 * cfg.n_modes / cfg.loss_scale()
    opt = replace(cfg.optimizer, grad_tol=cfg.optimizer.grad_tol / raw_per_objective)
    if cfg.record_param_history and not opt.history_stride:
        opt = replace(opt, history_stride=1)
    try:
        res = minimize(obj.value_and_grad, p0, opt)
    except NumericalFailure as exc:
        logger.warning("trial %d aborted: %s", trial, exc)
        res = OptimResult(
            final_params=np.asarray(exc.iterate if exc.iterate is not None else p0),
            final_loss=float("nan"),
            trace=[],
            termination=Termination.LINE_SEARCH_FAILURE,
            n_objective_evals=obj.n_evals,
            failed=True,
            message=str(exc),
        )
    res.n_objective_evals = obj.n_evals
    return TrialResult(trial, res)


def default_jobs() -> int:
    env = os.environ.get(JOBS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_trials(cfg: TrialConfig, jobs: int | None = None) -> list[TrialResult]:
    """Run ``cfg.n_trials`` independent optimizations; results are ordered by trial index."""
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    trials = range(cfg.n_trials)
    if jobs == 1 or cfg.n_trials == 1:
        dev = cfg.build_device()
        return [_run_one(cfg, t, dev) for t in trials]
    with ProcessPoolExecutor(max_workers=min(jobs, cfg.n_trials)) as pool:
        return list(pool.map(_run_one, [cfg] * cfg.n_trials, trials))


# Summaries


@dataclass
class QuantileSummary:
    min: np.ndarray
    q25: np.ndarray
    median: np.ndarray
    q75: np.ndarray
    max: np.ndarray

    def __len__(self):
        return len(self.median)

    def to_dict(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)] for k in ("min", "q25", "median", "q75", "max")}


def _traces(results) -> list[np.ndarray]:
    out = []
    for r in results:
        res = r.result if isinstance(r, TrialResult) else r
        if getattr(res, "failed", False) or len(res.trace) == 0:
            continue
        out.append(np.asarray(res.trace, dtype=float))
    return out


def summarize(results, scale: float = 1.0) -> QuantileSummary:
    """
    Per-iteration order statistics over trials.

    Shorter traces are extended by holding their final value; quantiles
    interpolate linearly between order statistics.
    """
    traces = _traces(results)
    if not traces:
        raise InvalidArgumentError("summarize needs at least one completed trial")
    length = max(len(t) for t in traces)
    table = np.array([np.pad(t, (0, length - len(t)), mode="edge") for t in traces]) / scale
    q = np.quantile(table, [0.0, 0.25, 0.5, 0.75, 1.0], axis=0)
    return QuantileSummary(*q)


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {}
    return {
        "min": float(v.min()),
        "q25": float(np.quantile(v, 0.25)),
        "median": float(np.median(v)),
        "q75": float(np.quantile(v, 0.75)),
        "max": float(v.max()),
        "mean": float(v.mean()),
    }


def final_losses(results, scale: float = 1.0) -> np.ndarray:
    return np.array([r.result.final_loss for r in results if not r.failed]) / scale


def batch_report(cfg: TrialConfig, results: list[TrialResult]) -> dict:
    """Everything the summary file records about a batch."""
    scale = cfg.loss_scale()
    ok = [r for r in results if not r.failed]
    terminations: dict = {}
    for r in results:
        key = "failed" if r.failed else r.result.termination.value
        terminations[key] = terminations.get(key, 0) + 1
    report = {
        "loss_normalization": "raw" if scale == 1.0 else "raw / 4N",
        "final_loss": _stats([r.result.final_loss / scale for r in ok]),
        "initial_loss": _stats([r.result.trace[0] / scale for r in ok]),
        "n_evals": _stats([r.result.n_objective_evals for r in results]),
        "iterations": _stats([r.result.n_iterations for r in ok]),
        "termination": dict(sorted(terminations.items())),
        "trials": [
            {
                "trial": r.trial,
                "failed": r.failed,
                "message": r.result.message,
                "termination": r.result.termination.value,
                "final_loss": float(r.result.final_loss),
                "iterations": r.result.n_iterations,
                "n_evals": r.result.n_objective_evals,
            }
            for r in results
        ],
    }
    if ok:
        report["per_iteration"] = summarize(ok, scale).to_dict()
    return report


# PCA trajectory and landscape


@dataclass
class TrajectoryRecord:
    principal_axes: np.ndarray
    projected_path: np.ndarray
    explained_variance: np.ndarray
    grid_x: np.ndarray
    grid_y: np.ndarray
    landscape: np.ndarray
    center: np.ndarray
    degenerate: bool = False

    @property
    def x_range(self):
        return float(self.grid_x[0]), float(self.grid_x[-1])

    @property
    def y_range(self):
        return float(self.grid_y[0]), float(self.grid_y[-1])

    def point(self, a: float, b: float) -> np.ndarray:
        """Parameter vector at plane coordinates ``(a, b)``."""
        return self.center + a * self.principal_axes[0] + b * self.principal_axes[1]

    def interpolate(self, a: float, b: float) -> float:
        """Bilinear interpolation of the landscape grid."""
        gx, gy = self.grid_x, self.grid_y
        i = int(np.clip(np.searchsorted(gx, a) - 1, 0, len(gx) - 2))
        j = int(np.clip(np.searchsorted(gy, b) - 1, 0, len(gy) - 2))
        tx = (a - gx[i]) / (gx[i + 1] - gx[i])
        ty = (b - gy[j]) / (gy[j + 1] - gy[j])
        z = self.landscape
        return float(
            (1 - tx) * (1 - ty) * z[j, i] + tx * (1 - ty) * z[j, i + 1]
            + (1 - tx) * ty * z[j + 1, i] + tx * ty * z[j + 1, i + 1]
        )

    def to_dict(self) -> dict:
        return {
            "axes": self.principal_axes.tolist(),
            "center": self.center.tolist(),
            "projected_path": self.projected_path.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "degenerate": self.degenerate,
            "grid": {
                "x_range": list(self.x_range),
                "y_range": list(self.y_range),
                "shape": list(self.landscape.shape),
                "values": self.landscape.ravel().tolist(),
                "value": "log10(loss)",
                "order": "row-major, rows follow y",
            },
        }


def _complete_basis(axis: np.ndarray) -> np.ndarray:
    """Some unit vector orthogonal to ``axis``."""
    k = int(np.argmin(np.abs(axis)))
    e = np.zeros_like(axis)
    e[k] = 1.0
    v = e - (e @ axis) * axis
    return v / np.linalg.norm(v)


def pca_trajectory(history, loss_evaluator, grid_resolution: int, padding: float = 0.2) -> TrajectoryRecord:
    """
    Project an optimization path onto its two leading principal directions and
    sample ``log10`` of the loss on a grid over that plane.

    ``loss_evaluator`` takes a parameter vector; if it has a ``batch`` method
    that is used for the grid. The grid covers the bounding box of the
    projected path widened by ``padding`` of its extent on each side.
    """
    h = np.asarray(history, dtype=float)
    if h.ndim != 2 or h.shape[0] < 3:
        raise InvalidArgumentError("need a history of at least 3 parameter vectors")
    if int(grid_resolution) < 2:
        raise InvalidArgumentError("grid_resolution must be >= 2")
    res = int(grid_resolution)
    center = h.mean(axis=0)
    _, s, vt = np.linalg.svd(h - center, full_matrices=False)
    var = s**2
    total = var.sum()
    degenerate = len(s) < 2 or s[1] <= 1e-12 * max(s[0], 1e-300)
    if total == 0:
        raise InvalidArgumentError("history does not move")
    axes = np.empty((2, h.shape[1]))
    axes[0] = vt[0]
    axes[1] = _complete_basis(vt[0]) if degenerate else vt[1]
    explained = np.array([var[0] / total, 0.0 if degenerate else var[1] / total])
    path = (h - center) @ axes.T

    lo = path.min(axis=0)
    hi = path.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    lo = lo - padding * span
    hi = hi + padding * span
    gx = np.linspace(lo[0], hi[0], res)
    gy = np.linspace(lo[1], hi[1], res)
    aa, bb = np.meshgrid(gx, gy)
    pts = center + aa.reshape(-1, 1) * axes[0] + bb.reshape(-1, 1) * axes[1]
    if hasattr(loss_evaluator, "batch"):
        values = np.concatenate([loss_evaluator.batch(chunk) for chunk in np.array_split(pts, max(1, len(pts) // 256))])
    else:
        values = np.array([loss_evaluator(p) for p in pts])
    grid = np.log10(np.maximum(values, 1e-300)).reshape(res, res)
    return TrajectoryRecord(axes, path, explained, gx, gy, grid, center, bool(degenerate))


# Finite-difference resolution sweep


def delta_sweep(cfg: TrialConfig, deltas, jobs: int | None = None) -> dict:
    """Run the batch once per finite-difference step; returns ``{delta: (report, results)}``."""
    if not deltas:
        raise InvalidArgumentError("need at least one delta")
    if cfg.gradient.is_analytic:
        raise InvalidArgumentError("delta_sweep requires a forward-difference gradient mode")
    out = {}
    for delta in deltas:
        sub = replace(cfg, gradient=GradientMode.forward_difference(delta))
        results = run_trials(sub, jobs)
        out[float(delta)] = (batch_report(sub, results), results)
    return out


# Flat configuration files

_FLAT_DEFAULTS = {
    "arch": "mplc",
    "n": 8,
    "m": 9,
    "loss": "frobenius",
    "grad": "analytic",
    "delta": None,
    "crosstalk": False,
    "trials": 64,
    "seed": None,
    "record_history": False,
    "vary_target": False,
    "output_phases": None,
}
_OPT_FIELDS = {f.name for f in fields(LbfgsConfig)}


def flat_keys() -> list[str]:
    return list(_FLAT_DEFAULTS) + sorted(_OPT_FIELDS)


def config_from_flat(flat: dict) -> TrialConfig:
    """Build a :class:`TrialConfig` from the flat key/value form used by config files."""
    unknown = set(flat) - set(_FLAT_DEFAULTS) - _OPT_FIELDS
    if unknown:
        raise InvalidArgumentError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    d = {**_FLAT_DEFAULTS, **{k: v for k, v in flat.items() if v is not None or k == "output_phases"}}
    if d["seed"] is None:
        raise InvalidArgumentError("seed must be set")
    grad = str(d["grad"]).lower()
    if grad in ("fd", "forward_difference", "forward-difference"):
        if d["delta"] is None:
            raise InvalidArgumentError("grad=fd requires delta")
        gradient = GradientMode.parse(d["delta"])
    elif grad == "analytic":
        gradient = GradientMode.analytic()
    else:
        gradient = GradientMode.parse(grad)
    ct = d["crosstalk"]
    if ct is True or (isinstance(ct, str) and ct.lower() in ("true", "default", "yes", "1")):
        crosstalk = CrosstalkModel()
    elif ct in (False, None) or (isinstance(ct, str) and ct.lower() in ("false", "none", "no", "0")):
        crosstalk = None
    else:
        crosstalk = CrosstalkModel(tuple(tuple(kv) for kv in ct))
    opt = replace(EXPERIMENT_OPTIMIZER, **{k: flat[k] for k in _OPT_FIELDS if flat.get(k) is not None})
    return TrialConfig(
        architecture=d["arch"],
        n_modes=int(d["n"]),
        n_layers=int(d["m"]),
        loss=d["loss"],
        gradient=gradient,
        crosstalk=crosstalk,
        n_trials=int(d["trials"]),
        base_seed=int(d["seed"]),
        optimizer=opt,
        record_param_history=bool(d["record_history"]),
        vary_target=bool(d["vary_target"]),
        output_phases=d["output_phases"],
    )


def config_to_flat(cfg: TrialConfig) -> dict:
    opt = cfg.optimizer
    return {
        "arch": cfg.architecture,
        "n": cfg.n_modes,
        "m": cfg.n_layers,
        "loss": cfg.loss.value,
        "grad": "analytic" if cfg.gradient.is_analytic else "fd",
        "delta": cfg.gradient.delta,
        "crosstalk": None if cfg.crosstalk is None else cfg.crosstalk.to_list(),
        "trials": cfg.n_trials,
        "seed": cfg.base_seed,
        "record_history": cfg.record_param_history,
        "vary_target": cfg.vary_target,
        "output_phases": cfg.output_phases,
        **{f.name: getattr(opt, f.name) for f in fields(LbfgsConfig)},
    }

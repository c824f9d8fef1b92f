"""
Limited-memory BFGS with a strong-Wolfe line search.

The line search is the bracketing/zoom scheme of Nocedal & Wright
(Numerical Optimization, 2nd ed., Algorithms 3.5 and 3.6) with safeguarded
cubic interpolation. Only accepted iterates are recorded, and an iterate is
accepted only if it lowers the objective, so traces are non-increasing.
"""
from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericalFailure

logger = logging.getLogger(__name__)


class Termination(str, enum.Enum):
    GRAD_TOL = "grad_tol"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILURE = "line_search_failure"
    FUNCTION_TOL = "function_tol"


@dataclass(frozen=True)
class LbfgsConfig:
    history_size: int = 10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    grad_tol: float = 1e-12
    max_iterations: int = 10000
    max_line_search_steps: int = 40
    #: end the zoom phase once the bracket is narrower than this fraction of
    #: its far end and take the best sufficient-decrease point (0 disables)
    line_search_xtol: float = 0.0
    #: only steps meeting the strong Wolfe conditions update the curvature memory
    wolfe_only_updates: bool = False
    #: a step that misses the Wolfe conditions and either stalls (in the ftol
    #: sense) or has roundoff length is retried along steepest descent with the
    #: curvature memory cleared
    restart_on_weak_step: bool = False
    #: stop once ``ftol_patience`` consecutive accepted steps each lower the
    #: objective by less than ``ftol * f`` (``ftol = 0`` disables)
    ftol: float = 0.0
    ftol_patience: int = 1
    #: keep every k-th iterate in ``param_history`` (0 disables recording)
    history_stride: int = 0

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise InvalidArgumentError("require 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.history_size < 1:
            raise InvalidArgumentError("history_size must be >= 1")
        if self.max_iterations < 0 or self.max_line_search_steps < 1:
            raise InvalidArgumentError("iteration limits must be positive")
        if self.ftol < 0:
            raise InvalidArgumentError("ftol must be >= 0")
        if not 0 <= self.line_search_xtol < 1:
            raise InvalidArgumentError("line_search_xtol must be in [0, 1)")
        if self.ftol_patience < 1:
            raise InvalidArgumentError("ftol_patience must be >= 1")
        if self.history_stride < 0:
            raise InvalidArgumentError("history_stride must be >= 0")


@dataclass
class OptimResult:
    final_params: np.ndarray
    final_loss: float
    trace: list
    termination: Termination
    n_objective_evals: int
    param_history: list | None = None
    n_iterations: int = 0
    failed: bool = False
    message: str = ""
    extra: dict = field(default_factory=dict)


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimizer of the cubic through two points with slopes, clipped to ``[lo, hi]``."""
    d1 = g1 + g2 - 3 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0 and np.isfinite(disc):
        d2 = np.sqrt(disc)
        if x1 <= x2:
            t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2 * d2))
        else:
            t = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2 * d2))
        if np.isfinite(t):
            return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


class _Evaluator:
    def __init__(self, fun):
        self.fun = fun
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        f, g = self.fun(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise NumericalFailure(f"non-finite objective or gradient (f={f})", iterate=np.array(x))
        return f, g


def _strong_wolfe(ev, x, d, f0, g0, gtd0, t, c1, c2, max_steps, xtol=0.0):
    """
    Find a step satisfying the strong Wolfe conditions along ``d``.

    Returns ``(t, f, g, wolfe_ok)`` for the best point found, or ``None`` if no
    trial point decreased the objective.
    """
    d_scale = float(np.max(np.abs(d)))
    x_scale = max(1.0, float(np.max(np.abs(x))))
    t_prev, f_prev, g_prev, gtd_prev = 0.0, f0, g0, gtd0
    steps = 0
    bracket = None
    best = None

    def note(tt, ff, gg):
        nonlocal best
        if ff < f0 + c1 * tt * gtd0 and (best is None or ff < best[1]):
            best = (tt, ff, gg)

    f_new, g_new = ev(x + t * d)
    gtd_new = float(g_new @ d)
    steps += 1
    note(t, f_new, g_new)
    while True:
        if f_new > f0 + c1 * t * gtd0 or (steps > 1 and f_new >= f_prev):
            bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new, gtd_new)]
            break
        if abs(gtd_new) <= -c2 * gtd0:
            return t, f_new, g_new, True
        if gtd_new >= 0:
            bracket = [(t, f_new, g_new, gtd_new), (t_prev, f_prev, g_prev, gtd_prev)]
            break
        if steps >= max_steps:
            break
        lo, hi = t + 0.01 * (t - t_prev), 10 * t
        t_next = _cubic_min(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, lo, hi)
        t_prev, f_prev, g_prev, gtd_prev = t, f_new, g_new, gtd_new
        t = t_next
        f_new, g_new = ev(x + t * d)
        gtd_new = float(g_new @ d)
        steps += 1
        note(t, f_new, g_new)

    if bracket is not None:
        # bracket[0] is the low end (satisfies sufficient decrease, lowest f so far)
        low, high = bracket
        insufficient = False
        while steps < max_steps:
            a, b = sorted((low[0], high[0]))
            width = b - a
            if width * d_scale <= 1e-16 * x_scale:
                break
            if width <= xtol * b and best is not None:
                break
            t = _cubic_min(low[0], low[1], low[3], high[0], high[1], high[3], a, b)
            eps = 0.1 * width
            if min(b - t, t - a) < eps:
                if insufficient or t >= b or t <= a:
                    t = b - eps if abs(t - b) < abs(t - a) else a + eps
                    insufficient = False
                else:
                    insufficient = True
            else:
                insufficient = False
            f_new, g_new = ev(x + t * d)
            gtd_new = float(g_new @ d)
            steps += 1
            note(t, f_new, g_new)
            if f_new > f0 + c1 * t * gtd0 or f_new >= low[1]:
                high = (t, f_new, g_new, gtd_new)
            else:
                if abs(gtd_new) <= -c2 * gtd0:
                    return t, f_new, g_new, True
                if gtd_new * (high[0] - low[0]) >= 0:
                    high = low
                low = (t, f_new, g_new, gtd_new)

    if best is None:
        return None
    return best[0], best[1], best[2], False


def _two_loop(g, s_hist, y_hist, rho_hist):
    q = -g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def minimize(fun, p0, cfg: LbfgsConfig | None = None, callback=None) -> OptimResult:
    """
    Minimize ``fun`` starting from ``p0``.

    ``fun(p)`` must return ``(value, gradient)``. Every accepted iterate's value
    is appended to ``trace`` (``trace[0]`` is the starting value). A
    non-finite value or gradient raises :class:`NumericalFailure`.
    """
    cfg = cfg or LbfgsConfig()
    ev = _Evaluator(fun)
    x = np.array(p0, dtype=float)
    f, g = ev(x)
    trace = [f]
    history = [x.copy()] if cfg.history_stride else None
    s_hist: deque = deque(maxlen=cfg.history_size)
    y_hist: deque = deque(maxlen=cfg.history_size)
    rho_hist: deque = deque(maxlen=cfg.history_size)

    termination = Termination.MAX_ITERS
    it = 0
    stalled = 0
    while True:
        if float(np.max(np.abs(g))) <= cfg.grad_tol:
            termination = Termination.GRAD_TOL
            break
        if it >= cfg.max_iterations:
            termination = Termination.MAX_ITERS
            break

        d = _two_loop(g, list(s_hist), list(y_hist), list(rho_hist))
        gtd = float(g @ d)
        if not gtd < 0:
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            d = -g
            gtd = float(g @ d)

        found = _strong_wolfe(
            ev, x, d, f, g, gtd, 1.0, cfg.wolfe_c1, cfg.wolfe_c2, cfg.max_line_search_steps,
            cfg.line_search_xtol,
        )
        if (
            cfg.restart_on_weak_step
            and s_hist
            and found is not None
            and not found[3]
            and (
                f - found[1] <= cfg.ftol * abs(f)
                or found[0] * float(np.max(np.abs(d))) <= 1e-8 * max(1.0, float(np.max(np.abs(x))))
            )
        ):
            weak = (found, d)
            found = None
        else:
            weak = None
        if found is None and s_hist:
            # restart from steepest descent before giving up
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            d = -g
            gtd = float(g @ d)
            found = _strong_wolfe(
                ev, x, d, f, g, gtd, 1.0, cfg.wolfe_c1, cfg.wolfe_c2, cfg.max_line_search_steps,
                cfg.line_search_xtol,
            )
            if weak is not None and (found is None or found[1] > weak[0][1]):
                # the steepest-descent retry did worse; the memory stays cleared
                found, d = weak
        if found is None:
            termination = Termination.LINE_SEARCH_FAILURE
            break

        t, f_new, g_new, wolfe_ok = found
        s = t * d
        y = g_new - g
        sy = float(s @ y)
        if (wolfe_ok or not cfg.wolfe_only_updates) and sy > 1e-14 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
        x = x + s
        f_old, f, g = f, f_new, g_new
        it += 1
        trace.append(f)
        if history is not None and it % cfg.history_stride == 0:
            history.append(x.copy())
        if callback is not None:
            callback(it, x, f)
        stalled = stalled + 1 if f_old - f <= cfg.ftol * abs(f_old) else 0
        if stalled >= cfg.ftol_patience:
            termination = Termination.FUNCTION_TOL
            break

    if history is not None and it % cfg.history_stride:
        history.append(x.copy())
    logger.debug("lbfgs stopped after %d iterations (%s), f=%.3e", it, termination.value, f)
    return OptimResult(
        final_params=x,
        final_loss=f,
        trace=trace,
        termination=termination,
        n_objective_evals=ev.calls,
        param_history=history,
        n_iterations=it,
    )

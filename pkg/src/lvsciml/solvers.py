"""Explicit Runge-Kutta integrators: fixed-step RK4 and adaptive Tsit5.

Both return a :class:`~lvsciml.dynamics.Trajectory` recorded exactly at the
requested times. Tsit5 lands on every save point by clamping the step rather
than interpolating, which keeps outputs bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import DomainError, Trajectory

RhsFn = Callable[[float, np.ndarray], np.ndarray]


class IntegrationError(RuntimeError):
    """The integrator could not continue (non-finite state, step underflow, budget)."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class ToleranceSpec:
    reltol: float = 1e-6
    abstol: float = 1e-6
    dt_init: Optional[float] = None
    dt_min: float = 1e-12
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.reltol > 0 and self.abstol > 0):
            raise DomainError("reltol and abstol must be > 0")
        if not self.dt_min > 0:
            raise DomainError("dt_min must be > 0")
        if self.max_steps < 1:
            raise DomainError("max_steps must be >= 1")
        if self.dt_init is not None and not self.dt_init > 0:
            raise DomainError("dt_init must be > 0")


def _check_grid(t_grid) -> np.ndarray:
    grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if len(grid) < 1:
        raise DomainError("time grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise DomainError("time grid must be strictly increasing")
    return grid


def rk4_fixed(rhs: RhsFn, y0, t_grid, substeps: int = 1) -> Trajectory:
    """Classical RK4 with ``substeps`` equal sub-intervals per grid interval."""
    grid = _check_grid(t_grid)
    if substeps < 1:
        raise DomainError("substeps must be >= 1")
    y = np.array(y0, dtype=float).reshape(-1)
    out = np.empty((len(grid), len(y)))
    out[0] = y
    for i in range(len(grid) - 1):
        t, h = grid[i], (grid[i + 1] - grid[i]) / substeps
        for j in range(substeps):
            ts = t + j * h
            k1 = rhs(ts, y)
            k2 = rhs(ts + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(ts + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(ts + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at t={grid[i + 1]}", t=grid[i + 1])
        out[i + 1] = y
    return Trajectory(grid, out)


# Tsitouras (2011) 5(4) pair. Row i of A holds the coefficients of stage i+1.
TSIT5_C = np.array([0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0])
TSIT5_A = (
    (),
    (0.161,),
    (-0.008480655492356989, 0.335480655492357),
    (2.897153057105493, -6.359448489975075, 4.3622954328695815),
    (5.325864828439257, -11.748883564062828, 7.4955393428898365, -0.09249506636175525),
    (5.86145544294642, -12.92096931784711, 8.159367898576159, -0.071584973281401,
     -0.028269050394068383),
    (0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742,
     -3.290069515436081, 2.324710524099774),
)
TSIT5_B = np.array(TSIT5_A[6] + (0.0,))
TSIT5_BHAT = np.array([
    0.09468075576583945, 0.009183565540343254, 0.4877705284247616, 1.234297566930479,
    -2.7077123499835256, 1.866628418170587, 1.0 / 66.0,
])
TSIT5_E = TSIT5_B - TSIT5_BHAT

SAFETY = 0.9
GROW_MAX = 5.0
SHRINK_MIN = 0.2
PI_BETA1 = 0.7 / 5.0
PI_BETA2 = 0.4 / 5.0


def _initial_step(rhs, t0, y0, f0, tol, span):
    # Hairer-Wanner starting step heuristic for a 5th order method
    scale = tol.abstol + tol.reltol * np.abs(y0)
    d0 = math.sqrt(np.mean((y0 / scale) ** 2))
    d1 = math.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = rhs(t0 + h0, y0 + h0 * f0)
    d2 = math.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def tsit5_adaptive(rhs: RhsFn, y0, t_span, saveat, tol: ToleranceSpec = ToleranceSpec()) -> Trajectory:
    """Adaptive Tsit5 with a PI step controller; returns states at ``saveat``."""
    t0, t1 = map(float, t_span)
    save = _check_grid(saveat)
    if save[0] < t0 or save[-1] > t1:
        raise DomainError(f"saveat must lie within [{t0}, {t1}]")
    y = np.array(y0, dtype=float).reshape(-1)
    n = len(y)
    out = np.empty((len(save), n))
    k = np.empty((7, n))

    t = t0
    si = 0
    while si < len(save) and save[si] == t0:
        out[si] = y
        si += 1
    if si == len(save):
        return Trajectory(save, out)

    f0 = np.asarray(rhs(t, y), dtype=float)
    dt = tol.dt_init or _initial_step(rhs, t, y, f0, tol, save[-1] - t0)
    err_prev = 1.0
    steps = 0
    k[0] = f0
    while si < len(save):
        if steps >= tol.max_steps:
            raise IntegrationError(f"step budget {tol.max_steps} exhausted at t={t}", t=t)
        if dt < tol.dt_min:
            raise IntegrationError(f"step size {dt:.3e} below dt_min at t={t}", t=t)
        target = save[si]
        hit = t + dt >= target
        h = target - t if hit else dt

        for s in range(1, 6):
            ys = y + h * (np.asarray(TSIT5_A[s]) @ k[:s])
            k[s] = rhs(t + TSIT5_C[s] * h, ys)
        y_new = y + h * (TSIT5_B[:6] @ k[:6])
        k[6] = rhs(t + h, y_new)
        steps += 1

        err_vec = h * (TSIT5_E @ k)
        scale = tol.abstol + tol.reltol * np.maximum(np.abs(y), np.abs(y_new))
        err = math.sqrt(np.mean((err_vec / scale) ** 2))
        if not math.isfinite(err):
            dt = h * SHRINK_MIN
            continue

        if err <= 1.0:
            t = target if hit else t + h
            y = y_new
            k[0] = k[6]
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite state at t={t}", t=t)
            while si < len(save) and save[si] == t:
                out[si] = y
                si += 1
            err = max(err, 1e-10)
            factor = SAFETY * err ** (-PI_BETA1) * err_prev ** PI_BETA2
            dt = h * min(GROW_MAX, max(SHRINK_MIN, factor))
            err_prev = err
        else:
            factor = SAFETY * err ** (-PI_BETA1)
            dt = h * min(1.0, max(SHRINK_MIN, factor))
    return Trajectory(save, out)

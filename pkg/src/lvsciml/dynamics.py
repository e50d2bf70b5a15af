"""Lotka-Volterra ground truth: vector field, first integral, data generation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DomainError(ValueError):
    """Raised when an input lies outside an operation's domain."""


@dataclass(frozen=True)
class LvParams:
    alpha: float = 1.5
    beta: float = 1.0
    gamma: float = 0.5
    delta: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"LvParams.{name} must be finite and > 0, got {value!r}")

    @property
    def equilibrium(self) -> np.ndarray:
        return np.array([self.delta / self.gamma, self.alpha / self.beta])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Monotone time grid with a state row per time point."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(len(times), -1) if len(times) else states.reshape(0, 2)
        if len(times) < 1:
            raise DomainError("a trajectory needs at least one time point")
        if states.shape[0] != len(times):
            raise DomainError(f"{len(times)} times but {states.shape[0]} states")
        if np.any(np.diff(times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.states, other.states)

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.states[:, 1]

    def to_csv(self, path=None) -> str:
        """Write ``t,x,y`` rows using shortest round-trip float formatting."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "x", "y"])
        for t, row in zip(self.times, self.states):
            writer.writerow([format_float(t)] + [format_float(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["t", "x", "y"]:
                raise DomainError(f"expected header t,x,y in {path}, got {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise DomainError(f"{path} has no data rows")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1:])


def format_float(value: float) -> str:
    # repr gives the shortest string that round-trips; trim "1.0" to "1"
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def _as_state(state) -> np.ndarray:
    arr = np.asarray(state, dtype=float)
    if arr.shape != (2,):
        raise DomainError(f"state must have 2 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"state must be finite, got {arr}")
    return arr


def lv_rhs(state, p: LvParams = LvParams()) -> np.ndarray:
    x, y = _as_state(state)
    return np.array([p.alpha * x - p.beta * x * y, -p.delta * y + p.gamma * x * y])


def lv_invariant(state, p: LvParams = LvParams()) -> float:
    """Conserved quantity gamma*x - delta*ln x + beta*y - alpha*ln y."""
    x, y = _as_state(state)
    if x <= 0 or y <= 0:
        raise DomainError(f"invariant requires positive populations, got ({x}, {y})")
    return p.gamma * x - p.delta * math.log(x) + p.beta * y - p.alpha * math.log(y)


def uniform_grid(t0: float, t1: float, n_points: int) -> np.ndarray:
    if n_points == 1:
        return np.array([float(t0)])
    return np.linspace(t0, t1, n_points)


def generate_truth(
    p: LvParams = LvParams(),
    init=(1.0, 1.0),
    t_span=(0.0, 10.0),
    n_points: int = 101,
    tol=None,
) -> Trajectory:
    from .solvers import ToleranceSpec, tsit5_adaptive

    t0, t1 = map(float, t_span)
    if n_points < 1:
        raise DomainError("n_points must be >= 1")
    if not t1 > t0:
        raise DomainError("t_span must satisfy t1 > t0")
    y0 = _as_state(init)
    grid = uniform_grid(t0, t1, n_points)
    if n_points == 1:
        return Trajectory(grid, y0.reshape(1, 2))
    tol = tol or ToleranceSpec(reltol=1e-8, abstol=1e-8)
    return tsit5_adaptive(lambda t, u: lv_rhs_unchecked(u, p), y0, (t0, t1), grid, tol)


def lv_rhs_unchecked(u: np.ndarray, p: LvParams) -> np.ndarray:
    x, y = u
    return np.array([p.alpha * x - p.beta * x * y, -p.delta * y + p.gamma * x * y])


def make_rng(seed) -> np.random.Generator:
    """PCG64 bit generator; normals come from numpy's ziggurat sampler."""
    return np.random.Generator(np.random.PCG64(seed))


def add_noise(traj: Trajectory, sigma: float, seed=0) -> Trajectory:
    """Additive i.i.d. N(0, sigma^2) noise on every component, un-clipped."""
    if not sigma >= 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return Trajectory(traj.times.copy(), traj.states.copy())
    noise = make_rng(seed).standard_normal(traj.states.shape)
    return Trajectory(traj.times.copy(), traj.states + sigma * noise)

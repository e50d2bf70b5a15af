"""Adam, RMSProp and L-BFGS over flat parameter vectors, plus phased training."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dynamics import DomainError

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], tuple]


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)


@dataclass(frozen=True)
class RmsPropState:
    v: np.ndarray
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "RmsPropState":
        return cls(np.zeros(n), **hyper)


def _check_step(n_state, params, grad):
    if len(params) != n_state or len(grad) != n_state:
        raise DomainError(f"length mismatch: state {n_state}, params {len(params)}, grad {len(grad)}")
    return bool(np.all(np.isfinite(grad)))


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """Bias-corrected Adam update; a non-finite gradient leaves everything unchanged."""
    if not _check_step(len(state.m), params, grad):
        return state, params
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), params


def rmsprop_step(state: RmsPropState, params: np.ndarray, grad: np.ndarray):
    if not _check_step(len(state.v), params, grad):
        return state, params
    v = state.rho * state.v + (1 - state.rho) * grad * grad
    params = params - state.lr * grad / (np.sqrt(v) + state.eps)
    return replace(state, v=v), params


@dataclass
class LbfgsState:
    memory: int = 10
    c1: float = 1e-4
    backtrack: float = 0.5
    max_evals: int = 25
    gtol: float = 1e-10
    curvature_eps: float = 1e-10
    fallback_lr: float = 1e-6
    s_hist: list = field(default_factory=list)
    y_hist: list = field(default_factory=list)

    def push(self, s, y) -> bool:
        if float(s @ y) <= self.curvature_eps:
            return False
        self.s_hist.append(s)
        self.y_hist.append(y)
        if len(self.s_hist) > self.memory:
            self.s_hist.pop(0)
            self.y_hist.pop(0)
        return True

    def reset(self):
        self.s_hist.clear()
        self.y_hist.clear()

    def direction(self, g: np.ndarray) -> np.ndarray:
        """Two-loop recursion: ``-H g`` for the implicit inverse-Hessian ``H``."""
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(self.s_hist), reversed(self.y_hist)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            q -= a * y
            alphas.append((rho, a))
        if self.s_hist:
            s, y = self.s_hist[-1], self.y_hist[-1]
            q *= (s @ y) / (y @ y)
        for (s, y), (rho, a) in zip(zip(self.s_hist, self.y_hist), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q


@dataclass
class LbfgsTrace:
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    evals: int = 0
    converged: bool = False
    failed: bool = False


def _line_search(objective, x, f, g, d, alpha, state, trace):
    slope = float(g @ d)
    for _ in range(state.max_evals):
        x_new = x + alpha * d
        f_new, g_new = objective(x_new)
        trace.evals += 1
        if np.isfinite(f_new) and f_new <= f + state.c1 * alpha * slope:
            return x_new, f_new, g_new
        alpha *= state.backtrack
    return None


def lbfgs_run(objective: Objective, params, state: LbfgsState = None, iters: int = 100, callback=None):
    """Limited-memory BFGS with Armijo backtracking.

    Accepted losses never increase. When the line search fails the step falls
    back to a tiny steepest-descent move; two failures in a row end the run with
    ``trace.failed`` set.
    """
    state = state or LbfgsState()
    x = np.array(params, dtype=float)
    f, g = objective(x)
    trace = LbfgsTrace(losses=[float(f)], grad_norms=[float(np.linalg.norm(g))], evals=1)
    failures = 0
    for k in range(iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm < state.gtol:
            trace.converged = True
            break
        d = state.direction(g)
        if not state.s_hist or float(g @ d) >= 0:
            state.reset()
            d = -g
            alpha = min(1.0, 1.0 / gnorm)
        else:
            alpha = 1.0
        found = _line_search(objective, x, f, g, d, alpha, state, trace)
        if found is None:
            state.reset()
            found = _line_search(objective, x, f, g, -g, state.fallback_lr, state, trace)
            if found is None:
                failures += 1
                if failures >= 2:
                    trace.failed = True
                    break
                continue
        failures = 0
        x_new, f_new, g_new = found
        state.push(x_new - x, g_new - g)
        x, f, g = x_new, f_new, g_new
        trace.losses.append(float(f))
        trace.grad_norms.append(float(np.linalg.norm(g)))
        if callback is not None:
            callback(k, float(f))
    else:
        trace.converged = float(np.linalg.norm(g)) < state.gtol
    return x, trace


def clip_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if np.isfinite(norm) and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


OPTIMIZERS = ("adam", "rmsprop", "lbfgs")


@dataclass(frozen=True)
class Phase:
    """One optimiser run inside a schedule.

    ``horizons > 1`` trains on growing prefixes of the data: the iterations
    are split evenly over ``horizons`` stages whose windows end at
    ``k / horizons`` of the series (optimiser state carries across stages).
    """

    kind: str
    iterations: int
    hyper: tuple = ()
    horizons: int = 1

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise DomainError(f"unknown optimizer {self.kind!r}")
        if self.iterations < 0:
            raise DomainError("iterations must be >= 0")
        if self.horizons < 1:
            raise DomainError("horizons must be >= 1")
        object.__setattr__(self, "hyper", tuple(sorted(dict(self.hyper).items())))

    @property
    def params(self) -> dict:
        return dict(self.hyper)


@dataclass(frozen=True)
class TrainSchedule:
    phases: tuple
    log_every: int = 1
    clip_norm: float = 1e3

    def __post_init__(self):
        if not self.phases:
            raise DomainError("a schedule needs at least one phase")
        object.__setattr__(self, "phases", tuple(self.phases))

    def scaled(self, **iterations) -> "TrainSchedule":
        """Copy with per-optimizer iteration counts replaced, e.g. ``scaled(adam=300)``."""
        phases = tuple(replace(ph, iterations=iterations.get(ph.kind, ph.iterations)) for ph in self.phases)
        return replace(self, phases=phases)


def neural_ode_schedule(adam_iters=400, lbfgs_iters=100, lr=1e-3) -> TrainSchedule:
    return TrainSchedule((Phase("adam", adam_iters, {"lr": lr}), Phase("lbfgs", lbfgs_iters)))


def ude_schedule(adam_iters=20_000, rmsprop_iters=5_000, lr=1e-2, rms_lr=1e-3, horizons=10) -> TrainSchedule:
    """Adam over a growing-horizon curriculum, then RMSProp on the full series.

    Plain full-horizon Adam tends to settle on the mean trajectory (SSE in
    the hundreds); the curriculum plus ``lr=1e-2`` avoids that basin.
    """
    return TrainSchedule((
        Phase("adam", adam_iters, {"lr": lr}, horizons),
        Phase("rmsprop", rmsprop_iters, {"lr": rms_lr, "rho": 0.9, "eps": 1e-8}),
    ))


def ude_converge_schedule(adam_iters=5_000, lbfgs_iters=15_000, lr=1e-2, horizons=10) -> TrainSchedule:
    """Curriculum Adam followed by a long L-BFGS run, for near-exact term recovery."""
    return TrainSchedule((Phase("adam", adam_iters, {"lr": lr}, horizons), Phase("lbfgs", lbfgs_iters)))


BUDGETS = ("desk", "paper")


def default_schedule(kind: str, budget: str = "paper") -> TrainSchedule:
    """Default two-phase schedule for a model kind at the given budget."""
    if budget not in BUDGETS:
        raise DomainError(f"unknown budget {budget!r}; expected one of {BUDGETS}")
    if kind == "neuralode":
        return neural_ode_schedule(300, 50) if budget == "desk" else neural_ode_schedule()
    if kind == "ude":
        return ude_schedule(2_000, 500) if budget == "desk" else ude_schedule()
    raise DomainError(f"unknown model kind {kind!r}")


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    failed: bool = False

    def add(self, phase, iteration, loss):
        self.rows.append((phase, int(iteration), float(loss)))

    @property
    def loss_decrease_pct(self) -> float:
        if not self.initial_loss > 0:
            return 0.0
        return 100.0 * (1.0 - self.final_loss / self.initial_loss)

    def to_csv(self, path=None) -> str:
        from .dynamics import format_float

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phase", "iteration", "loss"])
        for phase, it, loss in self.rows:
            w.writerow([phase, it, format_float(loss)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _horizon_stages(n_points: int, horizons: int, iterations: int):
    """Yield ``(prefix_length, iterations)`` for each curriculum stage."""
    done = 0
    for k in range(1, horizons + 1):
        n_k = n_points if k == horizons else min(n_points, max(3, -(-n_points * k // horizons)))
        it = iterations * k // horizons - done
        done += it
        yield n_k, it


def optimize(objective_for, n_points: int, params0, schedule: TrainSchedule, trace: LossTrace = None):
    """Run the phases of ``schedule`` in order, threading parameters through.

    ``objective_for(m)`` returns the loss-and-gradient callable on the first
    ``m`` data points; the full series has ``n_points``. Rows are appended to
    ``trace`` as they happen, so a caller-supplied trace survives an exception.
    """
    params = np.array(params0, dtype=float)
    full = objective_for(n_points)
    trace = LossTrace() if trace is None else trace
    trace.initial_loss = float(full(params)[0])
    for phase_no, phase in enumerate(schedule.phases):
        name = f"{phase_no}:{phase.kind}"
        hyper = phase.params
        it0 = 0
        if phase.kind == "lbfgs":
            state = LbfgsState(**hyper)
        elif phase.kind == "adam":
            state, step = AdamState.zeros(len(params), **hyper), adam_step
        else:
            state, step = RmsPropState.zeros(len(params), **hyper), rmsprop_step
        for n_k, iters in _horizon_stages(n_points, phase.horizons, phase.iterations):
            objective = full if n_k == n_points else objective_for(n_k)
            if phase.kind == "lbfgs":
                state.reset()
                params, lt = lbfgs_run(objective, params, state, iters)
                for i, loss in enumerate(lt.losses[1:]):
                    if (it0 + i) % schedule.log_every == 0:
                        trace.add(name, it0 + i, loss)
                it0 += len(lt.losses) - 1
                trace.failed |= lt.failed
                continue
            for i in range(iters):
                loss, grad = objective(params)
                if (it0 + i) % schedule.log_every == 0:
                    trace.add(name, it0 + i, loss)
                state, params = step(state, params, clip_global_norm(grad, schedule.clip_norm))
            it0 += iters
        log.debug("phase %s done", name)
    trace.final_loss = float(full(params)[0])
    return params, trace


def run_schedule(model, params0, data, schedule: TrainSchedule, substeps: int = 4, trace: LossTrace = None):
    """Train ``model`` on ``data`` with the discrete RK4 gradient."""
    from .dynamics import Trajectory
    from .models import RolloutConfig
    from .sensitivity import loss_and_grad_discrete

    def objective_for(m):
        part = data if m == len(data) else Trajectory(data.times[:m], data.states[:m])
        cfg = RolloutConfig(part.times, substeps)
        return lambda p: loss_and_grad_discrete(model, p, part, cfg)

    return optimize(objective_for, len(data), params0, schedule, trace)

"""Trainable dynamical models: a full neural vector field and the LV universal DE.

Every model has the right-hand side ``lin @ u + mix @ [net_1(u), ..., net_k(u)]``:

* neural ODE: one 2-output net, ``lin = 0``, ``mix = I``;
* UDE: two 1-output nets, ``lin = diag(alpha, -delta)``, ``mix = diag(-1, 1)``,
  i.e. ``dx/dt = alpha x - NN1(x, y)`` and ``dy/dt = -delta y + NN2(x, y)``.

Parameters of all nets are concatenated into one flat vector in net order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from . import _kernels
from .dynamics import DomainError, LvParams, Trajectory
from .solvers import IntegrationError
from .tinynet import MlpSpec, checkpoint_dict, checkpoint_from_dict, mlp_forward, mlp_init, param_count

NEURALODE = "neuralode"
UDE = "ude"


@dataclass(frozen=True)
class DiffModel:
    kind: str
    specs: tuple
    known: Optional[LvParams] = None

    def __post_init__(self):
        specs = tuple(self.specs)
        object.__setattr__(self, "specs", specs)
        if self.kind == NEURALODE:
            if len(specs) != 1 or specs[0].n_in != 2 or specs[0].n_out != 2:
                raise DomainError("a neural ODE needs one net with widths [2, ..., 2]")
        elif self.kind == UDE:
            if len(specs) != 2 or any(s.n_in != 2 or s.n_out != 1 for s in specs):
                raise DomainError("a UDE needs two nets with widths [2, ..., 1]")
            if self.known is None:
                object.__setattr__(self, "known", LvParams())
        else:
            raise DomainError(f"unknown model kind {self.kind!r}")

    @property
    def n_params(self) -> int:
        return sum(param_count(s) for s in self.specs)

    def net_slices(self):
        out, p = [], 0
        for s in self.specs:
            out.append(slice(p, p + param_count(s)))
            p += param_count(s)
        return out

    @cached_property
    def plan(self) -> tuple:
        """Flat arrays describing the model to the compiled kernels."""
        widths = np.array([w for s in self.specs for w in s.widths], dtype=np.int64)
        wofs = np.cumsum([0] + [len(s.widths) for s in self.specs]).astype(np.int64)
        pofs = np.cumsum([0] + [param_count(s) for s in self.specs]).astype(np.int64)
        acts = np.array([_kernels.ACT_CODES[s.activation] for s in self.specs], dtype=np.int64)
        if self.kind == NEURALODE:
            lin, mix = np.zeros((2, 2)), np.eye(2)
        else:
            lin = np.diag([self.known.alpha, -self.known.delta])
            mix = np.diag([-1.0, 1.0])
        return widths, wofs, pofs, acts, lin, mix

    def init_params(self, seed=0) -> np.ndarray:
        if len(self.specs) == 1:
            return mlp_init(self.specs[0], seed)
        return np.concatenate([mlp_init(s, (seed, j)) for j, s in enumerate(self.specs)])

    def check_params(self, params) -> np.ndarray:
        params = np.ascontiguousarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise DomainError(f"expected {self.n_params} parameters, got {params.shape}")
        return params


def neural_ode(hidden=(100, 100, 100), activation="rbf") -> DiffModel:
    return DiffModel(NEURALODE, (MlpSpec((2, *hidden, 2), activation),))


def ude(hidden=(10, 10, 10), activation="relu", known: LvParams = LvParams()) -> DiffModel:
    spec = MlpSpec((2, *hidden, 1), activation)
    return DiffModel(UDE, (spec, spec), known)


def _buffers(model):
    nh, nz, _ = _kernels.buf_sizes(model.plan[0], model.plan[1])
    return np.empty(nh), np.empty(nz)


def model_rhs(model: DiffModel, params, state) -> np.ndarray:
    params = model.check_params(params)
    u = np.ascontiguousarray(state, dtype=float).reshape(-1)
    if u.shape != (2,):
        raise DomainError(f"state must have 2 components, got {u.shape}")
    f = np.empty(2)
    _kernels.model_f(params, *model.plan, u, *_buffers(model), f)
    return f


def model_vjp(model: DiffModel, params, state, cotangent):
    """Return ``(c^T df/du, c^T df/dparams)`` at ``state``."""
    params = model.check_params(params)
    u = np.ascontiguousarray(state, dtype=float).reshape(-1)
    c = np.ascontiguousarray(cotangent, dtype=float).reshape(-1)
    if u.shape != (2,) or c.shape != (2,):
        raise DomainError("state and cotangent must have 2 components")
    hs, zs = _buffers(model)
    _kernels.model_f(params, *model.plan, u, hs, zs, np.empty(2))
    wmax = int(model.plan[0].max())
    grad = np.zeros(model.n_params)
    gu = np.empty(2)
    _kernels.model_vjp(params, *model.plan, hs, zs, c, grad, gu, np.empty(wmax), np.empty(wmax))
    return gu, grad


@dataclass(frozen=True)
class RolloutConfig:
    t_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 10.0, 101))
    substeps: int = 4

    def __post_init__(self):
        grid = np.ascontiguousarray(self.t_grid, dtype=float).reshape(-1)
        if len(grid) < 1 or np.any(np.diff(grid) <= 0):
            raise DomainError("rollout grid must be non-empty and strictly increasing")
        if self.substeps < 1:
            raise DomainError("substeps must be >= 1")
        object.__setattr__(self, "t_grid", grid)

    @classmethod
    def for_data(cls, data: Trajectory, substeps: int = 4) -> "RolloutConfig":
        return cls(data.times, substeps)


def rollout(model: DiffModel, params, init, cfg: RolloutConfig) -> Trajectory:
    params = model.check_params(params)
    y0 = np.asarray(init, dtype=float).reshape(-1)
    states = _kernels.rollout(params, *model.plan, y0, cfg.t_grid, cfg.substeps)
    bad = ~np.all(np.isfinite(states), axis=1)
    if bad.any():
        t_fail = cfg.t_grid[np.argmax(bad)]
        raise IntegrationError(f"model rollout became non-finite at t={t_fail}", t=t_fail)
    return Trajectory(cfg.t_grid, states)


def _same_grid(a: Trajectory, b: Trajectory):
    if len(a) != len(b) or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise DomainError("trajectories are on different time grids")


def trajectory_loss(pred: Trajectory, target: Trajectory) -> float:
    """Sum of squared errors over both components and all time points."""
    _same_grid(pred, target)
    return float(np.sum((pred.states - target.states) ** 2))


def recovered_interaction(model: DiffModel, params, points, truth: LvParams = LvParams()) -> dict:
    """Learned UDE interaction terms next to the true ``beta*x*y`` and ``gamma*x*y``."""
    if model.kind != UDE:
        raise DomainError("recovered_interaction requires a UDE model")
    params = model.check_params(params)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    (s1, s2), (spec1, spec2) = model.net_slices(), model.specs
    return {
        "x": x,
        "y": y,
        "nn1": np.array([mlp_forward(spec1, params[s1], p)[0] for p in pts]),
        "nn2": np.array([mlp_forward(spec2, params[s2], p)[0] for p in pts]),
        "beta_xy_true": truth.beta * x * y,
        "gamma_xy_true": truth.gamma * x * y,
    }


CHECKPOINT_VERSION = 1


def model_checkpoint(model: DiffModel, params, seed=None) -> dict:
    """JSON-ready envelope: model kind, known LV rates and one entry per net."""
    params = model.check_params(params)
    return {
        "schema_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "seed": seed,
        "known_params": asdict(model.known) if model.known is not None else None,
        "nets": [checkpoint_dict(spec, params[sl]) for spec, sl in zip(model.specs, model.net_slices())],
    }


def model_from_checkpoint(doc: dict):
    """Inverse of :func:`model_checkpoint`; returns ``(model, params)``."""
    if doc.get("schema_version") != CHECKPOINT_VERSION:
        raise DomainError(f"unsupported checkpoint version {doc.get('schema_version')!r}")
    nets = [checkpoint_from_dict(n) for n in doc["nets"]]
    known = LvParams(**doc["known_params"]) if doc.get("known_params") else None
    model = DiffModel(doc["kind"], tuple(spec for spec, _ in nets), known)
    return model, np.concatenate([p for _, p in nets])

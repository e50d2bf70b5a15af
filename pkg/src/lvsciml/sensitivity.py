"""Gradients of the trajectory SSE loss with respect to model parameters.

Three routes are provided:

* :func:`loss_and_grad_discrete` differentiates the fixed-step RK4 rollout
  exactly by replaying its tape backwards (used for training);
* :func:`adjoint_grad_continuous` integrates the continuous adjoint ODE
  backwards with Tsit5 (a cross-check);
* :func:`loss_grad_fd` central finite differences (test oracle).
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .dynamics import DomainError, Trajectory
from .models import DiffModel, RolloutConfig, model_rhs, model_vjp, rollout
from .solvers import IntegrationError, ToleranceSpec, tsit5_adaptive

SENTINEL_LOSS = 1e10


def _prepare(model, params, data, cfg):
    params = model.check_params(params)
    cfg = cfg or RolloutConfig.for_data(data)
    if len(cfg.t_grid) != len(data) or not np.allclose(cfg.t_grid, data.times, rtol=0, atol=1e-12):
        raise DomainError("rollout grid does not match the data time points")
    return params, cfg


def loss_and_grad_discrete(model: DiffModel, params, data: Trajectory, cfg: RolloutConfig = None):
    """SSE loss and its exact gradient under the RK4 discretisation.

    A rollout that leaves the finite range yields ``(SENTINEL_LOSS, 0)`` so
    that optimisers can step through transient blow-ups.
    """
    params, cfg = _prepare(model, params, data, cfg)
    loss, grad = _kernels.loss_and_grad(
        params, *model.plan, np.ascontiguousarray(data.states[0]), cfg.t_grid, cfg.substeps,
        np.ascontiguousarray(data.states),
    )
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        return SENTINEL_LOSS, np.zeros_like(params)
    return float(loss), grad


def rollout_loss(model: DiffModel, params, data: Trajectory, cfg: RolloutConfig = None) -> float:
    params, cfg = _prepare(model, params, data, cfg)
    try:
        pred = rollout(model, params, data.states[0], cfg)
    except IntegrationError:
        return SENTINEL_LOSS
    return float(np.sum((pred.states - data.states) ** 2))


def loss_grad_fd(model: DiffModel, params, data: Trajectory, cfg: RolloutConfig = None, h: float = 1e-5):
    """Central-difference gradient, one coordinate at a time."""
    if not h > 0:
        raise DomainError("h must be > 0")
    return central_difference(lambda p: rollout_loss(model, p, data, cfg), model.check_params(params), h)


def central_difference(fn, x, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(len(x)):
        orig = x[i]
        x[i] = orig + h
        fp = fn(x)
        x[i] = orig - h
        fm = fn(x)
        x[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def adjoint_grad_continuous(model: DiffModel, params, data: Trajectory, tol: ToleranceSpec = None):
    """Gradient of the SSE loss from the continuous adjoint equations.

    Between observations the augmented state ``[u, a, g]`` is integrated
    backwards with ``du/dt = f``, ``da/dt = -a^T df/du`` and
    ``dg/dt = -a^T df/dtheta``; ``u`` is reset to the stored forward solution
    at every observation and ``a`` receives the loss impulse ``2 (u_i - d_i)``.
    """
    params = model.check_params(params)
    tol = tol or ToleranceSpec(reltol=1e-8, abstol=1e-8)
    times = data.times
    d = data.states.shape[1]
    n_p = model.n_params
    fwd = _forward_states(model, params, data, tol)

    def backward_rhs(s, z):
        # s = -t, so every derivative flips sign
        u, a = z[:d], z[d:2 * d]
        gu, gp = model_vjp(model, params, u, a)
        f = model_rhs(model, params, u)
        return np.concatenate([-f, gu, gp])

    a = np.zeros(d)
    g = np.zeros(n_p)
    for i in range(len(times) - 1, 0, -1):
        a = a + 2.0 * (fwd[i] - data.states[i])
        z0 = np.concatenate([fwd[i], a, g])
        seg = tsit5_adaptive(backward_rhs, z0, (-times[i], -times[i - 1]), [-times[i - 1]], tol)
        z = seg.states[-1]
        a, g = z[d:2 * d], z[2 * d:]
    return g


def _forward_states(model, params, data, tol):
    sol = tsit5_adaptive(lambda t, u: model_rhs(model, params, u), data.states[0],
                         (data.times[0], data.times[-1]), data.times, tol)
    return sol.states

"""Dense MLPs over flat parameter vectors.

Parameter layout, frozen for checkpoints: layers in order, each layer stored as
its weight matrix (row-major, shape ``(out, in)``) followed by its bias.
Hidden layers apply the activation; the output layer is linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import DomainError, make_rng

ACTIVATIONS = ("rbf", "relu", "tanh", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise DomainError(f"invalid widths {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        object.__setattr__(self, "widths", widths)

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def layers(self):
        """Yield ``(n_in, n_out, weight_slice, bias_slice)`` per layer."""
        p = 0
        for n_in, n_out in zip(self.widths[:-1], self.widths[1:]):
            w = slice(p, p + n_in * n_out)
            b = slice(w.stop, w.stop + n_out)
            yield n_in, n_out, w, b
            p = b.stop


def param_count(spec: MlpSpec) -> int:
    return sum(a * b + b for a, b in zip(spec.widths[:-1], spec.widths[1:]))


def mlp_init(spec: MlpSpec, seed=0) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = make_rng(seed)
    theta = np.zeros(param_count(spec))
    for n_in, n_out, w, _ in spec.layers():
        limit = np.sqrt(6.0 / (n_in + n_out))
        theta[w] = rng.uniform(-limit, limit, size=n_in * n_out)
    return theta


def activate(z: np.ndarray, name: str) -> np.ndarray:
    if name == "rbf":
        return np.exp(-z * z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise DomainError(f"unknown activation {name!r}")


def activate_grad(z: np.ndarray, name: str) -> np.ndarray:
    if name == "rbf":
        return -2.0 * z * np.exp(-z * z)
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    raise DomainError(f"unknown activation {name!r}")


def _check(spec: MlpSpec, params, x) -> tuple:
    params = np.asarray(params, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    if params.shape != (param_count(spec),):
        raise DomainError(f"expected {param_count(spec)} parameters, got {params.shape}")
    if x.shape != (spec.n_in,):
        raise DomainError(f"expected input of length {spec.n_in}, got {x.shape}")
    return params, x


def _forward_cache(spec, params, x):
    inputs, pre = [], []
    h = x
    layers = list(spec.layers())
    for i, (n_in, n_out, w, b) in enumerate(layers):
        inputs.append(h)
        z = params[w].reshape(n_out, n_in) @ h + params[b]
        pre.append(z)
        h = activate(z, spec.activation) if i < len(layers) - 1 else z
    return h, inputs, pre


def mlp_forward(spec: MlpSpec, params, x) -> np.ndarray:
    params, x = _check(spec, params, x)
    return _forward_cache(spec, params, x)[0]


def mlp_vjp(spec: MlpSpec, params, x, cotangent):
    """Return ``(c^T df/dx, c^T df/dparams)`` for cotangent ``c``."""
    params, x = _check(spec, params, x)
    c = np.asarray(cotangent, dtype=float).reshape(-1)
    if c.shape != (spec.n_out,):
        raise DomainError(f"expected cotangent of length {spec.n_out}, got {c.shape}")
    _, inputs, pre = _forward_cache(spec, params, x)
    grad = np.zeros_like(params)
    layers = list(spec.layers())
    g = c
    for i in range(len(layers) - 1, -1, -1):
        n_in, n_out, w, b = layers[i]
        if i < len(layers) - 1:
            g = g * activate_grad(pre[i], spec.activation)
        grad[w] = np.outer(g, inputs[i]).ravel()
        grad[b] = g
        g = g @ params[w].reshape(n_out, n_in)
    return g, grad


def save_checkpoint(path, spec: MlpSpec, params, seed=None, extra=None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(spec, params, seed, extra), indent=1))


def checkpoint_dict(spec: MlpSpec, params, seed=None, extra=None) -> dict:
    params = np.asarray(params, dtype=float)
    if len(params) != param_count(spec):
        raise DomainError("parameter count does not match the layer widths")
    doc = {
        "widths": list(spec.widths),
        "activation": spec.activation,
        "seed": seed,
        "count": int(len(params)),
    }
    if extra:
        doc.update(extra)
    doc["params"] = params.tolist()
    return doc


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    return checkpoint_from_dict(doc)


def checkpoint_from_dict(doc: dict):
    spec = MlpSpec(tuple(doc["widths"]), doc["activation"])
    params = np.array(doc["params"], dtype=float)
    if len(params) != doc["count"] or len(params) != param_count(spec):
        raise DomainError("checkpoint parameter count mismatch")
    return spec, params

"""Compiled rollout and backprop-through-RK4 for models of the form

    du/dt = lin @ u + mix @ concat(net_1(u), ..., net_k(u))

Networks are described by flat arrays so numba can loop over them:
``widths`` concatenates every net's layer widths, ``wofs[j]:wofs[j+1]`` is
net j's slice of it, ``pofs[j]`` its parameter offset and ``acts[j]`` its
activation code (0 rbf, 1 relu, 2 tanh, 3 sigmoid).

Each model evaluation caches layer inputs in an ``hs`` row and
pre-activations in a ``zs`` row; the reverse pass reads them back from the
tape instead of recomputing the forward pass. Loops are written out to keep
the inner kernels allocation-free.
"""

import math

import numpy as np
from numba import njit

_FM = {"reassoc", "contract", "nsz", "arcp"}
ACT_CODES = {"rbf": 0, "relu": 1, "tanh": 2, "sigmoid": 3}


@njit(cache=True, inline="always")
def _act(z, code):
    if code == 0:
        return math.exp(-z * z)
    if code == 1:
        return z if z > 0.0 else 0.0
    if code == 2:
        return math.tanh(z)
    return 1.0 / (1.0 + math.exp(-z))


@njit(cache=True, inline="always")
def _dact(z, code):
    if code == 0:
        return -2.0 * z * math.exp(-z * z)
    if code == 1:
        return 1.0 if z > 0.0 else 0.0
    if code == 2:
        t = math.tanh(z)
        return 1.0 - t * t
    s = 1.0 / (1.0 + math.exp(-z))
    return s * (1.0 - s)


@njit(cache=True, fastmath=_FM)
def buf_sizes(widths, wofs):
    """Lengths of the ``hs`` and ``zs`` caches, plus the total net output count."""
    nh = 0
    nz = 0
    nout = 0
    for j in range(len(wofs) - 1):
        for l in range(wofs[j], wofs[j + 1] - 1):
            nh += widths[l]
            nz += widths[l + 1]
        nout += widths[wofs[j + 1] - 1]
    return nh, nz, nout


@njit(cache=True, fastmath=_FM)
def model_f(theta, widths, wofs, pofs, acts, lin, mix, u, hs, zs, f):
    """Write ``f(u)`` into ``f``, caching activations in ``hs`` and ``zs``."""
    d = len(u)
    for r in range(d):
        acc = 0.0
        for c in range(d):
            acc += lin[r, c] * u[c]
        f[r] = acc
    ho = 0
    zo = 0
    oo = 0
    for j in range(len(wofs) - 1):
        w0 = wofs[j]
        nl = wofs[j + 1] - w0 - 1
        code = acts[j]
        p = pofs[j]
        for k in range(widths[w0]):
            hs[ho + k] = u[k]
        for l in range(nl):
            nin = widths[w0 + l]
            nout = widths[w0 + l + 1]
            b = p + nout * nin
            last = l == nl - 1
            for i in range(nout):
                acc = theta[b + i]
                row = p + i * nin
                for k in range(nin):
                    acc += theta[row + k] * hs[ho + k]
                zs[zo + i] = acc
                if not last:
                    hs[ho + nin + i] = _act(acc, code)
                else:
                    for r in range(d):
                        f[r] += mix[r, oo + i] * acc
            p = b + nout
            ho += nin
            zo += nout
        oo += widths[w0 + nl]


@njit(cache=True, fastmath=_FM)
def model_vjp(theta, widths, wofs, pofs, acts, lin, mix, hs, zs, cot, gtheta, gu, g, gnext):
    """Pull ``cot`` back through a cached evaluation.

    Adds ``cot^T df/dtheta`` into ``gtheta`` and writes ``cot^T df/du`` to
    ``gu``. ``g`` and ``gnext`` are scratch vectors at least as long as the
    widest layer.
    """
    d = len(gu)
    for c in range(d):
        acc = 0.0
        for r in range(d):
            acc += lin[r, c] * cot[r]
        gu[c] = acc
    ho_start = 0
    zo_start = 0
    oo = 0
    for j in range(len(wofs) - 1):
        w0 = wofs[j]
        nl = wofs[j + 1] - w0 - 1
        code = acts[j]
        # offsets of the last layer of this net
        ho = ho_start
        zo = zo_start
        p = pofs[j]
        for l in range(nl - 1):
            ho += widths[w0 + l]
            zo += widths[w0 + l + 1]
            p += widths[w0 + l] * widths[w0 + l + 1] + widths[w0 + l + 1]
        nout_net = widths[w0 + nl]
        for i in range(nout_net):
            acc = 0.0
            for r in range(d):
                acc += mix[r, oo + i] * cot[r]
            g[i] = acc
        for l in range(nl - 1, -1, -1):
            nin = widths[w0 + l]
            nout = widths[w0 + l + 1]
            if l < nl - 1:
                for i in range(nout):
                    g[i] *= _dact(zs[zo + i], code)
            b = p + nout * nin
            for k in range(nin):
                gnext[k] = 0.0
            for i in range(nout):
                gi = g[i]
                if gi == 0.0:
                    continue
                gtheta[b + i] += gi
                row = p + i * nin
                for k in range(nin):
                    gtheta[row + k] += gi * hs[ho + k]
                    gnext[k] += gi * theta[row + k]
            for k in range(nin):
                g[k] = gnext[k]
            if l > 0:
                ho -= widths[w0 + l - 1]
                zo -= widths[w0 + l]
                p -= widths[w0 + l - 1] * widths[w0 + l] + widths[w0 + l]
        for k in range(d):
            gu[k] += g[k]
        for l in range(nl):
            ho_start += widths[w0 + l]
            zo_start += widths[w0 + l + 1]
        oo += nout_net


@njit(cache=True, fastmath=_FM)
def _max_width(widths):
    m = 0
    for w in widths:
        if w > m:
            m = w
    return m


@njit(cache=True, fastmath=_FM)
def rollout(theta, widths, wofs, pofs, acts, lin, mix, y0, grid, substeps):
    """RK4 states at ``grid``; rows after a non-finite state stay NaN."""
    nh, nz, _ = buf_sizes(widths, wofs)
    hs = np.empty(nh)
    zs = np.empty(nz)
    d = len(y0)
    k = np.empty((4, d))
    z = np.empty(d)
    out = np.full((len(grid), d), np.nan)
    y = y0.copy()
    out[0] = y
    for i in range(len(grid) - 1):
        h = (grid[i + 1] - grid[i]) / substeps
        for _ in range(substeps):
            model_f(theta, widths, wofs, pofs, acts, lin, mix, y, hs, zs, k[0])
            for r in range(d):
                z[r] = y[r] + 0.5 * h * k[0, r]
            model_f(theta, widths, wofs, pofs, acts, lin, mix, z, hs, zs, k[1])
            for r in range(d):
                z[r] = y[r] + 0.5 * h * k[1, r]
            model_f(theta, widths, wofs, pofs, acts, lin, mix, z, hs, zs, k[2])
            for r in range(d):
                z[r] = y[r] + h * k[2, r]
            model_f(theta, widths, wofs, pofs, acts, lin, mix, z, hs, zs, k[3])
            for r in range(d):
                y[r] += (h / 6.0) * (k[0, r] + 2.0 * k[1, r] + 2.0 * k[2, r] + k[3, r])
        for r in range(d):
            if not math.isfinite(y[r]):
                return out
        out[i + 1] = y
    return out


@njit(cache=True, fastmath=_FM)
def loss_and_grad(theta, widths, wofs, pofs, acts, lin, mix, y0, grid, substeps, data):
    """SSE loss of the RK4 rollout against ``data`` and its exact gradient.

    Returns ``(inf, zeros)`` when the rollout leaves the finite range.
    """
    nh, nz, _ = buf_sizes(widths, wofs)
    d = len(y0)
    n = len(grid)
    nstages = (n - 1) * substeps * 4
    tape_h = np.empty((nstages, nh))
    tape_z = np.empty((nstages, nz))
    states = np.empty((n, d))
    grad = np.zeros(len(theta))
    k = np.empty((4, d))
    z = np.empty(d)
    y = y0.copy()
    states[0] = y
    s = 0
    for i in range(n - 1):
        h = (grid[i + 1] - grid[i]) / substeps
        for _ in range(substeps):
            model_f(theta, widths, wofs, pofs, acts, lin, mix, y, tape_h[s], tape_z[s], k[0])
            for r in range(d):
                z[r] = y[r] + 0.5 * h * k[0, r]
            model_f(theta, widths, wofs, pofs, acts, lin, mix, z, tape_h[s + 1], tape_z[s + 1], k[1])
            for r in range(d):
                z[r] = y[r] + 0.5 * h * k[1, r]
            model_f(theta, widths, wofs, pofs, acts, lin, mix, z, tape_h[s + 2], tape_z[s + 2], k[2])
            for r in range(d):
                z[r] = y[r] + h * k[2, r]
            model_f(theta, widths, wofs, pofs, acts, lin, mix, z, tape_h[s + 3], tape_z[s + 3], k[3])
            for r in range(d):
                y[r] += (h / 6.0) * (k[0, r] + 2.0 * k[1, r] + 2.0 * k[2, r] + k[3, r])
            s += 4
        for r in range(d):
            if not math.isfinite(y[r]):
                return np.inf, grad
        states[i + 1] = y

    loss = 0.0
    for i in range(n):
        for r in range(d):
            e = states[i, r] - data[i, r]
            loss += e * e
    if not math.isfinite(loss):
        return np.inf, grad

    wmax = _max_width(widths)
    g = np.empty(wmax)
    gnext = np.empty(wmax)
    a = np.zeros(d)
    yb = np.empty(d)
    kb = np.empty((4, d))
    gz = np.empty(d)
    s = nstages - 4
    for i in range(n - 1, 0, -1):
        for r in range(d):
            a[r] += 2.0 * (states[i, r] - data[i, r])
        h = (grid[i] - grid[i - 1]) / substeps
        for _ in range(substeps):
            for r in range(d):
                kb[0, r] = (h / 6.0) * a[r]
                kb[1, r] = (h / 3.0) * a[r]
                kb[2, r] = (h / 3.0) * a[r]
                kb[3, r] = (h / 6.0) * a[r]
                yb[r] = a[r]
            # stage 4 input is y + h*k3, stage 3 is y + h/2*k2, stage 2 is y + h/2*k1
            model_vjp(theta, widths, wofs, pofs, acts, lin, mix, tape_h[s + 3], tape_z[s + 3],
                      kb[3], grad, gz, g, gnext)
            for r in range(d):
                yb[r] += gz[r]
                kb[2, r] += h * gz[r]
            model_vjp(theta, widths, wofs, pofs, acts, lin, mix, tape_h[s + 2], tape_z[s + 2],
                      kb[2], grad, gz, g, gnext)
            for r in range(d):
                yb[r] += gz[r]
                kb[1, r] += 0.5 * h * gz[r]
            model_vjp(theta, widths, wofs, pofs, acts, lin, mix, tape_h[s + 1], tape_z[s + 1],
                      kb[1], grad, gz, g, gnext)
            for r in range(d):
                yb[r] += gz[r]
                kb[0, r] += 0.5 * h * gz[r]
            model_vjp(theta, widths, wofs, pofs, acts, lin, mix, tape_h[s], tape_z[s],
                      kb[0], grad, gz, g, gnext)
            for r in range(d):
                a[r] = yb[r] + gz[r]
            s -= 4
    return loss, grad

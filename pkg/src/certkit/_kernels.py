"""Hot numeric kernels with numba and pure-numpy implementations.

The backend is chosen by the ``CERTKIT_BACKEND`` environment variable:
``numba`` (require the jit path), ``numpy`` (force the fallback), or
``auto``/unset (numba when importable).  ``get_kernels("numpy")`` /
``get_kernels("numba")`` select explicitly, which is what the benchmark
script uses to compare both paths in-process.

Kernel inventory:

* ``mlp_values(theta, sizes, X)``        batched certificate forward pass
* ``mlp_values_grads(theta, sizes, X)``  forward pass plus per-sample
  reverse-accumulation parameter gradients
* ``traj_split_max(V, delta, use_kg, T)`` per-trajectory goal-entry index
  and maximal consecutive differences on both sides of it
* ``unroll_spiral2d/highdim8/nonlinear4(X0, T)`` batch trajectory unrolling
  for the built-in systems

All kernels are serial and deterministic; parallel reductions are avoided so
reruns are bitwise reproducible.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "CERTKIT_BACKEND"

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# MLP forward / gradient, numpy path
# ---------------------------------------------------------------------------


def _sigmoid_np(z):
    p = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + p), p / (1.0 + p))


def _np_mlp_values(theta, sizes, X):
    h = X
    off = 0
    n_layers = sizes.shape[0] - 1
    for layer in range(n_layers):
        n_in = int(sizes[layer])
        n_out = int(sizes[layer + 1])
        W = theta[off : off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        b = theta[off : off + n_out]
        off += n_out
        z = h @ W.T + b
        h = _sigmoid_np(z) if layer < n_layers - 1 else z
    return h[:, 0]


def _np_mlp_values_grads(theta, sizes, X):
    B = X.shape[0]
    P = theta.shape[0]
    n_layers = sizes.shape[0] - 1
    hs = [X]
    offsets = []
    off = 0
    h = X
    for layer in range(n_layers):
        n_in = int(sizes[layer])
        n_out = int(sizes[layer + 1])
        W = theta[off : off + n_out * n_in].reshape(n_out, n_in)
        b = theta[off + n_out * n_in : off + n_out * n_in + n_out]
        offsets.append(off)
        off += n_out * n_in + n_out
        z = h @ W.T + b
        h = _sigmoid_np(z) if layer < n_layers - 1 else z
        hs.append(h)
    values = hs[-1][:, 0]

    grads = np.zeros((B, P))
    delta = np.ones((B, 1))
    for layer in range(n_layers - 1, -1, -1):
        n_in = int(sizes[layer])
        n_out = int(sizes[layer + 1])
        w_off = offsets[layer]
        h_prev = hs[layer]
        grads[:, w_off : w_off + n_out * n_in] = (
            delta[:, :, None] * h_prev[:, None, :]
        ).reshape(B, n_out * n_in)
        grads[:, w_off + n_out * n_in : w_off + n_out * n_in + n_out] = delta
        if layer > 0:
            W = theta[w_off : w_off + n_out * n_in].reshape(n_out, n_in)
            upstream = delta @ W
            grads_h = hs[layer]
            delta = upstream * grads_h * (1.0 - grads_h)
    return values, grads


# ---------------------------------------------------------------------------
# MLP forward / gradient, loop form (compiled by numba)
# ---------------------------------------------------------------------------


def _loops_mlp_values(theta, sizes, X):
    B = X.shape[0]
    n_layers = sizes.shape[0] - 1
    width_max = 0
    for layer in range(n_layers + 1):
        if sizes[layer] > width_max:
            width_max = sizes[layer]
    values = np.empty(B)
    h = np.empty(width_max)
    z = np.empty(width_max)
    for b_i in range(B):
        n_cur = sizes[0]
        for j in range(n_cur):
            h[j] = X[b_i, j]
        off = 0
        for layer in range(n_layers):
            n_in = sizes[layer]
            n_out = sizes[layer + 1]
            for i in range(n_out):
                acc = theta[off + n_out * n_in + i]
                w_row = off + i * n_in
                for j in range(n_in):
                    acc += theta[w_row + j] * h[j]
                z[i] = acc
            off += n_out * n_in + n_out
            if layer < n_layers - 1:
                for i in range(n_out):
                    zv = z[i]
                    p = np.exp(-abs(zv))
                    if zv >= 0.0:
                        h[i] = 1.0 / (1.0 + p)
                    else:
                        h[i] = p / (1.0 + p)
            else:
                values[b_i] = z[0]
    return values


def _loops_mlp_values_grads(theta, sizes, X):
    B = X.shape[0]
    P = theta.shape[0]
    n_layers = sizes.shape[0] - 1
    width_max = 0
    for layer in range(n_layers + 1):
        if sizes[layer] > width_max:
            width_max = sizes[layer]
    values = np.empty(B)
    grads = np.zeros((B, P))
    hs = np.empty((n_layers + 1, width_max))
    delta = np.empty(width_max)
    delta_next = np.empty(width_max)
    offsets = np.empty(n_layers, dtype=np.int64)
    off = 0
    for layer in range(n_layers):
        offsets[layer] = off
        off += sizes[layer + 1] * sizes[layer] + sizes[layer + 1]
    for b_i in range(B):
        for j in range(sizes[0]):
            hs[0, j] = X[b_i, j]
        for layer in range(n_layers):
            n_in = sizes[layer]
            n_out = sizes[layer + 1]
            w_off = offsets[layer]
            for i in range(n_out):
                acc = theta[w_off + n_out * n_in + i]
                w_row = w_off + i * n_in
                for j in range(n_in):
                    acc += theta[w_row + j] * hs[layer, j]
                if layer < n_layers - 1:
                    p = np.exp(-abs(acc))
                    if acc >= 0.0:
                        hs[layer + 1, i] = 1.0 / (1.0 + p)
                    else:
                        hs[layer + 1, i] = p / (1.0 + p)
                else:
                    hs[layer + 1, i] = acc
        values[b_i] = hs[n_layers, 0]

        delta[0] = 1.0
        for layer in range(n_layers - 1, -1, -1):
            n_in = sizes[layer]
            n_out = sizes[layer + 1]
            w_off = offsets[layer]
            for i in range(n_out):
                d = delta[i]
                w_row = w_off + i * n_in
                for j in range(n_in):
                    grads[b_i, w_row + j] = d * hs[layer, j]
                grads[b_i, w_off + n_out * n_in + i] = d
            if layer > 0:
                for j in range(n_in):
                    acc = 0.0
                    for i in range(n_out):
                        acc += theta[w_off + i * n_in + j] * delta[i]
                    hj = hs[layer, j]
                    delta_next[j] = acc * hj * (1.0 - hj)
                for j in range(n_in):
                    delta[j] = delta_next[j]
    return values, grads


# ---------------------------------------------------------------------------
# Per-trajectory reductions
# ---------------------------------------------------------------------------


def _np_traj_split_max(V, delta, use_kg, T):
    N = V.shape[0]
    if use_kg:
        hit = V <= -delta
        any_hit = hit.any(axis=1)
        kg = np.where(any_hit, hit.argmax(axis=1), T).astype(np.int64)
    else:
        kg = np.full(N, T, dtype=np.int64)
    diffs = V[:, 1:] - V[:, :-1]
    idx = np.arange(T)
    neg_inf = -np.inf

    before = np.where(idx[None, :] < kg[:, None], diffs, neg_inf)
    m1 = before.max(axis=1) if T > 0 else np.full(N, neg_inf)
    k1 = before.argmax(axis=1).astype(np.int64) if T > 0 else np.full(N, -1, dtype=np.int64)
    empty1 = kg == 0
    m1 = np.where(empty1, neg_inf, m1)
    k1 = np.where(empty1, -1, k1)

    after = np.where(idx[None, :] >= kg[:, None], diffs, neg_inf)
    m2 = after.max(axis=1) if T > 0 else np.full(N, neg_inf)
    k2 = after.argmax(axis=1).astype(np.int64) if T > 0 else np.full(N, -1, dtype=np.int64)
    empty2 = kg >= T
    m2 = np.where(empty2, neg_inf, m2)
    k2 = np.where(empty2, -1, k2)
    return kg, m1, k1, m2, k2


def _loops_traj_split_max(V, delta, use_kg, T):
    N = V.shape[0]
    kg = np.empty(N, dtype=np.int64)
    m1 = np.empty(N)
    k1 = np.empty(N, dtype=np.int64)
    m2 = np.empty(N)
    k2 = np.empty(N, dtype=np.int64)
    for i in range(N):
        g = T
        if use_kg:
            for k in range(T + 1):
                if V[i, k] <= -delta:
                    g = k
                    break
        kg[i] = g
        best = -np.inf
        best_k = -1
        for k in range(g):
            d = V[i, k + 1] - V[i, k]
            if d > best:
                best = d
                best_k = k
        m1[i] = best
        k1[i] = best_k
        best = -np.inf
        best_k = -1
        for k in range(g, T):
            d = V[i, k + 1] - V[i, k]
            if d > best:
                best = d
                best_k = k
        m2[i] = best
        k2[i] = best_k
    return kg, m1, k1, m2, k2


# ---------------------------------------------------------------------------
# Built-in system unrolling
# ---------------------------------------------------------------------------

SPIRAL_HALF_STEP = 0.05  # T_d / 2 with T_d = 0.1

HIGHDIM8_GAINS = (576.0, 2400.0, 4180.0, 3980.0, 2273.0, 800.0, 170.0, 20.0)


def _np_unroll_spiral2d(X0, T):
    B = X0.shape[0]
    out = np.empty((B, T + 1, 2))
    out[:, 0, :] = X0
    for k in range(T):
        x1 = out[:, k, 0]
        x2 = out[:, k, 1]
        out[:, k + 1, 0] = x1 - SPIRAL_HALF_STEP * x2
        out[:, k + 1, 1] = x2 + SPIRAL_HALF_STEP * (x1 - x2)
    return out


def _loops_unroll_spiral2d(X0, T):
    B = X0.shape[0]
    out = np.empty((B, T + 1, 2))
    for i in range(B):
        out[i, 0, 0] = X0[i, 0]
        out[i, 0, 1] = X0[i, 1]
        for k in range(T):
            x1 = out[i, k, 0]
            x2 = out[i, k, 1]
            out[i, k + 1, 0] = x1 - SPIRAL_HALF_STEP * x2
            out[i, k + 1, 1] = x2 + SPIRAL_HALF_STEP * (x1 - x2)
    return out


def _np_unroll_highdim8(X0, T):
    B = X0.shape[0]
    gains = np.array(HIGHDIM8_GAINS)
    out = np.empty((B, T + 1, 8))
    out[:, 0, :] = X0
    for k in range(T):
        x = out[:, k, :]
        nxt = out[:, k + 1, :]
        nxt[:, :7] = x[:, :7] + 0.1 * x[:, 1:]
        nxt[:, 7] = x[:, 7] - 0.1 * (x @ gains)
    return out


def _loops_unroll_highdim8(X0, T):
    B = X0.shape[0]
    gains = np.array(HIGHDIM8_GAINS)
    out = np.empty((B, T + 1, 8))
    for i in range(B):
        for j in range(8):
            out[i, 0, j] = X0[i, j]
        for k in range(T):
            for j in range(7):
                out[i, k + 1, j] = out[i, k, j] + 0.1 * out[i, k, j + 1]
            acc = 0.0
            for j in range(8):
                acc += gains[j] * out[i, k, j]
            out[i, k + 1, 7] = out[i, k, 7] - 0.1 * acc
    return out


def _np_unroll_nonlinear4(X0, T):
    B = X0.shape[0]
    out = np.empty((B, T + 1, 4))
    out[:, 0, :] = X0
    for k in range(T):
        x1 = out[:, k, 0]
        x2 = out[:, k, 1]
        x3 = out[:, k, 2]
        x4 = out[:, k, 3]
        out[:, k + 1, 0] = x1 + 0.1 * (x1 * x2 / 5.0 - x3 * x4 / 2.0)
        out[:, k + 1, 1] = x2 + 0.1 * np.cos(x4)
        out[:, k + 1, 2] = x3 + 0.001 * np.sqrt(np.abs(x1))
        out[:, k + 1, 3] = x4 + 0.1 * (-x1 - x2 * x2 + np.sin(x4))
    return out


def _loops_unroll_nonlinear4(X0, T):
    B = X0.shape[0]
    out = np.empty((B, T + 1, 4))
    for i in range(B):
        for j in range(4):
            out[i, 0, j] = X0[i, j]
        for k in range(T):
            x1 = out[i, k, 0]
            x2 = out[i, k, 1]
            x3 = out[i, k, 2]
            x4 = out[i, k, 3]
            out[i, k + 1, 0] = x1 + 0.1 * (x1 * x2 / 5.0 - x3 * x4 / 2.0)
            out[i, k + 1, 1] = x2 + 0.1 * np.cos(x4)
            out[i, k + 1, 2] = x3 + 0.001 * np.sqrt(np.abs(x1))
            out[i, k + 1, 3] = x4 + 0.1 * (-x1 - x2 * x2 + np.sin(x4))
    return out


# ---------------------------------------------------------------------------
# Backend assembly
# ---------------------------------------------------------------------------

_KERNEL_NAMES = (
    "mlp_values",
    "mlp_values_grads",
    "traj_split_max",
    "unroll_spiral2d",
    "unroll_highdim8",
    "unroll_nonlinear4",
)


class KernelSet:
    """Bundle of same-signature kernels for one backend."""

    def __init__(self, name, funcs):
        self.name = name
        for key, fn in funcs.items():
            setattr(self, key, fn)


_NUMPY_KERNELS = KernelSet(
    "numpy",
    {
        "mlp_values": _np_mlp_values,
        "mlp_values_grads": _np_mlp_values_grads,
        "traj_split_max": _np_traj_split_max,
        "unroll_spiral2d": _np_unroll_spiral2d,
        "unroll_highdim8": _np_unroll_highdim8,
        "unroll_nonlinear4": _np_unroll_nonlinear4,
    },
)

_NUMBA_KERNELS = None
if _HAVE_NUMBA:
    _jit = numba.njit(cache=True, fastmath=False)
    _NUMBA_KERNELS = KernelSet(
        "numba",
        {
            "mlp_values": _jit(_loops_mlp_values),
            "mlp_values_grads": _jit(_loops_mlp_values_grads),
            "traj_split_max": _jit(_loops_traj_split_max),
            "unroll_spiral2d": _jit(_loops_unroll_spiral2d),
            "unroll_highdim8": _jit(_loops_unroll_highdim8),
            "unroll_nonlinear4": _jit(_loops_unroll_nonlinear4),
        },
    )


def get_kernels(name: str | None = None) -> KernelSet:
    """Return the kernel set for ``name`` (or the env-selected default)."""
    if name is None:
        name = os.environ.get(_ENV_FLAG, "auto").lower()
    if name in ("auto", ""):
        name = "numba" if _HAVE_NUMBA else "numpy"
    if name == "numpy":
        return _NUMPY_KERNELS
    if name == "numba":
        if _NUMBA_KERNELS is None:
            raise RuntimeError(
                f"{_ENV_FLAG}=numba requested but numba could not be imported"
            )
        return _NUMBA_KERNELS
    raise ValueError(f"unknown backend {name!r}; expected 'numba', 'numpy' or 'auto'")


_ACTIVE = get_kernels()


def active_backend() -> str:
    """Name of the backend selected at import time."""
    return _ACTIVE.name


def kernels() -> KernelSet:
    return _ACTIVE

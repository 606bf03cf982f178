"""Certificate template: feedforward net with sigmoid hidden layers.

The scalar function V is a fully-connected network with sigmoid activations
on every hidden layer and a linear output unit.  Parameters live in a single
flat vector; the layout is frozen so that runs can be compared bitwise:

    for each layer (hidden layers in order, output layer last):
        weights, row-major with shape (fan_out, fan_in), then biases

Gradients with respect to the parameters are exact (reverse accumulation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._kernels import kernels


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of the certificate template."""

    n_inputs: int
    hidden: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.n_inputs < 1:
            raise ValueError("n_inputs must be positive")
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be positive")

    @property
    def sizes(self) -> np.ndarray:
        """Layer widths including input and the scalar output."""
        return np.array((self.n_inputs, *self.hidden, 1), dtype=np.int64)

    @property
    def n_params(self) -> int:
        sizes = self.sizes
        return int(np.sum(sizes[1:] * sizes[:-1] + sizes[1:]))


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Deterministic initial parameter vector.

    Weights are uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer,
    biases zero.  The draw uses a Philox counter-based generator keyed by the
    seed, so equal (spec, seed) pairs give bit-identical vectors on any
    machine.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    sizes = spec.sizes
    chunks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(float(fan_in))
        chunks.append(rng.uniform(-bound, bound, size=int(fan_out * fan_in)))
        chunks.append(np.zeros(int(fan_out)))
    return np.concatenate(chunks)


def _check_theta(spec: NetworkSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({spec.n_params},)")
    return theta


def _check_points(spec: NetworkSpec, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.n_inputs:
        raise ValueError(f"expected points of shape (m, {spec.n_inputs}), got {X.shape}")
    return X


def values(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """V at each row of an (m, n) batch of states."""
    theta = _check_theta(spec, theta)
    X = _check_points(spec, X)
    return kernels().mlp_values(theta, spec.sizes, X)


def value(spec: NetworkSpec, theta: np.ndarray, x) -> float:
    """V at a single state."""
    x = np.asarray(x, dtype=float)
    return float(values(spec, theta, x[None, :])[0])


def values_and_grads(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray):
    """V and dV/dtheta for each row of a batch; grads have shape (m, P)."""
    theta = _check_theta(spec, theta)
    X = _check_points(spec, X)
    return kernels().mlp_values_grads(theta, spec.sizes, X)


def grad_params(spec: NetworkSpec, theta: np.ndarray, x) -> np.ndarray:
    """Exact gradient of V(x) with respect to the flat parameter vector."""
    x = np.asarray(x, dtype=float)
    _, g = values_and_grads(spec, theta, x[None, :])
    return g[0]


def save_params(path, spec: NetworkSpec, theta: np.ndarray) -> None:
    payload = {
        "network": {"inputs": spec.n_inputs, "hidden": list(spec.hidden)},
        "theta": [float(v) for v in np.asarray(theta)],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_params(path) -> tuple[NetworkSpec, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    spec = NetworkSpec(int(payload["network"]["inputs"]), tuple(payload["network"]["hidden"]))
    theta = np.asarray(payload["theta"], dtype=float)
    if theta.shape != (spec.n_params,):
        raise ValueError("theta length does not match the stored architecture")
    return spec, theta

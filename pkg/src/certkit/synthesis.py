"""Certificate synthesis with incremental compression-set construction.

``algorithm1`` performs deterministic subgradient descent on the worst-case
sample loss.  A candidate sample whose subgradient is misaligned with the
current compression-set subgradient (nonpositive inner product, nonzero
gradient) triggers a "jump": the step follows that sample's subgradient and
the sample joins the compression set.  The running loss is the best
worst-case compression loss seen so far; the loop stops once an iteration
fails to improve it by more than the tolerance ``eta``.

``algorithm2`` wraps ``algorithm1`` in a discarding loop: each returned
compression set is removed from the working sample set until the worst-case
loss over the remaining samples is driven to exactly zero (or nothing is
left).  The union of discarded samples is the compression set of the outer
algorithm, whose cardinality feeds the risk bound.

Everything here is deterministic: reruns with identical inputs produce
bitwise-identical parameter iterates, which is what makes the returned sets
genuine compression sets (rerunning on just those samples reproduces the
result).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .loss import LossEvaluator, PropertySpec, get_evaluator
from .network import NetworkSpec

_CANDIDATE_CHUNK = 32


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class HyperParams:
    """Step-size, tolerance and momentum constants of the descent loop."""

    alpha: float = 1e-2
    eta: float = 1e-6
    warm_start_max_iters: int = 50_000
    main_max_iters: int = 200_000
    b1: float = 0.9
    b2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (self.alpha > 0 and self.eta > 0 and self.adam_eps > 0):
            raise ValueError("alpha, eta and adam_eps must be positive")
        if self.warm_start_max_iters < 1 or self.main_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if not (0 <= self.b1 < 1 and 0 <= self.b2 < 1):
            raise ValueError("momentum decay rates must lie in [0, 1)")


class _Adam:
    """Deterministic Adam-style update with constant step size."""

    def __init__(self, n_params: int, hp: HyperParams):
        self.hp = hp
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        hp = self.hp
        self.t += 1
        self.m = hp.b1 * self.m + (1.0 - hp.b1) * grad
        self.v = hp.b2 * self.v + (1.0 - hp.b2) * grad * grad
        m_hat = self.m / (1.0 - hp.b1**self.t)
        v_hat = self.v / (1.0 - hp.b2**self.t)
        return theta - hp.alpha * m_hat / (np.sqrt(v_hat) + hp.adam_eps)


@dataclass
class SynthesisResult:
    """Parameters, compression indices and bookkeeping of one synthesis run."""

    theta: np.ndarray
    compression: tuple[int, ...]
    loss_trace: np.ndarray
    warm_iterations: int
    main_iterations: int
    calls: int
    wall_time_s: float
    final_max_loss: float
    certified: bool
    hit_cap: bool
    call_traces: list = field(default_factory=list)

    @property
    def cardinality(self) -> int:
        return len(self.compression)


def _warm_start(ev: LossEvaluator, theta: np.ndarray, adam: _Adam, hp: HyperParams) -> tuple[np.ndarray, int]:
    iters = 0
    while True:
        value, grad = ev.state_loss(theta)
        if value <= 0.0:
            return theta, iters
        if iters >= hp.warm_start_max_iters:
            raise SynthesisError(
                f"warm start did not reach zero state loss within {hp.warm_start_max_iters} "
                f"iterations (loss {value:.3g}); use a larger network or raise the cap"
            )
        theta = adam.step(theta, grad)
        iters += 1


def _select_misaligned(bls, candidates: np.ndarray, losses: np.ndarray, g_c: np.ndarray):
    """Highest-loss candidate with a nonzero subgradient misaligned to g_c.

    Candidates are scanned in (loss desc, index asc) order so the selected
    sample is the maximum-loss qualifying one with lowest-index tie-breaks.
    """
    order = np.lexsort((candidates, -losses[candidates]))
    ordered = candidates[order]
    for start in range(0, ordered.shape[0], _CANDIDATE_CHUNK):
        block = ordered[start : start + _CANDIDATE_CHUNK]
        grads = bls.subgradients(block)
        nonzero = np.any(grads != 0.0, axis=1)
        misaligned = grads @ g_c <= 0.0
        ok = np.nonzero(nonzero & misaligned)[0]
        if ok.size:
            j = int(ok[0])
            return int(block[j]), grads[j]
    return None


def algorithm1(
    theta0: np.ndarray,
    trajs: np.ndarray,
    prop: PropertySpec,
    net: NetworkSpec,
    hyper: HyperParams | None = None,
) -> SynthesisResult:
    """Subgradient descent with jumps; returns parameters and a compression set.

    Compression indices are positions into ``trajs`` in the order the samples
    were added (the final worst-case sample is appended last if new).
    """
    hyper = hyper or HyperParams()
    trajs = np.ascontiguousarray(trajs, dtype=float)
    if trajs.ndim != 3 or trajs.shape[0] == 0:
        raise ValueError("need a nonempty (N, T+1, dim) trajectory array")
    ev = get_evaluator(prop, net)
    theta = np.ascontiguousarray(theta0, dtype=float).copy()
    t_start = time.perf_counter()

    theta, warm_iters = _warm_start(ev, theta, _Adam(net.n_params, hyper), hyper)
    # fresh momentum for the main loop: a zero subgradient then leaves the
    # parameters bitwise unchanged, so certified points are stationary
    adam = _Adam(net.n_params, hyper)

    comp: list[int] = []
    in_comp = np.zeros(trajs.shape[0], dtype=bool)
    loss_prev = np.inf  # sentinel L_0; the first update differs by more than eta
    trace: list[float] = []
    iters = 0
    hit_cap = False

    while True:
        bls = ev.batch(theta, trajs)
        losses = bls.totals

        if iters > 0:
            running = float(np.max(losses[comp])) if comp else 0.0
            loss_k = min(loss_prev, running)
            trace.append(loss_k)
            if abs(loss_k - loss_prev) <= hyper.eta:
                break
            loss_prev = loss_k
        if iters >= hyper.main_max_iters:
            hit_cap = True
            break
        iters += 1

        if comp:
            comp_arr = np.asarray(comp)
            c_max = float(np.max(losses[comp_arr]))
            leader = int(np.min(comp_arr[losses[comp_arr] == c_max]))
            g_c = bls.subgradient(leader)
            threshold = c_max
        else:
            g_c = np.zeros(net.n_params)
            threshold = -np.inf  # every sample qualifies for the first jump

        candidates = np.nonzero(losses >= threshold)[0]
        picked = _select_misaligned(bls, candidates, losses, g_c)
        if picked is not None:
            idx, grad = picked
            theta = adam.step(theta, grad)
            if not in_comp[idx]:
                comp.append(idx)
                in_comp[idx] = True
        else:
            theta = adam.step(theta, g_c)

    final_losses = ev.batch(theta, trajs).totals
    worst = int(np.argmax(final_losses))
    if not in_comp[worst]:
        comp.append(worst)
    final_max = float(final_losses.max())

    return SynthesisResult(
        theta=theta,
        compression=tuple(comp),
        loss_trace=np.asarray(trace),
        warm_iterations=warm_iters,
        main_iterations=iters,
        calls=1,
        wall_time_s=time.perf_counter() - t_start,
        final_max_loss=final_max,
        certified=final_max == 0.0,
        hit_cap=hit_cap,
        call_traces=[np.asarray(trace)],
    )


def algorithm2(
    theta0: np.ndarray,
    trajs: np.ndarray,
    prop: PropertySpec,
    net: NetworkSpec,
    hyper: HyperParams | None = None,
) -> SynthesisResult:
    """Discarding loop over ``algorithm1`` driving the worst-case loss to zero.

    Returns the accumulated discarded samples (in discard order) as the
    compression set; indices refer to positions in ``trajs``.
    """
    hyper = hyper or HyperParams()
    trajs = np.ascontiguousarray(trajs, dtype=float)
    if trajs.ndim != 3 or trajs.shape[0] == 0:
        raise ValueError("need a nonempty (N, T+1, dim) trajectory array")
    ev = get_evaluator(prop, net)
    theta = np.ascontiguousarray(theta0, dtype=float).copy()
    t_start = time.perf_counter()

    remaining = list(range(trajs.shape[0]))
    removed: list[int] = []
    traces: list[np.ndarray] = []
    warm_total = 0
    main_total = 0
    calls = 0
    hit_cap = False

    while remaining:
        current_max = float(ev.batch(theta, trajs[remaining]).totals.max())
        if not current_max > 0.0:
            break
        res = algorithm1(theta, trajs[remaining], prop, net, hyper)
        theta = res.theta
        calls += 1
        warm_total += res.warm_iterations
        main_total += res.main_iterations
        hit_cap = hit_cap or res.hit_cap
        traces.extend(res.call_traces)
        discard_global = [remaining[i] for i in res.compression]
        removed.extend(discard_global)
        discard_set = set(discard_global)
        remaining = [i for i in remaining if i not in discard_set]

    if remaining:
        final_max = float(ev.batch(theta, trajs[remaining]).totals.max())
    else:
        final_max = 0.0  # max over the empty set, by convention

    return SynthesisResult(
        theta=theta,
        compression=tuple(removed),
        loss_trace=np.concatenate(traces) if traces else np.empty(0),
        warm_iterations=warm_total,
        main_iterations=main_total,
        calls=calls,
        wall_time_s=time.perf_counter() - t_start,
        final_max_loss=final_max,
        certified=final_max == 0.0 and not hit_cap,
        hit_cap=hit_cap,
        call_traces=traces,
    )

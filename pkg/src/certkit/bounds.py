"""Risk-level solvers for the compression and direct PAC bounds.

``epsilon_compression`` solves, for a compression cardinality k out of N
samples at confidence level beta, the polynomial equation

    (beta/2N) * sum_{m=k}^{N-1}   [C(m,k)/C(N,k)] (1-eps)^(m-N)
  + (beta/6N) * sum_{m=N+1}^{4N}  [C(m,k)/C(N,k)] (1-eps)^(m-N)  =  1

for its unique root in [k/N, 1]; for k = N the risk is 1 by definition.

``epsilon_direct`` solves the binomial-tail equation

    sum_{j=0}^{r} C(N,j) eps^j (1-eps)^(N-j) = beta / N

for the unique root in (0, 1); for r = N the risk is again 1.  The direct
bound already accounts for the single support sample that remains after
discarding, so r is exactly the number of discarded (violating) samples.

Both solvers work in log space (log-gamma binomial ratios, log-sum-exp
accumulation) and bisect on a transformed variable so the returned root
satisfies the defining equation to far better than the 1e-10 tolerance on
eps even when the root sits close to 1.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, logsumexp

BISECTION_MAX_ITERS = 200
_LOG_ONE_MINUS_EPS_FLOOR = np.log(1e-12)  # bracket end 1 - 1e-12


class BracketError(RuntimeError):
    """The defining equation showed no sign change over the bracket."""


def _validate(k: int, beta: float, N: int, name: str) -> tuple[int, float, int]:
    N = int(N)
    k = int(k)
    if N < 1:
        raise ValueError("N must be >= 1")
    if not 0 <= k <= N:
        raise ValueError(f"{name} must satisfy 0 <= {name} <= N, got {k} with N={N}")
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    return k, beta, N


def _compression_log_lhs_terms(k: int, beta: float, N: int):
    """Per-term log weights of the defining sum, minus the (1-eps) powers."""
    m1 = np.arange(k, N, dtype=float)
    m2 = np.arange(N + 1, 4 * N + 1, dtype=float)
    log_ratio_1 = gammaln(m1 + 1) - gammaln(m1 - k + 1)
    log_ratio_2 = gammaln(m2 + 1) - gammaln(m2 - k + 1)
    log_cnk = gammaln(N + 1) - gammaln(N - k + 1)
    base1 = np.log(beta / (2.0 * N)) + log_ratio_1 - log_cnk
    base2 = np.log(beta / (6.0 * N)) + log_ratio_2 - log_cnk
    powers1 = m1 - N
    powers2 = m2 - N
    return np.concatenate([base1, base2]), np.concatenate([powers1, powers2])


def _compression_log_lhs(base: np.ndarray, powers: np.ndarray, log_q: float) -> float:
    # q = 1 - eps; the m < N terms carry negative powers of q, so everything
    # stays in log space until the final single exponential
    return float(logsumexp(base + powers * log_q))


def epsilon_compression(k: int, beta: float, N: int) -> float:
    """Risk level for compression cardinality k of N samples at confidence beta."""
    k, beta, N = _validate(k, beta, N, "k")
    if k == N:
        return 1.0
    base, powers = _compression_log_lhs_terms(k, beta, N)

    # bisect on log(1 - eps); eps in [k/N, 1 - 1e-12]
    u_hi = np.log1p(-k / N)
    u_lo = _LOG_ONE_MINUS_EPS_FLOOR
    f_hi = _compression_log_lhs(base, powers, u_hi)  # at eps = k/N
    f_lo = _compression_log_lhs(base, powers, u_lo)  # at eps = 1 - 1e-12
    if not (f_hi < 0.0 < f_lo):
        raise BracketError(
            "no sign change of LHS-1 over [k/N, 1-1e-12]: "
            f"log LHS({k}/{N}) = {f_hi:.6g}, log LHS(1-1e-12) = {f_lo:.6g}"
        )
    lo, hi = u_lo, u_hi
    for _ in range(BISECTION_MAX_ITERS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _compression_log_lhs(base, powers, mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    u = 0.5 * (lo + hi)
    eps = float(-np.expm1(u))
    return min(1.0, max(eps, k / N))


def _direct_log_cdf(log_binoms: np.ndarray, ks: np.ndarray, N: int, t: float) -> float:
    # t is the logit of eps: log eps = -softplus(-t), log(1-eps) = -softplus(t)
    log_eps = -np.logaddexp(0.0, -t)
    log_1m = -np.logaddexp(0.0, t)
    return float(logsumexp(log_binoms + ks * log_eps + (N - ks) * log_1m))


def epsilon_direct(r: int, beta: float, N: int) -> float:
    """Risk level when r of N sampled trajectories violate the property."""
    r, beta, N = _validate(r, beta, N, "r")
    if r == N:
        return 1.0
    ks = np.arange(0, r + 1, dtype=float)
    log_binoms = gammaln(N + 1) - gammaln(ks + 1) - gammaln(N - ks + 1)
    target = np.log(beta / N)

    lo, hi = -746.0, 60.0  # logit bracket spanning eps from ~1e-324 to 1-Ulp
    f_lo = _direct_log_cdf(log_binoms, ks, N, lo) - target
    f_hi = _direct_log_cdf(log_binoms, ks, N, hi) - target
    if not (f_hi < 0.0 < f_lo):
        raise BracketError(
            f"binomial tail equation not bracketed: f(lo)={f_lo:.6g}, f(hi)={f_hi:.6g}"
        )
    for _ in range(BISECTION_MAX_ITERS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if _direct_log_cdf(log_binoms, ks, N, mid) - target > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    t = 0.5 * (lo + hi)
    eps = float(1.0 / (1.0 + np.exp(-t)))
    return min(1.0, max(eps, 0.0))


def bound_comparison_table(beta: float, n_values, k: int) -> list[tuple[int, float, float]]:
    """Rows (N, eps_compression(k), eps_direct(max(k-1, 0))) for each N.

    The direct column uses one sample less because the compression bound's
    cardinality always includes the final support sample.
    """
    rows = []
    for N in n_values:
        eps_c = epsilon_compression(k, beta, N)
        eps_d = epsilon_direct(max(k - 1, 0), beta, N)
        rows.append((int(N), eps_c, eps_d))
    return rows

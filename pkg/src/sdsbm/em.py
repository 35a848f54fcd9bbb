"""Expectation-maximization for per-block noise parameters.

Learns phi = {r, q_m, q_s, mu0, Sigma0} for one block.  The E-step runs
the filter and smoother on the augmented state space and collects
smoothed first and second moments; the M-step updates the initial
belief in closed form, reads the process variances off the
innovation-selector projections, and maximizes the measurement variance
by a bounded golden-section search.  The per-step binomial noises u_t
are frozen within each iteration, mirroring their separate estimation
from the prediction step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph_model import BlockSeries
from .kalman import BeliefSequence, run_filter, smooth
from .ssm import ModelParams, augment

__all__ = [
    "ModelParams",
    "SufficientStats",
    "EmConfig",
    "EmTrace",
    "EmError",
    "e_step",
    "m_step_initial",
    "m_step_r",
    "m_step_q",
    "em_fit",
    "default_init",
    "r_objective",
]

# Smallest representable process variance; avoids exactly-singular
# covariances when an innovation collapses to zero.
Q_FLOOR = 1e-15

# A density variance cannot exceed 1/4, so r never needs to.
R_MAX = 0.25

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class EmError(RuntimeError):
    """E-step failure; ``iteration`` is the 0-based EM iteration."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class SufficientStats:
    """Smoothed moments of the augmented state.

    ``Ex[t]``/``Exx[t]`` cover t = 0..T; ``Exx_lag[i]`` holds
    E[x_t x_{t-1}^T] for t = i + 1.
    """

    Ex: np.ndarray
    Exx: np.ndarray
    Exx_lag: np.ndarray

    @property
    def T(self) -> int:
        return int(self.Ex.shape[0]) - 1

    @property
    def dim(self) -> int:
        return int(self.Ex.shape[1])


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 200
    tol: float = 1e-6
    fix_r_to_zero: bool = False

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


@dataclass
class EmTrace:
    loglik_per_iter: list[float] = field(default_factory=list)
    params_per_iter: list[ModelParams] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def _augmented_init(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    # The two appended slots never feed back into the first d coordinates
    # (the augmented transition has zero columns there), so their initial
    # belief is a fixed dummy: zero-variance [0, bias].
    d = params.d
    mu0 = np.zeros(d + 2)
    mu0[:d] = params.mu0
    mu0[d + 1] = params.mu0[0]
    Sigma0 = np.zeros((d + 2, d + 2))
    Sigma0[:d, :d] = params.Sigma0
    return mu0, Sigma0


def e_step(
    series: BlockSeries, params: ModelParams
) -> tuple[SufficientStats, float, np.ndarray]:
    """Filter + smooth on the augmented state space.

    Returns the smoothed sufficient statistics, the total predictive
    log-likelihood under ``params`` and the per-step binomial noises the
    filter used (to be held fixed through the following M-step).
    """
    aug = augment(params.state_space(series.n))
    mu0, Sigma0 = _augmented_init(params)
    seq = smooth(run_filter(series.counts, aug, mu0, Sigma0), aug)
    return _stats_from_smoothed(seq), seq.total_loglik, seq.u.copy()


def _stats_from_smoothed(seq: BeliefSequence) -> SufficientStats:
    T = seq.T
    sm_mean, sm_cov, J = seq.smoothed_mean, seq.smoothed_cov, seq.smoother_gains
    D = sm_mean.shape[1]
    Ex = sm_mean.copy()
    Exx = sm_cov + np.einsum("ti,tj->tij", sm_mean, sm_mean)
    Exx_lag = np.zeros((T, D, D))
    for t in range(1, T + 1):
        # E[x_t x_{t-1}^T] = S_{t|T} J_{t-1}^T + mu_{t|T} mu_{t-1|T}^T
        Exx_lag[t - 1] = sm_cov[t] @ J[t - 1].T + np.outer(sm_mean[t], sm_mean[t - 1])
    return SufficientStats(Ex=Ex, Exx=Exx, Exx_lag=Exx_lag)


def m_step_initial(stats: SufficientStats) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form update of the initial belief from the smoothed t=0
    moments (restricted to the non-augmented coordinates)."""
    d = stats.dim - 2
    mu0 = stats.Ex[0, :d].copy()
    Sigma0 = stats.Exx[0, :d, :d] - np.outer(mu0, mu0)
    return mu0, 0.5 * (Sigma0 + Sigma0.T)


def r_objective(r: float, quad: np.ndarray, u: np.ndarray, n: int) -> float:
    """Expected observation log-likelihood as a function of r (constants
    dropped): sum_t [-ln(u_t + n^2 r)/2 - quad_t / (2 (u_t + n^2 r))]."""
    v = u + n * n * r
    if np.any(v <= 0):
        return -math.inf
    return float(np.sum(-0.5 * np.log(v) - 0.5 * quad / v))


def _polish_r(r: float, quad: np.ndarray, u: np.ndarray, n: int) -> float:
    # The objective is flat to machine precision within ~1e-8 of its
    # maximum, which caps what value comparisons can resolve; a few
    # safeguarded Newton steps on the analytic gradient sharpen the
    # bracket-search result.
    n2 = float(n) * n
    for _ in range(6):
        v = u + n2 * r
        grad = 0.5 * n2 * np.sum((quad - v) / v**2)
        hess = 0.5 * n2 * n2 * np.sum((v - 2.0 * quad) / v**3)
        if not np.isfinite(grad) or not np.isfinite(hess) or hess >= 0:
            break
        step = grad / hess
        candidate = r - step
        if not 0.0 < candidate or abs(step) > 0.5 * r + 1e-12:
            break
        r = candidate
        if abs(step) <= 1e-14 * r:
            break
    return r


def m_step_r(
    stats: SufficientStats,
    series: BlockSeries,
    u_per_t: np.ndarray,
    n: int,
    r_max: float = R_MAX,
) -> float:
    """Maximize the expected observation log-likelihood over r.

    Golden-section search on a log-spaced bracket [1e-12, 1], refined to
    1e-10 relative tolerance, with the exact boundary r = 0 kept as a
    candidate; the result is capped at ``r_max``.
    """
    D = stats.dim
    H = np.zeros(D)
    H[0] = H[1] = float(n)
    mask = series.observed_mask()
    w = series.counts[mask]
    Ex = stats.Ex[1:][mask]
    Exx = stats.Exx[1:][mask]
    u = np.asarray(u_per_t, dtype=float)[mask]
    if w.size == 0:
        return 0.0
    hx = Ex @ H
    hxxh = np.einsum("i,tij,j->t", H, Exx, H)
    quad = w * w - 2.0 * w * hx + hxxh

    def obj(log_r: float) -> float:
        return r_objective(math.exp(log_r), quad, u, n)

    lo, hi = math.log(1e-12), math.log(1.0)
    # Coarse scan to bracket the best region of the (near-unimodal)
    # objective before refining.
    grid = np.linspace(lo, hi, 30)
    values = [obj(g) for g in grid]
    best = int(np.argmax(values))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]
    c = b - _GOLDEN * (b - a)
    d_ = a + _GOLDEN * (b - a)
    fc, fd = obj(c), obj(d_)
    while b - a > 1e-10:
        if fc >= fd:
            b, d_, fd = d_, c, fc
            c = b - _GOLDEN * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + _GOLDEN * (b - a)
            fd = obj(d_)
    r_hat = _polish_r(math.exp(0.5 * (a + b)), quad, u, n)
    if r_objective(0.0, quad, u, n) >= r_objective(r_hat, quad, u, n):
        return 0.0
    return min(r_hat, r_max)


def m_step_q(stats: SufficientStats, d: int) -> tuple[float, float]:
    """Closed-form process-variance updates.

    The selectors d1/d2 recover the bias and seasonal innovations from
    the augmented state, so each variance is the average projected
    second moment over t = 1..T, floored at a tiny positive value.
    """
    if stats.dim != d + 2:
        raise ValueError("stats do not match an augmented state of period d")
    T = stats.T
    if T == 0:
        raise ValueError("cannot update process variances with no steps")
    d1 = np.zeros(d + 2)
    d1[0], d1[-1] = 1.0, -1.0
    d2 = np.zeros(d + 2)
    d2[1], d2[d] = 1.0, -1.0
    q_m = float(np.einsum("i,tij,j->t", d1, stats.Exx[1:], d1).sum()) / T
    q_s = float(np.einsum("i,tij,j->t", d2, stats.Exx[1:], d2).sum()) / T
    return max(q_m, Q_FLOOR), max(q_s, Q_FLOOR)


def em_fit(
    series: BlockSeries,
    init: ModelParams,
    config: EmConfig = EmConfig(),
) -> tuple[ModelParams, EmTrace]:
    """Alternate E and M steps until the log-likelihood stalls.

    Stops when the per-iteration improvement drops below
    ``tol * |loglik|`` or after ``max_iter`` iterations.  With
    ``fix_r_to_zero`` the measurement variance is pinned at zero,
    reproducing the model variant without that term.
    """
    if series.n < 1:
        raise ValueError("cannot fit a block with no possible edges")
    params = init
    if config.fix_r_to_zero and params.r != 0.0:
        params = ModelParams(
            d=params.d, q_m=params.q_m, q_s=params.q_s, r=0.0,
            mu0=params.mu0, Sigma0=params.Sigma0,
        )
    trace = EmTrace()
    for i in range(config.max_iter):
        try:
            stats, loglik, u_per_t = e_step(series, params)
        except Exception as exc:
            raise EmError(i, str(exc)) from exc
        mu0, Sigma0 = m_step_initial(stats)
        q_m, q_s = m_step_q(stats, params.d)
        r = 0.0 if config.fix_r_to_zero else m_step_r(stats, series, u_per_t, series.n)
        params = ModelParams(d=params.d, q_m=q_m, q_s=q_s, r=r, mu0=mu0, Sigma0=Sigma0)
        trace.loglik_per_iter.append(loglik)
        trace.params_per_iter.append(params)
        trace.iterations = i + 1
        if i > 0:
            prev = trace.loglik_per_iter[-2]
            if loglik - prev < config.tol * abs(prev):
                trace.converged = True
                break
    return params, trace


def default_init(series: BlockSeries, d: int, flat_defaults: bool = False) -> ModelParams:
    """Heuristic starting parameters for one block.

    Variances are scaled off the data (``var(w) / n^2 / T`` for the
    process terms, ``var(w) / n^2 / 10`` for the measurement term); the
    initial mean takes the first period's density as bias plus per-phase
    deviations.  ``flat_defaults`` switches the variances to the
    flat-1 convention instead.
    """
    if d < 2:
        raise ValueError("period d must be >= 2")
    if series.n < 1:
        raise ValueError("cannot initialise a block with no possible edges")
    n = series.n
    mask = series.observed_mask()
    w = series.counts[mask]
    y = w / n

    head = series.counts[:d] / n
    head_obs = head[~np.isnan(head)]
    bias = float(head_obs.mean()) if head_obs.size else 0.5
    dev = np.where(np.isnan(head), 0.0, head - bias)
    offsets = np.zeros(d - 1)
    # state holds (s_0, s_-1, ...); phase k of the first period estimates
    # the offset regenerated at steps t = k+1 mod d
    for j in range(d - 1):
        k = d - 1 - j
        if k < dev.shape[0]:
            offsets[j] = dev[k]
    mu0 = np.concatenate(([bias], offsets))

    if flat_defaults:
        q_m = q_s = r = 1.0
        Sigma0 = np.eye(d)
    else:
        var_w = float(y.var()) if y.size > 1 else 0.0
        T_obs = max(int(mask.sum()), 1)
        q_m = q_s = max(var_w / T_obs, Q_FLOOR)
        r = max(var_w / 10.0, 0.0)
        Sigma0 = 0.01 * np.eye(d)
    return ModelParams(d=d, q_m=q_m, q_s=q_s, r=r, mu0=mu0, Sigma0=Sigma0)

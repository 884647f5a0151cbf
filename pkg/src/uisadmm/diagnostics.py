"""Full-gradient probes: stationarity, x-step residuals, estimator bias and
variance at enumeration scale, and empirical rate fits.

Every function here is a pure observer: it reads iterates and losses and
never mutates solver or estimator state.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .prox import subgrad_distance

__all__ = [
    "StationarityReport", "RateFit", "FitError", "EnumerationBudgetError",
    "VarianceBoundViolation", "stationarity", "xi_x_residual", "bias_probe",
    "variance_bound_probe", "rate_fit",
]


class FitError(ValueError):
    pass


class EnumerationBudgetError(ValueError):
    pass


class VarianceBoundViolation(AssertionError):
    pass


@dataclass
class StationarityReport:
    stat_x: float
    stat_y: float
    stat_r: float
    epsilon: Optional[float] = None

    @property
    def epsilon_met(self):
        if self.epsilon is None:
            return None
        return max(self.stat_x, self.stat_y, self.stat_r) <= self.epsilon


@dataclass
class RateFit:
    kind: str
    slope: float
    ratio: Optional[float]
    r_squared: float
    window: tuple


def stationarity(iterate, problem, epsilon=None):
    """Squared residuals ``||grad f(x) - A^T lam||^2``, ``dist(B^T lam, dg(y))^2``, ``||r||^2``."""
    con = problem.constraint
    gx = problem.loss.grad(iterate.x) - con.At(iterate.lam)
    dy = subgrad_distance(problem.regularizer, iterate.y, con.B_diag * iterate.lam)
    r = con.residual(iterate.x, iterate.y)
    return StationarityReport(float(gx @ gx), float(dy * dy), float(r @ r), epsilon)


def xi_x_residual(x_next, y_next, lambda_k, problem, beta, w1, x_k):
    """Norm of ``grad f(x+) + A^T(-lam_k + beta r+) + beta w1 (x+ - x_k)``."""
    con = problem.constraint
    r = con.residual(x_next, y_next)
    v = (problem.loss.grad(x_next) + con.At(-lambda_k + beta * r)
         + beta * w1 * (x_next - x_k))
    return float(np.linalg.norm(v))


def _check_budget(loss, limit, what):
    if loss.n_samples > limit:
        raise EnumerationBudgetError(
            f"{what} enumerates samples exactly and accepts at most N={limit}, "
            f"got N={loss.n_samples}")


def bias_probe(points, loss, alpha, batch=1, seed=0, prox_weight=0.0, anchor=None):
    """Exact conditional bias of the hybrid estimate along a fixed trajectory.

    The estimator is run along ``points`` with real draws. Before each draw
    at step ``t >= 1`` the conditional mean of the next estimate is computed
    by averaging over every sample pair ``(xi, zeta)``.

    Returns
    -------
    list of (measured, predicted)
        ``measured = ||E[v_t | past] - grad h(x_t)||`` and
        ``predicted = alpha ||v_{t-1} - grad h(x_{t-1})||`` for ``t = 1..T``.
    """
    from .estimators import HybridEstimator

    _check_budget(loss, 16, "bias_probe")
    points = [np.asarray(p, dtype=float) for p in points]
    anchor = points[0] if anchor is None else np.asarray(anchor, dtype=float)
    shift = lambda x: prox_weight * (x - anchor)
    grad_h = lambda x: loss.grad(x) + shift(x)
    est = HybridEstimator(loss, batch, seed, alpha=alpha)
    v = est.reset(points[0]) + shift(points[0])
    out = []
    for t in range(1, len(points)):
        x_prev, x_cur = points[t - 1], points[t]
        G_prev, G_cur = loss.sample_grads(x_prev), loss.sample_grads(x_cur)
        # every (xi, zeta) pair, shape (N, N, d)
        pairs = (alpha * v + alpha * (G_cur - G_prev)[:, None, :]
                 + (1 - alpha) * G_cur[None, :, :]
                 + alpha * (shift(x_cur) - shift(x_prev)) + (1 - alpha) * shift(x_cur))
        mean = pairs.reshape(-1, pairs.shape[-1]).mean(axis=0)
        measured = float(np.linalg.norm(mean - grad_h(x_cur)))
        predicted = float(alpha * np.linalg.norm(v - grad_h(x_prev)))
        out.append((measured, predicted))
        v = est.estimate(x_cur) + shift(x_cur)
    return out


def variance_bound_probe(points, loss, alpha, t_max, batch=1, prox_weight=0.0,
                         check=True):
    """Exact mean squared error of the hybrid estimate against its upper bound.

    Enumerates every initial batch of size ``batch`` and every sequence of
    single-sample pairs up to ``t_max`` along the fixed trajectory ``points``.
    ``sigma^2`` is the largest population variance of the sample gradients
    over the trajectory and ``Lambda`` is the mean-square smoothness constant
    ``sqrt(mean_i L_i^2)`` plus ``prox_weight``.

    Returns
    -------
    list of (measured, bound) for ``t = 0..t_max``
    """
    _check_budget(loss, 10, "variance_bound_probe")
    if t_max > 3:
        raise EnumerationBudgetError("variance_bound_probe enumerates at most t_max=3")
    if len(points) < t_max + 1:
        raise ValueError("trajectory shorter than t_max + 1")
    N = loss.n_samples
    points = [np.asarray(p, dtype=float) for p in points[:t_max + 1]]
    G = [loss.sample_grads(p) for p in points]
    full = [g.mean(axis=0) for g in G]
    sigma2 = max(float(np.mean(np.sum((g - m) ** 2, axis=1))) for g, m in zip(G, full))
    Lam = math.sqrt(float(np.mean(loss.sample_lipschitz() ** 2))) + prox_weight
    steps = [float(np.sum((points[i + 1] - points[i]) ** 2)) for i in range(t_max)]

    # every leaf at depth t is one equally likely (batch, pairs_1..t) sequence
    sq_sums = np.zeros(t_max + 1)
    count = 0
    for S in itertools.combinations(range(N), batch):
        v = G[0][list(S)].mean(axis=0)[None, :]
        sq_sums[0] += float(np.sum((v - full[0]) ** 2))
        for t in range(1, t_max + 1):
            rec = alpha * (G[t] - G[t - 1])
            fresh = (1 - alpha) * G[t]
            v = (alpha * v[:, None, None, :] + rec[None, :, None, :]
                 + fresh[None, None, :, :]).reshape(-1, v.shape[-1])
            err = v - full[t]
            sq_sums[t] += float(np.sum(err * err))
        count += 1
    measured = [sq_sums[t] / (count * N ** (2 * t)) for t in range(t_max + 1)]
    out = []
    for t in range(t_max + 1):
        bound = (alpha ** (2 * t) * measured[0]
                 + Lam ** 2 * sum(alpha ** (2 * (t - i)) * steps[i] for i in range(t))
                 + (1 - alpha) / (1 + alpha) * sigma2)
        out.append((measured[t], bound))
        if check and measured[t] > bound * (1 + 1e-12) + 1e-300:
            raise VarianceBoundViolation(
                f"t={t}: measured {measured[t]!r} exceeds bound {bound!r}")
    return out


def _series(trace, kind):
    if len(trace) and not np.isscalar(trace[0]):
        if kind == "sublinear":
            return np.array([r.dx_norm ** 2 + r.dy_norm ** 2 + r.dlam_norm ** 2
                             for r in trace])
        return np.array([r.potential_P for r in trace])
    return np.asarray(trace, dtype=float)


def rate_fit(trace, kind, window=None, f_star=None, floor=1e-14, n_grid=200):
    """Least-squares rate of a trace.

    ``sublinear``: slope of ``log min_{k <= T} gap_k`` against ``log T`` on a
    log-spaced grid of ``T`` in ``window`` (1-based, inclusive). ``gap`` is
    ``||d_x||^2 + ||d_y||^2 + ||d_lam||^2`` for trace records, or the values
    themselves.

    ``linear``: slope of ``log(P_k - F* + floor)`` against ``k``, with ``F*``
    the smallest observed value unless given; ``ratio = exp(slope)``.
    """
    vals = _series(trace, kind)
    if vals.size < 50:
        raise FitError("rate_fit needs at least 50 trace entries")
    if kind == "sublinear":
        lo, hi = window or (1, vals.size)
        hi = min(hi, vals.size)
        running = np.minimum.accumulate(vals)
        T = np.unique(np.round(np.geomspace(lo, hi, n_grid)).astype(int))
        m = running[T - 1]
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise FitError("nonpositive gap in the fit window")
        fit = stats.linregress(np.log(T), np.log(m))
        return RateFit("sublinear", float(fit.slope), None, float(fit.rvalue ** 2), (lo, hi))
    if kind == "linear":
        lo, hi = window or (0, vals.size - 1)
        seg = vals[lo:hi + 1]
        fs = float(np.min(vals)) if f_star is None else f_star
        gap = seg - fs + floor
        if np.any(gap <= 0):
            raise FitError("nonpositive gap after flooring")
        k = np.arange(lo, lo + seg.size)
        fit = stats.linregress(k, np.log(gap))
        return RateFit("linear", float(fit.slope), float(math.exp(fit.slope)),
                       float(fit.rvalue ** 2), (lo, hi))
    raise ValueError(f"unknown rate kind {kind!r}")

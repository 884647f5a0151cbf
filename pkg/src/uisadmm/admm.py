"""Outer ADMM loop with linearized or inner-solver x-updates.

One iteration maps ``(x, y, lam)`` to

1. ``y+ = argmin_y L_beta(x, y, lam) + (beta w2 / 2) ||y - y_k||^2``,
2. ``x+`` from the linearized step or the accelerated inner solver,
3. ``lam+ = lam - s beta (A x+ + B y+ - b)``,

where ``L_beta(x, y, lam) = f(x) + g(y) - <lam, r> + (beta/2) ||r||^2`` and
``r = A x + B y - b``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .estimators import HybridEstimator, make_estimator
from .inner import InnerSchedule, build_inner_problem, solve_x_subproblem
from .prox import y_update

__all__ = [
    "SolverConfig", "Iterate", "PotentialParams", "TraceRecord", "RunResult",
    "ParamError", "DivergenceError", "psi", "potential_params", "validate_params",
    "minimal_feasible",
    "augmented_lagrangian", "x_update_linearized", "dual_update", "potential",
    "run", "TRACE_COLUMNS", "write_trace_csv", "read_trace_csv",
]

TRACE_COLUMNS = ("k", "loss_F", "aug_lagrangian", "potential_P", "residual_norm",
                 "dx_norm", "dy_norm", "dlam_norm", "stat_x", "stat_y", "stat_r",
                 "grad_calls", "wall_time_s")


class ParamError(ValueError):
    """Infeasible penalty parameters; carries the minimal feasible pair."""

    def __init__(self, msg, w1_min=None, w2_min=None, w1_max=None):
        super().__init__(msg)
        self.w1_min, self.w2_min, self.w1_max = w1_min, w2_min, w1_max


class DivergenceError(FloatingPointError):
    def __init__(self, k, msg):
        super().__init__(f"iteration {k}: {msg}")
        self.k = k


@dataclass
class SolverConfig:
    """Settings of one ADMM run.

    ``w1_decay`` and ``decay_period`` make the proximal weight grow as
    ``w1 (1 + w1_decay * ceil(k / decay_period))``, which is a decaying step
    size ``1 / (beta w1_k)``. ``grad_budget`` stops the run once that many
    sample gradients have been evaluated.
    """

    beta: float = 1.01
    s: float = 1.2
    w1: float = 1.0
    w2: float = 0.0
    tau_lemma: float = 0.5
    outer_T: int = 100
    x_update_mode: str = "linearized"
    estimator: str = "SGD"
    batch: Optional[int] = None
    estimator_opts: dict = field(default_factory=dict)
    inner: Optional[InnerSchedule] = None
    w1_decay: float = 0.0
    decay_period: Optional[int] = None
    grad_budget: Optional[int] = None
    seed: int = 0
    probe_interval: int = 10
    margin_w: float = 1e-8
    c_x: Optional[float] = None
    enforce_params: bool = False
    record_wall_time: bool = True
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0 < self.s < 2:
            raise ValueError(f"dual stepsize s={self.s} outside (0, 2)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0 < self.tau_lemma < 1:
            raise ValueError("tau_lemma must lie in (0, 1)")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("w1 and w2 must be nonnegative")
        if self.x_update_mode not in ("linearized", "inner_accel"):
            raise ValueError(f"unknown x_update_mode {self.x_update_mode!r}")
        if self.x_update_mode == "inner_accel" and self.inner is None:
            raise ValueError("inner_accel mode needs an InnerSchedule")

    def w1_at(self, k):
        if not self.w1_decay:
            return self.w1
        period = self.decay_period or 1
        return self.w1 * (1.0 + self.w1_decay * math.ceil(k / period))


@dataclass
class Iterate:
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    d_x: np.ndarray
    d_y: np.ndarray
    d_lam: np.ndarray
    r: np.ndarray

    @classmethod
    def start(cls, x, y, lam, constraint):
        z = np.zeros_like
        return cls(x, y, lam, z(x), z(y), z(lam), constraint.residual(x, y))


@dataclass
class PotentialParams:
    A_hat: float
    B_hat: float
    psi1: float
    psi2: float
    mu_floor: float
    w_margin: float
    c_x: float
    dual_coef: float
    w1_min: Optional[float] = None
    w1_max: Optional[float] = None
    w2_min: Optional[float] = None
    feasible: Optional[bool] = None
    violations: tuple = ()


@dataclass
class TraceRecord:
    k: int
    loss_F: float
    aug_lagrangian: float
    potential_P: float
    residual_norm: float
    dx_norm: float
    dy_norm: float
    dlam_norm: float
    stat_x: Optional[float] = None
    stat_y: Optional[float] = None
    stat_r: Optional[float] = None
    grad_calls: int = 0
    wall_time_s: Optional[float] = None

    def row(self):
        return [getattr(self, c) for c in TRACE_COLUMNS]


@dataclass
class RunResult:
    final: Iterate
    random_iterate: Iterate
    random_index: int
    trace: list
    probes: list
    initial_potential: float
    params: PotentialParams
    grad_calls: int
    warnings: list


def psi(s):
    """``(max(1, s^2/(2-s)^2), max((1-s)/s, (s-1)/(2-s)))`` for ``0 < s < 2``."""
    if not 0 < s < 2:
        raise ValueError(f"s={s} outside (0, 2)")
    return (max(1.0, s * s / (2 - s) ** 2), max((1 - s) / s, (s - 1) / (2 - s)))


def potential_params(config, problem, c_x=None, w=None):
    """Constants of the potential for a given ``c_x`` surrogate, without checks."""
    beta, s, tau = config.beta, config.s, config.tau_lemma
    L, sigma = problem.L, problem.sigma_A
    w = config.margin_w if w is None else w
    if c_x is None:
        c_x = math.sqrt(3.0) * max(L / beta, config.w1)
    p1, p2 = psi(s)
    K = (1 + tau) / (s * beta * sigma)
    A_hat = 4 * K * p1 * c_x ** 2 * beta ** 2
    B_hat = K * p1 * (2 * L ** 2 + 4 * c_x ** 2 * beta ** 2)
    return PotentialParams(A_hat=A_hat, B_hat=B_hat, psi1=p1, psi2=p2,
                           mu_floor=min(w, tau / (s * beta)), w_margin=w, c_x=c_x,
                           dual_coef=K * p2)


def _minimal_w1(config, problem, c_x, w):
    """Feasible interval for ``w1`` (``None`` if empty).

    Besides the potential-descent constraint this requires ``beta w1 >= L``,
    which makes the linearized x-step a descent step.
    """
    beta, s, tau = config.beta, config.s, config.tau_lemma
    L = problem.L
    p1, _ = psi(s)
    K = (1 + tau) * p1 / (s * beta * problem.sigma_A)
    floor = L / beta
    if c_x is not None:
        need = 2 * (K * (2 * L ** 2 + 8 * c_x ** 2 * beta ** 2) + w) / beta
        return max(need, floor), math.inf
    # default surrogate c_x^2 = 3 w1^2 once w1 >= L / beta:
    # 48 K beta w1^2 - w1 + 2 (2 K L^2 + w) / beta <= 0
    a = 48 * K * beta
    c0 = 2 * (2 * K * L ** 2 + w) / beta
    disc = 1 - 4 * a * c0
    if disc < 0:
        return None
    root = math.sqrt(disc)
    lo, hi = (1 - root) / (2 * a), (1 + root) / (2 * a)
    lo = max(lo, floor)
    return (lo, hi) if lo <= hi else None


def validate_params(config, problem, c_x_surrogate=None, w=None):
    """Check the penalty weights against the potential-descent constraints.

    Returns the :class:`PotentialParams` when ``w1`` and ``w2`` are feasible
    and raises :class:`ParamError` carrying the minimal feasible pair
    otherwise.
    """
    w = config.margin_w if w is None else w
    params = potential_params(config, problem, c_x_surrogate, w)
    span = _minimal_w1(config, problem, c_x_surrogate, w)
    beta = config.beta
    problems = []
    if span is None:
        params.w1_min = params.w1_max = params.w2_min = None
        problems.append("no w1 satisfies the constraints for this beta, s, tau")
    else:
        params.w1_min, params.w1_max = span
        ref = potential_params(replace(config, w1=span[0]), problem, c_x_surrogate, w)
        params.w2_min = 2 * (2 * ref.A_hat + w) / beta
        need_w1 = max(2 * (params.B_hat + params.A_hat + w) / beta, problem.L / beta)
        if config.w1 < need_w1 * (1 - 1e-12):
            problems.append(f"w1={config.w1!r} below required {need_w1!r}")
        need_w2 = 2 * (2 * params.A_hat + w) / beta
        if config.w2 < need_w2 * (1 - 1e-12):
            problems.append(f"w2={config.w2!r} below required {need_w2!r}")
    params.feasible = not problems
    params.violations = tuple(problems)
    if problems:
        raise ParamError("; ".join(problems) + f" (feasible w1 in [{params.w1_min!r}, "
                         f"{params.w1_max!r}], minimal w2={params.w2_min!r})",
                         params.w1_min, params.w2_min, params.w1_max)
    return params


def minimal_feasible(config, problem, c_x_surrogate=None, w=None):
    """Copy of ``config`` with the smallest feasible ``w1`` and matching ``w2``."""
    w = config.margin_w if w is None else w
    span = _minimal_w1(config, problem, c_x_surrogate, w)
    if span is None:
        raise ParamError("no w1 satisfies the constraints for this beta, s, tau")
    w1 = span[0]
    ref = potential_params(replace(config, w1=w1), problem, c_x_surrogate, w)
    return replace(config, w1=w1, w2=2 * (2 * ref.A_hat + w) / config.beta)


def augmented_lagrangian(problem, x, y, lam, beta, r=None):
    r = problem.constraint.residual(x, y) if r is None else r
    return float(problem.loss.value(x) + problem.g(y) - lam @ r + 0.5 * beta * (r @ r))


def x_update_linearized(iterate, y_next, grad_estimate, constraint, beta, w1,
                        solver=None):
    """Solve ``(w1 I + A^T A) x = w1 x_k + A^T(lam/beta - B y + b) - grad/beta``."""
    solver = constraint.solver if solver is None else solver
    rhs = (w1 * iterate.x
           + constraint.At(iterate.lam / beta - constraint.B_diag * y_next + constraint.b)
           - grad_estimate / beta)
    return solver.solve(w1, 1.0, rhs)


def dual_update(lambda_k, residual, s, beta):
    return lambda_k - s * beta * residual


def potential(iterate, params, aug_lagrangian_value, constraint):
    """Augmented Lagrangian plus weighted squared differences of the last step."""
    At_dlam = constraint.At(iterate.d_lam)
    return float(aug_lagrangian_value
                 + params.A_hat * (iterate.d_x @ iterate.d_x)
                 + params.A_hat * (iterate.d_y @ iterate.d_y)
                 + params.dual_coef * (At_dlam @ At_dlam))


def _initial_state(problem, config, rng):
    con = problem.constraint
    n = con.shape[1]
    x = (np.array(config.x0, dtype=float) if config.x0 is not None
         else rng.standard_normal(n))
    y = (con.b - con.A @ x) / con.B_diag
    lam = np.zeros(con.shape[0])
    return Iterate.start(x, y, lam, con)


def _build_estimator(problem, config, seed):
    N = problem.loss.n_samples
    batch = config.batch or N
    if config.x_update_mode == "inner_accel":
        return HybridEstimator(problem.loss, batch, seed, alpha=config.inner.hybrid_alpha,
                               pair_batch=config.inner.pair_batch)
    return make_estimator(config.estimator, problem.loss, batch, seed,
                          **config.estimator_opts)


def run(problem, config, callback=None):
    """Run the outer ADMM loop for ``config.outer_T`` iterations.

    Stops early when ``config.grad_budget`` is exhausted. Every
    ``config.probe_interval`` iterations the exact stationarity residuals
    are recorded in the trace and in ``RunResult.probes``.

    Raises
    ------
    DivergenceError
        On a non-finite iterate or ``||x|| > 1e8``.
    """
    from .diagnostics import stationarity, xi_x_residual

    con = problem.constraint
    beta, s = config.beta, config.s
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_rng, est_seed, out_rng = (np.random.default_rng(sq) for sq in seeds)
    notes = []
    try:
        params = validate_params(config, problem, config.c_x)
    except ParamError as err:
        if config.enforce_params:
            raise
        params = potential_params(config, problem, config.c_x)
        params.feasible = False
        params.w1_min, params.w2_min = err.w1_min, err.w2_min
        notes.append(f"parameter check failed, running anyway: {err}")
    cur = _initial_state(problem, config, init_rng)
    est = _build_estimator(problem, config, est_seed)
    if config.x_update_mode == "linearized":
        est.reset(cur.x)
    solver = con.solver
    L0 = augmented_lagrangian(problem, cur.x, cur.y, cur.lam, beta, cur.r)
    P0 = potential(cur, params, L0, con)
    trace, probes = [], []
    pick, pick_k = cur, 0
    t0 = time.perf_counter()
    budget = config.grad_budget
    inner_rng = out_rng
    for k in range(config.outer_T):
        if budget is not None and est.grad_calls >= budget:
            break
        w1 = config.w1_at(k)
        y = y_update(cur.y, cur.x, cur.lam, con, problem.regularizer, beta, config.w2)
        bias = None
        if config.x_update_mode == "linearized":
            grad = est.estimate(cur.x)
            x = x_update_linearized(cur, y, grad, con, beta, w1, solver)
        else:
            ip = build_inner_problem(problem, cur.x, y, cur.lam, beta, w1)
            probe = config.probe_interval and (k + 1) % config.probe_interval == 0
            res = solve_x_subproblem(ip, config.inner, est, inner_rng, budget=budget,
                                     probe_bias=bool(probe))
            x, bias = res.x, res.bias
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise DivergenceError(k + 1, "non-finite iterate")
        if np.linalg.norm(x) > 1e8:
            raise DivergenceError(k + 1, "||x|| exceeded 1e8")
        r = con.residual(x, y)
        lam = dual_update(cur.lam, r, s, beta)
        nxt = Iterate(x, y, lam, x - cur.x, y - cur.y, lam - cur.lam, r)
        Lb = augmented_lagrangian(problem, x, y, lam, beta, r)
        rec = TraceRecord(
            k=k + 1, loss_F=float(problem.objective(x, y)), aug_lagrangian=Lb,
            potential_P=potential(nxt, params, Lb, con),
            residual_norm=float(np.linalg.norm(r)),
            dx_norm=float(np.linalg.norm(nxt.d_x)), dy_norm=float(np.linalg.norm(nxt.d_y)),
            dlam_norm=float(np.linalg.norm(nxt.d_lam)), grad_calls=int(est.grad_calls),
            wall_time_s=(time.perf_counter() - t0) if config.record_wall_time else None)
        if config.probe_interval and (k + 1) % config.probe_interval == 0:
            rep = stationarity(nxt, problem)
            rec.stat_x, rec.stat_y, rec.stat_r = rep.stat_x, rep.stat_y, rep.stat_r
            probes.append(dict(
                k=k + 1, stat_x=rep.stat_x, stat_y=rep.stat_y, stat_r=rep.stat_r,
                xi_x=xi_x_residual(x, y, cur.lam, problem, beta, w1, cur.x),
                bias_measured=bias[0] if bias else None,
                bias_predicted=bias[1] if bias else None))
        trace.append(rec)
        # reservoir draw of a uniformly random iterate among 1..k+1
        if out_rng.integers(k + 1) == 0:
            pick, pick_k = nxt, k + 1
        cur = nxt
        if callback is not None:
            callback(k + 1, cur, rec)
    return RunResult(final=cur, random_iterate=pick, random_index=pick_k, trace=trace,
                     probes=probes, initial_potential=P0, params=params,
                     grad_calls=int(est.grad_calls), warnings=notes)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace_csv(records, path, columns=TRACE_COLUMNS):
    """Write rows with the given columns; ``None`` becomes an empty field."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for rec in records:
            get = rec.get if isinstance(rec, dict) else (lambda c, r=rec: getattr(r, c))
            w.writerow([_fmt(get(c)) for c in columns])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        vals = {}
        for c in TRACE_COLUMNS:
            v = row.get(c, "")
            if v == "":
                vals[c] = None
            elif c in ("k", "grad_calls"):
                vals[c] = int(v)
            else:
                vals[c] = float(v)
        out.append(TraceRecord(**vals))
    return out

"""Accelerated hybrid stochastic solver for the ADMM x-subproblem.

The subproblem at outer iterate ``x_k`` is ``Phi(x) = h(x) + phi(x)`` with

* ``h(x) = f(x) + (beta w1 / 2) ||x - x_k||^2`` (smooth, sampled), and
* ``phi(x) = <p, x> + (beta / 2) ||x - x_k||^2_{A^T A}`` (quadratic, exact),

where ``p = -A^T [lambda_k - beta (A x_k + B y_{k+1} - b)]``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "InnerProblem", "InnerSchedule", "InnerResult", "beta_schedule",
    "g_of_alpha", "gamma_schedule", "build_inner_problem", "inner_prox_step",
    "solve_x_subproblem",
]


def beta_schedule(t, tau_momentum):
    """Momentum weight ``max(2 / (t + 1), tau)``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return max(2.0 / (t + 1), tau_momentum)


def g_of_alpha(alpha, Lambda, l3):
    """``alpha * Lambda * sqrt(2 l3 / (1 - alpha^2))``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha={alpha} must lie in [0, 1)")
    return alpha * Lambda * math.sqrt(2.0 * l3 / (1.0 - alpha * alpha))


def gamma_schedule(t, beta_t, mu, g_alpha, tau_momentum):
    """Prox weight ``beta_t ((mu + 2 g) / (2 tau - tau^2) - mu) (t + 1) / t`` for ``t >= 1``."""
    if t < 1:
        raise ValueError("gamma schedule is defined for t >= 1")
    denom = 2.0 * tau_momentum - tau_momentum ** 2
    if denom == 0:
        raise ValueError("tau (2 - tau) must be nonzero")
    return beta_t * ((mu + 2.0 * g_alpha) / denom - mu) * (t + 1) / t


@dataclass
class InnerSchedule:
    """Constants of the inner loop.

    ``alpha`` follows ``1 - c1 / sqrt(M (m + 1))``; it sets both the
    estimator weight and ``g(alpha)`` unless ``estimator_alpha`` overrides
    the former. ``accelerate=False`` pins ``beta_t`` to 1.
    """

    m: int = 10
    M: int = 1
    c1: float = 1.0
    tau_momentum: float = 0.8
    l3: float = 8.0
    accelerate: bool = True
    estimator_alpha: Optional[float] = None
    pair_batch: int = 1
    output: str = "last"

    def __post_init__(self):
        if self.m < 0 or self.M < 1:
            raise ValueError("need m >= 0 and M >= 1")
        if not 0 < self.tau_momentum < 1:
            raise ValueError("tau_momentum must lie in (0, 1)")
        if not 0 < self.c1 < math.sqrt(self.M * (self.m + 1)):
            raise ValueError("c1 must lie in (0, sqrt(M (m + 1)))")
        if self.output not in ("last", "random"):
            raise ValueError("output must be 'last' or 'random'")

    @property
    def alpha(self):
        return 1.0 - self.c1 / math.sqrt(self.M * (self.m + 1))

    @property
    def hybrid_alpha(self):
        return self.alpha if self.estimator_alpha is None else self.estimator_alpha

    def beta_t(self, t):
        return beta_schedule(t, self.tau_momentum) if self.accelerate else 1.0

    def gammas(self, mu, Lambda):
        """``gamma_t`` for ``t = 0..m``; ``gamma_0`` reuses the ``t = 1`` value."""
        g = g_of_alpha(self.alpha, Lambda, self.l3)
        out = [gamma_schedule(t, self.beta_t(t), mu, g, self.tau_momentum)
               for t in range(1, self.m + 1)]
        first = gamma_schedule(1, self.beta_t(1), mu, g, self.tau_momentum)
        return np.array([first] + out)


@dataclass
class InnerProblem:
    loss: object
    solver: object  # GramSolver for A^T A
    anchor: np.ndarray
    p: np.ndarray
    beta: float
    w1: float
    mu: float = 0.0
    Lambda: Optional[float] = None

    def __post_init__(self):
        floor = self.loss.lipschitz + self.beta * self.w1
        if self.Lambda is None:
            self.Lambda = floor
        if self.mu > self.Lambda:
            raise ValueError("mu must not exceed Lambda")

    def h_shift(self, x):
        return self.beta * self.w1 * (x - self.anchor)

    def phi_grad(self, x):
        return self.p + self.beta * (self.solver.gram @ (x - self.anchor))

    def grad_h(self, x):
        return self.loss.grad(x) + self.h_shift(x)

    def grad_Phi(self, x):
        return self.grad_h(x) + self.phi_grad(x)


def build_inner_problem(problem, x_k, y_next, lambda_k, beta, w1, mu=0.0, Lambda=None):
    con = problem.constraint
    p = -con.At(lambda_k - beta * con.residual(x_k, y_next))
    return InnerProblem(problem.loss, con.solver, np.array(x_k, dtype=float), p,
                        beta, w1, mu, Lambda)


def inner_prox_step(v_tilde, x_breve, gamma, ip):
    """Minimizer of ``<v, x> + (gamma/2) ||x - x_breve||^2 + phi(x)``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    rhs = gamma * x_breve - v_tilde - ip.p + ip.beta * (ip.solver.gram @ ip.anchor)
    return ip.solver.solve(gamma, ip.beta, rhs)


@dataclass
class InnerResult:
    x: np.ndarray
    steps: int
    history: list = field(default_factory=list)
    bias: Optional[tuple] = None


class InnerDivergence(FloatingPointError):
    pass


def solve_x_subproblem(ip, schedule, estimator, rng=None, budget=None,
                       keep_history=False, probe_bias=False):
    """Run the accelerated hybrid loop ``t = 0..m`` on the subproblem ``ip``.

    Parameters
    ----------
    ip : InnerProblem
    schedule : InnerSchedule
    estimator : HybridEstimator
        Its ``alpha`` is overwritten by ``schedule.hybrid_alpha``.
    rng : numpy Generator, optional
        Draws the output index when ``schedule.output == "random"``.
    budget : int, optional
        Stop early once ``estimator.grad_calls`` reaches this value.
    keep_history : bool
        Record ``t, beta_t, gamma, x_hat, x_breve, x_breve_next, x, x_next, v_f`` (the
        estimate for ``f``) and ``v_tilde`` (the estimate for ``h``) per step.
    probe_bias : bool
        At the last step with ``t >= 1`` compute the exact conditional bias of
        the estimate and its predicted value from the previous error.

    Returns
    -------
    InnerResult
    """
    estimator.alpha = schedule.hybrid_alpha
    gammas = schedule.gammas(ip.mu, ip.Lambda)
    xk = ip.anchor
    x_breve = xk.copy()
    x = xk.copy()
    v_f = estimator.reset(xk)
    hats = []
    history = []
    prev = v_tilde = None
    steps = 0
    for t in range(schedule.m + 1):
        bt = schedule.beta_t(t)
        x_hat = bt * x_breve + (1 - bt) * x
        if t > 0:
            prev = (v_tilde, hats[-1])
            v_f = estimator.estimate(x_hat)
        v_tilde = v_f + ip.h_shift(x_hat)
        x_breve_next = inner_prox_step(v_tilde, x_breve, gammas[t], ip)
        x_next = bt * x_breve_next + (1 - bt) * x
        if not np.all(np.isfinite(x_next)):
            raise InnerDivergence(f"non-finite inner iterate at t={t}")
        if keep_history:
            history.append(dict(t=t, beta_t=bt, gamma=gammas[t], x_hat=x_hat,
                                x_breve=x_breve, x_breve_next=x_breve_next,
                                x=x, x_next=x_next, v_f=v_f, v_tilde=v_tilde))
        hats.append(x_hat)
        x_breve, x = x_breve_next, x_next
        steps += 1
        if budget is not None and estimator.grad_calls >= budget:
            break
    bias = None
    if probe_bias and prev is not None:
        bias = _bias_at(ip, estimator.alpha, prev[0], prev[1], hats[-1])
    if schedule.output == "random":
        rng = rng if rng is not None else np.random.default_rng()
        out = hats[int(rng.integers(len(hats)))]
    else:
        out = x
    return InnerResult(out, steps, history, bias)


def _bias_at(ip, alpha, v_prev, x_prev, x_cur):
    # E[v_t | past] = a v_{t-1} + a (grad h(x_t) - grad h(x_{t-1})) + (1 - a) grad h(x_t)
    g_prev = ip.grad_h(x_prev)
    g_cur = ip.grad_h(x_cur)
    mean = alpha * v_prev + alpha * (g_cur - g_prev) + (1 - alpha) * g_cur
    return (float(np.linalg.norm(mean - g_cur)),
            float(alpha * np.linalg.norm(v_prev - g_prev)))

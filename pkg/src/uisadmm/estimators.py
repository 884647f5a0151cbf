"""Stochastic gradient estimators for a finite-sum loss.

Every estimator owns a seeded ``numpy.random.Generator`` and counts
per-sample gradient evaluations in ``grad_calls``. Batches are drawn
uniformly without replacement; a batch equal to the whole sample set is
taken in index order so that it reproduces the full gradient exactly.
"""

import math

import numpy as np

__all__ = [
    "EstimatorError", "Estimator", "SGDEstimator", "SVRGEstimator",
    "SpiderEstimator", "HybridEstimator", "make_estimator",
]


class EstimatorError(RuntimeError):
    pass


class Estimator:
    kind = None

    def __init__(self, loss, batch, seed=0):
        n = loss.n_samples
        if not 1 <= batch <= n:
            raise ValueError(f"batch size {batch} outside [1, {n}]")
        self.loss = loss
        self.batch = int(batch)
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.grad_calls = 0

    @property
    def n_samples(self):
        return self.loss.n_samples

    def draw(self, size=None):
        size = self.batch if size is None else size
        if size == self.n_samples:
            return None
        return self.rng.choice(self.n_samples, size=size, replace=False)

    def _grad(self, x, idx):
        self.grad_calls += self.n_samples if idx is None else len(idx)
        return self.loss.grad(x, idx)

    def full_grad(self, x):
        return self._grad(x, None)

    def reset(self, x):
        """Prepare for a fresh sequence of queries starting at ``x``."""

    def estimate(self, x):
        raise NotImplementedError


class SGDEstimator(Estimator):
    """Minibatch average of sample gradients."""

    kind = "SGD"

    def estimate(self, x):
        return self._grad(x, self.draw())


class SVRGEstimator(Estimator):
    """Minibatch gradient corrected by a snapshot full gradient.

    The snapshot moves to the query point every ``period`` calls, where the
    default period is ``ceil(N / batch)``.
    """

    kind = "SVRG"

    def __init__(self, loss, batch, seed=0, period=None):
        super().__init__(loss, batch, seed)
        self.period = period or math.ceil(self.n_samples / self.batch)
        self.snapshot_x = None
        self.snapshot_full_grad = None
        self.calls = 0
        self.refreshes = []

    def reset(self, x):
        self.snapshot_x = np.array(x, dtype=float)
        self.snapshot_full_grad = self.full_grad(self.snapshot_x)
        self.calls = 0

    def estimate(self, x):
        if self.snapshot_x is None:
            raise EstimatorError("SVRG snapshot not initialized; call reset(x) first")
        if self.calls > 0 and self.calls % self.period == 0:
            self.refreshes.append(self.calls)
            self.reset_snapshot(x)
        self.calls += 1
        idx = self.draw()
        g = self._grad(x, idx)
        g0 = self._grad(self.snapshot_x, idx)
        return g - g0 + self.snapshot_full_grad

    def reset_snapshot(self, x):
        self.snapshot_x = np.array(x, dtype=float)
        self.snapshot_full_grad = self.full_grad(self.snapshot_x)


class SpiderEstimator(Estimator):
    """Recursive difference estimator restarted with a full gradient every ``q`` calls."""

    kind = "SPIDER"

    def __init__(self, loss, batch, seed=0, q=None):
        super().__init__(loss, batch, seed)
        self.q = q or math.ceil(self.n_samples / self.batch)
        if self.q < 1:
            raise ValueError("restart period q must be >= 1")
        self.calls = 0
        self.carried_v = None
        self.prev_point = None

    def reset(self, x):
        self.calls = 0
        self.carried_v = None
        self.prev_point = None

    def estimate(self, x):
        x = np.array(x, dtype=float)
        if self.calls % self.q == 0:
            v = self.full_grad(x)
        else:
            idx = self.draw()
            v = self._grad(x, idx) - self._grad(self.prev_point, idx) + self.carried_v
        self.calls += 1
        self.carried_v, self.prev_point = v, x
        return v


class HybridEstimator(Estimator):
    """Convex combination of a recursive (SARAH) term and a fresh unbiased term.

    ``v_t = a v_{t-1} + a (g(x_t; xi) - g(x_{t-1}; xi)) + (1 - a) g(x_t; zeta)``.
    Each call draws ``xi`` then ``zeta``, both of size ``pair_batch``,
    independently of each other and of earlier calls; the stream layout does
    not depend on ``a``. Gradients with zero weight are not evaluated.

    Parameters
    ----------
    loss : finite-sum loss
    batch : int
        Size ``M`` of the batch that initializes ``v_0`` in :meth:`reset`.
    alpha : float in [0, 1]
    pair_batch : int
        Size of each of the two samples drawn per call.
    """

    kind = "HYBRID"

    def __init__(self, loss, batch, seed=0, alpha=0.5, pair_batch=1):
        super().__init__(loss, batch, seed)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha={alpha} outside [0, 1]")
        if not 1 <= pair_batch <= self.n_samples:
            raise ValueError("pair_batch outside [1, N]")
        self.alpha = float(alpha)
        self.pair_batch = int(pair_batch)
        self.carried_v = None
        self.prev_point = None
        self.last_pair = None

    def reset(self, x):
        """``v_0`` as the minibatch gradient at ``x`` with batch ``M``."""
        self.prev_point = np.array(x, dtype=float)
        self.carried_v = self._grad(self.prev_point, self.draw())
        return self.carried_v

    def estimate(self, x):
        if self.carried_v is None:
            raise EstimatorError("hybrid estimator not initialized; call reset(x) first")
        x = np.array(x, dtype=float)
        a = self.alpha
        xi = self.draw(self.pair_batch)
        zeta = self.draw(self.pair_batch)
        self.last_pair = (xi, zeta)
        if a > 0:
            v = a * self.carried_v + a * (self._grad(x, xi) - self._grad(self.prev_point, xi))
            if a < 1:
                v = v + (1 - a) * self._grad(x, zeta)
        else:
            v = (1 - a) * self._grad(x, zeta)
        self.carried_v, self.prev_point = v, x
        return v


def make_estimator(kind, loss, batch, seed=0, **opts):
    kinds = {"SGD": SGDEstimator, "SVRG": SVRGEstimator,
             "SPIDER": SpiderEstimator, "HYBRID": HybridEstimator}
    try:
        cls = kinds[kind.upper()]
    except KeyError:
        raise ValueError(f"unknown estimator {kind!r}") from None
    return cls(loss, batch, seed, **opts)

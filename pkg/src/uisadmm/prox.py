"""Proximal maps for the nonsmooth term and the ADMM y-update."""

import numpy as np

__all__ = [
    "ProxConfigError", "scad_penalty", "scad_derivative", "scad_prox",
    "soft_threshold", "regularizer_value", "prox_center", "y_update",
    "subgrad_distance",
]


class ProxConfigError(ValueError):
    pass


def scad_penalty(theta, kappa, c):
    """SCAD spline with knots ``kappa`` and ``c * kappa``; accepts arrays of ``theta >= 0``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValueError("scad_penalty expects nonnegative theta")
    mid = (-theta ** 2 + 2 * c * kappa * theta - kappa ** 2) / (2 * (c - 1))
    out = np.where(theta <= kappa, kappa * theta,
                   np.where(theta <= c * kappa, mid, (c + 1) * kappa ** 2 / 2))
    return out if out.ndim else float(out)


def scad_derivative(theta, kappa, c):
    theta = np.asarray(theta, dtype=float)
    return np.where(theta <= kappa, kappa,
                    np.where(theta <= c * kappa, (c * kappa - theta) / (c - 1), 0.0))


def scad_prox(q, v, kappa, c):
    """Minimizer of ``sum p(|y_i|) + ||y - q||^2 / (2 v)`` for the SCAD spline ``p``.

    Closed form, valid while ``1 + v <= c`` (the objective is then convex in
    each coordinate). ``v`` may be a scalar or broadcast against ``q``.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ProxConfigError("prox weight v must be positive")
    if np.any(1 + v > c):
        raise ProxConfigError(
            f"SCAD prox requires 1 + v <= c, got v={np.max(v)!r}, c={c!r}")
    a = np.abs(q)
    sgn = np.sign(q)
    soft = sgn * np.maximum(a - kappa * v, 0.0)
    # written as |q| minus a nonnegative shrink so rounding never enlarges |q|;
    # at 1 + v == c the middle interval is empty and its formula is unused
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = sgn * (a - v * (c * kappa - a) / (c - 1 - v))
    return np.where(a <= (1 + v) * kappa, soft, np.where(a < c * kappa, mid, q))


def soft_threshold(q, v, lambda1):
    """``sign(q) * max(|q| - lambda1 * v, 0)``, the prox of ``lambda1 * ||.||_1``."""
    if lambda1 < 0:
        raise ValueError("lambda1 must be nonnegative")
    q = np.asarray(q, dtype=float)
    return np.sign(q) * np.maximum(np.abs(q) - lambda1 * np.asarray(v), 0.0)


def regularizer_value(reg, y):
    y = np.asarray(y, dtype=float)
    if reg.kind == "none" or reg.lambda1 == 0:
        return 0.0
    if reg.kind == "L1":
        return float(reg.lambda1 * np.abs(y).sum())
    return float(reg.lambda1 * np.sum(scad_penalty(np.abs(y), reg.scad_kappa, reg.scad_c)))


def prox_center(y_k, x_k, lambda_k, constraint, beta, w2):
    """Center ``q`` and weight ``v`` that turn the y-subproblem into one prox.

    For diagonal ``B = diag(d)`` the quadratic part of the y-subproblem is
    ``(beta/2) sum (d_i y_i - c_i)^2 + (beta w2/2) ||y - y_k||^2`` with
    ``c = b + lambda/beta - A x``.
    """
    d = constraint.B_diag
    c = constraint.b + lambda_k / beta - constraint.A @ x_k
    denom = d * d + w2
    q = (d * c + w2 * y_k) / denom
    v = 1.0 / (beta * denom)
    if np.all(d == d[0]):
        v = float(v[0])
    return q, v


def y_update(y_k, x_k, lambda_k, constraint, reg, beta, w2=0.0):
    """Exact minimizer of ``L_beta(x_k, ., lambda_k) + (beta w2 / 2) ||. - y_k||^2``."""
    if beta <= 0 or w2 < 0:
        raise ValueError("need beta > 0 and w2 >= 0")
    q, v = prox_center(y_k, x_k, lambda_k, constraint, beta, w2)
    if reg.kind == "none" or reg.lambda1 == 0:
        return q
    if reg.kind == "L1":
        return soft_threshold(q, v, reg.lambda1)
    return scad_prox(q, reg.lambda1 * np.asarray(v), reg.scad_kappa, reg.scad_c)


def subgrad_distance(reg, y, z):
    """Euclidean distance from ``z`` to the Clarke subdifferential of ``g`` at ``y``."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if reg.kind == "none" or reg.lambda1 == 0:
        return float(np.linalg.norm(z))
    lam = reg.lambda1
    if reg.kind == "L1":
        at_zero = np.maximum(np.abs(z) - lam, 0.0)
        away = np.abs(z - lam * np.sign(y))
    else:
        kappa, c = reg.scad_kappa, reg.scad_c
        at_zero = np.maximum(np.abs(z) - lam * kappa, 0.0)
        away = np.abs(z - lam * scad_derivative(np.abs(y), kappa, c) * np.sign(y))
    return float(np.linalg.norm(np.where(y == 0, at_zero, away)))

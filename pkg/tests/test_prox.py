import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from oracles import grid_ternary_argmin, prox_objective, scad_value
from uisadmm.problem import ConstraintSystem, RegularizerSpec, build_constraint
from uisadmm.prox import (
    ProxConfigError, prox_center, regularizer_value, scad_derivative, scad_penalty,
    scad_prox, soft_threshold, subgrad_distance, y_update,
)


# penalty ------------------------------------------------------------------

def test_scad_penalty_at_zero():
    assert scad_penalty(0.0, 0.1, 3.7) == 0.0


def test_scad_penalty_flat_branch():
    # (c + 1) kappa^2 / 2 with c = 3.7, kappa = 0.1
    assert scad_penalty(1.0, 0.1, 3.7) == pytest.approx(0.0235, abs=1e-15)


@pytest.mark.parametrize("kappa,c", [(0.1, 3.7), (1.0, 2.5), (0.3, 10.0)])
def test_scad_penalty_continuous_at_knots(kappa, c):
    for knot in (kappa, c * kappa):
        left = scad_penalty(knot * (1 - 1e-13), kappa, c)
        right = scad_penalty(knot * (1 + 1e-13), kappa, c)
        assert abs(left - right) <= 1e-12
    assert scad_penalty(kappa, kappa, c) == pytest.approx(kappa ** 2, abs=1e-12)


def test_scad_penalty_matches_reference_spline():
    theta = np.linspace(0, 2, 4001)
    assert np.allclose(scad_penalty(theta, 0.2, 3.0), scad_value(theta, 0.2, 3.0),
                       atol=1e-15)


def test_scad_penalty_rejects_negative():
    with pytest.raises(ValueError):
        scad_penalty(-0.1, 0.1, 3.7)


def test_scad_derivative_against_finite_differences():
    theta = np.array([0.05, 0.15, 0.3, 0.5, 2.0])
    h = 1e-7
    fd = (scad_penalty(theta + h, 0.1, 3.7) - scad_penalty(theta - h, 0.1, 3.7)) / (2 * h)
    assert np.allclose(scad_derivative(theta, 0.1, 3.7), fd, atol=1e-7)


# SCAD prox ----------------------------------------------------------------

def test_scad_prox_zero():
    assert np.array_equal(scad_prox(np.zeros(3), 1.0, 0.1, 3.7), np.zeros(3))


def test_scad_prox_soft_branch_hand_value():
    # |q| = 0.15 <= (1 + v) kappa = 0.2, so soft-threshold by kappa v = 0.1
    assert scad_prox(np.array([0.15]), 1.0, 0.1, 3.7)[0] == pytest.approx(0.05, abs=1e-15)
    assert scad_prox(np.array([-0.15]), 1.0, 0.1, 3.7)[0] == pytest.approx(-0.05, abs=1e-15)


def test_scad_prox_branches_by_hand():
    # middle branch: ((c-1) q - c kappa v)/(c-1-v) with c=3.7, kappa=0.1, v=1, q=0.3
    assert scad_prox(np.array([0.3]), 1.0, 0.1, 3.7)[0] == pytest.approx(
        (2.7 * 0.3 - 0.37) / 1.7, abs=1e-15)
    # identity branch beyond c kappa
    assert scad_prox(np.array([0.5]), 1.0, 0.1, 3.7)[0] == 0.5


def test_scad_prox_tie_uses_left_branch():
    q = np.array([0.2])  # exactly (1 + v) kappa
    assert scad_prox(q, 1.0, 0.1, 3.7)[0] == pytest.approx(0.1, abs=1e-15)


def test_scad_prox_invalid_weight():
    with pytest.raises(ProxConfigError, match="1 \\+ v <= c"):
        scad_prox(np.array([1.0]), 3.0, 0.1, 3.7)
    with pytest.raises(ProxConfigError):
        scad_prox(np.array([1.0]), 0.0, 0.1, 3.7)


def _random_query(rng):
    c = rng.uniform(2.05, 6.0)
    v = rng.uniform(0.01, c - 1.0)
    kappa = rng.uniform(0.05, 1.0)
    q = rng.uniform(-1.5 * c * kappa, 1.5 * c * kappa)
    return q, v, kappa, c


def test_scad_prox_against_grid_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        q, v, kappa, c = _random_query(rng)
        pen = lambda y: scad_value(y, kappa, c)
        y = scad_prox(np.array([q]), v, kappa, c)[0]
        y_ref = grid_ternary_argmin(q, v, pen)
        got = prox_objective(np.array([y]), q, v, pen)[0]
        ref = prox_objective(np.array([y_ref]), q, v, pen)[0]
        assert got <= ref + 1e-8


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(0.01, 1.0), st.floats(2.1, 8.0), st.floats(0.0, 1.0))
@example(2.5, 1.0, 2.5, 0.75)
def test_scad_prox_odd_and_shrinking(q, kappa, c, frac):
    v = 0.01 + frac * (c - 1.01)
    p = scad_prox(np.array([q, -q]), v, kappa, c)
    assert p[0] == -p[1]
    assert abs(p[0]) <= abs(q)


def test_scad_prox_elementwise_weights():
    q = np.array([0.15, 0.3, 0.9])
    v = np.array([1.0, 0.5, 2.0])
    out = scad_prox(q, v, 0.1, 3.7)
    for i in range(3):
        assert out[i] == scad_prox(q[i:i + 1], v[i], 0.1, 3.7)[0]


# soft threshold -----------------------------------------------------------

def test_soft_threshold_identity_at_zero_weight():
    q = np.array([1.5, -0.2, 0.0])
    assert np.array_equal(soft_threshold(q, 1.0, 0.0), q)


def test_soft_threshold_hand_value():
    assert np.array_equal(soft_threshold(np.array([3.0, -1.0]), 1.0, 2.0), [1.0, 0.0])


def test_soft_threshold_against_grid_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        q, v, lam = rng.uniform(-3, 3), rng.uniform(0.05, 2), rng.uniform(0, 2)
        pen = lambda y: lam * np.abs(y)
        y = soft_threshold(np.array([q]), v, lam)[0]
        y_ref = grid_ternary_argmin(q, v, pen)
        assert (prox_objective(np.array([y]), q, v, pen)[0]
                <= prox_objective(np.array([y_ref]), q, v, pen)[0] + 1e-8)


def test_soft_threshold_negative_weight():
    with pytest.raises(ValueError):
        soft_threshold(np.ones(2), 1.0, -1.0)


def test_regularizer_value():
    y = np.array([1.0, -0.05, 0.0])
    assert regularizer_value(RegularizerSpec("L1", 2.0), y) == pytest.approx(2.1)
    assert regularizer_value(RegularizerSpec("none"), y) == 0.0
    reg = RegularizerSpec("SCAD", 3.0, 3.7, 0.1)
    assert regularizer_value(reg, y) == pytest.approx(3.0 * (0.0235 + 0.005), abs=1e-14)


# y-update -----------------------------------------------------------------

def _state(rng, m=6, n=4):
    A = rng.standard_normal((m, n))
    con = ConstraintSystem(A)
    return (con, rng.standard_normal(m), rng.standard_normal(n), rng.standard_normal(m))


def _y_objective(y, x, lam, con, reg, beta, w2, y_k):
    r = con.residual(x, y)
    return (regularizer_value(reg, y) - lam @ r + beta / 2 * r @ r
            + beta * w2 / 2 * np.sum((y - y_k) ** 2))


def test_prox_center_matches_completed_square():
    rng = np.random.default_rng(2)
    con, y_k, x, lam = _state(rng)
    beta, w2 = 1.7, 0.4
    q, v = prox_center(y_k, x, lam, con, beta, w2)
    assert np.allclose(q, (con.A @ x - lam / beta + w2 * y_k) / (1 + w2), atol=1e-14)
    assert v == pytest.approx(1 / (beta * (1 + w2)))


def test_y_update_no_regularizer_is_center():
    rng = np.random.default_rng(3)
    con, y_k, x, lam = _state(rng)
    q, _ = prox_center(y_k, x, lam, con, 2.0, 0.5)
    assert np.array_equal(y_update(y_k, x, lam, con, RegularizerSpec(), 2.0, 0.5), q)


def test_y_update_l1_without_proximal_term():
    rng = np.random.default_rng(4)
    con, y_k, x, lam = _state(rng)
    beta = 3.0
    y = y_update(y_k, x, lam, con, RegularizerSpec("L1", 0.7), beta, 0.0)
    assert np.allclose(y, soft_threshold(con.A @ x - lam / beta, 1 / beta, 0.7), atol=1e-14)


@pytest.mark.parametrize("kind", ["L1", "SCAD", "none"])
def test_y_update_descent(kind):
    rng = np.random.default_rng(5)
    for _ in range(100):
        con, y_k, x, lam = _state(rng)
        beta, w2 = rng.uniform(0.5, 5), rng.uniform(0, 2)
        reg = RegularizerSpec(kind, rng.uniform(0, 1), 3.7, 0.1)
        y = y_update(y_k, x, lam, con, reg, beta, w2)
        new = _y_objective(y, x, lam, con, reg, beta, 0.0, y_k)
        old = _y_objective(y_k, x, lam, con, reg, beta, 0.0, y_k)
        assert new + beta * w2 / 2 * np.sum((y - y_k) ** 2) <= old + 1e-9


@pytest.mark.parametrize("kind", ["L1", "SCAD"])
def test_y_update_is_exact_coordinate_minimizer(kind):
    rng = np.random.default_rng(6)
    con, y_k, x, lam = _state(rng, m=3, n=3)
    beta, w2 = 1.3, 0.2
    reg = RegularizerSpec(kind, 0.8, 3.7, 0.3)
    y = y_update(y_k, x, lam, con, reg, beta, w2)
    base = _y_objective(y, x, lam, con, reg, beta, w2, y_k)
    for i in range(3):
        for delta in np.linspace(-0.5, 0.5, 201):
            z = y.copy()
            z[i] += delta
            assert _y_objective(z, x, lam, con, reg, beta, w2, y_k) >= base - 1e-12


def test_y_update_fixed_point_at_stationarity():
    # choose y, then lam so that 0 in dg(y) + (A x - y - lam/beta)(-beta)
    rng = np.random.default_rng(7)
    con = build_constraint("identity", 5)
    x = rng.standard_normal(5)
    y = np.array([0.0, 0.8, -1.3, 0.0, 0.25])
    lam1, beta = 0.4, 2.0
    sub = np.where(y == 0, rng.uniform(-lam1, lam1, 5), lam1 * np.sign(y))
    # stationarity: sub = beta (A x - y) - lam  =>  lam = beta (A x - y) - sub
    lam = beta * (x - y) - sub
    out = y_update(y, x, lam, con, RegularizerSpec("L1", lam1), beta, w2=0.7)
    assert np.allclose(out, y, atol=1e-10)


def test_y_update_scad_invalid_weight_propagates():
    con = build_constraint("identity", 2)
    reg = RegularizerSpec("SCAD", 10.0, 3.7, 0.1)
    with pytest.raises(ProxConfigError):
        y_update(np.zeros(2), np.ones(2), np.zeros(2), con, reg, beta=1.0, w2=0.0)


def test_y_update_argument_checks():
    con = build_constraint("identity", 2)
    with pytest.raises(ValueError):
        y_update(np.zeros(2), np.ones(2), np.zeros(2), con, RegularizerSpec(), 0.0)


def test_y_update_diagonal_b():
    # B = diag(d): minimize (beta/2)(d y - c)^2 per coordinate without g
    A = np.eye(3)
    d = np.array([-2.0, 0.5, 1.0])
    con = ConstraintSystem(A, B_diag=d, b=np.array([1.0, 0.0, -1.0]))
    x, lam, beta = np.array([0.3, -0.2, 1.0]), np.array([0.1, 0.2, 0.3]), 2.0
    y = y_update(np.zeros(3), x, lam, con, RegularizerSpec(), beta, 0.0)
    # the residual equals lam / beta at the minimizer
    assert np.allclose(con.residual(x, y), lam / beta, atol=1e-14)


# subgradient distance -----------------------------------------------------

def test_subgrad_distance_none():
    z = np.array([3.0, 4.0])
    assert subgrad_distance(RegularizerSpec(), np.ones(2), z) == 5.0


def test_subgrad_distance_l1_inside_interval():
    reg = RegularizerSpec("L1", 2.0)
    assert subgrad_distance(reg, np.array([0.0]), np.array([1.0])) == 0.0
    assert subgrad_distance(reg, np.array([0.0]), np.array([3.0])) == 1.0
    assert subgrad_distance(reg, np.array([-1.0]), np.array([0.0])) == 2.0


def _sampled_scad_distance(lam, kappa, c, y, z):
    # dense sampling of the Clarke set: at zero the hull [-lam kappa, lam kappa],
    # elsewhere the numerical derivative of lam * p(|y|)
    out = 0.0
    for yi, zi in zip(y, z):
        if yi == 0:
            cand = np.linspace(-lam * kappa, lam * kappa, 200001)
        else:
            h = 1e-7
            f = lambda t: lam * scad_value(np.array([t]), kappa, c)[0]
            cand = np.array([(f(yi + h) - f(yi - h)) / (2 * h)])
        out += np.min(np.abs(zi - cand)) ** 2
    return np.sqrt(out)


def test_subgrad_distance_scad_against_sampling():
    rng = np.random.default_rng(8)
    lam, kappa, c = 1.5, 0.2, 3.7
    reg = RegularizerSpec("SCAD", lam, c, kappa)
    for _ in range(20):
        y = rng.choice([0.0, 0.1, -0.5, 0.9, 2.0], size=4) * rng.uniform(0.5, 1.5, 4)
        y[rng.random(4) < 0.3] = 0.0
        z = rng.uniform(-0.6, 0.6, 4)
        assert subgrad_distance(reg, y, z) == pytest.approx(
            _sampled_scad_distance(lam, kappa, c, y, z), abs=1e-6)

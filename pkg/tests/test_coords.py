import numpy as np
import pytest
from scipy.linalg import sqrtm

from pharmonic import coords, gallery
from pharmonic import geometry as geo
from pharmonic.errors import BoundaryNode, ScheduleExhausted, SignalBelowNoise
from pharmonic.grid import DiscreteScalarField, make_ball
from pharmonic.solver import rescale_from_unit_ball, solve_dirichlet
from pharmonic.aop import make_aoperator


def rot(theta):
    return geo.rotation_matrix(2, theta)


def affine_chart(ball, S, x0=None):
    x0 = ball.center if x0 is None else x0
    return [DiscreteScalarField(ball, (ball.points - x0) @ S[k]) for k in range(len(S))]


# ---------------------------------------------------------------------------
# requests


def test_request_validation():
    g = geo.flat(2)
    with pytest.raises(ValueError):
        coords.ChartRequest(g, 2.0, np.zeros(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        coords.ChartRequest(g, 2.0, np.zeros(2), np.eye(2), eps_schedule=(0.1, 0.2))
    with pytest.raises(ValueError):
        coords.ChartRequest(g, 2.0, np.zeros(3), np.eye(2))


# ---------------------------------------------------------------------------
# jacobian_at_center


def test_jacobian_identity_and_affine():
    b = make_ball(2, 1.0, h=0.1)
    np.testing.assert_allclose(coords.jacobian_at_center(affine_chart(b, np.eye(2))), np.eye(2))
    S = np.array([[2.0, -1.0], [0.5, 3.0]])
    np.testing.assert_allclose(coords.jacobian_at_center(affine_chart(b, S)), S, atol=1e-14)


def test_jacobian_needs_interior_centre():
    b = make_ball(2, 1.0, h=0.1, hole=0.3)
    with pytest.raises(BoundaryNode):
        coords.jacobian_at_center(affine_chart(b, np.eye(2)))


# ---------------------------------------------------------------------------
# build_chart


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
@pytest.mark.parametrize("S", [np.eye(2), rot(np.pi / 6)], ids=["I", "rot"])
def test_flat_chart_exact(p, S):
    res = coords.build_chart(coords.ChartRequest(geo.flat(2), p, np.array([0.1, -0.2]), S))
    assert res.jac_error <= 1e-10
    assert res.eps_used == coords.DEFAULT_SCHEDULE[0]
    assert max(res.residuals) <= 1e-10
    np.testing.assert_allclose(res.pulled_metric0, np.linalg.inv(S @ S.T), atol=1e-10)


def test_flat_chart_rotation_recovers_matrix():
    S = rot(np.pi / 6)
    res = coords.build_chart(coords.ChartRequest(geo.flat(2), 3.0, np.zeros(2), S,
                                                 christoffel=False))
    np.testing.assert_allclose(res.DU0, S, atol=1e-10)


def test_conformal_chart_and_pushforward():
    g = gallery.metric("conformal-exp", 2)
    res = coords.build_chart(coords.ChartRequest(g, 2.0, np.zeros(2), np.eye(2)))
    assert res.jac_error <= 1e-8
    gt = coords.pushforward_metric(g, res.U)
    y0 = np.array([[u.values[u.ball.center_index] for u in res.U]])
    m = gt(y0)[0]
    assert abs(m[0, 1]) <= 1e-2 * abs(m[0, 0])
    assert m[0, 0] == pytest.approx(m[1, 1], rel=1e-2)


def test_perturbed_normalisation():
    g = gallery.metric("bump-perturbed", 2)
    x0 = np.zeros(2)
    S = np.real(sqrtm(g(x0[None])[0]))
    res = coords.build_chart(coords.ChartRequest(g, 2.0, x0, S, christoffel=False))
    assert np.abs(res.pulled_metric0 - np.eye(2)).max() <= 0.05
    assert np.all(np.linalg.eigvalsh(res.pulled_metric0) > 0)


@pytest.mark.parametrize("name", ["bump-perturbed", "diagonal-poly", "conformal-bump"])
def test_jac_error_monotone_along_schedule(name):
    g = gallery.metric(name, 2)
    x0 = np.array([0.2, 0.1])
    res = coords.build_chart(coords.ChartRequest(g, 3.0, x0, np.eye(2),
                                                 eps_schedule=(0.4, 0.2, 0.1, 0.05),
                                                 jac_tol=1e-12, h_ratio=16, christoffel=False))
    errs = [h["jac_error"] for h in res.history]
    assert len(errs) == 4
    assert all(b <= a + 1e-10 for a, b in zip(errs, errs[1:]))


def test_schedule_exhausted():
    g = gallery.metric("bump-perturbed", 2)
    req = coords.ChartRequest(g, 2.0, np.zeros(2), np.eye(2), eps_schedule=(0.4, 0.2),
                              jac_tol=1e-14, h_ratio=16, christoffel=False)
    res = coords.build_chart(req)
    assert res.exhausted
    req.strict = True
    with pytest.raises(ScheduleExhausted) as info:
        coords.build_chart(req)
    assert info.value.result.jac_error == res.jac_error


def test_parallel_solves_match(monkeypatch):
    g = gallery.metric("bump-perturbed", 2)
    req = coords.ChartRequest(g, 3.0, np.zeros(2), np.eye(2), eps_schedule=(0.2,),
                              h_ratio=16, christoffel=False)
    serial = coords.build_chart(req)
    monkeypatch.setenv("PHARM_THREADS", "2")
    parallel = coords.build_chart(req)
    for a, b in zip(serial.U, parallel.U):
        np.testing.assert_array_equal(a.values, b.values)


def test_christoffel_check_conformal_is_small_and_bounded_by_h():
    # the discrete chart is affine for p = n on conformal metrics, so the
    # check reaches rounding level; assert the C h envelope at three refinements
    g = gallery.metric("conformal-exp", 2)
    for ratio in (16, 32, 64):
        res = coords.build_chart(coords.ChartRequest(g, 2.0, np.zeros(2), np.eye(2),
                                                     eps_schedule=(0.2,), h_ratio=ratio))
        assert res.christoffel_check <= 1e-9 * (0.2 / ratio)


def test_christoffel_check_detects_non_harmonic_chart():
    g = gallery.metric("bump-perturbed", 2)
    b = make_ball(2, 0.4, h=0.4 / 32)
    gt = coords.pushforward_metric(g, affine_chart(b, np.eye(2)))
    assert coords.christoffel_check(gt, 3.0) > 1e-3


# ---------------------------------------------------------------------------
# pushforward


def test_pushforward_affine_constant_metric():
    G = np.array([[2.0, 0.3], [0.3, 1.0]])
    S = np.array([[1.0, 0.5], [-0.2, 2.0]])
    b = make_ball(2, 0.5, h=0.05)
    gt = coords.pushforward_metric(geo.constant(G), affine_chart(b, S))
    si = np.linalg.inv(S)
    pts = np.array([[0.0, 0.0], [0.05, -0.1]])
    np.testing.assert_allclose(gt(pts), np.broadcast_to(si.T @ G @ si, (2, 2, 2)), atol=1e-12)


def test_pushforward_identity():
    g = gallery.metric("conformal-quadratic", 2)
    b = make_ball(2, 0.5, center=[0.1, 0.1], h=0.025)
    gt = coords.pushforward_metric(g, [DiscreteScalarField(b, b.points[:, k].copy())
                                       for k in range(2)])
    y = np.array([[0.1, 0.1], [0.2, 0.05]])
    np.testing.assert_allclose(gt(y), g(y), rtol=1e-3)


def test_invert_chart_round_trip():
    g = gallery.metric("bump-perturbed", 2)
    res = coords.build_chart(coords.ChartRequest(g, 3.0, np.zeros(2), np.eye(2),
                                                 eps_schedule=(0.2,), christoffel=False))
    b = res.U[0].ball
    nodes = b.interior_idx[b.radii[b.interior_idx] <= 0.7 * b.radius][::7]
    y = np.stack([u.values[nodes] for u in res.U], axis=-1)
    x = coords.invert_chart(res.U, y)
    np.testing.assert_allclose(x, b.points[nodes], atol=1e-10)


# ---------------------------------------------------------------------------
# dilation and rates


def test_scaling_equivalence():
    g = gallery.metric("bump-perturbed", 2)
    x0 = np.array([0.3, 0.2])
    eps = 0.1
    p = 3.0
    res = coords.build_chart(coords.ChartRequest(g, p, x0, np.eye(2), eps_schedule=(eps,),
                                                 h_ratio=16, christoffel=False))
    A = make_aoperator(g, p).dilated(x0, eps)
    unit = make_ball(2, 1.0, h=1 / 16)
    sol = solve_dirichlet(A, unit, DiscreteScalarField(unit, unit.points[:, 0].copy()))
    back = rescale_from_unit_ball(sol.u, x0, eps)
    assert np.abs(back.values - res.U[0].values).max() <= 10 * 1e-9 * eps


def test_rate_study_flat_exact():
    study = coords.rate_study(geo.flat(2), 3.0, np.zeros(2), [0.4, 0.2, 0.1, 0.05],
                              h_tilde=1 / 8, h_check=1 / 16)
    assert study.status == "exact"
    assert study.fitted_slope is None
    assert max(study.deviations) <= 1e-10


def test_rate_study_input_checks():
    with pytest.raises(ValueError):
        coords.rate_study(geo.flat(2), 2.0, np.zeros(2), [0.4, 0.2, 0.1])
    with pytest.raises(ValueError):
        coords.rate_study(geo.flat(2), 2.0, np.zeros(2), [0.4, 0.3, 0.2, 0.1])


def test_rate_study_below_noise():
    # a very coarse grid makes the discretisation error dominate the eps signal
    g = gallery.metric("bump-perturbed", 2)
    with pytest.raises(SignalBelowNoise) as info:
        coords.rate_study(g, 2.0, np.zeros(2), [0.4, 0.2, 0.1, 0.05], h_tilde=1 / 4,
                          h_check=1 / 8, noise_factor=1e6)
    assert info.value.study.status == "below-noise"


def test_rate_study_deviations_decrease():
    g = gallery.metric("bump-perturbed", 2)
    study = coords.rate_study(g, 2.0, np.zeros(2), [0.4, 0.2, 0.1, 0.05],
                              h_tilde=1 / 16, h_check=1 / 32)
    d = study.deviations
    assert all(x > 0 for x in d)
    assert sum(b > a for a, b in zip(d, d[1:])) <= 1
    assert study.expected_slope == 1.0

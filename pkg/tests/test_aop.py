import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pharmonic import aop, gallery
from pharmonic import geometry as geo
from pharmonic.errors import BadExponent, GridMismatch
from pharmonic.grid import DiscreteScalarField, make_ball
from pharmonic.solver import solve_dirichlet

EXPONENTS = (1.5, 2.0, 3.0, 4.0)


def test_flat_laplacian():
    A = aop.make_aoperator(geo.flat(2), 2.0)
    xi = np.array([[0.3, -1.2]])
    np.testing.assert_allclose(A(np.zeros((1, 2)), xi), xi)
    assert A.alpha == pytest.approx(1.0) and A.beta == pytest.approx(1.0)


def test_flat_p4_unit_vector():
    A = aop.make_aoperator(geo.flat(2), 4.0)
    np.testing.assert_allclose(A(np.zeros((1, 2)), np.array([[1.0, 0.0]])), [[1.0, 0.0]])


def test_scaled_identity():
    A = aop.make_aoperator(geo.constant(4 * np.eye(2)), 2.0)
    np.testing.assert_allclose(A(np.zeros((1, 2)), np.array([[1.0, 0.0]])), [[1.0, 0.0]])


def test_bad_exponent():
    with pytest.raises(BadExponent):
        aop.make_aoperator(geo.flat(2), 1.0)


def test_regularised_operator():
    A = aop.make_aoperator(geo.flat(2), 3.0, reg=0.5)
    xi = np.array([[0.6, 0.8]])
    np.testing.assert_allclose(A(np.zeros((1, 2)), xi), np.sqrt(1.25) * xi)


@pytest.mark.parametrize("name", sorted(gallery.METRICS))
@pytest.mark.parametrize("p", EXPONENTS)
def test_homogeneity(name, p):
    g = gallery.metric(name, 2)
    A = aop.make_aoperator(g, p)
    rng = np.random.default_rng(5)
    x = g.domain.sample(1000, rng) * 0.5
    xi = rng.normal(size=(1000, 2))
    t = rng.uniform(0, 10, 1000)
    lhs = A(x, t[:, None] * xi)
    base = A(x, xi)
    rhs = t[:, None] ** (p - 1) * base
    scale = 1 + t ** (p - 1) * np.linalg.norm(base, axis=-1)
    assert np.all(np.linalg.norm(lhs - rhs, axis=-1) <= 1e-10 * scale)


def test_structural_flat_p2_exact():
    rep = aop.estimate_structural_constants(aop.make_aoperator(geo.flat(2), 2.0), 2000)
    assert rep.alpha_est == pytest.approx(1.0)
    assert rep.beta_est == pytest.approx(1.0)
    assert rep.delta_est == pytest.approx(1.0)


def test_structural_flat_p4():
    rep = aop.estimate_structural_constants(aop.make_aoperator(geo.flat(2), 4.0), 100_000)
    assert 0 < rep.delta_est <= 1


def test_structural_perturbed_p3():
    A = aop.make_aoperator(gallery.metric("bump-perturbed", 2), 3.0)
    rep = aop.estimate_structural_constants(A, 20_000)
    assert rep.alpha_est > 0 and rep.beta_est > 0 and rep.delta_est > 0
    assert rep.alpha_est <= 1 <= rep.beta_est


@pytest.mark.parametrize("name", sorted(gallery.METRICS))
@pytest.mark.parametrize("p", EXPONENTS)
def test_sampled_constants_respect_analytic_bounds(name, p):
    A = aop.make_aoperator(gallery.metric(name, 2), p)
    rep = aop.estimate_structural_constants(A, 5000, seed=2)
    assert rep.delta_est > 0
    assert rep.delta_est >= A.delta_mono * (1 - 1e-9)
    assert rep.alpha_est >= A.alpha * (1 - 1e-9)
    assert rep.beta_est <= A.beta * (1 + 1e-9)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(EXPONENTS), st.integers(0, 2**31))
def test_monotonicity_positive(p, seed):
    A = aop.make_aoperator(gallery.metric("diagonal-poly", 2), p)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (200, 2))
    xi, zeta = rng.normal(size=(2, 200, 2))
    val = np.einsum("ij,ij->i", A(x, xi) - A(x, zeta), xi - zeta)
    bound = A.delta_mono * (np.linalg.norm(xi, axis=-1) + np.linalg.norm(zeta, axis=-1)) ** (p - 2) \
        * np.sum((xi - zeta) ** 2, axis=-1)
    assert np.all(val >= bound * (1 - 1e-9))


# ---------------------------------------------------------------------------
# discrete energy


def test_energy_constant_zero():
    b = make_ball(2, 1.0, h=0.1)
    A = aop.make_aoperator(geo.flat(2), 3.0)
    assert aop.dirichlet_energy(A, DiscreteScalarField(b, np.full(b.size, 2.0))) == 0


@pytest.mark.parametrize("p,expected", [(2.0, np.pi / 2), (4.0, np.pi / 4)])
def test_energy_coordinate(p, expected):
    errs = []
    for h in (0.04, 0.02, 0.01):
        b = make_ball(2, 1.0, h=h)
        u = DiscreteScalarField(b, b.points[:, 0].copy())
        errs.append(abs(aop.dirichlet_energy(aop.make_aoperator(geo.flat(2), p), u) - expected))
    assert errs[-1] <= 0.02 * expected
    assert errs[-1] < errs[0] / 2


def test_energy_grid_mismatch():
    b = make_ball(3, 1.0, h=0.25)
    with pytest.raises(GridMismatch):
        aop.dirichlet_energy(aop.make_aoperator(geo.flat(2), 2.0),
                             DiscreteScalarField(b, np.zeros(b.size)))


@pytest.mark.parametrize("p", EXPONENTS)
def test_energy_gradient_matches_fd(p):
    g = gallery.metric("bump-perturbed", 2)
    A = aop.make_aoperator(g, p, reg=0.1)
    b = make_ball(2, 0.5, h=0.05)
    u = DiscreteScalarField.from_function(b, lambda x: np.sin(2 * x[:, 0]) + x[:, 1] ** 2)
    grad = aop.energy_gradient(A, u)
    rng = np.random.default_rng(0)
    step = 1e-5
    for i in rng.choice(b.size, 20, replace=False):
        up, dn = u.values.copy(), u.values.copy()
        up[i] += step
        dn[i] -= step
        fd = (aop.dirichlet_energy(A, u.with_values(up))
              - aop.dirichlet_energy(A, u.with_values(dn))) / (2 * step)
        assert fd == pytest.approx(grad[i], rel=1e-6, abs=1e-12)


@pytest.mark.parametrize("p", EXPONENTS)
@pytest.mark.parametrize("n", [2, 3])
def test_weak_residual_affine_flat(p, n):
    b = make_ball(n, 1.0, h=0.25 if n == 3 else 0.1)
    u = DiscreteScalarField(b, b.points @ np.arange(1.0, n + 1) + 0.5)
    assert aop.weak_residual(aop.make_aoperator(geo.flat(n), p), u) <= 1e-12


def test_weak_residual_log_second_order():
    x0 = np.array([2.0, 0.5])
    res = []
    hs = (1 / 8, 1 / 16, 1 / 32)
    for h in hs:
        b = make_ball(2, 1.0, h=h)
        u = DiscreteScalarField.from_function(b, lambda x: np.log(np.linalg.norm(x - x0, axis=-1)))
        res.append(aop.weak_residual(aop.make_aoperator(geo.flat(2), 2.0), u))
    slope = np.polyfit(np.log(hs), np.log(res), 1)[0]
    assert slope >= 1.8


def test_weak_residual_conformal_coordinate():
    g = gallery.metric("conformal-exp", 2)
    res = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        b = make_ball(2, 1.0, h=h)
        u = DiscreteScalarField(b, b.points[:, 0].copy())
        res.append(aop.weak_residual(aop.make_aoperator(g, 2.0), u))
    assert max(res) <= 1e-12 or (res[1] < res[0] and res[2] < res[1])


def test_weak_residual_at_minimiser():
    g = gallery.metric("bump-perturbed", 2)
    A = aop.make_aoperator(g, 3.0)
    b = make_ball(2, 0.5, h=0.05)
    f = DiscreteScalarField.from_function(b, lambda x: x[:, 0] + 0.5 * x[:, 1] ** 2)
    sol = solve_dirichlet(A, b, f)
    assert aop.weak_residual(A, sol.u) <= 1e-8
    assert aop.weak_residual(A, sol.u) == pytest.approx(sol.final_residual, rel=1e-6, abs=1e-14)


def test_weak_residual_rejects_non_active_test_nodes():
    b = make_ball(2, 1.0, h=0.1)
    u = DiscreteScalarField(b, np.zeros(b.size))
    with pytest.raises(GridMismatch):
        aop.weak_residual(aop.make_aoperator(geo.flat(2), 2.0), u, [b.boundary_idx[0]])


def test_hat_norm_closed_form():
    b = make_ball(2, 1.0, h=0.1)
    st_ = aop.Stencils.for_ball(geo.flat(2), b)
    for p in EXPONENTS:
        w = np.zeros(b.size)
        w[b.active_idx[len(b.active_idx) // 2]] = 1.0
        assert st_.gradient_lp(w, p) == pytest.approx(st_.hat_norms(p), rel=1e-12)

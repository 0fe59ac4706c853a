"""p-harmonic coordinate charts by Dirichlet solves on shrinking balls."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .aop import Stencils, make_aoperator
from .errors import (BoundaryNode, DegenerateJacobian, DomainEscape, ScheduleExhausted,
                     SignalBelowNoise)
from .geometry import GridMetric, christoffel_pharmonic_residual
from .grid import DiscreteBall, DiscreteScalarField, GradientField, gradient_field, lp_norm
from .solver import SolverConfig, solve_dirichlet

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = tuple(0.4 * 2.0**-k for k in range(7))


def thread_count():
    try:
        return max(1, int(os.environ.get("PHARM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class ChartRequest:
    g: object
    p: float
    x0: np.ndarray
    S: np.ndarray
    eps_schedule: tuple = DEFAULT_SCHEDULE
    jac_tol: float = 0.05
    cfg: SolverConfig | None = None
    h_ratio: int = 32
    strict: bool = False
    christoffel: bool = True

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        n = self.g.dim
        if self.x0.shape != (n,) or self.S.shape != (n, n):
            raise ValueError("x0 and S must match the metric dimension")
        if abs(np.linalg.det(self.S)) <= 1e-12:
            raise ValueError("S must be invertible")
        eps = np.asarray(self.eps_schedule, dtype=float)
        if len(eps) == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise ValueError("eps_schedule must be positive and strictly decreasing")


@dataclass
class ChartResult:
    eps_used: float
    U: list
    DU0: np.ndarray
    jac_error: float
    pulled_metric0: np.ndarray
    residuals: list
    christoffel_check: float
    history: list = field(default_factory=list)
    exhausted: bool = False
    solutions: list = field(default_factory=list)

    def as_dict(self):
        return {
            "eps_used": self.eps_used,
            "DU0": self.DU0.tolist(),
            "jac_error": self.jac_error,
            "pulled_metric0": self.pulled_metric0.tolist(),
            "residuals": list(self.residuals),
            "christoffel_check": self.christoffel_check,
            "history": self.history,
            "exhausted": self.exhausted,
            "solver": [s.as_dict() for s in self.solutions],
        }


def jacobian_at_center(U):
    """DU[k, j] = d_j u^k at the centre node by central differences."""
    ball = U[0].ball
    c = ball.center_index
    if c < 0 or not ball.interior[c]:
        raise BoundaryNode("centre node is not interior")
    nb = ball.neighbors[c]
    return np.array([(u.values[nb[:, 1]] - u.values[nb[:, 0]]) / (2 * ball.h) for u in U])


def _solve_coordinates(A, ball, S, x0, cfg):
    Stencils.for_ball(A.g, ball)  # build the shared cache before any threads start
    data = [DiscreteScalarField(ball, (ball.points - x0) @ S[k]) for k in range(len(S))]
    workers = min(thread_count(), len(S))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda f: solve_dirichlet(A, ball, f, cfg), data))
    return [solve_dirichlet(A, ball, f, cfg) for f in data]


def build_chart(req: ChartRequest):
    n = req.g.dim
    A = make_aoperator(req.g, req.p)
    history, best = [], None
    for eps in req.eps_schedule:
        ball = DiscreteBall(n, eps, req.x0, eps / req.h_ratio)
        sols = _solve_coordinates(A, ball, req.S, req.x0, req.cfg)
        U = [s.u for s in sols]
        du0 = jacobian_at_center(U)
        err = float(np.linalg.norm(du0 - req.S, 2))
        history.append({"eps": eps, "jac_error": err})
        log.info("eps=%g jac_error=%.3e", eps, err)
        if best is None or err < best[1]:
            best = (eps, err, sols, du0)
        if err < req.jac_tol:
            break
    eps, err, sols, du0 = best
    exhausted = err >= req.jac_tol
    U = [s.u for s in sols]
    g0 = req.g(req.x0)
    dinv = np.linalg.inv(du0)
    pulled0 = dinv.T @ g0 @ dinv
    check = float("nan")
    if req.christoffel:
        gt = pushforward_metric(req.g, U)
        check = christoffel_check(gt, req.p)
    result = ChartResult(
        eps_used=eps, U=U, DU0=du0, jac_error=err, pulled_metric0=0.5 * (pulled0 + pulled0.T),
        residuals=[s.final_residual for s in sols], christoffel_check=check,
        history=history, exhausted=exhausted, solutions=sols,
    )
    if exhausted and req.strict:
        raise ScheduleExhausted(f"best jac_error {err:.3g} >= {req.jac_tol}", result=result)
    return result


# ---------------------------------------------------------------------------
# the metric in the new chart


class _LatticeInterp:
    """Multilinear interpolation of nodal data over a ball's bounding lattice."""

    def __init__(self, ball, values):
        k = ball._kmax
        self.axes = [ball.center[a] + ball.h * np.arange(-k, k + 1) for a in range(ball.dim)]
        shape = (2 * k + 1,) * ball.dim
        values = np.asarray(values, dtype=float)
        tail = values.shape[1:]
        arr = np.full(shape + tail, np.nan)
        arr[tuple((ball.index + k).T)] = values
        self._f = RegularGridInterpolator(self.axes, arr, bounds_error=False, fill_value=np.nan)

    def __call__(self, x):
        return self._f(x)


def chart_jacobians(U):
    """DU at every interior node, shape (N_int, n, n)."""
    grads = [gradient_field(u).vectors for u in U]
    return np.stack(grads, axis=1)


def invert_chart(U, y, x_start=None, du_ref=None, tol=1e-13, max_iter=60):
    """Solve U(x) = y by chord Newton on the interpolated chart."""
    ball = U[0].ball
    interp = _LatticeInterp(ball, np.stack([u.values for u in U], axis=-1))
    du = jacobian_at_center(U) if du_ref is None else du_ref
    y = np.atleast_2d(np.asarray(y, dtype=float))
    y0 = interp(ball.center[None])[0]
    x = ball.center + (y - y0) @ np.linalg.inv(du).T if x_start is None else np.array(x_start, float)
    scale = max(1.0, float(np.max(np.abs(y))))
    for _ in range(max_iter):
        r = interp(x) - y
        if not np.all(np.isfinite(r)):
            raise DomainEscape("inverse interpolation left the chart's ball")
        x = x - r @ np.linalg.inv(du).T
        if np.max(np.abs(r)) <= tol * scale:
            break
    return x


def pushforward_metric(g, U, radius=None, h=None):
    """g~(y) = DU^{-T} g DU^{-1} at U^{-1}(y), sampled on a lattice around U(x0)."""
    ball = U[0].ball
    n = ball.dim
    jac = chart_jacobians(U)
    smin = np.linalg.svd(jac, compute_uv=False)[:, -1]
    if np.min(smin) <= 1e-8:
        raise DegenerateJacobian("chart Jacobian degenerate at an interior node")
    du0 = jacobian_at_center(U)
    s0 = np.linalg.svd(du0, compute_uv=False)[-1]
    radius = 0.5 * ball.radius * s0 if radius is None else radius
    h = ball.h if h is None else h
    k = int(np.floor(radius / h)) + 1
    y0 = np.array([u.values[ball.center_index] for u in U])
    axes = [y0[a] + h * np.arange(-k, k + 1) for a in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    ys = np.stack([m.ravel() for m in mesh], axis=-1)
    inside = np.linalg.norm(ys - y0, axis=-1) <= radius + 1e-12
    xs = invert_chart(U, ys[inside], du_ref=du0)

    jfull = np.full((ball.size, n, n), np.nan)
    jfull[ball.interior_idx] = jac
    jx = _LatticeInterp(ball, jfull.reshape(ball.size, n * n))(xs).reshape(-1, n, n)
    if not np.all(np.isfinite(jx)):
        raise DomainEscape("pushforward lattice reaches the chart boundary")
    jinv = np.linalg.inv(jx)
    gt = np.einsum("tja,tjk,tkb->tab", jinv, g(xs), jinv)
    values = np.full((len(ys), n, n), np.nan)
    values[inside] = 0.5 * (gt + np.swapaxes(gt, -1, -2))
    return GridMetric(axes, values.reshape(tuple(len(a) for a in axes) + (n, n)),
                      name=f"pushforward of {g.name}")


def christoffel_check(gt, p):
    """max_k |r^k| over lattice points of a GridMetric with central-difference support."""
    mesh = np.meshgrid(*[a[1:-1] for a in gt.axes], indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    vals = gt(pts)
    dg = gt.grad(pts)
    ok = np.all(np.isfinite(vals), axis=(-1, -2)) & np.all(np.isfinite(dg), axis=(-1, -2, -3))
    if not np.any(ok):
        return float("nan")
    r = christoffel_pharmonic_residual(gt, p, pts[ok])
    return float(np.max(np.abs(r)))


# ---------------------------------------------------------------------------
# rate study


@dataclass
class RateStudy:
    p: float
    eps_list: list
    deviations: list
    fitted_slope: float | None
    expected_slope: float
    status: str = "ok"
    deviations_fine: list = field(default_factory=list)
    disc_errors: list = field(default_factory=list)
    fitted_slope_fine: float | None = None
    h_tilde: tuple = ()

    def as_dict(self):
        return {
            "p": self.p, "eps_list": list(self.eps_list), "deviations": list(self.deviations),
            "deviations_fine": list(self.deviations_fine), "disc_errors": list(self.disc_errors),
            "fitted_slope": self.fitted_slope, "fitted_slope_fine": self.fitted_slope_fine,
            "expected_slope": self.expected_slope, "status": self.status,
            "h_tilde": list(self.h_tilde),
        }


def expected_rate(p):
    return min(1.0, 1.0 / (p - 1.0))


def unit_ball_deviation(g, p, x0, eps, h_tilde, cfg=None):
    """|grad u~ - e_1|_{L^p(B_1)} for the dilated problem with data x~^1."""
    n = g.dim
    A = make_aoperator(g.dilated(np.asarray(x0, float), eps), p)
    ball = DiscreteBall(n, 1.0, np.zeros(n), h_tilde)
    f = DiscreteScalarField(ball, ball.points[:, 0].copy())
    sol = solve_dirichlet(A, ball, f, cfg)
    grad = gradient_field(sol.u)
    e1 = np.zeros(n)
    e1[0] = 1.0
    return lp_norm(GradientField(ball, grad.vectors - e1), p), sol


def _slope(eps, dev):
    return float(np.polyfit(np.log(eps), np.log(dev), 1)[0])


def rate_study(g, p, x0, eps_list, cfg=None, h_tilde=1 / 32, h_check=1 / 64,
               exact_tol=1e-10, noise_factor=2.0):
    eps = np.asarray(eps_list, dtype=float)
    if len(eps) < 4 or eps.max() / eps.min() < 8 * (1 - 1e-12):
        raise ValueError("eps_list needs >= 4 entries spanning a factor of 8")
    order = np.argsort(-eps)
    eps = eps[order]
    coarse = [unit_ball_deviation(g, p, x0, e, h_tilde, cfg)[0] for e in eps]
    fine = [unit_ball_deviation(g, p, x0, e, h_check, cfg)[0] for e in eps]
    disc = [abs(a - b) for a, b in zip(coarse, fine)]
    study = RateStudy(p=p, eps_list=eps.tolist(), deviations=coarse, fitted_slope=None,
                      expected_slope=expected_rate(p), deviations_fine=fine,
                      disc_errors=disc, h_tilde=(h_tilde, h_check))
    if max(coarse) <= exact_tol:
        study.status = "exact"
        return study
    study.fitted_slope = _slope(eps, coarse)
    study.fitted_slope_fine = _slope(eps, fine)
    signal = abs(coarse[-2] - coarse[-1])
    noise = max(disc[-2], disc[-1])
    if signal < noise_factor * noise:
        study.status = "below-noise"
        raise SignalBelowNoise(
            f"deviation change {signal:.3g} under {noise_factor}x discretisation error {noise:.3g}",
            study=study)
    return study

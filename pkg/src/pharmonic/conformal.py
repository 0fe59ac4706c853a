"""Distortion of maps between Riemannian charts and conformal invariance checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .aop import make_aoperator, weak_residual
from .coords import ChartRequest, _LatticeInterp, build_chart, invert_chart
from .errors import DomainEscape, GridMismatch, NonConformalInput, SingularMetric
from .geometry import inverse_and_det
from .grid import DiscreteBall, DiscreteScalarField, gradient_field

DEGENERATE_DET = 1e-12


@dataclass
class DistortionReport:
    K_euclidean_field: np.ndarray
    K_riemannian_field: np.ndarray
    ess_sup_K: float
    ess_sup_K_euclidean: float
    conformal_factor_field: np.ndarray
    conformality_residual: float
    jacobian_sign: str
    det_g_field: np.ndarray = None
    degenerate_nodes: np.ndarray = None
    points: np.ndarray = None

    def as_dict(self):
        return {
            "ess_sup_K": self.ess_sup_K,
            "ess_sup_K_euclidean": self.ess_sup_K_euclidean,
            "conformality_residual": self.conformality_residual,
            "jacobian_sign": self.jacobian_sign,
            "degenerate_nodes": [p.tolist() for p in self.points[self.degenerate_nodes]],
            "conformal_factor_range": [float(np.nanmin(self.conformal_factor_field)),
                                       float(np.nanmax(self.conformal_factor_field))],
        }


def _grid_points(grid):
    if isinstance(grid, DiscreteBall):
        return grid.points[grid.interior_idx], grid
    return np.atleast_2d(np.asarray(grid, dtype=float)), None


def map_jacobian(phi, grid, jacobian="analytic"):
    """Dphi at the interior nodes of ``grid`` (analytic or central differences)."""
    pts, ball = _grid_points(grid)
    if jacobian == "analytic":
        return pts, phi.jacobian(pts)
    if ball is None:
        raise GridMismatch("grid Jacobians need a DiscreteBall")
    vals = phi(ball.points)
    nb = ball.neighbors[ball.interior_idx]
    jac = (vals[nb[..., 1]] - vals[nb[..., 0]]) / (2 * ball.h)   # (N, n_in, n_out)
    return pts, np.swapaxes(jac, -1, -2)


def distortion(phi, g, h, grid, jacobian="analytic"):
    """Pointwise Euclidean and Riemannian distortion of phi over the grid."""
    pts, J = map_jacobian(phi, grid, jacobian)
    n = pts.shape[-1]
    y = phi(pts)
    if not np.all(h.contains(y)):
        raise DomainEscape(f"{phi.name} leaves the domain of the target metric")
    det = np.linalg.det(J)
    degenerate = np.abs(det) < DEGENERATE_DET
    ok = ~degenerate

    sv = np.linalg.svd(J, compute_uv=False)
    k_euc = np.full(len(pts), np.nan)
    k_euc[ok] = sv[ok, 0] ** n / np.abs(det[ok])

    pull = np.einsum("tai,tab,tbj->tij", J, h(y), J)
    ginv, _ = inverse_and_det(g, pts)
    m = ginv @ pull
    tr = np.trace(m, axis1=-2, axis2=-1)
    detm = np.linalg.det(m)
    det_g = np.sqrt(np.clip(detm, 0.0, None))
    k_riem = np.full(len(pts), np.nan)
    k_riem[ok] = (tr[ok] / n) ** (n / 2) / det_g[ok]
    c = tr / n
    gx = g(pts)
    resid = np.max(np.abs(pull - c[:, None, None] * gx), axis=(-1, -2)) / np.max(np.abs(gx), axis=(-1, -2))

    signs = np.sign(det[ok])
    if len(signs) and np.all(signs > 0):
        sign = "+1"
    elif len(signs) and np.all(signs < 0):
        sign = "-1"
    else:
        sign = "mixed"
    return DistortionReport(
        K_euclidean_field=k_euc, K_riemannian_field=k_riem,
        ess_sup_K=float(np.nanmax(k_riem)) if np.any(ok) else float("nan"),
        ess_sup_K_euclidean=float(np.nanmax(k_euc)) if np.any(ok) else float("nan"),
        conformal_factor_field=c, conformality_residual=float(np.max(resid[ok], initial=0.0)),
        jacobian_sign=sign, det_g_field=det_g, degenerate_nodes=np.flatnonzero(degenerate),
        points=pts,
    )


# ---------------------------------------------------------------------------
# localisation


def _spd_check(m):
    m = np.asarray(m, dtype=float)
    if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.max(np.abs(m)))):
        raise SingularMetric("matrix is not symmetric")
    lam = np.linalg.eigvalsh(m)
    if lam[0] <= 0:
        raise SingularMetric("matrix is not positive definite")
    return m, lam


def distortion_ratio(m):
    """|m|_op^n / det m, which is 1 exactly for multiples of the identity."""
    _, lam = _spd_check(m)
    return lam[-1] ** len(lam) / np.prod(lam)


@dataclass
class LocalizationResult:
    delta_needed: float
    certified: bool
    ratio_g: float
    ratio_h: float
    threshold: float


def localization_bound(g_at_p, h_at_fp, eps):
    """Are g and h^{-1} close enough to conformal for (1+eps)-quasiregularity?"""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g, _ = _spd_check(g_at_p)
    hm, _ = _spd_check(h_at_fp)
    hinv = np.linalg.inv(hm)
    thr = (1.0 + eps) ** 0.5
    rg, rh = distortion_ratio(g), distortion_ratio(hinv)
    certified = bool(rg <= thr and rh <= thr)

    eye = np.eye(len(g))
    dg, dh = g - eye, hinv - eye
    size = max(np.max(np.abs(dg)), np.max(np.abs(dh)))
    if size == 0:
        return LocalizationResult(float("inf"), certified, rg, rh, thr)
    dg, dh = dg / size, dh / size

    def excess(t):
        try:
            return max(distortion_ratio(eye + t * dg), distortion_ratio(eye + t * dh)) - thr
        except SingularMetric:
            return np.inf

    # largest t keeping both matrices positive definite
    lam = np.concatenate([np.linalg.eigvalsh(dg), np.linalg.eigvalsh(dh)])
    t_max = 1.0 / -lam.min() if lam.min() < 0 else 1e6
    ts = np.linspace(0.0, t_max * (1 - 1e-9), 2001)[1:]
    vals = np.array([excess(t) for t in ts])
    hit = np.flatnonzero(vals >= 0)
    if len(hit) == 0:
        return LocalizationResult(float("inf"), certified, rg, rh, thr)
    hi = ts[hit[0]]
    lo = ts[hit[0] - 1] if hit[0] > 0 else 0.0
    t = brentq(lambda s: min(excess(s), 1e300), lo, hi, xtol=1e-14) if excess(lo) < 0 else lo
    return LocalizationResult(float(t), certified, rg, rh, thr)


# ---------------------------------------------------------------------------
# pullbacks of n-harmonic functions


def _as_function(v, margin_cells=1):
    """A callable y -> v(y) from an analytic function or a nodal field."""
    if isinstance(v, DiscreteScalarField):
        ball = v.ball
        interp = _LatticeInterp(ball, v.values)

        def fn(y):
            y = np.asarray(y, dtype=float)
            r = np.linalg.norm(y - ball.center, axis=-1)
            inside = r <= ball.radius - margin_cells * ball.h + 1e-12
            if ball.hole:
                inside &= r >= ball.hole + margin_cells * ball.h - 1e-12
            out = interp(y)
            if not np.all(inside) or not np.all(np.isfinite(out)):
                raise DomainEscape("composition leaves the target grid")
            return out

        return fn
    return v


def compose_field(v, phi, grid):
    """u = v o phi at every node of grid."""
    fn = _as_function(v)
    y = phi(grid.points)
    return DiscreteScalarField(grid, np.asarray(fn(y), dtype=float).reshape(grid.size))


def pullback_nharmonic_residual(v, phi, g, h, grid):
    """Weak residual of v o phi under (g, p = n); v is a nodal field or a function of y."""
    u = compose_field(v, phi, grid)
    return weak_residual(make_aoperator(g, grid.dim), u)


def _fd_gradient(fn, y, step):
    n = y.shape[-1]
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        cols.append((fn(y + e) - fn(y - e)) / (2 * step))
    return np.stack(cols, axis=-1)


@dataclass
class ChainRuleCheck:
    gradient_error: float
    inequality_excess: float


def chain_rule_check(v, phi, g, h, grid):
    """(a) |grad(v o phi) - Dphi^T grad v(phi)|, (b) max of |d(v o phi)|_g^n - n^n K Det_g (|dv|_h^n) o phi."""
    fn = _as_function(v)
    u = compose_field(fn, phi, grid)
    gu = gradient_field(u).vectors
    pts = grid.points[grid.interior_idx]
    y = phi(pts)
    J = phi.jacobian(pts)
    gv = _fd_gradient(fn, y, grid.h)
    chain = np.einsum("tai,ta->ti", J, gv)
    err = float(np.max(np.abs(gu - chain))) if len(pts) else 0.0

    n = grid.dim
    rep = distortion(phi, g, h, grid)
    ginv, _ = inverse_and_det(g, pts)
    hinv, _ = inverse_and_det(h, y)
    lhs = np.einsum("ti,tij,tj->t", gu, ginv, gu) ** (n / 2)
    dv = np.einsum("ti,tij,tj->t", gv, hinv, gv) ** (n / 2)
    ok = np.isfinite(rep.K_riemannian_field)
    rhs = n**n * rep.K_riemannian_field[ok] * rep.det_g_field[ok] * dv[ok]
    excess = float(np.max(lhs[ok] - rhs, initial=-np.inf))
    return ChainRuleCheck(err, excess)


@dataclass
class SubstitutionCheck:
    lhs: float
    rhs: float
    rel_err: float


def image_grid(phi, grid, h=None):
    """A ball lattice covering phi(grid) with the same spacing."""
    y = phi(grid.points)
    center = np.round(y.mean(axis=0) / grid.h) * grid.h
    radius = float(np.max(np.linalg.norm(y - center, axis=-1))) + 2 * grid.h
    return DiscreteBall(grid.dim, radius, center, grid.h if h is None else h)


def substitution_check(f, phi, g, h, grid, target=None):
    """Integral of f over phi(grid) computed on both sides of the substitution y = phi(x)."""
    fn = _as_function(f, margin_cells=0)
    target = image_grid(phi, grid) if target is None else target
    x = grid.points
    y = phi(x)
    J = phi.jacobian(x)
    pull = np.einsum("tai,tab,tbj->tij", J, h(y), J)
    ginv, detg = inverse_and_det(g, x)
    det_g = np.sqrt(np.clip(np.linalg.det(ginv @ pull), 0.0, None))
    lhs = float(np.sum(fn(y) * det_g * np.sqrt(detg)) * grid.h**grid.dim)
    yt = target.points
    _, deth = inverse_and_det(h, yt)
    rhs = float(np.sum(fn(yt) * np.sqrt(deth)) * target.h**target.dim)
    return SubstitutionCheck(lhs, rhs, abs(lhs - rhs) / (abs(rhs) + 1e-30))


def annulus_bump(center, inner, outer):
    """Smooth bump exp(1 - 1/(1 - s^2)) supported strictly inside inner < |y - c| < outer."""
    c = np.asarray(center, dtype=float)
    mid, half = 0.5 * (inner + outer), 0.5 * (outer - inner)

    def fn(y):
        s = (np.linalg.norm(np.asarray(y) - c, axis=-1) - mid) / half
        q = np.clip(1 - s * s, 1e-300, None)
        return np.where(np.abs(s) < 1, np.exp(1 - 1 / q), 0.0)

    return fn


# ---------------------------------------------------------------------------
# factorisation phi = v^{-1} o u


@dataclass
class FactorResult:
    u_fields: list
    v_chart: object
    u_residuals: list
    recomposition_error: float
    conformality_residual: float


def factor_map(phi, g, h, x0, p=None, cfg=None, eps=0.2, h_ratio=32, conformal_tol=1e-6):
    """Build an n-harmonic chart v near phi(x0) and verify u = v o phi for g."""
    x0 = np.asarray(x0, dtype=float)
    n = g.dim
    p = float(n if p is None else p)
    J0 = phi.jacobian(x0[None])[0]
    smax = np.linalg.svd(J0, compute_uv=False)[0]
    src_radius = 0.5 * eps / smax
    src = DiscreteBall(n, src_radius, x0, src_radius / h_ratio)
    rep = distortion(phi, g, h, src)
    if rep.conformality_residual > conformal_tol:
        raise NonConformalInput(f"conformality residual {rep.conformality_residual:.3g}")
    y0 = phi(x0[None])[0]
    v_chart = build_chart(ChartRequest(h, p, y0, np.eye(n), eps_schedule=(eps,),
                                       jac_tol=np.inf, cfg=cfg, h_ratio=h_ratio,
                                       christoffel=False))
    u_fields = [compose_field(v, phi, src) for v in v_chart.U]
    A = make_aoperator(g, p)
    res = [weak_residual(A, u) for u in u_fields]
    uvals = np.stack([u.values for u in u_fields], axis=-1)
    back = invert_chart(v_chart.U, uvals)
    err = float(np.max(np.abs(back - phi(src.points))))
    return FactorResult(u_fields, v_chart, res, err, rep.conformality_residual)


# ---------------------------------------------------------------------------
# codifferential


def codifferential(omega, g, x, step=1e-4):
    """delta_g omega = -|g|^{-1/2} d_i (|g|^{1/2} g^{ij} omega_j) by central differences."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]

    def flux(z):
        ginv, det = inverse_and_det(g, z)
        return np.sqrt(det)[..., None] * np.einsum("...ij,...j->...i", ginv, omega(z))

    div = 0.0
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        div = div + (flux(x + e)[..., i] - flux(x - e)[..., i]) / (2 * step)
    _, det = inverse_and_det(g, x)
    return -div / np.sqrt(det)

"""Regularised Kacanov iteration for the discrete A-harmonic Dirichlet problem."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .aop import AOperator, Stencils
from .errors import GridMismatch, NoConvergence, SingularLinearSystem
from .grid import DiscreteBall, DiscreteScalarField, gradient_field

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    max_outer_iters: int = 200
    energy_rel_tol: float = 1e-10
    step_tol: float = 1e-11          # relative to the oscillation of the data
    residual_tol: float = 1e-12      # absolute, on the weak residual
    reg_initial: float | None = None  # default 1e-3 * max |grad f|
    reg_factor: float = 0.5
    reg_floor: float = 1e-10
    armijo: float = 1e-4
    linear_solver: str = "cg"        # or "direct"
    linear_solver_tol: float = 1e-12
    max_linear_iters: int = 20_000
    method: str = "kacanov"          # or "newton"
    seed: int = 0

    def __post_init__(self):
        for name in ("energy_rel_tol", "step_tol", "linear_solver_tol", "reg_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.reg_floor < 0:
            raise ValueError("reg_floor must be non-negative")
        if self.linear_solver not in ("cg", "direct"):
            raise ValueError("linear_solver must be 'cg' or 'direct'")
        if self.method not in ("kacanov", "newton"):
            raise ValueError("method must be 'kacanov' or 'newton'")


@dataclass
class DirichletSolution:
    u: DiscreteScalarField
    iterations: int
    final_energy: float
    final_residual: float
    energy_bound_ratio: float
    energies: list = field(default_factory=list)
    reg_levels: list = field(default_factory=list)
    alpha: float = float("nan")
    beta: float = float("nan")
    p: float = float("nan")
    operator: AOperator | None = None

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "final_energy": self.final_energy,
            "final_residual": self.final_residual,
            "energy_bound_ratio": self.energy_bound_ratio,
            "energies": list(self.energies),
            "reg_levels": list(self.reg_levels),
            "alpha": self.alpha,
            "beta": self.beta,
            "p": self.p,
        }


def _local_matrices(st, q, p, reg, method):
    s = st.quad_form(q) + reg**2
    if p == 2:
        w = st.sqrt_det.copy()
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            w = st.sqrt_det * np.where(s > 0, s, 1.0) ** ((p - 2) / 2)
        w = np.where(s > 0, w, 0.0)
    local = w[:, None, None] * st.ginv
    if method == "newton" and p != 2:
        mq = np.einsum("tab,tb->ta", st.ginv, q)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(s > 0, (p - 2) * w / np.where(s > 0, s, 1.0), 0.0)
        local = local + c[:, None, None] * mq[:, :, None] * mq[:, None, :]
    return local


def _linear_solve(K, rhs, cfg):
    diag = K.diagonal()
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise SingularLinearSystem("non-positive diagonal in the frozen-weight system")
    if cfg.linear_solver == "direct":
        try:
            return spla.spsolve(K.tocsc(), rhs)
        except RuntimeError as exc:
            raise SingularLinearSystem(str(exc)) from exc
    m = spla.LinearOperator(K.shape, matvec=lambda r: r / diag, dtype=float)
    x, info = spla.cg(K, rhs, rtol=cfg.linear_solver_tol, atol=0.0, M=m,
                      maxiter=cfg.max_linear_iters)
    if info < 0:
        raise SingularLinearSystem("conjugate gradients broke down")
    if info > 0:
        log.debug("cg stopped after %d iterations without reaching rtol", info)
    return x


def _line_search(st, u, d, free, p, reg, slope0):
    """Step length along d minimising the (convex) energy restricted to the line."""
    def dphi(t):
        v = u.copy()
        v[free] += t * d
        return float(st.gradient(v, p, reg)[free] @ d)

    if slope0 >= 0:
        return 0.0
    d1 = dphi(1.0)
    if d1 <= 0:
        return 1.0
    return brentq(dphi, 0.0, 1.0, xtol=1e-12, rtol=1e-10, maxiter=100)


def _boundary_scale(f_vals):
    return max(float(np.ptp(f_vals)), float(np.max(np.abs(f_vals))), 1e-300)


def solve_dirichlet(A, ball, f, cfg=None, initial=None):
    """Minimise the discrete energy with u = f on non-active nodes."""
    cfg = cfg or SolverConfig()
    if not isinstance(f, DiscreteScalarField):
        f = DiscreteScalarField.from_function(ball, f)
    if not f.ball.same_as(ball):
        raise GridMismatch("boundary data lives on another grid")
    st = Stencils.for_ball(A.g, ball)
    p = A.p
    free = ball.active_idx
    u = f.values.copy()
    if initial is not None:
        init = initial.values if isinstance(initial, DiscreteScalarField) else np.asarray(initial)
        u[free] = init[free]
    scale = _boundary_scale(f.values)
    hat = st.hat_norms(p)

    if len(free):
        grad_f = np.linalg.norm(gradient_field(f).vectors, axis=-1)
        gmax = float(np.max(grad_f)) if grad_f.size else 0.0
    else:
        gmax = 0.0

    def residual(vals, reg):
        if len(free) == 0:
            return 0.0
        return float(np.max(np.abs(st.gradient(vals, p, reg)[free])) / hat)

    energies, levels = [], []
    iterations = 0
    res0 = residual(u, A.reg)
    if len(free) == 0 or res0 <= max(cfg.residual_tol, 1e-14 * scale):
        energies.append(st.energy(u, p, A.reg))
        return _finish(A, ball, f, u, st, energies, levels, 0)

    if p == 2 or A.reg > 0:
        schedule = [A.reg]
    else:
        reg = cfg.reg_initial if cfg.reg_initial is not None else 1e-3 * gmax
        reg = reg if reg > 0 else 1e-3 * scale
        schedule = []
        while reg > cfg.reg_floor:
            schedule.append(reg)
            reg *= cfg.reg_factor
        schedule.append(cfg.reg_floor)

    step_tol = cfg.step_tol * scale
    prev_level_u = None
    for li, reg in enumerate(schedule):
        levels.append(reg)
        energy = st.energy(u, p, reg)
        energies.append(energy)
        converged = False
        for _ in range(cfg.max_outer_iters):
            q = st.diffs(u)
            grad = st.gradient(u, p, reg)
            if np.max(np.abs(grad[free])) / hat <= cfg.residual_tol:
                converged = True
                break
            K = st.matrix(_local_matrices(st, q, p, reg, cfg.method))[free][:, free]
            d = _linear_solve(K.tocsr(), -grad[free], cfg)
            t = _line_search(st, u, d, free, p, reg, float(grad[free] @ d))
            step = t * d
            u_new = u.copy()
            u_new[free] += step
            e_new = st.energy(u_new, p, reg)
            iterations += 1
            if e_new > energy:
                # rounding-level increase: keep the old iterate
                if e_new - energy > 1e-13 * max(abs(energy), 1e-300):
                    log.debug("energy increased by %.3g; stopping level", e_new - energy)
                converged = True
                break
            rel_drop = (energy - e_new) / max(abs(energy), 1e-300)
            u, energy = u_new, e_new
            energies.append(energy)
            if np.max(np.abs(step)) <= step_tol or rel_drop <= 1e-16:
                converged = True
                break
        if not converged and li == len(schedule) - 1:
            raise NoConvergence(f"no convergence after {cfg.max_outer_iters} outer iterations "
                                f"at reg={reg:.3g}")
        if prev_level_u is not None and li < len(schedule) - 1:
            change = float(np.max(np.abs(u - prev_level_u)))
            if change <= cfg.energy_rel_tol * scale:
                break
        prev_level_u = u.copy()

    return _finish(A, ball, f, u, st, energies, levels, iterations)


def _finish(A, ball, f, u, st, energies, levels, iterations):
    p = A.p
    pts = ball.points
    alpha, beta, _ = A.constants_on(pts)
    gu = st.gradient_lp(u, p)
    gf = st.gradient_lp(f.values, p)
    ratio = 0.0 if gu == 0 else gu / ((beta / alpha) * gf)
    sol_field = DiscreteScalarField(ball, u)
    free = ball.active_idx
    res = 0.0
    if len(free):
        res = float(np.max(np.abs(st.gradient(u, p, A.reg)[free])) / st.hat_norms(p))
    return DirichletSolution(
        u=sol_field, iterations=iterations, final_energy=st.energy(u, p, A.reg),
        final_residual=res, energy_bound_ratio=float(ratio), energies=energies,
        reg_levels=levels, alpha=alpha, beta=beta, p=p, operator=A,
    )


def linear_reference(A, ball, f):
    """Direct sparse solve of the p = 2 system (the frozen weights are exact)."""
    if A.p != 2:
        raise ValueError("the linear reference exists only for p = 2")
    st = Stencils.for_ball(A.g, ball)
    K = st.matrix(st.sqrt_det[:, None, None] * st.ginv).tocsr()
    free, fixed = ball.active_idx, ball.fixed_idx
    rhs = -K[free][:, fixed] @ f.values[fixed]
    u = f.values.copy()
    u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
    return DiscreteScalarField(ball, u)


def gradient_nonvanishing_region(sol, threshold):
    """Interior nodes where the central-difference gradient has norm >= threshold."""
    u = sol.u if isinstance(sol, DirichletSolution) else sol
    gf = gradient_field(u)
    mag = np.linalg.norm(gf.vectors, axis=-1)
    return u.ball.interior_idx[mag >= threshold]


def rescale_to_unit_ball(u):
    """u on B_eps(c) -> u~(x~) = eps^{-1} u(c + eps x~) on B_1(0), nodal-exact."""
    ball = u.ball
    eps = ball.radius
    unit = DiscreteBall(ball.dim, 1.0, np.zeros(ball.dim), ball.h / eps, ball.hole / eps)
    if unit.size != ball.size or not np.array_equal(unit.index, ball.index):
        raise GridMismatch("rescaled lattice does not match")
    return DiscreteScalarField(unit, u.values / eps)


def rescale_from_unit_ball(ut, center, eps):
    ball = ut.ball
    out = DiscreteBall(ball.dim, eps, center, ball.h * eps, ball.hole * eps)
    if out.size != ball.size or not np.array_equal(out.index, ball.index):
        raise GridMismatch("rescaled lattice does not match")
    return DiscreteScalarField(out, eps * ut.values)

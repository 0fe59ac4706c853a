"""The metric-induced A-harmonic operator and its discrete energy.

A^j(x, q) = |g|^{1/2} g^{jk} (g^{ab} q_a q_b + reg^2)^{(p-2)/2} q_k

The discrete energy sums over corner stencils: for a node i and a sign
vector s in {-1, +1}^n the one-sided gradient

    D_s u^a = s_a (u(x_i + s_a h e_a) - u(x_i)) / h

enters with weight 2^{-n} h^n whenever all its nodes exist.  The energy
is exact for affine data and its Euler-Lagrange system at active nodes
is the weak form tested against nodal hat functions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import BadExponent, DomainEscape, GridMismatch
from .geometry import flat, inverse_and_det

# lattice points per axis used for the analytic alpha/beta sweep
SWEEP_DENSITY = {1: 401, 2: 81, 3: 31}


def _metric_factors(g, pts):
    ginv, det = inverse_and_det(g, pts)
    lam = np.linalg.eigvalsh(ginv)
    return np.sqrt(det), lam[..., 0], lam[..., -1]


def _flat_monotonicity(p):
    # lower bound for the flat operator |z|^{p-2} z relative to
    # (|a| + |b|)^{p-2} |a - b|^2
    return p - 1.0 if p < 2 else 2.0 ** (1 - p) / (p - 1.0)


def structural_bounds(sqrt_det, lmin, lmax, p):
    """(alpha, beta, delta) from eigenvalues of g^{-1} at a set of points."""
    alpha = float(np.min(sqrt_det * lmin ** (p / 2)))
    beta = float(np.max(sqrt_det * lmax ** (p / 2)))
    if p >= 2:
        m = sqrt_det * lmin ** (p / 2)
    else:
        m = sqrt_det * lmax ** ((p - 2) / 2) * lmin
    return alpha, beta, _flat_monotonicity(p) * float(np.min(m))


class AOperator:
    """xi -> A(x, xi) for a metric g, exponent p and regularisation reg.

    alpha, beta and delta_mono are bounds derived from the eigenvalues of
    g^{-1} on a lattice over the metric's domain (see SWEEP_DENSITY).
    """

    def __init__(self, g, p, reg=0.0):
        if not p > 1:
            raise BadExponent(f"p must exceed 1, got {p}")
        if reg < 0:
            raise ValueError("reg must be non-negative")
        self.g = g
        self.p = float(p)
        self.reg = float(reg)

    def __repr__(self):
        return f"AOperator(p={self.p}, reg={self.reg}, g={self.g!r})"

    @property
    def dim(self):
        return self.g.dim

    def eval(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        ginv, det = inverse_and_det(self.g, x)
        return apply_a(np.sqrt(det), ginv, xi, self.p, self.reg)

    __call__ = eval

    def with_reg(self, reg):
        out = AOperator(self.g, self.p, reg)
        if "_constants" in self.__dict__:
            out.__dict__["_constants"] = self._constants
        return out

    def dilated(self, center, eps):
        return AOperator(self.g.dilated(center, eps), self.p, self.reg)

    @cached_property
    def _constants(self):
        pts = self.g.domain.lattice(SWEEP_DENSITY.get(self.dim, 17))
        pts = pts[np.all(np.isfinite(self.g(pts)), axis=(-1, -2))]
        return structural_bounds(*_metric_factors(self.g, pts), self.p)

    @property
    def alpha(self):
        return self._constants[0]

    @property
    def beta(self):
        return self._constants[1]

    @property
    def delta_mono(self):
        return self._constants[2]

    def constants_on(self, pts):
        """(alpha, beta, delta) restricted to the given points."""
        return structural_bounds(*_metric_factors(self.g, pts), self.p)


def apply_a(sqrt_det, ginv, xi, p, reg=0.0):
    gx = np.einsum("...jk,...k->...j", ginv, xi)
    s = np.einsum("...j,...j->...", gx, xi) + reg**2
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(s > 0, sqrt_det * np.power(np.where(s > 0, s, 1.0), (p - 2) / 2), 0.0)
    return w[..., None] * gx


def make_aoperator(g, p, reg=0.0):
    return AOperator(g, p, reg)


@dataclass
class StructuralReport:
    alpha_est: float
    beta_est: float
    delta_est: float
    samples: int
    worst_points: dict = field(default_factory=dict)

    def as_dict(self):
        return {"alpha_est": self.alpha_est, "beta_est": self.beta_est,
                "delta_est": self.delta_est, "samples": self.samples,
                "worst_points": {k: [np.asarray(v).tolist() for v in t]
                                 for k, t in self.worst_points.items()}}


def estimate_structural_constants(A, num_samples=10_000, seed=0):
    """Sampled inf/sup ratios for coercivity, growth and monotonicity."""
    if A.reg != 0:
        A = A.with_reg(0.0)
    rng = np.random.default_rng(seed)
    n, p = A.dim, A.p
    x = A.g.domain.sample(num_samples, rng)
    scale = np.exp(rng.uniform(-3, 3, num_samples))[:, None]
    xi = rng.normal(size=(num_samples, n)) * scale
    zeta = rng.normal(size=(num_samples, n)) * scale
    # bias a third of the pairs toward the hard configurations
    k = num_samples // 3
    zeta[:k] = -rng.uniform(0.2, 1.0, (k, 1)) * xi[:k] + 0.05 * zeta[:k]
    zeta[k:2 * k] = xi[k:2 * k] * (1 + 0.01 * rng.normal(size=(k, 1))) + 0.01 * zeta[k:2 * k]

    a_xi = A(x, xi)
    a_zeta = A(x, zeta)
    nxi = np.linalg.norm(xi, axis=-1)
    nze = np.linalg.norm(zeta, axis=-1)
    coer = np.einsum("ij,ij->i", a_xi, xi) / nxi**p
    grow = np.linalg.norm(a_xi, axis=-1) / nxi ** (p - 1)
    diff = xi - zeta
    mono = (np.einsum("ij,ij->i", a_xi - a_zeta, diff)
            / ((nxi + nze) ** (p - 2) * np.einsum("ij,ij->i", diff, diff)))
    ia, ib, im = int(np.argmin(coer)), int(np.argmax(grow)), int(np.argmin(mono))
    return StructuralReport(
        alpha_est=float(coer[ia]), beta_est=float(grow[ib]), delta_est=float(mono[im]),
        samples=num_samples,
        worst_points={"alpha": (x[ia], xi[ia]), "beta": (x[ib], xi[ib]),
                      "delta": (x[im], xi[im], zeta[im])},
    )


# ---------------------------------------------------------------------------
# discretisation


class Stencils:
    """Corner stencils of a DiscreteBall together with the metric at their base nodes."""

    def __init__(self, g, ball):
        if g.dim != ball.dim:
            raise GridMismatch(f"metric dim {g.dim} vs grid dim {ball.dim}")
        n, h = ball.dim, ball.h
        base, nbrs, signs = [], [], []
        for s in itertools.product((-1, 1), repeat=n):
            cols = [ball.neighbors[:, a, (s[a] + 1) // 2] for a in range(n)]
            nb = np.stack(cols, axis=-1)
            ok = np.all(nb >= 0, axis=-1)
            idx = np.flatnonzero(ok)
            base.append(idx)
            nbrs.append(nb[idx])
            signs.append(np.broadcast_to(np.array(s, dtype=float), (len(idx), n)))
        self.base = np.concatenate(base)
        self.nbrs = np.concatenate(nbrs)
        self.signs = np.concatenate(signs)
        self.weight = h**n / 2**n
        self.ball = ball
        self.g = g

        pts = ball.points
        gx = g(pts)
        if not np.all(np.isfinite(gx)) or not np.all(g.contains(pts)):
            raise GridMismatch("grid leaves the metric's domain")
        try:
            ginv, det = inverse_and_det(g, pts)
        except DomainEscape as exc:
            raise GridMismatch(str(exc)) from exc
        self.node_ginv = ginv
        self.node_sqrt_det = np.sqrt(det)
        self.ginv = ginv[self.base]
        self.sqrt_det = self.node_sqrt_det[self.base]

    @classmethod
    def for_ball(cls, g, ball):
        try:
            cache = ball._cache
            st = cache.get(g)
            if st is None:
                st = cls(g, ball)
                cache[g] = st
            return st
        except TypeError:
            return cls(g, ball)

    def diffs(self, values):
        """One-sided gradients D_s u for every stencil, shape (T, n)."""
        h = self.ball.h
        return self.signs * (values[self.nbrs] - values[self.base][:, None]) / h

    def quad_form(self, q):
        return np.einsum("ta,tab,tb->t", q, self.ginv, q)

    def energy(self, values, p, reg=0.0):
        q = self.diffs(values)
        s = self.quad_form(q) + reg**2
        return float(np.sum(self.sqrt_det * s ** (p / 2)) * self.weight / p)

    def flux(self, values, p, reg=0.0):
        q = self.diffs(values)
        return q, apply_a(self.sqrt_det, self.ginv, q, p, reg)

    def scatter(self, vec):
        """Gradient of sum_T weight * vec_T . D_T u with respect to nodal values."""
        h = self.ball.h
        c = self.weight / h
        t = vec * self.signs * c
        out = np.zeros(self.ball.size)
        np.add.at(out, self.base, -t.sum(axis=-1))
        np.add.at(out, self.nbrs.ravel(), t.ravel())
        return out

    def gradient(self, values, p, reg=0.0):
        _, a = self.flux(values, p, reg)
        return self.scatter(a)

    def matrix(self, local):
        """Assemble sum_T weight * B_T^T local_T B_T as a CSR matrix."""
        n, h, size = self.ball.dim, self.ball.h, self.ball.size
        T = len(self.base)
        bl = np.zeros((T, n, n + 1))
        ar = np.arange(n)
        bl[:, ar, 0] = -self.signs / h
        bl[:, ar, ar + 1] = self.signs / h
        loc = np.einsum("tab,tac,tcd->tbd", bl, local, bl) * self.weight
        idx = np.concatenate([self.base[:, None], self.nbrs], axis=1).astype(np.int64)
        rows = np.broadcast_to(idx[:, :, None], loc.shape).ravel()
        cols = np.broadcast_to(idx[:, None, :], loc.shape).ravel()
        return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(size, size))

    def hat_norms(self, p):
        """|grad w_j|_p for the nodal hat function at each active node."""
        n, h = self.ball.dim, self.ball.h
        return h ** ((n - p) / p) * (n ** (p / 2) + n) ** (1.0 / p)

    def gradient_lp(self, values, p):
        q = self.diffs(values)
        return float(np.sum(np.linalg.norm(q, axis=-1) ** p) * self.weight) ** (1.0 / p)


def _stencils(A, u):
    if A.dim != u.ball.dim:
        raise GridMismatch("operator and field dimensions differ")
    return Stencils.for_ball(A.g, u.ball)


def dirichlet_energy(A, u):
    st = _stencils(A, u)
    return st.energy(u.values, A.p, A.reg)


def energy_gradient(A, u):
    return _stencils(A, u).gradient(u.values, A.p, A.reg)


def weak_residual(A, u, test_basis=None):
    """max_j |<A(x, grad u), grad w_j>| / |grad w_j|_p over nodal hat functions.

    ``test_basis`` is an iterable of node indices (default: active nodes).
    """
    st = _stencils(A, u)
    nodes = u.ball.active_idx if test_basis is None else np.asarray(list(test_basis), dtype=np.int64)
    if len(nodes) == 0:
        return 0.0
    if not np.all(u.ball.active[nodes]):
        raise GridMismatch("hat functions are only available at active nodes")
    g = st.gradient(u.values, A.p, A.reg)
    return float(np.max(np.abs(g[nodes])) / st.hat_norms(A.p))


def gradient_lp_norm(u, p, g=None):
    """Stencil-consistent |grad u|_{L^p}; the metric only fixes the stencil set."""
    st = Stencils.for_ball(g if g is not None else _flat_for(u.ball.dim), u.ball)
    return st.gradient_lp(u.values, p)


_FLATS = {}


def _flat_for(n):
    if n not in _FLATS:
        _FLATS[n] = flat(n)
    return _FLATS[n]

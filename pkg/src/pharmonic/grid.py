"""Uniform lattices restricted to balls (or annuli), nodal fields and norms."""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import BoundaryNode, GridMismatch, HypothesisViolated, TooCoarse

_TOL = 1e-9


def unit_ball_volume(n):
    return math.pi ** (n / 2) / gamma_fn(n / 2 + 1)


class DiscreteBall:
    """Nodes ``center + h*k`` (k integer) with ``hole <= |x - center| <= R``.

    A node is interior when it is at least one spacing away from the
    bounding sphere(s); every other node is a boundary node.  The
    ``active`` nodes are interior nodes whose full corner stencil star
    (axis and diagonal neighbours) exists; these carry the unknowns of the
    discrete Dirichlet problem.
    """

    def __init__(self, dim, radius, center=None, h=0.1, hole=0.0):
        if radius <= 0 or h <= 0:
            raise ValueError("radius and h must be positive")
        if h > radius / 2 * (1 + 1e-12):
            raise TooCoarse(f"h={h} too coarse for radius {radius}")
        if not 0.0 <= hole < radius:
            raise ValueError("hole radius must lie in [0, radius)")
        self.dim = int(dim)
        self.radius = float(radius)
        self.h = float(h)
        self.hole = float(hole)
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float).copy()
        if self.center.shape != (dim,):
            raise ValueError("center must have length dim")

        kmax = int(math.floor(radius / h * (1 + _TOL)))
        axis = np.arange(-kmax, kmax + 1)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        k = np.stack([m.ravel() for m in mesh], axis=-1)
        r = np.linalg.norm(k, axis=-1) * h
        keep = (r <= radius * (1 + _TOL)) & (r >= hole * (1 - _TOL))
        self.index = k[keep]
        self.radii = r[keep]
        self.points = self.center + h * self.index
        self.size = len(self.index)

        self._kmax = kmax
        side = 2 * kmax + 3
        self._lookup = np.full((side,) * dim, -1, dtype=np.int64)
        self._lookup[tuple((self.index + kmax + 1).T)] = np.arange(self.size)

        nb = np.empty((self.size, dim, 2), dtype=np.int64)
        for a in range(dim):
            e = np.zeros(dim, dtype=np.int64)
            e[a] = 1
            nb[:, a, 0] = self.node_at(self.index - e)
            nb[:, a, 1] = self.node_at(self.index + e)
        self.neighbors = nb

        inner = self.radii <= radius - h + _TOL * h
        if hole > 0:
            inner &= self.radii >= hole + h - _TOL * h
        self.interior = inner
        self.boundary = ~inner
        self.interior_idx = np.flatnonzero(inner)
        self.boundary_idx = np.flatnonzero(~inner)

        star = inner.copy()
        for a in range(dim):
            for b in range(dim):
                if a == b:
                    continue
                for sa in (-1, 1):
                    for sb in (-1, 1):
                        off = np.zeros(dim, dtype=np.int64)
                        off[a], off[b] = sa, sb
                        star &= self.node_at(self.index + off) >= 0
        self.active = star
        self.active_idx = np.flatnonzero(star)
        self.fixed_idx = np.flatnonzero(~star)
        self._cache = weakref.WeakKeyDictionary()

    def __repr__(self):
        extra = f", hole={self.hole}" if self.hole else ""
        return (f"DiscreteBall(dim={self.dim}, radius={self.radius}, h={self.h}{extra}, "
                f"nodes={self.size})")

    def node_at(self, k):
        """Node indices for integer offsets ``k`` (``-1`` where absent)."""
        k = np.asarray(k, dtype=np.int64)
        shifted = k + self._kmax + 1
        side = self._lookup.shape[0]
        ok = np.all((shifted >= 0) & (shifted < side), axis=-1)
        out = np.full(k.shape[:-1], -1, dtype=np.int64)
        out[ok] = self._lookup[tuple(shifted[ok].T)]
        return out

    @property
    def center_index(self):
        idx = self.node_at(np.zeros(self.dim, dtype=np.int64))
        return int(idx)

    def nearest_node(self, x):
        k = np.rint((np.asarray(x, dtype=float) - self.center) / self.h).astype(np.int64)
        return int(self.node_at(k))

    def same_as(self, other):
        return (self is other) or (
            self.dim == other.dim and self.size == other.size and self.h == other.h
            and self.radius == other.radius and self.hole == other.hole
            and np.array_equal(self.center, other.center))

    def meta(self):
        out = {"dim": self.dim, "radius": self.radius, "center": self.center.tolist(), "h": self.h}
        if self.hole:
            out["hole"] = self.hole
        return out


def make_ball(dim, radius, center=None, h=0.1, hole=0.0):
    return DiscreteBall(dim, radius, center, h, hole)


def make_annulus(dim, inner, outer, center=None, h=0.1):
    return DiscreteBall(dim, outer, center, h, hole=inner)


class DiscreteScalarField:
    """One finite value per node of ``ball``."""

    def __init__(self, ball, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (ball.size,):
            raise GridMismatch(f"expected {ball.size} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.ball = ball
        self.values = values

    @classmethod
    def from_function(cls, ball, fn):
        return cls(ball, np.asarray(fn(ball.points), dtype=float).reshape(ball.size))

    def __repr__(self):
        return f"DiscreteScalarField({self.ball!r})"

    def with_values(self, values):
        return DiscreteScalarField(self.ball, values)

    def __mul__(self, s):
        return self.with_values(s * self.values)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, DiscreteScalarField):
            _check_same(self.ball, other.ball)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, DiscreteScalarField):
            _check_same(self.ball, other.ball)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)


@dataclass
class GradientField:
    """Vectors at the interior nodes of ``ball`` (row order of interior_idx)."""

    ball: DiscreteBall
    vectors: np.ndarray


def _check_same(a, b):
    if not a.same_as(b):
        raise GridMismatch("fields live on different grids")


def gradient(u, node):
    """Central-difference gradient at one interior node."""
    ball = u.ball
    node = int(node)
    if node < 0 or node >= ball.size or not ball.interior[node]:
        raise BoundaryNode(f"node {node} is not interior")
    nb = ball.neighbors[node]
    return (u.values[nb[:, 1]] - u.values[nb[:, 0]]) / (2 * ball.h)


def gradient_field(u, nodes=None):
    ball = u.ball
    idx = ball.interior_idx if nodes is None else np.asarray(nodes)
    if not np.all(ball.interior[idx]):
        raise BoundaryNode("gradient requested at a boundary node")
    nb = ball.neighbors[idx]
    vec = (u.values[nb[..., 1]] - u.values[nb[..., 0]]) / (2 * ball.h)
    return GradientField(ball, vec)


def lp_norm(u, p):
    """Discrete L^p norm over interior nodes (weight h^n per node)."""
    if p < 1:
        raise ValueError("p must be at least 1")
    if isinstance(u, GradientField):
        ball = u.ball
        vals = np.linalg.norm(u.vectors, axis=-1)
    else:
        ball = u.ball
        vals = np.abs(u.values[ball.interior_idx])
    top = float(np.max(vals, initial=0.0))
    if top == 0.0:
        return 0.0
    # scale by the maximum so that tiny or huge fields neither underflow nor overflow
    return top * float(np.sum((vals / top) ** p) * ball.h**ball.dim) ** (1.0 / p)


def w1p_norm(u, p):
    return (lp_norm(u, p) ** p + lp_norm(gradient_field(u), p) ** p) ** (1.0 / p)


def linf_on(u, margin):
    """Max |u| over nodes at distance >= margin from the boundary sphere(s)."""
    ball = u.ball
    keep = ball.radii <= ball.radius - margin + _TOL
    if ball.hole:
        keep &= ball.radii >= ball.hole + margin - _TOL
    if not np.any(keep):
        return 0.0
    return float(np.max(np.abs(u.values[keep])))


def _holder_over_pairs(u, a, i, j):
    if len(i) == 0:
        return 0.0
    x = u.ball.points
    d = np.linalg.norm(x[i] - x[j], axis=-1)
    ok = d > 0
    return float(np.max(np.abs(u.values[i[ok]] - u.values[j[ok]]) / d[ok] ** a, initial=0.0))


def adjacent_pairs(ball):
    i = np.repeat(np.arange(ball.size), ball.dim)
    j = ball.neighbors[:, :, 1].ravel()
    ok = j >= 0
    return i[ok], j[ok]


def holder_seminorm(u, a, sample_pairs=100_000, seed=0, pairs=None):
    """Lower bound for [u]_{C^a}: adjacent pairs plus random long-range pairs.

    When the total number of pairs does not exceed ``sample_pairs`` every
    pair is used.  ``pairs`` replaces the random sample by explicit index
    arrays ``(i, j)``.
    """
    if not 0 < a <= 1:
        raise ValueError("Hölder exponent must lie in (0, 1]")
    n = u.ball.size
    ai, aj = adjacent_pairs(u.ball)
    best = _holder_over_pairs(u, a, ai, aj)
    if pairs is not None:
        i, j = (np.asarray(v, dtype=np.int64) for v in pairs)
        return max(best, _holder_over_pairs(u, a, i, j))
    if n * (n - 1) // 2 <= sample_pairs:
        for start in range(0, n, 512):
            i = np.arange(start, min(start + 512, n))
            ii, jj = np.meshgrid(i, np.arange(n), indexing="ij")
            m = jj > ii
            best = max(best, _holder_over_pairs(u, a, ii[m], jj[m]))
        return best
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, sample_pairs)
    j = rng.integers(0, n, sample_pairs)
    return max(best, _holder_over_pairs(u, a, i, j))


def interpolation_constants(n, p, a):
    """(c, C) with c = |B_1|^{1/p} and C = (n|B_1| / (n + a p))^{1/p}."""
    vol = unit_ball_volume(n)
    return vol ** (1.0 / p), (n * vol / (n + a * p)) ** (1.0 / p)


def interpolation_rhs(n, p, a, holder_bound, lp):
    c, big_c = interpolation_constants(n, p, a)
    e = n + a * p
    return (1.0 + big_c) / c * holder_bound ** (n / e) * lp ** (a * p / e)


@dataclass
class InterpolationCheck:
    lhs: float
    rhs: float
    holds: bool
    holder: float
    lp: float


def interpolation_bound(u, a, p, compact_margin, holder_bound, sample_pairs=100_000, seed=0):
    """Compare sup_K |u| with the interpolation estimate between L^p and C^a."""
    if holder_bound <= 0:
        raise ValueError("holder_bound must be positive")
    n = u.ball.dim
    holder = holder_seminorm(u, a, sample_pairs, seed)
    if holder > holder_bound * (1 + 1e-12):
        raise HypothesisViolated(f"[u]_C^a = {holder:.6g} exceeds M = {holder_bound:.6g}")
    lp = lp_norm(u, p)
    limit = compact_margin ** ((n + a * p) / p) * holder_bound
    if lp > limit * (1 + 1e-12):
        raise HypothesisViolated(f"|u|_Lp = {lp:.6g} exceeds delta0-limit {limit:.6g}")
    lhs = linf_on(u, compact_margin)
    rhs = interpolation_rhs(n, p, a, holder_bound, lp)
    return InterpolationCheck(lhs, rhs, lhs <= rhs * (1 + 1e-9), holder, lp)


def second_difference_bound(u, nodes=None):
    """max_j |grad u(. + h e_j) - grad u(.)|_{L^2} / h over nodes two layers inside."""
    ball = u.ball
    deep = ball.interior.copy()
    for a in range(ball.dim):
        for s in (0, 1):
            nb = ball.neighbors[:, a, s]
            deep &= (nb >= 0) & ball.interior[np.maximum(nb, 0)]
    if nodes is not None:
        mask = np.zeros(ball.size, dtype=bool)
        mask[np.asarray(nodes)] = True
        deep &= mask
    idx = np.flatnonzero(deep)
    if len(idx) == 0:
        return 0.0
    base = gradient_field(u, idx).vectors
    best = 0.0
    for j in range(ball.dim):
        shifted = gradient_field(u, ball.neighbors[idx, j, 1]).vectors
        q = np.sqrt(np.sum((shifted - base) ** 2) * ball.h**ball.dim) / ball.h
        best = max(best, float(q))
    return best


@dataclass
class NormReport:
    lp: float
    w1p: float
    linf_on: dict
    holder_seminorm: list

    def as_dict(self):
        return {"lp": self.lp, "w1p": self.w1p, "linf_on": self.linf_on,
                "holder_seminorm": [list(t) for t in self.holder_seminorm]}


def norm_report(u, p, margins=(0.25,), exponents=(0.5, 1.0), sample_pairs=100_000, seed=0):
    return NormReport(
        lp=lp_norm(u, p),
        w1p=w1p_norm(u, p),
        linf_on={str(m): linf_on(u, m) for m in margins},
        holder_seminorm=[(a, holder_seminorm(u, a, sample_pairs, seed)) for a in exponents],
    )


# ---------------------------------------------------------------------------
# field I/O


def write_field(u, path, name="value"):
    path = Path(path)
    cols = [f"x{i + 1}" for i in range(u.ball.dim)] + [name]
    data = np.column_stack([u.ball.points, u.values])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
    path.with_suffix(".json").write_text(json.dumps(u.ball.meta(), indent=2, sort_keys=True) + "\n")


def read_field(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    ball = DiscreteBall(meta["dim"], meta["radius"], meta["center"], meta["h"], meta.get("hole", 0.0))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if len(data) != ball.size:
        raise GridMismatch(f"{path} has {len(data)} rows, grid has {ball.size} nodes")
    if not np.allclose(data[:, :-1], ball.points, atol=1e-9 * max(1.0, ball.radius)):
        raise GridMismatch(f"{path} node coordinates do not match its sidecar")
    return DiscreteScalarField(ball, data[:, -1])


def load_boundary_csv(path, ball):
    """Values at ``ball`` nodes from a CSV of scattered samples (nearest lattice match)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    pts, vals = data[:, :-1], data[:, -1]
    if pts.shape[1] != ball.dim:
        raise GridMismatch("boundary CSV dimension does not match the grid")
    out = np.full(ball.size, np.nan)
    k = np.rint((pts - ball.center) / ball.h).astype(np.int64)
    idx = ball.node_at(k)
    ok = idx >= 0
    out[idx[ok]] = vals[ok]
    if np.any(np.isnan(out)):
        raise GridMismatch("boundary CSV does not cover every grid node")
    return DiscreteScalarField(ball, out)


def smooth_field_suite(ball, count=50, seed=0):
    """Random bumps, trigonometric fields and scaled coordinates on ``ball``."""
    rng = np.random.default_rng(seed)
    x = ball.points
    n = ball.dim
    out = []
    for i in range(count):
        kind = ("bump", "trig", "coordinate")[i % 3]
        s = rng.uniform(0.1, 2.0) * rng.choice([-1.0, 1.0])
        if kind == "bump":
            c = ball.center + rng.uniform(-0.5, 0.5, n) * ball.radius
            w = rng.uniform(0.2, 0.8) * ball.radius
            vals = s * np.exp(-np.sum((x - c) ** 2, axis=-1) / w**2)
        elif kind == "trig":
            k = rng.normal(size=n) * rng.uniform(1.0, 6.0) / ball.radius
            vals = s * np.sin(x @ k + rng.uniform(0, 2 * np.pi))
        else:
            a = rng.normal(size=n)
            vals = s * ((x - ball.center) @ a) / ball.radius
        out.append((kind, DiscreteScalarField(ball, vals)))
    return out

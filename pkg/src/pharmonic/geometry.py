"""Riemannian metrics on Euclidean charts and the tensors derived from them.

All evaluators are vectorised: a point argument of shape ``(..., n)``
returns arrays with the same leading shape.  Index conventions:

* ``g(x)[..., j, k]``           = g_{jk}
* ``g.grad(x)[..., i, j, k]``   = d_i g_{jk}
* ``gamma[..., k, i, j]``       = Gamma^k_{ij}
* ``phi.jacobian(x)[..., a, i]``  = d_i phi^a
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainEscape, SingularMetric

COND_LIMIT = 1e12
DEFAULT_HALF_WIDTH = 4.0


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)

    def dilated(self, center, eps):
        c = np.asarray(center, dtype=float)
        lo = (np.asarray(self.lo) - c) / eps
        hi = (np.asarray(self.hi) - c) / eps
        return Box(tuple(lo), tuple(hi))

    def lattice(self, per_axis):
        axes = [np.linspace(a, b, per_axis) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sample(self, count, rng):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return lo + (hi - lo) * rng.random((count, self.dim))


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    @property
    def dim(self):
        return len(self.center)

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) <= self.radius + tol

    def dilated(self, center, eps):
        c = (np.asarray(self.center) - np.asarray(center, dtype=float)) / eps
        return Ball(tuple(c), self.radius / eps)

    def lattice(self, per_axis):
        c = np.asarray(self.center)
        box = Box(tuple(c - self.radius), tuple(c + self.radius))
        pts = box.lattice(per_axis)
        return pts[self.contains(pts)]

    def sample(self, count, rng):
        d = rng.normal(size=(count, self.dim))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        r = self.radius * rng.random(count) ** (1.0 / self.dim)
        return np.asarray(self.center) + d * r[:, None]


def default_box(dim, half_width=DEFAULT_HALF_WIDTH):
    return Box((-half_width,) * dim, (half_width,) * dim)


# ---------------------------------------------------------------------------
# metric fields


def _central_grad(fn, x, step):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    out = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        out.append((fn(x + e) - fn(x - e)) / (2 * step))
    return np.stack(out, axis=-3)


class MetricField:
    """A symmetric positive-definite matrix field on a chart.

    ``eval_grad`` may be omitted, in which case second-order central
    differences with step ``fd_step`` are used.
    """

    def __init__(self, dim, eval, eval_grad=None, domain=None, name="metric",
                 spec=None, fd_step=1e-5):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self._eval = eval
        self._eval_grad = eval_grad
        self.domain = domain if domain is not None else default_box(dim)
        self.name = name
        self.spec = spec
        self.fd_step = fd_step

    def __repr__(self):
        return f"MetricField({self.name!r}, dim={self.dim})"

    def __call__(self, x):
        return self._eval(np.asarray(x, dtype=float))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self._eval_grad is not None:
            return self._eval_grad(x)
        return _central_grad(self._eval, x, self.fd_step)

    @property
    def has_analytic_grad(self):
        return self._eval_grad is not None

    def contains(self, x):
        return self.domain.contains(x)

    def dilated(self, center, eps):
        """The metric x~ -> g(center + eps*x~) seen on the unit-scale chart."""
        c = np.asarray(center, dtype=float)
        base = self

        def ev(x):
            return base(c + eps * x)

        def gr(x):
            return eps * base.grad(c + eps * x)

        return MetricField(self.dim, ev, gr, self.domain.dilated(c, eps),
                           name=f"{self.name}@eps={eps:g}")


def _sqnorm(x, center):
    return np.sum((x - center) ** 2, axis=-1)


def flat(dim):
    def ev(x):
        return np.broadcast_to(np.eye(dim), x.shape[:-1] + (dim, dim)).copy()

    def gr(x):
        return np.zeros(x.shape[:-1] + (dim, dim, dim))

    return MetricField(dim, ev, gr, name="flat",
                       spec={"family": "flat", "dim": dim, "params": {}})


def conformal(dim, kind="exp", **params):
    """Conformally flat metric c(x) * I.

    kinds:
      ``exp``    c = exp(a . x)                      params: a (vector)
      ``power``  c = (1 + b |x - x_c|^2)^k           params: b, k, center
      ``bump``   c = 1 + s exp(-|x - x_c|^2 / w^2)   params: s, center, width
    """
    eye = np.eye(dim)
    if kind == "exp":
        a = np.asarray(params.get("a", [1.0] + [0.0] * (dim - 1)), dtype=float)
        if a.shape != (dim,):
            raise ValueError("conformal exp: 'a' must have length dim")

        def c_and_grad(x):
            c = np.exp(x @ a)
            return c, c[..., None] * a

        clean = {"a": a.tolist()}
    elif kind == "power":
        b = float(params.get("b", 1.0))
        k = float(params.get("k", 1.0))
        xc = np.asarray(params.get("center", [0.0] * dim), dtype=float)

        def c_and_grad(x):
            q = 1.0 + b * _sqnorm(x, xc)
            c = q ** k
            return c, (k * q ** (k - 1) * 2 * b)[..., None] * (x - xc)

        clean = {"b": b, "k": k, "center": xc.tolist()}
    elif kind == "bump":
        s = float(params.get("s", 0.5))
        w = float(params.get("width", 0.5))
        xc = np.asarray(params.get("center", [0.2] + [0.1] * (dim - 1)), dtype=float)
        if s <= -1.0:
            raise ValueError("conformal bump needs s > -1")

        def c_and_grad(x):
            e = np.exp(-_sqnorm(x, xc) / w**2)
            return 1.0 + s * e, (s * e * -2.0 / w**2)[..., None] * (x - xc)

        clean = {"s": s, "width": w, "center": xc.tolist()}
    else:
        raise ValueError(f"unknown conformal kind {kind!r}")

    def ev(x):
        c, _ = c_and_grad(x)
        return c[..., None, None] * eye

    def gr(x):
        _, dc = c_and_grad(x)
        return dc[..., :, None, None] * eye

    spec = {"family": "conformal", "dim": dim, "params": {"kind": kind, **clean}}
    m = MetricField(dim, ev, gr, name=f"conformal-{kind}", spec=spec)
    m.conformal_factor = lambda x: c_and_grad(np.asarray(x, dtype=float))[0]
    return m


def diagonal(dim, const=None, coeffs=None):
    """g_jj(x) = const_j + sum_i coeffs[j][i] * (x^i)^2, off-diagonals zero."""
    const = np.ones(dim) if const is None else np.asarray(const, dtype=float)
    coeffs = np.zeros((dim, dim)) if coeffs is None else np.asarray(coeffs, dtype=float)
    if const.shape != (dim,) or coeffs.shape != (dim, dim):
        raise ValueError("diagonal: const must be (n,), coeffs (n, n)")
    idx = np.arange(dim)

    def ev(x):
        d = const + (x**2) @ coeffs.T
        out = np.zeros(x.shape[:-1] + (dim, dim))
        out[..., idx, idx] = d
        return out

    def gr(x):
        out = np.zeros(x.shape[:-1] + (dim, dim, dim))
        # d_i g_jj = 2 coeffs[j, i] x^i
        out[..., :, idx, idx] = 2.0 * coeffs.T * x[..., :, None]
        return out

    spec = {"family": "diagonal", "dim": dim,
            "params": {"const": const.tolist(), "coeffs": coeffs.tolist()}}
    return MetricField(dim, ev, gr, name="diagonal", spec=spec)


def _default_bump_matrix(dim):
    m = np.full((dim, dim), 0.5)
    np.fill_diagonal(m, 1.0)
    m[-1, -1] = -0.5
    return m


def perturbed(dim, s=0.3, center=None, width=0.6, matrix=None):
    """I + s * exp(-|x - x_c|^2 / w^2) * B with B symmetric, |B|_op = 1."""
    if not 0.0 <= s <= 0.4:
        raise ValueError("perturbed metric requires 0 <= s <= 0.4")
    xc = np.asarray(center if center is not None else [0.3] + [0.2] * (dim - 1), dtype=float)
    b = np.asarray(matrix if matrix is not None else _default_bump_matrix(dim), dtype=float)
    b = 0.5 * (b + b.T)
    b = b / np.max(np.abs(np.linalg.eigvalsh(b)))
    eye = np.eye(dim)

    def ev(x):
        e = np.exp(-_sqnorm(x, xc) / width**2)
        return eye + s * e[..., None, None] * b

    def gr(x):
        e = np.exp(-_sqnorm(x, xc) / width**2)
        de = (e * -2.0 / width**2)[..., None] * (x - xc)
        return s * de[..., :, None, None] * b

    spec = {"family": "perturbed", "dim": dim,
            "params": {"s": s, "center": xc.tolist(), "width": width, "matrix": b.tolist()}}
    return MetricField(dim, ev, gr, name="perturbed", spec=spec)


def constant(matrix):
    g0 = np.asarray(matrix, dtype=float)
    dim = g0.shape[0]

    def ev(x):
        return np.broadcast_to(g0, x.shape[:-1] + (dim, dim)).copy()

    def gr(x):
        return np.zeros(x.shape[:-1] + (dim, dim, dim))

    # constant metrics are the diagonal family when diagonal; otherwise
    # serialised as perturbed-free "constant"
    spec = {"family": "constant", "dim": dim, "params": {"matrix": g0.tolist()}}
    return MetricField(dim, ev, gr, name="constant", spec=spec)


def metric_from_spec(spec):
    """Build a metric from its JSON description."""
    family = spec.get("family")
    dim = int(spec.get("dim", 2))
    params = dict(spec.get("params", {}))
    if family == "flat":
        m = flat(dim)
    elif family == "conformal":
        kind = params.pop("kind", "exp")
        m = conformal(dim, kind, **params)
    elif family == "diagonal":
        m = diagonal(dim, params.get("const"), params.get("coeffs"))
    elif family == "perturbed":
        m = perturbed(dim, **params)
    elif family == "constant":
        m = constant(params["matrix"])
    else:
        raise ValueError(f"unknown metric family {family!r}")
    if "domain" in spec:
        d = spec["domain"]
        if "radius" in d:
            m.domain = Ball(tuple(d["center"]), float(d["radius"]))
        else:
            m.domain = Box(tuple(d["lo"]), tuple(d["hi"]))
    return m


def load_metric(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return GridMetric.from_csv(path)
    return metric_from_spec(json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# grid-sampled metrics


class GridMetric(MetricField):
    """Metric sampled on a regular lattice, NaN where unknown.

    Evaluation is multilinear; derivatives are second-order central
    differences of the samples (one-sided at the lattice edge).
    """

    def __init__(self, axes, values, name="grid-metric"):
        axes = [np.asarray(a, dtype=float) for a in axes]
        dim = len(axes)
        values = np.asarray(values, dtype=float)
        if values.shape != tuple(len(a) for a in axes) + (dim, dim):
            raise ValueError("values must have shape lattice + (n, n)")
        self.axes = axes
        self.values = values
        spacing = [a[1] - a[0] for a in axes]
        grads = []
        for i in range(dim):
            grads.append(np.gradient(values, spacing[i], axis=i))
        self.grad_values = np.stack(grads, axis=-3)
        self._interp_g = RegularGridInterpolator(axes, values, bounds_error=False,
                                                 fill_value=np.nan)
        self._interp_dg = RegularGridInterpolator(axes, self.grad_values,
                                                  bounds_error=False, fill_value=np.nan)
        lo = tuple(a[0] for a in axes)
        hi = tuple(a[-1] for a in axes)
        super().__init__(dim, self._ev, self._gr, Box(lo, hi), name=name,
                         spec={"family": "grid", "dim": dim})

    def _ev(self, x):
        shape = x.shape[:-1]
        out = self._interp_g(x.reshape(-1, self.dim))
        return out.reshape(shape + (self.dim, self.dim))

    def _gr(self, x):
        shape = x.shape[:-1]
        out = self._interp_dg(x.reshape(-1, self.dim))
        return out.reshape(shape + (self.dim,) * 3)

    def contains(self, x):
        inside = self.domain.contains(x)
        vals = self(np.asarray(x, dtype=float))
        return inside & np.all(np.isfinite(vals), axis=(-1, -2))

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = np.array([[float(v) for v in r] for r in reader if r])
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        dim = len(xcols)
        gcols = {h: i for i, h in enumerate(header) if h.startswith("g")}
        pts = rows[:, xcols]
        axes = []
        for k in range(dim):
            u = np.unique(np.round(pts[:, k], 12))
            if len(u) > 1 and not np.allclose(np.diff(u), u[1] - u[0], rtol=1e-6):
                raise ValueError("grid metric CSV must lie on a uniform lattice")
            axes.append(u)
        values = np.full(tuple(len(a) for a in axes) + (dim, dim), np.nan)
        index = [np.searchsorted(axes[k], np.round(pts[:, k], 12)) for k in range(dim)]
        for j in range(dim):
            for k in range(dim):
                key = f"g{j + 1}{k + 1}"
                alt = f"g{k + 1}{j + 1}"
                col = gcols.get(key, gcols.get(alt))
                if col is None:
                    raise ValueError(f"grid metric CSV lacks column {key}")
                values[tuple(index) + (j, k)] = rows[:, col]
        return cls(axes, values, name=Path(path).stem)

    def to_csv(self, path, upper_only=True):
        dim = self.dim
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = self.values.reshape(-1, dim, dim)
        keep = np.all(np.isfinite(vals), axis=(1, 2))
        pairs = [(j, k) for j in range(dim) for k in range(dim) if (k >= j or not upper_only)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(dim)] + [f"g{j + 1}{k + 1}" for j, k in pairs])
            for p_, v in zip(pts[keep], vals[keep]):
                w.writerow([repr(float(c)) for c in p_] + [repr(float(v[j, k])) for j, k in pairs])


# ---------------------------------------------------------------------------
# derived tensors


def inverse_and_det(g, x):
    """Return ``(g^{-1}(x), |g|(x))``; raises SingularMetric on bad points."""
    gx = g(x) if isinstance(g, MetricField) else np.asarray(g, dtype=float)
    if not np.all(np.isfinite(gx)):
        raise DomainEscape("metric undefined at requested point")
    lam = np.linalg.eigvalsh(0.5 * (gx + np.swapaxes(gx, -1, -2)))
    lmin, lmax = lam[..., 0], lam[..., -1]
    if np.any(lmin <= 0):
        raise SingularMetric("metric not positive definite")
    if np.any(lmax / lmin > COND_LIMIT):
        raise SingularMetric("metric condition number exceeds 1e12")
    return np.linalg.inv(gx), np.prod(lam, axis=-1)


@dataclass(frozen=True)
class ChristoffelField:
    metric: MetricField

    def gamma(self, x):
        x = np.asarray(x, dtype=float)
        ginv, _ = inverse_and_det(self.metric, x)
        dg = self.metric.grad(x)
        t = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
        return 0.5 * np.einsum("...kl,...ijl->...kij", ginv, t)

    def contracted(self, x):
        x = np.asarray(x, dtype=float)
        ginv, _ = inverse_and_det(self.metric, x)
        return np.einsum("...ij,...kij->...k", ginv, self.gamma(x))


def christoffel(g):
    return ChristoffelField(g)


def christoffel_pharmonic_residual(g, p, x):
    """r^k = Gamma^k - (p-2)/2 g^{ki} d_i log g^{kk}; zero iff x^k is p-harmonic."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    x = np.asarray(x, dtype=float)
    ginv, _ = inverse_and_det(g, x)
    dg = g.grad(x)
    gam = christoffel(g).contracted(x)
    # d_i g^{kk} = -(g^{-1} d_i g g^{-1})_{kk}
    dginv_diag = -np.einsum("...ka,...iab,...bk->...ik", ginv, dg, ginv)
    diag = np.diagonal(ginv, axis1=-2, axis2=-1)
    dlog = dginv_diag / diag[..., None, :]
    term = np.einsum("...ki,...ik->...k", ginv, dlog)
    return gam - 0.5 * (p - 2) * term


# ---------------------------------------------------------------------------
# maps


class SampledMap:
    """A map phi between charts with its Jacobian (and optional inverse)."""

    def __init__(self, dim_in, dim_out, eval, jacobian=None, inverse=None,
                 source_domain=None, name="map", spec=None, fd_step=1e-6):
        self.dim_in = dim_in
        self.dim_out = dim_out
        self._eval = eval
        self._jac = jacobian
        self._inverse = inverse
        self.source_domain = source_domain
        self.name = name
        self.spec = spec
        self.fd_step = fd_step

    def __repr__(self):
        return f"SampledMap({self.name!r}, {self.dim_in}->{self.dim_out})"

    def __call__(self, x):
        return self._eval(np.asarray(x, dtype=float))

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self._jac is not None:
            return self._jac(x)
        cols = []
        for i in range(self.dim_in):
            e = np.zeros(self.dim_in)
            e[i] = self.fd_step
            cols.append((self._eval(x + e) - self._eval(x - e)) / (2 * self.fd_step))
        return np.stack(cols, axis=-1)

    @property
    def invertible(self):
        return self._inverse is not None

    def inverse(self, y):
        if self._inverse is None:
            raise NotImplementedError(f"{self.name} has no closed-form inverse")
        return self._inverse(np.asarray(y, dtype=float))


def linear_map(matrix, offset=None, name="linear", spec=None):
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    b = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    ainv = np.linalg.inv(a) if abs(np.linalg.det(a)) > 1e-14 else None

    def ev(x):
        return x @ a.T + b

    def jac(x):
        return np.broadcast_to(a, x.shape[:-1] + a.shape).copy()

    inv = (lambda y: (y - b) @ ainv.T) if ainv is not None else None
    if spec is None:
        spec = {"type": "affine", "dim": n, "params": {"matrix": a.tolist(), "offset": b.tolist()}}
    return SampledMap(n, n, ev, jac, inv, name=name, spec=spec)


def rotation_matrix(dim, angle, plane=(0, 1)):
    r = np.eye(dim)
    i, j = plane
    c, s = np.cos(angle), np.sin(angle)
    r[i, i], r[i, j], r[j, i], r[j, j] = c, -s, s, c
    return r


def rotation(dim, angle, plane=(0, 1)):
    spec = {"type": "rotation", "dim": dim, "params": {"angle": angle, "plane": list(plane)}}
    return linear_map(rotation_matrix(dim, angle, plane), name="rotation", spec=spec)


def dilation(dim, s):
    spec = {"type": "dilation", "dim": dim, "params": {"s": s}}
    return linear_map(s * np.eye(dim), name="dilation", spec=spec)


def translation(t):
    t = np.asarray(t, dtype=float)
    spec = {"type": "translation", "dim": len(t), "params": {"t": t.tolist()}}
    return linear_map(np.eye(len(t)), t, name="translation", spec=spec)


def inversion(dim, center=None, radius=1.0):
    """phi(x) = a + r^2 (x - a) / |x - a|^2, its own inverse."""
    a = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    r2 = radius**2
    eye = np.eye(dim)

    def ev(x):
        y = x - a
        return a + r2 * y / np.sum(y * y, axis=-1, keepdims=True)

    def jac(x):
        y = x - a
        q = np.sum(y * y, axis=-1)[..., None, None]
        return r2 * (eye / q - 2.0 * y[..., :, None] * y[..., None, :] / q**2)

    spec = {"type": "inversion", "dim": dim, "params": {"center": a.tolist(), "radius": radius}}
    return SampledMap(dim, dim, ev, jac, ev, name="inversion", spec=spec)


def z_squared():
    def ev(x):
        u, v = x[..., 0], x[..., 1]
        return np.stack([u * u - v * v, 2 * u * v], axis=-1)

    def jac(x):
        u, v = x[..., 0], x[..., 1]
        return np.stack([np.stack([2 * u, -2 * v], -1), np.stack([2 * v, 2 * u], -1)], -2)

    spec = {"type": "z-squared", "dim": 2, "params": {}}
    return SampledMap(2, 2, ev, jac, None, name="z-squared", spec=spec)


def identity_map(dim):
    spec = {"type": "identity", "dim": dim, "params": {}}
    return linear_map(np.eye(dim), name="identity", spec=spec)


def compose(*maps):
    """compose(f, g, h)(x) = h(g(f(x))): maps applied left to right."""
    if not maps:
        raise ValueError("compose needs at least one map")

    def ev(x):
        for m in maps:
            x = m(x)
        return x

    def jac(x):
        j = None
        for m in maps:
            jm = m.jacobian(x)
            j = jm if j is None else jm @ j
            x = m(x)
        return j

    def inverse(y):
        for m in reversed(maps):
            y = m.inverse(y)
        return y

    inv = inverse if all(m.invertible for m in maps) else None

    spec = {"type": "composition", "dim": maps[0].dim_in,
            "maps": [m.spec for m in maps]}
    return SampledMap(maps[0].dim_in, maps[-1].dim_out, ev, jac, inv,
                      name="∘".join(m.name for m in reversed(maps)), spec=spec)


def map_from_spec(spec):
    kind = spec.get("type")
    dim = int(spec.get("dim", 2))
    p = spec.get("params", {})
    if kind == "identity":
        return identity_map(dim)
    if kind == "rotation":
        return rotation(dim, float(p.get("angle", 0.0)), tuple(p.get("plane", (0, 1))))
    if kind == "dilation":
        return dilation(dim, float(p.get("s", 1.0)))
    if kind == "translation":
        return translation(p["t"])
    if kind in ("affine", "linear"):
        return linear_map(p["matrix"], p.get("offset"), spec=spec)
    if kind == "inversion":
        return inversion(dim, p.get("center"), float(p.get("radius", 1.0)))
    if kind == "z-squared":
        return z_squared()
    if kind == "composition":
        return compose(*[map_from_spec(s) for s in spec["maps"]])
    raise ValueError(f"unknown map type {kind!r}")


def pullback_metric(h, phi, x):
    """(phi^* h)_{ij}(x) = d_i phi^a  h_ab(phi(x))  d_j phi^b."""
    x = np.asarray(x, dtype=float)
    y = phi(x)
    if not np.all(h.contains(y)):
        raise DomainEscape(f"{phi.name} leaves the domain of {h.name}")
    j = phi.jacobian(x)
    hy = h(y)
    out = np.einsum("...ai,...ab,...bj->...ij", j, hy, j)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def pullback_field(h, phi):
    """phi^* h as a MetricField (finite-difference derivatives)."""
    return MetricField(phi.dim_in, lambda x: pullback_metric(h, phi, x),
                       domain=phi.source_domain or default_box(phi.dim_in),
                       name=f"{phi.name}^*{h.name}")

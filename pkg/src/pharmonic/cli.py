"""Command line front end: ``pharm <command> [options]``.

Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 usage error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, gallery
from .errors import (BadExponent, PharmonicError, SignalBelowNoise, TooCoarse,
                     UnknownGalleryItem, UsageError)

log = logging.getLogger("pharmonic")

COMMANDS = ("solve-dirichlet", "build-coords", "rates", "check-conformal", "interp-check",
            "gallery")

BOUNDARY_DATA = {
    "x1": lambda x: x[:, 0],
    "saddle": lambda x: x[:, 0] ** 2 - x[:, 1] ** 2,
    "smooth": lambda x: x[:, 0] + 0.3 * x[:, 1] ** 2 + 0.2 * np.sin(2 * x[:, 0]),
    "quadratic": lambda x: np.sum(x**2, axis=-1),
}

# option name -> (type, default); None means required
OPTIONS = {
    "solve-dirichlet": {
        "metric": (str, None), "p": (float, None), "radius": (float, 1.0), "h": (float, 0.05),
        "center": (str, None), "boundary": (str, "x1"), "out": (str, None),
        "report": (str, None), "max_ratio": (float, 1.05), "residual_tol": (float, 1e-6),
        "dim": (int, 2), "seed": (int, 0),
    },
    "build-coords": {
        "metric": (str, None), "p": (float, None), "x0": (str, None), "S": (str, None),
        "jac_tol": (float, 0.05), "eps": (str, None), "h_ratio": (int, 32), "out": (str, None),
        "report": (str, None), "dim": (int, 2), "seed": (int, 0),
    },
    "rates": {
        "metric": (str, "bump-perturbed"), "p": (float, None), "eps": (str, "0.4,0.2,0.1,0.05"),
        "x0": (str, None), "expected": (float, None), "window": (float, 0.3),
        "report": (str, None), "dim": (int, 2), "seed": (int, 0),
    },
    "check-conformal": {
        "metric_g": (str, "flat"), "metric_h": (str, "flat"), "map": (str, None),
        "grid": (str, "annulus:0.5,1.0,0.05"), "jacobian": (str, "analytic"),
        "k_threshold": (float, 1.01), "report": (str, None), "dim": (int, 2), "seed": (int, 0),
    },
    "interp-check": {
        "field": (str, "suite"), "count": (int, 50), "a": (float, 0.5), "p": (float, 2.0),
        "margin": (float, 0.5), "M": (float, None), "radius": (float, 1.0), "h": (float, 0.05),
        "report": (str, None), "dim": (int, 2), "seed": (int, 0),
    },
}

REQUIRED_MISSING = {"metric": "--metric", "p": "--p", "map": "--map"}


@dataclass
class RunConfig:
    command: str
    params: dict
    action: str | None = None
    name: str | None = None
    directory: str = "."


@dataclass
class RunReport:
    command: str
    params: dict
    result: dict
    verdicts: dict
    versions: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def passed(self):
        return all(self.verdicts.values())

    def as_dict(self):
        return {"command": self.command, "params": self.params, "versions": self.versions,
                "result": self.result, "verdicts": self.verdicts, "passed": self.passed}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="pharm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, opts in OPTIONS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config")
        for key, (typ, _) in opts.items():
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, type=typ, default=None)
    gp = sub.add_parser("gallery")
    gp.add_argument("action", choices=("list", "emit"))
    gp.add_argument("name", nargs="?")
    gp.add_argument("--dir", default=".")
    gp.add_argument("--dim", type=int, default=2)
    return parser


def parse_config(argv, config_path=None):
    """Merge defaults, an optional JSON config file and explicit flags."""
    args = _build_parser().parse_args(argv)
    if args.command == "gallery":
        if args.action == "emit" and not args.name:
            raise UsageError("gallery emit needs a name")
        return RunConfig("gallery", {"dim": args.dim}, args.action, args.name, args.dir)
    opts = OPTIONS[args.command]
    params = {k: d for k, (_, d) in opts.items()}
    path = config_path or args.config
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        for key, value in data.items():
            k = key.replace("-", "_")
            if k not in opts:
                raise UsageError(f"unknown config key {key!r}")
            params[k] = opts[k][0](value)
    for key in opts:
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    for key, flag in REQUIRED_MISSING.items():
        if key in params and params[key] is None:
            raise UsageError(f"missing {flag}")
    cfg = RunConfig(args.command, params)
    _validate(cfg)
    return cfg


def _vector(text, n=None):
    try:
        v = np.array([float(t) for t in str(text).replace(";", ",").split(",") if t.strip()])
    except ValueError as exc:
        raise UsageError(f"bad vector {text!r}") from exc
    if n is not None and len(v) != n:
        raise UsageError(f"expected {n} components in {text!r}")
    return v


def _matrix(text, n):
    rows = [r for r in str(text).split(";") if r.strip()]
    try:
        m = np.array([[float(t) for t in r.split(",")] for r in rows])
    except ValueError as exc:
        raise UsageError(f"bad matrix {text!r}") from exc
    if m.shape != (n, n):
        raise UsageError(f"expected a {n}x{n} matrix, got {m.shape}")
    return m


def _validate(cfg):
    p = cfg.params
    if "p" in p and p["p"] is not None and not p["p"] > 1:
        raise UsageError("--p must exceed 1")
    if cfg.command == "rates":
        eps = _vector(p["eps"])
        if len(eps) < 4 or eps.max() / eps.min() < 8 * (1 - 1e-12) or np.any(eps <= 0):
            raise UsageError("--eps needs >= 4 positive radii spanning a factor of 8")
    if cfg.command in ("solve-dirichlet", "interp-check"):
        if p["h"] <= 0 or p["radius"] <= 0 or p["h"] > p["radius"] / 2:
            raise UsageError("--h must lie in (0, radius/2]")
    if cfg.command == "check-conformal" and p["jacobian"] not in ("analytic", "grid"):
        raise UsageError("--jacobian must be 'analytic' or 'grid'")


# ---------------------------------------------------------------------------
# commands


def _metric(ref, dim):
    try:
        return gallery.resolve_metric(ref, dim)
    except UnknownGalleryItem as exc:
        raise UsageError(str(exc)) from exc


def _run_solve(p):
    from .aop import make_aoperator
    from .grid import DiscreteBall, DiscreteScalarField, load_boundary_csv, write_field
    from .solver import SolverConfig, solve_dirichlet

    g = _metric(p["metric"], p["dim"])
    n = g.dim
    center = np.zeros(n) if p["center"] is None else _vector(p["center"], n)
    ball = DiscreteBall(n, p["radius"], center, p["h"])
    if p["boundary"] in BOUNDARY_DATA:
        fn = BOUNDARY_DATA[p["boundary"]]
        f = DiscreteScalarField(ball, fn(ball.points - center) if n > 1 else ball.points[:, 0])
    elif Path(p["boundary"]).exists():
        f = load_boundary_csv(p["boundary"], ball)
    else:
        raise UsageError(f"unknown boundary data {p['boundary']!r}")
    sol = solve_dirichlet(make_aoperator(g, p["p"]), ball, f, SolverConfig(seed=p["seed"]))
    if p["out"]:
        write_field(sol.u, p["out"], name="u")
    verdicts = {"energy_bound_ratio": sol.energy_bound_ratio <= p["max_ratio"],
                "final_residual": sol.final_residual <= p["residual_tol"]}
    return sol.as_dict(), verdicts


def _run_coords(p):
    from .coords import DEFAULT_SCHEDULE, ChartRequest, build_chart
    from .grid import write_field
    from .solver import SolverConfig

    g = _metric(p["metric"], p["dim"])
    n = g.dim
    x0 = np.zeros(n) if p["x0"] is None else _vector(p["x0"], n)
    S = np.eye(n) if p["S"] is None else _matrix(p["S"], n)
    eps = DEFAULT_SCHEDULE if p["eps"] is None else tuple(_vector(p["eps"]))
    try:
        req = ChartRequest(g, p["p"], x0, S, eps, p["jac_tol"], SolverConfig(seed=p["seed"]),
                           p["h_ratio"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = build_chart(req)
    if p["out"]:
        out = Path(p["out"])
        out.mkdir(parents=True, exist_ok=True)
        for k, u in enumerate(res.U):
            write_field(u, out / f"u{k + 1}.csv", name=f"u{k + 1}")
    return res.as_dict(), {"jac_error": res.jac_error < p["jac_tol"]}


def _run_rates(p):
    from .coords import expected_rate, rate_study
    from .solver import SolverConfig

    g = _metric(p["metric"], p["dim"])
    x0 = np.zeros(g.dim) if p["x0"] is None else _vector(p["x0"], g.dim)
    study = rate_study(g, p["p"], x0, _vector(p["eps"]), SolverConfig(seed=p["seed"]))
    expected = expected_rate(p["p"]) if p["expected"] is None else p["expected"]
    if study.status == "exact":
        ok = True
    else:
        ok = abs(study.fitted_slope - expected) <= p["window"]
    result = study.as_dict()
    result["slope_window"] = [expected - p["window"], expected + p["window"]]
    return result, {"fitted_slope": ok}


def _parse_grid(text, n):
    from .grid import DiscreteBall

    kind, _, rest = str(text).partition(":")
    vals = _vector(rest)
    try:
        if kind == "ball" and len(vals) == 2:
            return DiscreteBall(n, vals[0], None, vals[1])
        if kind == "annulus" and len(vals) == 3:
            return DiscreteBall(n, vals[1], None, vals[2], hole=vals[0])
    except (ValueError, TooCoarse) as exc:
        raise UsageError(str(exc)) from exc
    raise UsageError("--grid must be 'ball:R,h' or 'annulus:r,R,h'")


def _run_conformal(p):
    from .conformal import distortion

    try:
        phi = gallery.resolve_map(p["map"], p["dim"])
    except UnknownGalleryItem as exc:
        raise UsageError(str(exc)) from exc
    n = phi.dim_in
    g = _metric(p["metric_g"], n)
    h = _metric(p["metric_h"], phi.dim_out)
    grid = _parse_grid(p["grid"], n)
    rep = distortion(phi, g, h, grid, jacobian=p["jacobian"])
    k = max(rep.ess_sup_K, rep.ess_sup_K_euclidean)
    return rep.as_dict(), {"ess_sup_K": bool(k <= p["k_threshold"])}


def _run_interp(p):
    from .grid import (DiscreteBall, holder_seminorm, interpolation_bound, lp_norm, read_field,
                       smooth_field_suite)

    n = p["dim"]
    if p["field"] == "suite":
        ball = DiscreteBall(n, p["radius"], None, p["h"])
        fields = smooth_field_suite(ball, p["count"], p["seed"])
    else:
        try:
            fields = [(p["field"], read_field(p["field"]))]
        except OSError as exc:
            raise UsageError(f"cannot read field {p['field']}: {exc}") from exc
    rows = []
    for label, u in fields:
        m = p["M"]
        if m is None:
            e = (u.ball.dim + p["a"] * p["p"]) / p["p"]
            m = max(holder_seminorm(u, p["a"], seed=p["seed"]),
                    lp_norm(u, p["p"]) / p["margin"] ** e, 1e-300)
        chk = interpolation_bound(u, p["a"], p["p"], p["margin"], m, seed=p["seed"])
        rows.append({"field": label, "lhs": chk.lhs, "rhs": chk.rhs, "holds": bool(chk.holds),
                     "M": m})
    failures = sum(not r["holds"] for r in rows)
    return {"checks": rows, "failures": failures}, {"interpolation_bound": failures == 0}


RUNNERS = {
    "solve-dirichlet": _run_solve,
    "build-coords": _run_coords,
    "rates": _run_rates,
    "check-conformal": _run_conformal,
    "interp-check": _run_interp,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(report, path):
    path = Path(path)
    text = json.dumps(_jsonable(report.as_dict()), indent=2, sort_keys=True) + "\n"
    path.write_text(text)
    timing = path.with_name(path.stem + ".timing.json")
    timing.write_text(json.dumps({"wall_time_s": report.wall_time}, indent=2) + "\n")


def run(cfg):
    """Execute a parsed configuration; returns (RunReport or None, exit code)."""
    if cfg.command == "gallery":
        if cfg.action == "list":
            for name in gallery.names():
                print(name)
            return None, 0
        try:
            path = gallery.emit(cfg.name, cfg.directory, cfg.params["dim"])
        except UnknownGalleryItem as exc:
            print(f"error: {exc}", file=sys.stderr)
            return None, 2
        print(path)
        return None, 0

    t0 = time.perf_counter()
    try:
        result, verdicts = RUNNERS[cfg.command](cfg.params)
    except UsageError:
        raise
    except (BadExponent, TooCoarse) as exc:
        raise UsageError(str(exc)) from exc
    except SignalBelowNoise as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        rep = RunReport(cfg.command, cfg.params, exc.study.as_dict() if exc.study else {},
                        {"signal_above_noise": False}, _versions())
        if cfg.params.get("report"):
            write_report(rep, cfg.params["report"])
        return rep, 3
    except PharmonicError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return None, 3
    rep = RunReport(cfg.command, cfg.params, result, verdicts, _versions(),
                    time.perf_counter() - t0)
    if cfg.params.get("report"):
        write_report(rep, cfg.params["report"])
    for key, ok in verdicts.items():
        print(f"{key}: {'pass' if ok else 'FAIL'}")
    return rep, 0 if rep.passed else 1


def _versions():
    return {"pharmonic": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv
                        else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
        _, code = run(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":
    sys.exit(main())

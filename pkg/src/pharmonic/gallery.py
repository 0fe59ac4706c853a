"""Named metrics and maps used by the CLI and the test-suite."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import UnknownGalleryItem


def _diagonal_poly(n):
    return geo.diagonal(n, np.ones(n), 0.5 * (1 - np.eye(n)))


METRICS = {
    "flat": (geo.flat, "Euclidean metric"),
    "conformal-exp": (lambda n: geo.conformal(n, "exp", a=[1.0] + [0.0] * (n - 1)),
                      "exp(x1) I"),
    "conformal-exp2": (lambda n: geo.conformal(n, "exp", a=[2.0] + [0.0] * (n - 1)),
                       "exp(2 x1) I"),
    "conformal-sphere": (lambda n: geo.conformal(n, "power", b=1.0, k=-2.0),
                         "(1 + |x|^2)^-2 I, round sphere in stereographic coordinates"),
    "conformal-quadratic": (lambda n: geo.conformal(n, "power", b=1.0, k=1.0), "(1 + |x|^2) I"),
    "conformal-bump": (lambda n: geo.conformal(n, "bump", s=0.5, width=0.5), "(1 + bump) I"),
    "diagonal-poly": (_diagonal_poly, "diag(1 + sum_i c_ji (x^i)^2)"),
    "bump-perturbed": (lambda n: geo.perturbed(n, s=0.3), "I + 0.3 * smooth symmetric bump"),
}

CONFORMAL_METRICS = ("flat", "conformal-exp", "conformal-exp2", "conformal-sphere",
                     "conformal-quadratic", "conformal-bump")


def _mobius(n):
    shift = np.zeros(n)
    shift[0] = 2.0
    return geo.compose(geo.translation(shift), geo.inversion(n), geo.dilation(n, 3.0),
                       geo.rotation(n, 0.3))


def _z_squared(n):
    if n != 2:
        raise UnknownGalleryItem("z-squared-2d exists only in dimension 2")
    return geo.z_squared()


def _stretch(n):
    m = np.eye(n)
    m[0, 0] = 2.0
    return geo.linear_map(m, name="anisotropic-stretch",
                          spec={"type": "linear", "dim": n,
                                "params": {"matrix": m.tolist(), "offset": [0.0] * n}})


MAPS = {
    "identity": (geo.identity_map, True),
    "rotation": (lambda n: geo.rotation(n, np.pi / 6), True),
    "dilation": (lambda n: geo.dilation(n, 2.0), True),
    "translation": (lambda n: geo.translation([0.5] + [-0.25] * (n - 1)), True),
    "inversion": (lambda n: geo.inversion(n), True),
    "mobius-composition": (_mobius, True),
    "z-squared-2d": (_z_squared, True),
    "anisotropic-stretch": (_stretch, False),
}


def names():
    return sorted(METRICS) + sorted(MAPS)


def metric(name, dim=2):
    try:
        return METRICS[name][0](dim)
    except KeyError:
        raise UnknownGalleryItem(f"unknown metric {name!r}") from None


def sampled_map(name, dim=2):
    try:
        return MAPS[name][0](dim)
    except KeyError:
        raise UnknownGalleryItem(f"unknown map {name!r}") from None


def spec(name, dim=2):
    if name in METRICS:
        return {"kind": "metric", "name": name, **metric(name, dim).spec}
    if name in MAPS:
        return {"kind": "map", "name": name, **sampled_map(name, dim).spec}
    raise UnknownGalleryItem(f"unknown gallery item {name!r}")


def emit(name, directory=".", dim=2):
    path = Path(directory) / f"{name}.json"
    path.write_text(json.dumps(spec(name, dim), indent=2, sort_keys=True) + "\n")
    return path


def resolve_metric(ref, dim=2):
    """A metric from a gallery name or a JSON/CSV file."""
    if ref in METRICS:
        return metric(ref, dim)
    path = Path(ref)
    if not path.exists():
        raise UnknownGalleryItem(f"{ref!r} is neither a gallery metric nor a file")
    if path.suffix.lower() == ".csv":
        return geo.GridMetric.from_csv(path)
    data = json.loads(path.read_text())
    if data.get("kind") == "map":
        raise UnknownGalleryItem(f"{ref} describes a map, not a metric")
    return geo.metric_from_spec(data)


def resolve_map(ref, dim=2):
    if ref in MAPS:
        return sampled_map(ref, dim)
    path = Path(ref)
    if not path.exists():
        raise UnknownGalleryItem(f"{ref!r} is neither a gallery map nor a file")
    data = json.loads(path.read_text())
    if data.get("kind") == "metric":
        raise UnknownGalleryItem(f"{ref} describes a metric, not a map")
    return geo.map_from_spec(data)

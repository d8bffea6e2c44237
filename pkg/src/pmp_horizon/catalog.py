"""Built-in problem instances used by the tests, demos and ``pmp-horizon list``."""

from __future__ import annotations

import math
from typing import Any, Callable, Mapping

from .problem import ProblemError, ProblemSpec, validate

__all__ = ["CATALOG", "catalog_names", "catalog_raw", "catalog_get", "riccati_gain", "describe"]


def riccati_gain(a: float, rho: float) -> float:
    """Positive root of ``p**2 + (rho - 2a) p - 1 = 0``.

    This is the feedback gain ``u = -p x`` of the scalar discounted regulator
    ``x' = a x + u``, ``min int exp(-rho t) (x^2 + u^2) dt``.
    """
    b = rho - 2.0 * a
    return (-b + math.sqrt(b * b + 4.0)) / 2.0


def _zero_gradient(p: Mapping[str, float]) -> dict[str, Any]:
    return {
        "state_dim": 1, "control_dim": 1, "params": dict(p),
        "f": ["-x0 + u0"],
        "g": "exp(-t)*u0",
        "control_set": [{"lo": "0", "hi": "1"}],
        "candidate": ["0"],
        "x0": [0.0],
    }


def _decay_discount(p: Mapping[str, float]) -> dict[str, Any]:
    # u0 = 1 is the argmax of the Hamiltonian because the Cauchy costate is positive
    return {
        "state_dim": 1, "control_dim": 1, "params": dict(p),
        "f": ["-x0 + u0"],
        "g": "exp(-rho*t)*x0",
        "control_set": [{"lo": "-1", "hi": "1"}],
        "candidate": ["1"],
        "x0": [0.0],
    }


def _ss_cubic(p: Mapping[str, float]) -> dict[str, Any]:
    return {
        "state_dim": 1, "control_dim": 1, "params": dict(p),
        "f": ["-u0"],
        "g": "exp(-t)*(pow(x0,3) + u0)",
        "control_set": [{"lo": "c", "hi": "d"}],
        "candidate": ["c"],
        "x0": [1.0],
    }


def _lq_riccati(p: Mapping[str, float]) -> dict[str, Any]:
    params = dict(p)
    params["k"] = riccati_gain(params["a"], params["rho"])
    params.setdefault("xi", 1.0)
    # open-loop form of the optimal feedback u = -k x along x(t) = xi exp((a-k)t)
    return {
        "state_dim": 1, "control_dim": 1, "params": params,
        "f": ["a*x0 + u0"],
        "g": "-exp(-rho*t)*(pow(x0,2) + pow(u0,2))",
        "control_set": [{"lo": "-10", "hi": "10"}],
        "candidate": ["-k*xi*exp((a - k)*t)"],
        "x0": [params["xi"]],
    }


def _planar_rotation(p: Mapping[str, float]) -> dict[str, Any]:
    return {
        "state_dim": 2, "control_dim": 1, "params": dict(p),
        "f": ["-x0*mu + x1 + u0", "-x0 - mu*x1"],
        "g": "exp(-t)*x0",
        "control_set": [{"lo": "0", "hi": "1"}],
        "candidate": ["0"],
        "x0": [0.0, 0.0],
    }


CATALOG: dict[str, tuple[Callable[[Mapping[str, float]], dict[str, Any]], dict[str, float], str]] = {
    "zero-gradient": (_zero_gradient, {}, "cost independent of the state; the costate vanishes"),
    "decay-discount": (_decay_discount, {"rho": 1.0}, "linear decay with discounted linear reward"),
    "ss-cubic": (_ss_cubic, {"c": 0.1, "d": 1.0},
                 "x' = -u, reward exp(-t)(x^3 + u); no standard condition at infinity"),
    "lq-riccati": (_lq_riccati, {"a": -0.5, "rho": 1.0, "xi": 1.0},
                   "scalar discounted regulator with the Riccati-optimal control"),
    "planar-rotation": (_planar_rotation, {"mu": 0.5}, "damped rotation; non-diagonal fundamental matrix"),
}


def catalog_names() -> list[str]:
    return list(CATALOG)


def catalog_raw(name: str, overrides: Mapping[str, float] | None = None) -> dict[str, Any]:
    """Raw problem mapping of a catalog entry with parameter overrides applied."""
    try:
        build, defaults, _ = CATALOG[name]
    except KeyError:
        raise ProblemError(f"unknown catalog problem {name!r}; known: {', '.join(CATALOG)}") from None
    params = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in defaults:
            raise ProblemError(f"{name}: unknown parameter {key!r}")
        params[key] = float(value)
    raw = build(params)
    raw["name"] = name
    return raw


def catalog_get(name: str, overrides: Mapping[str, float] | None = None) -> ProblemSpec:
    return validate(catalog_raw(name, overrides))


def describe(name: str) -> str:
    return CATALOG[name][2]

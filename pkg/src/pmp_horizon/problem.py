"""Problem instances: dynamics, running cost, control set and candidate control.

A :class:`ProblemSpec` is built from a plain mapping (usually read from a TOML
file or taken from :mod:`pmp_horizon.catalog`) by :func:`validate`.  The raw
mapping looks like::

    {
        "name": "decay-discount",
        "state_dim": 1,
        "control_dim": 1,
        "params": {"rho": 1.0},
        "f": ["-x0 + u0"],
        "g": "exp(-rho*t)*x0",
        "control_set": [{"lo": "-1", "hi": "1"}],      # or {"values": [0, 1]}
        "candidate": ["1"],                            # or {"breakpoints": [...], "pieces": [[...], ...]}
        "x0": [0.0],
        # optional: "df_dx": [["-1"]], "dg_dx": ["exp(-rho*t)"]
    }

Costates are row vectors, so the Hamiltonian is ``psi @ f + lam * g``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping, Sequence

import numpy as np

from . import expr as ex

__all__ = [
    "ProblemError", "Box", "Finite", "ControlSet", "CandidateControl", "ProblemSpec",
    "validate", "hamiltonian", "check_candidate",
]

JAC_RTOL = 1e-8
CANDIDATE_TOL = 1e-9


class ProblemError(ValueError):
    """Invalid problem definition."""


@dataclass(frozen=True)
class Box:
    lo: ex.Expr
    hi: ex.Expr


@dataclass(frozen=True)
class Finite:
    values: tuple[float, ...]


@dataclass(frozen=True)
class ControlSet:
    components: tuple[Box | Finite, ...]

    def bounds(self, t: float, params: Mapping[str, float]) -> list[tuple[float, float] | tuple[float, ...]]:
        env = dict(params, t=t)
        out = []
        for c in self.components:
            if isinstance(c, Box):
                out.append((ex.evaluate(c.lo, env), ex.evaluate(c.hi, env)))
            else:
                out.append(c.values)
        return out

    def contains(self, t: float, u: np.ndarray, params: Mapping[str, float], tol: float = CANDIDATE_TOL) -> bool:
        env = dict(params, t=t)
        for c, uj in zip(self.components, u):
            if isinstance(c, Box):
                lo, hi = ex.evaluate(c.lo, env), ex.evaluate(c.hi, env)
                if not (lo - tol <= uj <= hi + tol):
                    return False
            elif min(abs(uj - v) for v in c.values) > tol:
                return False
        return True


@dataclass(frozen=True)
class CandidateControl:
    """Piecewise candidate control, right-continuous at ``breakpoints``.

    ``pieces[i]`` is active on ``[breakpoints[i-1], breakpoints[i])``.
    """

    pieces: tuple[tuple[ex.Expr, ...], ...]
    breakpoints: tuple[float, ...] = ()

    def piece_index(self, t: float) -> int:
        return bisect.bisect_right(self.breakpoints, t)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    state_dim: int
    control_dim: int
    f: tuple[ex.Expr, ...]
    g: ex.Expr
    df_dx: tuple[tuple[ex.Expr, ...], ...]
    dg_dx: tuple[ex.Expr, ...]
    control_set: ControlSet
    candidate: CandidateControl
    x0: np.ndarray
    params: Mapping[str, float] = field(default_factory=dict)
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    # -- compiled evaluators -------------------------------------------------

    @property
    def argnames(self) -> list[str]:
        return (["t"] + [f"x{i}" for i in range(self.state_dim)]
                + [f"u{j}" for j in range(self.control_dim)])

    def _compile(self, e: ex.Expr, vectorized: bool = False):
        return ex.lambdify(e, self.argnames, self.params, vectorized=vectorized)

    @cached_property
    def _f(self):
        return [self._compile(e) for e in self.f]

    @cached_property
    def _g(self):
        return self._compile(self.g)

    @cached_property
    def _jac(self):
        return [[self._compile(e) for e in row] for row in self.df_dx]

    @cached_property
    def _dg(self):
        return [self._compile(e) for e in self.dg_dx]

    @cached_property
    def _u(self):
        return [[ex.lambdify(e, ["t"], self.params) for e in piece] for piece in self.candidate.pieces]

    @cached_property
    def _fv(self):
        return [self._compile(e, True) for e in self.f]

    @cached_property
    def _gv(self):
        return self._compile(self.g, True)

    @cached_property
    def _fused(self):
        exprs = [*self.f, *(e for row in self.df_dx for e in row), *self.dg_dx]
        return ex.lambdify_many(exprs, self.argnames, self.params)

    def variational_terms(self, t: float, x: Sequence[float], u: Sequence[float]):
        """``(f, df/dx, dg/dx)`` in one compiled call."""
        m = self.state_dim
        v = np.array(self._fused(t, *x, *u))
        return v[:m], v[m:m + m * m].reshape(m, m), v[m + m * m:]

    def dynamics(self, t: float, x: Sequence[float], u: Sequence[float]) -> np.ndarray:
        a = (t, *x, *u)
        return np.array([fn(*a) for fn in self._f])

    def cost(self, t: float, x: Sequence[float], u: Sequence[float]) -> float:
        return float(self._g(t, *x, *u))

    def jacobian(self, t: float, x: Sequence[float], u: Sequence[float]) -> np.ndarray:
        """``df/dx`` as an ``m x m`` array (row i holds the gradient of f_i)."""
        a = (t, *x, *u)
        return np.array([[fn(*a) for fn in row] for row in self._jac])

    def cost_gradient(self, t: float, x: Sequence[float], u: Sequence[float]) -> np.ndarray:
        a = (t, *x, *u)
        return np.array([fn(*a) for fn in self._dg])

    def control(self, t: float, at: float | None = None) -> np.ndarray:
        """Candidate control value at time ``t``.

        ``at`` selects the piece by a different time; integrators pass the
        step midpoint so a step ending on a breakpoint keeps the left piece.
        """
        piece = self._u[self.candidate.piece_index(t if at is None else at)]
        return np.array([fn(t) for fn in piece])

    def dynamics_batch(self, t, x, u) -> np.ndarray:
        """Vectorized ``f``: broadcasts over leading axes of ``x[..., m]``, ``u[..., k]``."""
        a = (t, *np.moveaxis(x, -1, 0), *np.moveaxis(u, -1, 0))
        return np.stack([np.broadcast_to(fn(*a), np.broadcast(*a).shape) for fn in self._fv], axis=-1)

    def cost_batch(self, t, x, u) -> np.ndarray:
        a = (t, *np.moveaxis(x, -1, 0), *np.moveaxis(u, -1, 0))
        return np.broadcast_to(self._gv(*a), np.broadcast(*a).shape)

    @cached_property
    def _dgv(self):
        return [self._compile(e, True) for e in self.dg_dx]

    @cached_property
    def _jacv(self):
        return [[self._compile(e, True) for e in row] for row in self.df_dx]

    @cached_property
    def _uv(self):
        return [[ex.lambdify(e, ["t"], self.params, vectorized=True) for e in piece]
                for piece in self.candidate.pieces]

    def cost_gradient_batch(self, t, x, u) -> np.ndarray:
        a = (t, *np.moveaxis(x, -1, 0), *np.moveaxis(u, -1, 0))
        shape = np.broadcast(*a).shape
        return np.stack([np.broadcast_to(fn(*a), shape) for fn in self._dgv], axis=-1)

    def jacobian_batch(self, t, x, u) -> np.ndarray:
        a = (t, *np.moveaxis(x, -1, 0), *np.moveaxis(u, -1, 0))
        shape = np.broadcast(*a).shape
        return np.stack([np.stack([np.broadcast_to(fn(*a), shape) for fn in row], axis=-1)
                         for row in self._jacv], axis=-2)

    def control_batch(self, t, at=None) -> np.ndarray:
        """Vectorized :meth:`control`; returns shape ``t.shape + (k,)``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(np.asarray(self.candidate.breakpoints, dtype=float),
                              t if at is None else np.asarray(at, dtype=float), side="right")
        out = np.empty(t.shape + (self.control_dim,))
        for p, piece in enumerate(self._uv):
            sel = idx == p
            if np.any(sel):
                out[sel] = np.stack([np.broadcast_to(fn(t[sel]), t[sel].shape) for fn in piece], axis=-1)
        return out

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return self.candidate.breakpoints


def hamiltonian(spec: ProblemSpec, t: float, x, u, lam: float, psi) -> float:
    """Pontryagin function ``psi . f(t, x, u) + lam * g(t, x, u)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    if x.shape != (spec.state_dim,) or psi.shape != (spec.state_dim,):
        raise ProblemError(f"state/costate must have length {spec.state_dim}")
    if u.shape != (spec.control_dim,):
        raise ProblemError(f"control must have length {spec.control_dim}")
    return float(psi @ spec.dynamics(t, x, u) + lam * spec.cost(t, x, u))


# ---------------------------------------------------------------------------
# validation


def _parse(src: Any, where: str) -> ex.Expr:
    if isinstance(src, (int, float)):
        src = repr(float(src))
    if not isinstance(src, str):
        raise ProblemError(f"{where}: expected an expression string, got {src!r}")
    try:
        return ex.parse(src)
    except ex.ExprSyntaxError as err:
        raise ProblemError(f"{where}: {err}") from err


def _control_set(raw: Sequence[Mapping[str, Any]], k: int) -> ControlSet:
    if len(raw) != k:
        raise ProblemError(f"dimension mismatch: control_set has {len(raw)} components, control_dim={k}")
    comps: list[Box | Finite] = []
    for j, c in enumerate(raw):
        if "values" in c:
            vals = tuple(float(v) for v in c["values"])
            if not vals:
                raise ProblemError(f"control_set[{j}]: finite list must be non-empty")
            comps.append(Finite(vals))
        else:
            comps.append(Box(_parse(c["lo"], f"control_set[{j}].lo"), _parse(c["hi"], f"control_set[{j}].hi")))
    return ControlSet(tuple(comps))


def _candidate(raw: Any, k: int, params: Mapping[str, float]) -> CandidateControl:
    if isinstance(raw, Mapping):
        bps = tuple(float(b) for b in raw.get("breakpoints", ()))
        pieces_raw = raw["pieces"]
    else:
        bps, pieces_raw = (), [raw]
    if len(pieces_raw) != len(bps) + 1:
        raise ProblemError("candidate: need exactly one more piece than breakpoints")
    if any(b <= a for a, b in zip(bps, bps[1:])) or any(b <= 0 for b in bps):
        raise ProblemError("candidate: breakpoints must be positive and strictly increasing")
    pieces = []
    for i, p in enumerate(pieces_raw):
        if len(p) != k:
            raise ProblemError(f"dimension mismatch: candidate piece {i} has {len(p)} components, control_dim={k}")
        pieces.append(tuple(_parse(s, f"candidate[{i}][{j}]") for j, s in enumerate(p)))
    for piece in pieces:
        for e in piece:
            extra = ex.variables(e) - {"t", *params}
            if extra:
                raise ProblemError(f"candidate control may depend on t and parameters only, found {sorted(extra)}")
    return CandidateControl(tuple(pieces), bps)


def check_candidate(spec: ProblemSpec, times: Sequence[float], tol: float = CANDIDATE_TOL) -> None:
    """Raise :class:`ProblemError` if the candidate leaves U(t) at any of ``times``."""
    for t in times:
        u = spec.control(float(t))
        if not spec.control_set.contains(float(t), u, spec.params, tol):
            raise ProblemError(f"candidate outside control set at t={float(t)!r}: u={u.tolist()}")


def _check_box_order(cs: ControlSet, params: Mapping[str, float], times: Sequence[float]) -> None:
    for t in times:
        for j, c in enumerate(cs.components):
            if isinstance(c, Box):
                env = dict(params, t=float(t))
                lo, hi = ex.evaluate(c.lo, env), ex.evaluate(c.hi, env)
                if lo > hi:
                    raise ProblemError(f"control_set[{j}]: lo > hi at t={float(t)!r}")


def _check_jacobians(spec: ProblemSpec, auto_df, auto_dg, rng: np.random.Generator) -> None:
    m, k = spec.state_dim, spec.control_dim
    names = spec.argnames
    for _ in range(20):
        t = rng.uniform(0.0, 10.0)
        x = spec.x0 + rng.uniform(-1.0, 1.0, m)
        u = rng.uniform(-1.0, 1.0, k)
        env = dict(spec.params, **dict(zip(names, (t, *x, *u))))
        for i in range(m):
            for j in range(m):
                _agree(spec.df_dx[i][j], auto_df[i][j], env, f"df_dx[{i}][{j}]")
            _agree(spec.dg_dx[i], auto_dg[i], env, f"dg_dx[{i}]")


def _agree(user: ex.Expr, auto: ex.Expr, env, where: str) -> None:
    try:
        a, b = ex.evaluate(user, env), ex.evaluate(auto, env)
    except ex.ExprEvalError:
        return
    if abs(a - b) > JAC_RTOL * max(1.0, abs(a), abs(b)):
        raise ProblemError(f"Jacobian disagreement in {where}: supplied {a!r}, derived {b!r}")


def validate(raw: Mapping[str, Any], check_horizon: float = 40.0, seed: int = 0) -> ProblemSpec:
    """Check a raw problem mapping and materialize Jacobians.

    The candidate control is checked against the control set on a uniform
    grid over ``[0, check_horizon]`` plus every breakpoint.  User-supplied
    Jacobians are compared against symbolic ones at 20 seeded random points.
    """
    try:
        m = int(raw["state_dim"])
        k = int(raw["control_dim"])
    except KeyError as err:
        raise ProblemError(f"missing field {err.args[0]!r}") from None
    if m <= 0 or k <= 0:
        raise ProblemError("state_dim and control_dim must be positive")
    params = {str(n): float(v) for n, v in dict(raw.get("params", {})).items()}
    f_raw = raw["f"]
    if isinstance(f_raw, str):
        f_raw = [f_raw]
    if len(f_raw) != m:
        raise ProblemError(f"dimension mismatch: f has {len(f_raw)} components, state_dim={m}")
    f = tuple(_parse(s, f"f[{i}]") for i, s in enumerate(f_raw))
    g = _parse(raw["g"], "g")

    allowed = {"t", *params, *(f"x{i}" for i in range(m)), *(f"u{j}" for j in range(k))}
    for e, where in [*((e, f"f[{i}]") for i, e in enumerate(f)), (g, "g")]:
        unknown = ex.variables(e) - allowed
        if unknown:
            raise ProblemError(f"{where}: unknown variable(s) {sorted(unknown)}")

    xs = [f"x{i}" for i in range(m)]
    try:
        auto_df = tuple(tuple(ex.diff(fi, v) for v in xs) for fi in f)
        auto_dg = tuple(ex.diff(g, v) for v in xs)
    except ex.NonSmoothError as err:
        if "df_dx" not in raw or "dg_dx" not in raw:
            raise ProblemError(f"cannot derive Jacobians: {err}") from err
        auto_df = auto_dg = None

    if "df_dx" in raw:
        rows = raw["df_dx"]
        if len(rows) != m or any(len(r) != m for r in rows):
            raise ProblemError(f"dimension mismatch: df_dx must be {m}x{m}")
        df_dx = tuple(tuple(_parse(s, f"df_dx[{i}][{j}]") for j, s in enumerate(r)) for i, r in enumerate(rows))
    else:
        df_dx = auto_df
    if "dg_dx" in raw:
        if len(raw["dg_dx"]) != m:
            raise ProblemError(f"dimension mismatch: dg_dx must have {m} entries")
        dg_dx = tuple(_parse(s, f"dg_dx[{i}]") for i, s in enumerate(raw["dg_dx"]))
    else:
        dg_dx = auto_dg

    x0 = np.asarray(raw.get("x0", np.zeros(m)), dtype=float).reshape(-1)
    if x0.shape != (m,):
        raise ProblemError(f"dimension mismatch: x0 has {x0.size} entries, state_dim={m}")
    x0.setflags(write=False)

    spec = ProblemSpec(
        name=str(raw.get("name", "inline")),
        state_dim=m,
        control_dim=k,
        f=f,
        g=g,
        df_dx=df_dx,
        dg_dx=dg_dx,
        control_set=_control_set(raw["control_set"], k),
        candidate=_candidate(raw["candidate"], k, params),
        x0=x0,
        params=params,
        raw=raw,
    )
    if auto_df is not None and ("df_dx" in raw or "dg_dx" in raw):
        _check_jacobians(spec, auto_df, auto_dg, np.random.default_rng(seed))

    grid = np.union1d(np.linspace(0.0, check_horizon, 401), spec.breakpoints)
    _check_box_order(spec.control_set, params, grid)
    check_candidate(spec, grid)
    return spec

"""Improper integrals of the cost gradient along the variational flow.

For an initial state ``xi`` the running integral

    I_xi(T) = int_0^T dg/dx(t, x_xi(t), u0(t)) A_xi(t) dt

is a row vector.  Its limit as ``T -> inf`` (``Lambda_xi``) fixes the costate
through the Cauchy formula, so this module evaluates ``I``, decides whether
the tail has settled within the numerical horizon and probes how ``I``
depends on the initial state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .ode import FundamentalPair, IntegrationError, Trajectory, integrate_fundamental, integrate_state
from .problem import ProblemSpec

__all__ = [
    "IntegralTrace", "ContinuityRow", "accumulate", "estimate_limit", "probe_continuity",
    "integrand_at", "tail_variation",
]

log = logging.getLogger(__name__)

TAIL_TOL = 1e-6
WINDOW = 0.25

# 3-point Gauss-Legendre on [0, 1]; exact for quintics
_GL_X = 0.5 + 0.5 * np.array([-np.sqrt(3 / 5), 0.0, np.sqrt(3 / 5)])
_GL_W = 0.5 * np.array([5 / 9, 8 / 9, 5 / 9])


@dataclass(frozen=True)
class IntegralTrace:
    """Running integral ``I(t_i)`` on the shared mesh with tail diagnostics.

    ``tail[i]`` is ``I(T_max) - I(t_i)`` accumulated from the right end so it
    keeps full relative precision where it is small.  ``variation[i]`` is the
    sup over later nodes of ``||I(t_j) - I(t_i)||``.
    """

    mesh: np.ndarray
    values: np.ndarray
    d_start: np.ndarray
    d_end: np.ndarray
    tail: np.ndarray
    variation: np.ndarray
    Lambda: np.ndarray
    converged: bool
    onset: float | None
    tail_tol: float
    window: float

    @property
    def t_max(self) -> float:
        return float(self.mesh[-1])

    def trajectory(self) -> Trajectory:
        """Hermite interpolant of ``I`` (slopes are the integrand)."""
        return Trajectory(self.mesh, self.values, self.d_start, self.d_end)

    def tail_trajectory(self) -> Trajectory:
        """Hermite interpolant of ``Lambda - I(t)``."""
        return Trajectory(self.mesh, self.tail, -self.d_start, -self.d_end)


def integrand_at(spec: ProblemSpec, fund: FundamentalPair, t, at=None) -> np.ndarray:
    """``dg/dx(t, x(t), u0(t)) @ A(t)`` for an array of times."""
    t = np.asarray(t, dtype=float)
    x = fund.state(t)
    u = spec.control_batch(t, at)
    gx = spec.cost_gradient_batch(t, x, u)
    return np.einsum("...i,...ij->...j", gx, fund.A(t))


def tail_variation(mesh: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``v_i = max_{j >= i} ||values[j] - values[i]||`` (Euclidean)."""
    n = len(mesh)
    v = np.zeros(n)
    for i in range(n - 1):
        v[i] = np.max(np.linalg.norm(values[i:] - values[i], axis=-1))
    return v


def accumulate(spec: ProblemSpec, traj: Trajectory, fund: FundamentalPair,
               tail_tol: float = TAIL_TOL, window: float = WINDOW) -> IntegralTrace:
    """Integrate ``dg/dx A`` interval by interval with 3-point Gauss-Legendre.

    ``traj`` must live on the mesh of ``fund`` (pass ``fund.state``).  The
    returned trace already carries the tail decision for ``tail_tol`` and
    ``window``; call :func:`estimate_limit` for other settings.
    """
    mesh = fund.mesh
    if traj.mesh.shape != mesh.shape or not np.array_equal(traj.mesh, mesh):
        raise ValueError("trajectory and fundamental pair must share a mesh; pass fund.state")
    h = np.diff(mesh)
    mid = mesh[:-1] + 0.5 * h
    nodes = mesh[:-1, None] + h[:, None] * _GL_X[None, :]
    vals = integrand_at(spec, fund, nodes, np.broadcast_to(mid[:, None], nodes.shape))
    if not np.all(np.isfinite(vals)):
        bad = nodes[~np.all(np.isfinite(vals), axis=-1)][0]
        raise IntegrationError("non-finite integrand", float(bad))
    incr = h[:, None] * np.einsum("k,nkj->nj", _GL_W, vals)
    m = spec.state_dim
    values = np.zeros((len(mesh), m))
    values[1:] = np.cumsum(incr, axis=0)
    tail = np.zeros_like(values)
    tail[:-1] = np.cumsum(incr[::-1], axis=0)[::-1]
    d_start = integrand_at(spec, fund, mesh[:-1], mid)
    d_end = integrand_at(spec, fund, mesh[1:], mid)
    trace = IntegralTrace(
        mesh=mesh, values=values, d_start=d_start, d_end=d_end, tail=tail,
        variation=tail_variation(mesh, values), Lambda=values[-1].copy(),
        converged=False, onset=None, tail_tol=tail_tol, window=window,
    )
    Lam, converged, onset = estimate_limit(trace, tail_tol, window)
    return replace(trace, Lambda=Lam, converged=converged, onset=onset)


def estimate_limit(trace: IntegralTrace, tail_tol: float = TAIL_TOL,
                   window: float = WINDOW) -> tuple[np.ndarray, bool, float | None]:
    """Decide whether ``I`` has settled over the trailing ``window`` of the horizon.

    Returns ``(Lambda, converged, onset)`` where ``Lambda = I(T_max)`` and
    ``onset`` is the earliest node whose forward variation is within
    ``tail_tol`` (``None`` when not converged).
    """
    if not 0.0 < window < 1.0:
        raise ValueError("window must lie in (0, 1)")
    T_w = (1.0 - window) * trace.t_max
    I_w = trace.trajectory()(T_w)
    later = trace.values[trace.mesh >= T_w]
    v_w = float(np.max(np.linalg.norm(later - I_w, axis=-1))) if len(later) else 0.0
    converged = bool(v_w <= tail_tol)
    onset = None
    if converged:
        onset = float(trace.mesh[np.argmax(trace.variation <= tail_tol)])
    return trace.values[-1].copy(), converged, onset


@dataclass(frozen=True)
class ContinuityRow:
    radius: float
    deviation: float
    samples: int
    failures: int


def probe_continuity(
    spec: ProblemSpec,
    radii: Sequence[float] = (0.1, 0.01),
    samples_per_radius: int = 8,
    seed: int = 42,
    T_max: float = 40.0,
    tol: float = 1e-8,
    base: IntegralTrace | None = None,
) -> list[ContinuityRow]:
    """Empirical modulus of continuity of ``xi -> I_xi`` around the initial state.

    For each radius, initial states are drawn uniformly on the sphere of that
    radius about ``spec.x0`` (seeded), the whole chain state -> fundamental
    pair -> integral is rerun, and the sup-norm distance to the unperturbed
    integral over the base mesh is recorded.  Failed samples are skipped and
    counted.
    """
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii) or any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be positive and strictly decreasing")
    if base is None:
        traj = integrate_state(spec, spec.x0, T_max, tol)
        fund = integrate_fundamental(spec, traj)
        base = accumulate(spec, fund.state, fund)
    rng = np.random.default_rng(seed)
    m = spec.state_dim
    rows = []
    for r in radii:
        worst = 0.0
        failures = 0
        for _ in range(samples_per_radius):
            d = rng.standard_normal(m)
            d /= np.linalg.norm(d)
            xi = spec.x0 + r * d
            try:
                traj = integrate_state(spec, xi, base.t_max, tol)
                fund = integrate_fundamental(spec, traj)
                trace = accumulate(spec, fund.state, fund)
            except (IntegrationError, ArithmeticError, ValueError) as err:
                log.warning("continuity sample at radius %g failed: %s", r, err)
                failures += 1
                continue
            dev = np.linalg.norm(trace.trajectory()(base.mesh) - base.values, axis=-1)
            worst = max(worst, float(np.max(dev)))
        rows.append(ContinuityRow(r, worst, samples_per_radius - failures, failures))
    return rows

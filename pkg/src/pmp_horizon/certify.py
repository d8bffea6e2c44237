"""Maximum-principle relations and transversality conditions as numerical residuals.

Every check produces a :class:`Check` with the residual sampled on a grid,
a scalar summary and a status.  :func:`assemble` folds them into a
:class:`ResidualReport`.  ``CERTIFIED-EXTREMAL`` means the candidate passes
the necessary conditions numerically; it says nothing about optimality.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import expr as ex
from .cauchy import AdjointCertificate, TruncationRow, adjoint_forward
from .improper import ContinuityRow
from .ode import FundamentalPair, Trajectory
from .problem import Box, ProblemSpec

__all__ = [
    "Check", "ResidualReport", "PASS", "FAIL", "NA", "GATING",
    "max_condition_residual", "transversality_product", "transversality_norm", "hamiltonian_limit",
    "normalization_check", "constancy_check", "adjoint_residual_check", "max_condition_check",
    "state_equation_check", "fundamental_check", "truncation_check", "continuity_check",
    "uniqueness_probe", "assemble",
]

PASS, FAIL, NA = "PASS", "FAIL", "NOT-APPLICABLE"

# checks whose failure blocks CERTIFIED-EXTREMAL
GATING = ("normalization", "constancy", "adjoint-ode", "max-condition", "weighted-transversality")


@dataclass(frozen=True)
class Check:
    name: str
    summary: float
    tol: float
    status: str
    grid: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    values: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    note: str = ""


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def _na(name: str, tol: float, note: str = "certificate not available") -> Check:
    return Check(name, float("nan"), tol, NA, note=note)


def _psi_A(cert: AdjointCertificate, fund: FundamentalPair, t) -> np.ndarray:
    return np.einsum("...i,...ij->...j", cert.psi(t), fund.A(t))


def _window(mesh: np.ndarray, tail_window: float) -> np.ndarray:
    return mesh[mesh >= (1.0 - tail_window) * mesh[-1]]


# ---------------------------------------------------------------------------
# Hamiltonian sampling


def _control_samples(spec: ProblemSpec, t: np.ndarray, u_resolution: int) -> np.ndarray:
    """Sample points of U(t) for each t: shape ``(len(t), S, k)``."""
    per_comp = []
    for c in spec.control_set.components:
        if isinstance(c, Box):
            lo = ex.lambdify(c.lo, ["t"], spec.params, vectorized=True)(t)
            hi = ex.lambdify(c.hi, ["t"], spec.params, vectorized=True)(t)
            s = np.linspace(0.0, 1.0, max(u_resolution, 2))
            per_comp.append(lo[:, None] + (hi - lo)[:, None] * s[None, :])
        else:
            per_comp.append(np.broadcast_to(np.asarray(c.values), (len(t), len(c.values))))
    idx = list(itertools.product(*(range(p.shape[1]) for p in per_comp)))
    return np.stack([np.stack([per_comp[j][:, i[j]] for j in range(len(per_comp))], axis=-1) for i in idx],
                    axis=1)


def _hamiltonian_batch(spec: ProblemSpec, t, x, u, lam: float, psi) -> np.ndarray:
    return np.einsum("...i,...i->...", psi, spec.dynamics_batch(t, x, u)) + lam * spec.cost_batch(t, x, u)


def max_condition_residual(spec: ProblemSpec, traj: Trajectory, cert: AdjointCertificate,
                           t_grid: np.ndarray, u_resolution: int = 65) -> np.ndarray:
    """``sup_p H(p) - H(u0(t))`` over sampled ``p`` in ``U(t)`` at each grid time.

    Boxes are sampled at ``u_resolution`` equispaced points including both
    ends, finite sets are enumerated, and ``u0(t)`` itself is always in the
    sample so the residual is non-negative.
    """
    t = np.asarray(t_grid, dtype=float)
    x = traj(t)
    psi = cert.psi(t)
    u0 = spec.control_batch(t)
    P = np.concatenate([_control_samples(spec, t, u_resolution), u0[:, None, :]], axis=1)
    H = _hamiltonian_batch(spec, t[:, None], x[:, None, :], P, cert.lambda0, psi[:, None, :])
    return np.max(H, axis=1) - H[:, -1]


def hamiltonian_values(spec: ProblemSpec, traj: Trajectory, cert: AdjointCertificate, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return _hamiltonian_batch(spec, t, traj(t), spec.control_batch(t), cert.lambda0, cert.psi(t))


# ---------------------------------------------------------------------------
# individual checks


def normalization_check(cert: AdjointCertificate, tol: float = 1e-9) -> Check:
    if not cert.certified:
        return _na("normalization", tol)
    r = abs(float(np.linalg.norm(cert.psi.values[0])) + cert.lambda0 - 1.0)
    r_lam = abs(cert.lambda0 - 1.0 / (1.0 + float(np.linalg.norm(cert.Lambda0))))
    summary = max(r, r_lam)
    return Check("normalization", summary, tol, _status(summary <= tol),
                 np.array([0.0]), np.array([r]), note=f"lambda0 formula residual {r_lam:.3g}")


def constancy_check(cert: AdjointCertificate, fund: FundamentalPair, tol: float = 1e-6) -> Check:
    """``psi0 A + lambda0 I - lambda0 Lambda0`` must vanish on the mesh."""
    if not cert.certified:
        return _na("constancy", tol)
    psiA = np.einsum("ni,nij->nj", cert.psi.values, fund.A.values)
    r = np.linalg.norm(psiA + cert.lambda0 * (cert.trace.values - cert.Lambda0), axis=-1)
    s = float(np.max(r))
    return Check("constancy", s, tol, _status(s <= tol), fund.mesh, r)


def adjoint_residual_check(spec: ProblemSpec, fund: FundamentalPair, cert: AdjointCertificate,
                           tol: float = 1e-4) -> Check:
    """``psi0' + psi0 df/dx + lambda0 dg/dx`` at mesh midpoints (derivative of the interpolant)."""
    if not cert.certified:
        return _na("adjoint-ode", tol)
    mid = cert.psi.midpoints()
    x = fund.state(mid)
    u = spec.control_batch(mid)
    J = spec.jacobian_batch(mid, x, u)
    gx = spec.cost_gradient_batch(mid, x, u)
    psi = cert.psi(mid)
    res = cert.psi.derivative(mid) + np.einsum("ni,nij->nj", psi, J) + cert.lambda0 * gx
    r = np.linalg.norm(res, axis=-1)
    s = float(np.max(r))
    return Check("adjoint-ode", s, tol, _status(s <= tol), mid, r)


def state_equation_check(spec: ProblemSpec, traj: Trajectory, tol: float = 1e-4) -> Check:
    """``x' - f(t, x, u0)`` at mesh midpoints."""
    mid = traj.midpoints()
    x = traj(mid)
    r = np.linalg.norm(traj.derivative(mid) - spec.dynamics_batch(mid, x, spec.control_batch(mid)), axis=-1)
    s = float(np.max(r))
    return Check("state-equation", s, tol, _status(s <= tol), mid, r)


def max_condition_check(spec: ProblemSpec, traj: Trajectory, cert: AdjointCertificate,
                        tol: float = 1e-6, u_resolution: int = 65) -> Check:
    if not cert.certified:
        return _na("max-condition", tol)
    r = max_condition_residual(spec, traj, cert, cert.psi.mesh, u_resolution)
    s = float(np.max(r))
    return Check("max-condition", s, tol, _status(s <= tol), cert.psi.mesh, r,
                 note=f"grid sup over U(t), {u_resolution} points per box component")


def transversality_product(cert: AdjointCertificate, fund: FundamentalPair, tail_window: float = 0.25,
                           tail_tol: float = 1e-6) -> Check:
    """Tail sup of ``||psi0(t) A(t)||``; it must go to zero."""
    tol = 10 * tail_tol
    if not cert.certified:
        return _na("weighted-transversality", tol)
    t = _window(fund.mesh, tail_window)
    r = np.linalg.norm(_psi_A(cert, fund, t), axis=-1)
    s = float(np.max(r))
    return Check("weighted-transversality", s, tol, _status(s <= tol), t, r)


def transversality_norm(cert: AdjointCertificate, fund: FundamentalPair, schedule: Sequence[float],
                        tail_tol: float = 1e-6) -> tuple[Check, Check]:
    """Plain ``||psi0(tau)||`` and weighted ``||psi0(tau) A(tau)||`` along ``schedule``.

    Both summaries are minima over the schedule (a lower limit along the
    sequence).  The plain norm is informational: the costate need not vanish
    when ``A`` grows.
    """
    tol = 10 * tail_tol
    if not cert.certified:
        return _na("transversality-norm", tol), _na("transversality-schedule", tol)
    tau = np.asarray(schedule, dtype=float)
    plain = np.linalg.norm(cert.psi(tau), axis=-1)
    weighted = np.linalg.norm(_psi_A(cert, fund, tau), axis=-1)
    p, w = float(np.min(plain)), float(np.min(weighted))
    return (Check("transversality-norm", p, tol, _status(p <= tol), tau, plain, note="informational"),
            Check("transversality-schedule", w, tol, _status(w <= tol), tau, weighted))


def hamiltonian_limit(spec: ProblemSpec, traj: Trajectory, cert: AdjointCertificate,
                      tail_window: float = 0.25, tol: float = 1e-4) -> Check:
    """Tail sup of ``|H(x0, t, u0, lambda0, psi0)|``."""
    if not cert.certified:
        return _na("hamiltonian-limit", tol)
    t = _window(cert.psi.mesh, tail_window)
    r = np.abs(hamiltonian_values(spec, traj, cert, t))
    s = float(np.max(r))
    return Check("hamiltonian-limit", s, tol, _status(s <= tol), t, r)


def fundamental_check(fund: FundamentalPair, tol: float = 1e-6) -> Check:
    """``||B^T A - I||_F / kappa`` over the mesh."""
    r = fund.consistency() / fund.kappa
    s = float(np.max(r))
    return Check("fundamental-consistency", s, tol, _status(s <= tol), fund.mesh, r)


def truncation_check(rows: Sequence[TruncationRow] | None, ok: bool, tail_tol: float = 1e-6) -> Check:
    tol = 10 * tail_tol
    if rows is None:
        return _na("truncation", tol)
    devs = np.array([r.deviation for r in rows])
    return Check("truncation", float(devs[-1]), tol, _status(ok),
                 np.array([r.tau for r in rows]), devs, note="zero-terminal adjoints vs Cauchy costate")


def continuity_check(rows: Sequence[ContinuityRow] | None, resolution: float = 1e-7) -> Check:
    """Deviations must decrease with the radius (ties allowed below ``resolution``).

    This is a heuristic surrogate for continuity of the integral in the
    initial state; a finite probe cannot prove it.
    """
    if not rows:
        return _na("continuity-probe", resolution, "probe disabled")
    devs = np.array([r.deviation for r in rows])
    ok = all(b < a or b <= resolution for a, b in zip(devs, devs[1:]))
    ok = ok and all(r.failures == 0 for r in rows)
    return Check("continuity-probe", float(devs[-1]), resolution, _status(ok),
                 np.array([r.radius for r in rows]), devs, note="empirical surrogate, not a proof")


def uniqueness_probe(spec: ProblemSpec, fund: FundamentalPair, cert: AdjointCertificate,
                     delta: float = 1e-2, tail_window: float = 0.25) -> np.ndarray:
    """Perturb ``psi0(0)`` by ``delta e_i`` and solve the costate forward.

    Returns, for each coordinate direction, the minimum of ``||psi(t) A(t)||``
    over the tail window.  Any costate other than ``psi0`` keeps ``psi A``
    away from zero, so these values stay near ``delta``.
    """
    out = []
    m = spec.state_dim
    t = _window(fund.mesh, tail_window)
    for i in range(m):
        start = cert.psi.values[0] + delta * np.eye(m)[i]
        psi = adjoint_forward(spec, fund.state, start, cert.lambda0, fund.state.t_max)
        prod = np.einsum("ni,nij->nj", psi(t), fund.A(t))
        out.append(float(np.min(np.linalg.norm(prod, axis=-1))))
    return np.array(out)


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class ResidualReport:
    checks: tuple[Check, ...]
    verdict: str
    failures: tuple[str, ...]
    reason: str = ""
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def assemble(checks: Sequence[Check], cert: AdjointCertificate,
             provenance: Mapping[str, Any] | None = None) -> ResidualReport:
    names = [c.name for c in checks]
    if len(set(names)) != len(names):
        raise ValueError("duplicate check names")
    if not cert.certified:
        return ResidualReport(tuple(checks), "NON-CERTIFIED", (), cert.reason, dict(provenance or {}))
    failures = tuple(c.name for c in checks if c.name in GATING and c.status != PASS)
    missing = [g for g in GATING if g not in names]
    if missing:
        raise ValueError(f"gating checks missing: {missing}")
    verdict = "CERTIFIED-EXTREMAL" if not failures else "FAIL"
    return ResidualReport(tuple(checks), verdict, failures, "", dict(provenance or {}))

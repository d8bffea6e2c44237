"""The Cauchy-formula costate and zero-terminal truncated adjoints.

Given the running integral ``I(t)`` and its limit ``Lambda``, the costate
singled out by the transversality condition ``psi(t) A(t) -> 0`` is

    lambda0 = 1 / (1 + ||Lambda||),
    psi0(t) = lambda0 * (Lambda - I(t)) A(t)^{-1}
            = lambda0 * int_t^inf dg/dx A ds * B(t)^T.

The bracket is taken from the right-accumulated tail of the quadrature,
not from ``Lambda - I(t)``, so it keeps relative precision after ``I`` has
settled.  Multiplying by ``B^T ~ A^{-1}`` would otherwise amplify the
cancellation error exponentially.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .improper import IntegralTrace, TAIL_TOL
from .ode import FundamentalPair, Trajectory, mixed_scale, solve
from .problem import ProblemSpec

__all__ = [
    "AdjointCertificate", "TruncationRow", "build_certificate", "truncated_adjoint",
    "adjoint_forward", "compare_truncation", "CERTIFIED", "NON_CERTIFIED", "KAPPA_FAIL",
]

CERTIFIED = "CERTIFIED"
NON_CERTIFIED = "NON-CERTIFIED"
KAPPA_FAIL = 1e12


@dataclass(frozen=True)
class AdjointCertificate:
    """Multipliers ``(lambda0, psi0)`` produced by the Cauchy formula.

    ``psi`` is ``None`` unless ``status == CERTIFIED``.  ``form_gap`` is the
    sup distance between ``Lambda - I(t)`` and the right-accumulated tail,
    i.e. between the two ways of writing the bracket.
    """

    lambda0: float
    psi: Trajectory | None
    Lambda0: np.ndarray
    trace: IntegralTrace
    status: str
    reason: str = ""
    form_gap: float = float("nan")

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED


def build_certificate(trace: IntegralTrace, fund: FundamentalPair) -> AdjointCertificate:
    Lam = np.asarray(trace.Lambda, dtype=float)
    lam0 = 1.0 / (1.0 + float(np.linalg.norm(Lam)))
    if not trace.converged:
        return AdjointCertificate(lam0, None, Lam, trace, NON_CERTIFIED,
                                  f"improper integral not settled within tail_tol={trace.tail_tol:g}")
    if not np.array_equal(trace.mesh, fund.mesh):
        raise ValueError("trace and fundamental pair must share a mesh")
    kmax = float(np.max(fund.kappa))
    if not kmax <= KAPPA_FAIL:
        return AdjointCertificate(lam0, None, Lam, trace, NON_CERTIFIED, "ill-conditioned fundamental matrix")

    tail = trace.tail_trajectory()
    B = fund.B
    # row vector times B^T: psi_j = sum_i tail_i B_ji
    prod = lambda T, Bm: np.einsum("ni,nji->nj", T, Bm)  # noqa: E731
    values = lam0 * prod(tail.values, B.values)
    d_start = lam0 * (prod(tail.d_start, B.values[:-1]) + prod(tail.values[:-1], B.d_start))
    d_end = lam0 * (prod(tail.d_end, B.values[1:]) + prod(tail.values[1:], B.d_end))
    psi = Trajectory(trace.mesh, values, d_start, d_end, fund.A.tol)
    gap = float(np.max(np.linalg.norm(Lam - trace.values - trace.tail, axis=-1)))
    return AdjointCertificate(lam0, psi, Lam, trace, CERTIFIED, "", gap)


def _adjoint_rhs(spec: ProblemSpec, traj: Trajectory, lam: float):
    def rhs(t, psi, tp):
        x = traj(t)
        u = spec.control(t, tp)
        return -psi @ spec.jacobian(t, x, u) - lam * spec.cost_gradient(t, x, u)
    return rhs


def truncated_adjoint(spec: ProblemSpec, traj: Trajectory, tau: float, lam: float,
                      tol: float | None = None) -> Trajectory:
    """Costate on ``[0, tau]`` with the free-end condition ``psi(tau) = 0``.

    Solves ``psi' = -psi df/dx - lam dg/dx`` backward along ``traj``.
    """
    if not 0.0 < tau <= traj.t_max:
        raise ValueError(f"tau must lie in (0, {traj.t_max}]")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    tol = traj.tol if tol is None or not np.isfinite(tol) else tol
    if not np.isfinite(tol):
        tol = 1e-8
    return solve(_adjoint_rhs(spec, traj, lam), tau, 0.0, np.zeros(spec.state_dim),
                 mixed_scale(tol), spec.breakpoints, tol=tol)


def adjoint_forward(spec: ProblemSpec, traj: Trajectory, psi_init, lam: float,
                    T: float | None = None, tol: float | None = None) -> Trajectory:
    """Costate equation solved forward from ``psi(0) = psi_init``."""
    T = traj.t_max if T is None else T
    tol = traj.tol if tol is None else tol
    if not np.isfinite(tol):
        tol = 1e-8
    return solve(_adjoint_rhs(spec, traj, lam), 0.0, T, np.asarray(psi_init, dtype=float),
                 mixed_scale(tol), spec.breakpoints, tol=tol)


@dataclass(frozen=True)
class TruncationRow:
    tau: float
    deviation: float


def compare_truncation(cert: AdjointCertificate, spec: ProblemSpec, traj: Trajectory,
                       schedule: Sequence[float] = (5.0, 10.0, 20.0, 40.0),
                       tail_tol: float = TAIL_TOL,
                       tol: float | None = None) -> tuple[list[TruncationRow], bool]:
    """Distance from zero-terminal adjoints to ``psi0`` as the horizon grows.

    Each ``psi^tau`` uses ``lam = lambda0`` and is integrated at
    ``tol / 100`` (``tol`` defaults to the certificate's integration
    tolerance); the deviation is the sup over ``[0, tau/2]`` of
    ``||psi^tau - psi0||``.  Passes when the deviations are non-increasing and
    the last one is at most ``10 * tail_tol``.  Two consecutive deviations
    that are both below the resolution ``10 * tol`` count as tied, since
    their order is set by discretization noise in ``psi0``.
    """
    if not cert.certified:
        raise ValueError("certificate is not CERTIFIED")
    schedule = [float(s) for s in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be increasing")
    tol = cert.psi.tol if tol is None else tol
    if not np.isfinite(tol):
        tol = 1e-8
    rows = []
    for tau in schedule:
        pt = truncated_adjoint(spec, traj, tau, cert.lambda0, tol / 100)
        grid = np.union1d(pt.mesh, cert.psi.mesh)
        grid = np.union1d(grid[grid <= tau / 2], [tau / 2])
        dev = np.linalg.norm(pt(grid) - cert.psi(grid), axis=-1)
        rows.append(TruncationRow(tau, float(np.max(dev))))
    devs = [r.deviation for r in rows]
    res = 10 * tol
    ok = all(b <= a or max(a, b) <= res for a, b in zip(devs, devs[1:])) and devs[-1] <= 10 * tail_tol
    return rows, ok

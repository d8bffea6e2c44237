"""End-to-end certification run: state, fundamental pair, integral, costate, checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from . import certify as cf
from .cauchy import AdjointCertificate, TruncationRow, build_certificate, compare_truncation
from .improper import ContinuityRow, IntegralTrace, accumulate, probe_continuity
from .ode import FundamentalPair, IntegrationError, Trajectory, integrate_fundamental, integrate_state
from .problem import ProblemSpec

__all__ = ["Numerics", "RunConfig", "Analysis", "analyze"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Numerics:
    T_max: float = 40.0
    tol: float = 1e-8
    tail_tol: float = 1e-6
    window: float = 0.25
    max_tol: float = 1e-6
    ham_tol: float = 1e-4
    u_resolution: int = 65

    def __post_init__(self):
        for name in ("T_max", "tol", "tail_tol", "max_tol", "ham_tol"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"numerics.{name} must be positive, got {v!r}")
        if not 0.0 < self.window < 1.0:
            raise ValueError("numerics.window must lie in (0, 1)")
        if self.u_resolution < 2:
            raise ValueError("numerics.u_resolution must be at least 2")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on; ``problem`` is a raw mapping for :func:`problem.validate`."""

    problem: Mapping[str, Any]
    numerics: Numerics = field(default_factory=Numerics)
    schedule: tuple[float, ...] = (5.0, 10.0, 20.0, 40.0)
    radii: tuple[float, ...] = (0.1, 0.01)
    samples: int = 8
    seed: int = 42

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.schedule, self.schedule[1:])) or not self.schedule:
            raise ValueError("truncation.schedule must be non-empty and increasing")
        if self.schedule[0] <= 0:
            raise ValueError("truncation.schedule must be positive")
        if self.numerics.T_max < max(self.schedule):
            raise ValueError("numerics.T_max must be at least max(truncation.schedule)")
        if any(r <= 0 for r in self.radii) or any(b >= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("continuity.radii must be positive and strictly decreasing")
        if self.samples < 0:
            raise ValueError("continuity.samples must be non-negative")


@dataclass
class Analysis:
    spec: ProblemSpec
    numerics: Numerics
    traj: Trajectory | None = None
    fund: FundamentalPair | None = None
    trace: IntegralTrace | None = None
    cert: AdjointCertificate | None = None
    checks: list[cf.Check] = field(default_factory=list)
    truncation: list[TruncationRow] | None = None
    continuity: list[ContinuityRow] | None = None
    report: cf.ResidualReport | None = None
    error: str = ""


def analyze(spec: ProblemSpec, cfg: RunConfig | None = None, truncation: bool = True,
            continuity: bool = True) -> Analysis:
    """Run the whole chain for a validated problem.

    Integration failures are caught and turned into a NON-CERTIFIED report;
    the message is kept in ``Analysis.error``.
    """
    cfg = cfg or RunConfig(problem=spec.raw)
    nm = cfg.numerics
    out = Analysis(spec, nm)
    try:
        out.traj = integrate_state(spec, spec.x0, nm.T_max, nm.tol)
        out.fund = integrate_fundamental(spec, out.traj)
        out.trace = accumulate(spec, out.fund.state, out.fund, nm.tail_tol, nm.window)
        out.cert = build_certificate(out.trace, out.fund)
    except IntegrationError as err:
        log.error("integration failed: %s", err)
        out.error = f"integration failed: {err}"
        out.report = cf.ResidualReport((), "NON-CERTIFIED", (), out.error, _provenance(out))
        return out

    spec_, fund, cert, traj = spec, out.fund, out.cert, out.fund.state
    checks = [
        cf.normalization_check(cert),
        cf.constancy_check(cert, fund),
        cf.adjoint_residual_check(spec_, fund, cert),
        cf.state_equation_check(spec_, traj),
        cf.max_condition_check(spec_, traj, cert, nm.max_tol, nm.u_resolution),
        cf.transversality_product(cert, fund, nm.window, nm.tail_tol),
        *cf.transversality_norm(cert, fund, cfg.schedule, nm.tail_tol),
        cf.hamiltonian_limit(spec_, traj, cert, nm.window, nm.ham_tol),
        cf.fundamental_check(fund),
    ]
    ok = False
    if truncation and cert.certified:
        try:
            out.truncation, ok = compare_truncation(cert, spec_, traj, cfg.schedule, nm.tail_tol, nm.tol)
        except IntegrationError as err:
            log.warning("truncated adjoint failed: %s", err)
    checks.append(cf.truncation_check(out.truncation, ok, nm.tail_tol))
    if continuity and cfg.samples > 0:
        out.continuity = probe_continuity(spec_, cfg.radii, cfg.samples, cfg.seed, nm.T_max, nm.tol,
                                          base=out.trace)
    checks.append(cf.continuity_check(out.continuity, 10 * nm.tol))
    out.checks = checks
    out.report = cf.assemble(checks, cert, _provenance(out))
    return out


def _provenance(a: Analysis) -> dict[str, Any]:
    p: dict[str, Any] = {"tolerances": {k: getattr(a.numerics, k) for k in
                                        ("tol", "tail_tol", "max_tol", "ham_tol")}}
    if a.fund is not None:
        h = np.diff(a.fund.mesh)
        p["mesh"] = {"nodes": int(a.fund.mesh.size), "h_min": float(h.min()), "h_max": float(h.max()),
                     "kappa_max": float(np.max(a.fund.kappa))}
    return p

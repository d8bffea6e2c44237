"""Cauchy-formula costates and residual certificates for infinite-horizon optimal control.

Typical use::

    from pmp_horizon import catalog_get, analyze
    a = analyze(catalog_get("decay-discount"))
    a.report.verdict, a.cert.lambda0
"""

from .catalog import catalog_get, catalog_names, catalog_raw
from .cauchy import AdjointCertificate, build_certificate, compare_truncation, truncated_adjoint
from .certify import ResidualReport, assemble
from .improper import accumulate, estimate_limit, probe_continuity
from .ode import integrate_fundamental, integrate_state
from .pipeline import Analysis, Numerics, RunConfig, analyze
from .problem import ProblemError, ProblemSpec, hamiltonian, validate

__version__ = "0.1.0"

__all__ = [
    "catalog_get", "catalog_names", "catalog_raw", "validate", "hamiltonian", "ProblemSpec", "ProblemError",
    "integrate_state", "integrate_fundamental", "accumulate", "estimate_limit", "probe_continuity",
    "AdjointCertificate", "build_certificate", "truncated_adjoint", "compare_truncation",
    "ResidualReport", "assemble", "Numerics", "RunConfig", "Analysis", "analyze",
]

# Closed-form walk-through on the linear decay problem
#
#   x' = -x + u,  u in [-1, 1],  reward int exp(-rho t) x dt
#
# With rho = 1 the variational flow is A(t) = exp(-t), the running integral
# is I(T) = (1 - exp(-2T)) / 2 and its limit is 1/2.  The costate follows as
# psi0(t) = lambda0 exp(-t) / 2 with lambda0 = 2/3.
import numpy as np

from pmp_horizon import accumulate, build_certificate, catalog_get, integrate_fundamental, integrate_state
from pmp_horizon.certify import max_condition_residual

spec = catalog_get("decay-discount", {"rho": 1.0})
traj = integrate_state(spec, spec.x0, T_max=40.0, tol=1e-8)
fund = integrate_fundamental(spec, traj)
print(f"mesh nodes: {fund.mesh.size}, A(1) = {fund.A(1.0)[0, 0]:.9f} (exp(-1) = {np.exp(-1):.9f})")

# the integral lives on the mesh of the fundamental pair
trace = accumulate(spec, fund.state, fund)
print(f"Lambda0 = {trace.Lambda[0]:.10f}, converged = {trace.converged}, onset t = {trace.onset:.2f}")

cert = build_certificate(trace, fund)
print(f"lambda0 = {cert.lambda0:.10f}  (2/3 = {2 / 3:.10f})")
for t in (0.0, 1.0, 5.0):
    print(f"  psi0({t:>3}) = {cert.psi(t)[0]:.10e}   closed form {np.exp(-t) / 3:.10e}")

# psi0 > 0 everywhere, so H = psi (-x + u) + lambda exp(-t) x is maximized by u = 1
r = max_condition_residual(spec, fund.state, cert, fund.mesh, 65)
print(f"max-condition residual for u0 = 1: {r.max():.1e}")

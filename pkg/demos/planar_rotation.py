# Non-diagonal fundamental matrix: damped rotation
#
#   x0' = -mu x0 + x1 + u,  x1' = -x0 - mu x1
#
# Along u0 = 0 the flow is A(t) = exp(-mu t) R(t) with R a rotation, so the
# companion B(t) = exp(mu t) R(t) and B^T A = I.  The uniqueness probe
# perturbs psi0(0) and shows psi A no longer vanishes at infinity.
import numpy as np

from pmp_horizon import analyze, catalog_get
from pmp_horizon.certify import uniqueness_probe

spec = catalog_get("planar-rotation", {"mu": 0.5})
a = analyze(spec, truncation=False, continuity=False)
fund, cert = a.fund, a.cert

mu = spec.params["mu"]
t = np.pi
exact = np.exp(-mu * t) * np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
print("A(pi) =\n", fund.A(t))
print(f"max |A(pi) - closed form| = {np.abs(fund.A(t) - exact).max():.2e}")
print(f"max ||B^T A - I||_F over the mesh = {fund.consistency().max():.2e}, max kappa = {fund.kappa.max():.3f}")

print(f"lambda0 = {cert.lambda0:.6f}, psi0(0) = {cert.psi(0.0)}")
tail = uniqueness_probe(spec, fund, cert, delta=1e-2)
print("tail min ||psi A|| after perturbing psi0(0) by 1e-2 e_i:", tail)

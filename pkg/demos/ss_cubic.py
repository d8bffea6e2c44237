# A problem with no usable condition at infinity
#
#   x' = -u,  u in [c, d],  reward int exp(-t) (x^3 + u) dt,  x(0) = 1
#
# The fundamental matrix is 1, so the Cauchy costate is the discounted tail
# lambda0 * int_t^inf 3 exp(-s) x(s)^2 ds.  The candidate u0 = c is checked
# against every condition; the Hamiltonian limit and transversality hold,
# but the maximum condition shows where a larger control pays off.
import numpy as np

from pmp_horizon import analyze, catalog_get

a = analyze(catalog_get("ss-cubic"), continuity=True)
cert, fund = a.cert, a.fund
print(f"Lambda0 = {cert.Lambda0[0]:.6f}, lambda0 = {cert.lambda0:.6f}")

for chk in a.report.checks:
    print(f"  {chk.name:26s} {chk.summary:10.3e}  {chk.status}")
print("verdict:", a.report.verdict)

# the coefficient of u in H is lambda0 exp(-t) - psi0(t); positive means u = d is better
t = np.linspace(0.0, 40.0, 9)
coef = cert.lambda0 * np.exp(-t) - cert.psi(t)[:, 0]
for ti, ci in zip(t, coef):
    print(f"  t = {ti:5.1f}  dH/du = {ci:+.3e}")

print("truncated adjoints vs Cauchy costate:")
for row in a.truncation:
    print(f"  tau = {row.tau:4.0f}  sup over [0, tau/2] = {row.deviation:.3e}")
print("continuity probe (empirical modulus):")
for row in a.continuity:
    print(f"  radius {row.radius:g}: {row.deviation:.3e}")

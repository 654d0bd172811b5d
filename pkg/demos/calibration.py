"""Back out the correlation that makes square-root aggregation match a simulated VaR.

Two lognormal risks with a Gaussian copula are simulated; the implied rho is
compared with the copula parameter it came from.

Run: python3 demos/calibration.py
"""
import numpy as np

from sfalloc import aggregate_level, calibrate_rho

rng = np.random.default_rng(1)
n = 400_000


def var995(x):
    return np.quantile(x, 0.995) - x.mean()


for r in (0.0, 0.25, 0.5, 0.75):
    z = rng.multivariate_normal([0, 0], [[1, r], [r, 1]], size=n)
    x, y = np.exp(0.4 * z[:, 0]), np.exp(0.8 * z[:, 1])
    vx, vy, vxy = var995(x), var995(y), var995(x + y)
    cal = calibrate_rho(vx, vy, vxy)
    back = aggregate_level([vx, vy], [[1, cal.rho], [cal.rho, 1]])
    print(f"copula rho {r:4.2f}  implied rho {cal.rho:6.3f}  clamped {cal.clamped!s:5s}  "
          f"VaR(X+Y) {vxy:7.4f}  re-aggregated {back:7.4f}")

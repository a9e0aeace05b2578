"""The reporting-error distribution.

A reported count y, given a true count z, is the final state of an
equal-rate linear birth-death process started at z and run over a unit
pseudo-time interval.  This script walks through its basic behavior:
closed-form pmf, unbiasedness, variance growth with the rate, absorption
at zero, and agreement between the closed form and event-driven simulation.
"""

import numpy as np

from bdprem import bd_process as bd


def section(title):
    print(f"\n=== {title} ===")


section("pmf mass tables")
for z, lam in [(2, 0.5), (15, 0.5), (15, 3.0), (15, 7.0)]:
    params = bd.BdParams(z, lam)
    ys = np.arange(bd.truncation_bound(z, lam) + 1)
    probs = np.exp(bd.log_pmf_arrays(ys, z, lam))
    top = np.argsort(probs)[::-1][:5]
    print(f"z={z:3d} lambda={lam:3.1f}: P(y=0)={probs[0]:.4f}  "
          f"top-5 y values: {sorted(top.tolist())}  total={probs.sum():.10f}")

section("unbiased mean, variance 2*lambda*z")
for z, lam in [(2, 0.5), (15, 3.0), (50, 7.0)]:
    ys = np.arange(bd.truncation_bound(z, lam) + 1)
    probs = np.exp(bd.log_pmf_arrays(ys, z, lam))
    mean = (ys * probs).sum()
    var = ((ys - mean) ** 2 * probs).sum()
    m, v = bd.moments(bd.BdParams(z, lam))
    print(f"z={z:3d} lambda={lam:3.1f}: mean {mean:8.4f} (formula {m}), "
          f"variance {var:9.3f} (formula {v})")

section("where the mode sits")
print("large rates relative to the true count let absorption at zero steal")
print("the mode; small rates keep the mode at the true count:")
for z, lam in [(2, 3.0), (2, 7.0), (15, 7.0), (2, 0.5), (15, 3.0), (50, 7.0)]:
    ys = np.arange(bd.truncation_bound(z, lam) + 1)
    mode = int(np.argmax(bd.log_pmf_arrays(ys, z, lam)))
    print(f"  z={z:3d} lambda={lam:3.1f}: mode at y={mode}")

section("event-driven simulator vs closed form")
rng = np.random.default_rng(0)
for z, lam in [(1, 1.0), (15, 3.0)]:
    draws = bd.simulate_many(z, lam, rng, size=200_000)
    ys = np.arange(bd.truncation_bound(z, lam) + 1)
    probs = np.exp(bd.log_pmf_arrays(ys, z, lam))
    emp = np.bincount(draws, minlength=ys.size)[: ys.size] / draws.size
    tv = 0.5 * np.abs(emp - probs).sum()
    print(f"z={z:3d} lambda={lam:3.1f}: 2e5 draws, total-variation distance "
          f"{tv:.4f}, sample mean {draws.mean():.3f}, sample var {draws.var():.2f}")

section("absorption")
print("once the process hits zero it stays there:",
      bd.simulate_many(0, 5.0, rng, size=5).tolist())
print("\nFor plot-ready pmf curves use the CLI:  bdprem bd-pmf --z 15 "
      "--lambda 3 --max-y 60")

"""Where to initialize: critical points and lines for every mode.

Solves chi* = 1 across the hyperparameter plane.  Vanilla networks are
critical at isolated points; adding LayerNorm (either placement) relaxes
the kernel condition and turns the points into lines, whose slopes are
reproduced here to several digits.
"""

import math

import numpy as np

from jacprop import Activation, NormMode, critical_line, critical_point

acts = {
    "relu": Activation.relu(),
    "erf": Activation.erf(),
    "gelu": Activation.gelu(),
}

print("vanilla critical points (sigma_w, sigma_b):")
for name, act in acts.items():
    pts = critical_point(act)
    coords = ", ".join(f"({p.sigma_w:.6f}, {p.sigma_b:.6f})" for p in pts)
    print(f"  {name:5s}: {coords}")

print("\nLayerNorm critical lines, fitted slope sigma_b / sigma_w:")
sweep = np.linspace(0.5, 3.0, 26)
cases = [
    ("relu", NormMode.PRE_LN, "0 (bias axis)"),
    ("relu", NormMode.POST_LN, "1/sqrt(pi-1) = 0.6833"),
    ("erf", NormMode.PRE_LN, "0.3238"),
    ("erf", NormMode.POST_LN, "(transcendental)"),
    ("gelu", NormMode.PRE_LN, "(6 sqrt(3) pi)^(-1/2) = 0.1750"),
    ("gelu", NormMode.POST_LN, "(transcendental)"),
]
for name, mode, note in cases:
    pts = [p for p in critical_line(acts[name], mode, sweep) if p.found]
    sw = np.array([p.sigma_w for p in pts])
    sb = np.array([p.sigma_b for p in pts])
    slope = float(sw @ sb / (sw @ sw))
    resid = max(p.residual for p in pts)
    print(f"  {name:5s} {mode.value:8s}: slope {slope:.6f}   "
          f"max |chi-1| {resid:.1e}   expected {note}")

# The vanilla erf line has a closed form; compare one point.
sw = 1.2
(p,) = critical_line(acts["erf"], NormMode.VANILLA, [sw])
arg = (16 * sw**4 - math.pi**2) / (16 * sw**4 + math.pi**2)
closed = math.sqrt((16 * sw**4 - math.pi**2) / (4 * math.pi**2)
                   - (2 * sw**2 / math.pi) * math.asin(arg))
print(f"\nerf vanilla at sigma_w = {sw}: solver {p.sigma_b:.12f}, "
      f"closed form {closed:.12f}")

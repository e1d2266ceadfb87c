"""Kernel, Jacobian and NTK recursions layer by layer.

Three normalization modes, one deep network each.  Watch the kernel
either settle to a fixed point (vanilla, off criticality), get pinned by
the normalization (both LayerNorm placements), or blow up (chaotic
initialization -- flagged, never raised).
"""

import numpy as np

from jacprop import Activation, Hyper, NormMode, trace

erf = Activation.erf()
hp = Hyper(1.3, 0.4)

for mode in NormMode:
    tr = trace(erf, mode, hp, depth=12, k0=0.5, l0=0)
    print(f"\n{mode.value}: K per layer")
    print("  " + " ".join(f"{k:7.4f}" for k in tr.K[1:]))
    print(f"  chi_j[2..] = {tr.chi_j[2]:.6f} (J multiplier), "
          f"Theta[12] = {tr.theta[12]:.4f}")

# The partial Jacobian is an exact geometric object: its value from layer
# l0 to l is the product of the per-layer multipliers, so restarting the
# product anywhere in the middle composes multiplicatively.
tr = trace(erf, NormMode.VANILLA, hp, depth=40, k0=0.5, l0=2)
m, l = 10, 30
print("\nmultiplicativity: J[2->30] vs J[2->10] * prod chi[10..29]:",
      tr.J[l], "vs", tr.J[m] * np.prod(tr.chi_j[m:l]))

# A chaotic ReLU network overflows the kernel eventually; the trace
# truncates and flags instead of raising, so parameter sweeps always run.
wild = trace(Activation.relu(), NormMode.VANILLA, Hyper(2.5, 0.1),
             depth=3000, k0=1.0, l0=0)
print(f"\nchaotic ReLU: diverged={wild.diverged}, truncated at layer "
      f"{wild.truncated_at} of 3000")

# At the ReLU critical point the NTK grows exactly linearly with depth.
crit = trace(Activation.relu(), NormMode.VANILLA, Hyper(np.sqrt(2), 0.0),
             depth=64, k0=1.0, l0=0)
print("\nReLU at criticality: Theta[l]/l =",
      set(np.round(crit.theta[1:] / np.arange(1, 65), 12)))

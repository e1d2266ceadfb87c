"""Phase diagrams: the order/chaos boundary in the hyperparameter plane.

Maps chi* over a (sigma_w^2, sigma_b^2) rectangle for each mode, prints a
tiny character map, and checks that the chi = 1 contour interpolates onto
the critical-line solver.  The same grid is available from the command
line: ``jacprop phase-diagram --act erf --mode vanilla``.
"""

import numpy as np

from jacprop import Activation, NormMode, critical_line, phase_grid
from jacprop.analysis import chi_one_crossings

erf = Activation.erf()

sw = np.sqrt(np.linspace(0.4, 4.0, 13))
sb = np.sqrt(np.linspace(0.0, 1.0, 11))

for mode in (NormMode.VANILLA, NormMode.PRE_LN):
    grid = phase_grid(erf, mode, sw, sb)
    print(f"\nerf {mode.value}: rows sigma_w^2 in [0.4, 4], cols sigma_b^2 in [0, 1]")
    print("  ('.' ordered chi<0.95, '=' near-critical, '#' chaotic chi>1.05)")
    for i in range(sw.size):
        row = ""
        for j in range(sb.size):
            c = grid.chi[i, j]
            row += "." if c < 0.95 else ("#" if c > 1.05 else "=")
        print("   " + row)

# contour vs root-finder
grid = phase_grid(erf, NormMode.VANILLA, np.linspace(1.0, 1.6, 7),
                  np.linspace(0.0, 1.2, 121))
crossings = chi_one_crossings(grid)
pts = critical_line(erf, NormMode.VANILLA, grid.sigma_w)
print("\nchi = 1 contour vs critical-line solver (sigma_b at each sigma_w):")
for swv, c, p in zip(grid.sigma_w, crossings, pts):
    print(f"  sigma_w = {swv:.2f}: contour {c:.4f}   solver "
          f"{p.sigma_b if p.found else float('nan'):.4f}")

# The pre-LN band where |chi - 1| is small dwarfs the vanilla one: this is
# the quantitative form of "LayerNorm on preactivations makes deep nets
# trainable over a much wider range of initializations".
box_sw = np.linspace(0.9, 2.1, 9)
box_sb = np.linspace(0.1, 1.0, 9)
van = phase_grid(Activation.relu(), NormMode.VANILLA, box_sw, box_sb)
pre = phase_grid(Activation.relu(), NormMode.PRE_LN, box_sw, box_sb)
print(f"\nmax |chi-1| over the box: vanilla {np.max(np.abs(van.chi-1)):.3f}, "
      f"pre-LN {np.max(np.abs(pre.chi-1)):.3f}")

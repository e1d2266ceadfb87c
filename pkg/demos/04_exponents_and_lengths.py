"""How gradients decay: critical exponents and correlation lengths.

On a critical line the Jacobian norms decay algebraically, J ~ l^(-zeta);
off it they decay or grow exponentially with a correlation length
xi = 1/|log chi*|.  Both are extracted numerically from deep traces.
"""

import math

import numpy as np

from jacprop import (
    Activation,
    Hyper,
    NormMode,
    chi_star,
    correlation_length,
    critical_line,
    exponent_numeric,
    fit_exponential,
    trace,
)
from jacprop.critical import expansion_coefficient, gelu_parametric_line

relu, erf, gelu = Activation.relu(), Activation.erf(), Activation.gelu()

# erf: unit exponent, and the kernel deviation obeys l * dK -> 1/2
est = exponent_numeric(erf, NormMode.VANILLA, Hyper(math.sqrt(math.pi / 4), 0.0),
                       depth=2000, fit_from=500)
print(f"erf  vanilla  zeta = {est.zeta:.4f}   l*dK -> {est.dk_coeff:.4f}")

# relu: the multiplier is exactly constant, so zeta vanishes identically
est = exponent_numeric(relu, NormMode.VANILLA, Hyper(math.sqrt(2), 0.0),
                       depth=2000, fit_from=500)
print(f"relu vanilla  zeta = {est.zeta:.1e} (zero up to the float sqrt(2))")

# LayerNorm kills the algebraic decay in every combination
for act, name in ((relu, "relu"), (erf, "erf"), (gelu, "gelu")):
    for mode in (NormMode.PRE_LN, NormMode.POST_LN):
        (p,) = critical_line(act, mode, [1.5])
        est = exponent_numeric(act, mode, Hyper(p.sigma_w, p.sigma_b),
                               depth=2000, fit_from=500)
        print(f"{name:4s} {mode.value:8s} zeta = {est.zeta:+.2e}")

# The nontrivial GELU fixed point is half-stable: the kernel approaches
# it from above only, and the multiplier approaches 1 from above, with a
# huge expansion coefficient that makes desk-scale power-law fits of J
# itself meaningless.
k_star = (3 + math.sqrt(17)) / 2
sw, sb = gelu_parametric_line(k_star)
coef = expansion_coefficient(gelu, Hyper(sw, sb), k_star)
print(f"\ngelu expansion coefficient l*(1 - chi[l]) -> {coef:.3f} "
      "(chi[l] sits above 1 along the approach)")

# Correlation lengths: theory formula vs a fit of the actual trace.
print("\nrelu vanilla correlation lengths (theory vs fitted trace):")
for sw2 in (1.0, 1.5, 2.5, 3.0):
    hp = Hyper(math.sqrt(sw2), 0.0)
    xi_theory = correlation_length(chi_star(relu, NormMode.VANILLA, hp))
    tr = trace(relu, NormMode.VANILLA, hp, depth=60, k0=1.0, l0=0)
    xi_fit = fit_exponential(tr.J, l_min=10).xi
    print(f"  sigma_w^2 = {sw2}: xi = {xi_theory:.4f}  fit {xi_fit:.4f}")

# With LayerNorm on preactivations the length saturates instead of
# collapsing at large gain -- deep networks stay trainable far from the
# critical line.
print("\npre-LN relu lengths at sigma_b = 0.5:")
for sw in (2.0, 4.0, 8.0, 16.0):
    xi = correlation_length(chi_star(relu, NormMode.PRE_LN, Hyper(sw, 0.5)))
    print(f"  sigma_w = {sw:4.1f}: xi = {xi:.2f}")

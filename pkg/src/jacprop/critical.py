"""Fixed points of the kernel recursion and the criticality condition.

A hyperparameter pair ``(sigma_w, sigma_b)`` is critical when the
fixed-point Jacobian multiplier equals one: gradients then neither vanish
nor explode exponentially with depth.  Solving ``chi_j_star = 1`` traces a
line in the ``sigma_b``-``sigma_w`` plane; adding the kernel-stability
condition ``chi_k_star = 1`` pins isolated critical points.  Away from
the line the Jacobian norms behave like ``exp(+-l / xi)`` with
correlation length ``xi = 1 / |log chi_star|``; on it they decay
algebraically, ``J ~ l**(-zeta)``, with an activation-dependent exponent
that this module extracts numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .activations import Activation, MomentKind, moment_closed
from .meanfield import Hyper, NormMode, chi_jacobian, kernel_step, trace

__all__ = [
    "FixedPoint",
    "CriticalLinePoint",
    "ExponentEstimate",
    "find_fixed_point",
    "chi_star",
    "critical_line",
    "critical_point",
    "correlation_length",
    "exponent_numeric",
    "expansion_coefficient",
    "gelu_parametric_line",
]

#: Below this value an iterated kernel is reported as exactly zero.
ZERO_FLOOR = 1e-14
#: Iterates beyond this are declared divergent.
OVERFLOW = 1e300


@dataclass(frozen=True)
class FixedPoint:
    """Result of iterating the kernel map to convergence."""

    k_star: float
    chi_k_star: float
    chi_j_star: float
    converged: bool
    iterations: int

    @property
    def diverged(self) -> bool:
        return not self.converged and math.isinf(self.k_star)


@dataclass(frozen=True)
class CriticalLinePoint:
    """A solution of ``chi_star = 1`` at fixed ``sigma_w``.

    ``sigma_b`` is NaN when the solver found no root for this ``sigma_w``
    (the sweep keeps going regardless).
    """

    sigma_w: float
    sigma_b: float
    residual: float
    k_star: float

    @property
    def found(self) -> bool:
        return not math.isnan(self.sigma_b)


def _kernel_derivative(
    act: Activation, mode: NormMode, hp: Hyper, k: float, step: float = 1e-6
) -> float:
    """d kernel_step / dK at ``k`` by second-order finite differences."""
    g = lambda x: kernel_step(act, mode, hp, x)  # noqa: E731
    h = step * max(1.0, abs(k))
    if k >= h:
        return (g(k + h) - g(k - h)) / (2.0 * h)
    return (-3.0 * g(k) + 4.0 * g(k + h) - g(k + 2.0 * h)) / (2.0 * h)


def find_fixed_point(
    act: Activation,
    mode: NormMode,
    hp: Hyper,
    k_init: float = 1.0,
    max_iter: int = 100_000,
    tol: float = 1e-12,
) -> FixedPoint:
    """Locate the fixed point of the kernel map by Picard iteration.

    Both LayerNorm modes reach their fixed kernel after a single step and
    return immediately.  Scale-invariant activations in the vanilla mode
    use the closed-form ``K* = sigma_b^2 / (1 - chi_k)`` of the affine
    kernel map.  Smooth activations iterate; a Newton polish on
    ``kernel_step(K) - K`` handles the algebraic slowdown near
    criticality, and convergence below :data:`ZERO_FLOOR` is reported as
    exactly zero.  Divergence (kernel overflow) yields ``converged=False``
    with an infinite ``k_star`` rather than an exception.
    """
    if k_init < 0:
        raise ValueError(f"k_init must be nonnegative, got {k_init}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")

    def finish(k_star: float, iters: int, converged: bool = True) -> FixedPoint:
        if math.isinf(k_star):
            return FixedPoint(math.inf, math.inf, _saturated_chi(act, hp), False, iters)
        # Iterates crawling toward the K* = 0 fixed point stall at the
        # step-size tolerance; snap to zero when zero is actually fixed.
        if 0 < k_star < max(ZERO_FLOOR, 1e4 * tol):
            if kernel_step(act, mode, hp, 0.0) == 0.0:
                k_star = 0.0
        chi_k = _kernel_derivative(act, mode, hp, k_star)
        chi_j = chi_jacobian(act, mode, hp, k_star if k_star > 0 else _ln_safe(mode, hp, k_star))
        return FixedPoint(k_star, chi_k, chi_j, converged, iters)

    if mode in (NormMode.PRE_LN, NormMode.POST_LN):
        return finish(kernel_step(act, mode, hp, k_init), 1)

    if act.family == "scale_invariant":
        chi_k = hp.sw2 * 0.5 * (act.a_plus**2 + act.a_minus**2)
        if chi_k < 1.0:
            return finish(hp.sb2 / (1.0 - chi_k), 0)
        if chi_k == 1.0 and hp.sb2 == 0.0:
            return finish(k_init, 0)  # every kernel is fixed
        return finish(math.inf, 0, converged=False)

    k = float(k_init)
    for it in range(1, max_iter + 1):
        k_next = kernel_step(act, mode, hp, k)
        if not math.isfinite(k_next) or k_next > OVERFLOW:
            return finish(math.inf, it, converged=False)
        if abs(k_next - k) <= tol * max(1.0, abs(k_next)):
            k = k_next
            break
        k = k_next
    else:
        # Picard stalled (chi_k near 1); polish with Newton on g(K) - K.
        for it2 in range(200):
            f = kernel_step(act, mode, hp, k) - k
            fp = _kernel_derivative(act, mode, hp, k) - 1.0
            if fp == 0.0:
                break
            k_new = k - f / fp
            if k_new < 0.0:
                k_new = 0.5 * k
            if abs(k_new - k) <= tol * max(1.0, abs(k_new)):
                k = k_new
                break
            k = k_new
        k = max(k, 0.0)
        if k < ZERO_FLOOR:
            k = 0.0
        # A stalled map need not have a fixed point at all (a "ghost"
        # bottleneck just past a tangent bifurcation slows Picard the
        # same way); accept the polished value only if it is a root.
        if abs(kernel_step(act, mode, hp, k) - k) > 100.0 * tol * max(1.0, k):
            return finish(math.inf, max_iter, converged=False)
        return finish(k, max_iter)

    if k < ZERO_FLOOR:
        k = 0.0
    return finish(k, it)


def _ln_safe(mode: NormMode, hp: Hyper, k: float) -> float:
    # chi_jacobian(PRE_LN) divides by the kernel; a vanishing fixed kernel
    # only happens for sigma_w = sigma_b = 0, which has no sensible chi.
    if mode is NormMode.PRE_LN and k <= 0:
        raise ValueError("pre-LN fixed kernel is zero; chi undefined")
    return k


def _saturated_chi(act: Activation, hp: Hyper) -> float:
    """Limit of the Jacobian multiplier along a divergent kernel."""
    return hp.sw2 * moment_closed(act, MomentKind.DPHI2, 1e12)


def chi_star(
    act: Activation, mode: NormMode, hp: Hyper, k_init: float = 1.0
) -> float:
    """Fixed-point Jacobian multiplier; the order/chaos indicator.

    When the kernel diverges (possible only for unbounded activations in
    the vanilla mode) the saturated large-kernel limit of the multiplier
    is returned, which is the value the layer multiplier actually
    approaches with depth.
    """
    fp = find_fixed_point(act, mode, hp, k_init=k_init)
    return fp.chi_j_star


def correlation_length(chi: float) -> float:
    """Depth scale ``1 / |log chi|`` over which gradients stay appreciable."""
    if chi <= 0:
        raise ValueError(f"chi must be positive, got {chi}")
    if chi == 1.0:
        return math.inf
    return 1.0 / abs(math.log(chi))


def _chi_of_sigma_b(
    act: Activation, mode: NormMode, sigma_w: float
) -> Callable[[float], float]:
    # Iterating from K = 0 always starts inside the attraction basin of
    # the lowest fixed point (the maps are monotone increasing with
    # g(0) >= 0), which keeps the sweep well defined next to tangent
    # bifurcations where larger starts would overshoot into divergence.
    def f(sigma_b: float) -> float:
        return chi_star(act, mode, Hyper(sigma_w, sigma_b), k_init=0.0)

    return f


def critical_line(
    act: Activation,
    mode: NormMode,
    sweep: Sequence[float],
    tol: float = 1e-10,
) -> list[CriticalLinePoint]:
    """Solve ``chi_star(sigma_w, sigma_b) = 1`` for each ``sigma_w``.

    Roots are bracketed in ``sigma_b`` starting from ``[0, 10 sigma_w]``
    with geometric expansion, then refined by Brent's method.  A sweep
    value admitting no root produces a NaN entry and the scan continues.
    The vanilla GELU line is served by the exact parametric form (see
    :func:`gelu_parametric_line`), which is numerically stable along the
    entire line; the generic root finder remains available for
    cross-checking.
    """
    out = []
    for sigma_w in sweep:
        if act.family == "gelu" and mode is NormMode.VANILLA:
            out.append(_gelu_vanilla_point(act, float(sigma_w), tol))
            continue
        out.append(_solve_line_point(act, mode, float(sigma_w), tol))
    return out


def _solve_line_point(
    act: Activation, mode: NormMode, sigma_w: float, tol: float
) -> CriticalLinePoint:
    no_solution = CriticalLinePoint(sigma_w, math.nan, math.nan, math.nan)
    if sigma_w <= 0:
        return no_solution
    f = _chi_of_sigma_b(act, mode, sigma_w)

    if act.family == "scale_invariant" and mode is NormMode.VANILLA:
        # chi is independent of both K and sigma_b; the line degenerates.
        chi = f(0.0)
        if abs(chi - 1.0) <= 1e-9:
            return _line_point(act, mode, sigma_w, 0.0)
        return no_solution

    r0 = f(0.0) - 1.0
    if abs(r0) <= max(tol, 1e-12):
        return _line_point(act, mode, sigma_w, 0.0)
    # chi is monotone in sigma_b for every implemented mode, but the
    # direction differs (LN modes decrease, vanilla GELU increases), so
    # the bracket expands until the residual changes sign either way.
    lo, hi = 0.0, 10.0 * sigma_w
    r_hi = f(hi) - 1.0
    expansions = 0
    while r_hi * r0 > 0 and expansions < 60:
        lo, hi = hi, 2.0 * hi
        r_hi = f(hi) - 1.0
        expansions += 1
    if r_hi * r0 > 0:
        return no_solution
    sigma_b = brentq(lambda b: f(b) - 1.0, lo, hi, xtol=1e-12, rtol=8.9e-16)
    return _line_point(act, mode, sigma_w, sigma_b)


def _line_point(
    act: Activation, mode: NormMode, sigma_w: float, sigma_b: float
) -> CriticalLinePoint:
    hp = Hyper(sigma_w, sigma_b)
    fp = find_fixed_point(act, mode, hp, k_init=0.0)
    return CriticalLinePoint(sigma_w, sigma_b, abs(fp.chi_j_star - 1.0), fp.k_star)


def gelu_parametric_line(k_star: float, act: Activation | None = None):
    """Exact vanilla-GELU critical pair ``(sigma_w, sigma_b)`` at kernel ``k_star``.

    Eliminating the arcsin term between the fixed-point and criticality
    conditions leaves ``sigma_w^2 = 1 / <phi'(h)^2>`` and ``sigma_b^2 =
    K* - sigma_w^2 <phi(h)^2>``, both evaluated at ``K*``; scanning ``K*``
    draws the whole line.
    """
    act = act or Activation.gelu()
    sw2 = 1.0 / moment_closed(act, MomentKind.DPHI2, k_star)
    sb2 = k_star - sw2 * moment_closed(act, MomentKind.PHI2, k_star)
    if sb2 < 0 and sb2 > -1e-12:
        sb2 = 0.0
    return math.sqrt(sw2), math.sqrt(sb2) if sb2 >= 0 else math.nan


def _gelu_vanilla_point(
    act: Activation, sigma_w: float, tol: float
) -> CriticalLinePoint:
    no_solution = CriticalLinePoint(sigma_w, math.nan, math.nan, math.nan)
    sw_of_k = lambda k: gelu_parametric_line(k, act)[0]  # noqa: E731
    # sigma_w(K*) falls monotonically from 2 at K*=0 toward sqrt(2).
    k_hi = 1.0
    while sw_of_k(k_hi) > sigma_w and k_hi < 1e8:
        k_hi *= 4.0
    if sigma_w > sw_of_k(0.0) or sw_of_k(k_hi) > sigma_w:
        return no_solution
    if sigma_w == sw_of_k(0.0):
        k_star = 0.0
    else:
        k_star = brentq(lambda k: sw_of_k(k) - sigma_w, 0.0, k_hi, xtol=1e-13)
    _, sigma_b = gelu_parametric_line(k_star, act)
    if math.isnan(sigma_b):
        return no_solution
    hp = Hyper(sigma_w, sigma_b)
    residual = abs(chi_jacobian(act, NormMode.VANILLA, hp, k_star) - 1.0)
    return CriticalLinePoint(sigma_w, sigma_b, residual, k_star)


def critical_point(
    act: Activation,
    mode: NormMode = NormMode.VANILLA,
    k_max: float = 50.0,
    k_grid: int = 400,
) -> list[CriticalLinePoint]:
    """Solve ``chi_j_star = 1`` and ``chi_k_star = 1`` simultaneously.

    Only the vanilla mode has isolated critical points (the LayerNorm
    modes satisfy the kernel condition trivially and are critical on
    lines).  The joint system is reduced to a single equation in the
    fixed-point kernel: ``sigma_w^2 = 1 / <phi'^2>(K)`` enforces the
    Jacobian condition, after which roots of ``chi_k(K) - 1`` are found
    on a grid over ``[0, k_max]``.  All roots are returned, ordered by
    increasing kernel.
    """
    if mode is not NormMode.VANILLA:
        raise ValueError("critical points exist only in the vanilla mode")

    if act.family == "scale_invariant":
        s2 = 0.5 * (act.a_plus**2 + act.a_minus**2)
        sigma_w = math.sqrt(1.0 / s2)
        return [CriticalLinePoint(sigma_w, 0.0, 0.0, 0.0)]

    def chi_k_residual(k: float) -> float:
        sw2 = 1.0 / moment_closed(act, MomentKind.DPHI2, k)
        hp = Hyper(math.sqrt(sw2), 0.0)
        return _kernel_derivative(act, NormMode.VANILLA, hp, k) - 1.0

    points: list[CriticalLinePoint] = []

    def add_point(k_star: float):
        sigma_w, sigma_b = _point_at_kernel(act, k_star)
        if math.isnan(sigma_b):
            return
        hp = Hyper(sigma_w, sigma_b)
        residual = abs(chi_jacobian(act, NormMode.VANILLA, hp, k_star) - 1.0)
        points.append(CriticalLinePoint(sigma_w, sigma_b, residual, k_star))

    if abs(chi_k_residual(0.0)) <= 1e-8:
        add_point(0.0)
    grid = np.linspace(0.0, k_max, k_grid + 1)
    vals = [chi_k_residual(k) for k in grid]
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0 and a > 0:
            add_point(a)
        elif fa * fb < 0:
            k_star = brentq(chi_k_residual, a, b, xtol=1e-13)
            if k_star > 1e-9:  # the boundary root was already collected
                add_point(k_star)
    return points


def _point_at_kernel(act: Activation, k_star: float):
    sw2 = 1.0 / moment_closed(act, MomentKind.DPHI2, k_star)
    sb2 = k_star - sw2 * moment_closed(act, MomentKind.PHI2, k_star)
    if sb2 < 0:
        if sb2 < -1e-10:
            return math.nan, math.nan
        sb2 = 0.0
    return math.sqrt(sw2), math.sqrt(sb2)


@dataclass(frozen=True)
class ExponentEstimate:
    """Numerical critical exponent and the kernel-expansion diagnostic."""

    zeta: float
    dk_coeff: float
    window: tuple[int, int]


def exponent_numeric(
    act: Activation,
    mode: NormMode,
    hp: Hyper,
    depth: int,
    fit_from: int,
    k0: float | None = None,
) -> ExponentEstimate:
    """Extract the critical exponent from a deep trace at criticality.

    At a critical configuration the layer multiplier approaches one as
    ``chi[l] = 1 - zeta / l``, so ``zeta`` is estimated as the mean of
    ``l * (1 - chi[l])`` over ``l >= fit_from``; the companion diagnostic
    ``dk_coeff`` is the mean of ``l * (K[l] - K*)``.  The configuration
    must actually be critical (``|chi_star - 1| <= 0.01``), otherwise the
    multipliers converge to a non-unit constant and the estimator grows
    linearly instead of converging.  ``k0`` seeds the kernel; half-stable
    fixed points must be approached from their attracting side.
    """
    if fit_from < 1 or depth < 2 * fit_from:
        raise ValueError("need depth >= 2 * fit_from and fit_from >= 1")
    if k0 is None:
        k0 = 0.3 if mode is NormMode.VANILLA else 1.0
    fp = find_fixed_point(act, mode, hp, k_init=k0)
    if not abs(fp.chi_j_star - 1.0) <= 1e-2:
        raise ValueError(
            f"configuration is not critical: chi_star = {fp.chi_j_star!r}"
        )
    tr = trace(act, mode, hp, depth, k0, l0=0)
    ls = np.arange(fit_from, depth + 1)
    zeta = float(np.mean(ls * (1.0 - tr.chi_j[fit_from:])))
    k_ref = fp.k_star if math.isfinite(fp.k_star) else math.nan
    dk = float(np.mean(ls * (tr.K[fit_from:] - k_ref)))
    return ExponentEstimate(zeta=zeta, dk_coeff=dk, window=(fit_from, depth))


def expansion_coefficient(
    act: Activation, hp: Hyper, k_star: float, step: float = 1e-2
) -> float:
    """Asymptotic value of ``l * (1 - chi[l])`` along the attracting branch.

    Expanding the kernel map to second order around a marginal fixed
    point (``chi_k = 1``) gives ``K[l] - K* ~ -1 / (c l)`` with ``c`` half
    the second derivative of the map, and hence ``l (1 - chi[l]) ->
    chi_j'(K*) / c``.  Derivatives are taken by Richardson-extrapolated
    central differences; ``k_star`` must be an interior (> 0) fixed point.
    """
    if k_star <= 0:
        raise ValueError("expansion coefficient needs an interior fixed point")
    chi = lambda k: chi_jacobian(act, NormMode.VANILLA, hp, k)  # noqa: E731
    g = lambda k: kernel_step(act, NormMode.VANILLA, hp, k)  # noqa: E731

    def d1(f, h):
        return (f(k_star + h) - f(k_star - h)) / (2.0 * h)

    def d2(f, h):
        return (f(k_star + h) - 2.0 * f(k_star) + f(k_star - h)) / (h * h)

    h = min(step, 0.25 * k_star)
    chi_p = (4.0 * d1(chi, h / 2.0) - d1(chi, h)) / 3.0
    g_pp = (4.0 * d2(g, h / 2.0) - d2(g, h)) / 3.0
    return 2.0 * chi_p / g_pp

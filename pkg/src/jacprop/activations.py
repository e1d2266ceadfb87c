"""Pointwise activations, their derivatives, and Gaussian moments.

Every infinite-width quantity in this library reduces to one-dimensional
expectations of the form

.. math::

    \\langle f(h) \\rangle = \\frac{1}{\\sqrt{2\\pi K}}
        \\int dh\\, f(h)\\, e^{-h^2 / 2K},

where ``f`` is built from an activation and its derivatives and ``K`` is
the variance of the preactivation distribution.  Three activation families
are supported:

* scale-invariant, ``phi(x) = a_plus * x`` for ``x > 0`` and
  ``a_minus * x`` for ``x < 0`` (ReLU is ``a_plus=1, a_minus=0``);
* erf, ``phi(x) = erf(x)``;
* GELU, ``phi(x) = x/2 * (1 + erf(x / sqrt(2)))``.

Each moment has a closed-form evaluator (:func:`moment_closed`) and an
independent numerical oracle (:func:`moment_quadrature`).  The two are
kept strictly separate so that tests can use one to validate the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import erf as _erf, roots_legendre

__all__ = [
    "Activation",
    "MomentKind",
    "moment_closed",
    "moment_quadrature",
    "moment_integrand",
    "has_closed_form",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)

# Truncation of the substituted variable t = h / sqrt(2K).  exp(-t^2) at
# t = 13.5 is ~1e-80, far below any polynomial growth of the integrands.
_T_MAX = 13.5
# All non-polynomial structure of the supported activations lives within
# |h| <~ 4; panels are split there so spectral accuracy survives large K.
_FEATURE_SCALE = 4.0


@dataclass(frozen=True)
class Activation:
    """An activation family plus its slope parameters.

    ``a_plus`` and ``a_minus`` are meaningful only for the scale-invariant
    family; they are carried (and ignored) for the smooth families so the
    type stays a plain value object.
    """

    family: str
    a_plus: float = 1.0
    a_minus: float = 0.0

    _FAMILIES = ("scale_invariant", "erf", "gelu")

    def __post_init__(self):
        if self.family not in self._FAMILIES:
            raise ValueError(f"unknown activation family: {self.family!r}")

    @classmethod
    def relu(cls) -> "Activation":
        return cls("scale_invariant", 1.0, 0.0)

    @classmethod
    def scale_invariant(cls, a_plus: float, a_minus: float) -> "Activation":
        return cls("scale_invariant", float(a_plus), float(a_minus))

    @classmethod
    def erf(cls) -> "Activation":
        return cls("erf")

    @classmethod
    def gelu(cls) -> "Activation":
        return cls("gelu")

    @property
    def smooth(self) -> bool:
        """True when the activation has no kink (erf, GELU)."""
        return self.family != "scale_invariant"

    def eval(self, x, order: int = 0):
        """Evaluate the activation or one of its derivatives.

        ``order`` selects phi (0), phi' (1), phi'' (2) or phi''' (3).
        Accepts scalars or numpy arrays.  For the scale-invariant family
        the derivative at exactly 0 is taken from the ``a_minus`` branch
        and orders >= 2 are identically zero; the convention is measure
        zero under every Gaussian average.
        """
        if order not in (0, 1, 2, 3):
            raise ValueError(f"derivative order must be in 0..3, got {order}")
        x = np.asarray(x, dtype=float)
        if self.family == "scale_invariant":
            if order == 0:
                return np.where(x > 0, self.a_plus * x, self.a_minus * x)
            if order == 1:
                return np.where(x > 0, self.a_plus, self.a_minus) * np.ones_like(x)
            return np.zeros_like(x)
        if self.family == "erf":
            if order == 0:
                return _erf(x)
            g = _TWO_OVER_SQRT_PI * np.exp(-x * x)
            if order == 1:
                return g
            if order == 2:
                return -2.0 * x * g
            return (4.0 * x * x - 2.0) * g
        # gelu: x * Phi(x) with Phi the standard normal CDF
        pdf = np.exp(-0.5 * x * x) / _SQRT_2PI
        cdf = 0.5 * (1.0 + _erf(x / math.sqrt(2.0)))
        if order == 0:
            return x * cdf
        if order == 1:
            return cdf + x * pdf
        if order == 2:
            return (2.0 - x * x) * pdf
        return x * (x * x - 4.0) * pdf

    def __call__(self, x, order: int = 0):
        return self.eval(x, order)


class MomentKind(Enum):
    """Which Gaussian expectation of the activation is requested."""

    PHI2 = "phi2"      # <phi(h)^2>
    DPHI2 = "dphi2"    # <phi'(h)^2>
    PHI1 = "phi1"      # <phi(h)>
    DELTA = "delta"    # <phi''(h)^2 + phi'''(h) phi'(h)>


def moment_integrand(act: Activation, kind: MomentKind):
    """Return the plain function of h whose N(0, K) average is the moment."""
    if kind is MomentKind.PHI2:
        return lambda h: act.eval(h, 0) ** 2
    if kind is MomentKind.DPHI2:
        return lambda h: act.eval(h, 1) ** 2
    if kind is MomentKind.PHI1:
        return lambda h: act.eval(h, 0)
    if kind is MomentKind.DELTA:
        return lambda h: act.eval(h, 2) ** 2 + act.eval(h, 3) * act.eval(h, 1)
    raise ValueError(f"unknown moment kind: {kind!r}")


def has_closed_form(act: Activation, kind: MomentKind) -> bool:
    """True when :func:`moment_closed` serves an exact expression."""
    if act.family == "scale_invariant":
        return True
    return kind is not MomentKind.DELTA


def moment_closed(act: Activation, kind: MomentKind, K: float) -> float:
    """Exact Gaussian moment of the activation under h ~ N(0, K).

    The erf and GELU DELTA moments have no tractable closed form and are
    transparently served by the quadrature oracle instead; use
    :func:`has_closed_form` to tell the two apart.
    """
    if K < 0:
        raise ValueError(f"kernel K must be nonnegative, got {K}")
    K = float(K)
    if act.family == "scale_invariant":
        ap, am = act.a_plus, act.a_minus
        s2 = 0.5 * (ap * ap + am * am)
        if kind is MomentKind.PHI2:
            return s2 * K
        if kind is MomentKind.DPHI2:
            return s2
        if kind is MomentKind.PHI1:
            return (ap - am) * math.sqrt(K / (2.0 * math.pi))
        return 0.0
    if act.family == "erf":
        if kind is MomentKind.PHI2:
            return (2.0 / math.pi) * math.asin(2.0 * K / (1.0 + 2.0 * K))
        if kind is MomentKind.DPHI2:
            return (4.0 / math.pi) / math.sqrt(1.0 + 4.0 * K)
        if kind is MomentKind.PHI1:
            return 0.0
        return moment_quadrature(act, kind, K)
    # gelu
    if kind is MomentKind.PHI2:
        return (
            K / 4.0
            + (K / (2.0 * math.pi)) * math.asin(K / (1.0 + K))
            + K * K / (math.pi * (1.0 + K) * math.sqrt(1.0 + 2.0 * K))
        )
    if kind is MomentKind.DPHI2:
        return 0.25 + (1.0 / (2.0 * math.pi)) * (
            math.asin(K / (1.0 + K))
            + K * (3.0 + 5.0 * K) / ((1.0 + K) * (1.0 + 2.0 * K) ** 1.5)
        )
    if kind is MomentKind.PHI1:
        return K / math.sqrt(2.0 * math.pi * (1.0 + K))
    return moment_quadrature(act, kind, K)


@lru_cache(maxsize=32)
def _legendre_nodes(n: int):
    x, w = roots_legendre(n)
    return x, w


def moment_quadrature(
    act: Activation, kind: MomentKind, K: float, nodes: int = 120
) -> float:
    """Numerical oracle for the Gaussian moment under h ~ N(0, K).

    Substitutes h = sqrt(2K) t and integrates f(h) exp(-t^2) / sqrt(pi)
    with a composite Gauss-Legendre rule of ``nodes`` points per panel.
    Panels are split at t = 0 (so the scale-invariant kink always sits on
    a panel boundary) and at the activation feature scale |h| ~ 4 (so the
    transition region stays resolved when K is large).  K = 0 collapses
    the measure to a point mass and returns the integrand at 0.
    """
    if K < 0:
        raise ValueError(f"kernel K must be nonnegative, got {K}")
    if nodes < 16:
        raise ValueError(f"quadrature needs at least 16 nodes, got {nodes}")
    f = moment_integrand(act, kind)
    if K == 0.0:
        return float(f(np.array([0.0]))[0])
    scale = math.sqrt(2.0 * K)
    breaks = [0.0]
    if _FEATURE_SCALE / scale < _T_MAX:
        breaks.append(_FEATURE_SCALE / scale)
    breaks.append(_T_MAX)
    x, w = _legendre_nodes(nodes)
    total = 0.0
    panels = list(zip(breaks[:-1], breaks[1:]))
    panels += [(-hi, -lo) for lo, hi in panels]
    for a, b in panels:
        t = 0.5 * (b - a) * x + 0.5 * (b + a)
        total += 0.5 * (b - a) * np.sum(w * f(scale * t) * np.exp(-t * t))
    return float(total / math.sqrt(math.pi))

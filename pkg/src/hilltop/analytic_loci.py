"""Closed-form bifurcation loci and codimension-two points.

Everything here is exact algebra on the normal form: the trace-zero
(Hopf / neutral-saddle) locus at mu = 0, Takens-Bogdanov and Bautin points,
the first Lyapunov coefficient, the x-parametrized saddle-node locus and the
cusp point where its two parameter derivatives vanish simultaneously.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .normal_form import Params, SingularParametrizationError

__all__ = [
    "NoTakensBogdanovError",
    "DegenerateParametersError",
    "LocusPoleError",
    "HopfInfo",
    "SNLocusPoint",
    "trace_zero_point",
    "takens_bogdanov_gammas",
    "cusp_point",
    "saddle_node_locus",
]


class NoTakensBogdanovError(ValueError):
    """Takens-Bogdanov points require alpha*beta < 0."""


class DegenerateParametersError(ValueError):
    """Raised when alpha*beta = 0 makes a locus formula degenerate."""


class LocusPoleError(ValueError):
    """Raised at the x = 0 pole of the saddle-node locus parametrization."""


@dataclass(frozen=True)
class HopfInfo:
    """Trace-zero equilibrium data at mu = 0.

    ``kind`` is ``hopf`` when gamma**2 < -alpha*beta*(alpha+beta)**2,
    ``takens_bogdanov`` at equality and ``neutral_saddle`` otherwise.
    ``omega`` is the printed frequency quantity
    ``2*sqrt(-gamma**2 - alpha*beta*(alpha+beta)**2)`` (zero at a
    Takens-Bogdanov point, None for a neutral saddle) and ``ell1`` the first
    Lyapunov coefficient ``4*beta*gamma/omega**3``; only the sign of ``ell1``
    is meaningful, negative meaning supercritical.
    """

    x_eq: float
    kind: str
    omega: float | None = None
    ell1: float | None = None


def trace_zero_point(p: Params, tb_tol: float = 1e-12) -> HopfInfo:
    """Classify the trace-zero equilibrium of the mu = 0 locus.

    The equilibrium sits at (x_eq, -x_eq) with x_eq = -gamma/(alpha+beta).
    ``tb_tol`` is the relative discriminant tolerance inside which the point
    is reported as Takens-Bogdanov.
    """
    s = p.alpha + p.beta
    if s == 0.0:
        raise SingularParametrizationError(
            "trace-zero locus is undefined for alpha + beta = 0"
        )
    x_eq = -p.gamma / s
    disc = -p.gamma * p.gamma - p.alpha * p.beta * s * s
    scale = p.gamma * p.gamma + abs(p.alpha * p.beta) * s * s
    if abs(disc) <= tb_tol * scale:
        return HopfInfo(x_eq, "takens_bogdanov", 0.0, None)
    if disc > 0.0:
        omega = 2.0 * math.sqrt(disc)
        ell1 = 4.0 * p.beta * p.gamma / omega**3
        return HopfInfo(x_eq, "hopf", omega, ell1)
    return HopfInfo(x_eq, "neutral_saddle", None, None)


def takens_bogdanov_gammas(alpha: float, beta: float) -> tuple[float, float]:
    """Both gamma values with a double-zero eigenvalue, (gamma_-, gamma_+).

    These are ``-+sqrt(-alpha*beta)*(alpha+beta)`` and bound the gamma range
    in which the mu = 0 locus is a Hopf curve.
    """
    if alpha * beta >= 0.0:
        raise NoTakensBogdanovError(
            f"Takens-Bogdanov points require alpha*beta < 0, "
            f"got alpha={alpha}, beta={beta}"
        )
    if alpha + beta == 0.0:
        warnings.warn(
            "alpha + beta = 0: both Takens-Bogdanov points collapse to gamma = 0",
            stacklevel=2,
        )
    g = math.sqrt(-alpha * beta) * (alpha + beta)
    return (-abs(g), abs(g)) if g >= 0 else (g, -g)


def cusp_point(alpha: float, beta: float) -> tuple[float, float]:
    """(lambda_C, gamma_C) where the two saddle-node branches meet in a cusp.

    Fractional powers are taken as (value**2)**(1/3) >= 0 so that the result
    stays real for negative couplings.
    """
    if alpha * beta == 0.0:
        raise DegenerateParametersError("cusp point undefined for alpha*beta = 0")
    a = (alpha * alpha) ** (1.0 / 3.0)
    b = (beta * beta) ** (1.0 / 3.0)
    lam_c = 1.5 * a * b * (a + b)
    gamma_c = 1.5 * a * b * (a - b)
    return lam_c, gamma_c


@dataclass(frozen=True)
class SNLocusPoint:
    """A point of the saddle-node locus, parametrized by the equilibrium x.

    (x, y) is an equilibrium at (lam, gamma) and det J = 4*(x*y - alpha*beta)
    vanishes there.
    """

    x: float
    y: float
    lam: float
    gamma: float


def saddle_node_locus(
    alpha: float, beta: float, x_values
) -> list[SNLocusPoint]:
    """Saddle-node locus points for each parameter value x (x != 0).

    The locus splits into two disjoint curves, one for x > 0 and one for
    x < 0.  Per point: ``y = alpha*beta/x``,
    ``lam = x^2/2 + beta x + alpha^2 beta / x + alpha^2 beta^2 / (2 x^2)``,
    ``gamma = x^2/2 - beta x + alpha^2 beta / x - alpha^2 beta^2 / (2 x^2)``.
    """
    points = []
    a2b = alpha * alpha * beta
    for x in x_values:
        x = float(x)
        if x == 0.0:
            raise LocusPoleError("saddle-node locus parametrization has a pole at x = 0")
        half_x2 = 0.5 * x * x
        bx = beta * x
        inv = a2b / x
        inv2 = 0.5 * a2b * beta / (x * x)
        points.append(
            SNLocusPoint(
                x=x,
                y=alpha * beta / x,
                lam=half_x2 + bx + inv + inv2,
                gamma=half_x2 - bx + inv - inv2,
            )
        )
    return points

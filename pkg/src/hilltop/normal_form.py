"""Coupled saddle-node normal form: field, Jacobian, parameter views, symmetries.

The planar vector field couples two scalar saddle-node normal forms through
the linear cross terms ``2*alpha*y`` and ``2*beta*x``.  Internally the four
unfolding parameters are ``(alpha, beta, gamma, mu)``: ``mu`` measures the
offset of the classical unfolding parameter ``lambda`` from the value
``lambda_tr0`` at which an equilibrium with zero trace exists.  ``lambda``
itself is available as a derived view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SingularParametrizationError",
    "DegenerateCouplingError",
    "Params",
    "State",
    "CaseInfo",
    "lambda_tr0_value",
    "lambda_tr0",
    "eval_field",
    "eval_field_lambda",
    "eval_jacobian",
    "field_xy",
    "jacobian_entries",
    "apply_symmetry",
    "classify_case",
]


class SingularParametrizationError(ValueError):
    """Raised when alpha + beta = 0 and a lambda_tr0-based quantity is needed."""


class DegenerateCouplingError(ValueError):
    """Raised when alpha*beta = 0 makes an operation ill-posed (skew-product coupling)."""


def lambda_tr0_value(gamma: float, alpha: float, beta: float) -> float:
    """Value of lambda at which an equilibrium with zero trace exists.

    Equals ``gamma*(gamma + alpha**2 - beta**2) / (alpha + beta)**2``.  Has a
    genuine pole at ``alpha + beta = 0``, which is a hard error here; callers
    in that regime must work with lambda directly.
    """
    s = alpha + beta
    if s == 0.0:
        raise SingularParametrizationError(
            "lambda_tr0 is undefined for alpha + beta = 0"
        )
    return gamma * (gamma + alpha * alpha - beta * beta) / (s * s)


@dataclass(frozen=True)
class Params:
    """Unfolding parameters (alpha, beta, gamma, mu).

    ``mu`` is the distance of lambda from the trace-zero value, so the Hopf /
    neutral-saddle locus is exactly ``mu = 0``.  Use :meth:`from_lambda` when
    starting from the (alpha, beta, gamma, lambda) form.
    """

    alpha: float
    beta: float
    gamma: float
    mu: float = 0.0

    @classmethod
    def from_lambda(cls, alpha: float, beta: float, gamma: float, lam: float) -> "Params":
        return cls(alpha, beta, gamma, lam - lambda_tr0_value(gamma, alpha, beta))

    @property
    def lam(self) -> float:
        """The classical unfolding parameter lambda = mu + lambda_tr0."""
        return self.mu + lambda_tr0_value(self.gamma, self.alpha, self.beta)

    def pvec(self) -> np.ndarray:
        """Continuation-active parameters (mu, beta, gamma) as an array."""
        return np.array([self.mu, self.beta, self.gamma])


@dataclass(frozen=True)
class State:
    """A point (x, y) in the phase plane.  Components must be finite."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite state ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


def lambda_tr0(p: Params) -> float:
    """Trace-zero value of lambda for the given parameters."""
    return lambda_tr0_value(p.gamma, p.alpha, p.beta)


def field_xy(x, y, p: Params):
    """Vector field on raw coordinates; broadcasts over array input.

    Returns ``(dx, dy)`` with
    ``dx = x**2 - mu - lambda_tr0 - gamma + 2*alpha*y`` and
    ``dy = y**2 - mu - lambda_tr0 + gamma + 2*beta*x``.
    """
    lt = lambda_tr0(p)
    dx = x * x - p.mu - lt - p.gamma + 2.0 * p.alpha * y
    dy = y * y - p.mu - lt + p.gamma + 2.0 * p.beta * x
    return dx, dy


def eval_field(s: State, p: Params) -> State:
    """Time derivative of the state under the normal form."""
    dx, dy = field_xy(s.x, s.y, p)
    return State(dx, dy)


def eval_field_lambda(s: State, alpha: float, beta: float, gamma: float, lam: float) -> State:
    """Field in the lambda parametrization; valid even when alpha + beta = 0."""
    dx = s.x * s.x - lam - gamma + 2.0 * alpha * s.y
    dy = s.y * s.y - lam + gamma + 2.0 * beta * s.x
    return State(dx, dy)


def jacobian_entries(x, y, p: Params):
    """Jacobian entries (fxx, fxy, fyx, fyy) = (2x, 2a, 2b, 2y); broadcasts."""
    return 2.0 * x, 2.0 * p.alpha, 2.0 * p.beta, 2.0 * y


def eval_jacobian(s: State, p: Params) -> np.ndarray:
    """Jacobian [[2x, 2*alpha], [2*beta, 2y]]; independent of gamma and mu."""
    return np.array(
        [[2.0 * s.x, 2.0 * p.alpha], [2.0 * p.beta, 2.0 * s.y]]
    )


def apply_symmetry(
    which: str, s: State, p: Params, t_direction: int = 1
) -> tuple[State, Params, int]:
    """Apply one of the two exact symmetries of the equations.

    ``negate``: (alpha, beta, x, y, t) -> (-alpha, -beta, -x, -y, -t); gamma
    and mu are unchanged.  ``swap``: (alpha, beta, x, y, gamma) ->
    (beta, alpha, y, x, -gamma); time is unchanged.  Both are involutions.
    """
    if which == "negate":
        return (
            State(-s.x, -s.y),
            Params(-p.alpha, -p.beta, p.gamma, p.mu),
            -t_direction,
        )
    if which == "swap":
        return (
            State(s.y, s.x),
            Params(p.beta, p.alpha, -p.gamma, p.mu),
            t_direction,
        )
    raise ValueError(f"unknown symmetry {which!r}; expected 'negate' or 'swap'")


@dataclass(frozen=True)
class CaseInfo:
    """Coupling-sign case tag plus advisory degeneracy flags."""

    case: str  # mutualistic | mixed | degenerate
    flags: tuple[str, ...]


def classify_case(p: Params) -> CaseInfo:
    """Classify the coupling signs and flag normal-form degeneracies.

    Flags are advisory; resolving the flagged degeneracies would need
    higher-order terms that are out of scope here.
    """
    ab = p.alpha * p.beta
    if ab > 0.0:
        case = "mutualistic"
    elif ab < 0.0:
        case = "mixed"
    else:
        case = "degenerate"
    flags = []
    if ab == 0.0:
        flags.append("uncoupled_direction")
    if p.alpha + p.beta == 0.0 and p.gamma == 0.0:
        flags.append("reversing_symmetry")
    if p.alpha == p.beta and p.gamma == 0.0:
        flags.append("swap_symmetry")
    return CaseInfo(case, tuple(flags))

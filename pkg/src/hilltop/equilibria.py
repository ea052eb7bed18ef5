"""Equilibria of the normal form: location, classification, null/eigenvectors.

Eliminating y through the first equation reduces the equilibrium problem to a
degree-4 polynomial in x, solved through the companion-matrix eigenvalues and
polished on the full planar system.  The null/eigenvector helpers provide the
oriented 2x2 closed forms used by the boundary-value defining systems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .normal_form import (
    DegenerateCouplingError,
    Params,
    State,
    field_xy,
)

__all__ = [
    "AmbiguousOrientationError",
    "WrongEquilibriumTypeError",
    "EquilibriumInfo",
    "NullEigenData",
    "find_equilibria",
    "classify",
    "classify_jacobian",
    "null_eigen_data",
    "nullvectors",
    "stable_eigenvector",
    "equilibrium_quartic_coeffs",
]

DEDUP_TOL = 1e-8
CLASSIFY_TOL = 1e-8


class AmbiguousOrientationError(ValueError):
    """The orientation reference is orthogonal to the requested vector."""


class WrongEquilibriumTypeError(ValueError):
    """The equilibrium does not have the type required by the operation."""


@dataclass
class EquilibriumInfo:
    """One equilibrium with its Jacobian, eigenvalues and type tag."""

    state: State
    jacobian: np.ndarray
    eigenvalues: tuple[complex, complex]
    type: str
    residual: float


def equilibrium_quartic_coeffs(p: Params) -> np.ndarray:
    """Coefficients (highest first) of the quartic in x for equilibria.

    With y = (lam + gamma - x^2) / (2*alpha) from the first equation, the
    second becomes ``(x^2 - (lam+gamma))^2 + 4 a^2 (2 b x + gamma - lam) = 0``.
    """
    if p.alpha == 0.0:
        raise DegenerateCouplingError(
            "equilibrium elimination requires alpha != 0 (skew-product case)"
        )
    lam = p.lam
    sg = lam + p.gamma
    a2 = p.alpha * p.alpha
    return np.array(
        [1.0, 0.0, -2.0 * sg, 8.0 * a2 * p.beta, sg * sg + 4.0 * a2 * (p.gamma - lam)]
    )


def _newton_polish(x: float, y: float, p: Params, steps: int = 4):
    """A few damped-free Newton steps on the planar system."""
    for _ in range(steps):
        fx, fy = field_xy(x, y, p)
        j11, j12, j21, j22 = 2.0 * x, 2.0 * p.alpha, 2.0 * p.beta, 2.0 * y
        det = j11 * j22 - j12 * j21
        if det == 0.0:
            break
        dx = (j22 * fx - j12 * fy) / det
        dy = (-j21 * fx + j11 * fy) / det
        x, y = x - dx, y - dy
        if abs(dx) + abs(dy) < 1e-14 * (1.0 + abs(x) + abs(y)):
            break
    fx, fy = field_xy(x, y, p)
    return x, y, float(np.hypot(fx, fy))


def find_equilibria(p: Params, residual_tol: float = 1e-12) -> list[EquilibriumInfo]:
    """All equilibria (0 to 4), deduplicated and sorted by x.

    Real roots of the eliminating quartic are polished on the planar system;
    coincident roots (within 1e-8 in x) are reported once, as a saddle-node
    when the determinant is small enough.
    """
    coeffs = equilibrium_quartic_coeffs(p)
    roots = np.roots(coeffs)
    scale = 1.0 + np.abs(roots).max() if roots.size else 1.0

    candidates = []
    for r in roots:
        if abs(r.imag) > 1e-6 * scale:
            continue
        x0 = float(r.real)
        y0 = (p.lam + p.gamma - x0 * x0) / (2.0 * p.alpha)
        x, y, res = _newton_polish(x0, y0, p)
        if res <= residual_tol:
            candidates.append((x, y, res))

    candidates.sort(key=lambda c: c[0])
    merged: list[tuple[float, float, float]] = []
    for c in candidates:
        if merged and abs(c[0] - merged[-1][0]) <= DEDUP_TOL and abs(
            c[1] - merged[-1][1]
        ) <= DEDUP_TOL:
            continue
        merged.append(c)

    out = []
    for x, y, res in merged:
        jac = np.array([[2.0 * x, 2.0 * p.alpha], [2.0 * p.beta, 2.0 * y]])
        eigs = np.linalg.eigvals(jac)
        info = EquilibriumInfo(
            state=State(x, y),
            jacobian=jac,
            eigenvalues=(complex(eigs[0]), complex(eigs[1])),
            type="",
            residual=res,
        )
        info.type = classify(info)
        out.append(info)
    return out


def classify_jacobian(jac: np.ndarray, tol: float = CLASSIFY_TOL) -> str:
    """Planar type tag from trace, determinant and discriminant.

    ``tol`` is relative to the Jacobian norm; the determinant threshold is
    quadratic in that scale so near-singular matrices classify as saddle-node
    (or nonhyperbolic_other when the trace vanishes as well).
    """
    tr = jac[0, 0] + jac[1, 1]
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    scale = max(np.abs(jac).max(), 1e-300)
    if abs(det) <= tol * scale * scale:
        return "saddle_node" if abs(tr) > tol * scale else "nonhyperbolic_other"
    if det < 0.0:
        return "saddle"
    if abs(tr) <= tol * scale:
        return "nonhyperbolic_other"
    disc = tr * tr - 4.0 * det
    if disc >= 0.0:
        return "stable_node" if tr < 0.0 else "unstable_node"
    return "stable_focus" if tr < 0.0 else "unstable_focus"


def classify(eq: EquilibriumInfo, tol: float = CLASSIFY_TOL) -> str:
    """Type tag of an equilibrium; see :func:`classify_jacobian`."""
    return classify_jacobian(eq.jacobian, tol)


def _orient(v: np.ndarray, u: np.ndarray, u_dev: np.ndarray) -> np.ndarray:
    proj = v @ (u_dev - u)
    if proj == 0.0:
        raise AmbiguousOrientationError(
            "orientation reference is orthogonal to the vector"
        )
    return v if proj > 0.0 else -v


def nullvectors(jac: np.ndarray, u, u_dev) -> tuple[np.ndarray, np.ndarray]:
    """Oriented right and left nullvectors (v_c, w_c) of a singular Jacobian.

    v_c has unit norm and points so that ``v_c . (u_dev - u) > 0``; w_c is
    scaled so that ``w_c . v_c = 1``.  Fails near a defective zero eigenvalue
    (Takens-Bogdanov), where the left and right nullvectors are orthogonal.
    """
    u = np.asarray(u, dtype=float)
    u_dev = np.asarray(u_dev, dtype=float)
    a, b = jac[0]
    c, d = jac[1]
    # nullvector from the better-scaled row
    v = np.array([b, -a]) if abs(a) + abs(b) >= abs(c) + abs(d) else np.array([d, -c])
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("zero Jacobian has no distinguished nullvector")
    v = _orient(v / nv, u, u_dev)
    w = np.array([c, -a]) if abs(a) + abs(c) >= abs(b) + abs(d) else np.array([d, -b])
    wv = w @ v
    if abs(wv) <= 1e-10 * np.linalg.norm(w):
        raise ValueError(
            "left and right nullvectors nearly orthogonal (defective zero eigenvalue)"
        )
    return v, w / wv


def stable_eigenvector(jac: np.ndarray, u, u_dev) -> tuple[np.ndarray, float]:
    """Oriented unit eigenvector and eigenvalue for the stable direction of a saddle."""
    u = np.asarray(u, dtype=float)
    u_dev = np.asarray(u_dev, dtype=float)
    tr = jac[0, 0] + jac[1, 1]
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if det >= 0.0:
        raise WrongEquilibriumTypeError("stable eigenvector requires a saddle (det J < 0)")
    rad = np.sqrt(tr * tr - 4.0 * det)
    lam_s = 0.5 * (tr - rad)
    a, b = jac[0]
    c, d = jac[1]
    # (J - lam I) v = 0 from whichever row is better conditioned
    r1 = np.array([b, lam_s - a])
    r2 = np.array([lam_s - d, c])
    v = r1 if np.linalg.norm(r1) >= np.linalg.norm(r2) else r2
    v = _orient(v / np.linalg.norm(v), u, u_dev)
    return v, float(lam_s)


@dataclass
class NullEigenData:
    """Oriented null/eigenvector bundle; fields are None when not applicable."""

    v_c: np.ndarray | None = None
    w_c: np.ndarray | None = None
    v_s: np.ndarray | None = None
    lambda_s: float | None = None


def null_eigen_data(
    eq: EquilibriumInfo, u_dev: State, tol: float = CLASSIFY_TOL
) -> NullEigenData:
    """Null vectors for a saddle-node and/or stable eigendata for a saddle.

    Orientation follows ``v . (u_dev - u) > 0`` for both vector families.
    """
    jac = eq.jacobian
    u = eq.state.as_array()
    ud = u_dev.as_array()
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    scale = max(np.abs(jac).max(), 1e-300)
    data = NullEigenData()
    if abs(det) <= tol * scale * scale:
        data.v_c, data.w_c = nullvectors(jac, u, ud)
    if det < 0.0:
        data.v_s, data.lambda_s = stable_eigenvector(jac, u, ud)
    if data.v_c is None and data.v_s is None:
        raise WrongEquilibriumTypeError(
            "equilibrium is neither a saddle-node nor a saddle"
        )
    return data

"""Homoclinic and SNIC loci approximated by fixed-large-period orbits.

A periodic orbit grown from a Hopf point is continued in mu until its period
factor reaches T_fix, then T is frozen and the two-parameter (gamma, mu)
curve is traced in both directions.  Where this curve rides the saddle-node
locus the orbit approximates a SNIC; elsewhere it approximates a homoclinic
connection to a hyperbolic saddle.  Distance monitors locate the SNIC
sub-segment and the approach to the two Takens-Bogdanov points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytic_loci import takens_bogdanov_gammas
from .collocation import OrbitSegment
from .continuation import Branch, BranchPoint, Event, StepControls
from .equilibria import find_equilibria
from .normal_form import Params, lambda_tr0_value
from .periodic import (
    PeriodicProblem,
    continue_with_remesh,
    hopf_mu_direction,
    start_periodic_from_hopf,
)

__all__ = [
    "sn_locus_project",
    "attach_mixed_case_monitors",
    "HomoclinicTrace",
    "continue_fixed_period_homoclinic",
    "extract_snic_segment",
]

_XGRID_POS = np.geomspace(5e-3, 40.0, 900)
_XGRID = np.concatenate([-_XGRID_POS[::-1], _XGRID_POS])


def sn_locus_project(alpha: float, beta: float, gamma: float, lam: float):
    """Closest saddle-node locus point to (gamma, lam) in parameter space.

    Returns ``(distance, x_star)``; the minimum over the x-parametrized locus
    is bracketed on a fixed grid and refined by parabolic interpolation, so
    the result is deterministic.
    """
    x = _XGRID
    a2b = alpha * alpha * beta
    lam_x = 0.5 * x * x + beta * x + a2b / x + 0.5 * a2b * beta / (x * x)
    gam_x = 0.5 * x * x - beta * x + a2b / x - 0.5 * a2b * beta / (x * x)
    d2 = (lam_x - lam) ** 2 + (gam_x - gamma) ** 2
    i = int(np.argmin(d2))
    if 0 < i < len(x) - 1 and x[i - 1] * x[i + 1] > 0:
        x3 = x[i - 1 : i + 2]
        d3 = d2[i - 1 : i + 2]
        denom = (x3[0] - x3[1]) * (x3[0] - x3[2]) * (x3[1] - x3[2])
        a_q = (x3[2] * (d3[1] - d3[0]) + x3[1] * (d3[0] - d3[2]) + x3[0] * (d3[2] - d3[1])) / denom
        b_q = (
            x3[2] ** 2 * (d3[0] - d3[1])
            + x3[1] ** 2 * (d3[2] - d3[0])
            + x3[0] ** 2 * (d3[1] - d3[2])
        ) / denom
        if a_q > 0:
            xs = -b_q / (2 * a_q)
            if x3[0] <= xs <= x3[2]:
                lam_s = 0.5 * xs * xs + beta * xs + a2b / xs + 0.5 * a2b * beta / (xs * xs)
                gam_s = 0.5 * xs * xs - beta * xs + a2b / xs - 0.5 * a2b * beta / (xs * xs)
                return math.hypot(lam_s - lam, gam_s - gamma), float(xs)
    return float(math.sqrt(d2[i])), float(x[i])


def attach_mixed_case_monitors(pp: PeriodicProblem) -> None:
    """Add the distance monitors used along the fixed-period trace."""
    alpha = pp.alpha
    nb = pp.nb

    def unpack(z):
        mu, beta, gamma = z[2 * nb + 1], z[2 * nb + 2], z[2 * nb + 3]
        return float(mu), float(beta), float(gamma)

    def d_snlocus(z):
        mu, beta, gamma = unpack(z)
        lam = mu + lambda_tr0_value(gamma, alpha, beta)
        d, _ = sn_locus_project(alpha, beta, gamma, lam)
        return d

    def d_orbit_sn(z):
        mu, beta, gamma = unpack(z)
        lam = mu + lambda_tr0_value(gamma, alpha, beta)
        _, xs = sn_locus_project(alpha, beta, gamma, lam)
        u_sn = np.array([xs, alpha * beta / xs])
        vals = z[: 2 * nb].reshape(nb, 2)
        return float(np.min(np.linalg.norm(vals - u_sn, axis=1)))

    def d_orbit_saddle(z):
        mu, beta, gamma = unpack(z)
        vals = z[: 2 * nb].reshape(nb, 2)
        best = 1e6
        for eq in find_equilibria(Params(alpha, beta, gamma, mu)):
            jac = eq.jacobian
            if jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0] < 0:
                d = float(np.min(np.linalg.norm(vals - eq.state.as_array(), axis=1)))
                best = min(best, d)
        return best

    def dist_tb(sign):
        def mon(z):
            mu, beta, gamma = unpack(z)
            g_m, g_p = takens_bogdanov_gammas(alpha, beta)
            g_tb = g_p if sign > 0 else g_m
            return math.hypot(gamma - g_tb, mu)

        return mon

    pp.problem.monitors.update(
        {
            "d_snlocus": d_snlocus,
            "d_orbit_sn": d_orbit_sn,
            "d_orbit_saddle": d_orbit_saddle,
            "dist_tb_plus": dist_tb(+1),
            "dist_tb_minus": dist_tb(-1),
        }
    )
    if attach_mixed_case_monitors not in pp.attachments:
        pp.attachments = pp.attachments + (attach_mixed_case_monitors,)


@dataclass
class HomoclinicTrace:
    """The fixed-period (gamma, mu) curve and the context to reuse it."""

    alpha: float
    beta: float
    T_fix: float
    branch_plus: Branch
    branch_minus: Branch
    problem_plus: PeriodicProblem = field(repr=False, default=None)
    problem_minus: PeriodicProblem = field(repr=False, default=None)
    z_plus: np.ndarray | None = field(repr=False, default=None)
    z_minus: np.ndarray | None = field(repr=False, default=None)
    grow_branch: Branch = field(repr=False, default=None)

    def all_points(self) -> list[BranchPoint]:
        """Points ordered along the curve from the minus end to the plus end."""
        rev = list(reversed(self.branch_minus.points))
        return rev + self.branch_plus.points[1:]

    def curve(self) -> np.ndarray:
        """(gamma, mu) samples along the whole curve."""
        return np.array(
            [(pt.monitors["gamma"], pt.monitors["mu"]) for pt in self.all_points()]
        )


def continue_fixed_period_homoclinic(
    alpha: float,
    beta: float,
    gamma_start: float = -1.0,
    T_fix: float = 170.0,
    n_grow: int = 80,
    n_trace: int = 140,
    degree: int = 4,
    tb_radius: float = 0.04,
    snic_delta: float = 1e-5,
    max_steps: int = 4000,
    grow_controls: StepControls | None = None,
    trace_controls: StepControls | None = None,
) -> HomoclinicTrace:
    """Trace the fixed-T (gamma, mu) curve between the Takens-Bogdanov points.

    Starting from a Hopf point at ``gamma_start``, the orbit is continued in
    mu until T reaches T_fix, then T is frozen, (gamma, mu) are freed and the
    curve is followed both ways.  Each direction stops when it enters the
    ``tb_radius`` neighbourhood of a Takens-Bogdanov point (or on corrector
    failure, with the reason recorded).  Crossings of the saddle-node-locus
    distance through ``snic_delta`` are tagged as events along the way.
    """
    mu_dir = hopf_mu_direction(alpha, beta, gamma_start)
    pgrow, z0 = start_periodic_from_hopf(
        alpha, beta, gamma_start, eps=1e-3, n_intervals=n_grow, degree=degree
    )
    grow_controls = grow_controls or StepControls(h0=0.002, h_max=0.4, max_steps=10**6)
    ev_T = Event("T", T_fix, name=f"T{T_fix:g}")
    grow_branch, pgrow, z_T = continue_with_remesh(
        pgrow, z0, grow_controls, events=(ev_T,), direction={"mu": mu_dir},
        remesh_every=25, max_chunks=600,
    )
    if not grow_branch.termination.startswith("event:"):
        raise RuntimeError(
            f"period growth stopped before T={T_fix}: {grow_branch.termination}"
        )
    z_T = grow_branch.points[-1].z

    def fixed_problem(seed_prob: PeriodicProblem, z):
        pp, z2 = seed_prob.with_mesh(z, n_intervals=n_trace)
        pfix = PeriodicProblem(
            alpha,
            pp.cs.mesh,
            degree,
            free_pars=("mu", "gamma"),
            free_T=False,
            name="fixed-period-homoclinic",
        )
        zfix = pfix.pack(pp.segment(z2), *pp.pvec(z2))
        pfix.set_reference(pp.segment(z2).values)
        attach_mixed_case_monitors(pfix)
        return pfix, zfix

    trace_controls = trace_controls or StepControls(
        h0=0.01, h_max=0.25, max_steps=max_steps, accept_tol=1e-8
    )
    events = (
        Event("dist_tb_plus", tb_radius, name="tb_plus", terminal=True),
        Event("dist_tb_minus", tb_radius, name="tb_minus", terminal=True),
        Event("d_snlocus", snic_delta, name="snic_edge", terminal=False),
    )

    results = {}
    problems = {}
    finals = {}
    for label, gdir in (("plus", +1.0), ("minus", -1.0)):
        pfix, zfix = fixed_problem(pgrow, z_T)
        branch, pend, zend = continue_with_remesh(
            pfix,
            zfix,
            StepControls(**{**trace_controls.__dict__, "max_steps": max_steps}),
            events=events,
            direction={"gamma": gdir},
            remesh_every=20,
            max_chunks=max(4, max_steps // 20 + 2),
        )
        results[label] = branch
        problems[label] = pend
        finals[label] = zend

    return HomoclinicTrace(
        alpha,
        beta,
        T_fix,
        branch_plus=results["plus"],
        branch_minus=results["minus"],
        problem_plus=problems["plus"],
        problem_minus=problems["minus"],
        z_plus=finals["plus"],
        z_minus=finals["minus"],
        grow_branch=grow_branch,
    )


def extract_snic_segment(trace: HomoclinicTrace, delta: float = 1e-5) -> dict | None:
    """SNIC sub-segment of the trace: run of points riding the saddle-node locus.

    Returns the two (gamma, mu) endpoints (from the tagged edge events when
    present, otherwise by interpolating the distance crossing) and the points
    of the run; None when the trace never comes within ``delta`` of the locus.
    """
    pts = trace.all_points()
    d = np.array([pt.monitors["d_snlocus"] for pt in pts])
    inside = d < delta
    if not inside.any():
        return None
    # connected run around the global minimum
    i0 = int(np.argmin(d))
    lo = i0
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = i0
    while hi < len(pts) - 1 and inside[hi + 1]:
        hi += 1

    def crossing(i_in, i_out):
        if i_out < 0 or i_out >= len(pts):
            return pts[i_in].monitors["gamma"], pts[i_in].monitors["mu"]
        p_in, p_out = pts[i_in], pts[i_out]
        if any(t.startswith("event:snic_edge") for t in p_out.tags):
            return p_out.monitors["gamma"], p_out.monitors["mu"]
        if any(t.startswith("event:snic_edge") for t in p_in.tags):
            return p_in.monitors["gamma"], p_in.monitors["mu"]
        w = (delta - d[i_in]) / (d[i_out] - d[i_in])
        g = p_in.monitors["gamma"] + w * (p_out.monitors["gamma"] - p_in.monitors["gamma"])
        m = p_in.monitors["mu"] + w * (p_out.monitors["mu"] - p_in.monitors["mu"])
        return g, m

    left = crossing(lo, lo - 1)
    right = crossing(hi, hi + 1)
    if left[0] > right[0]:
        left, right = right, left
    return {
        "left": left,
        "right": right,
        "indices": (lo, hi),
        "points": pts[lo : hi + 1],
    }

"""Pseudo-arclength continuation with monitors, events and fold tagging.

A :class:`ContinuationProblem` bundles a flat unknown vector cut into named
slots, residual/Jacobian callables over the full vector, a free/frozen mask
at slot granularity and named scalar monitors.  The engine follows the
deficit-one solution curve with a tangent predictor and bordered Newton
corrector; unknowns are nondimensionalized by a running per-slot RMS scale
before entering the arclength norm, so period-like unknowns of order 1e3 and
gap-like unknowns of order 1e-4 coexist in one vector.

Events are (monitor, target) pairs; a sign change of ``monitor - target``
between accepted points is refined by a secant/bisection iteration on the
step fraction, each trial being a full corrector solve, until the monitor
matches the target to ``monitor_tol``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "ContinuationProblem",
    "StepControls",
    "Event",
    "BranchPoint",
    "Branch",
    "continue_branch",
    "newton_extra",
    "equilibrium_branch_problem",
]


class ContinuationProblem:
    """Named-slot unknown vector with residual, Jacobian and monitors."""

    def __init__(
        self,
        name: str,
        slots: list[tuple[str, int]],
        residual,
        jacobian,
        free: tuple[str, ...],
        monitors: dict | None = None,
        on_accept=None,
        fold_watch: tuple[str, ...] = (),
        weight_floors: dict | None = None,
    ):
        self.name = name
        self.slots: dict[str, slice] = {}
        at = 0
        for sname, size in slots:
            self.slots[sname] = slice(at, at + size)
            at += size
        self.n_total = at
        self.residual = residual
        self.jacobian = jacobian
        self.free = tuple(free)
        unknown = set(self.free) - set(self.slots)
        if unknown:
            raise ValueError(f"free set names unknown slots: {sorted(unknown)}")
        self.monitors = dict(monitors or {})
        self.on_accept = on_accept
        self.fold_watch = tuple(fold_watch)
        self.weight_floors = dict(weight_floors or {})

    def get(self, z: np.ndarray, name: str):
        sl = self.slots[name]
        v = z[sl]
        return float(v[0]) if sl.stop - sl.start == 1 else v

    def set(self, z: np.ndarray, name: str, value) -> None:
        z[self.slots[name]] = value

    def free_indices(self) -> np.ndarray:
        return np.concatenate(
            [np.arange(self.slots[n].start, self.slots[n].stop) for n in self.free]
        )

    def counts(self, z: np.ndarray) -> tuple[int, int]:
        """(number of equations, number of free unknowns)."""
        return len(self.residual(z)), len(self.free_indices())

    def eval_monitors(self, z: np.ndarray) -> dict[str, float]:
        return {k: float(f(z)) for k, f in self.monitors.items()}


@dataclass
class StepControls:
    h0: float = 0.01
    h_min: float = 1e-10
    h_max: float = 0.5
    max_steps: int = 1000
    max_newton: int = 8
    accept_tol: float = 1e-8
    monitor_tol: float = 1e-8
    grow: float = 1.3
    shrink: float = 0.5
    slow_iters: int = 5


@dataclass
class Event:
    monitor: str
    value: float
    name: str = ""
    terminal: bool = True

    def __post_init__(self):
        if not self.name:
            self.name = f"{self.monitor}={self.value:g}"


@dataclass
class BranchPoint:
    z: np.ndarray
    monitors: dict[str, float]
    step: float
    newton_iters: int
    tags: tuple[str, ...] = ()


@dataclass
class Branch:
    points: list[BranchPoint]
    termination: str
    problem: ContinuationProblem = field(repr=False, default=None)
    final_tangent: np.ndarray | None = field(repr=False, default=None)

    def monitor_array(self, name: str) -> np.ndarray:
        return np.array([pt.monitors[name] for pt in self.points])

    def slot_array(self, name: str) -> np.ndarray:
        return np.array([self.problem.get(pt.z, name) for pt in self.points])

    def tagged(self, tag: str) -> list[BranchPoint]:
        return [pt for pt in self.points if any(t.startswith(tag) for t in pt.tags)]


class _Weights:
    """Per-slot running RMS scales, floored, frozen during a step."""

    def __init__(self, problem: ContinuationProblem, default_floor: float = 1e-2):
        self.problem = problem
        self.default_floor = default_floor
        self.history: dict[str, deque] = {n: deque(maxlen=8) for n in problem.slots}

    def update(self, z: np.ndarray) -> None:
        for n, sl in self.problem.slots.items():
            v = z[sl]
            self.history[n].append(float(np.sqrt(np.mean(v * v))))

    def vector(self) -> np.ndarray:
        w = np.empty(self.problem.n_total)
        for n, sl in self.problem.slots.items():
            floor = self.problem.weight_floors.get(n, self.default_floor)
            hist = self.history[n]
            scale = float(np.mean(hist)) if hist else 0.0
            w[sl] = max(scale, floor)
        return w


def _solve_bordered(J_free: sp.spmatrix, row: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    A = sp.vstack([J_free, sp.csr_matrix(row[None, :])]).tocsc()
    return splu(A).solve(rhs)


def _tangent(problem, z, free_idx, w_free, prev_free) -> np.ndarray:
    J = problem.jacobian(z).tocsc()[:, free_idx]
    n = len(free_idx)
    row = prev_free / (w_free * w_free)
    rhs = np.zeros(J.shape[0] + 1)
    rhs[-1] = 1.0
    t = _solve_bordered(J, row, rhs)
    t /= np.sqrt(np.sum((t / w_free) ** 2))
    return t


def _corrector(problem, z_start, t_free, sigma_h, free_idx, w_free, controls):
    """Newton solve of [F(z); <t, z - z_pred>_W] = 0 from the predictor."""
    z = z_start.copy()
    z[free_idx] += sigma_h * t_free
    z_pred_free = z[free_idx].copy()
    row = t_free / (w_free * w_free)
    iters = 0
    rnorm = np.inf
    for iters in range(1, controls.max_newton + 1):
        F = problem.residual(z)
        arc = row @ (z[free_idx] - z_pred_free)
        rnorm = max(np.abs(F).max(initial=0.0), abs(arc))
        if rnorm <= 1e-12:
            break
        J = problem.jacobian(z).tocsc()[:, free_idx]
        rhs = np.concatenate([F, [arc]])
        try:
            delta = _solve_bordered(J, row, rhs)
        except RuntimeError:
            return z, iters, False, rnorm
        if not np.all(np.isfinite(delta)):
            return z, iters, False, rnorm
        z[free_idx] -= delta
        if np.sqrt(np.sum((delta / w_free) ** 2)) <= 1e-12:
            F = problem.residual(z)
            arc = row @ (z[free_idx] - z_pred_free)
            rnorm = max(np.abs(F).max(initial=0.0), abs(arc))
            break
    ok = np.isfinite(rnorm) and rnorm <= controls.accept_tol
    return z, iters, ok, rnorm


def newton_extra(problem, z0, extras, max_iter: int = 12, tol: float = 1e-10):
    """Square Newton on the problem residual plus extra scalar equations.

    ``extras`` is a list of ``(res_fun, row_fun)`` pairs; ``row_fun(z)``
    returns the gradient over the full unknown vector.  Used to pin a seed
    point (amplitude conditions and the like) before a branch run starts.
    """
    free_idx = problem.free_indices()
    z = z0.copy()
    for _ in range(max_iter):
        F = problem.residual(z)
        ex = np.array([rf(z) for rf, _ in extras])
        rnorm = max(np.abs(F).max(initial=0.0), np.abs(ex).max(initial=0.0))
        if rnorm <= tol:
            return z, True
        J = problem.jacobian(z).tocsc()[:, free_idx]
        rows = sp.csr_matrix(
            np.array([rowf(z)[free_idx] for _, rowf in extras]).reshape(len(extras), -1)
        )
        A = sp.vstack([J, rows]).tocsc()
        delta = splu(A).solve(np.concatenate([F, ex]))
        if not np.all(np.isfinite(delta)):
            return z, False
        z[free_idx] -= delta
    F = problem.residual(z)
    ex = np.array([rf(z) for rf, _ in extras])
    rnorm = max(np.abs(F).max(initial=0.0), np.abs(ex).max(initial=0.0))
    return z, rnorm <= tol * 100


def _locate_event(
    problem, z_prev, t_free, h, free_idx, w_free, controls, mon, target, g0, g1
):
    lo, glo = 0.0, g0
    hi, ghi = 1.0, g1
    z_best, g_best, s_best = None, np.inf, None
    for _ in range(60):
        if ghi != glo:
            sigma = hi - ghi * (hi - lo) / (ghi - glo)
        else:
            sigma = 0.5 * (lo + hi)
        pad = 1e-3 * (hi - lo)
        if not (lo + pad <= sigma <= hi - pad):
            sigma = 0.5 * (lo + hi)
        z, _, ok, _ = _corrector(problem, z_prev, t_free, sigma * h, free_idx, w_free, controls)
        if not ok:
            # fall back to plain bisection away from the failing proposal
            sigma = 0.5 * (lo + hi)
            z, _, ok, _ = _corrector(
                problem, z_prev, t_free, sigma * h, free_idx, w_free, controls
            )
            if not ok:
                break
        g = mon(z) - target
        if abs(g) < abs(g_best):
            z_best, g_best, s_best = z, abs(g), sigma
        if abs(g) <= controls.monitor_tol:
            return z, sigma
        if np.sign(g) == np.sign(glo):
            lo, glo = sigma, g
        else:
            hi, ghi = sigma, g
        if hi - lo < 1e-13:
            break
    return z_best, s_best


def continue_branch(
    problem: ContinuationProblem,
    z0: np.ndarray,
    controls: StepControls | None = None,
    events: tuple[Event, ...] = (),
    direction: dict[str, float] | None = None,
    initial_tangent: np.ndarray | None = None,
) -> Branch:
    """Follow the deficit-one solution curve from z0.

    ``direction`` orients the first tangent, e.g. ``{"mu": -1}``.  The branch
    stops at a terminal event, on step-size underflow (with the reason in
    ``termination``) or after ``max_steps`` accepted points.
    """
    controls = controls or StepControls()
    free_idx = problem.free_indices()
    z = z0.copy()

    n_eq = len(problem.residual(z))
    deficit = len(free_idx) - n_eq
    assert deficit == 1, (
        f"{problem.name}: dimension deficit is {deficit}, expected 1 "
        f"({len(free_idx)} free unknowns, {n_eq} equations)"
    )

    weights = _Weights(problem)
    weights.update(z)
    w_free = weights.vector()[free_idx]

    # initial correction along the hinted direction, then the first tangent
    if not direction:
        direction = {problem.free[-1]: 1.0}
    prev = np.zeros(len(free_idx))
    for slot, weight in direction.items():
        sl = problem.slots[slot]
        mask = (free_idx >= sl.start) & (free_idx < sl.stop)
        prev[mask] = weight
    nrm = np.linalg.norm(prev)
    if nrm == 0.0:
        raise ValueError("direction hint must have a nonzero component")
    prev /= nrm
    z, iters, ok, rnorm = _corrector(problem, z, prev, 0.0, free_idx, w_free, controls)
    if not ok:
        return Branch([], f"initial point did not converge (|F|={rnorm:.2e})", problem)
    tangent = _tangent(problem, z, free_idx, w_free, prev)
    if tangent @ (prev / w_free**2) < 0:
        tangent = -tangent

    mons = problem.eval_monitors(z)
    points = [BranchPoint(z.copy(), mons, 0.0, iters)]
    if problem.on_accept is not None:
        problem.on_accept(z)
    weights.update(z)

    if initial_tangent is not None:
        tangent = initial_tangent / np.sqrt(np.sum((initial_tangent / w_free) ** 2))

    h = controls.h0
    termination = "max_steps"
    step_count = 0
    while step_count < controls.max_steps:
        w_free = weights.vector()[free_idx]
        z_new, iters, ok, rnorm = _corrector(
            problem, z, tangent, h, free_idx, w_free, controls
        )
        if not ok:
            h *= controls.shrink
            if h < controls.h_min:
                termination = f"step underflow (last |F|={rnorm:.2e})"
                break
            continue

        mons_new = problem.eval_monitors(z_new)
        tags: list[str] = []

        # event handling against the previous accepted point
        stop = False
        hit = []
        for ev in events:
            g0 = mons[ev.monitor] - ev.value
            g1 = mons_new[ev.monitor] - ev.value
            if np.isfinite(g0) and np.isfinite(g1) and np.sign(g0) != np.sign(g1) and g0 != 0.0:
                z_ev, s_ev = _locate_event(
                    problem,
                    z,
                    tangent,
                    h,
                    free_idx,
                    w_free,
                    controls,
                    problem.monitors[ev.monitor],
                    ev.value,
                    g0,
                    g1,
                )
                if z_ev is not None:
                    hit.append((s_ev, ev, z_ev))
        for s_ev, ev, z_ev in sorted(hit, key=lambda t: t[0]):
            pt = BranchPoint(
                z_ev.copy(),
                problem.eval_monitors(z_ev),
                s_ev * h,
                0,
                (f"event:{ev.name}",),
            )
            points.append(pt)
            if ev.terminal:
                termination = f"event:{ev.name}"
                stop = True
                break
        if stop:
            if problem.on_accept is not None:
                problem.on_accept(points[-1].z)
            break

        # fold tagging from tangent sign changes on watched scalar slots
        tangent_new = _tangent(problem, z_new, free_idx, w_free, tangent)
        if tangent_new @ (tangent / w_free**2) < 0:
            tangent_new = -tangent_new
        for slot in problem.fold_watch:
            sl = problem.slots[slot]
            msk = (free_idx >= sl.start) & (free_idx < sl.stop)
            c_old = tangent[msk].sum()
            c_new = tangent_new[msk].sum()
            if c_old * c_new < 0:
                tags.append(f"fold:{slot}")

        z = z_new
        mons = mons_new
        tangent = tangent_new
        points.append(BranchPoint(z.copy(), mons, h, iters, tuple(tags)))
        if problem.on_accept is not None:
            problem.on_accept(z)
        weights.update(z)
        step_count += 1

        if iters <= 3:
            h = min(h * controls.grow, controls.h_max)
        elif iters >= controls.slow_iters:
            h = max(h * 0.7, controls.h_min)
    return Branch(points, termination, problem, tangent)


def equilibrium_branch_problem(
    alpha: float,
    beta: float,
    gamma: float,
    eq0: np.ndarray,
    mu0: float,
    free_param: str = "mu",
) -> tuple[ContinuationProblem, np.ndarray]:
    """One-parameter equilibrium branch f(u, p) = 0 with det J as a monitor."""
    from .collocation import model_field

    field_m = model_field(alpha)
    slots = [("u", 2), ("mu", 1), ("beta", 1), ("gamma", 1)]

    def residual(z):
        fx, fy = field_m.f(z[0], z[1], z[2:5])
        return np.array([fx, fy])

    def jacobian(z):
        fxx, fxy, fyx, fyy = field_m.jac(z[0], z[1], z[2:5])
        J = np.zeros((2, 5))
        J[0, 0], J[0, 1] = fxx, fxy
        J[1, 0], J[1, 1] = fyx, fyy
        for k, (dfx, dfy) in enumerate(field_m.dpar(z[0], z[1], z[2:5])):
            J[0, 2 + k] = dfx
            J[1, 2 + k] = dfy
        return sp.csr_matrix(J)

    def det_j(z):
        fxx, fxy, fyx, fyy = field_m.jac(z[0], z[1], z[2:5])
        return fxx * fyy - fxy * fyx

    problem = ContinuationProblem(
        "equilibrium-branch",
        slots,
        residual,
        jacobian,
        free=("u", free_param),
        monitors={
            "det_j": det_j,
            "trace_j": lambda z: 2.0 * (z[0] + z[1]),
            "mu": lambda z: z[2],
            "gamma": lambda z: z[4],
            "x": lambda z: z[0],
            "y": lambda z: z[1],
        },
        fold_watch=(free_param,),
    )
    z0 = np.array([eq0[0], eq0[1], mu0, beta, gamma])
    return problem, z0

"""Time integration, box-exit detection and escape-time/departure-angle grids.

Integration uses an embedded Dormand-Prince 5(4) pair with PI-free step
control and a cubic-Hermite dense output; the box crossing is located by
bisection on the dense output.  Grid scans run cell-parallel through numba,
each cell writing only its own output slot, so results are independent of
the thread count.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange, set_num_threads, config as _numba_config

from .normal_form import Params, State, lambda_tr0

__all__ = [
    "OffModelExitError",
    "ExitInfo",
    "Trajectory",
    "EscapeGrid",
    "integrate_to_exit",
    "departure_scalar",
    "escape_scan",
    "write_escape_csv",
    "write_escape_metadata",
]

FLAG_NAMES = ("ok", "trapped", "stiff", "off_model_exit")
SIDE_NAMES = ("top", "right", "other")

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_MAX_STEPS = 20_000_000


class OffModelExitError(ValueError):
    """Trajectory left through the bottom or left side of the box."""


@njit(cache=True, inline="always")
def _f(x, y, alpha, beta, c1, c2):
    return x * x + 2.0 * alpha * y - c1, y * y + 2.0 * beta * x - c2


@njit(cache=True, inline="always")
def _hermite(theta, h, x0, y0, x1, y1, f0x, f0y, f1x, f1y):
    t2 = theta * theta
    t3 = t2 * theta
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + theta
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    x = h00 * x0 + h10 * h * f0x + h01 * x1 + h11 * h * f1x
    y = h00 * y0 + h10 * h * f0y + h01 * y1 + h11 * h * f1y
    return x, y


@njit(cache=True)
def _integrate_cell(
    x0,
    y0,
    alpha,
    beta,
    c1,
    c2,
    xmin,
    xmax,
    ymin,
    ymax,
    t_max,
    rtol,
    atol,
    rec_t,
    rec_x,
    rec_y,
    record,
):
    """One trajectory until box exit, t_max, or integration failure.

    Returns (status, t_exit, exit_x, exit_y, side, final_x, final_y, nrec).
    status: 0 exited, 1 trapped, 2 stiff, 3 record buffer exhausted.
    side: 0 top, 1 right, 2 bottom, 3 left, -1 none.
    """
    t = 0.0
    x = x0
    y = y0
    k1x, k1y = _f(x, y, alpha, beta, c1, c2)

    nrec = 0
    if record:
        rec_t[0] = t
        rec_x[0] = x
        rec_y[0] = y
        nrec = 1

    # initial step size from local scales, then a refined Euler probe
    sx = atol + rtol * abs(x)
    sy = atol + rtol * abs(y)
    d0 = math.sqrt(0.5 * ((x / sx) ** 2 + (y / sy) ** 2))
    d1 = math.sqrt(0.5 * ((k1x / sx) ** 2 + (k1y / sy) ** 2))
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    xe = x + h * k1x
    ye = y + h * k1y
    fex, fey = _f(xe, ye, alpha, beta, c1, c2)
    d2 = math.sqrt(0.5 * (((fex - k1x) / sx) ** 2 + ((fey - k1y) / sy) ** 2)) / h
    dm = max(d1, d2)
    if dm > 1e-15:
        h1 = (0.01 / dm) ** 0.2
    else:
        h1 = max(1e-6, h * 1e-3)
    h = min(100.0 * h, h1, t_max)

    rejected = False
    steps = 0
    while t < t_max:
        if h > t_max - t:
            h = t_max - t
        steps += 1
        if steps > _MAX_STEPS:
            return 2, 0.0, 0.0, 0.0, -1, x, y, nrec

        k2x, k2y = _f(x + h * 0.2 * k1x, y + h * 0.2 * k1y, alpha, beta, c1, c2)
        k3x, k3y = _f(
            x + h * (0.075 * k1x + 0.225 * k2x),
            y + h * (0.075 * k1y + 0.225 * k2y),
            alpha,
            beta,
            c1,
            c2,
        )
        k4x, k4y = _f(
            x + h * (44.0 / 45.0 * k1x - 56.0 / 15.0 * k2x + 32.0 / 9.0 * k3x),
            y + h * (44.0 / 45.0 * k1y - 56.0 / 15.0 * k2y + 32.0 / 9.0 * k3y),
            alpha,
            beta,
            c1,
            c2,
        )
        k5x, k5y = _f(
            x
            + h
            * (
                19372.0 / 6561.0 * k1x
                - 25360.0 / 2187.0 * k2x
                + 64448.0 / 6561.0 * k3x
                - 212.0 / 729.0 * k4x
            ),
            y
            + h
            * (
                19372.0 / 6561.0 * k1y
                - 25360.0 / 2187.0 * k2y
                + 64448.0 / 6561.0 * k3y
                - 212.0 / 729.0 * k4y
            ),
            alpha,
            beta,
            c1,
            c2,
        )
        k6x, k6y = _f(
            x
            + h
            * (
                9017.0 / 3168.0 * k1x
                - 355.0 / 33.0 * k2x
                + 46732.0 / 5247.0 * k3x
                + 49.0 / 176.0 * k4x
                - 5103.0 / 18656.0 * k5x
            ),
            y
            + h
            * (
                9017.0 / 3168.0 * k1y
                - 355.0 / 33.0 * k2y
                + 46732.0 / 5247.0 * k3y
                + 49.0 / 176.0 * k4y
                - 5103.0 / 18656.0 * k5y
            ),
            alpha,
            beta,
            c1,
            c2,
        )
        xn = x + h * (
            35.0 / 384.0 * k1x
            + 500.0 / 1113.0 * k3x
            + 125.0 / 192.0 * k4x
            - 2187.0 / 6784.0 * k5x
            + 11.0 / 84.0 * k6x
        )
        yn = y + h * (
            35.0 / 384.0 * k1y
            + 500.0 / 1113.0 * k3y
            + 125.0 / 192.0 * k4y
            - 2187.0 / 6784.0 * k5y
            + 11.0 / 84.0 * k6y
        )
        k7x, k7y = _f(xn, yn, alpha, beta, c1, c2)

        errx = h * (
            71.0 / 57600.0 * k1x
            - 71.0 / 16695.0 * k3x
            + 71.0 / 1920.0 * k4x
            - 17253.0 / 339200.0 * k5x
            + 22.0 / 525.0 * k6x
            - 1.0 / 40.0 * k7x
        )
        erry = h * (
            71.0 / 57600.0 * k1y
            - 71.0 / 16695.0 * k3y
            + 71.0 / 1920.0 * k4y
            - 17253.0 / 339200.0 * k5y
            + 22.0 / 525.0 * k6y
            - 1.0 / 40.0 * k7y
        )
        sx = atol + rtol * max(abs(x), abs(xn))
        sy = atol + rtol * max(abs(y), abs(yn))
        errnorm = math.sqrt(0.5 * ((errx / sx) ** 2 + (erry / sy) ** 2))

        if errnorm <= 1.0:
            outside = xn < xmin or xn > xmax or yn < ymin or yn > ymax
            if outside:
                lo = 0.0
                hi = 1.0
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    xm, ym = _hermite(mid, h, x, y, xn, yn, k1x, k1y, k7x, k7y)
                    if xm < xmin or xm > xmax or ym < ymin or ym > ymax:
                        hi = mid
                    else:
                        lo = mid
                ex, ey = _hermite(hi, h, x, y, xn, yn, k1x, k1y, k7x, k7y)
                t_exit = t + hi * h
                v_top = ey - ymax
                v_right = ex - xmax
                v_bottom = ymin - ey
                v_left = xmin - ex
                side = 0
                best = v_top
                if v_right > best:
                    side = 1
                    best = v_right
                if v_bottom > best:
                    side = 2
                    best = v_bottom
                if v_left > best:
                    side = 3
                if record and nrec < rec_t.shape[0]:
                    rec_t[nrec] = t_exit
                    rec_x[nrec] = ex
                    rec_y[nrec] = ey
                    nrec += 1
                return 0, t_exit, ex, ey, side, ex, ey, nrec
            t += h
            x = xn
            y = yn
            k1x = k7x
            k1y = k7y
            if record:
                if nrec >= rec_t.shape[0]:
                    return 3, 0.0, 0.0, 0.0, -1, x, y, nrec
                rec_t[nrec] = t
                rec_x[nrec] = x
                rec_y[nrec] = y
                nrec += 1
            if errnorm == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = min(_MAX_FACTOR, _SAFETY * errnorm ** -0.2)
            if rejected:
                factor = min(1.0, factor)
            h *= factor
            rejected = False
        else:
            if errnorm != errnorm:  # NaN guard
                h *= _MIN_FACTOR
            else:
                h *= max(_MIN_FACTOR, _SAFETY * errnorm ** -0.2)
            rejected = True
            if h < 1e-14 * max(1.0, t):
                return 2, 0.0, 0.0, 0.0, -1, x, y, nrec
    return 1, 0.0, 0.0, 0.0, -1, x, y, nrec


@njit(cache=True, parallel=True)
def _scan_kernel(
    xs,
    ys,
    alpha,
    beta,
    c1,
    c2,
    xmin,
    xmax,
    ymin,
    ymax,
    t_max,
    rtol,
    atol,
    status,
    t_exit,
    exit_x,
    exit_y,
    side,
    final_x,
    final_y,
):
    n = xs.shape[0]
    dummy = np.empty(1)
    for idx in prange(n):
        st, te, ex, ey, sd, fx, fy, _ = _integrate_cell(
            xs[idx],
            ys[idx],
            alpha,
            beta,
            c1,
            c2,
            xmin,
            xmax,
            ymin,
            ymax,
            t_max,
            rtol,
            atol,
            dummy,
            dummy,
            dummy,
            False,
        )
        status[idx] = st
        t_exit[idx] = te
        exit_x[idx] = ex
        exit_y[idx] = ey
        side[idx] = sd
        final_x[idx] = fx
        final_y[idx] = fy


@dataclass
class ExitInfo:
    """Where and when a trajectory left the box."""

    t: float
    point: State
    side: str  # top | right | other


@dataclass
class Trajectory:
    """Adaptive-step samples of one trajectory, with optional exit data."""

    t: np.ndarray
    xy: np.ndarray
    exit: ExitInfo | None
    flag: str  # ok | trapped | stiff

    @property
    def samples(self) -> list[tuple[float, State]]:
        return [(float(ti), State(float(x), float(y))) for ti, (x, y) in zip(self.t, self.xy)]


def _field_constants(p: Params) -> tuple[float, float]:
    lt = lambda_tr0(p)
    return p.mu + lt + p.gamma, p.mu + lt - p.gamma


def integrate_to_exit(
    s0: State,
    p: Params,
    box: tuple[float, float, float, float],
    t_max: float = 1e4,
    tol: float = 1e-9,
) -> Trajectory:
    """Integrate from s0 until the trajectory leaves the box or t_max passes.

    ``box`` is (x_min, x_max, y_min, y_max) and s0 must lie inside (boundary
    included).  ``tol`` is used as both relative and absolute tolerance.  The
    crossing time is located on the dense output to well below 1e-9.
    """
    xmin, xmax, ymin, ymax = map(float, box)
    if not (xmin <= s0.x <= xmax and ymin <= s0.y <= ymax):
        raise ValueError(f"initial state {s0} is outside the box {box}")
    if t_max <= 0.0:
        raise ValueError("t_max must be positive")
    c1, c2 = _field_constants(p)

    nbuf = 65536
    while True:
        rec_t = np.empty(nbuf)
        rec_x = np.empty(nbuf)
        rec_y = np.empty(nbuf)
        st, te, ex, ey, sd, fx, fy, nrec = _integrate_cell(
            float(s0.x),
            float(s0.y),
            p.alpha,
            p.beta,
            c1,
            c2,
            xmin,
            xmax,
            ymin,
            ymax,
            float(t_max),
            float(tol),
            float(tol),
            rec_t,
            rec_x,
            rec_y,
            True,
        )
        if st != 3:
            break
        nbuf *= 4

    t = rec_t[:nrec].copy()
    xy = np.column_stack([rec_x[:nrec], rec_y[:nrec]])
    if st == 0:
        side = SIDE_NAMES[sd] if sd in (0, 1) else "other"
        return Trajectory(t, xy, ExitInfo(float(te), State(float(ex), float(ey)), side), "ok")
    if st == 1:
        return Trajectory(t, xy, None, "trapped")
    return Trajectory(t, xy, None, "stiff")


def departure_scalar(exit_point: State, box: tuple[float, float, float, float]) -> float:
    """Map an exit point on the top or right side to the scalar 4*psi/pi - 1.

    ``psi`` is the angle at the bottom-left corner between the upward
    vertical and the ray to the exit point, so the top-left corner maps to
    -1, the top-right corner to 0 and the bottom-right corner to +1.
    """
    xmin, xmax, ymin, ymax = map(float, box)
    tol = 1e-6 * max(xmax - xmin, ymax - ymin)
    on_top = abs(exit_point.y - ymax) <= tol
    on_right = abs(exit_point.x - xmax) <= tol
    if not (on_top or on_right):
        raise OffModelExitError(
            f"exit point {exit_point} is not on the top or right side of {box}"
        )
    psi = math.atan2(exit_point.x - xmin, exit_point.y - ymin)
    return 4.0 * psi / math.pi - 1.0


@dataclass
class EscapeGrid:
    """Per-cell escape times and departure scalars on an n x n grid.

    ``departure_angle`` and ``escape_time`` are NaN exactly on cells whose
    flag is not ``ok``.  ``final_states`` holds the state at exit for escaped
    cells and at t_max otherwise; it is a diagnostic, not part of the CSV.
    """

    box: tuple[float, float, float, float]
    n: int
    departure_angle: np.ndarray
    escape_time: np.ndarray
    flags: np.ndarray  # int8 indices into FLAG_NAMES
    final_states: np.ndarray
    params: Params = field(repr=False, default=None)
    t_max: float = 1e4
    tol: float = 1e-9

    def flag_name(self, i: int, j: int) -> str:
        return FLAG_NAMES[self.flags[i, j]]

    @property
    def trapped_mask(self) -> np.ndarray:
        return self.flags == FLAG_NAMES.index("trapped")


def _thread_cap() -> None:
    raw = os.environ.get("HILLTOP_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            return
        if n >= 1:
            set_num_threads(min(n, _numba_config.NUMBA_NUM_THREADS))


def escape_scan(
    p: Params,
    box: tuple[float, float, float, float],
    n: int,
    t_max: float = 1e4,
    tol: float = 1e-9,
) -> EscapeGrid:
    """Run the box-exit integration on an n x n grid of initial conditions.

    Grid points are evenly spaced with the box corners included; index [i, j]
    maps to (x_i, y_j).  Cells are independent, run in parallel (capped by
    HILLTOP_THREADS) and the result is identical to a sequential scan.
    """
    if n < 2:
        raise ValueError("grid resolution n must be at least 2")
    xmin, xmax, ymin, ymax = map(float, box)
    gx = np.linspace(xmin, xmax, n)
    gy = np.linspace(ymin, ymax, n)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    xs = X.ravel()
    ys = Y.ravel()
    c1, c2 = _field_constants(p)

    m = xs.size
    status = np.empty(m, dtype=np.int8)
    t_exit = np.empty(m)
    exit_x = np.empty(m)
    exit_y = np.empty(m)
    side = np.empty(m, dtype=np.int8)
    final_x = np.empty(m)
    final_y = np.empty(m)

    _thread_cap()
    _scan_kernel(
        xs,
        ys,
        p.alpha,
        p.beta,
        c1,
        c2,
        xmin,
        xmax,
        ymin,
        ymax,
        float(t_max),
        float(tol),
        float(tol),
        status,
        t_exit,
        exit_x,
        exit_y,
        side,
        final_x,
        final_y,
    )

    angle = np.full(m, np.nan)
    time = np.full(m, np.nan)
    flags = np.empty(m, dtype=np.int8)
    exited = status == 0
    in_model = exited & ((side == 0) | (side == 1))
    psi = np.arctan2(exit_x[in_model] - xmin, exit_y[in_model] - ymin)
    angle[in_model] = 4.0 * psi / np.pi - 1.0
    time[in_model] = t_exit[in_model]
    flags[in_model] = FLAG_NAMES.index("ok")
    flags[exited & ~in_model] = FLAG_NAMES.index("off_model_exit")
    flags[status == 1] = FLAG_NAMES.index("trapped")
    flags[status == 2] = FLAG_NAMES.index("stiff")

    shape = (n, n)
    return EscapeGrid(
        box=(xmin, xmax, ymin, ymax),
        n=n,
        departure_angle=angle.reshape(shape),
        escape_time=time.reshape(shape),
        flags=flags.reshape(shape),
        final_states=np.stack([final_x, final_y], axis=-1).reshape(n, n, 2),
        params=p,
        t_max=float(t_max),
        tol=float(tol),
    )


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def write_escape_csv(grid: EscapeGrid, path) -> None:
    """Write the grid as CSV rows `i,j,x0,y0,escape_time,departure_scalar,flag`."""
    xmin, xmax, ymin, ymax = grid.box
    gx = np.linspace(xmin, xmax, grid.n)
    gy = np.linspace(ymin, ymax, grid.n)
    lines = ["i,j,x0,y0,escape_time,departure_scalar,flag"]
    for i in range(grid.n):
        for j in range(grid.n):
            lines.append(
                f"{i},{j},{gx[i]!r},{gy[j]!r},"
                f"{_fmt(grid.escape_time[i, j])},{_fmt(grid.departure_angle[i, j])},"
                f"{grid.flag_name(i, j)}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_escape_metadata(grid: EscapeGrid, path) -> None:
    """JSON sidecar recording the scan inputs."""
    p = grid.params
    meta = {
        "alpha": p.alpha,
        "beta": p.beta,
        "gamma": p.gamma,
        "mu": p.mu,
        "box": list(grid.box),
        "n": grid.n,
        "t_max": grid.t_max,
        "tol": grid.tol,
    }
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

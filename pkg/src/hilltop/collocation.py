"""Piecewise-polynomial collocation of planar orbit segments.

Segments u: [0,1] -> R^2 are represented by values at Gauss-Lobatto base
points of each mesh interval (endpoints shared between intervals, so
continuity is built in) and satisfy ``du/dt = T f(u, p)`` at the Gauss
collocation nodes.  Collocation rows are scaled by the interval width, which
keeps residual entries of comparable size across mesh refinements and long
integration periods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg

__all__ = [
    "FieldModel",
    "model_field",
    "rotation_field",
    "Basis",
    "CollocationSystem",
    "OrbitSegment",
    "uniform_mesh",
    "segment_from_function",
    "collocate",
    "phase_condition",
    "remesh_arclength",
    "roll_periodic",
    "extract_arc",
]


@dataclass(frozen=True)
class FieldModel:
    """Planar vector field with analytic derivatives for collocation.

    ``f(x, y, pvec)`` and the entries of its state Jacobian broadcast over
    arrays; ``dpar`` returns the derivative of (fx, fy) with respect to each
    active parameter.
    """

    n_par: int
    f: callable
    jac: callable
    dpar: callable


def model_field(alpha: float) -> FieldModel:
    """The normal-form field with active parameters pvec = (mu, beta, gamma)."""

    def f(x, y, pv):
        mu, beta, gamma = pv
        s = alpha + beta
        lt = gamma * (gamma + alpha * alpha - beta * beta) / (s * s)
        return (
            x * x - mu - lt - gamma + 2.0 * alpha * y,
            y * y - mu - lt + gamma + 2.0 * beta * x,
        )

    def jac(x, y, pv):
        two_x = 2.0 * x
        two_y = 2.0 * y
        shape = np.shape(x)
        return (
            two_x,
            np.broadcast_to(2.0 * alpha, shape),
            np.broadcast_to(2.0 * pv[1], shape),
            two_y,
        )

    def dpar(x, y, pv):
        mu, beta, gamma = pv
        s = alpha + beta
        q = gamma + alpha * alpha - beta * beta
        dlt_dg = (2.0 * gamma + alpha * alpha - beta * beta) / (s * s)
        dlt_db = gamma * (-2.0 * beta * s - 2.0 * q) / (s * s * s)
        one = np.ones(np.shape(x))
        return [
            (-one, -one),
            (-dlt_db * one, 2.0 * x - dlt_db),
            ((-dlt_dg - 1.0) * one, (-dlt_dg + 1.0) * one),
        ]

    return FieldModel(3, f, jac, dpar)


def rotation_field() -> FieldModel:
    """Parameter-free test fixture (dx, dy) = (-y, x)."""

    def f(x, y, pv):
        return -y, x

    def jac(x, y, pv):
        z = np.zeros(np.shape(x))
        return z, z - 1.0, z + 1.0, z

    def dpar(x, y, pv):
        return []

    return FieldModel(0, f, jac, dpar)


def _lagrange_polys(nodes: np.ndarray) -> list[np.ndarray]:
    """Coefficient arrays (np.poly convention) of the Lagrange basis."""
    polys = []
    for k, xk in enumerate(nodes):
        others = np.delete(nodes, k)
        c = np.poly(others)
        polys.append(c / np.prod(xk - others))
    return polys


class Basis:
    """Interpolation/differentiation data for one collocation degree."""

    def __init__(self, m: int):
        if m < 2:
            raise ValueError("collocation degree must be at least 2")
        self.m = m
        # Gauss-Lobatto base points on [0, 1]
        leg = np.zeros(m + 1)
        leg[m] = 1.0
        interior = npleg.legroots(npleg.legder(leg))
        self.xb = np.concatenate([[-1.0], interior, [1.0]]) * 0.5 + 0.5
        # Gauss-Legendre collocation nodes and weights on [0, 1]
        g, w = npleg.leggauss(m)
        self.xg = 0.5 * (g + 1.0)
        self.wg = 0.5 * w
        self._polys = _lagrange_polys(self.xb)
        self._dpolys = [np.polyder(c) for c in self._polys]
        self.P = np.array([[np.polyval(c, xi) for c in self._polys] for xi in self.xg])
        self.D = np.array([[np.polyval(c, xi) for c in self._dpolys] for xi in self.xg])

    def eval_basis(self, xi) -> np.ndarray:
        """Basis values at local coordinates xi; shape (len(xi), m+1)."""
        xi = np.atleast_1d(xi)
        return np.array([[np.polyval(c, v) for c in self._polys] for v in xi])

    def eval_dbasis(self, xi) -> np.ndarray:
        xi = np.atleast_1d(xi)
        return np.array([[np.polyval(c, v) for c in self._dpolys] for v in xi])


_BASIS_CACHE: dict[int, Basis] = {}


def get_basis(m: int) -> Basis:
    if m not in _BASIS_CACHE:
        _BASIS_CACHE[m] = Basis(m)
    return _BASIS_CACHE[m]


def uniform_mesh(n_intervals: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_intervals + 1)


@dataclass
class OrbitSegment:
    """A collocation-discretized trajectory u: [0,1] -> R^2 with period factor T."""

    mesh: np.ndarray
    degree: int
    values: np.ndarray  # (N*m + 1, 2) base-point values, endpoints shared
    T: float

    @property
    def n_intervals(self) -> int:
        return len(self.mesh) - 1

    @property
    def n_base(self) -> int:
        return self.values.shape[0]

    @property
    def u_minus(self) -> np.ndarray:
        return self.values[0]

    @property
    def u_plus(self) -> np.ndarray:
        return self.values[-1]

    def copy(self) -> "OrbitSegment":
        return OrbitSegment(self.mesh.copy(), self.degree, self.values.copy(), self.T)


class CollocationSystem:
    """Residual/Jacobian assembly for one mesh and degree."""

    def __init__(self, mesh: np.ndarray, degree: int = 4):
        mesh = np.asarray(mesh, dtype=float)
        if mesh.ndim != 1 or len(mesh) < 2 or np.any(np.diff(mesh) <= 0):
            raise ValueError("mesh must be strictly increasing")
        if abs(mesh[0]) > 1e-14 or abs(mesh[-1] - 1.0) > 1e-14:
            raise ValueError("mesh must span [0, 1]")
        self.mesh = mesh
        self.m = degree
        self.N = len(mesh) - 1
        self.h = np.diff(mesh)
        self.basis = get_basis(degree)
        self.n_base = self.N * degree + 1
        self.n_colloc = self.N * degree * 2
        # base-point index of point k of interval j
        k = np.arange(degree + 1)
        self.idx = np.arange(self.N)[:, None] * degree + k[None, :]
        # t-coordinates of base points and collocation nodes
        self.base_ts = np.empty(self.n_base)
        self.base_ts[self.idx] = mesh[:-1, None] + self.h[:, None] * self.basis.xb[None, :]
        self.node_ts = mesh[:-1, None] + self.h[:, None] * self.basis.xg[None, :]
        self._pattern_cache: tuple | None = None

    # -- evaluation ---------------------------------------------------------

    def gather(self, values: np.ndarray) -> np.ndarray:
        """Base values per interval, shape (N, m+1, 2)."""
        return values[self.idx]

    def node_values(self, values: np.ndarray) -> np.ndarray:
        """u at the collocation nodes, shape (N, m, 2)."""
        return np.einsum("ik,jkc->jic", self.basis.P, self.gather(values))

    def node_derivatives(self, values: np.ndarray) -> np.ndarray:
        """du/dt at the collocation nodes, shape (N, m, 2)."""
        dv = np.einsum("ik,jkc->jic", self.basis.D, self.gather(values))
        return dv / self.h[:, None, None]

    def interp(self, values: np.ndarray, ts) -> np.ndarray:
        """Evaluate the piecewise polynomial at arbitrary t in [0, 1]."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        j = np.clip(np.searchsorted(self.mesh, ts, side="right") - 1, 0, self.N - 1)
        xi = (ts - self.mesh[j]) / self.h[j]
        out = np.empty((len(ts), 2))
        V = self.gather(values)
        for i, (jj, x) in enumerate(zip(j, xi)):
            B = self.basis.eval_basis([x])[0]
            out[i] = B @ V[jj]
        return out

    def interp_deriv(self, values: np.ndarray, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        j = np.clip(np.searchsorted(self.mesh, ts, side="right") - 1, 0, self.N - 1)
        xi = (ts - self.mesh[j]) / self.h[j]
        out = np.empty((len(ts), 2))
        V = self.gather(values)
        for i, (jj, x) in enumerate(zip(j, xi)):
            B = self.basis.eval_dbasis([x])[0]
            out[i] = B @ V[jj] / self.h[jj]
        return out

    def quad(self, node_samples: np.ndarray) -> float:
        """Integrate per-node samples (N, m) over [0, 1] with the Gauss weights."""
        return float(np.einsum("ji,i,j->", node_samples, self.basis.wg, self.h))

    def quad_inner(self, values_a: np.ndarray, values_b: np.ndarray) -> float:
        """Integral of a . b over [0, 1] using the collocation quadrature."""
        ua = self.node_values(values_a)
        ub = self.node_values(values_b)
        return self.quad(np.einsum("jic,jic->ji", ua, ub))

    def arclength(self, values: np.ndarray, T: float = 1.0) -> float:
        speed = np.linalg.norm(self.node_derivatives(values), axis=-1)
        return self.quad(speed) * 1.0

    # -- residual and Jacobian ---------------------------------------------

    def residual(self, values: np.ndarray, T: float, pvec, field: FieldModel) -> np.ndarray:
        """Collocation residual sum_k D[i,k] u_k - h_j T f(u(node)), flattened."""
        V = self.gather(values)
        du = np.einsum("ik,jkc->jic", self.basis.D, V)
        u = np.einsum("ik,jkc->jic", self.basis.P, V)
        fx, fy = field.f(u[..., 0], u[..., 1], pvec)
        r = du.copy()
        r[..., 0] -= self.h[:, None] * T * fx
        r[..., 1] -= self.h[:, None] * T * fy
        return r.ravel()

    def _pattern(self):
        if self._pattern_cache is None:
            N, m = self.N, self.m
            rows = np.empty((N, m, 2, m + 1, 2), dtype=np.int64)
            cols = np.empty_like(rows)
            r = (np.arange(N)[:, None] * m + np.arange(m)[None, :]) * 2  # (N, m)
            rows[:] = (r[:, :, None] + np.arange(2)[None, None, :])[:, :, :, None, None]
            c = self.idx * 2  # (N, m+1)
            cols[:] = (c[:, None, None, :, None] + np.arange(2)[None, None, None, None, :])
            self._pattern_cache = (rows.ravel(), cols.ravel())
        return self._pattern_cache

    def jacobian_parts(self, values: np.ndarray, T: float, pvec, field: FieldModel):
        """Pieces of the collocation Jacobian.

        Returns ``(rows, cols, data)`` for the derivative with respect to the
        base values, the dense column ``d/dT`` and a (n_colloc, n_par) array
        of parameter columns.
        """
        V = self.gather(values)
        u = np.einsum("ik,jkc->jic", self.basis.P, V)
        x, y = u[..., 0], u[..., 1]
        fxx, fxy, fyx, fyy = field.jac(x, y, pvec)
        hT = self.h[:, None] * T

        N, m = self.N, self.m
        data = np.zeros((N, m, 2, m + 1, 2))
        Dk = self.basis.D[None, :, None, :]  # (1, m, 1, m+1)
        data[:, :, 0, :, 0] = Dk[:, :, 0, :] - (hT * fxx)[:, :, None] * self.basis.P[None]
        data[:, :, 0, :, 1] = -(hT * fxy)[:, :, None] * self.basis.P[None]
        data[:, :, 1, :, 0] = -(hT * fyx)[:, :, None] * self.basis.P[None]
        data[:, :, 1, :, 1] = Dk[:, :, 0, :] - (hT * fyy)[:, :, None] * self.basis.P[None]

        fx, fy = field.f(x, y, pvec)
        dT = np.empty((N, m, 2))
        dT[..., 0] = -self.h[:, None] * fx
        dT[..., 1] = -self.h[:, None] * fy

        dP = np.empty((self.n_colloc, field.n_par))
        for kpar, (dfx, dfy) in enumerate(field.dpar(x, y, pvec)):
            col = np.empty((N, m, 2))
            col[..., 0] = -hT * dfx
            col[..., 1] = -hT * dfy
            dP[:, kpar] = col.ravel()

        rows, cols = self._pattern()
        return (rows, cols, data.ravel()), dT.ravel(), dP


def collocate(
    segment: OrbitSegment,
    pvec,
    field: FieldModel,
    conditions: tuple = (),
):
    """Assemble the collocation residual plus any extra condition rows.

    Each condition is a callable ``cond(segment) -> (value, d_dvalues)`` with
    ``d_dvalues`` of length 2*n_base (or None for residual-only use).  Returns
    ``(residual, jac)`` where ``jac`` is dense of shape
    ``(n_rows, 2*n_base + 1 + n_par)`` with columns ordered values, T, params.
    """
    cs = CollocationSystem(segment.mesh, segment.degree)
    r_c = cs.residual(segment.values, segment.T, pvec, field)
    (rows, cols, data), dT, dP = cs.jacobian_parts(segment.values, segment.T, pvec, field)

    extra_res = []
    extra_rows = []
    for cond in conditions:
        val, drow = cond(segment)
        extra_res.append(np.atleast_1d(val))
        extra_rows.append(drow)

    n_values = 2 * cs.n_base
    n_cols = n_values + 1 + field.n_par
    n_rows = cs.n_colloc + sum(len(v) for v in extra_res)
    jac = np.zeros((n_rows, n_cols))
    jac[rows, cols] += 0.0  # keep shape explicit
    np.add.at(jac, (rows, cols), data)
    jac[: cs.n_colloc, n_values] = dT
    jac[: cs.n_colloc, n_values + 1 :] = dP

    res = np.concatenate([r_c] + extra_res) if extra_res else r_c
    at = cs.n_colloc
    for vals, drow in zip(extra_res, extra_rows):
        if drow is not None:
            jac[at : at + len(vals), : len(drow)] = drow
        at += len(vals)
    return res, jac


def segment_from_function(fun, n_intervals: int, degree: int, T: float) -> OrbitSegment:
    """Sample ``fun(t) -> (x, y)`` at the base points of a uniform mesh."""
    mesh = uniform_mesh(n_intervals)
    cs = CollocationSystem(mesh, degree)
    vals = np.array([fun(t) for t in cs.base_ts], dtype=float)
    return OrbitSegment(mesh, degree, vals, T)


def phase_condition(u: OrbitSegment, u_ref: OrbitSegment) -> float:
    """Translation-fixing functional of a segment against a reference.

    Evaluates ``int u_r . u dt + u_+ . (u_+/2 - u_r_+) - u_- . (u_-/2 - u_r_-)``
    by the collocation quadrature of ``u``'s mesh; the reference is
    re-interpolated when the meshes differ.  Kept in exactly this form; the
    reference is replaced by the previously accepted solution as a
    continuation proceeds.
    """
    cs = CollocationSystem(u.mesh, u.degree)
    if (
        u_ref.degree == u.degree
        and len(u_ref.mesh) == len(u.mesh)
        and np.allclose(u_ref.mesh, u.mesh)
    ):
        ref_vals = u_ref.values
    else:
        ref_vals = CollocationSystem(u_ref.mesh, u_ref.degree).interp(
            u_ref.values, cs.base_ts
        )
    integral = cs.quad_inner(ref_vals, u.values)
    up, um = u.u_plus, u.u_minus
    rp, rm = ref_vals[-1], ref_vals[0]
    return integral + up @ (up / 2.0 - rp) - um @ (um / 2.0 - rm)


def _grade_mesh(h: np.ndarray, ratio: float = 2.0, sweeps: int = 3) -> np.ndarray:
    h = h.copy()
    for _ in range(sweeps):
        for i in range(1, len(h)):
            h[i] = min(h[i], ratio * h[i - 1])
        for i in range(len(h) - 2, -1, -1):
            h[i] = min(h[i], ratio * h[i + 1])
        h /= h.sum()
    return h


def remesh_arclength(
    segment: OrbitSegment,
    n_intervals: int | None = None,
    floor: float = 0.05,
) -> OrbitSegment:
    """Redistribute mesh points to equidistribute arclength plus a floor.

    The measure is ``|du/dt| + floor * total_arc`` so that slow passages near
    equilibria keep a minimum share of intervals; adjacent interval widths
    are graded to at most a factor two.  The solution values are carried over
    by interpolation.
    """
    N_new = n_intervals if n_intervals is not None else segment.n_intervals
    cs = CollocationSystem(segment.mesh, segment.degree)
    # fine sampling of the speed
    n_fine = max(8 * segment.n_intervals, 256)
    ts = np.linspace(0.0, 1.0, n_fine + 1)
    speed = np.linalg.norm(cs.interp_deriv(segment.values, ts), axis=1)
    total_arc = np.trapz(speed, ts)
    measure = speed + max(floor * total_arc, 1e-12)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (measure[1:] + measure[:-1]) * np.diff(ts))])
    targets = np.linspace(0.0, cum[-1], N_new + 1)
    mesh_new = np.interp(targets, cum, ts)
    mesh_new[0], mesh_new[-1] = 0.0, 1.0
    h = _grade_mesh(np.diff(mesh_new))
    mesh_new = np.concatenate([[0.0], np.cumsum(h)])
    mesh_new[-1] = 1.0
    cs_new = CollocationSystem(mesh_new, segment.degree)
    vals_new = cs.interp(segment.values, cs_new.base_ts)
    return OrbitSegment(mesh_new, segment.degree, vals_new, segment.T)


def roll_periodic(segment: OrbitSegment, t0: float) -> OrbitSegment:
    """Shift a periodic segment so that the point at t0 becomes t = 0."""
    cs = CollocationSystem(segment.mesh, segment.degree)
    cs_out = CollocationSystem(uniform_mesh(segment.n_intervals), segment.degree)
    ts = (cs_out.base_ts + t0) % 1.0
    ts[-1] = ts[0]  # closed orbit: keep endpoints identical
    vals = cs.interp(segment.values, ts)
    vals[-1] = vals[0]
    return OrbitSegment(cs_out.mesh.copy(), segment.degree, vals, segment.T)


def extract_arc(segment: OrbitSegment, t_start: float, t_end: float) -> OrbitSegment:
    """Open sub-arc of a periodic segment from t_start forward to t_end.

    The arc runs in the direction of increasing time, wrapping through 1 when
    needed; T is rescaled by the arc fraction so physical time is preserved.
    """
    frac = (t_end - t_start) % 1.0
    if frac == 0.0:
        frac = 1.0
    cs = CollocationSystem(segment.mesh, segment.degree)
    cs_out = CollocationSystem(uniform_mesh(segment.n_intervals), segment.degree)
    ts = (t_start + frac * cs_out.base_ts) % 1.0
    vals = cs.interp(segment.values, ts)
    return OrbitSegment(cs_out.mesh.copy(), segment.degree, vals, segment.T * frac)

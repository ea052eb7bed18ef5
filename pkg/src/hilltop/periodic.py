"""Periodic-orbit continuation: Hopf starts, Floquet multipliers, growth runs.

Periodic orbits are collocation segments with the two endpoint values
identified and an integral phase condition against the previously accepted
solution.  The monodromy matrix is assembled from the collocation
linearization as a product of per-interval endpoint propagators, accumulated
with running rescaling so that strongly expanding orbits stay representable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .analytic_loci import trace_zero_point
from .collocation import (
    CollocationSystem,
    FieldModel,
    OrbitSegment,
    model_field,
    remesh_arclength,
    uniform_mesh,
)
from .continuation import (
    Branch,
    ContinuationProblem,
    Event,
    StepControls,
    continue_branch,
    newton_extra,
)
from .normal_form import Params

__all__ = [
    "NoHopfError",
    "PeriodicProblem",
    "FloquetInfo",
    "start_periodic_from_hopf",
    "floquet_multipliers",
    "liouville_product",
    "hopf_frequency",
    "hopf_mu_direction",
    "continue_with_remesh",
]


class NoHopfError(ValueError):
    """The requested start point is not a Hopf point."""


class PeriodicProblem:
    """Continuation problem for one periodic orbit family.

    Unknown layout: base values U (2*n_base), period factor T, then the
    parameter slots (mu, beta, gamma); which of the parameters are free is
    chosen per run.  Equations: collocation, periodicity u(0) = u(1), and the
    integral phase condition sum of du_ref/dt . u over the quadrature nodes.
    """

    def __init__(
        self,
        alpha: float,
        mesh: np.ndarray,
        degree: int = 4,
        free_pars: tuple[str, ...] = ("mu",),
        free_T: bool = True,
        compute_floquet: bool = False,
        extra_monitors: dict | None = None,
        name: str = "periodic-orbit",
    ):
        self.alpha = alpha
        self.cs = CollocationSystem(mesh, degree)
        self.field = model_field(alpha)
        nb = self.cs.n_base
        self.nb = nb
        self._ref_row = np.zeros(2 * nb)
        # monitor installers re-applied whenever the mesh is rebuilt
        self.attachments: tuple = ()

        slots = [("U", 2 * nb), ("T", 1), ("mu", 1), ("beta", 1), ("gamma", 1)]
        free = ("U",) + (("T",) if free_T else ()) + tuple(free_pars)

        monitors = {
            "T": lambda z: z[2 * nb],
            "mu": lambda z: z[2 * nb + 1],
            "beta": lambda z: z[2 * nb + 2],
            "gamma": lambda z: z[2 * nb + 3],
            "amplitude": self._amplitude,
        }
        if compute_floquet:
            monitors["nontrivial_mult"] = self._nontrivial_mult
        monitors.update(extra_monitors or {})

        self.problem = ContinuationProblem(
            name,
            slots,
            self._residual,
            self._jacobian,
            free=free,
            monitors=monitors,
            on_accept=self._on_accept,
            fold_watch=("mu",) if "mu" in free_pars else (),
        )

    # -- packing ------------------------------------------------------------

    def pack(self, segment: OrbitSegment, mu: float, beta: float, gamma: float) -> np.ndarray:
        z = np.empty(2 * self.nb + 4)
        z[: 2 * self.nb] = segment.values.ravel()
        z[2 * self.nb] = segment.T
        z[2 * self.nb + 1 :] = (mu, beta, gamma)
        return z

    def segment(self, z: np.ndarray) -> OrbitSegment:
        vals = z[: 2 * self.nb].reshape(self.nb, 2).copy()
        return OrbitSegment(self.cs.mesh.copy(), self.cs.m, vals, float(z[2 * self.nb]))

    def params(self, z: np.ndarray) -> Params:
        return Params(self.alpha, float(z[2 * self.nb + 2]), float(z[2 * self.nb + 3]),
                      float(z[2 * self.nb + 1]))

    def pvec(self, z: np.ndarray) -> np.ndarray:
        return z[2 * self.nb + 1 : 2 * self.nb + 4]

    # -- reference / phase row ----------------------------------------------

    def set_reference(self, values: np.ndarray) -> None:
        cs = self.cs
        V = cs.gather(values)
        dV = np.einsum("ik,jkc->jic", cs.basis.D, V)  # du/dxi at nodes
        contrib = np.einsum("i,jic,ik->jkc", cs.basis.wg, dV, cs.basis.P)
        row = np.zeros((self.nb, 2))
        np.add.at(row, cs.idx.ravel(), contrib.reshape(-1, 2))
        self._ref_row = row.ravel()

    def _on_accept(self, z: np.ndarray) -> None:
        self.set_reference(z[: 2 * self.nb].reshape(self.nb, 2))

    # -- residual / jacobian --------------------------------------------------

    def _residual(self, z: np.ndarray) -> np.ndarray:
        nb = self.nb
        vals = z[: 2 * nb].reshape(nb, 2)
        T = z[2 * nb]
        pv = self.pvec(z)
        r_c = self.cs.residual(vals, T, pv, self.field)
        r_per = vals[0] - vals[-1]
        r_phase = self._ref_row @ z[: 2 * nb]
        return np.concatenate([r_c, r_per, [r_phase]])

    def _jacobian(self, z: np.ndarray) -> sp.csr_matrix:
        nb = self.nb
        vals = z[: 2 * nb].reshape(nb, 2)
        T = z[2 * nb]
        pv = self.pvec(z)
        (rows, cols, data), dT, dP = self.cs.jacobian_parts(vals, T, pv, self.field)
        nc = self.cs.n_colloc
        n_total = 2 * nb + 4

        r_list = [rows]
        c_list = [cols]
        d_list = [data]
        # dT and parameter columns of the collocation block
        rr = np.arange(nc)
        r_list.append(rr)
        c_list.append(np.full(nc, 2 * nb))
        d_list.append(dT)
        for k in range(3):
            r_list.append(rr)
            c_list.append(np.full(nc, 2 * nb + 1 + k))
            d_list.append(dP[:, k])
        # periodicity rows
        pr = np.array([nc, nc, nc + 1, nc + 1])
        pc = np.array([0, 2 * (nb - 1), 1, 2 * nb - 1])
        pd = np.array([1.0, -1.0, 1.0, -1.0])
        r_list.append(pr)
        c_list.append(pc)
        d_list.append(pd)
        # phase row
        nz = np.nonzero(self._ref_row)[0]
        r_list.append(np.full(len(nz), nc + 2))
        c_list.append(nz)
        d_list.append(self._ref_row[nz])

        return sp.coo_matrix(
            (np.concatenate(d_list), (np.concatenate(r_list), np.concatenate(c_list))),
            shape=(nc + 3, n_total),
        ).tocsr()

    # -- monitors -------------------------------------------------------------

    def _amplitude(self, z: np.ndarray) -> float:
        vals = z[: 2 * self.nb].reshape(self.nb, 2)
        centered = vals - vals.mean(axis=0)
        return float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))

    def _nontrivial_mult(self, z: np.ndarray) -> float:
        info = floquet_multipliers(self.segment(z), self.pvec(z), self.field)
        m = info.multipliers[1]
        return float(m.real) if abs(m.imag) < 1e-6 * abs(m) else float(abs(m))

    # -- remeshing -------------------------------------------------------------

    def with_mesh(self, z: np.ndarray, mesh: np.ndarray | None = None,
                  n_intervals: int | None = None) -> tuple["PeriodicProblem", np.ndarray]:
        """Rebuild on an arclength-equidistributed (or given) mesh."""
        seg = self.segment(z)
        if mesh is None:
            seg_new = remesh_arclength(seg, n_intervals or seg.n_intervals)
        else:
            cs_new = CollocationSystem(mesh, seg.degree)
            vals = self.cs.interp(seg.values, cs_new.base_ts)
            seg_new = OrbitSegment(mesh, seg.degree, vals, seg.T)
        # closed orbit: keep the endpoint identification exact
        seg_new.values[-1] = seg_new.values[0]
        other = PeriodicProblem(
            self.alpha,
            seg_new.mesh,
            seg.degree,
            free_pars=tuple(n for n in self.problem.free if n in ("mu", "beta", "gamma")),
            free_T="T" in self.problem.free,
            compute_floquet="nontrivial_mult" in self.problem.monitors,
            name=self.problem.name,
        )
        for attach in self.attachments:
            attach(other)
        other.attachments = self.attachments
        z_new = other.pack(seg_new, *self.pvec(z))
        other.set_reference(seg_new.values)
        return other, z_new


def hopf_frequency(alpha: float, beta: float, gamma: float) -> float:
    """Imaginary part of the critical eigenvalues at the mu = 0 Hopf point."""
    s = alpha + beta
    x = -gamma / s
    det = -4.0 * (x * x + alpha * beta)
    if det <= 0.0:
        raise NoHopfError(f"no Hopf point at gamma={gamma} (det J = {det} <= 0)")
    return math.sqrt(det)


def hopf_mu_direction(alpha: float, beta: float, gamma: float) -> float:
    """Sign of mu on which the periodic orbit branch from the Hopf point lives.

    Supercritical orbits live where the focus is unstable, subcritical ones
    where it is stable; the focus trace changes like -4*(alpha+beta)/det * mu.
    """
    info = trace_zero_point(Params(alpha, beta, gamma, 0.0))
    if info.kind != "hopf":
        raise NoHopfError(f"gamma={gamma} is not in the Hopf range")
    unstable_side = -math.copysign(1.0, alpha + beta)
    return unstable_side if info.ell1 < 0.0 else -unstable_side


def start_periodic_from_hopf(
    alpha: float,
    beta: float,
    gamma: float,
    eps: float = 1e-3,
    n_intervals: int = 50,
    degree: int = 4,
    free_pars: tuple[str, ...] = ("mu",),
    compute_floquet: bool = False,
) -> tuple[PeriodicProblem, np.ndarray]:
    """Converged small-amplitude orbit near the mu = 0 Hopf point.

    The initial guess rotates around the equilibrium in the plane of the
    critical eigenvector; a Newton solve with the amplitude pinned at the
    guess value locates the genuine branch point (with mu released, since the
    small orbit lives at mu of order eps squared).
    """
    info = trace_zero_point(Params(alpha, beta, gamma, 0.0))
    if info.kind != "hopf":
        raise NoHopfError(f"kind={info.kind} at gamma={gamma}; a Hopf point is required")
    x_eq = info.x_eq
    eq = np.array([x_eq, -x_eq])
    om0 = hopf_frequency(alpha, beta, gamma)
    v = np.array([2.0 * alpha, -2.0 * x_eq + 1j * om0])
    v /= np.linalg.norm(v)
    v_re, v_im = v.real, v.imag

    prob = PeriodicProblem(
        alpha,
        uniform_mesh(n_intervals),
        degree,
        free_pars=free_pars,
        compute_floquet=compute_floquet,
    )
    ts = prob.cs.base_ts
    vals = eq[None, :] + eps * (
        np.cos(2 * np.pi * ts)[:, None] * v_re[None, :]
        - np.sin(2 * np.pi * ts)[:, None] * v_im[None, :]
    )
    vals[-1] = vals[0]
    seg = OrbitSegment(prob.cs.mesh.copy(), degree, vals, 2.0 * math.pi / om0)
    z0 = prob.pack(seg, 0.0, beta, gamma)
    prob.set_reference(vals)

    nb = prob.nb
    amp2 = float(np.mean(np.sum((vals - eq[None, :]) ** 2, axis=1)))

    def amp_res(z):
        u = z[: 2 * nb].reshape(nb, 2)
        return float(np.mean(np.sum((u - eq[None, :]) ** 2, axis=1))) - amp2

    def amp_row(z):
        row = np.zeros_like(z)
        u = z[: 2 * nb].reshape(nb, 2)
        row[: 2 * nb] = (2.0 * (u - eq[None, :]) / nb).ravel()
        return row

    z_seed, ok = newton_extra(prob.problem, z0, [(amp_res, amp_row)])
    if not ok:
        raise RuntimeError("Hopf seed Newton did not converge")
    prob.set_reference(z_seed[: 2 * nb].reshape(nb, 2))
    return prob, z_seed


@dataclass
class FloquetInfo:
    """Floquet multipliers ordered (trivial-like, nontrivial)."""

    multipliers: tuple[complex, complex]
    log_magnitudes: tuple[float, float]

    @property
    def trivial_defect(self) -> float:
        return abs(self.multipliers[0] - 1.0)


def _interval_propagators(segment: OrbitSegment, pvec, field: FieldModel):
    cs = CollocationSystem(segment.mesh, segment.degree)
    m = segment.degree
    V = cs.gather(segment.values)
    u = np.einsum("ik,jkc->jic", cs.basis.P, V)
    fxx, fxy, fyx, fyy = field.jac(u[..., 0], u[..., 1], pvec)
    D, P = cs.basis.D, cs.basis.P
    out = []
    for j in range(cs.N):
        hT = cs.h[j] * segment.T
        A = np.zeros((2 * m, 2 * m))
        B = np.zeros((2 * m, 2))
        for i in range(m):
            Jf = np.array([[fxx[j, i], fxy[j, i]], [fyx[j, i], fyy[j, i]]])
            for k in range(m + 1):
                blk = D[i, k] * np.eye(2) - hT * Jf * P[i, k]
                if k == 0:
                    B[2 * i : 2 * i + 2, :] += blk
                else:
                    A[2 * i : 2 * i + 2, 2 * (k - 1) : 2 * k] += blk
        S = np.linalg.solve(A, -B)
        out.append(S[-2:, :])
    return out


def floquet_multipliers(
    segment: OrbitSegment, pvec, field: FieldModel | None = None, alpha: float | None = None
) -> FloquetInfo:
    """Multipliers of a converged periodic orbit from the collocation linearization.

    The per-interval propagators are multiplied with running normalization
    (log factors accumulated separately), so strongly expanding orbits report
    finite log-magnitudes even when the multiplier itself overflows; a
    conditioning warning is emitted in that case.
    """
    if field is None:
        if alpha is None:
            raise ValueError("either field or alpha must be given")
        field = model_field(alpha)
    props = _interval_propagators(segment, pvec, field)
    M = np.eye(2)
    log_scale = 0.0
    for Pj in props:
        M = Pj @ M
        nrm = np.abs(M).max()
        if nrm > 1e12 or (0.0 < nrm < 1e-12):
            M /= nrm
            log_scale += math.log(nrm)

    eigs = np.linalg.eigvals(M)
    logs = []
    mults = []
    for e in eigs:
        mag = abs(e)
        lm = (math.log(mag) if mag > 0 else -math.inf) + log_scale
        logs.append(lm)
        if lm > 700.0:
            warnings.warn(
                "Floquet multiplier magnitude exceeds representable range", stacklevel=2
            )
            mults.append(complex(math.inf if e.real >= 0 else -math.inf, 0.0))
        else:
            mults.append(complex(e) * math.exp(log_scale))
    order = np.argsort([abs(mm - 1.0) if np.isfinite(mm.real) else np.inf for mm in mults])
    mults = [mults[i] for i in order]
    logs = [logs[i] for i in order]
    return FloquetInfo((mults[0], mults[1]), (logs[0], logs[1]))


def liouville_product(segment: OrbitSegment, pvec, field: FieldModel) -> float:
    """exp(T * integral of trace J along the orbit); equals the multiplier product."""
    cs = CollocationSystem(segment.mesh, segment.degree)
    u = cs.node_values(segment.values)
    fxx, _, _, fyy = field.jac(u[..., 0], u[..., 1], pvec)
    integral = cs.quad(fxx + fyy)
    return math.exp(segment.T * integral)


def continue_with_remesh(
    prob: PeriodicProblem,
    z0: np.ndarray,
    controls: StepControls,
    events: tuple[Event, ...] = (),
    direction: dict[str, float] | None = None,
    remesh_every: int = 25,
    max_chunks: int = 100,
) -> tuple[Branch, PeriodicProblem, np.ndarray]:
    """Run a branch in chunks, remeshing by arclength between chunks.

    Returns the stitched branch, the problem instance of the final chunk and
    the final unknown vector.  Event bookkeeping spans the chunk boundaries
    because each chunk restarts exactly at the previous solution.
    """
    all_points = []
    termination = "max_chunks"
    cur_dir = direction
    z = z0
    for _ in range(max_chunks):
        chunk_controls = StepControls(**{**controls.__dict__, "max_steps": remesh_every})
        br = continue_branch(prob.problem, z, chunk_controls, events=events, direction=cur_dir)
        pts = br.points if not all_points else br.points[1:]
        all_points.extend(pts)
        termination = br.termination
        if not br.points:
            break
        z = br.points[-1].z
        if br.termination != "max_steps":
            break
        # orient the next chunk by the scalar components of the last tangent
        tan = br.final_tangent
        free_idx = prob.problem.free_indices()
        cur_dir = {}
        for nm in ("T", "mu", "gamma", "beta"):
            if nm not in prob.problem.free:
                continue
            sl = prob.problem.slots[nm]
            msk = (free_idx >= sl.start) & (free_idx < sl.stop)
            c = tan[msk].sum()
            if c != 0.0:
                cur_dir[nm] = c
        prob, z = prob.with_mesh(z)
        if not cur_dir:
            cur_dir = None
    stitched = Branch(all_points, termination, prob.problem)
    return stitched, prob, z

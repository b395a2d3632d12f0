"""Quasi-static equilibrium of the net cage in current and waves.

The net is an elastic edge network loaded by screen-type quadratic drag on
its panels. Every edge carries a prestress at rest, and constant nodal dead
loads cancel the rest-state internal forces exactly, so the undisturbed cage
is in equilibrium and responds to drag through elastic and geometric
stiffness. The floating collar (layer 1) translates rigidly in the
horizontal plane, restrained by twelve linear mooring lines; its vertical
position is fixed.

Units are kN, m, s and t/m^3; z points up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .. import backend
from ..errors import InvalidParams, NoConvergence
from .params import default_params, validate_params
from .seastate import SeaState
from .topology import CageTopology, cage


@dataclass(frozen=True, eq=False)
class CageDeformation:
    displacements: np.ndarray  # (N, 3) metres from rest
    sea_state: SeaState | None = None


@dataclass(frozen=True, eq=False)
class MooringLoads:
    tensions: np.ndarray  # (n_lines,) kN, line i at azimuth first + i * 360 / n_lines

    def horizontal_load(self, azimuths):
        """Magnitude of the resultant horizontal force of the lines on the collar."""
        e = np.column_stack([np.cos(azimuths), np.sin(azimuths)])
        return float(np.linalg.norm(self.tensions @ e))


@dataclass(frozen=True)
class SolveInfo:
    converged: bool
    residual: float  # relative to the applied load
    iterations: int
    substeps: int
    elastic_energy: float = 0.0
    min_edge_tension: float = 0.0


def orbital_amplitude(depth, hs, tp, steepness_limit, gravity=9.81):
    """Deep-water horizontal orbital velocity amplitude (m/s) at ``depth``.

    The wave height is capped at the breaking steepness ``H / L``.
    """
    depth = np.asarray(depth, dtype=float)
    if tp <= 1e-9 or hs <= 0:
        return np.zeros_like(depth)
    hs_eff = min(hs, steepness_limit * gravity * tp * tp / (2 * math.pi))
    k = 4 * math.pi ** 2 / (gravity * tp * tp)
    return math.pi * hs_eff / tp * np.exp(-k * np.abs(depth))


def mean_drag_speed(current, amplitude):
    """Steady speed with the same mean quadratic drag as ``U + a cos(phi)``.

    Averages ``v |v|`` over a wave cycle: ``U^2 + a^2 / 2`` while the flow
    never reverses (``U >= a``), and the signed integral over the two
    flow directions otherwise. Zero current gives zero mean drag.
    """
    shape = np.broadcast_shapes(np.shape(current), np.shape(amplitude))
    U = np.broadcast_to(np.asarray(current, dtype=float), shape).ravel()
    a = np.abs(np.broadcast_to(np.asarray(amplitude, dtype=float), shape)).ravel()
    out = U * U + 0.5 * a * a
    rev = a > U
    if np.any(rev):
        Ur, ar = U[rev], a[rev]
        phi0 = np.arccos(-Ur / ar)
        F0 = Ur * Ur * phi0 + 2 * Ur * ar * np.sin(phi0) + ar * ar * (0.5 * phi0 + 0.25 * np.sin(2 * phi0))
        Fpi = math.pi * (Ur * Ur + 0.5 * ar * ar)
        out[rev] = (2 * F0 - Fpi) / math.pi
    return np.sqrt(np.maximum(out, 0.0)).reshape(shape)


class CageModel:
    """Precomputed structure for repeated equilibrium solves."""

    def __init__(self, topo: CageTopology | None = None, params=None):
        params = validate_params(params if params is not None else default_params())
        topo = topo if topo is not None else cage(params["geometry"])
        if topo.rest_positions is None:
            raise InvalidParams("topology has no rest positions")
        self.topo = topo
        self.params = params
        self.rest = np.asarray(topo.rest_positions, dtype=float)
        n = topo.node_count
        ring = topo.ring_nodes

        ed = params["edges"]
        kind = topo.edge_kind
        axial = np.choose(kind, [ed["ring_axial"], ed["vertical_axial"], ed["apex_axial"]]).astype(float)
        prestress = np.choose(kind, [ed["ring_prestress"], ed["vertical_prestress"], ed["apex_prestress"]])
        if np.any(prestress < 0):
            raise InvalidParams("edge prestress must be nonnegative")
        vec = self.rest[topo.edges[:, 1]] - self.rest[topo.edges[:, 0]]
        length = np.linalg.norm(vec, axis=1)
        self.axial = axial
        self.rest_len = length / (1.0 + prestress / axial)
        self.edges = np.ascontiguousarray(topo.edges)

        f_rest, _, _ = backend.edge_forces(self.rest, self.edges, self.rest_len, self.axial)
        self.dead = -f_rest

        net = params["net"]
        rho = params["water_density"]
        cn = 0.5 * rho * net["drag_coefficient"] * net["solidity"]
        self.c_normal = cn
        self.c_tangent = cn * net["tangential_ratio"]
        self.panels = np.ascontiguousarray(topo.panels)
        self.panel_weights = np.ascontiguousarray(topo.panel_weights)
        w = self.panel_weights
        centroid = np.einsum("pk,pkc->pc", w, self.rest[self.panels]) / w.sum(axis=1)[:, None]
        self.panel_depth = -centroid[:, 2]

        moor = params["mooring"]
        n_lines = int(moor["n_lines"])
        self.line_azimuth = np.deg2rad(moor["first_azimuth"] + np.arange(n_lines) * 360.0 / n_lines)
        self.line_dir = np.column_stack([np.cos(self.line_azimuth), np.sin(self.line_azimuth)])
        self.k_moor = float(moor["stiffness"])
        self.pretension = float(moor["pretension"])
        self.moor_matrix = self.k_moor * self.line_dir.T @ self.line_dir

        # reduced unknowns: collar translation (2) then free nodes below the collar
        dof = -np.ones(3 * n, dtype=np.int64)
        collar = np.arange(ring)
        dof[3 * collar] = 0
        dof[3 * collar + 1] = 1
        free = np.arange(ring, n)
        for c in range(3):
            dof[3 * free + c] = 2 + 3 * (free - ring) + c
        self.dof = dof
        self.n_dof = 2 + 3 * (n - ring)
        self._prepare_pattern()
        self.solver = params["solver"]

    # -- assembly ---------------------------------------------------------

    def _block_index(self, row_nodes, col_nodes):
        """Full-DOF row/col indices of (B, 3, 3) blocks at node pairs."""
        c = np.arange(3)
        rows = 3 * row_nodes[:, None, None] + c[None, :, None]
        cols = 3 * col_nodes[:, None, None] + c[None, None, :]
        return np.broadcast_to(rows, rows.shape[:1] + (3, 3)), np.broadcast_to(cols, cols.shape[:1] + (3, 3))

    def _prepare_pattern(self):
        a, b = self.edges[:, 0], self.edges[:, 1]
        pairs = [(a, a), (a, b), (b, a), (b, b)]
        er, ec = zip(*(self._block_index(r, c) for r, c in pairs))
        P = self.panels
        pr, pc = self._block_index(np.repeat(P, 4, axis=1).ravel(), np.tile(P, (1, 4)).ravel())
        rows = np.concatenate([np.concatenate([r.ravel() for r in er]), pr.ravel()])
        cols = np.concatenate([np.concatenate([c.ravel() for c in ec]), pc.ravel()])
        rr = self.dof[rows]
        cc = self.dof[cols]
        self._keep = (rr >= 0) & (cc >= 0)
        self._rows = rr[self._keep]
        self._cols = cc[self._keep]

    def panel_velocity(self, sea: SeaState, scale=1.0):
        """Per-panel steady flow: the current, amplified by wave-induced drag.

        The wave orbital velocity is projected on the current axis and its
        cycle-averaged quadratic drag folded into an equivalent current
        speed; waves alone do not move the cage.
        """
        th = math.radians(sea.current_dir)
        speed = np.full(self.panels.shape[0], sea.current_speed)
        wv = self.params["waves"]
        amp = orbital_amplitude(self.panel_depth, sea.sig_wave_height, sea.peak_period,
                                wv["steepness_limit"], self.params.get("gravity", 9.81))
        if np.any(amp) and sea.current_speed > 0:
            along = abs(math.cos(math.radians(sea.wave_dir - sea.current_dir)))
            speed = mean_drag_speed(speed, wv["drag_factor"] * along * amp)
        u = np.zeros((self.panels.shape[0], 3))
        u[:, 0] = speed * math.cos(th)
        u[:, 1] = speed * math.sin(th)
        return scale * u

    def expand(self, q):
        """Full (N, 3) displacement field from reduced unknowns."""
        full = np.zeros(3 * self.topo.node_count)
        live = self.dof >= 0
        full[live] = q[self.dof[live]]
        return full.reshape(-1, 3)

    def reduce(self, full_force):
        """Generalized forces conjugate to the reduced unknowns."""
        f = full_force.ravel()
        live = self.dof >= 0
        return np.bincount(self.dof[live], weights=f[live], minlength=self.n_dof)

    def residual(self, q, velocity, jacobian=True):
        x = self.rest + self.expand(q)
        f_int, tension, kblk = backend.edge_forces(x, self.edges, self.rest_len, self.axial)
        f_drag, dblk = backend.panel_drag(x, self.panels, self.panel_weights, velocity,
                                          self.c_normal, self.c_tangent)
        R = self.reduce(f_int + self.dead + f_drag)
        R[:2] -= self.moor_matrix @ q[:2]
        if not jacobian:
            return R, None, tension
        edge_data = np.concatenate([(-kblk).ravel(), kblk.ravel(), kblk.ravel(), (-kblk).ravel()])
        data = np.concatenate([edge_data, dblk.ravel()])[self._keep]
        J = sparse.csc_matrix((data, (self._rows, self._cols)), shape=(self.n_dof, self.n_dof))
        J = J - sparse.csc_matrix((self.moor_matrix.ravel(), ([0, 0, 1, 1], [0, 1, 0, 1])),
                                  shape=(self.n_dof, self.n_dof))
        return R, J, tension

    # -- solve ------------------------------------------------------------

    def _newton(self, q, velocity, ref, tol, max_iter):
        """Damped Newton with the natural monotonicity test.

        A trial step is accepted when the simplified correction
        ``J(q)^-1 R(q + a dq)`` shrinks relative to ``dq``. The test is
        invariant to the scaling of the equations, which matters here
        because stiff axial terms dominate the plain residual norm.
        """
        R, J, _ = self.residual(q, velocity)
        norm = np.linalg.norm(R)
        it = 0
        while norm > tol * ref:
            if it >= max_iter:
                return q, norm, it, False
            it += 1
            try:
                lu = splu(J)
            except RuntimeError:
                return q, norm, it, False
            step = lu.solve(-R)
            step_norm = np.linalg.norm(step)
            alpha = 1.0
            while True:
                trial = q + alpha * step
                R_t, J_t, _ = self.residual(trial, velocity)
                simplified = np.linalg.norm(lu.solve(-R_t))
                if np.isfinite(simplified) and simplified <= (1 - 0.25 * alpha) * step_norm:
                    break
                alpha *= 0.5
                if alpha < 1e-3:
                    return q, norm, it, False
            q, R, J, norm = trial, R_t, J_t, np.linalg.norm(R_t)
        return q, norm, it, True

    def load_reference(self, velocity):
        f_drag, _ = backend.panel_drag(self.rest, self.panels, self.panel_weights, velocity,
                                       self.c_normal, self.c_tangent)
        return np.linalg.norm(self.reduce(f_drag)) + np.linalg.norm(self.reduce(self.dead))

    def solve(self, sea: SeaState, q0=None):
        tol = float(self.solver["tol"])
        max_iter = int(self.solver["max_iter"])
        max_sub = int(self.solver.get("max_substeps", 16))
        velocity = self.panel_velocity(sea)
        ref = self.load_reference(velocity)
        substeps = 1
        while True:
            q = np.zeros(self.n_dof) if q0 is None else np.array(q0, dtype=float)
            ok = True
            total_it = 0
            for s in range(1, substeps + 1):
                q, norm, it, ok = self._newton(q, velocity * np.sqrt(s / substeps), ref, tol, max_iter)
                total_it += it
                if not ok:
                    break
            if ok:
                break
            if substeps >= max_sub:
                raise NoConvergence(
                    f"equilibrium not reached for {sea} (relative residual {norm / ref:.3e})",
                    residual=norm / ref, iterations=total_it,
                )
            substeps *= 2
        R, _, tension = self.residual(q, velocity, jacobian=False)
        disp = self.expand(q)
        tensions = self.line_tensions(q[:2])
        energy = self.elastic_energy(q, tension)
        residual = float(np.linalg.norm(R) / ref) if ref > 0 else 0.0
        info = SolveInfo(True, residual, total_it, substeps, energy, float(tension.min()))
        return CageDeformation(disp, sea), MooringLoads(tensions), info

    def line_tensions(self, collar_offset):
        """Line tensions for a collar offset; slack lines read zero."""
        t = self.pretension - self.k_moor * (self.line_dir @ np.asarray(collar_offset))
        return np.maximum(t, 0.0)

    def elastic_energy(self, q, tension):
        stiff = self.axial / self.rest_len
        edge = 0.5 * np.sum(tension * tension / stiff)
        d = q[:2]
        return float(edge + 0.5 * d @ self.moor_matrix @ d)


def solve_equilibrium(topo: CageTopology | None, sea: SeaState, params=None):
    """Solve one sea state; returns ``(CageDeformation, MooringLoads)``."""
    deformation, loads, _ = CageModel(topo, params).solve(sea)
    return deformation, loads

"""Reference solver for the solute transport equation

    dc/dt = div(D grad c) - div(v c) + beta2 f,   n . grad c = 0,  c(0) = 0,

with backward Euler in time, P1 elements in space and streamline
(SUPG) stabilisation.  Integrating the diffusion and advection terms by
parts with v . n = 0 and n . grad c = 0 gives, for every test function phi,

    ((c+ - c-)/dt, phi) + (D grad c+, grad phi) - (v c+, grad phi)
        + sum_e tau_e (v_e . grad phi, R(c+))_e = (beta2 f, phi),

    R(c+) = (c+ - c-)/dt + v_e . grad c+ + (div v)_e c+ - beta2 f,

where v_e is the element-mean velocity, tau_e = h_e / (2 |v_e|) and the
diffusion part of R vanishes for P1.  Because the SUPG weights sum to
zero over each element, total mass is conserved exactly by the scheme.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem_darcy import NodalField, _scatter, load_vector, mass_matrix, stiffness_matrix
from .linalg import bicgstab
from .mesh import TriMesh
from .physics import PhysParams

SPEED_FLOOR = 1e-14


def default_dt(T: float) -> float:
    return 1.0 if T <= 50.0 else 5.0


@dataclass(frozen=True)
class TransportConfig:
    dt: float
    T: float
    save_times: tuple = ()

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError("T must be an integer multiple of dt")
        if not self.save_times:
            object.__setattr__(self, "save_times", tuple(self.T * (k + 1) / 10 for k in range(10)))
        for s in self.save_times:
            if not 0.0 < s <= self.T * (1 + 1e-12):
                raise ValueError(f"save time {s} outside (0, T]")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @classmethod
    def uniform(cls, T, n_t=10, dt=None):
        return cls(default_dt(T) if dt is None else dt, T, tuple(T * (k + 1) / n_t for k in range(n_t)))


@dataclass(frozen=True, eq=False)
class ConcentrationSeries:
    times: np.ndarray
    fields: tuple

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    @property
    def mesh(self):
        return self.fields[0].mesh

    def total_mass(self):
        return np.array([f.integral() for f in self.fields])

    def export(self, directory, stem="c"):
        """One VTK file per snapshot plus a CSV manifest."""
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "manifest.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "filename", "total_mass"])
            for k, (t, f) in enumerate(zip(self.times, self.fields)):
                name = f"{stem}_{k:04d}.vtk"
                f.mesh.to_vtk(os.path.join(directory, name), {"concentration": f.values},
                              f"concentration t={t!r}")
                w.writerow([repr(float(t)), name, repr(float(f.integral()))])


@dataclass(frozen=True, eq=False)
class TransportOperator:
    """Time-independent pieces of the stepping system for one mesh/velocity/dt."""

    mesh: TriMesh
    dt: float
    system: sp.csr_matrix
    mass: sp.csr_matrix
    supg_mass: sp.csr_matrix
    load: np.ndarray


def _supg_weights(mesh: TriMesh, v: np.ndarray):
    """Per-element tau_e * (v_e . grad phi_i), shape (nt, 3), plus v_e and (div v)_e."""
    g = mesh.basis_gradients
    v_nodes = v[mesh.triangles]                      # (nt, 3, 2)
    v_e = v_nodes.mean(axis=1)
    speed = np.linalg.norm(v_e, axis=1)
    tau = np.where(speed < SPEED_FLOOR, 0.0, mesh.diameters / (2.0 * np.maximum(speed, SPEED_FLOOR)))
    div_e = np.einsum("tkd,tkd->t", g, v_nodes)
    stream = np.einsum("td,tid->ti", v_e, g)         # v_e . grad phi_i
    return tau[:, None] * stream, v_e, div_e


def build_operator(mesh: TriMesh, v_field: NodalField, source, params: PhysParams, dt: float):
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = np.asarray(v_field.values, dtype=float)
    area = mesh.signed_areas
    g = mesh.basis_gradients
    M = mass_matrix(mesh)
    Kd = stiffness_matrix(mesh, params.D)

    # advection: (v c, grad phi_i) = sum_j c_j sum_k (v_k . grad phi_i) M^e_kj
    Me = ((np.ones((3, 3)) + np.eye(3)) / 12.0)[None] * area[:, None, None]
    vg = np.einsum("tkd,tid->tik", v[mesh.triangles], g)       # v_k . grad phi_i
    adv_local = np.einsum("tik,tkj->tij", vg, Me)
    C = _scatter(mesh, adv_local)

    w, v_e, div_e = _supg_weights(mesh, v)
    grad_stream = np.einsum("td,tjd->tj", v_e, g)              # v_e . grad phi_j
    mass_like = (1.0 / dt + div_e)[:, None] * (area / 3.0)[:, None]
    supg_local = w[:, :, None] * (mass_like[:, None, :] + (area[:, None] * grad_stream)[:, None, :])
    S = _scatter(mesh, supg_local)
    supg_mass = _scatter(mesh, w[:, :, None] * np.broadcast_to((area / 3.0)[:, None, None], w.shape + (3,)))

    A = (M / dt + Kd - C + S).tocsr()

    # load: (beta2 f, phi_i) + sum_e w_i beta2 int_e f
    b = load_vector(mesh, source, params.beta2)
    from .fem_darcy import _QUAD_W, quadrature_points
    qp = quadrature_points(mesh)
    f_int = (np.asarray(source(qp[..., 0], qp[..., 1])) @ _QUAD_W) * area
    sl = w * (params.beta2 * f_int)[:, None]
    np.add.at(b, mesh.triangles.ravel(), sl.ravel())
    return TransportOperator(mesh, dt, A, (M / dt).tocsr(), (supg_mass / dt).tocsr(), b)


def step(op: TransportOperator, c_prev: np.ndarray, tol=1e-10, max_iter=5000):
    rhs = op.mass @ c_prev + op.supg_mass @ c_prev + op.load
    c, _ = bicgstab(op.system, rhs, tol=tol, max_iter=max_iter, x0=c_prev)
    return c


def run_transport(mesh: TriMesh, v_field: NodalField, source, params: PhysParams,
                  cfg: TransportConfig, tol=1e-10) -> ConcentrationSeries:
    op = build_operator(mesh, v_field, source, params, cfg.dt)
    save_steps = {int(round(s / cfg.dt)): s for s in cfg.save_times}
    c = np.zeros(mesh.n_vertices)
    times, fields = [], []
    for n in range(1, cfg.n_steps + 1):
        c = step(op, c, tol=tol)
        if n in save_steps:
            times.append(save_steps[n])
            fields.append(NodalField(mesh, c.copy(), "mmol/mm^2"))
    return ConcentrationSeries(np.asarray(times), tuple(fields))


def grid_points(k: int, params: PhysParams):
    """k x k vertex-aligned grid including the boundary; row-major over (x, y)."""
    xs = np.linspace(0.0, params.Lx, k)
    ys = np.linspace(0.0, params.Ly, k)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def interpolate_to_grid(obj, k: int, params: PhysParams):
    """Interpolate a NodalField (k, k) or a ConcentrationSeries (n_t, k, k) to the grid."""
    pts = grid_points(k, params)
    if isinstance(obj, ConcentrationSeries):
        mesh = obj.mesh
        tri, lam = mesh.locate_many(pts)
        vals = np.stack([f.values for f in obj.fields])[:, mesh.triangles[tri]]
        return np.einsum("snk,nk->sn", vals, lam).reshape(len(obj.fields), k, k)
    out = obj.at(pts)
    return out.reshape((k, k) + out.shape[1:])

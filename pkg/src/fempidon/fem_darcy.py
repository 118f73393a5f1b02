"""Steady Darcy pressure/velocity solve on a triangle mesh.

Darcy's law is substituted into the mass balance, giving the screened
elliptic problem

    -div((K/mu) grad p) + alpha p = beta1 f   in the domain,
    (K/mu) dp/dn = 0                          on the boundary,

discretised with continuous P1 elements.  The zero normal flux condition
is natural in this form, and alpha > 0 makes the system SPD.  Velocity is
recovered as -(K/mu) grad p, averaged to the vertices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError
from .linalg import pcg
from .mesh import TriMesh
from .physics import PhysParams

# interior 3-point rule, exact for quadratics
_QUAD_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_QUAD_W = np.full(3, 1.0 / 3.0)
_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True, eq=False)
class NodalField:
    mesh: TriMesh
    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        if len(self.values) != self.mesh.n_vertices:
            raise ValueError("one value per mesh vertex required")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("nodal field contains non-finite values")

    def at(self, pts):
        return self.mesh.interpolate(self.values, np.atleast_2d(pts))

    def integral(self):
        v = self.values
        w = self.mesh.lumped_mass
        return w @ v if v.ndim == 1 else w @ v


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m or len(self.rhs) != n:
            raise ValueError("inconsistent system dimensions")

    def symmetry_defect(self, rng=None):
        """|A x . y - A y . x| / (||A|| ||x|| ||y||) for random probes."""
        rng = np.random.default_rng(0) if rng is None else rng
        n = len(self.rhs)
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        scale = sp.linalg.norm(self.matrix, np.inf) * np.linalg.norm(x) * np.linalg.norm(y)
        return abs((self.matrix @ x) @ y - (self.matrix @ y) @ x) / scale


def quadrature_points(mesh: TriMesh):
    """Physical quadrature points (nt, 3, 2) of the interior 3-point rule."""
    p = mesh.vertices[mesh.triangles]
    return np.einsum("qk,tkd->tqd", _QUAD_BARY, p)


def load_vector(mesh: TriMesh, source, scale=1.0):
    """scale * integral(f phi_j) with the 3-point rule on the analytic f."""
    qp = quadrature_points(mesh)
    fq = np.asarray(source(qp[..., 0], qp[..., 1]), dtype=float)
    area = mesh.signed_areas
    local = np.einsum("tq,q,qk->tk", fq, _QUAD_W, _QUAD_BARY) * area[:, None] * scale
    b = np.zeros(mesh.n_vertices)
    np.add.at(b, mesh.triangles.ravel(), local.ravel())
    return b


def _scatter(mesh: TriMesh, local):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_matrix(mesh: TriMesh, coef=1.0):
    g = mesh.basis_gradients
    local = np.einsum("tid,tjd->tij", g, g) * (coef * mesh.signed_areas)[:, None, None]
    return _scatter(mesh, local)


def mass_matrix(mesh: TriMesh, coef=1.0):
    local = _LOCAL_MASS[None, :, :] * (coef * mesh.signed_areas)[:, None, None]
    return _scatter(mesh, local)


def assemble_darcy(mesh: TriMesh, params: PhysParams, source) -> SparseSystem:
    if (mesh.signed_areas < 1e-14).any():
        raise NumericalError("degenerate triangle (area < 1e-14)")
    A = stiffness_matrix(mesh, params.mobility) + mass_matrix(mesh, params.alpha)
    b = load_vector(mesh, source, params.beta1)
    return SparseSystem(A.tocsr(), b, symmetric=True)


def solve_spd(system: SparseSystem, tol=1e-10, max_iter=10_000):
    if not system.symmetric:
        raise ValueError("solve_spd requires a symmetric system")
    x, _ = pcg(system.matrix, system.rhs, tol=tol, max_iter=max_iter)
    return x


def recover_velocity(mesh: TriMesh, p: NodalField, params: PhysParams) -> NodalField:
    """Vertex velocity from area-weighted averages of the elementwise P1 gradient."""
    grad_e = np.einsum("tkd,tk->td", mesh.basis_gradients, p.values[mesh.triangles])
    area = mesh.signed_areas
    acc = np.zeros((mesh.n_vertices, 2))
    wsum = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(acc, mesh.triangles[:, k], grad_e * area[:, None])
        np.add.at(wsum, mesh.triangles[:, k], area)
    return NodalField(mesh, -params.mobility * acc / wsum[:, None], "mm/s")


def divergence_v_at(p_field: NodalField, source, params: PhysParams, pts):
    """div v at points through the mass balance: -alpha p + beta1 f."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    p = p_field.at(pts)
    return -params.alpha * p + params.beta1 * source(pts[:, 0], pts[:, 1])


@dataclass(frozen=True, eq=False)
class DarcySolution:
    pressure: NodalField
    velocity: NodalField

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "p", "vx", "vy"])
            for (x, y), p, (vx, vy) in zip(self.pressure.mesh.vertices, self.pressure.values,
                                           self.velocity.values):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(p)), repr(float(vx)),
                            repr(float(vy))])

    def to_vtk(self, path):
        self.pressure.mesh.to_vtk(path, {"pressure": self.pressure.values,
                                         "velocity": self.velocity.values}, "darcy solution")


def solve_darcy(mesh: TriMesh, params: PhysParams, source, tol=1e-10) -> DarcySolution:
    p = solve_spd(assemble_darcy(mesh, params, source), tol=tol)
    pf = NodalField(mesh, p, "Pa")
    return DarcySolution(pf, recover_velocity(mesh, pf, params))

"""Branch sensor grids and trunk collocation sets.

A collocation set holds four groups of space-time points for one source:
a polar grid around every Gaussian centre, uniform random interior
points (both carry velocity, div v and f for the PDE residual), boundary
points with analytic outward normals, and initial-time points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem_darcy import NodalField, divergence_v_at
from .physics import GaussianComponent, PhysParams, SourceMixture


@dataclass(frozen=True)
class SamplingConfig:
    n_r: int = 30
    n_theta: int = 30
    n_rand: int = 300
    P_bcs: int = 100
    P_ics: int = 5
    m: int = 30

    def __post_init__(self):
        if min(self.n_r, self.n_theta, self.n_rand, self.P_bcs, self.P_ics) < 0:
            raise ValueError("collocation counts must be non-negative")
        if (self.n_r == 0) != (self.n_theta == 0):
            raise ValueError("n_r and n_theta must both be zero or both positive")
        if self.m < 2:
            raise ValueError("m must be at least 2")


@dataclass(frozen=True, eq=False)
class CollocationSet:
    """Residual, boundary and initial points of one training instance.

    Residual arrays are (n, ) each: x, y, t, vx, vy, div_v, f and the
    pressure p they were computed from.  Boundary arrays: x, y, t, nx, ny.
    Initial arrays: x, y (t = 0).
    """

    res: dict
    bcs: dict
    ics: dict
    n_source: int = 0

    @property
    def n_res(self):
        return len(self.res["x"])

    @property
    def n_bcs(self):
        return len(self.bcs["x"])

    @property
    def n_ics(self):
        return len(self.ics["x"])


@dataclass(frozen=True, eq=False)
class BranchInput:
    values: np.ndarray
    m: int

    def __post_init__(self):
        if self.values.shape != (self.m * self.m,):
            raise ValueError("branch input must have m*m entries")


def polar_points(comp: GaussianComponent, n_r: int, n_theta: int, T: float, rng,
                 params: PhysParams = PhysParams()):
    """Structured polar grid: radii 3 sigma j / n_r (j = 1..n_r), angles 2 pi l / n_theta.

    Returns (x, y, t); each point gets an independent uniform time.
    """
    if n_r < 1 or n_theta < 1:
        raise ValueError("n_r and n_theta must be >= 1")
    r = 3.0 * comp.sigma * np.arange(1, n_r + 1) / n_r
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta
    R, TH = np.meshgrid(r, th, indexing="ij")
    x = np.clip(comp.x0 + R.ravel() * np.cos(TH.ravel()), 0.0, params.Lx)
    y = np.clip(comp.y0 + R.ravel() * np.sin(TH.ravel()), 0.0, params.Ly)
    t = rng.uniform(0.0, T, size=x.size)
    return x, y, t


def boundary_points(n: int, T: float, rng, params: PhysParams):
    """Uniform points on the open edges (edge picked proportional to length)."""
    lengths = np.array([params.Lx, params.Ly, params.Lx, params.Ly])
    edge = rng.choice(4, size=n, p=lengths / lengths.sum())
    u = rng.uniform(0.0, 1.0, size=n)
    while np.any(u == 0.0):
        u[u == 0.0] = rng.uniform(0.0, 1.0, size=int((u == 0.0).sum()))
    t = rng.uniform(0.0, T, size=n)
    # bottom, right, top, left
    x = np.select([edge == 0, edge == 1, edge == 2, edge == 3],
                  [u * params.Lx, np.full(n, params.Lx), u * params.Lx, np.zeros(n)])
    y = np.select([edge == 0, edge == 1, edge == 2, edge == 3],
                  [np.zeros(n), u * params.Ly, np.full(n, params.Ly), u * params.Ly])
    nx = np.select([edge == 1, edge == 3], [np.ones(n), -np.ones(n)], 0.0)
    ny = np.select([edge == 0, edge == 2], [-np.ones(n), np.ones(n)], 0.0)
    return {"x": x, "y": y, "t": t, "nx": nx, "ny": ny}


def build_collocation(mix: SourceMixture, p_field: NodalField, v_field: NodalField,
                      params: PhysParams, cfg: SamplingConfig, T: float, rng) -> CollocationSet:
    xs, ys, ts = [], [], []
    if cfg.n_r > 0:
        for comp in mix.components:
            x, y, t = polar_points(comp, cfg.n_r, cfg.n_theta, T, rng, params)
            xs.append(x), ys.append(y), ts.append(t)
    n_source = sum(len(x) for x in xs)
    xs.append(rng.uniform(0.0, params.Lx, cfg.n_rand))
    ys.append(rng.uniform(0.0, params.Ly, cfg.n_rand))
    ts.append(rng.uniform(0.0, T, cfg.n_rand))
    x, y, t = np.concatenate(xs), np.concatenate(ys), np.concatenate(ts)
    pts = np.stack([x, y], axis=1)

    mesh = p_field.mesh
    tri, lam = mesh.locate_many(pts)
    corners = mesh.triangles[tri]
    v = np.einsum("nkd,nk->nd", v_field.values[corners], lam)
    p = np.einsum("nk,nk->n", p_field.values[corners], lam)
    f = mix(x, y)
    res = {"x": x, "y": y, "t": t, "vx": v[:, 0], "vy": v[:, 1],
           "div_v": divergence_v_at(p_field, mix, params, pts), "f": f, "p": p}

    bcs = boundary_points(cfg.P_bcs, T, rng, params)
    ics = {"x": rng.uniform(0.0, params.Lx, cfg.P_ics), "y": rng.uniform(0.0, params.Ly, cfg.P_ics)}
    return CollocationSet(res, bcs, ics, n_source)


def sensor_points(m: int, params: PhysParams):
    """m x m vertex-aligned grid including the boundary, row-major (x outer)."""
    xs = np.linspace(0.0, params.Lx, m)
    ys = np.linspace(0.0, params.Ly, m)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return X.ravel(), Y.ravel()


def branch_sensors(mix: SourceMixture, m: int, params: PhysParams = PhysParams()) -> BranchInput:
    if m < 2:
        raise ValueError("m must be at least 2")
    x, y = sensor_points(m, params)
    return BranchInput(mix(x, y), m)

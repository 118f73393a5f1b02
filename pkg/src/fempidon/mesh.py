"""Adaptive conforming triangle meshes over the rectangular domain.

The mesher refines a quadtree until every leaf diagonal is below the
source-driven size field, enforces 2:1 balance across edges and then
triangulates each leaf with a fixed template:

* a leaf without hanging nodes is cut along one diagonal (2 triangles);
* a leaf with hanging edge midpoints gets a centre vertex and is fanned
  around its boundary polygon, which closes the hanging nodes.

Point location walks across triangle neighbours starting from the
triangle whose centroid is nearest to the query point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import OutsideDomainError, RefinementBudgetError
from .physics import PhysParams, SourceMixture


@dataclass(frozen=True)
class SizeFieldParams:
    k0: float = 10.0
    k1: float = 10.0
    sigma_ref: float = 1e-3
    h_max_factor: float = 0.04
    h_min_divisor: float = 6.0
    floor_radius_factor: float = 0.1
    h_min_override: float | None = None
    h_max_override: float | None = None
    max_leaves: int = 2_000_000

    def __post_init__(self):
        for name in ("k0", "k1", "sigma_ref", "h_max_factor", "h_min_divisor",
                     "floor_radius_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def size_bounds(sources: SourceMixture, sfp: SizeFieldParams, params: PhysParams):
    h_min = sfp.h_min_override
    if h_min is None:
        h_min = float(sources.sigmas.min()) / sfp.h_min_divisor
    h_max = sfp.h_max_override
    if h_max is None:
        h_max = sfp.h_max_factor * max(params.Lx, params.Ly)
    return h_min, h_max


def refinement_radii(sources: SourceMixture, sfp: SizeFieldParams, params: PhysParams):
    """Per-component (k_i, r_i, delta_i)."""
    s = sources.sigmas
    k = sfp.k0 + sfp.k1 * (sfp.sigma_ref - s) / sfp.sigma_ref
    r = np.maximum(k * s, sfp.floor_radius_factor * min(params.Lx, params.Ly))
    return k, r, r / 2.0


def size_field(sources: SourceMixture, sfp: SizeFieldParams, params: PhysParams, x, y):
    """Target element size at (x, y); vectorised over coordinate arrays."""
    h_min, h_max = size_bounds(sources, sfp, params)
    _, r, delta = refinement_radii(sources, sfp, params)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    prod = np.ones(np.broadcast(x, y).shape)
    for c, ri, di in zip(sources.components, r, delta):
        dist = np.hypot(x - c.x0, y - c.y0)
        prod = prod * 0.5 * (1.0 + np.tanh((dist - ri) / di))
    return h_min + (h_max - h_min) * prod


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray        # (nv, 2)
    triangles: np.ndarray       # (nt, 3), counterclockwise
    boundary_edges: np.ndarray  # (nb, 2), oriented with the domain on the left
    boundary_normals: np.ndarray  # (nb, 2) outward unit normals
    neighbors: np.ndarray       # (nt, 3), triangle across the edge opposite vertex k, or -1
    extent: tuple = (10.0, 10.0)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def signed_areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def basis_gradients(self):
        """Constant gradients of the three P1 basis functions, shape (nt, 3, 2)."""
        p = self.vertices[self.triangles]
        area2 = 2.0 * self.signed_areas
        g = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            a = p[:, (k + 1) % 3]
            b = p[:, (k + 2) % 3]
            g[:, k, 0] = (a[:, 1] - b[:, 1]) / area2
            g[:, k, 1] = (b[:, 0] - a[:, 0]) / area2
        return g

    @cached_property
    def diameters(self):
        p = self.vertices[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    @cached_property
    def edge_lengths(self):
        p = self.vertices[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2)

    @cached_property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def _start_tree(self):
        return cKDTree(self.centroids)

    @cached_property
    def lumped_mass(self):
        """Row sums of the P1 mass matrix (area / 3 per incident triangle)."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.signed_areas / 3.0, 3))
        return w

    def barycentric(self, tri, pts):
        p = self.vertices[self.triangles[tri]]
        x1, y1 = p[:, 0, 0], p[:, 0, 1]
        x2, y2 = p[:, 1, 0], p[:, 1, 1]
        x3, y3 = p[:, 2, 0], p[:, 2, 1]
        det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
        l1 = ((y2 - y3) * (pts[:, 0] - x3) + (x3 - x2) * (pts[:, 1] - y3)) / det
        l2 = ((y3 - y1) * (pts[:, 0] - x3) + (x1 - x3) * (pts[:, 1] - y3)) / det
        return np.stack([l1, l2, 1.0 - l1 - l2], axis=1)

    def locate_many(self, pts, tol=1e-13, max_steps=200):
        """Containing triangle and barycentric coordinates for many points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        Lx, Ly = self.extent
        slack = 1e-12 * max(Lx, Ly)
        bad = ((pts[:, 0] < -slack) | (pts[:, 0] > Lx + slack)
               | (pts[:, 1] < -slack) | (pts[:, 1] > Ly + slack) | ~np.isfinite(pts).all(axis=1))
        if bad.any():
            raise OutsideDomainError(f"point {pts[np.argmax(bad)].tolist()} lies outside the domain")
        _, tri = self._start_tree.query(pts)
        tri = np.asarray(tri, dtype=np.int64)
        lam = np.empty((len(pts), 3))
        active = np.arange(len(pts))
        for _ in range(max_steps):
            if len(active) == 0:
                break
            cur = self.barycentric(tri[active], pts[active])
            ok = cur.min(axis=1) >= -tol
            lam[active[ok]] = cur[ok]
            moving = active[~ok]
            nxt = self.neighbors[tri[moving], np.argmin(cur[~ok], axis=1)]
            stuck = nxt < 0
            tri[moving[~stuck]] = nxt[~stuck]
            # hitting the boundary from inside the domain only happens through roundoff
            active = moving[~stuck]
            leftover = moving[stuck]
            if len(leftover):
                t, l = self._brute_force(pts[leftover])
                tri[leftover], lam[leftover] = t, l
        if len(active):
            t, l = self._brute_force(pts[active])
            tri[active], lam[active] = t, l
        return tri, lam

    def _brute_force(self, pts):
        tris = np.empty(len(pts), dtype=np.int64)
        lams = np.empty((len(pts), 3))
        all_tri = np.arange(self.n_triangles)
        for i, p in enumerate(pts):
            lam = self.barycentric(all_tri, np.broadcast_to(p, (self.n_triangles, 2)))
            j = int(np.argmax(lam.min(axis=1)))
            tris[i], lams[i] = j, lam[j]
        return tris, lams

    def locate(self, p):
        tri, lam = self.locate_many(np.asarray(p, dtype=float)[None, :])
        return int(tri[0]), lam[0]

    def interpolate(self, values, pts):
        """Evaluate a nodal field (nv,) or (nv, d) at points by barycentric weights."""
        tri, lam = self.locate_many(pts)
        vals = np.asarray(values)[self.triangles[tri]]
        if vals.ndim == 2:
            return np.einsum("nk,nk->n", vals, lam)
        return np.einsum("nkd,nk->nd", vals, lam)

    def to_vtk(self, path, point_data=None, title="fempidon mesh"):
        write_vtk(path, self, point_data or {}, title)


def _build_topology(vertices, triangles, extent):
    nt = len(triangles)
    edges = np.stack([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1)
    key = np.sort(edges.reshape(-1, 2), axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks = key[order]
    same = np.all(ks[1:] == ks[:-1], axis=1)
    neighbors = -np.ones(3 * nt, dtype=np.int64)
    a = order[:-1][same]
    b = order[1:][same]
    neighbors[a] = b // 3
    neighbors[b] = a // 3
    neighbors = neighbors.reshape(nt, 3)
    bmask = neighbors.ravel() < 0
    bedges = edges.reshape(-1, 2)[bmask]
    d = vertices[bedges[:, 1]] - vertices[bedges[:, 0]]
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1)
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return TriMesh(vertices, triangles, bedges, normals, neighbors, extent)


def _root_grid(params: PhysParams):
    ratio = params.Lx / params.Ly
    if ratio >= 1:
        return max(1, int(round(ratio))), 1
    return 1, max(1, int(round(1.0 / ratio)))


def _refine_quadtree(sources, sfp, params):
    nx0, ny0 = _root_grid(params)
    wx0, wy0 = params.Lx / nx0, params.Ly / ny0
    leaves = {}
    ii, jj = np.meshgrid(np.arange(nx0), np.arange(ny0), indexing="ij")
    level_cells = np.stack([ii.ravel(), jj.ravel()], axis=1)
    level = 0
    n_leaves = 0
    while len(level_cells):
        wx, wy = wx0 / 2 ** level, wy0 / 2 ** level
        cx = (level_cells[:, 0] + 0.5) * wx
        cy = (level_cells[:, 1] + 0.5) * wy
        h = size_field(sources, sfp, params, cx, cy)
        split = np.hypot(wx, wy) > h
        keep = level_cells[~split]
        leaves[level] = set(map(tuple, keep.tolist()))
        n_leaves += len(keep)
        children = level_cells[split]
        if n_leaves + 4 * len(children) > sfp.max_leaves:
            raise RefinementBudgetError(
                f"quadtree leaf budget {sfp.max_leaves} exceeded for sigma = "
                f"{sources.sigmas.min():.6g} mm")
        if len(children) == 0:
            break
        c2 = 2 * children
        level_cells = np.concatenate([c2, c2 + [1, 0], c2 + [0, 1], c2 + [1, 1]])
        level += 1
    return leaves, (nx0, ny0)


def _balance(leaves, root):
    """Enforce 2:1 edge balance by splitting coarse leaves in place."""
    nx0, ny0 = root
    max_level = max(leaves)

    def find_leaf(l, i, j):
        for lp in range(l, -1, -1):
            s = l - lp
            key = (i >> s, j >> s)
            if key in leaves.get(lp, ()):
                return lp, key
        return None

    for l in range(max_level, 1, -1):
        for (i, j) in list(leaves.get(l, ())):
            if (i, j) not in leaves[l]:
                continue
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ni, nj = i + di, j + dj
                if ni < 0 or nj < 0 or ni >= nx0 << l or nj >= ny0 << l:
                    continue
                found = find_leaf(l, ni, nj)
                if found is None:
                    continue
                lp, (a, b) = found
                while lp < l - 1:
                    leaves[lp].discard((a, b))
                    kids = [(2 * a, 2 * b), (2 * a + 1, 2 * b), (2 * a, 2 * b + 1), (2 * a + 1, 2 * b + 1)]
                    leaves.setdefault(lp + 1, set()).update(kids)
                    lp += 1
                    s = l - lp
                    a, b = ni >> s, nj >> s
    return leaves


def _triangulate(leaves, root, params):
    nx0, ny0 = root
    max_level = max(l for l, cells in leaves.items() if cells)
    scale = 2 ** max_level
    corners = set()
    for l, cells in leaves.items():
        s = 2 ** (max_level - l)
        for (i, j) in cells:
            X, Y = i * s, j * s
            corners.update(((X, Y), (X + s, Y), (X, Y + s), (X + s, Y + s)))
    index = {}
    verts = []

    def vid(key):
        v = index.get(key)
        if v is None:
            v = len(verts)
            index[key] = v
            verts.append(key)
        return v

    tris = []
    centers = []
    for l in sorted(leaves):
        s = 2 ** (max_level - l)
        h = s // 2
        for (i, j) in sorted(leaves[l]):
            X, Y = i * s, j * s
            ring = [(X, Y)]
            hanging = False
            # counterclockwise: bottom, right, top, left
            for (ax, ay), (bx, by) in (((X, Y), (X + s, Y)), ((X + s, Y), (X + s, Y + s)),
                                       ((X + s, Y + s), (X, Y + s)), ((X, Y + s), (X, Y))):
                if h and ((ax + bx) // 2, (ay + by) // 2) in corners:
                    ring.append(((ax + bx) // 2, (ay + by) // 2))
                    hanging = True
                ring.append((bx, by))
            ring = ring[:-1]
            if not hanging:
                a, b, c, d = (vid(k) for k in ring)
                if (i + j) % 2 == 0:
                    tris += [(a, b, c), (a, c, d)]
                else:
                    tris += [(a, b, d), (b, c, d)]
            else:
                ids = [vid(k) for k in ring]
                cid = len(verts)
                verts.append(None)
                centers.append((cid, X + s / 2.0, Y + s / 2.0))
                for k in range(len(ids)):
                    tris.append((cid, ids[k], ids[(k + 1) % len(ids)]))
    xyz = np.empty((len(verts), 2))
    for k, key in enumerate(verts):
        if key is not None:
            xyz[k] = key
    for cid, cx, cy in centers:
        xyz[cid] = (cx, cy)
    xyz[:, 0] *= params.Lx / (nx0 * scale)
    xyz[:, 1] *= params.Ly / (ny0 * scale)
    return xyz, np.asarray(tris, dtype=np.int64)


def generate_mesh(sources: SourceMixture, sfp: SizeFieldParams = SizeFieldParams(),
                  params: PhysParams = PhysParams()) -> TriMesh:
    h_min, _ = size_bounds(sources, sfp, params)
    if h_min < 1e-4 * min(params.Lx, params.Ly):
        raise RefinementBudgetError(
            f"h_min = {h_min:.3g} mm is below the resolvable limit (sigma = {sources.sigmas.min():.6g} mm)")
    leaves, root = _refine_quadtree(sources, sfp, params)
    leaves = _balance(leaves, root)
    xyz, tris = _triangulate(leaves, root, params)
    return _build_topology(xyz, tris, (params.Lx, params.Ly))


def uniform_mesh(params: PhysParams, h: float) -> TriMesh:
    """Structured quadtree mesh with leaf diagonal <= h."""
    from .physics import GaussianComponent
    dummy = SourceMixture((GaussianComponent(params.Lx / 2, params.Ly / 2, 1.0),), 1.0)
    sfp = SizeFieldParams(h_min_override=h, h_max_override=h)
    return generate_mesh(dummy, sfp, params)


def check_integrity(mesh: TriMesh, area: float | None = None):
    """Return a list of violated mesh invariants (empty when the mesh is sound)."""
    problems = []
    if (mesh.signed_areas <= 0).any():
        problems.append(f"{int((mesh.signed_areas <= 0).sum())} non-positive triangles")
    t = mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    if (counts > 2).any():
        problems.append("edge shared by more than two triangles")
    # hanging nodes: a vertex lying strictly inside a boundary-of-triangle edge
    if len(mesh.boundary_edges):
        Lx, Ly = mesh.extent
        mid = mesh.vertices[mesh.boundary_edges].mean(axis=1)
        on_bdry = ((np.abs(mid[:, 0]) < 1e-9) | (np.abs(mid[:, 0] - Lx) < 1e-9)
                   | (np.abs(mid[:, 1]) < 1e-9) | (np.abs(mid[:, 1] - Ly) < 1e-9))
        if not on_bdry.all():
            problems.append(f"{int((~on_bdry).sum())} single-owner edges inside the domain (hanging nodes)")
    if area is not None:
        tot = mesh.signed_areas.sum()
        if abs(tot - area) > 1e-9 * area:
            problems.append(f"area sum {tot!r} differs from {area!r}")
    return problems


def write_vtk(path, mesh: TriMesh, point_data: dict, title="fempidon"):
    """Legacy-VTK ASCII unstructured grid with optional point data."""
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {mesh.n_triangles}")
    lines += ["5"] * mesh.n_triangles
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, vals in point_data.items():
            vals = np.asarray(vals)
            if vals.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.17g}" for v in vals]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{a:.17g} {b:.17g} 0" for a, b in vals[:, :2]]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

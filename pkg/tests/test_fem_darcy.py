import numpy as np
import pytest
import scipy.sparse as sp

from fempidon.errors import NumericalError, SolverError
from fempidon.fem_darcy import (NodalField, SparseSystem, assemble_darcy, divergence_v_at,
                                recover_velocity, solve_darcy, solve_spd)
from fempidon.linalg import pcg
from fempidon.mesh import uniform_mesh
from fempidon.physics import PhysParams


def manufactured(params: PhysParams):
    ax, ay = np.pi / params.Lx, np.pi / params.Ly
    k = params.mobility

    def p_star(x, y):
        return np.cos(ax * x) * np.cos(ay * y)

    def f_star(x, y):
        return (k * ax ** 2 + k * ay ** 2 + params.alpha) * p_star(x, y) / params.beta1

    def grad(x, y):
        return np.stack([-ax * np.sin(ax * x) * np.cos(ay * y),
                         -ay * np.cos(ax * x) * np.sin(ay * y)], axis=-1)

    return p_star, f_star, grad


def l2_error(mesh, values, exact):
    """L2 error of a nodal field by 3-point edge-midpoint quadrature."""
    t = mesh.triangles
    v = mesh.vertices
    err = 0.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        mid = 0.5 * (v[t[:, a]] + v[t[:, b]])
        uh = 0.5 * (values[t[:, a]] + values[t[:, b]])
        d = uh - exact(mid[:, 0], mid[:, 1])
        d = d.reshape(len(t), -1)
        err += (mesh.signed_areas / 3.0 * (d ** 2).sum(axis=1)).sum()
    return np.sqrt(err)


def orders(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


def test_pcg_small_systems():
    x, it = pcg(sp.identity(5, format="csr"), np.arange(1.0, 6.0))
    np.testing.assert_array_equal(x, np.arange(1.0, 6.0))
    assert it == 1
    A = sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]])
    x = solve_spd(SparseSystem(A, np.array([1.0, 2.0]), symmetric=True))
    np.testing.assert_allclose(x, [1 / 11, 7 / 11], atol=1e-10)


def test_pcg_budget_error_carries_residual():
    A = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(200, 200), format="csr")
    with pytest.raises(SolverError) as info:
        pcg(A, np.ones(200), max_iter=3)
    assert info.value.residual > 1e-10


def test_solve_spd_requires_symmetric_flag():
    with pytest.raises(ValueError):
        solve_spd(SparseSystem(sp.identity(2, format="csr"), np.ones(2)))


def test_zero_source_gives_zero_fields(phys):
    mesh = uniform_mesh(phys, 0.5)
    sol = solve_darcy(mesh, phys, lambda x, y: np.zeros_like(x))
    assert not sol.pressure.values.any() and not sol.velocity.values.any()
    pts = np.random.default_rng(0).uniform(0, 10, (10, 2))
    assert not divergence_v_at(sol.pressure, lambda x, y: np.zeros_like(x), phys, pts).any()


def test_system_is_symmetric_and_residual_small(single_mesh, single_source, phys):
    system = assemble_darcy(single_mesh, phys, single_source)
    assert system.symmetry_defect() <= 1e-10
    x = solve_spd(system, tol=1e-10)
    assert np.linalg.norm(system.matrix @ x - system.rhs) <= 1e-10 * np.linalg.norm(system.rhs)


def test_global_balance_and_positivity(single_darcy, phys):
    p = single_darcy.pressure
    assert phys.alpha * p.integral() == pytest.approx(phys.beta1, rel=5e-3)
    assert p.values.min() >= -1e-8 * np.abs(p.values).max()


def test_constant_source_balance(phys):
    mesh = uniform_mesh(phys, 0.5)
    sol = solve_darcy(mesh, phys, lambda x, y: np.full_like(x, 1.0 / phys.area))
    assert phys.alpha * sol.pressure.integral() == pytest.approx(phys.beta1, rel=1e-3)


def test_manufactured_pressure_and_velocity_orders(phys):
    p_star, f_star, grad = manufactured(phys)
    ep, ev = [], []
    for h in (1.0, 0.5, 0.25, 0.125):
        mesh = uniform_mesh(phys, h * np.sqrt(2))
        sol = solve_darcy(mesh, phys, f_star)
        ep.append(l2_error(mesh, sol.pressure.values, p_star))
        ev.append(l2_error(mesh, sol.velocity.values, lambda x, y: -phys.mobility * grad(x, y)))
    assert orders(ep).min() >= 1.9
    assert orders(ev).min() >= 0.9


def test_velocity_of_linear_pressure(phys):
    mesh = uniform_mesh(phys, 1.0)
    v = recover_velocity(mesh, NodalField(mesh, mesh.vertices[:, 0].copy()), phys)
    np.testing.assert_allclose(v.values, np.tile([-phys.mobility, 0.0], (mesh.n_vertices, 1)),
                               rtol=1e-12, atol=1e-20)
    const = recover_velocity(mesh, NodalField(mesh, np.full(mesh.n_vertices, 3.0)), phys)
    assert np.abs(const.values).max() == 0.0


def test_divergence_identity_on_manufactured(phys):
    p_star, f_star, _ = manufactured(phys)
    mesh = uniform_mesh(phys, 0.1 * np.sqrt(2))
    sol = solve_darcy(mesh, phys, f_star)
    pts = np.random.default_rng(2).uniform(0, 10, (500, 2))
    got = divergence_v_at(sol.pressure, f_star, phys, pts)
    exact = -phys.alpha * p_star(*pts.T) + phys.beta1 * f_star(*pts.T)
    scale = np.abs(phys.beta1 * f_star(*pts.T)).max()
    assert np.abs(got - exact).max() <= 0.02 * scale
    # where the discrete pressure vanishes the identity reduces to beta1 f
    zero = NodalField(mesh, np.zeros(mesh.n_vertices))
    np.testing.assert_allclose(divergence_v_at(zero, f_star, phys, pts), phys.beta1 * f_star(*pts.T))


def test_degenerate_triangle_rejected(phys):
    mesh = uniform_mesh(phys, 1.0)
    v = mesh.vertices.copy()
    t = mesh.triangles[0]
    v[t[2]] = 0.5 * (v[t[0]] + v[t[1]])
    bad = type(mesh)(v, mesh.triangles, mesh.boundary_edges, mesh.boundary_normals, mesh.neighbors,
                     mesh.extent)
    with pytest.raises(NumericalError):
        assemble_darcy(bad, phys, lambda x, y: np.ones_like(x))


def test_solve_is_deterministic(single_mesh, single_source, phys):
    a = solve_darcy(single_mesh, phys, single_source).pressure.values
    b = solve_darcy(single_mesh, phys, single_source).pressure.values
    assert a.tobytes() == b.tobytes()


def test_exports(tmp_path, single_darcy):
    single_darcy.to_csv(tmp_path / "d.csv")
    single_darcy.to_vtk(tmp_path / "d.vtk")
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "x,y,p,vx,vy"
    assert len(rows) == single_darcy.pressure.mesh.n_vertices + 1
    assert "VECTORS velocity" in (tmp_path / "d.vtk").read_text()

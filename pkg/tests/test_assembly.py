import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pxlap.assembly import AssemblyOverflow, ElementData, assemble, element_energy, nodal_residual
from pxlap.exponent import constant, make_exponent
from pxlap.mesh import make_mesh
from pxlap.spaces import GridFunction

SQ = [(0.0, 1.0), (0.0, 1.0)]


def fd_gradient(mesh, values, ed, c, free, h):
    g = np.zeros(len(free))
    for k, i in enumerate(free):
        up, dn = values.copy(), values.copy()
        up[i] += h
        dn[i] -= h
        g[k] = (element_energy(mesh, up, ed, c) - element_energy(mesh, dn, ed, c)) / (2 * h)
    return g


def test_linear_minimizer_p2():
    mesh = make_mesh(1, [(0, 1)], 9)
    u = GridFunction.interpolate(mesh, lambda x: x[:, 0])
    s = assemble(u, constant(2.0))
    assert s.energy == pytest.approx(0.5)
    np.testing.assert_allclose(s.residual, 0.0, atol=1e-14)


def test_load_sign():
    mesh = make_mesh(1, [(0, 1)], 9)
    s = assemble(GridFunction(mesh, np.zeros(9)), constant(3.0), rhs_c=1.0)
    np.testing.assert_allclose(s.residual, -mesh.lumped_mass[mesh.free_nodes])
    assert np.all(s.residual < 0)


def test_flux_constancy_any_exponent():
    mesh = make_mesh(1, [(0, 1)], 33)
    p = make_exponent("affine", [(0, 1)], p0=1.3, slope=2.0)
    u = GridFunction.interpolate(mesh, lambda x: x[:, 0])
    np.testing.assert_allclose(assemble(u, p).residual, 0.0, atol=1e-14)


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("p0,slope", [(1.5, 0.0), (2.0, 0.0), (3.5, 0.0), (1.3, 1.5)])
def test_residual_is_energy_gradient(dim, p0, slope):
    mesh = make_mesh(dim, [(0, 1)] * dim, 9 if dim == 1 else 5)
    p = make_exponent("affine", [(0, 1)] * dim, p0=p0, slope=slope, direction=[1.0] + [0.5] * (dim - 1))
    rng = np.random.default_rng(7)
    u = GridFunction(mesh, rng.standard_normal(mesh.n_nodes))
    s = assemble(u, p, rhs_c=0.7)
    ed = ElementData.build(mesh, p)
    h = 1e-7 * max(1.0, np.abs(u.values).max())
    fd = fd_gradient(mesh, u.values, ed, 0.7, mesh.free_nodes, h)
    assert np.max(np.abs(fd - s.residual)) <= 1e-6


@pytest.mark.parametrize("p0", [1.5, 2.0, 4.0])
def test_hessian_is_residual_jacobian(p0):
    mesh = make_mesh(2, SQ, 5)
    p = make_exponent("affine", SQ, p0=p0, slope=0.4, direction=[0.6, 0.8])
    rng = np.random.default_rng(1)
    vals = rng.standard_normal(mesh.n_nodes)
    s = assemble(GridFunction(mesh, vals), p)
    ed = ElementData.build(mesh, p)
    free = mesh.free_nodes
    H = s.hessian.toarray()
    h = 1e-6
    for k, i in enumerate(free):
        up, dn = vals.copy(), vals.copy()
        up[i] += h
        dn[i] -= h
        col = (nodal_residual(mesh, up, ed)[free] - nodal_residual(mesh, dn, ed)[free]) / (2 * h)
        np.testing.assert_allclose(H[:, k], col, atol=1e-5 * max(1, np.abs(col).max()))


def test_hessian_symmetric_and_psd_for_p_at_least_two(rng):
    mesh = make_mesh(2, SQ, 6)
    p = make_exponent("affine", SQ, p0=2.0, slope=1.5, direction=[1.0, 0.0])
    for _ in range(5):
        s = assemble(GridFunction(mesh, rng.standard_normal(mesh.n_nodes)), p, reg_floor=0.0)
        H = s.hessian.toarray()
        assert np.max(np.abs(H - H.T)) <= 1e-12
        assert np.linalg.eigvalsh(H).min() >= -1e-9


def test_regularization_only_below_two():
    mesh = make_mesh(1, [(0, 1)], 5)
    flat = GridFunction(mesh, np.zeros(5))
    # p < 2 with a zero gradient: the floor keeps the Hessian finite
    s = assemble(flat, constant(1.5), reg_floor=1e-6)
    assert np.all(np.isfinite(s.hessian.toarray()))
    # the floor never enters the energy
    assert s.energy == 0.0


def test_overflow_reported():
    mesh = make_mesh(1, [(0, 1)], 5)
    u = GridFunction(mesh, np.array([0, 1e200, 0, 0, 0.0]))
    with pytest.raises(AssemblyOverflow):
        assemble(u, constant(3.0))


def test_negative_floor_rejected(mesh1d):
    with pytest.raises(ValueError):
        assemble(GridFunction(mesh1d, np.zeros(65)), constant(2.0), reg_floor=-1.0)


def test_rejects_exponent_at_most_one_at_quadrature_points():
    mesh = make_mesh(1, [(0, 1)], 5)

    class Fake:
        def __call__(self, x):
            return np.ones(len(x))

    with pytest.raises(ValueError):
        ElementData.build(mesh, Fake())


@given(st.integers(0, 10**6))
def test_assembly_is_deterministic(seed):
    mesh = make_mesh(2, SQ, 5)
    p = make_exponent("affine", SQ, p0=1.6, slope=0.5, direction=[1.0, 1.0])
    u = GridFunction(mesh, np.random.default_rng(seed).standard_normal(mesh.n_nodes))
    a, b = assemble(u, p, 0.3), assemble(u, p, 0.3)
    assert a.energy == b.energy
    assert np.array_equal(a.residual, b.residual)
    assert (a.hessian != b.hessian).nnz == 0

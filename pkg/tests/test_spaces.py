import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from pxlap.exponent import constant, make_exponent
from pxlap.mesh import make_mesh
from pxlap.spaces import (
    GridFunction,
    ess_liminf_regularize,
    holder_pairing_check,
    liminf_layers,
    luxemburg_norm,
    modular,
    modular_sandwich,
    poincare_ratio,
    stiffness_matrix,
)

# frozen: barycenter-rule Luxemburg norm of u = 3x, p = 1.5 + x on a 65-node mesh,
# cross-checked against brentq on the same quadrature sum
LUX_3X_65 = 1.8274549588066993
# continuum value from adaptive quadrature + brentq
LUX_3X_CONT = 1.8275392673218147


@pytest.fixture(scope="module")
def line():
    return make_mesh(1, [(0.0, 1.0)], 65)


@pytest.fixture(scope="module")
def p_1d():
    return make_exponent("affine", [(0.0, 1.0)], p0=1.5, slope=1.0)


def test_grid_function_validation(line):
    with pytest.raises(ValueError):
        GridFunction(line, np.zeros(3))
    vals = np.zeros(65)
    vals[4] = np.nan
    with pytest.raises(ValueError, match="finite"):
        GridFunction(line, vals)


def test_grid_function_arithmetic(line):
    u = GridFunction.interpolate(line, lambda x: x[:, 0])
    v = 2 * u - u + 1.0
    np.testing.assert_allclose(v.values, u.values + 1.0)
    np.testing.assert_allclose((-u).values, -u.values)


def test_modular_trivial_cases(line):
    one = GridFunction(line, np.ones(65))
    assert modular(one, constant(2.0)) == pytest.approx(1.0)
    assert modular(one * 0.0, make_exponent("affine", [(0, 1)], p0=1.3, slope=2.0)) == 0.0


def test_modular_matches_quadrature_oracle():
    mesh = make_mesh(1, [(0.0, 1.0)], 64)
    p = make_exponent("affine", [(0.0, 1.0)], p0=2.0, slope=1.0)
    u = GridFunction.interpolate(mesh, lambda x: x[:, 0])
    exact = quad(lambda x: x ** (2 + x), 0, 1, epsabs=1e-12)[0]
    # midpoint rule error is O(h^2)
    assert modular(u, p) == pytest.approx(exact, abs=mesh.h**2)


def test_modular_of_gradient(line, p_1d):
    u = GridFunction.interpolate(line, lambda x: 3 * x[:, 0])
    exact = quad(lambda x: 3 ** (1.5 + x), 0, 1)[0]
    assert modular(u, p_1d, of_gradient=True) == pytest.approx(exact, rel=1e-3)


def test_luxemburg_trivial(line):
    assert luxemburg_norm(GridFunction(line, np.full(65, 2.0)), constant(2.0)) == pytest.approx(2.0, abs=1e-12)
    assert luxemburg_norm(GridFunction(line, np.zeros(65)), constant(2.0)) == 0.0


def test_luxemburg_frozen_and_continuum(line, p_1d):
    u = GridFunction.interpolate(line, lambda x: 3 * x[:, 0])
    lam = luxemburg_norm(u, p_1d)
    assert lam == pytest.approx(LUX_3X_65, rel=1e-12)
    assert lam == pytest.approx(LUX_3X_CONT, abs=1e-3)
    bc = line.barycenters[:, 0]
    oracle = brentq(lambda l: np.sum((3 * bc / l) ** (1.5 + bc)) / 64 - 1, 0.1, 10, xtol=1e-15)
    assert lam == pytest.approx(oracle, rel=1e-12)


@given(st.integers(0, 10**6), st.floats(1.1, 3.0), st.floats(-1.0, 2.0))
def test_unit_ball_sandwich_homogeneity(seed, p0, slope):
    # direction . x ranges over [0, 1.4] on the unit square
    assume(p0 + 1.4 * min(slope, 0) > 1.05)
    mesh = make_mesh(2, [(0, 1), (0, 1)], 6)
    p = make_exponent("affine", [(0, 1), (0, 1)], p0=p0, slope=slope, direction=[0.6, 0.8])
    rng = np.random.default_rng(seed)
    u = GridFunction(mesh, rng.standard_normal(mesh.n_nodes) * 10 ** rng.uniform(-2, 2))
    lam = luxemburg_norm(u, p)
    assert abs(modular(u * (1 / lam), p) - 1) <= 1e-8
    lo, hi = modular_sandwich(lam, p)
    m = modular(u, p)
    assert lo * (1 - 1e-12) <= m <= hi * (1 + 1e-12)
    for t in (0.5, 2.0, -3.0):
        assert luxemburg_norm(u * t, p) == pytest.approx(abs(t) * lam, rel=1e-8)


def test_holder_constants(line):
    one = GridFunction(line, np.ones(65))
    chk = holder_pairing_check(one, one, constant(2.0))
    assert (chk.lhs, chk.rhs, chk.ratio) == pytest.approx((1.0, 2.0, 0.5))
    zero = one * 0.0
    assert holder_pairing_check(zero, one, constant(2.0)).lhs == 0.0


def test_holder_random_pairs(line, rng):
    p = make_exponent("affine", [(0, 1)], p0=2.0, slope=1.0)
    worst = 0.0
    for _ in range(1000):
        f = GridFunction(line, rng.standard_normal(65))
        g = GridFunction(line, rng.standard_normal(65) * rng.uniform(0.01, 100))
        chk = holder_pairing_check(f, g, p)
        assert chk.holds
        worst = max(worst, chk.ratio)
    assert worst < 1.0


def test_holder_rejects_mixed_meshes(line):
    other = make_mesh(1, [(0, 1)], 65)
    with pytest.raises(ValueError):
        holder_pairing_check(GridFunction(line, np.ones(65)), GridFunction(other, np.ones(65)), constant(2.0))


def test_poincare_closed_form():
    mesh = make_mesh(1, [(0.0, 1.0)], 513)
    u = GridFunction.interpolate(mesh, lambda x: x[:, 0] * (1 - x[:, 0]))
    expected = (1 / np.sqrt(30)) / (1 / np.sqrt(3))
    assert poincare_ratio(u, constant(2.0)) == pytest.approx(expected, rel=1e-4)


def test_poincare_hat_and_scaling():
    mesh = make_mesh(1, [(0.0, 1.0)], 3)
    hat = GridFunction(mesh, [0.0, 1.0, 0.0])
    r = poincare_ratio(hat, constant(2.0))
    # ||hat||_2 over barycenters: values 1/2 on each half; ||hat'||_2 = 2
    assert r == pytest.approx(0.5 / 2.0)
    assert poincare_ratio(hat * 2.0, constant(2.0)) == pytest.approx(r)


def test_poincare_errors(line):
    with pytest.raises(ValueError, match="zero boundary"):
        poincare_ratio(GridFunction(line, np.ones(65)), constant(2.0))
    with pytest.raises(ValueError, match="undefined"):
        poincare_ratio(GridFunction(line, np.zeros(65)), constant(2.0))


def test_liminf_layers_are_nested_minima(rng):
    mesh = make_mesh(2, [(0, 1), (0, 1)], 9)
    u = GridFunction(mesh, rng.standard_normal(mesh.n_nodes))
    layers = liminf_layers(u, 3)
    assert len(layers) == 4
    np.testing.assert_array_equal(layers[0], u.values)
    for a, b in zip(layers, layers[1:]):
        assert np.all(b <= a)
    # brute force: one layer is the min over the closed 1-ring
    adj = mesh.adjacency.tolil()
    for i in range(mesh.n_nodes):
        ring = [i] + adj.rows[i]
        assert layers[1][i] == u.values[ring].min()


def test_liminf_spike_semantics():
    mesh = make_mesh(1, [(0, 1)], 11)
    up = np.zeros(11)
    up[5] = 1.0
    # a raised node is removed by the lower regularization, the others stay at 0
    np.testing.assert_array_equal(ess_liminf_regularize(GridFunction(mesh, up), 1).values, np.zeros(11))
    down = np.zeros(11)
    down[5] = -1.0
    low = ess_liminf_regularize(GridFunction(mesh, down), 1).values
    assert low[5] == -1.0
    # min semantics spread the dip to the 1-ring
    np.testing.assert_array_equal(np.flatnonzero(low < 0), [4, 5, 6])


def test_liminf_of_continuous_function_converges():
    # a Lipschitz function moves by at most L * h per layer
    for n in (17, 65, 257):
        mesh = make_mesh(1, [(0, 1)], n)
        u = GridFunction.interpolate(mesh, lambda x: np.sin(3 * x[:, 0]))
        low = ess_liminf_regularize(u, 1)
        assert np.max(u.values - low.values) <= 3.0 * mesh.h + 1e-14


def test_liminf_requires_positive_steps(line):
    with pytest.raises(ValueError):
        liminf_layers(GridFunction(line, np.zeros(65)), 0)


def test_stiffness_matrix_annihilates_constants(mesh2d):
    K = stiffness_matrix(mesh2d)
    np.testing.assert_allclose(K @ np.ones(mesh2d.n_nodes), 0.0, atol=1e-12)
    assert abs(K - K.T).max() < 1e-14

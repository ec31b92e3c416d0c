import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pxlap.exponent import Domain, constant, make_exponent
from pxlap.operators import (
    Branch,
    Jet2,
    flux,
    infinity_lap,
    jet_form_F,
    matrix_A,
    mono_gap,
    normalized_pxlap,
    pxlap_expanded,
    pxlap_value,
    scalar_B,
    sqrt_A_lambda_min,
    sqrt_A_lambda_min_numeric,
    sym_sqrt,
)

BOX2 = Domain.box([(-2.0, 2.0), (-2.0, 2.0)])


def p_const(v, dim=2):
    return make_exponent("constant", Domain.box([(-2.0, 2.0)] * dim), p0=v)


P_X1 = make_exponent("affine", Domain.box([(-0.5, 2.0), (-2.0, 2.0)]), p0=2.0, slope=1.0, direction=[1.0, 0.0])


def jet(x, xi, X):
    return Jet2(np.asarray(x, float), 0.0, np.asarray(xi, float), np.asarray(X, float))


def random_jet(rng, n=2):
    x = rng.uniform(-1, 1, n)
    xi = rng.standard_normal(n)
    xi *= 10 ** rng.uniform(-3, 3) / np.linalg.norm(xi)
    S = rng.standard_normal((n, n))
    return Jet2(x, rng.standard_normal(), xi, (S + S.T) / 2)


def test_jet_rejects_asymmetric_hessian():
    with pytest.raises(ValueError, match="symmetric"):
        jet([0, 0], [1, 0], [[1, 1e-9], [0, 1]])
    with pytest.raises(ValueError, match="shapes"):
        jet([0, 0], [1, 0, 0], np.eye(2))


@pytest.mark.parametrize(
    "p, xi, expected",
    [(2.0, [3, 4], [3, 4]), (1.5, [0, 0], [0, 0]), (3.0, [3, 4], [15, 20])],
)
def test_flux_examples(p, xi, expected):
    np.testing.assert_allclose(flux(np.zeros(2), xi, p_const(p)), expected)


def test_expanded_examples():
    X = np.eye(2)
    assert pxlap_expanded(jet([1, 0], [1, 0], X), p_const(3.0)) == pytest.approx(3.0)
    assert pxlap_expanded(jet([1, 0], [1, 0], X), P_X1) == pytest.approx(3.0)
    rng = np.random.default_rng(1)
    for _ in range(10):
        j = random_jet(rng)
        assert pxlap_expanded(j, p_const(2.0)) == pytest.approx(np.trace(j.X))


def test_expanded_rejects_zero_gradient_and_singular_point():
    with pytest.raises(ValueError, match="vanishing"):
        pxlap_expanded(jet([0, 0], [0, 0], np.eye(2)), p_const(3.0))
    pr = make_exponent("radial", p0=1.5, slope=0.3)
    with pytest.raises(ValueError, match="not C"):
        pxlap_expanded(jet([0, 0], [1, 0], np.eye(2)), pr)


def test_pxlap_value_branches():
    z = jet([0, 0], [0, 0], np.eye(2))
    v = pxlap_value(z, p_const(1.5))
    assert v.branch is Branch.SINGULAR and np.isnan(v.value)
    with pytest.raises(ValueError):
        pxlap_value(z, p_const(2.5))
    tiny = jet([0, 0], [1e-301, 0], np.eye(2))
    assert pxlap_value(tiny, p_const(1.5)).branch is Branch.SINGULAR
    assert pxlap_value(jet([0, 0], [1, 0], np.eye(2)), p_const(1.5)).branch is Branch.REGULAR


def test_matrix_A_examples():
    np.testing.assert_allclose(matrix_A(np.zeros(2), [0.3, -2], p_const(2.0)), np.eye(2))
    np.testing.assert_allclose(matrix_A(np.zeros(2), [1, 0], p_const(3.0)), np.diag([2.0, 1.0]))
    np.testing.assert_allclose(
        matrix_A(np.zeros(2), [0, 2], p_const(1.5)), np.diag([1.0, 0.5]) / np.sqrt(2), atol=1e-15
    )


def test_matrix_A_eigenstructure(rng):
    for _ in range(200):
        n = int(rng.integers(1, 4))
        p = p_const(float(rng.uniform(1.05, 5)), n)
        xi = rng.standard_normal(n) * 10 ** rng.uniform(-2, 2)
        A = matrix_A(np.zeros(n), xi, p)
        r = np.linalg.norm(xi)
        pv = p(np.zeros(n))
        expected = sorted([r ** (pv - 2)] * (n - 1) + [(pv - 1) * r ** (pv - 2)])
        np.testing.assert_allclose(np.linalg.eigvalsh(A), expected, rtol=1e-10)
        np.testing.assert_allclose(A @ xi, (pv - 1) * r ** (pv - 2) * xi, rtol=1e-10)


def test_scalar_B_examples():
    assert scalar_B(np.zeros(2), [3, 4], p_const(1.7)) == 0.0
    assert scalar_B(np.zeros(2), [0.6, 0.8], P_X1) == pytest.approx(0.0, abs=1e-16)
    assert scalar_B(np.zeros(2), [np.e, 0], P_X1) == pytest.approx(np.e)


def test_jet_form_examples():
    rng = np.random.default_rng(3)
    j = random_jet(rng)
    assert jet_form_F(j, p_const(2.0)) == pytest.approx(np.trace(j.X))
    assert jet_form_F(jet([1, 0], [1, 0], np.eye(2)), p_const(3.0)) == pytest.approx(3.0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_jet_form_equals_expanded_on_random_jets(n):
    rng = np.random.default_rng(n)
    p = make_exponent("affine", Domain.box([(-1, 1)] * n), p0=2.2, slope=0.5, direction=np.ones(n) / np.sqrt(n))
    for _ in range(1000):
        j = random_jet(rng, n)
        F, E = jet_form_F(j, p), pxlap_expanded(j, p)
        assert abs(F - E) <= 1e-10 * (1 + abs(F))


def test_sqrt_A_examples():
    assert sqrt_A_lambda_min(np.zeros(2), [0.3, 0.4], p_const(2.0)) == pytest.approx(1.0)
    assert sqrt_A_lambda_min(np.zeros(2), [1, 0], p_const(3.0)) == pytest.approx(1.0)
    assert sqrt_A_lambda_min(np.zeros(2), [4, 0], p_const(1.5)) == pytest.approx(np.sqrt(0.5) * 4**-0.25)


def test_sqrt_A_closed_form_matches_numerics(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 4))
        p = p_const(float(rng.uniform(1.01, 6)), n)
        xi = rng.standard_normal(n) * 10 ** rng.uniform(-2, 2)
        c = sqrt_A_lambda_min(np.zeros(n), xi, p)
        assert abs(c - sqrt_A_lambda_min_numeric(np.zeros(n), xi, p)) <= 1e-8 * c


def test_one_dimensional_sqrt_A_is_exact_not_the_min_factor():
    # in 1D, A is the scalar (p-1)|xi|^{p-2}
    p = p_const(3.0, 1)
    assert sqrt_A_lambda_min(np.zeros(1), [1.0], p) == pytest.approx(np.sqrt(2.0))


def test_sym_sqrt(rng):
    S = rng.standard_normal((3, 3))
    S = S @ S.T
    R = sym_sqrt(S)
    np.testing.assert_allclose(R @ R, S, atol=1e-12)
    with pytest.raises(ValueError):
        sym_sqrt(-np.eye(2))


def test_normalized_examples():
    X = np.diag([1.0, -1.0])
    z = jet([0, 0], [0, 0], X)
    v = normalized_pxlap(z, p_const(3.0))
    assert v.value == pytest.approx(1.0) and v.branch is Branch.ENVELOPE_LAMBDA_MAX
    assert normalized_pxlap(jet([0, 0], [1, 0], np.eye(2)), p_const(4.0)).value == pytest.approx(4.0)
    for xi in ([0, 0], [1, 2]):
        assert normalized_pxlap(jet([0, 0], xi, X * 3), p_const(2.0)).value == pytest.approx(0.0)


def test_normalized_branch_selection(rng):
    for _ in range(1000):
        pv = float(rng.uniform(1.1, 3.5))
        S = rng.standard_normal((2, 2))
        z = jet(rng.uniform(-1, 1, 2), [0, 0], (S + S.T) / 2)
        sub = normalized_pxlap(z, p_const(pv), side="sub")
        sup = normalized_pxlap(z, p_const(pv), side="super")
        if pv < 2:
            assert sub.branch is Branch.ENVELOPE_LAMBDA_MIN and sup.branch is Branch.ENVELOPE_LAMBDA_MAX
        else:
            assert sub.branch is Branch.ENVELOPE_LAMBDA_MAX and sup.branch is Branch.ENVELOPE_LAMBDA_MIN
        # the subsolution envelope is the larger of the two
        assert sub.value >= sup.value - 1e-12


def test_normalized_side_validated():
    with pytest.raises(ValueError):
        normalized_pxlap(jet([0, 0], [0, 0], np.eye(2)), p_const(3.0), side="both")


def test_infinity_lap_examples(rng):
    assert infinity_lap(jet([0, 0], [0.2, 5], np.eye(2))) == pytest.approx(1.0)
    assert infinity_lap(jet([0, 0], [1, 0], np.diag([2.0, -1.0]))) == pytest.approx(2.0)
    for _ in range(200):
        j = random_jet(rng, 3)
        w = np.linalg.eigvalsh(j.X)
        assert w[0] - 1e-12 <= infinity_lap(j) <= w[-1] + 1e-12


def test_mono_gap_examples():
    g = mono_gap(np.zeros(2), [1, 2], [1, 2], p_const(1.5))
    assert g.lhs == 0.0 and g.bound == 0.0
    g = mono_gap(np.zeros(2), [1, 0], [0, 1], p_const(2.0))
    assert g.lhs == pytest.approx(2.0) and g.bound == pytest.approx(2.0)
    assert mono_gap(np.zeros(2), [0, 0], [0, 0], p_const(1.5)).bound == 0.0


@given(
    st.floats(1.01, 6.0),
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2),
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2),
)
def test_mono_gap_property(pv, xi, eta):
    g = mono_gap(np.zeros(2), xi, eta, p_const(pv))
    assert g.holds
    if not np.allclose(xi, eta, rtol=0, atol=0):
        assert g.lhs > 0


def test_mono_gap_random_triples(rng):
    for _ in range(10**4):
        pv = float(rng.uniform(1.01, 6.0))
        xi, eta = rng.standard_normal((2, 2)) * 10 ** rng.uniform(-3, 3, (2, 1))
        g = mono_gap(np.zeros(2), xi, eta, p_const(pv))
        assert g.holds and g.lhs > 0


def _flux_divergence_error(p, phi_grad, x0, h):
    div = 0.0
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        div += (flux(x0 + e, phi_grad(x0 + e), p)[k] - flux(x0 - e, phi_grad(x0 - e), p)[k]) / (2 * h)
    return div


def test_flux_divergence_consistency_order():
    p = make_exponent("affine", Domain.box([(0.0, 1.0), (0.0, 1.0)]), p0=1.7, slope=0.6, direction=[0.8, -0.6])

    # phi = exp(x) sin(y) + x^2 y, nonvanishing gradient near x0
    def grad(x):
        return np.array([np.exp(x[0]) * np.sin(x[1]) + 2 * x[0] * x[1], np.exp(x[0]) * np.cos(x[1]) + x[0] ** 2])

    def hess(x):
        a = np.exp(x[0]) * np.sin(x[1]) + 2 * x[1]
        b = np.exp(x[0]) * np.cos(x[1]) + 2 * x[0]
        c = -np.exp(x[0]) * np.sin(x[1])
        return np.array([[a, b], [b, c]])

    x0 = np.array([0.3, 0.7])
    exact = pxlap_expanded(Jet2(x0, 0.0, grad(x0), hess(x0)), p)
    hs = np.array([0.04, 0.02, 0.01, 0.005])
    errs = np.array([abs(_flux_divergence_error(p, grad, x0, h) - exact) for h in hs])
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 1.9

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm, fractional_matrix_power, logm

from jumpsplit import fd_operators as fdo
from jumpsplit.grid import build_concentrated_grid, build_uniform_grid


def uniform(n, h=0.1, x0=0.0):
    return build_uniform_grid(x0, x0 + (n - 1) * h, n)


# ---------------------------------------------------------------------------
# Stencils
# ---------------------------------------------------------------------------


def test_first_order_forward_small():
    m = fdo.first_order(uniform(3, 0.5), "forward").dense()
    np.testing.assert_allclose(m, [[-2, 2, 0], [0, -2, 2], [0, 0, -2]])


def test_first_order_backward_mirrors_forward():
    g = uniform(6, 0.2)
    f = fdo.first_order(g, "forward").dense()
    b = fdo.first_order(g, "backward").dense()
    np.testing.assert_allclose(b, -f.T)


def test_second_order_one_sided_stencil():
    op = fdo.second_order_one_sided(uniform(6, 0.5), "forward")
    np.testing.assert_allclose(op.dense()[0, :3], [-3, 4, -1])
    assert op.boundary_rows == (4, 5)
    back = fdo.second_order_one_sided(uniform(6, 0.5), "backward").dense()
    np.testing.assert_allclose(back[5, 3:], [1, -4, 3])


def test_central_interior_rows():
    h = 0.25
    ac, ac2 = fdo.central_operators(uniform(7, h))
    np.testing.assert_allclose(ac.dense()[3, 2:5], [-1 / (2 * h), 0, 1 / (2 * h)])
    np.testing.assert_allclose(ac2.dense()[3, 2:5], [1 / h**2, -2 / h**2, 1 / h**2])


def test_central_second_is_product_of_one_sided():
    g = uniform(9, 0.3)
    _, ac2 = fdo.central_operators(g)
    prod = fdo.first_order(g, "forward").dense() @ fdo.first_order(g, "backward").dense()
    # Only the last row differs: it keeps the full second-difference weights.
    np.testing.assert_allclose(ac2.dense()[:-1], prod[:-1])
    np.testing.assert_allclose(ac2.dense()[-1, -2:], np.array([1, -2]) / 0.09)


@pytest.mark.parametrize("factory", ["first_f", "first_b", "second_f", "second_b", "ac", "ac2"])
def test_constant_is_annihilated_on_full_stencil_rows(factory):
    g = uniform(12, 0.1)
    op = {
        "first_f": lambda: fdo.first_order(g, "forward"),
        "first_b": lambda: fdo.first_order(g, "backward"),
        "second_f": lambda: fdo.second_order_one_sided(g, "forward"),
        "second_b": lambda: fdo.second_order_one_sided(g, "backward"),
        "ac": lambda: fdo.central_operators(g)[0],
        "ac2": lambda: fdo.central_operators(g)[1],
    }[factory]()
    out = op @ np.ones(g.n)
    np.testing.assert_allclose(out[op.interior_rows()], 0.0, atol=1e-10)


def test_first_order_on_linear_function():
    g = uniform(20, 0.05)
    op = fdo.first_order(g, "forward")
    np.testing.assert_allclose((op @ g.nodes)[op.interior_rows()], 1.0, rtol=1e-10)


def test_derivatives_of_quadratic():
    g = uniform(20, 0.05, x0=-0.4)
    x = g.nodes
    for direction in ("forward", "backward"):
        op = fdo.second_order_one_sided(g, direction)
        rows = op.interior_rows()
        np.testing.assert_allclose((op @ x**2)[rows], 2 * x[rows], atol=1e-10)
    _, ac2 = fdo.central_operators(g)
    np.testing.assert_allclose((ac2 @ x**2)[1:-1], 2.0, rtol=1e-9)


def _order(make, f, df, direction=None):
    errs = []
    for n in (41, 81, 161):
        g = build_uniform_grid(0.0, 1.0, n)
        op = make(g)
        rows = [i for i in op.interior_rows() if 0.25 <= g.nodes[i] <= 0.75]
        errs.append(np.abs((op @ f(g.nodes))[rows] - df(g.nodes[rows])).max())
    return math.log2(errs[-2] / errs[-1])


@pytest.mark.parametrize(
    "make, declared, second",
    [
        (lambda g: fdo.first_order(g, "forward"), 1, False),
        (lambda g: fdo.first_order(g, "backward"), 1, False),
        (lambda g: fdo.second_order_one_sided(g, "forward"), 2, False),
        (lambda g: fdo.second_order_one_sided(g, "backward"), 2, False),
        (lambda g: fdo.central_operators(g)[0], 2, False),
        (lambda g: fdo.central_operators(g)[1], 2, True),
    ],
)
def test_declared_order_on_sine(make, declared, second):
    df = (lambda x: -np.sin(x)) if second else np.cos
    assert abs(_order(make, np.sin, df) - declared) <= 0.3


def test_nonuniform_one_sided_exact_for_quadratics():
    g = build_concentrated_grid(-1.0, 1.0, 41, center=0.2)
    x = g.nodes
    for direction in ("forward", "backward"):
        op = fdo.second_order_one_sided(g, direction)
        rows = op.interior_rows()
        np.testing.assert_allclose((op @ (3 * x**2 - x))[rows], (6 * x - 1)[rows], atol=1e-8)
    ac, ac2 = fdo.central_operators(g)
    np.testing.assert_allclose((ac2 @ x**2)[1:-1], 2.0, rtol=1e-8)
    np.testing.assert_allclose((ac @ x)[1:-1], 1.0, rtol=1e-10)


def test_unknown_direction():
    with pytest.raises(ValueError):
        fdo.first_order(uniform(5), "sideways")


# ---------------------------------------------------------------------------
# Matrix exponential
# ---------------------------------------------------------------------------


def test_exp_of_zero():
    r = fdo.matrix_exponential(np.zeros((4, 4)), 3.0)
    np.testing.assert_array_equal(r.matrix, np.eye(4))


def test_exp_of_diagonal():
    r = fdo.matrix_exponential(np.diag([-1.0, -2.0]), 1.0)
    np.testing.assert_allclose(r.matrix, np.diag([math.exp(-1), math.exp(-2)]), rtol=1e-14)


def test_exp_of_nilpotent():
    m = np.array([[0.0, 3.0], [0.0, 0.0]])
    np.testing.assert_allclose(fdo.matrix_exponential(m, 0.7).matrix, np.eye(2) + 0.7 * m, rtol=1e-15)


def test_exp_matches_scipy_on_large_norm(rng):
    a = rng.normal(size=(30, 30)) * 3
    r = fdo.matrix_exponential(a, 1.0)
    ref = expm(a)
    assert np.abs(r.matrix - ref).max() <= 1e-10 * np.abs(ref).max()
    assert r.method_tag == "scaling-squaring"


def test_exp_toeplitz_series_path():
    g = uniform(60, 0.1)
    m = 2.0 * np.eye(60) - fdo.first_order(g, "forward").dense()
    power = fdo.fractional_power_triangular(m, -0.5).matrix - 2.0**-0.5 * np.eye(60)
    r = fdo.matrix_exponential(power, 0.3)
    assert r.method_tag == "toeplitz-series"
    ref = expm(0.3 * power)
    assert np.abs(r.matrix - ref).max() <= 1e-12 * np.abs(ref).max()


def test_exp_rejects_negative_time():
    with pytest.raises(ValueError):
        fdo.matrix_exponential(np.eye(2), -1.0)


def test_exp_reports_overflow():
    with pytest.raises(fdo.MatrixFunctionError):
        fdo.matrix_exponential(np.array([[800.0, 1.0], [1.0, 800.0]]), 2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.integers(0, 2**32 - 1))
def test_exp_semigroup(n, s, t, seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=(n, n))
    a -= (np.abs(np.linalg.eigvals(a).real).max() + 0.5) * np.eye(n)  # stable
    lhs = fdo.matrix_exponential(a, s + t).matrix
    rhs = fdo.matrix_exponential(a, s).matrix @ fdo.matrix_exponential(a, t).matrix
    assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(lhs).max())


# ---------------------------------------------------------------------------
# Fractional powers and logarithms
# ---------------------------------------------------------------------------


def test_power_of_identity():
    r = fdo.fractional_power_triangular(np.eye(5), 0.37)
    np.testing.assert_array_equal(r.matrix, np.eye(5))


def test_power_two_by_two():
    r = fdo.fractional_power_triangular(np.array([[2.0, -1.0], [0.0, 2.0]]), 0.5)
    np.testing.assert_allclose(r.matrix, [[math.sqrt(2), -0.5 / math.sqrt(2)], [0, math.sqrt(2)]], rtol=1e-15)
    assert r.method_tag == "nilpotent-series"


@pytest.mark.parametrize("alpha", [-0.5, 0.9, 1.98])
@pytest.mark.parametrize("n", [5, 20, 50])
def test_power_round_trip(alpha, n):
    g = uniform(n, 0.1)
    m = 2.0 * np.eye(n) - fdo.second_order_one_sided(g, "forward").dense()
    p = fdo.fractional_power_triangular(m, alpha).matrix
    back = fdo.fractional_power_triangular(p, 1.0 / alpha).matrix
    assert np.abs(back - m).max() <= 1e-10 * np.abs(m).max()


@pytest.mark.parametrize("alpha", [-1.3, -0.5, 0.4, 1.5, 1.98])
def test_power_matches_schur_pade(alpha):
    g = uniform(40, 0.05)
    m = 3.0 * np.eye(40) + fdo.first_order(g, "backward").dense()
    ours = fdo.fractional_power_triangular(m, alpha).matrix
    ref = np.real(fractional_matrix_power(m, alpha))
    assert np.abs(ours - ref).max() <= 1e-10 * np.abs(ref).max()


def test_power_fallback_for_non_toeplitz():
    g = build_concentrated_grid(-1.0, 1.0, 25, center=0.0)
    m = 2.0 * np.eye(25) - fdo.first_order(g, "forward").dense()
    r = fdo.fractional_power_triangular(m, 0.6)
    assert r.method_tag == "exp-log"
    ref = np.real(fractional_matrix_power(m, 0.6))
    assert np.abs(r.matrix - ref).max() <= 1e-9 * np.abs(ref).max()
    with pytest.raises(fdo.MatrixFunctionError):
        fdo.fractional_power_triangular(m, 0.6, allow_fallback=False)


def test_power_rejects_bad_input():
    with pytest.raises(fdo.MatrixFunctionError):
        fdo.fractional_power_triangular(np.array([[-1.0, 1.0], [0.0, -1.0]]), 0.5)
    with pytest.raises(ValueError):
        fdo.fractional_power_triangular(np.ones((3, 3)), 0.5)


def test_log_of_identity_and_diagonal():
    np.testing.assert_array_equal(fdo.matrix_log_triangular(np.eye(4)).matrix, np.zeros((4, 4)))
    np.testing.assert_allclose(fdo.matrix_log_triangular(math.e * np.eye(3)).matrix, np.eye(3), rtol=1e-15)


def test_log_round_trip():
    m = np.array([[2.0, -1.5, 0.0], [0.0, 2.0, -1.5], [0.0, 0.0, 2.0]])
    lg = fdo.matrix_log_triangular(m).matrix
    np.testing.assert_allclose(expm(lg), m, atol=1e-10)
    np.testing.assert_allclose(lg, np.real(logm(m)), atol=1e-12)


def test_series_helpers():
    f = np.array([1.0, -0.5])
    np.testing.assert_allclose(fdo.series_power(f, 2.0, 4), [1.0, -1.0, 0.25, 0.0], atol=1e-15)
    np.testing.assert_allclose(fdo.series_log(np.array([1.0, 1.0]), 4), [0.0, 1.0, -0.5, 1 / 3])
    np.testing.assert_allclose(fdo.series_exp(np.array([0.0, 1.0]), 5), [1, 1, 1 / 2, 1 / 6, 1 / 24])
    np.testing.assert_allclose(fdo.series_product(f, f, 3), [1.0, -1.0, 0.25])


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------


def test_structural_tridiagonal():
    rep = fdo.structural_checks(np.array([[-2.0, 1.0], [1.0, -2.0]]))
    assert rep.is_metzler and rep.is_negated_m_matrix
    assert rep.max_real_eig == pytest.approx(-1.0)
    assert rep.spectral_norm_exp == pytest.approx(math.exp(-1.0))


def test_structural_identity():
    rep = fdo.structural_checks(np.eye(3))
    assert rep.is_metzler and not rep.is_negated_m_matrix


def test_structural_detects_negative_offdiagonal():
    rep = fdo.structural_checks(np.array([[-1.0, -0.5], [0.2, -1.0]]))
    assert not rep.is_metzler and rep.min_offdiag == pytest.approx(-0.5)


def test_eventual_nonnegativity_of_one_sided_operator():
    h = 0.1
    g = uniform(15, h)
    m = fdo.second_order_one_sided(g, "forward").dense()
    k = fdo.eventual_nonnegativity_index(m, 3 / (2 * h) + 1e-6)
    assert k is not None and k <= g.n + 3
    rep = fdo.structural_checks(m, em_shift=3 / (2 * h) + 1e-6)
    assert rep.eventual_nonneg_power == k


def test_dump_and_load(tmp_path, rng):
    m = rng.normal(size=(4, 4))
    path = tmp_path / "m.txt"
    fdo.dump_matrix(m, path)
    assert path.read_text().splitlines()[0] == "4 rows 4 cols"
    np.testing.assert_array_equal(fdo.load_matrix(path), m)

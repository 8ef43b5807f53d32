import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cavmag.lm import FitError, FitProblem, numeric_jacobian, solve_least_squares
from cavmag.synth import GridSpec, grid_search_fit


def line(p, x):
    return p[0] * x + p[1]


def lorentz_dip(p, x):
    centre, width, depth = p[0], p[1], p[2]
    return 1 - depth * width**2 / ((x - centre) ** 2 + width**2)


def test_linear_exact():
    x = np.linspace(-3, 7, 25)
    y = 2.5 * x - 1.25
    r = solve_least_squares(FitProblem(line, x, y, init=[0.0, 0.0]))
    assert r.converged
    np.testing.assert_allclose(r.params, [2.5, -1.25], rtol=1e-10, atol=1e-10)
    assert r.residual_norm <= r.initial_residual_norm


def test_quadratic_bowl():
    # residuals (p - c) * w make a scaled quadratic bowl
    c = np.array([3.0, -2.0, 0.5])
    w = np.array([1.0, 10.0, 0.1])
    model = lambda p, x: np.asarray(p) * w  # noqa: E731
    r = solve_least_squares(FitProblem(model, np.arange(3.0), c * w, init=[10.0, 10.0, 10.0]))
    assert r.converged
    assert r.n_iter < 20
    np.testing.assert_allclose(r.params, c, rtol=1e-8)


def test_nonconvergence_flagged():
    x = np.linspace(0, 1, 30)
    y = np.exp(3 * x)
    r = solve_least_squares(FitProblem(lambda p, x: p[0] * np.exp(p[1] * x), x, y, init=[0.1, 0.1], max_iter=2))
    assert not r.converged
    assert r.n_iter == 2
    assert r.residual_norm <= r.initial_residual_norm


def test_descent_history():
    x = np.linspace(-5, 5, 201)
    y = lorentz_dip([0.4, 0.8, 0.7], x) + 0.01 * np.random.default_rng(1).normal(size=x.size)
    r = solve_least_squares(FitProblem(lorentz_dip, x, y, init=[-1.0, 2.0, 0.3],
                                       bounds=([-5, 0.01, 0], [5, 10, 1])))
    assert np.all(np.diff(r.cost_history) <= 0)
    assert r.cost_history[-1] == r.residual_norm
    assert np.all(r.sigma >= 0)


def test_singular_jacobian_flags_covariance():
    x = np.linspace(0, 1, 20)
    model = lambda p, x: (p[0] + p[1]) * x  # noqa: E731  only the sum is identifiable
    r = solve_least_squares(FitProblem(model, x, 2 * x, init=[0.3, 0.3]))
    assert r.covariance is None
    assert not r.covariance_available
    assert "covariance" in r.message
    assert (r.params[0] + r.params[1]) == pytest.approx(2.0, rel=1e-8)


def test_bounds_respected():
    x = np.linspace(0, 1, 20)
    r = solve_least_squares(FitProblem(line, x, 3 * x, init=[0.5, 0.0], bounds=([0, -1], [1, 1])))
    assert r.params[0] == 1.0
    assert "p0" in r.at_bounds
    assert r.sigma[0] == 0.0


@pytest.mark.parametrize("kwargs", [
    dict(init=[2.0, 0.0], bounds=([0, 0], [1, 1])),
    dict(init=[0.5, 0.5], weights=np.zeros(5)),
    dict(init=[0.5, 0.5], bounds=([1, 0], [0, 1])),
])
def test_problem_invariants(kwargs):
    with pytest.raises(ValueError):
        FitProblem(line, np.arange(5.0), np.arange(5.0), **kwargs)


def test_length_mismatch():
    with pytest.raises(ValueError):
        FitProblem(line, np.arange(5.0), np.arange(4.0), init=[0.0, 0.0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_at_init():
    with pytest.raises(FitError):
        solve_least_squares(FitProblem(lambda p, x: np.log(p[0]) * x, np.arange(1.0, 4), np.ones(3), init=[-1.0]))


def test_deterministic():
    x = np.linspace(-5, 5, 101)
    y = lorentz_dip([0.1, 1.0, 0.5], x) + 0.02 * np.sin(7 * x)
    a = solve_least_squares(FitProblem(lorentz_dip, x, y, init=[0.5, 0.5, 0.5]))
    b = solve_least_squares(FitProblem(lorentz_dip, x, y, init=[0.5, 0.5, 0.5]))
    assert np.array_equal(a.params, b.params) and a.cost_history == b.cost_history


# ---------------------------------------------------------------- Jacobian

def test_jacobian_linear_in_a():
    x = np.linspace(-4, 9, 50)
    J = numeric_jacobian(lambda p, x: p[0] * x, np.array([1.7]), x)
    np.testing.assert_allclose(J[:, 0], x, rtol=1e-9, atol=1e-12)


def test_jacobian_constant_model():
    J = numeric_jacobian(lambda p, x: np.full(x.shape, 4.0), np.array([1.0, 2.0]), np.arange(6.0))
    assert np.all(J == 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_jacobian_nonfinite():
    with pytest.raises(ValueError):
        numeric_jacobian(lambda p, x: np.sqrt(p[0]) * x, np.array([0.0]), np.arange(3.0))


def test_jacobian_step_floor():
    # a zero parameter still gets a usable step
    J = numeric_jacobian(lambda p, x: p[0] * x, np.array([0.0]), np.arange(3.0))
    np.testing.assert_allclose(J[:, 0], np.arange(3.0), rtol=1e-6)


@given(a=st.floats(0.1, 10), b=st.floats(-5, 5))
def test_jacobian_matches_analytic(a, b):
    x = np.linspace(-2, 2, 40)
    J = numeric_jacobian(lambda p, x: np.exp(p[0] * x) + p[1] * x**2, np.array([a, b]), x,
                         typical=[1.0, 1.0])
    np.testing.assert_allclose(J[:, 0], x * np.exp(a * x), rtol=1e-5, atol=1e-8 * np.exp(2 * a))
    np.testing.assert_allclose(J[:, 1], x**2, rtol=1e-6, atol=1e-8 * np.exp(2 * a))


# ---------------------------------------------------------------- oracle

def test_lorentzian_vs_grid_oracle():
    rng = np.random.default_rng(11)
    x = np.linspace(-5, 5, 161)
    truth = [0.3, 0.9, 0.6]
    y = lorentz_dip(truth, x) + 0.02 * rng.normal(size=x.size)
    grid = GridSpec([(-1.0, 1.0, 50), (0.4, 1.6, 50), (0.3, 0.9, 50)])
    best, cost = grid_search_fit(lorentz_dip, x, y, grid)
    r = solve_least_squares(FitProblem(lorentz_dip, x, y, init=[0.0, 1.0, 0.5],
                                       bounds=([-1, 0.4, 0.3], [1, 1.6, 0.9])))
    assert np.all(np.abs(r.params - best) <= grid.cell())
    assert r.residual_norm <= cost

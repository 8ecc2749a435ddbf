import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from dsmr_lab.errors import AnalysisError, MonteCarloError, ParameterError
from dsmr_lab.evolve import Trajectory, run_discrete
from dsmr_lab.noise import StepProcess, make_test_process, sample_bundle, weighted_Lp_data_norm
from dsmr_lab.norms import (
    SupTraceFunctional,
    convergence_error_p2_closed_form,
    dsmr_constant_p2_closed_form,
    dsmr_functional,
    gauss_legendre_offsets,
    mc_estimate,
    ratio_estimate,
    root_estimate,
    scheme_difference_p2_closed_form,
    second_moments_discrete,
    summarize,
)
from dsmr_lab.rational_calc import builtin_scheme, evaluate_real
from dsmr_lab.spectral import DiagonalOperator, make_dirichlet_laplacian, space_norm, trace_norm

SCHEMES = ["implicit_euler", "pade_0_2", "pade_1_2", "pade_1_3", "exponential_euler"]


def _traj(values, step=1.0):
    return Trajectory(np.asarray(values, dtype=float), step, "test")


def test_functional_examples():
    op = DiagonalOperator(np.array([1.0, 4.0]))
    assert dsmr_functional(op, _traj(np.zeros((3, 2))), 2) == 0.0
    assert dsmr_functional(op, _traj([[0.0, 0.0], [1.0, 0.0]]), 2) == pytest.approx(1.0)
    # tau t_{n+1}^alpha ||A Y_1||^p with tau = 1, t_2 = 2
    val = dsmr_functional(op, _traj([[0.0, 0.0], [0.0, 1.0]]), 4, alpha=0.5, power=True)
    assert val == pytest.approx(2**0.5 * 4.0**4)
    with pytest.raises(ParameterError):
        dsmr_functional(op, _traj(np.zeros((2, 2))), 2, alpha=-1.0)


def test_trailing_zero_states_do_not_change_functional():
    op = make_dirichlet_laplacian(3)
    Y = np.random.default_rng(0).standard_normal((4, 6, 3))
    Y[:, 0] = 0
    padded = np.concatenate([Y, np.zeros((4, 5, 3))], axis=1)
    assert np.allclose(dsmr_functional(op, _traj(Y, 0.1), 3), dsmr_functional(op, _traj(padded, 0.1), 3),
                       rtol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 50), st.sampled_from([-1.0, 1.0]), st.floats(2, 6), st.floats(0, 0.9))
def test_functional_homogeneous(mag, sign, p, alpha):
    c = sign * mag
    op = make_dirichlet_laplacian(3)
    Y = np.random.default_rng(1).standard_normal((2, 5, 3))
    a = dsmr_functional(op, _traj(c * Y, 0.2), p, alpha)
    assert np.allclose(a, abs(c) * dsmr_functional(op, _traj(Y, 0.2), p, alpha), rtol=1e-12, atol=1e-300)


def test_sup_trace_functionals():
    op = DiagonalOperator(np.array([1.0, 9.0]))
    zero = SupTraceFunctional(op, 4, 0.5)(_traj(np.zeros((2, 4, 2)), 0.25))
    assert not np.any(zero.plain) and not np.any(zero.weighted)
    Y = np.zeros((1, 3, 2))
    Y[0, 1] = [0.0, 2.0]
    Y[0, 2] = [0.5, 0.0]
    h = SupTraceFunctional(op, 2)(_traj(Y))
    assert h.plain[0] == pytest.approx(6.0) and h.weighted[0] == pytest.approx(6.0)
    res = SupTraceFunctional(op, 4, 0.5)(_traj(Y, 0.5))
    first = max(trace_norm(op, Y[0, n], 1 - 1.5 / 4, 4) for n in (1, 2))
    second = max((0.5 * n) ** (0.5 / 4) * trace_norm(op, Y[0, n], 0.75, 4) for n in (1, 2))
    assert res.plain[0] == pytest.approx(first, rel=1e-8)
    assert res.weighted[0] == pytest.approx(second, rel=1e-8)


@pytest.mark.parametrize("p,alpha", [(2, 0.5), (4, 1.0), (4, -0.1), (1.5, 0.0)])
def test_sup_trace_parameter_range(p, alpha):
    with pytest.raises(ParameterError):
        SupTraceFunctional(make_dirichlet_laplacian(2), p, alpha)


def test_mc_estimate_constant_and_chunks():
    est = mc_estimate(lambda a, b: np.full(b - a, 3.5), 200, workers=3)
    assert est.mean == 3.5 and est.stderr == 0.0 and est.n == 200
    with pytest.raises(ParameterError):
        mc_estimate(lambda a, b: np.ones(b - a), 8)


def test_mc_estimate_increment_variance():
    def f(a, b):
        return sample_bundle([1.0], 1, 1.0, seed=2, paths=np.arange(a, b)).dW[:, 0, 0] ** 2

    est = mc_estimate(f, 20000, workers=2)
    assert abs(est.mean - 1.0) <= 5 * est.stderr
    lo, hi = est.ci95
    assert lo < est.mean < hi
    assert mc_estimate(f, 20000, workers=1) == est


def test_non_finite_path_values_are_reported():
    v = np.ones(32)
    v[5] = np.nan
    with pytest.raises(MonteCarloError) as info:
        summarize(v)
    assert "path 5" in str(info.value)
    with pytest.raises(MonteCarloError):
        ratio_estimate(np.ones(32), np.where(np.arange(32) == 3, np.inf, 1.0))


def test_ratio_and_root_estimates():
    x = np.array([1.0, 3.0, 2.0, 2.0])
    r = ratio_estimate(x, np.full(4, 2.0))
    assert r.mean == 1.0 and r.stderr == pytest.approx(np.std(x, ddof=1) / 2 / 2)
    rt = root_estimate(r, 2)
    assert rt.mean == 1.0 and rt.stderr == pytest.approx(r.stderr / 2)
    with pytest.raises(AnalysisError):
        ratio_estimate(x, np.zeros(4))
    assert summarize(np.arange(64.0), p=4).median_of_means is not None


def test_closed_form_hand_value():
    op = DiagonalOperator(np.array([1.0]))
    g = StepProcess(np.ones((2, 1)), 1.0)
    ratio, num, den = dsmr_constant_p2_closed_form(op, builtin_scheme("implicit_euler"), g, parts=True)
    assert num**2 == pytest.approx(9 / 16, rel=1e-15)
    assert den == pytest.approx(math.sqrt(2))
    with pytest.raises(AnalysisError):
        dsmr_constant_p2_closed_form(op, builtin_scheme("implicit_euler"), StepProcess(np.zeros((2, 1)), 1.0))


def _moments_oracle(lam, r, c, tau):
    """E|Y_n|^2 = tau sum_{j<n} r^{2(n-j)} c_j^2 by direct double summation."""
    N = len(c)
    return np.array([tau * sum(r ** (2 * (n - j)) * c[j] ** 2 for j in range(n)) for n in range(N + 1)])


@pytest.mark.parametrize("name", SCHEMES)
@pytest.mark.parametrize("alpha", [0.0, 0.6])
def test_closed_form_against_direct_sums(name, alpha):
    lam = np.array([1.0, 7.0, 40.0])
    op = DiagonalOperator(lam)
    N, tau = 9, 0.1
    c = np.random.default_rng(2).uniform(-1, 1, (N, 3))
    g = StepProcess(c, tau)
    s = builtin_scheme(name)
    r = evaluate_real(s, tau * lam)
    S = np.stack([_moments_oracle(lam[k], r[k], c[:, k], tau) for k in range(3)], axis=1)
    assert np.allclose(second_moments_discrete(op, s, g), S, rtol=1e-13)
    t = tau * np.arange(1, N + 2)
    num2 = sum(tau * t[n] ** alpha * np.sum(lam**2 * S[n]) for n in range(N + 1))
    w = np.array([quad(lambda u: u**alpha, tau * n, tau * (n + 1))[0] for n in range(N)])
    den2 = float(np.sum(w * np.sum(lam * c**2, axis=1)))
    assert dsmr_constant_p2_closed_form(op, s, g, alpha=alpha) == pytest.approx(math.sqrt(num2 / den2), rel=1e-12)


def test_exponential_euler_large_steps_dominated_by_last_term():
    lam, tau, N = 200.0, 0.1, 8           # lam tau = 20
    op = DiagonalOperator(np.array([lam]))
    g = StepProcess(np.ones((N, 1)), tau)
    _, num, _ = dsmr_constant_p2_closed_form(op, builtin_scheme("exponential_euler"), g, parts=True)
    leading = N * tau * lam**2 * math.exp(-2 * lam * tau) * tau
    assert num**2 == pytest.approx(leading, rel=1e-12)


@pytest.mark.parametrize("pair", [("exponential_euler", "implicit_euler"), ("implicit_euler", "pade_1_2"),
                                  ("pade_1_2", "pade_1_3")])
def test_scheme_difference_against_direct_sums(pair):
    lam = np.array([0.5, 3.0, 60.0, 1e4])
    op = DiagonalOperator(lam)
    N, tau = 7, 1 / 8
    c = np.random.default_rng(3).uniform(-1, 1, (N, 4))
    g = StepProcess(c, tau)
    a = evaluate_real(builtin_scheme(pair[0]), tau * lam)
    b = evaluate_real(builtin_scheme(pair[1]), tau * lam)
    num2 = 0.0
    for n in range(N + 1):
        m2 = sum((a ** (n - j) - b ** (n - j)) ** 2 * c[j] ** 2 * tau for j in range(n)) if n else np.zeros(4)
        num2 += tau * np.sum(lam**2 * m2)
    den = weighted_Lp_data_norm(op, g, 2)
    got = scheme_difference_p2_closed_form(op, builtin_scheme(pair[0]), builtin_scheme(pair[1]), g)
    assert got == pytest.approx(math.sqrt(num2) / den, rel=1e-10)


def test_scheme_difference_identical_schemes_is_zero():
    op = make_dirichlet_laplacian(8)
    g = make_test_process("constant", op, 8, 1 / 8)
    s = builtin_scheme("pade_1_2")
    assert scheme_difference_p2_closed_form(op, s, s, g) == 0.0


def test_scheme_difference_matches_monte_carlo():
    op = make_dirichlet_laplacian(8)
    N, tau = 8, 1 / 8
    g = make_test_process("mode_decay", op, N, tau)
    ee, ie = builtin_scheme("exponential_euler"), builtin_scheme("implicit_euler")
    b = sample_bundle(op.eigenvalues, N, tau, seed=4, paths=np.arange(4096))
    diff = Trajectory(run_discrete(op, ee, g, b).values - run_discrete(op, ie, g, b).values, tau, "diff")
    num = dsmr_functional(op, diff, 2, power=True)
    est = root_estimate(ratio_estimate(num, np.full(num.size, weighted_Lp_data_norm(op, g, 2) ** 2)), 2)
    ref = scheme_difference_p2_closed_form(op, ee, ie, g)
    assert abs(est.mean - ref) <= 5 * est.stderr


def _convergence_oracle(lam, scheme, c, tau, N, beta, n_nodes=8):
    """Single mode, constant g = c: mild and discrete second moments from scipy quadrature."""
    r = float(evaluate_real(builtin_scheme(scheme), np.array([tau * lam]))[0])
    offs, wq = gauss_legendre_offsets(tau, n_nodes)
    total = 0.0
    for n in range(N):
        for s, wi in zip(offs[1:-1], wq):
            t = tau * n + s
            ey2 = quad(lambda u: math.exp(-2 * lam * (t - u)), 0, t)[0]
            eY2 = tau * sum(r ** (2 * (n - j)) for j in range(n))
            cross = sum(r ** (n - j) * quad(lambda u: math.exp(-lam * (t - u)), tau * j, tau * (j + 1))[0]
                        for j in range(n))
            total += wi * c**2 * (ey2 - 2 * cross + eY2)
    return math.sqrt(lam ** (2 * beta) * total)


@pytest.mark.parametrize("lam,scheme,beta", [(1.0, "implicit_euler", 0.0), (16.0, "implicit_euler", 0.4),
                                             (40.0, "pade_1_2", 0.5), (3.0, "exponential_euler", 0.25)])
def test_convergence_closed_form_against_quadrature(lam, scheme, beta):
    tau, N, c = 1 / 16, 6, 0.7
    op = DiagonalOperator(np.array([lam]))
    g = StepProcess(np.full((N, 1), c), tau)
    got = convergence_error_p2_closed_form(op, builtin_scheme(scheme), g, beta)
    assert got == pytest.approx(_convergence_oracle(lam, scheme, c, tau, N, beta), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.sampled_from(SCHEMES), st.floats(0, 0.9))
def test_closed_form_ratio_scale_invariant(c, name, alpha):
    op = make_dirichlet_laplacian(5)
    g = make_test_process("mode_decay", op, 6, 1 / 6)
    s = builtin_scheme(name)
    a = dsmr_constant_p2_closed_form(op, s, g.scaled(c), alpha=alpha)
    assert a == pytest.approx(dsmr_constant_p2_closed_form(op, s, g, alpha=alpha), rel=1e-12)


def test_closed_forms_require_hilbert_model():
    op = make_dirichlet_laplacian(3, q=4.0)
    g = make_test_process("constant", op, 3, 0.1)
    with pytest.raises(ParameterError):
        dsmr_constant_p2_closed_form(op, builtin_scheme("implicit_euler"), g)
    assert space_norm(op, np.zeros(3), 1.0) == 0.0

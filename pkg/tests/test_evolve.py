import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsmr_lab.errors import ParameterError, TruncationError, UnsupportedConfigurationError
from dsmr_lab.evolve import (
    KernelSequence,
    PowerKernel,
    discrete_convolution,
    increments,
    mild_at_nodes,
    run_discrete,
    run_mild_exact,
)
from dsmr_lab.noise import StepProcess, make_test_process, sample_bundle
from dsmr_lab.rational_calc import builtin_scheme
from dsmr_lab.spectral import DiagonalOperator, make_dirichlet_laplacian, scheme_multipliers

CATALOG = ["implicit_euler", "pade_0_2", "pade_1_2", "pade_0_3", "pade_1_3", "exponential_euler"]


def _constant(M, N, tau, value=1.0):
    return StepProcess(np.full((N, M), value), tau)


def test_zero_data_gives_zero_paths():
    op = make_dirichlet_laplacian(4)
    b = sample_bundle(op.eigenvalues, 5, 0.2, seed=1, paths=np.arange(8))
    g = _constant(4, 5, 0.2, 0.0)
    for name in CATALOG:
        assert not np.any(run_discrete(op, builtin_scheme(name), g, b).values)
    assert not np.any(run_mild_exact(op, g, b).values)


def test_hand_value_two_steps():
    # lambda = tau = 1, implicit Euler, g = 1: E|Y_1|^2 + E|Y_2|^2 = 1/4 + 5/16
    op = DiagonalOperator(np.array([1.0]))
    b = sample_bundle([1.0], 2, 1.0, seed=7, paths=np.arange(40000))
    Y = run_discrete(op, builtin_scheme("implicit_euler"), _constant(1, 2, 1.0), b).values[:, 1:, 0]
    s = np.sum(Y**2, axis=1)
    se = np.std(s, ddof=1) / math.sqrt(s.size)
    assert abs(np.mean(s) - 9 / 16) <= 5 * se


def test_first_step_is_multiplier_times_increment():
    op = make_dirichlet_laplacian(3)
    b = sample_bundle(op.eigenvalues, 3, 0.1, seed=2, paths=np.arange(4))
    s = builtin_scheme("pade_1_2")
    Y = run_discrete(op, s, _constant(3, 3, 0.1, 2.0), b).values
    m = scheme_multipliers(op, s, 0.1)
    assert np.array_equal(Y[:, 0], np.zeros((4, 3)))
    assert np.allclose(Y[:, 1], m * 2.0 * b.dW[:, 0])


def test_mild_solution_variance():
    lam, T, N = 2.0, 1.0, 8
    op = DiagonalOperator(np.array([lam]))
    b = sample_bundle([lam], N, T / N, seed=3, paths=np.arange(20000))
    y = run_mild_exact(op, _constant(1, N, T / N, 1.5), b).values[:, -1, 0]
    v = y**2
    se = np.std(v, ddof=1) / math.sqrt(v.size)
    assert abs(np.mean(v) - 1.5**2 * (1 - math.exp(-2 * lam * T)) / (2 * lam)) <= 5 * se


def test_mild_nodes_continue_to_grid():
    op = make_dirichlet_laplacian(3)
    tau = 0.25
    offs = [0.0, 0.05, 0.2, tau]
    b = sample_bundle(op.eigenvalues, 4, tau, seed=4, paths=np.arange(5), offsets=offs)
    g = make_test_process("mode_decay", op, 4, tau)
    grid = run_mild_exact(op, g, b)
    nodes = mild_at_nodes(op, g, b, grid)
    last = np.exp(-op.eigenvalues * (tau - 0.2)) * nodes[:, :, -1, :] + g.values * b.E_sub[:, :, -1, :]
    assert np.allclose(last, grid.values[:, 1:, :], rtol=1e-12, atol=1e-15)
    with pytest.raises(ParameterError):
        mild_at_nodes(op, g, sample_bundle(op.eigenvalues, 4, tau, seed=4, paths=np.arange(5)))


@pytest.mark.parametrize("name", CATALOG)
def test_power_kernel_matches_recursion(name):
    op = make_dirichlet_laplacian(6)
    tau, N = 1 / 16, 16
    b = sample_bundle(op.eigenvalues, N, tau, seed=5, paths=np.arange(6))
    g = StepProcess(np.random.default_rng(0).standard_normal((N, 6)), tau)
    s = builtin_scheme(name)
    rec = run_discrete(op, s, g, b).values
    conv = discrete_convolution(PowerKernel(scheme_multipliers(op, s, tau)), g, b).values
    assert np.array_equal(rec, conv)
    # explicit kernel m^0, m^1, ... through direct summation
    m = scheme_multipliers(op, s, tau)
    seq = KernelSequence(m[None, :] ** np.arange(N + 1)[:, None])
    assert np.allclose(discrete_convolution(seq, g, b).values, rec, rtol=1e-12, atol=1e-14)


def test_delta_kernel_returns_previous_increment():
    op = make_dirichlet_laplacian(2)
    b = sample_bundle(op.eigenvalues, 5, 0.2, seed=6, paths=np.arange(3))
    g = make_test_process("constant", op, 5, 0.2)
    Y = discrete_convolution(KernelSequence(np.array([0.0, 1.0])), g, b).values
    assert np.allclose(Y[:, 1:], increments(g, b))


def test_anticausal_brute_force():
    op = make_dirichlet_laplacian(2)
    N = 6
    b = sample_bundle(op.eigenvalues, N, 0.1, seed=8, paths=np.arange(3))
    g = make_test_process("constant", op, N, 0.1)
    k = np.array([0.5, -1.0, 0.25, 2.0])
    Y = discrete_convolution(KernelSequence(k), g, b, variant="anticausal").values
    inc = increments(g, b)
    ref = np.zeros_like(Y)
    for n in range(N):
        for j in range(n, min(N, n + k.size)):
            ref[:, n] += k[j - n] * inc[:, j]
    assert np.allclose(Y, ref, rtol=1e-13, atol=1e-15)
    zero = discrete_convolution(KernelSequence(np.zeros(3)), g, b, variant="anticausal").values
    assert not np.any(zero)


@pytest.mark.parametrize("variant", ["causal", "anticausal"])
def test_fft_branch_matches_direct(variant):
    op = DiagonalOperator(np.array([1.0, 3.0]))
    N = 300
    b = sample_bundle(op.eigenvalues, N, 1 / N, seed=9, paths=np.arange(2))
    g = make_test_process("constant", op, N, 1 / N)
    k = 0.99 ** np.arange(N + 1)
    fast = discrete_convolution(KernelSequence(k), g, b, variant=variant).values
    inc = increments(g, b)
    ref = np.zeros_like(fast)
    for n in range(N + 1):
        if variant == "causal":
            ref[:, n] = np.einsum("pjm,j->pm", inc[:, :n], k[n:0:-1])
        elif n < N:
            ref[:, n] = np.einsum("pjm,j->pm", inc[:, n:], k[: N - n])
    assert np.allclose(fast, ref, rtol=1e-10, atol=1e-12)


def test_truncated_kernel_with_large_tail_raises():
    op = make_dirichlet_laplacian(2)
    b = sample_bundle(op.eigenvalues, 5, 0.2, seed=1, paths=np.arange(2))
    g = make_test_process("constant", op, 5, 0.2)
    with pytest.raises(TruncationError):
        discrete_convolution(KernelSequence(np.ones(3), tail_bound=1e-3), g, b)
    discrete_convolution(KernelSequence(np.ones(3), tail_bound=1e-12), g, b)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.sampled_from(CATALOG), st.integers(0, 1000))
def test_linear_in_data(c, name, seed):
    op = make_dirichlet_laplacian(4)
    N, tau = 6, 1 / 6
    b = sample_bundle(op.eigenvalues, N, tau, seed=seed, paths=np.arange(3))
    rng = np.random.default_rng(seed)
    g1 = StepProcess(rng.standard_normal((N, 4)), tau)
    g2 = StepProcess(rng.standard_normal((N, 4)), tau)
    s = builtin_scheme(name)
    lhs = run_discrete(op, s, g1.scaled(c) + g2, b).values
    rhs = c * run_discrete(op, s, g1, b).values + run_discrete(op, s, g2, b).values
    # identical arithmetic up to rounding of the superposition
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_coarse_scheme_sums_fine_increments():
    op = make_dirichlet_laplacian(2)
    b = sample_bundle(op.eigenvalues, 8, 0.125, seed=3, paths=np.arange(2))
    g = make_test_process("constant", op, 8, 0.125)
    fine = increments(g, b)
    coarse = increments(g, b, 0.5)
    assert np.allclose(coarse, fine.reshape(2, 2, 4, 2).sum(axis=2))
    with pytest.raises(ParameterError):
        increments(g, b, 0.3)


def test_pathwise_coupling_small_steps():
    # strong error of implicit Euler at lambda tau = 1e-3 and 1e-4 on one Brownian path set
    lam, T = 1.0, 1.0
    op = DiagonalOperator(np.array([lam]))
    N = 10_000
    b = sample_bundle([lam], N, T / N, seed=10, paths=np.arange(400))
    g = _constant(1, N, T / N)
    y = run_mild_exact(op, g, b).values[:, :, 0]
    s = builtin_scheme("implicit_euler")
    errs = []
    for tau in (1e-3, 1e-4):
        Y = run_discrete(op, s, g, b, tau=tau).values[:, :, 0]
        K = int(round(tau * N))
        errs.append(math.sqrt(np.mean((Y - y[:, ::K]) ** 2)))
    # additive noise on a fixed mode: the pathwise error is of size lam tau
    assert errs[0] < lam * 1e-3 and errs[1] < lam * 1e-4
    assert 7.0 < errs[0] / errs[1] < 13.0


def test_non_diagonal_coupling_rejected_by_mild_solution():
    op = make_dirichlet_laplacian(2)
    b = sample_bundle(op.eigenvalues, 3, 0.1, seed=1, paths=np.arange(2))
    full = np.zeros((3, 2, 2))
    full[:, 0, 1] = 1.0
    g = StepProcess(full, 0.1, diagonal=False)
    with pytest.raises(UnsupportedConfigurationError):
        run_mild_exact(op, g, b)
    shifted = sample_bundle(op.eigenvalues, 3, 0.1, M_H=3, coupling=[1, 2], seed=1, paths=np.arange(2))
    with pytest.raises(UnsupportedConfigurationError):
        run_mild_exact(op, make_test_process("constant", op, 3, 0.1), shifted)
    # the discrete recursion accepts a full coupling matrix
    Y = run_discrete(op, builtin_scheme("implicit_euler"), g, b).values
    assert np.any(Y[:, :, 0]) and not np.any(Y[:, :, 1])

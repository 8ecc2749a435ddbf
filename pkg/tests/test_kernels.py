import cmath
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from dsmr_lab.errors import ParameterError
from dsmr_lab.kernels import (
    ASequence,
    KernelSpec,
    check_elementary_inequalities,
    check_psi_properties,
    convex_decomposition,
    convolve_increments,
    exp_basic_bound,
    kernel_values,
    ktau_sum,
    operator_norm_probe,
    phi_value,
    psi,
    verify_family_uniform,
)
from dsmr_lab.noise import make_test_process
from dsmr_lab.rational_calc import builtin_scheme
from dsmr_lab.spectral import make_dirichlet_laplacian


@pytest.mark.parametrize("m", [1, 10, 1000])
@pytest.mark.parametrize("tau", [2.0**-10, 1.0])
def test_reference_kernel_sum_is_one(m, tau):
    res = ktau_sum(KernelSpec("j_reference", tau, m=m))
    assert abs(res.sum - 1) <= 1e-12 and res.member
    # the same sum from the explicit values
    vals = kernel_values(KernelSpec("j_reference", tau, m=m), m + 2).real[1:]
    direct = ktau_sum(KernelSpec("custom", tau, values=tuple(vals), tail="finite"))
    assert abs(direct.sum - 1) <= 1e-12


def _basic_oracle(tau, lam, rho):
    """sqrt(tau)|lam|^{1/2}|1 - rho| Li_{-1/2}(|rho|) at 50 digits."""
    with mpmath.workdps(50):
        z = mpmath.mpc(tau) * mpmath.mpc(lam)
        r = mpmath.mpc(rho(z))
        return float(mpmath.sqrt(abs(z)) * abs(1 - r) * mpmath.polylog(-0.5, abs(r)))


BASIC_POINTS = [(1.0, 1.0), (2.0**-10, 100 * cmath.exp(0.5j)), (16.0, 1e-3), (2.0**-4, 3e3 * cmath.exp(-0.7j))]


@pytest.mark.parametrize("tau,lam", BASIC_POINTS)
def test_exp_basic_against_polylog(tau, lam):
    got = ktau_sum(KernelSpec("exp_basic", tau, lam)).sum
    assert got == pytest.approx(_basic_oracle(tau, lam, lambda z: mpmath.exp(-z)), rel=1e-9)


@pytest.mark.parametrize("tau,lam", BASIC_POINTS[:3])
def test_rational_basic_against_polylog(tau, lam):
    spec = KernelSpec("rational_basic", tau, lam, scheme=builtin_scheme("implicit_euler"))
    assert ktau_sum(spec).sum == pytest.approx(_basic_oracle(tau, lam, lambda z: 1 / (1 + z)), rel=1e-9)


def test_truncated_sum_tail_is_certified():
    spec = KernelSpec("exp_basic", 2.0**-6, 50.0)
    full = ktau_sum(spec).sum
    for trunc in (5, 40, 400):
        part = ktau_sum(spec, trunc=trunc)
        assert part.sum <= full + 1e-12 <= part.sum + part.tail_bound + 1e-12


@pytest.mark.parametrize("z", [1e-3, 0.3, 2.0, 5 * cmath.exp(0.7j)])
def test_phi_against_polylog(z):
    sigma = 0.25
    spec = KernelSpec("exp_phi", 1.0, z, sigma=sigma)
    with mpmath.workdps(40):
        zz = mpmath.mpc(z)
        ref = zz ** (-sigma) * (mpmath.polylog(1 + sigma, mpmath.exp(-zz)) - mpmath.zeta(1 + sigma))
    assert abs(phi_value(spec) - complex(ref)) <= 1e-10 * abs(complex(ref))
    basic = ktau_sum(KernelSpec("exp_basic", 1.0, z)).sum
    assert ktau_sum(spec).sum == pytest.approx(basic * abs(complex(ref)), rel=1e-9)


# Frozen from an independent 30-digit mpmath quadrature of the Laplace representation
# of sum_n sqrt(n) |k_{n+1} - k_n| (sigma = 1/4, a_j = j^{-5/4}, tau = 1, real lam).
VARIANT_REFERENCE = [
    ("exp_variant", 1e-6, 4.18701600267355),
    ("rational_variant", 1e-6, 4.187016545671192),
    ("exp_variant", 1e-3, 3.4632803295883834),
    ("rational_variant", 1e-3, 3.4638223977346443),
    ("exp_variant", 0.1, 1.7087171866191369),
    ("rational_variant", 0.1, 1.7565289045667372),
    ("exp_variant", 1.0, 0.411069815668487),
    ("rational_variant", 1.0, 0.651447355064838),
    ("exp_variant", 10.0, 6.581799070138373e-05),
    ("rational_variant", 10.0, 0.14094171875174893),
]


@pytest.mark.parametrize("family,lam,expected", VARIANT_REFERENCE)
def test_variant_sums_against_reference(family, lam, expected):
    scheme = builtin_scheme("implicit_euler") if family.startswith("rational") else None
    res = ktau_sum(KernelSpec(family, 1.0, lam, scheme=scheme))
    assert res.sum == pytest.approx(expected, rel=1e-12)
    assert res.tail_bound < 1e-11


@pytest.mark.parametrize("lam", [1.0, 10.0])
def test_variant_sum_matches_direct_summation(lam):
    spec = KernelSpec("exp_variant", 1.0, lam)
    k = kernel_values(spec, 4001)
    n = np.arange(1, 4000)
    direct = np.sum(np.sqrt(n) * np.abs(np.diff(k[1:])))
    part = ktau_sum(spec, trunc=3999)
    assert part.sum == pytest.approx(direct, rel=1e-10)
    # terms decay like n^{-3/2-sigma}: the full sum sits inside the certified tail
    full = ktau_sum(spec).sum
    assert direct < full <= direct + part.tail_bound


def test_exp_basic_uniform_below_analytic_bound():
    nu = math.pi / 4
    rep = verify_family_uniform("exp_basic", nu, tau_grid=2.0 ** np.arange(-8, 3, 2),
                                lambda_grid=np.logspace(-3, 3, 7) * np.exp(0.7j))
    assert rep.passes and rep.sup_fine <= exp_basic_bound(nu)


@pytest.mark.parametrize("nu", [0.3, 1.0, 1.5])
def test_elementary_inequalities(nu):
    rep = check_elementary_inequalities(nu, n_moduli=60, n_angles=60)
    assert rep.passes and rep.m_nu == pytest.approx(1 / math.cos(nu))


def test_convex_decomposition_reconstructs_kernel():
    tau = 0.125
    k = np.array([3.0, 2.5, 2.5, 1.0, 0.2])
    dec = convex_decomposition(k, tau)
    assert dec.max_error <= 1e-14
    assert dec.mass == pytest.approx(ktau_sum(KernelSpec("custom", tau, values=tuple(k), tail="finite")).sum)
    ref = convex_decomposition(kernel_values(KernelSpec("j_reference", tau, m=3), 4).real[1:], tau)
    assert ref.mass == pytest.approx(1.0) and np.allclose(ref.coefficients, [0, 0, 1])


@pytest.mark.parametrize("sigma", [0.1, 0.25, 0.4])
def test_psi_bounds(sigma):
    rep = check_psi_properties(sigma, j_max=2000)
    assert rep.passes


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10_000), st.floats(0, 1), st.floats(0.05, 0.45))
def test_psi_against_quadrature(j, s, sigma):
    ref = quad(lambda r: (1 - s - r) * (j + r) ** (-1 - sigma), 0, 1 - s, epsabs=0, epsrel=1e-13)[0]
    assert float(psi(j, s, sigma)) == pytest.approx(ref, rel=1e-9, abs=1e-300)


def test_zero_kernel_gives_zero():
    spec = KernelSpec("custom", 0.5, values=(0.0, 0.0, 0.0), tail="finite")
    assert ktau_sum(spec).sum == 0.0
    inc = np.random.default_rng(0).standard_normal((3, 5, 2))
    assert not np.any(convolve_increments(kernel_values(spec, 6), inc))


def test_custom_kernel_needs_tail_metadata():
    with pytest.raises(ParameterError):
        KernelSpec("custom", 0.5, values=(1.0, 0.5))
    geo = KernelSpec("custom", 0.5, values=(1.0, 0.5), tail=(0.5, 0.5))
    assert math.isfinite(ktau_sum(geo).tail_bound)


@pytest.mark.parametrize("kwargs", [dict(family="exp_basic", tau=1.0, lam=-1.0),
                                    dict(family="exp_basic", tau=0.0, lam=1.0),
                                    dict(family="rational_basic", tau=1.0, lam=1.0),
                                    dict(family="rational_basic", tau=1.0, lam=1.0,
                                         scheme=builtin_scheme("crank_nicolson")),
                                    dict(family="exp_phi", tau=1.0, lam=1.0, sigma=0.5),
                                    dict(family="j_reference", tau=1.0),
                                    dict(family="custom", tau=1.0, values=(1.0,), structure="other", tail="finite")])
def test_invalid_specs(kwargs):
    with pytest.raises(ParameterError):
        KernelSpec(**kwargs)


def test_coefficient_sequence_validation():
    with pytest.raises(ParameterError):
        ASequence("psi")
    with pytest.raises(ParameterError):
        ASequence("explicit")
    assert ASequence("psi", s=0.5).bound("phi", 0.25) == pytest.approx(0.125)


def test_reference_kernel_probe_closed_form():
    # constant g: sum_n tau E||Y_n||^2 = ||g||^2 tau sum_n min(n, m) / m
    tau, m, N = 2.0**-4, 4, 32
    op = make_dirichlet_laplacian(8)
    g = make_test_process("constant", op, N, tau)
    probe = operator_norm_probe(KernelSpec("j_reference", tau, m=m), [g], n_paths=4096, seed=3)
    ref = math.sqrt(sum(min(n, m) / m for n in range(N + 1)) / N)
    est = probe.per_probe[0]
    assert abs(est.mean - ref) <= 5 * est.stderr

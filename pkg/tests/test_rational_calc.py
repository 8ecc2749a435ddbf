import cmath
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dsmr_lab.errors import AnalysisError, DomainError, ParameterError
from dsmr_lab.rational_calc import (
    EXACT_ORDER,
    build_pade_subdiagonal,
    builtin_scheme,
    check_stability,
    detect_consistency_order,
    evaluate,
    partial_fractions,
    stability_angle,
    verify_decay_estimates,
)

CATALOG_DSMR = ["implicit_euler", "pade_0_2", "pade_1_2", "pade_0_3", "pade_1_3"]


def _sympy_pade(n, m):
    """Independent Padé coefficients of exp(-z) from sympy's series solver."""
    z = sp.symbols("z")
    a = sp.symbols(f"a0:{n + 1}")
    b = sp.symbols(f"b1:{m + 1}")
    P = sum(a[j] * z**j for j in range(n + 1))
    Q = 1 + sum(b[j - 1] * z**j for j in range(1, m + 1))
    ser = sp.series(sp.exp(-z) * Q - P, z, 0, n + m + 1).removeO()
    sol = sp.solve([ser.coeff(z, k) for k in range(n + m + 1)], list(a) + list(b), dict=True)[0]
    return [sol[x] for x in a], [sp.Integer(1)] + [sol[x] for x in b]


@pytest.mark.parametrize("n,m", [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (0, 3)])
def test_pade_coefficients_match_sympy(n, m):
    s = builtin_scheme(f"pade_{n}_{m}") if m > n + 2 else build_pade_subdiagonal(n, m)
    num, den = _sympy_pade(n, m)
    assert list(s.numerator) == [Fraction(int(c.p), int(c.q)) for c in num]
    assert list(s.denominator) == [Fraction(int(c.p), int(c.q)) for c in den]


def test_pade_examples():
    ie = build_pade_subdiagonal(0, 1)
    assert evaluate(ie, 1.0) == pytest.approx(0.5)
    p02 = build_pade_subdiagonal(0, 2)
    assert [float(c) for c in p02.denominator] == [1.0, 1.0, 0.5]
    assert evaluate(p02, 2.0) == pytest.approx(0.2)
    assert build_pade_subdiagonal(1, 2).declared_order == 3


@pytest.mark.parametrize("n,m", [(1, 1), (2, 5), (-1, 0)])
def test_pade_invalid_pairs(n, m):
    with pytest.raises(ParameterError):
        build_pade_subdiagonal(n, m)


def test_builtin_catalog_metadata():
    ie = builtin_scheme("implicit_euler")
    assert ie.declared_order == 1 and ie.declared_angle == pytest.approx(math.pi / 2)
    cn = builtin_scheme("crank_nicolson")
    z = sp.symbols("z")
    assert complex(cn.gamma_infinity) == complex(sp.limit((1 - z / 2) / (1 + z / 2), z, sp.oo))
    with pytest.raises(ParameterError):
        builtin_scheme("runge_kutta_4")


@pytest.mark.parametrize("name", ["implicit_euler", "crank_nicolson", "pade_0_2", "pade_1_2", "pade_0_3",
                                  "pade_1_3", "explicit_euler", "exponential_euler"])
def test_value_at_zero_is_one(name):
    assert evaluate(builtin_scheme(name), 0.0) == 1.0


def test_evaluation_at_pole_raises():
    with pytest.raises(DomainError):
        evaluate(builtin_scheme("implicit_euler"), -1.0)


@pytest.mark.parametrize("name,order", [("implicit_euler", 1), ("pade_0_2", 2), ("pade_1_2", 3), ("pade_0_3", 3),
                                        ("pade_1_3", 4), ("crank_nicolson", 2), ("explicit_euler", 1)])
def test_consistency_order(name, order):
    assert detect_consistency_order(builtin_scheme(name)) == order


@pytest.mark.parametrize("n", [0, 1, 2])
def test_order_formula_subdiagonal(n):
    assert detect_consistency_order(build_pade_subdiagonal(n, n + 1)) == 2 * n + 1
    assert detect_consistency_order(build_pade_subdiagonal(n, n + 2)) == 2 * n + 2


def test_exponential_order_is_exact():
    assert detect_consistency_order(builtin_scheme("exponential_euler")) == EXACT_ORDER


@pytest.mark.parametrize("name", ["implicit_euler", "pade_0_2", "pade_1_2", "pade_1_3"])
def test_stable_at_right_angle(name):
    assert check_stability(builtin_scheme(name), math.pi / 2).passes


def test_crank_nicolson_stable_but_noted():
    rep = check_stability(builtin_scheme("crank_nicolson"), math.pi / 2)
    assert rep.passes
    assert rep.r_infinity == -1
    assert any("r(inf)" in n for n in rep.notes)


def test_explicit_euler_fails():
    s = builtin_scheme("explicit_euler")
    assert abs(evaluate(s, 3.0)) == pytest.approx(2.0)
    assert not check_stability(s, math.pi / 2).passes


def _max_modulus_on_ray(theta_deg):
    """mpmath oracle: max |1/(1+z+z^2/2+z^3/6)| on the ray arg z = theta."""
    th = mpmath.radians(theta_deg)
    best = 0
    for rho in mpmath.linspace(0.01, 10, 4000):
        zz = rho * mpmath.expj(th)
        best = max(best, abs(1 / (1 + zz + zz**2 / 2 + zz**3 / 6)))
    return best


def test_pade_0_3_angle_against_oracle():
    s = builtin_scheme("pade_0_3")
    assert check_stability(s, math.radians(88)).passes
    assert not check_stability(s, math.pi / 2).passes
    assert _max_modulus_on_ray(88.2) <= 1 < _max_modulus_on_ray(88.3)
    assert 88.2 < math.degrees(stability_angle(s)) < 88.3


@pytest.mark.parametrize("name", ["implicit_euler", "pade_1_2", "pade_0_3"])
def test_stability_monotone_in_angle(name):
    s = builtin_scheme(name)
    top = stability_angle(s)
    for th in np.linspace(0.05, top, 6):
        assert check_stability(s, th, n_boundary=2000, n_interior=200).passes


@pytest.mark.parametrize("name", CATALOG_DSMR)
def test_strict_contraction_inside_sector(name):
    s = builtin_scheme(name)
    theta = s.declared_angle
    rho = np.logspace(-4, 4, 200)
    phis = np.linspace(-0.99 * theta, 0.99 * theta, 41)
    z = (rho[:, None] * np.exp(1j * phis)[None, :]).ravel()
    assert np.all(np.abs(evaluate(s, z)) < 1 - 1e-12)


def test_partial_fraction_examples():
    pf = partial_fractions(builtin_scheme("implicit_euler"))
    assert pf.gamma_infinity == 0
    assert [p for p, _ in pf.poles] == [pytest.approx(-1)]
    assert pf.residues[0][2] == pytest.approx(1)

    roots = sorted(np.roots([0.5, 1, 1]), key=lambda c: c.imag)
    pf = partial_fractions(builtin_scheme("pade_0_2"))
    got = sorted((p for p, _ in pf.poles), key=lambda c: c.imag)
    assert np.allclose(got, roots)

    pf = partial_fractions(builtin_scheme("crank_nicolson"))
    assert pf.gamma_infinity == pytest.approx(-1)
    assert pf.poles[0][0] == pytest.approx(-2)
    assert pf.residues[0][2] == pytest.approx(4)


@pytest.mark.parametrize("name", CATALOG_DSMR + ["crank_nicolson"])
def test_partial_fraction_reconstruction(name):
    s = builtin_scheme(name)
    pf = partial_fractions(s)
    z = np.concatenate([np.logspace(-3, 3, 50), 1j * np.logspace(-3, 3, 50), np.logspace(-3, 3, 50) * cmath.exp(0.7j)])
    ref = evaluate(s, z)
    assert np.max(np.abs(pf.reconstruct(z) - ref) / np.abs(ref)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-1.5, 1.5), st.sampled_from(CATALOG_DSMR))
def test_reconstruction_property(mod, arg, name):
    s = builtin_scheme(name)
    z = mod * cmath.exp(1j * arg * s.declared_angle / 1.5)
    ref = evaluate(s, z)
    assert abs(partial_fractions(s).reconstruct(z) - ref) <= 1e-10 * abs(ref)


def test_decay_estimates_implicit_euler_quarter_angle():
    reps = verify_decay_estimates(builtin_scheme("implicit_euler"), nu=math.pi / 4, n_max=128)
    assert len(reps) == 5 and all(r.passes and math.isfinite(r.fitted_C) for r in reps)


def test_decay_estimates_exponential_differences_vanish():
    reps = verify_decay_estimates(builtin_scheme("exponential_euler"), n_max=64)
    diff = [r for r in reps if r.inequality_id in ("diff_small_z", "frac_power_diff")]
    assert diff and all(r.fitted_C == 0 for r in diff)


def test_decay_estimates_reject_nonvanishing_infinity():
    with pytest.raises(ParameterError):
        verify_decay_estimates(builtin_scheme("crank_nicolson"))


def test_order_detection_rejects_inconsistent():
    from dsmr_lab.rational_calc import make_rational

    with pytest.raises(AnalysisError):
        detect_consistency_order(make_rational("bad", [2], [1, 1]))

"""Scheme functions r(z): construction, evaluation and quantitative analysis.

A time-stepping scheme for ``dY = -AY dt + ...`` is represented by the scalar
function ``r`` whose operator version ``r(tau A)`` is applied once per step.
Two kinds exist: the exponential (``r(z) = exp(-z)``, exponential Euler) and
rational functions ``P/Q`` with real coefficients.  Rational coefficients are
held as exact :class:`fractions.Fraction` values so that consistency orders
can be read off exact power series; evaluation converts to floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import mpmath
import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import minimize_scalar

from .errors import AnalysisError, DomainError, NumericError, ParameterError

EXPONENTIAL = "exponential"
RATIONAL = "rational"

#: Returned by :func:`detect_consistency_order` for the exponential function.
EXACT_ORDER = math.inf

_STABILITY_SLACK = 1e-12


@dataclass(frozen=True)
class SchemeFunction:
    """A scheme function ``r``.

    Coefficients are in ascending powers of ``z``.  ``poles`` holds
    ``(location, order)`` pairs where location is the pole ``z_j = -a_j``;
    ``residues`` holds ``(pole index, power k, gamma_jk)`` so that
    ``r(z) = gamma_infinity + sum gamma_jk (a_j + z)**(-k)``.
    """

    name: str
    kind: str
    numerator: tuple[Fraction, ...] = ()
    denominator: tuple[Fraction, ...] = ()
    poles: tuple[tuple[complex, int], ...] = ()
    residues: tuple[tuple[int, int, complex], ...] = ()
    gamma_infinity: complex = 0j
    declared_order: int | None = None
    declared_angle: float | None = None
    notes: tuple[str, ...] = ()
    _num_f: np.ndarray = field(default=None, repr=False, compare=False)
    _den_f: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, RATIONAL):
            raise ParameterError(f"unknown scheme kind {self.kind!r}")
        if self.kind == RATIONAL:
            object.__setattr__(self, "_num_f", np.array([float(c) for c in self.numerator]))
            object.__setattr__(self, "_den_f", np.array([float(c) for c in self.denominator]))

    @property
    def is_rational(self) -> bool:
        return self.kind == RATIONAL

    @property
    def is_proper(self) -> bool:
        if not self.is_rational:
            return True
        return len(self.numerator) <= len(self.denominator)

    @property
    def vanishes_at_infinity(self) -> bool:
        return self.kind == EXPONENTIAL or (self.is_proper and abs(self.gamma_infinity) == 0)

    @property
    def dsmr_admissible(self) -> bool:
        """Exponential, or rational with ``r(inf) = 0``; the class the studies accept."""
        return self.vanishes_at_infinity

    def __call__(self, z):
        return evaluate(self, z)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "kind": self.kind,
            "declared_order": self.declared_order,
            "declared_angle_rad": self.declared_angle,
            "declared_angle_deg": None if self.declared_angle is None else math.degrees(self.declared_angle),
            "dsmr_admissible": self.dsmr_admissible,
            "notes": list(self.notes),
        }
        if self.is_rational:
            out["numerator"] = [str(c) for c in self.numerator]
            out["denominator"] = [str(c) for c in self.denominator]
            out["gamma_infinity"] = _cjson(self.gamma_infinity)
        return out


@dataclass(frozen=True)
class PartialFractions:
    poles: tuple[tuple[complex, int], ...]
    residues: tuple[tuple[int, int, complex], ...]
    gamma_infinity: complex
    reconstruction_error: float

    def reconstruct(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.full(z.shape, self.gamma_infinity, dtype=complex)
        for j, k, coef in self.residues:
            a = -self.poles[j][0]
            out = out + coef * (a + z) ** (-k)
        return out

    def to_dict(self) -> dict:
        return {
            "gamma_infinity": _cjson(self.gamma_infinity),
            "poles": [{"location": _cjson(p), "a": _cjson(-p), "order": m} for p, m in self.poles],
            "residues": [{"pole": j, "power": k, "gamma": _cjson(c)} for j, k, c in self.residues],
            "reconstruction_error": self.reconstruction_error,
        }


@dataclass(frozen=True)
class StabilityReport:
    max_modulus_boundary: float
    max_modulus_interior_sample: float
    angle_tested: float
    grid_size: int
    passes: bool
    r_infinity: complex | None = None
    pole_in_sector: complex | None = None
    worst_point: complex | None = None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "angle_tested_rad": self.angle_tested,
            "angle_tested_deg": math.degrees(self.angle_tested),
            "max_modulus_boundary": self.max_modulus_boundary,
            "max_modulus_interior_sample": self.max_modulus_interior_sample,
            "grid_size": self.grid_size,
            "passes": self.passes,
            "r_infinity": None if self.r_infinity is None else _cjson(self.r_infinity),
            "pole_in_sector": None if self.pole_in_sector is None else _cjson(self.pole_in_sector),
            "worst_point": None if self.worst_point is None else _cjson(self.worst_point),
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class EstimateReport:
    inequality_id: str
    fitted_C: float
    fitted_c: float
    worst_ratio: float
    grid_spec: str
    coarse_C: float = math.nan
    refinement_ratio: float = 1.0
    passes: bool = True
    worst_point: tuple | None = None

    def to_dict(self) -> dict:
        return {
            "inequality_id": self.inequality_id,
            "fitted_C": self.fitted_C,
            "fitted_c": self.fitted_c,
            "worst_ratio": self.worst_ratio,
            "coarse_C": self.coarse_C,
            "refinement_ratio": self.refinement_ratio,
            "passes": self.passes,
            "grid_spec": self.grid_spec,
        }


def _cjson(z) -> list[float] | float:
    z = complex(z)
    if z.imag == 0:
        return z.real
    return [z.real, z.imag]


# ---------------------------------------------------------------------------
# construction


def _strip(coeffs: Sequence) -> tuple[Fraction, ...]:
    out = [Fraction(c) for c in coeffs]
    while len(out) > 1 and out[-1] == 0:
        out.pop()
    return tuple(out)


def make_rational(
    name: str,
    numerator: Sequence,
    denominator: Sequence,
    declared_order: int | None = None,
    declared_angle: float | None = None,
    notes: Sequence[str] = (),
) -> SchemeFunction:
    """Build a rational scheme; proper ones get their partial fractions attached."""
    num = _strip(numerator)
    den = _strip(denominator)
    if not den or den[-1] == 0:
        raise ParameterError("denominator must have a nonzero leading coefficient")
    if len(num) < len(den):
        gamma = 0j
    elif len(num) == len(den):
        gamma = complex(num[-1] / den[-1])
    else:
        gamma = complex(math.inf)
    scheme = SchemeFunction(
        name=name,
        kind=RATIONAL,
        numerator=num,
        denominator=den,
        gamma_infinity=gamma,
        declared_order=declared_order,
        declared_angle=declared_angle,
        notes=tuple(notes),
    )
    if scheme.is_proper and len(den) > 1:
        pf = partial_fractions(scheme)
        scheme = _with(scheme, poles=pf.poles, residues=pf.residues)
    return scheme


def _with(scheme: SchemeFunction, **changes) -> SchemeFunction:
    kwargs = {
        f: getattr(scheme, f)
        for f in ("name", "kind", "numerator", "denominator", "poles", "residues",
                  "gamma_infinity", "declared_order", "declared_angle", "notes")
    }
    kwargs.update(changes)
    return SchemeFunction(**kwargs)


def _pade_coefficients(n: int, m: int) -> tuple[list[Fraction], list[Fraction]]:
    f = math.factorial
    p = [Fraction(f(n + m - j) * f(n), f(n + m) * f(j) * f(n - j)) * (-1) ** j for j in range(n + 1)]
    q = [Fraction(f(n + m - j) * f(m), f(n + m) * f(j) * f(m - j)) for j in range(m + 1)]
    return p, q


def build_pade_subdiagonal(n: int, m: int) -> SchemeFunction:
    """Sub-diagonal Padé approximant ``P_n / Q_m`` of ``exp(-z)``, ``m in {n+1, n+2}``."""
    if not isinstance(n, (int, np.integer)) or not isinstance(m, (int, np.integer)):
        raise ParameterError("n and m must be integers")
    if n < 0 or n > 4:
        raise ParameterError(f"n must lie in 0..4, got {n}")
    if m not in (n + 1, n + 2):
        raise ParameterError(f"m must be n+1 or n+2, got (n, m) = ({n}, {m})")
    p, q = _pade_coefficients(n, m)
    order = 2 * n + 1 if m == n + 1 else 2 * n + 2
    return make_rational(f"pade_{n}_{m}", p, q, declared_order=order, declared_angle=math.pi / 2)


EXPONENTIAL_EULER = SchemeFunction(
    name="exponential_euler",
    kind=EXPONENTIAL,
    gamma_infinity=0j,
    declared_angle=math.pi / 2,
)

_PADE_03_ANGLE = math.radians(88.23)


def _catalog() -> dict[str, SchemeFunction]:
    p03, q03 = _pade_coefficients(0, 3)
    return {
        "exponential_euler": EXPONENTIAL_EULER,
        "implicit_euler": _with(build_pade_subdiagonal(0, 1), name="implicit_euler"),
        "crank_nicolson": make_rational(
            "crank_nicolson",
            [1, Fraction(-1, 2)],
            [1, Fraction(1, 2)],
            declared_order=2,
            declared_angle=math.pi / 2,
            notes=("r(inf) = -1: excluded from DSMR studies",),
        ),
        "pade_0_3": make_rational(
            "pade_0_3", p03, q03, declared_order=3, declared_angle=_PADE_03_ANGLE,
            notes=("A(theta)-stable only for theta <= 88.23 deg",),
        ),
        "explicit_euler": make_rational(
            "explicit_euler", [1, -1], [1], declared_order=1, declared_angle=None,
            notes=("not A-stable; negative fixture",),
        ),
    }


BUILTIN_NAMES = ("exponential_euler", "implicit_euler", "crank_nicolson", "pade_0_3", "explicit_euler")


def builtin_scheme(name: str) -> SchemeFunction:
    """Named catalog scheme.  Also accepts ``pade_<n>_<m>`` for sub-diagonal Padé."""
    cat = _catalog()
    if name in cat:
        return cat[name]
    if name.startswith("pade_"):
        try:
            _, n, m = name.split("_")
            return build_pade_subdiagonal(int(n), int(m))
        except ValueError:
            pass
    raise ParameterError(f"unknown scheme {name!r}")


def load_coefficient_file(path: str | Path, name: str | None = None) -> SchemeFunction:
    """Read ``num: c0 c1 ...`` / ``den: c0 c1 ...`` lines (ascending powers)."""
    num = den = None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        try:
            values = [Fraction(tok) for tok in rest.split()]
        except ValueError as exc:
            raise ParameterError(f"bad coefficient in {raw!r}") from exc
        key = key.strip().lower()
        if key == "num":
            num = values
        elif key == "den":
            den = values
        else:
            raise ParameterError(f"unknown key {key!r} in coefficient file")
    if not num or not den:
        raise ParameterError("coefficient file needs both 'num:' and 'den:' lines")
    return make_rational(name or Path(path).stem, num, den)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(scheme: SchemeFunction, z):
    """``r(z)`` for scalar or array ``z`` (Horner form for rational schemes)."""
    z_arr = np.asarray(z, dtype=complex)
    if scheme.kind == EXPONENTIAL:
        out = np.exp(-z_arr)
    else:
        den = npoly.polyval(z_arr, scheme._den_f)
        bad = den == 0
        for p, _ in scheme.poles:
            bad |= np.abs(z_arr - p) <= 1e-12 * max(1.0, abs(p))
        if np.any(bad):
            where = z_arr[bad].ravel()[0]
            raise DomainError(f"{scheme.name}: evaluation at a pole z = {where}")
        out = npoly.polyval(z_arr, scheme._num_f) / den
    if np.ndim(z) == 0:
        return complex(out)
    return out


def evaluate_real(scheme: SchemeFunction, x):
    """Real-valued ``r(x)`` for real ``x >= 0`` (the spectrum of a positive operator)."""
    x = np.asarray(x, dtype=float)
    if scheme.kind == EXPONENTIAL:
        return np.exp(-x)
    den = npoly.polyval(x, scheme._den_f)
    if np.any(den == 0):
        raise DomainError(f"{scheme.name}: evaluation at a pole on the real axis")
    return npoly.polyval(x, scheme._num_f) / den


def taylor_coefficients(scheme: SchemeFunction, count: int) -> list[Fraction]:
    """Exact Maclaurin coefficients of ``r`` by power-series long division."""
    if scheme.kind == EXPONENTIAL:
        return [Fraction((-1) ** k, math.factorial(k)) for k in range(count)]
    p, q = scheme.numerator, scheme.denominator
    if q[0] == 0:
        raise DomainError(f"{scheme.name}: pole at z = 0")
    c: list[Fraction] = []
    for k in range(count):
        acc = p[k] if k < len(p) else Fraction(0)
        for i in range(1, min(k, len(q) - 1) + 1):
            acc -= q[i] * c[k - i]
        c.append(acc / q[0])
    return c


def _exp_product_series(scheme: SchemeFunction, count: int) -> np.ndarray:
    """Float coefficients of ``r(z) e^z - 1``."""
    c = taylor_coefficients(scheme, count)
    e = [Fraction(1, math.factorial(k)) for k in range(count)]
    prod = [sum((c[i] * e[k - i] for i in range(k + 1)), Fraction(0)) for k in range(count)]
    prod[0] -= 1
    return np.array([float(v) for v in prod])


def _min_pole_modulus(scheme: SchemeFunction) -> float:
    if not scheme.poles:
        return math.inf
    return min(abs(p) for p, _ in scheme.poles)


def _series_log1p(w):
    small = np.abs(w) < 1e-4
    out = np.empty_like(w)
    ws = w[small]
    out[small] = ws - ws**2 / 2 + ws**3 / 3 - ws**4 / 4
    out[~small] = np.log1p(w[~small]) if np.isrealobj(w) else np.log(1 + w[~small])
    return out


def _series_expm1(u):
    small = np.abs(u) < 1e-4
    out = np.empty_like(u)
    us = u[small]
    out[small] = us + us**2 / 2 + us**3 / 6 + us**4 / 24
    out[~small] = np.exp(u[~small]) - 1
    return out


class _PowerDifference:
    """Accurate ``r(z)**n - exp(-n z)`` including the small-``|z|`` regime."""

    def __init__(self, scheme: SchemeFunction, terms: int = 60):
        self.scheme = scheme
        self.radius = 0.25 * min(1.0, _min_pole_modulus(scheme))
        if scheme.is_rational:
            self.coeffs = _exp_product_series(scheme, terms)

    def __call__(self, z: np.ndarray, n: np.ndarray) -> np.ndarray:
        z, n = np.broadcast_arrays(np.asarray(z, dtype=complex), np.asarray(n, dtype=float))
        if self.scheme.kind == EXPONENTIAL:
            return np.zeros(z.shape, dtype=complex)
        small = np.abs(z) <= self.radius
        out = np.empty(z.shape, dtype=complex)
        zs, ns = z[small], n[small]
        w = npoly.polyval(zs, self.coeffs)
        out[small] = np.exp(-ns * zs) * _series_expm1(ns * _series_log1p(w))
        zl, nl = z[~small], n[~small]
        out[~small] = evaluate(self.scheme, zl) ** nl - np.exp(-nl * zl)
        return out


# ---------------------------------------------------------------------------
# consistency order


def detect_consistency_order(scheme: SchemeFunction, exponents=range(2, 7), tol: float = 0.05):
    """Consistency order ``l`` with ``|r(z) - e^{-z}| ~ C |z|**(l+1)``.

    Fitted as the log-log slope over ``z = 10**-k`` (evaluated at 50 digits)
    and cross-checked against the exact series difference.  Returns
    :data:`EXACT_ORDER` for the exponential function.
    """
    if scheme.kind == EXPONENTIAL:
        return EXACT_ORDER
    if not scheme.is_rational:
        raise ParameterError("order detection needs a rational scheme")
    xs, ys = [], []
    with mpmath.workdps(50):
        num = [mpmath.mpf(c.numerator) / c.denominator for c in scheme.numerator]
        den = [mpmath.mpf(c.numerator) / c.denominator for c in scheme.denominator]
        for k in exponents:
            z = mpmath.mpf(10) ** (-k)
            r = mpmath.polyval(num[::-1], z) / mpmath.polyval(den[::-1], z)
            diff = abs(r - mpmath.exp(-z))
            if diff == 0:
                raise AnalysisError(f"{scheme.name}: r(z) == exp(-z) at z = 1e-{k}")
            xs.append(float(mpmath.log(z)))
            ys.append(float(mpmath.log(diff)))
    slope = float(np.polyfit(xs, ys, 1)[0])
    nearest = round(slope)
    if abs(slope - nearest) > tol:
        raise AnalysisError(f"{scheme.name}: log-log slope {slope:.4f} is not within {tol} of an integer")
    order = nearest - 1
    if order < 0:
        raise AnalysisError(f"{scheme.name}: r(0) != 1 (slope {slope:.4f})")
    # exact cross-check: first nonvanishing coefficient of r(z) - exp(-z)
    c = taylor_coefficients(scheme, order + 2)
    e = taylor_coefficients(EXPONENTIAL_EULER, order + 2)
    d = [float(a - b) for a, b in zip(c, e)]
    first = next((k for k, v in enumerate(d) if abs(v) > 1e-12), None)
    if first != order + 1:
        raise AnalysisError(
            f"{scheme.name}: slope gives order {order} but series difference starts at power {first}"
        )
    return order


# ---------------------------------------------------------------------------
# stability


def _sector_pole(scheme: SchemeFunction, theta: float) -> complex | None:
    for p, _ in scheme.poles:
        if p == 0 or abs(np.angle(p)) <= theta + 1e-12:
            return p
    return None


def check_stability(
    scheme: SchemeFunction,
    theta: float,
    n_boundary: int = 10_000,
    n_interior: int = 1_000,
    rho_range: tuple[float, float] = (1e-6, 1e6),
) -> StabilityReport:
    """Sample ``|r|`` on the sector ``|arg z| <= theta``.

    Rays ``arg z = +-theta`` carry ``n_boundary`` log-spaced moduli each; the
    interior sample is a modulus x angle lattice of ``n_interior`` points.
    Maximum modulus reduces the claim to the boundary once no pole lies in the
    closed sector and ``|r(inf)| <= 1``.
    """
    if not 0 < theta <= math.pi / 2 + 1e-15:
        raise ParameterError("theta must lie in (0, pi/2]")
    notes = list(scheme.notes)
    r_inf = scheme.gamma_infinity if scheme.is_proper else complex(math.inf)
    pole = _sector_pole(scheme, theta) if scheme.is_rational else None
    if pole is not None:
        return StabilityReport(math.inf, math.inf, theta, 0, False, r_inf, pole, pole,
                               tuple(notes + [f"pole {pole} lies in the closed sector"]))
    lo, hi = np.log10(rho_range[0]), np.log10(rho_range[1])
    rho = np.logspace(lo, hi, n_boundary)
    boundary = np.concatenate([rho * np.exp(1j * theta), rho * np.exp(-1j * theta)])
    n_ang = max(1, int(round(math.sqrt(n_interior / 2))))
    n_mod = max(1, n_interior // n_ang)
    phis = theta * (-1 + (2 * np.arange(n_ang) + 1) / n_ang)
    interior = (np.logspace(lo, hi, n_mod)[:, None] * np.exp(1j * phis)[None, :]).ravel()
    bvals = np.abs(evaluate(scheme, boundary))
    ivals = np.abs(evaluate(scheme, interior))
    mb, mi = float(bvals.max()), float(ivals.max())
    worst = boundary[bvals.argmax()] if mb >= mi else interior[ivals.argmax()]
    passes = max(mb, mi, abs(r_inf)) <= 1 + _STABILITY_SLACK
    if scheme.is_proper and r_inf != 0:
        notes.append(f"r(inf) = {_cjson(r_inf)} != 0")
    if not passes:
        notes.append(f"|r| = {max(mb, mi):.6g} > 1 at z = {complex(worst):.6g}")
    return StabilityReport(mb, mi, theta, 2 * n_boundary + interior.size, bool(passes),
                           r_inf, None, complex(worst), tuple(notes))


def stability_angle(scheme: SchemeFunction, n_boundary: int = 4000, iterations: int = 40) -> float:
    """Largest ``theta <= pi/2`` for which :func:`check_stability` passes (bisection)."""
    def ok(th):
        return check_stability(scheme, th, n_boundary=n_boundary, n_interior=64).passes

    if ok(math.pi / 2):
        return math.pi / 2
    lo, hi = 0.0, math.pi / 2
    if not ok(1e-6):
        return 0.0
    lo = 1e-6
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


# ---------------------------------------------------------------------------
# partial fractions


def _polish(coeffs_desc: np.ndarray, z0: complex, steps: int = 6) -> complex:
    d = np.polyder(coeffs_desc)
    z = complex(z0)
    for _ in range(steps):
        fd = np.polyval(d, z)
        if fd == 0:
            break
        step = np.polyval(coeffs_desc, z) / fd
        z -= step
        if abs(step) <= 1e-16 * max(1.0, abs(z)):
            break
    return z


def _cluster(roots: np.ndarray, tol: float = 1e-6) -> list[tuple[complex, int]]:
    remaining = list(roots)
    out = []
    while remaining:
        r0 = remaining.pop(0)
        group = [r0]
        keep = []
        for r in remaining:
            (group if abs(r - r0) <= tol * max(1.0, abs(r0)) else keep).append(r)
        remaining = keep
        out.append((complex(np.mean(group)), len(group)))
    return out


def partial_fractions(scheme: SchemeFunction, n_check: int = 100) -> PartialFractions:
    """Decompose ``r = gamma + sum_jk gamma_jk (a_j + z)^-k`` (poles at ``z = -a_j``).

    Poles come from companion-matrix eigenvalues with Newton polishing; the
    coefficients of each pole from a Laurent expansion.  The result is checked
    by reconstruction on ``n_check`` points away from the poles.
    """
    if not scheme.is_rational:
        raise ParameterError("partial fractions need a rational scheme")
    if not scheme.is_proper:
        raise ParameterError(f"{scheme.name}: deg(numerator) > deg(denominator)")
    num, den = scheme._num_f, scheme._den_f
    gamma = scheme.gamma_infinity
    if len(den) == 1:
        return PartialFractions((), (), gamma, 0.0)
    den_desc = den[::-1]
    raw = np.roots(den_desc)
    if not np.all(np.isfinite(raw)):
        raise NumericError(f"{scheme.name}: root finding failed")
    polished = np.array([_polish(den_desc, r) for r in raw])
    poles = _cluster(polished)
    lead = den[-1]
    residues = []
    for j, (z0, mult) in enumerate(poles):
        # h(u) = N(z0+u) / (lead * prod_{i != j} (u + z0 - z_i)^{m_i}); need h_0..h_{mult-1}
        n_shift = _shift(num, z0)
        d_shift = np.array([lead], dtype=complex)
        for i, (zi, mi) in enumerate(poles):
            if i != j:
                for _ in range(mi):
                    d_shift = npoly.polymul(d_shift, np.array([z0 - zi, 1.0]))
        h = _series_div(n_shift, d_shift, mult)
        for k in range(1, mult + 1):
            residues.append((j, k, complex(h[mult - k])))
    pf = PartialFractions(tuple(poles), tuple(residues), gamma, 0.0)
    err = _reconstruction_error(scheme, pf, n_check)
    if not err <= 1e-10:
        raise NumericError(f"{scheme.name}: partial fraction reconstruction error {err:.3e}")
    return PartialFractions(pf.poles, pf.residues, gamma, err)


def _shift(coeffs: np.ndarray, z0: complex) -> np.ndarray:
    """Coefficients of ``p(z0 + u)`` in powers of ``u``."""
    out = np.zeros(len(coeffs), dtype=complex)
    for k in range(len(coeffs)):
        out[k] = npoly.polyval(z0, npoly.polyder(coeffs, k)) / math.factorial(k) if k else npoly.polyval(z0, coeffs)
    return out


def _series_div(a: np.ndarray, b: np.ndarray, count: int) -> np.ndarray:
    c = np.zeros(count, dtype=complex)
    for k in range(count):
        acc = a[k] if k < len(a) else 0
        for i in range(1, min(k, len(b) - 1) + 1):
            acc -= b[i] * c[k - i]
        c[k] = acc / b[0]
    return c


def _reconstruction_error(scheme: SchemeFunction, pf: PartialFractions, n: int) -> float:
    rho = np.logspace(-2, 2, n)
    phi = np.linspace(-0.9 * math.pi, 0.9 * math.pi, n)
    z = rho * np.exp(1j * phi)
    scale = max([1.0] + [abs(p) for p, _ in pf.poles])
    keep = np.ones(n, dtype=bool)
    for p, _ in pf.poles:
        keep &= np.abs(z - p) > 1e-3 * scale
    z = z[keep]
    ref = evaluate(scheme, z)
    rec = pf.reconstruct(z)
    denom = np.maximum(np.abs(ref), 1e-300)
    return float(np.max(np.abs(rec - ref) / denom))


# ---------------------------------------------------------------------------
# decay estimates


INEQUALITIES = ("diff_small_z", "growth_small_z", "decay_large_z", "frac_power_diff", "frac_power_scheme")


@dataclass(frozen=True)
class DecayGrid:
    """Sampling of the sector ``Sigma_nu`` and of step counts ``n``.

    ``every_step`` samples all ``n`` in ``1..n_max``; otherwise ``n_dense``
    leading integers plus ``n_log`` geometrically spaced values are used.
    """

    n_moduli: int = 200
    n_max: int = 512
    every_step: bool = True
    n_dense: int = 32
    n_log: int = 24
    alphas_diff: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    alphas_scheme: tuple[float, ...] = (0.0, 0.5, 1.0)

    def steps(self) -> np.ndarray:
        if self.every_step:
            return np.arange(1, self.n_max + 1)
        dense = np.arange(1, min(self.n_dense, self.n_max) + 1)
        logs = np.round(np.geomspace(max(self.n_dense, 1), self.n_max, self.n_log)).astype(int)
        return np.unique(np.concatenate([dense, logs]))

    def coarser(self) -> "DecayGrid":
        """Same domain, half the moduli and log-spaced step counts."""
        return replace(self, n_moduli=max(8, self.n_moduli // 2), every_step=False)

    def describe(self, nu: float) -> str:
        return (f"rays arg z in {{0, +-{nu:.6f}}}; {self.n_moduli} log-spaced moduli per ray on "
                f"[1e-6, 1] and [1, 1e6]; n in 1..{self.n_max} ({self.steps().size} values)")


def _rays(nu: float, lo: float, hi: float, count: int) -> np.ndarray:
    # real coefficients: the -nu ray is the conjugate of the +nu ray
    rho = np.logspace(lo, hi, count)
    return np.concatenate([rho, rho * np.exp(1j * nu)])


class _DecayProblem:
    def __init__(self, scheme: SchemeFunction, nu: float, grid: DecayGrid, order: int):
        self.scheme, self.nu, self.grid, self.order = scheme, nu, grid, order
        n = grid.steps().astype(float)
        self.n = n
        diff = _PowerDifference(scheme)
        z_small = _rays(nu, -6, 0, grid.n_moduli)
        z_large = _rays(nu, 0, 6, grid.n_moduli)
        self.z_small, self.z_large = z_small, z_large
        zs, ns = np.meshgrid(z_small, n, indexing="ij")
        zl, nl = np.meshgrid(z_large, n, indexing="ij")
        self.ns, self.nl = ns, nl
        self.abs_zs, self.abs_zl = np.abs(zs), np.abs(zl)
        self.log_diff_small = _safe_log(np.abs(diff(zs, ns)))
        self.log_r_small = ns * _safe_log(np.abs(evaluate(scheme, z_small)))[:, None]
        self.log_r_large = nl * _safe_log(np.abs(evaluate(scheme, z_large)))[:, None]
        z_all = np.concatenate([z_small, z_large[1:]])
        za, na = np.meshgrid(z_all, n, indexing="ij")
        self.z_all, self.na = za, na
        self.abs_diff_all = np.abs(diff(za, na))
        self.abs_r_all_n = np.exp(na * _safe_log(np.abs(evaluate(scheme, z_all)))[:, None])

    def log_ratio(self, which: str, c: float) -> np.ndarray:
        if which == "diff_small_z":
            return (self.log_diff_small + c * self.ns * self.abs_zs
                    - np.log(self.ns) - (self.order + 1) * np.log(self.abs_zs))
        if which == "growth_small_z":
            return self.log_r_small + c * self.ns * self.abs_zs
        if which == "decay_large_z":
            return self.log_r_large + np.log(self.abs_zl) + c * self.nl
        raise KeyError(which)

    def sup(self, which: str, c: float = 0.0) -> tuple[float, tuple]:
        if which in ("frac_power_diff", "frac_power_scheme"):
            return self._scalar_bound(which)
        lr = self.log_ratio(which, c)
        idx = np.unravel_index(np.argmax(lr), lr.shape)
        zgrid = self.z_small if which != "decay_large_z" else self.z_large
        return float(np.exp(lr[idx])), (complex(zgrid[idx[0]]), int(self.n[idx[1]]))

    def _scalar_bound(self, which: str) -> tuple[float, tuple]:
        best, arg = -math.inf, None
        absz = np.abs(self.z_all)
        if which == "frac_power_diff":
            alphas, base, extra = self.grid.alphas_diff, self.abs_diff_all, self.order
        else:
            alphas, base, extra = self.grid.alphas_scheme, self.abs_r_all_n, 0
        for a in alphas:
            val = absz**a * base * self.na ** (extra + a)
            idx = np.unravel_index(np.argmax(val), val.shape)
            if val[idx] > best:
                best, arg = float(val[idx]), (complex(self.z_all[idx]), int(self.na[idx]), a)
        return best, arg


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def verify_decay_estimates(
    scheme: SchemeFunction,
    nu: float | None = None,
    n_max: int = 512,
    grid: DecayGrid | None = None,
    backoff: float = 0.9,
    max_refinement_ratio: float = 1.2,
) -> list[EstimateReport]:
    """Fit ``(C, c)`` for the small/large ``|z|`` power estimates of ``r``.

    The decay rate ``c`` is picked by a bounded golden-section/Brent search on
    ``(0, cos nu]`` minimising ``C(c) / c**k`` (``k = l+1`` for the difference,
    ``1`` otherwise) and then backed off by ``backoff``; ``C`` is the sup of
    the ratio on the fine grid.  A report passes when ``C`` is finite and the
    fine/coarse ratio stays below ``max_refinement_ratio``.
    """
    if scheme.is_rational and not scheme.vanishes_at_infinity:
        raise ParameterError(f"{scheme.name}: decay estimates need r(inf) = 0")
    if n_max < 32:
        raise ParameterError("n_max must be at least 32")
    theta = scheme.declared_angle if scheme.declared_angle is not None else math.pi / 2
    if nu is None:
        nu = theta - math.pi / 36
    if not 0 < nu < theta:
        raise ParameterError(f"nu must lie in (0, {theta}), got {nu}")
    if grid is None:
        grid = DecayGrid(n_max=n_max)
    order = scheme.declared_order if scheme.kind == EXPONENTIAL else detect_consistency_order(scheme)
    order = 1 if order is None or order == EXACT_ORDER else int(order)
    fine = _DecayProblem(scheme, nu, grid, order)
    coarse = _DecayProblem(scheme, nu, grid.coarser(), order)
    cmax = math.cos(nu)
    reports = []
    for which in INEQUALITIES:
        if which in ("frac_power_diff", "frac_power_scheme"):
            c_fit = math.nan
            C_f, worst = fine.sup(which)
            C_c, _ = coarse.sup(which)
        else:
            k = order + 1 if which == "diff_small_z" else 1

            def objective(logc):
                c = math.exp(logc)
                val, _ = fine.sup(which, c)
                return (math.log(val) if val > 0 else -700.0) - k * logc

            res = minimize_scalar(objective, bounds=(math.log(1e-3 * cmax), math.log(cmax)),
                                  method="bounded", options={"xatol": 1e-4})
            c_fit = backoff * math.exp(res.x)
            C_f, worst = fine.sup(which, c_fit)
            C_c, _ = coarse.sup(which, c_fit)
        if not math.isfinite(C_f):
            raise AnalysisError(f"{scheme.name}: no finite (C, c) bounds {which} on the grid")
        ratio = C_f / C_c if C_c > 0 else (1.0 if C_f == 0 else math.inf)
        reports.append(EstimateReport(
            inequality_id=which,
            fitted_C=C_f,
            fitted_c=c_fit,
            worst_ratio=C_f,
            grid_spec=grid.describe(nu),
            coarse_C=C_c,
            refinement_ratio=ratio,
            passes=bool(math.isfinite(C_f) and ratio < max_refinement_ratio),
            worst_point=worst,
        ))
    return reports

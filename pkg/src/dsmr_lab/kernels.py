"""Convolution kernels of the class ``K_tau`` and their uniform bounds.

A sequence ``k = (k_n)_{n >= 1}`` with ``k_n -> 0`` lies in ``K_tau`` when

    sum_{n >= 1} sqrt(n tau) |k_{n+1} - k_n| <= 1.

The module builds the scalar kernels that arise from one-step schemes
(``rho = exp(-z)`` or ``rho = r(z)`` with ``z = tau lam``), evaluates the
sum above with a certified tail, scans parameter grids for uniform bounds,
and probes the stochastic convolution operators by Monte Carlo.

Families (``b`` is the decay constant of the coefficient sequence ``a_j``):

* ``*_basic``: ``k_n = lam^{1/2} rho^n``.
* ``*_phi``: ``k_n = lam^{1/2} rho^n phi`` with
  ``phi = z^{-sigma} sum_j (rho^j - 1) a_j`` and ``|a_j| <= b j^{-1-sigma}``.
* ``*_variant``: ``k_n = lam^{1/2} z^{-sigma} sum_{j > n} rho^{j-n} a_j`` with
  ``|a_j - a_{j+1}| <= b j^{-2-sigma}``.
* ``j_reference``: ``k_n = 1_{1 <= n <= m} / sqrt(m tau)``.
* ``custom``: explicit finite values, or a phi/variant structure built on
  the averaged coefficients :func:`psi`.

Coefficient sequences with a Laplace representation
``a_j = int_0^inf e^{-j t} mu(t) dt`` (the power law and ``psi``) make the
infinite sums one-dimensional integrals, which is how tails are summed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.signal import lfilter
from scipy.special import gamma as gamma_fn
from scipy.special import zeta

from .errors import NumericError, ParameterError
from .rational_calc import EXPONENTIAL, SchemeFunction, evaluate

FAMILIES = ("exp_basic", "exp_phi", "exp_variant", "rational_basic", "rational_phi",
            "rational_variant", "j_reference", "custom")
TAIL_TOLERANCE = 1e-10
MEMBERSHIP_SLACK = 1e-12

_GAMMA_32 = math.sqrt(math.pi) / 2


# ---------------------------------------------------------------------------
# coefficient sequences


def psi(j, s, sigma: float) -> np.ndarray:
    """``psi(j, s) = int_0^{1-s} (1-s-r) (j+r)^{-1-sigma} dr`` in closed form.

    With ``u = 1-s`` and ``x = u/j``, ``psi = j^{1-sigma} F(x)`` where
    ``F(x) = (1+x)(1-(1+x)^{-sigma})/sigma - ((1+x)^{1-sigma}-1)/(1-sigma)``.
    For ``x < 0.1`` the Taylor series of ``F`` is used to avoid cancellation.
    """
    j, s = np.broadcast_arrays(np.asarray(j, dtype=float), np.asarray(s, dtype=float))
    if np.any(j < 1) or np.any((s < 0) | (s > 1)):
        raise ParameterError("psi needs j >= 1 and s in [0, 1]")
    x = (1.0 - s) / j
    F = np.empty_like(x)
    small = x < 0.1
    xs = x[small]
    # F(x) = sum_k binom(-1-sigma, k) x^{k+2} / ((k+1)(k+2))
    coeff, acc, xp = 1.0, np.zeros_like(xs), xs * xs
    for k in range(24):
        acc += coeff * xp / ((k + 1) * (k + 2))
        coeff *= (-1 - sigma - k) / (k + 1)
        xp = xp * xs
    F[small] = acc
    xl = x[~small]
    F[~small] = ((1 + xl) * -np.expm1(-sigma * np.log1p(xl)) / sigma
                 - np.expm1((1 - sigma) * np.log1p(xl)) / (1 - sigma))
    return j ** (1 - sigma) * F


@dataclass(frozen=True)
class ASequence:
    """Coefficients ``a_j`` (``j >= 1``) feeding the phi and variant families.

    ``kind``: ``power`` (``a_j = coef j^{-1-sigma}``), ``psi``
    (``a_j = coef psi(j, s)``) or ``explicit`` (``values`` are
    ``a_1..a_J``, zero beyond).
    """

    kind: str = "power"
    coef: float = 1.0
    s: float | None = None
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("power", "psi", "explicit"):
            raise ParameterError(f"unknown coefficient sequence kind {self.kind!r}")
        if self.kind == "psi" and (self.s is None or not 0 <= self.s < 1):
            raise ParameterError("psi coefficients need s in [0, 1)")
        if self.kind == "explicit":
            if not self.values:
                raise ParameterError("explicit coefficients need values")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def finite(self) -> bool:
        return self.kind == "explicit"

    @property
    def length(self) -> int:
        return len(self.values) if self.finite else 0

    def a(self, j, sigma: float) -> np.ndarray:
        j = np.asarray(j, dtype=float)
        if self.kind == "power":
            return self.coef * j ** (-1 - sigma)
        if self.kind == "psi":
            return self.coef * psi(j, self.s, sigma)
        v = np.asarray(self.values)
        idx = j.astype(int) - 1
        return np.where(idx < v.size, v[np.minimum(idx, v.size - 1)], 0.0)

    def d(self, j, sigma: float) -> np.ndarray:
        """``a_j - a_{j+1}`` evaluated without cancellation where possible."""
        j = np.asarray(j, dtype=float)
        if self.kind == "power":
            return -self.coef * j ** (-1 - sigma) * np.expm1(-(1 + sigma) * np.log1p(1 / j))
        return self.a(j, sigma) - self.a(j + 1, sigma)

    def density(self, t: np.ndarray, sigma: float) -> np.ndarray:
        """Laplace density ``mu(t)`` with ``a_j = int e^{-j t} mu(t) dt``."""
        base = self.coef * t**sigma / gamma_fn(1 + sigma)
        if self.kind == "power":
            return base
        if self.kind == "psi":
            u = 1.0 - self.s
            ut = u * t
            # int_0^u (u - r) e^{-r t} dr = (u t - 1 + e^{-u t}) / t^2
            w = np.where(ut < 1e-3,
                         u * u * (0.5 - ut / 6 + ut * ut / 24 - ut**3 / 120),
                         (ut + np.expm1(-ut)) / np.maximum(t * t, 1e-300))
            return base * w
        raise ParameterError("explicit coefficient sequences have no Laplace density")

    def bound(self, structure: str, sigma: float) -> float:
        """The decay constant ``b`` for ``structure`` in ``{phi, variant}``.

        Power law: ``b = |coef|`` (phi), ``(1+sigma)|coef|`` (variant).
        ``psi``: ``(1-s)^2/2`` and ``(1+sigma)(1-s)^2/2`` times ``|coef|``.
        Explicit: the sup of the weighted values.
        """
        c = abs(self.coef)
        if self.kind == "power":
            return c if structure == "phi" else (1 + sigma) * c
        if self.kind == "psi":
            h = 0.5 * (1 - self.s) ** 2
            return c * h if structure == "phi" else c * (1 + sigma) * h
        j = np.arange(1, self.length + 1, dtype=float)
        if structure == "phi":
            return float(np.max(j ** (1 + sigma) * np.abs(self.a(j, sigma))))
        return float(np.max(j ** (2 + sigma) * np.abs(self.d(j, sigma))))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "coef": self.coef}
        if self.s is not None:
            out["s"] = self.s
        if self.values is not None:
            out["values"] = list(self.values)
        return out


# ---------------------------------------------------------------------------
# kernel definitions


def default_nu(family: str, scheme: SchemeFunction | None = None) -> float:
    """``pi/4`` for exponential families, ``theta - pi/36`` for rational ones."""
    if family.startswith("rational") and scheme is not None:
        theta = scheme.declared_angle if scheme.declared_angle is not None else math.pi / 2
        return theta - math.pi / 36
    return math.pi / 4


def _structure(family: str, custom_structure: str | None) -> str:
    if family in ("exp_basic", "rational_basic"):
        return "basic"
    if family in ("exp_phi", "rational_phi"):
        return "phi"
    if family in ("exp_variant", "rational_variant"):
        return "variant"
    if family == "custom":
        return custom_structure or "values"
    return family


@dataclass(frozen=True)
class KernelSpec:
    """One scalar kernel: a family evaluated at a step ``tau`` and a point ``lam``.

    ``tail`` describes explicit ``custom`` values: ``"finite"`` (zero beyond
    the given entries) or ``(C, q)`` meaning ``|k_{n+1} - k_n| <= C q^n``
    past the given entries.  ``structure`` selects ``phi`` or ``variant`` for
    custom kernels built on a coefficient sequence.
    """

    family: str
    tau: float
    lam: complex = 1.0
    nu: float | None = None
    sigma: float = 0.25
    a_seq: ASequence = field(default_factory=ASequence)
    scheme: SchemeFunction | None = None
    m: int | None = None
    values: tuple[float, ...] | None = None
    tail: object = None
    structure: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown kernel family {self.family!r}")
        if not self.tau > 0:
            raise ParameterError("tau must be positive")
        object.__setattr__(self, "lam", complex(self.lam))
        fam = self.family
        if fam.startswith("rational"):
            if self.scheme is None or not self.scheme.is_rational:
                raise ParameterError(f"{fam} needs a rational scheme")
            if not self.scheme.vanishes_at_infinity:
                raise ParameterError(f"{self.scheme.name}: rational kernels need r(inf) = 0")
        if fam == "custom" and self.structure in ("phi", "variant") and self.scheme is not None \
                and not self.scheme.vanishes_at_infinity:
            raise ParameterError(f"{self.scheme.name}: kernels need r(inf) = 0")
        nu = default_nu(fam, self.scheme) if self.nu is None else float(self.nu)
        object.__setattr__(self, "nu", nu)
        limit = self.theta if self.uses_scheme else math.pi / 2
        if self.uses_lambda:
            if not 0 < nu < limit:
                raise ParameterError(f"nu must lie in (0, {limit:.6f}), got {nu}")
            if self.lam == 0 or abs(np.angle(self.lam)) > nu + 1e-12:
                raise ParameterError(f"lambda = {self.lam} is not in the sector of angle {nu}")
        if self.structure_kind in ("phi", "variant") and not 0 < self.sigma < 0.5:
            raise ParameterError("sigma must lie in (0, 1/2)")
        if fam == "j_reference" and (self.m is None or int(self.m) < 1):
            raise ParameterError("j_reference needs a positive integer m")
        if fam == "custom":
            if self.structure is None:
                if self.values is None:
                    raise ParameterError("custom kernels need values or a phi/variant structure")
                if self.tail is None:
                    raise ParameterError("custom kernel values need decay metadata "
                                         "(tail='finite' or (C, q)) to certify the tail")
                object.__setattr__(self, "values", tuple(float(v) for v in self.values))
            elif self.structure not in ("phi", "variant"):
                raise ParameterError("custom structure must be 'phi' or 'variant'")

    @property
    def structure_kind(self) -> str:
        return _structure(self.family, self.structure)

    @property
    def uses_lambda(self) -> bool:
        return self.structure_kind in ("basic", "phi", "variant")

    @property
    def uses_scheme(self) -> bool:
        return self.family.startswith("rational") or (self.family == "custom" and self.scheme is not None)

    @property
    def theta(self) -> float:
        if self.scheme is None or self.scheme.declared_angle is None:
            return math.pi / 2
        return self.scheme.declared_angle

    @property
    def z(self) -> complex:
        return self.tau * self.lam

    @property
    def b(self) -> float:
        """Normalisation constant: the coefficient decay constant, 1 otherwise."""
        if self.structure_kind in ("phi", "variant"):
            return self.a_seq.bound(self.structure_kind, self.sigma)
        return 1.0

    def to_dict(self) -> dict:
        out = {"family": self.family, "tau": self.tau, "lambda": [self.lam.real, self.lam.imag],
               "nu": self.nu}
        if self.structure_kind in ("phi", "variant"):
            out.update(sigma=self.sigma, a_seq=self.a_seq.to_dict(), b=self.b)
        if self.scheme is not None:
            out["scheme"] = self.scheme.name
        if self.m is not None:
            out["m"] = int(self.m)
        return out


# ---------------------------------------------------------------------------
# accurate scalar helpers


def _cexpm1(u: complex) -> complex:
    """``exp(u) - 1`` for complex ``u`` without cancellation."""
    x, y = u.real, u.imag
    return complex(math.expm1(x) * math.cos(y) - 2 * math.sin(y / 2) ** 2, math.exp(x) * math.sin(y))


def _clog1p(u: complex) -> complex:
    """Principal ``log(1 + u)`` without cancellation."""
    re = 0.5 * math.log1p(2 * u.real + abs(u) ** 2)
    return complex(re, math.atan2(u.imag, 1 + u.real))


@dataclass(frozen=True)
class _Step:
    """``rho``, ``rho - 1`` and ``w = -log rho`` at one point ``z``."""

    z: complex
    rho: complex
    rho_m1: complex
    w: complex


def _step(scheme: SchemeFunction | None, z: complex) -> _Step:
    if scheme is None or scheme.kind == EXPONENTIAL:
        rm1 = _cexpm1(-z)
        return _Step(z, 1 + rm1, rm1, z)
    num, den = scheme._num_f, scheme._den_f
    size = max(num.size, den.size)
    diff = np.zeros(size)
    diff[: num.size] += num
    diff[: den.size] -= den
    dval = complex(npoly.polyval(z, den))
    rm1 = complex(npoly.polyval(z, diff)) / dval
    rho = complex(evaluate(scheme, z))
    if rho == 0:
        return _Step(z, 0j, -1 + 0j, complex(math.inf))
    w = -_clog1p(rm1) if abs(rm1) < 0.5 else -complex(np.log(rho))
    return _Step(z, rho, rm1, w)


def _sqrt_n_geometric_tail(q: float, N: int) -> float:
    """Upper bound for ``sum_{n > N} sqrt(n) q^n``."""
    if q <= 0:
        return 0.0
    ratio = q * math.sqrt((N + 2) / (N + 1))
    if ratio >= 1:
        return math.inf
    return math.sqrt(N + 1) * q ** (N + 1) / (1 - ratio)


def li_minus_half(x: float) -> tuple[float, float, int]:
    """``sum_{n>=1} sqrt(n) e^{-n x}`` for ``x > 0`` with an error bound.

    Direct summation for ``x >= 1``; otherwise the expansion
    ``Gamma(3/2) x^{-3/2} + sum_k zeta(-1/2-k) (-x)^k / k!`` (valid for
    ``x < 2 pi``) whose coefficients obey
    ``|zeta(-1/2-k)| <= 2 Gamma(k+3/2) zeta(3/2) / (2 pi)^{k+3/2}``.
    Returns ``(value, error_bound, terms)``.
    """
    if not x > 0:
        return math.inf, math.inf, 0
    if x >= 1:
        N = int(math.ceil(40 / x)) + 2
        n = np.arange(1, N + 1, dtype=float)
        val = float(np.sum(np.sqrt(n) * np.exp(-n * x)))
        return val, _sqrt_n_geometric_tail(math.exp(-x), N) + 1e-16 * val, N
    K = 40
    k = np.arange(K)
    coeff = zeta(-0.5 - k) * (-x) ** k / gamma_fn(k + 1.0)
    val = _GAMMA_32 * x**-1.5 + float(np.sum(coeff))
    # remaining terms: ratio bounded by x (k + 1.5) / (2 pi (k + 1)) <= x / pi
    zeta32 = 2.612375348685488
    last = 2 * gamma_fn(K + 1.5) * zeta32 / (2 * math.pi) ** (K + 1.5) * x**K / gamma_fn(K + 1.0)
    err = last / (1 - x / math.pi) + 1e-15 * abs(val)
    return val, err, K


def polylog_shift(w: complex, sigma: float) -> complex:
    """``sum_{j>=1} (e^{-j w} - 1) j^{-1-sigma}`` for ``Re w >= 0``, ``w != 0``.

    Uses ``Gamma(-sigma) w^sigma + sum_{k>=1} zeta(1+sigma-k) (-w)^k / k!``
    for ``|w| < 2`` and direct summation with a geometric tail otherwise.
    """
    if abs(w) < 2:
        k = np.arange(1, 48)
        terms = zeta(1 + sigma - k) * (-w) ** k / gamma_fn(k + 1.0)
        return complex(gamma_fn(-sigma) * w**sigma + np.sum(terms))
    x = w.real
    if not x > 0:
        raise NumericError("polylog_shift: w on the imaginary axis far from 0")
    J = int(math.ceil(40 / x)) + 2
    if J > 5_000_000:
        raise NumericError(f"polylog_shift: direct summation needs {J} terms")
    j = np.arange(1, J + 1, dtype=float)
    return complex(np.sum(np.exp(-j * w) * j ** (-1 - sigma))) - float(zeta(1 + sigma))


class _Laplace:
    """Trapezoid rule in ``u = log t`` on ``t in [1e-40, 60]`` (step ``h``).

    Integrands behave like ``t^e`` near ``0``; the missing left part of the
    infinite trapezoid sum is added as a geometric series in that power.
    """

    def __init__(self, h: float = 0.1, t_lo: float = 1e-40, t_hi: float = 60.0):
        self.h = h
        self.u = np.arange(math.log(t_lo), math.log(t_hi) + h, h)
        self.t = np.exp(self.u)
        self.one_minus_e = -np.expm1(-self.t)
        self.e = np.exp(-self.t)

    def integrate(self, f_times_t: np.ndarray, left_power: float) -> np.ndarray:
        """``h sum f(t_i) t_i`` plus the left tail; sums over the last axis."""
        total = self.h * np.sum(f_times_t, axis=-1)
        first = f_times_t[..., 0]
        q = math.exp(-left_power * self.h)
        return total + self.h * first * q / (1 - q)


_LAPLACE = _Laplace()


def _geometric_factor(step: _Step, lap: _Laplace) -> np.ndarray:
    """``rho e^{-t} / (1 - rho e^{-t})`` on the quadrature nodes."""
    denom = -step.rho_m1 + step.rho * lap.one_minus_e
    return step.rho * lap.e / denom


def phi_value(spec: KernelSpec) -> complex:
    """``phi = z^{-sigma} sum_j (rho^j - 1) a_j`` for phi-structured kernels."""
    st = _step(_scheme_of(spec), spec.z)
    return _phi(st, spec.a_seq, spec.sigma)


def _phi(st: _Step, a_seq: ASequence, sigma: float) -> complex:
    z = st.z
    if a_seq.kind == "power" and math.isfinite(st.w.real):
        return a_seq.coef * z ** (-sigma) * polylog_shift(st.w, sigma)
    if a_seq.finite:
        j = np.arange(1, a_seq.length + 1, dtype=float)
        powers = np.exp(j * complex(np.log(st.rho))) if st.rho != 0 else np.zeros(j.size)
        return complex(np.sum((powers - 1) * a_seq.a(j, sigma))) * z ** (-sigma)
    return _phi_laplace(st, a_seq, sigma)


def _phi_laplace(st: _Step, a_seq: ASequence, sigma: float) -> complex:
    z = st.z
    lap = _LAPLACE
    mu = a_seq.density(lap.t, sigma)
    # sum_j (rho^j - 1) e^{-j t} = (rho - 1) e^{-t} / ((1 - rho e^{-t})(1 - e^{-t}))
    bracket = st.rho_m1 * lap.e / ((-st.rho_m1 + st.rho * lap.one_minus_e) * lap.one_minus_e)
    return complex(_LAPLACE.integrate(mu * bracket * lap.t, sigma)) * z ** (-sigma)


def _scheme_of(spec: KernelSpec) -> SchemeFunction | None:
    return spec.scheme if spec.uses_scheme else None


# ---------------------------------------------------------------------------
# kernel values


def kernel_values(spec: KernelSpec, length: int) -> np.ndarray:
    """``k_0 .. k_{length-1}`` as a complex array.

    ``k_0`` follows the family formula where it is defined (the anticausal
    operator uses it); for ``j_reference`` and explicit values ``k_0 = 0``.
    """
    if length < 1:
        raise ParameterError("length must be positive")
    n = np.arange(length, dtype=float)
    kind = spec.structure_kind
    if kind == "j_reference":
        m = int(spec.m)
        return np.where((n >= 1) & (n <= m), 1 / math.sqrt(m * spec.tau), 0.0).astype(complex)
    if kind == "values":
        out = np.zeros(length, dtype=complex)
        v = np.asarray(spec.values)[: length - 1]
        out[1: 1 + v.size] = v
        return out
    st = _step(_scheme_of(spec), spec.z)
    root = np.sqrt(spec.lam)
    powers = _powers(st, n)
    if kind == "basic":
        return root * powers
    if kind == "phi":
        return root * powers * _phi(st, spec.a_seq, spec.sigma)
    # variant: k_n = lam^{1/2} z^{-sigma} A_n, A_n = sum_{j>n} rho^{j-n} a_j
    A = _variant_tails(st, spec.a_seq, spec.sigma, length - 1, use_differences=False)
    return root * spec.z ** (-spec.sigma) * A


def _powers(st: _Step, n: np.ndarray) -> np.ndarray:
    if st.rho == 0:
        return np.where(n == 0, 1.0, 0.0).astype(complex)
    return np.exp(-n * st.w)


def _variant_tails(st: _Step, a_seq: ASequence, sigma: float, n_last: int,
                   use_differences: bool) -> np.ndarray:
    """``sum_{j>n} rho^{j-n} c_j`` for ``n = 0..n_last`` (``c = d`` or ``a``).

    Start value at ``n_last`` from the Laplace integral (or the finite sum),
    then the stable backward recursion ``T_n = rho (c_{n+1} + T_{n+1})``.
    """
    coeff = a_seq.d if use_differences else a_seq.a
    start = _variant_tail_at(st, a_seq, sigma, np.array([float(n_last)]), use_differences)[0]
    if n_last == 0:
        return np.array([start])
    c = coeff(np.arange(n_last, 0, -1, dtype=float), sigma)   # c_{n_last}, ..., c_1
    # T_{n_last-1-i} = rho (c_{n_last-i} + T_{n_last-i})
    tail, _ = lfilter([st.rho], [1, -st.rho], c.astype(complex), zi=[st.rho * start])
    return np.concatenate([tail[::-1], [start]])


def _variant_tail_at(st: _Step, a_seq: ASequence, sigma: float, n: np.ndarray,
                     use_differences: bool, derivative: bool = False) -> np.ndarray:
    """``sum_{j>n} rho^{j-n} c_j`` at arbitrary real ``n`` (and its ``n``-derivative)."""
    if a_seq.finite:
        J = a_seq.length + 1
        out = np.zeros(n.size, dtype=complex)
        coeff = a_seq.d if use_differences else a_seq.a
        for i, nn in enumerate(n.astype(int)):
            j = np.arange(nn + 1, J + 1, dtype=float)
            if j.size:
                out[i] = np.sum(_powers(st, j - nn) * coeff(j, sigma))
        return out
    lap = _LAPLACE
    mu = a_seq.density(lap.t, sigma)
    if use_differences:
        mu = mu * lap.one_minus_e
    base = mu * _geometric_factor(st, lap) * lap.t
    if derivative:
        base = -base * lap.t
    decay = _decay_matrix(n)
    power = sigma + (1 if use_differences else 0) + (1 if derivative else 0)
    # real matrix times complex vector, split to avoid a complex copy of the matrix
    total = lap.h * (decay @ base.real + 1j * (decay @ base.imag))
    q = math.exp(-power * lap.h)
    return total + lap.h * decay[:, 0] * base[0] * q / (1 - q)


_DECAY_CACHE: dict[bytes, np.ndarray] = {}


def _decay_matrix(n: np.ndarray) -> np.ndarray:
    """``exp(-n_i t_j)`` on the quadrature nodes, cached per node set."""
    key = np.ascontiguousarray(n, dtype=float).tobytes()
    mat = _DECAY_CACHE.get(key)
    if mat is None:
        mat = np.exp(-np.outer(n, _LAPLACE.t))
        if n.size > 8:
            _DECAY_CACHE[key] = mat
    return mat


# ---------------------------------------------------------------------------
# K_tau sums


@dataclass(frozen=True)
class KTauSum:
    """``sum_n sqrt(n tau) |k_{n+1} - k_n|`` with a certified tail bound."""

    sum: float
    tail_bound: float
    terms: int
    method: str
    normalization: float = 1.0

    @property
    def member(self) -> bool:
        return self.sum + self.tail_bound <= self.normalization + MEMBERSHIP_SLACK

    def to_dict(self) -> dict:
        return {"sum": self.sum, "tail_bound": self.tail_bound, "terms": self.terms,
                "method": self.method, "normalization": self.normalization, "member": self.member}


_EM_SPLIT = 1024
_EM_END = 1e22


def _gauss_panels(edges: np.ndarray, nodes: int = 8) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(nodes)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * np.diff(edges)
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


# Gauss-Legendre panels in v = log n: one panel on [N0/2, N0], then width 1/2 up to _EM_END
_EDGES = np.concatenate([[math.log(_EM_SPLIT / 2)],
                         np.arange(math.log(_EM_SPLIT), math.log(_EM_END), 0.5), [math.log(_EM_END)]])
_V_NODES, _V_WEIGHTS = _gauss_panels(_EDGES)
_FIRST_PANEL = 8


def _em_tail(split: float, integral: float, D_split: complex, dD_split: complex) -> float:
    """Euler-Maclaurin: ``sum_{n >= split} f(n) ~ int + f/2 - f'/12`` for ``f = sqrt(n)|D_n|``."""
    f = math.sqrt(split) * abs(D_split)
    fprime = abs(D_split) / (2 * math.sqrt(split))
    if D_split != 0:
        fprime += math.sqrt(split) * (D_split.conjugate() * dD_split).real / abs(D_split)
    return integral + f / 2 - fprime / 12


def _variant_sum(st: _Step, a_seq: ASequence, sigma: float, trunc: int | None) -> KTauSum:
    """``|z|^{1/2-sigma} sum_n sqrt(n) |D_n|`` with ``D_n = sum_{j>n} rho^{j-n} d_j``.

    Default: exact backward recursion up to ``n = 1024`` and Euler-Maclaurin
    beyond, with ``D_n`` at the quadrature nodes from the Laplace integral.
    The error bound combines the change when the split moves to ``n = 512``
    with the mismatch between recursion and integral at both splits.
    """
    scale = abs(st.z) ** (0.5 - sigma)
    if a_seq.finite:
        J = a_seq.length
        D = _variant_tails(st, a_seq, sigma, J, use_differences=True)
        n = np.arange(J + 1, dtype=float)
        return KTauSum(float(scale * np.sum(np.sqrt(n) * np.abs(D))), 0.0, J, "finite")
    if trunc is not None:
        D = _variant_tails(st, a_seq, sigma, trunc, use_differences=True)
        n = np.arange(trunc + 1, dtype=float)
        part = float(scale * np.sum(np.sqrt(n) * np.abs(D)))
        q = abs(st.rho)
        b = a_seq.bound("variant", sigma)
        # |D_n| <= b n^{-2-sigma} q / (1-q) and sum_{n>N} n^{-3/2-sigma} <= N^{-1/2-sigma} / (1/2+sigma)
        tail = math.inf if q >= 1 else scale * b * q / (1 - q) * trunc ** (-0.5 - sigma) / (0.5 + sigma)
        return KTauSum(part, tail, trunc, "partial")
    N0, N1 = _EM_SPLIT, _EM_SPLIT // 2
    D = _variant_tails(st, a_seq, sigma, N0, use_differences=True)
    f_direct = np.sqrt(np.arange(N0 + 1, dtype=float)) * np.abs(D)
    nodes = np.exp(_V_NODES)
    probe = np.concatenate([nodes, [float(N1), float(N0), _EM_END]])
    Dq = _variant_tail_at(st, a_seq, sigma, probe, True)
    dD = _variant_tail_at(st, a_seq, sigma, probe[-3:-1], True, derivative=True)
    f_nodes = np.sqrt(nodes) * np.abs(Dq[: nodes.size]) * nodes * _V_WEIGHTS
    # f ~ n^{-3/2-sigma} beyond the last node
    far = math.sqrt(_EM_END) * abs(Dq[-1]) * _EM_END / (0.5 + sigma)
    int_0 = float(np.sum(f_nodes[_FIRST_PANEL:])) + far
    int_1 = int_0 + float(np.sum(f_nodes[:_FIRST_PANEL]))
    total_0 = float(np.sum(f_direct[1:N0])) + _em_tail(N0, int_0, D[N0], dD[1])
    total_1 = float(np.sum(f_direct[1:N1])) + _em_tail(N1, int_1, D[N1], dD[0])
    # recursion started from the integral at N0; compare with the integral at N1
    mismatch = abs(Dq[-3] - D[N1]) * math.sqrt(N1) * N1
    value = scale * total_0
    err = scale * (abs(total_0 - total_1) + mismatch) + 1e-12 * value
    return KTauSum(float(value), float(err), N0, "recursion+euler_maclaurin")


def _basic_sum(st: _Step, trunc: int | None) -> tuple[float, float, int, str]:
    """``|z|^{1/2} |rho - 1| sum_n sqrt(n) |rho|^n`` (value, error, terms, method)."""
    pre = math.sqrt(abs(st.z)) * abs(st.rho_m1)
    if st.rho == 0:
        return 0.0, 0.0, 0, "exact"
    x = st.w.real
    if trunc is not None:
        n = np.arange(1, trunc + 1, dtype=float)
        part = float(np.sum(np.sqrt(n) * np.exp(-n * x)))
        return pre * part, pre * _sqrt_n_geometric_tail(math.exp(-x), trunc), trunc, "partial"
    val, err, terms = li_minus_half(x)
    return pre * val, pre * err, terms, "direct" if x >= 1 else "series"


def ktau_sum(spec: KernelSpec, trunc: int | None = None, normalization: float = 1.0) -> KTauSum:
    """``sum_{n>=1} sqrt(n tau) |k_{n+1} - k_n|`` with a certified tail.

    With ``trunc`` the first ``trunc`` terms are summed explicitly and the
    tail is bounded from the family's majorant (geometric in ``|rho|`` for
    basic and phi kernels).  Without it the infinite sum is evaluated
    through the closed forms and the bound is the error of that evaluation.
    The verdict ``member`` compares ``sum + tail_bound`` with
    ``normalization``.
    """
    if trunc is not None and int(trunc) < 1:
        raise ParameterError("trunc must be a positive integer")
    kind = spec.structure_kind
    tau = spec.tau
    if kind == "j_reference":
        m = int(spec.m)
        # the only nonzero difference is k_{m+1} - k_m = -1/sqrt(m tau)
        val = math.sqrt(m * tau) * (1 / math.sqrt(m * tau)) if trunc is None or trunc >= m else 0.0
        tail = 0.0 if trunc is None or trunc >= m else 1.0
        return KTauSum(val, tail, m, "exact", normalization)
    if kind == "values":
        v = np.concatenate([np.asarray(spec.values, dtype=complex), [0.0]])
        L = len(spec.values)
        diffs = np.abs(np.diff(v))                          # n = 1..L
        if spec.tail != "finite":
            C, q = spec.tail
            diffs = diffs[:-1]                              # k_{L+1} unknown
            tail = math.sqrt(tau) * C * (math.sqrt(L) * q**L + _sqrt_n_geometric_tail(q, L))
        else:
            tail = 0.0
        n = np.arange(1, diffs.size + 1, dtype=float)
        return KTauSum(float(np.sum(np.sqrt(n * tau) * diffs)), float(tail), L, "finite", normalization)
    st = _step(_scheme_of(spec), spec.z)
    if kind == "variant":
        res = _variant_sum(st, spec.a_seq, spec.sigma, trunc)
        return KTauSum(res.sum, res.tail_bound, res.terms, res.method, normalization)
    val, err, terms, method = _basic_sum(st, trunc)
    if kind == "phi":
        ph = abs(_phi(st, spec.a_seq, spec.sigma))
        val, err = val * ph, err * ph + 1e-13 * val * ph
    return KTauSum(float(val), float(err), terms, method, normalization)


# ---------------------------------------------------------------------------
# uniform scans


def default_tau_grid(refined: bool = False) -> np.ndarray:
    """``2^k`` for ``k = -12..4`` (17 points); half-integer ``k`` when refined."""
    step = 0.5 if refined else 1.0
    return 2.0 ** np.arange(-12, 4 + step / 2, step)


def default_lambda_grid(nu: float, n_moduli: int = 16) -> np.ndarray:
    """Moduli ``10^-4..10^4`` (log-spaced) on the rays ``arg = 0, +nu, -nu``."""
    rho = np.logspace(-4, 4, n_moduli)
    return np.concatenate([rho, rho * np.exp(1j * nu), rho * np.exp(-1j * nu)]).astype(complex)


@dataclass(frozen=True)
class FamilyReport:
    """Sup of ``ktau_sum / b`` over a ``(tau, lambda)`` grid and its refinement."""

    family: str
    scheme: str | None
    nu: float
    sigma: float | None
    b: float
    sup_coarse: float
    sup_fine: float
    refinement_ratio: float
    worst_point: tuple[float, complex]
    max_tail_bound: float
    passes: bool
    grid_spec: str
    phi_sup: float | None = None
    analytic_bound: float | None = None
    divergent: tuple = ()

    def to_dict(self) -> dict:
        out = {
            "family": self.family, "scheme": self.scheme, "nu": self.nu, "sigma": self.sigma, "b": self.b,
            "sup_coarse": self.sup_coarse, "sup_fine": self.sup_fine,
            "refinement_ratio": self.refinement_ratio,
            "worst_tau": self.worst_point[0],
            "worst_lambda": [self.worst_point[1].real, self.worst_point[1].imag],
            "max_tail_bound": self.max_tail_bound, "passes": self.passes, "grid": self.grid_spec,
        }
        if self.phi_sup is not None:
            out["phi_sup"] = self.phi_sup
        if self.analytic_bound is not None:
            out["analytic_bound"] = self.analytic_bound
        if self.divergent:
            out["divergent"] = [[t, [l.real, l.imag]] for t, l in self.divergent]
        return out


def exp_basic_bound(nu: float) -> float:
    """``c^{-3/2} int_0^inf s^{1/2} e^{-s/2} ds = c^{-3/2} Gamma(3/2) 2^{3/2}``, ``c = cos nu``."""
    return math.cos(nu) ** -1.5 * _GAMMA_32 * 2**1.5


def exp_phi_uniform_bound(nu: float, sigma: float, b: float = 1.0) -> float:
    """``M_nu b 2^{1+sigma} c^sigma Gamma(1-sigma)/sigma`` with ``M_nu = 1/c``, ``c = cos nu``."""
    c = math.cos(nu)
    return b / c * 2 ** (1 + sigma) * c**sigma * math.gamma(1 - sigma) / sigma


def _family_point(args):
    family, tau, lam, nu, sigma, a_seq, scheme, structure = args
    spec = KernelSpec(family, tau, lam, nu=nu, sigma=sigma, a_seq=a_seq, scheme=scheme,
                      structure=structure)
    res = ktau_sum(spec)
    ph = abs(phi_value(spec)) if spec.structure_kind == "phi" else math.nan
    return res.sum, res.tail_bound, ph


def verify_family_uniform(family: str, nu: float | None = None, sigma: float = 0.25,
                          tau_grid=None, lambda_grid=None, a_seq: ASequence | None = None,
                          scheme: SchemeFunction | None = None, structure: str | None = None,
                          max_ratio: float = 1.1, workers: int = 1) -> FamilyReport:
    """Scan ``ktau_sum / b`` over ``tau_grid x lambda_grid`` and one refinement.

    The default grids are :func:`default_tau_grid` (17 steps) and
    :func:`default_lambda_grid` (48 points); the refinement halves the
    exponent spacing in ``tau`` and interleaves the moduli.  Explicit grids
    are refined the same way in log scale.  Passes when every sum is finite
    and ``sup_fine / sup_coarse < max_ratio``.
    """
    if family in ("j_reference",) or (family == "custom" and structure is None):
        raise ParameterError(f"{family} kernels are not parametrised by (tau, lambda)")
    a_seq = ASequence() if a_seq is None else a_seq
    probe = KernelSpec(family, 1.0, 1.0, nu=nu, sigma=sigma, a_seq=a_seq, scheme=scheme,
                       structure=structure)
    nu = probe.nu
    taus = default_tau_grid() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    lams = default_lambda_grid(nu) if lambda_grid is None else np.asarray(lambda_grid, dtype=complex)
    if np.any(taus < 2.0**-12 * (1 - 1e-12)) or np.any(taus > 2.0**4 * (1 + 1e-12)):
        raise ParameterError("tau grid must lie in [2^-12, 2^4]")
    fine_taus = _refine_log(np.sort(taus))
    fine_lams = _refine_lambda(lams)
    points = [(family, t, l, nu, sigma, a_seq, scheme, structure) for t in fine_taus for l in fine_lams]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_family_point, points))
    else:
        results = [_family_point(p) for p in points]
    sums = np.array([r[0] for r in results]).reshape(fine_taus.size, fine_lams.size)
    tails = np.array([r[1] for r in results]).reshape(sums.shape)
    phis = np.array([r[2] for r in results]).reshape(sums.shape)
    b = probe.b
    ratio_grid = sums / b
    coarse_mask = np.isin(fine_taus, taus)[:, None] & _isin_complex(fine_lams, lams)[None, :]
    bad = ~np.isfinite(ratio_grid) | ~np.isfinite(tails)
    divergent = tuple((float(fine_taus[i]), complex(fine_lams[j])) for i, j in zip(*np.nonzero(bad)))
    if divergent:
        return FamilyReport(family, getattr(scheme, "name", None), nu, sigma if probe.structure_kind != "basic" else None,
                            b, math.inf, math.inf, math.inf, divergent[0], math.inf, False,
                            _grid_spec(taus, lams), divergent=divergent)
    sup_fine = float(np.max(ratio_grid))
    sup_coarse = float(np.max(np.where(coarse_mask, ratio_grid, -np.inf)))
    i, j = np.unravel_index(np.argmax(ratio_grid), ratio_grid.shape)
    ratio = sup_fine / sup_coarse if sup_coarse > 0 else (1.0 if sup_fine == 0 else math.inf)
    analytic = None
    if family == "exp_basic":
        analytic = exp_basic_bound(nu)
    elif family == "exp_phi":
        analytic = exp_phi_uniform_bound(nu, sigma, 1.0)
    phi_sup = float(np.nanmax(phis)) / b if probe.structure_kind == "phi" else None
    return FamilyReport(
        family=family, scheme=getattr(scheme, "name", None), nu=nu,
        sigma=sigma if probe.structure_kind != "basic" else None, b=b,
        sup_coarse=sup_coarse, sup_fine=sup_fine, refinement_ratio=ratio,
        worst_point=(float(fine_taus[i]), complex(fine_lams[j])),
        max_tail_bound=float(np.max(tails)), passes=bool(ratio < max_ratio),
        grid_spec=_grid_spec(taus, lams), phi_sup=phi_sup, analytic_bound=analytic,
    )


def _refine_log(values: np.ndarray) -> np.ndarray:
    if values.size < 2:
        return values
    mids = np.sqrt(values[:-1] * values[1:])
    return np.sort(np.concatenate([values, mids]))


def _refine_lambda(lams: np.ndarray) -> np.ndarray:
    """Interleave geometric midpoints of the moduli along each ray."""
    out = []
    angles = np.round(np.angle(lams), 12)
    for a in np.unique(angles):
        mods = np.sort(np.abs(lams[angles == a]))
        out.append(_refine_log(mods) * np.exp(1j * a))
    return np.concatenate(out)


def _isin_complex(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.array([np.any(np.abs(x - b) <= 1e-12 * abs(x)) for x in a])


def _grid_spec(taus: np.ndarray, lams: np.ndarray) -> str:
    rays = sorted({round(float(np.angle(l)), 6) for l in lams})
    return (f"{taus.size} tau in [{taus.min():.3g}, {taus.max():.3g}] x {lams.size} lambda on rays "
            f"{rays} (refined: {2 * taus.size - 1} x {2 * lams.size - len(rays)})")


# ---------------------------------------------------------------------------
# elementary properties


@dataclass(frozen=True)
class ElementaryReport:
    """Worst ratios ``lhs / rhs`` of the two scalar inequalities on a sector grid."""

    nu: float
    m_nu: float
    mean_value_ratio: float
    sector_ratio: float
    n_points: int
    passes: bool

    def to_dict(self) -> dict:
        return dict(nu=self.nu, m_nu=self.m_nu, mean_value_ratio=self.mean_value_ratio,
                    sector_ratio=self.sector_ratio, n_points=self.n_points, passes=self.passes)


def check_elementary_inequalities(nu: float, n_moduli: int = 100, n_angles: int = 100) -> ElementaryReport:
    """``|1 - e^{-z}| <= |z|`` on ``Re z >= 0`` and
    ``|1 - e^{-z}| <= M_nu (1 - e^{-|z| cos arg z})`` on ``Sigma_nu``, ``M_nu = 1/cos nu``.

    Both are sampled on ``n_moduli x n_angles`` points (moduli ``1e-6..1e6``).
    """
    if not 0 < nu < math.pi / 2:
        raise ParameterError("nu must lie in (0, pi/2)")
    rho = np.logspace(-6, 6, n_moduli)
    m_nu = 1 / math.cos(nu)

    def lhs(z):
        x, y = z.real, z.imag
        # |1 - e^{-z}| via expm1 to keep relative accuracy near 0
        re = np.expm1(-x) * np.cos(y) - 2 * np.sin(y / 2) ** 2
        im = -np.exp(-x) * np.sin(y)
        return np.hypot(re, im)

    half = rho[:, None] * np.exp(1j * np.linspace(-math.pi / 2, math.pi / 2, n_angles))[None, :]
    r1 = float(np.max(lhs(half) / np.abs(half)))
    sec = rho[:, None] * np.exp(1j * np.linspace(-nu, nu, n_angles))[None, :]
    rhs = m_nu * -np.expm1(-np.abs(sec) * np.cos(np.angle(sec)))
    r2 = float(np.max(lhs(sec) / rhs))
    ok = r1 <= 1 + 1e-12 and r2 <= 1 + 1e-12
    return ElementaryReport(nu, m_nu, r1, r2, 2 * n_moduli * n_angles, ok)


@dataclass(frozen=True)
class ConvexDecomposition:
    """``k = sum_m c_m k^{(m)}`` with ``c_m = -sqrt(m tau)(k_{m+1} - k_m)``."""

    coefficients: np.ndarray
    reconstruction: np.ndarray
    max_error: float
    mass: float


def convex_decomposition(values, tau: float) -> ConvexDecomposition:
    """Write a finite kernel ``k_1..k_L`` (zero beyond) through the reference kernels.

    ``k^{(m)}_n = 1_{1 <= n <= m} / sqrt(m tau)``.  The coefficient mass
    ``sum |c_m|`` equals the ``K_tau`` sum of ``k``.
    """
    k = np.asarray(values, dtype=complex)
    if k.ndim != 1 or k.size == 0:
        raise ParameterError("values must be a non-empty 1-d sequence")
    if not tau > 0:
        raise ParameterError("tau must be positive")
    L = k.size
    m = np.arange(1, L + 1, dtype=float)
    kext = np.concatenate([k, [0.0]])
    c = -np.sqrt(m * tau) * np.diff(kext)
    # (sum_m c_m k^{(m)})_n = sum_{m >= n} c_m / sqrt(m tau)
    contrib = c / np.sqrt(m * tau)
    recon = np.cumsum(contrib[::-1])[::-1]
    err = float(np.max(np.abs(recon - k)))
    return ConvexDecomposition(c, recon, err, float(np.sum(np.abs(c))))


@dataclass(frozen=True)
class PsiReport:
    sigma: float
    sup_decay: float
    sup_difference: float
    bound_decay: float
    bound_difference: float
    j_max: int
    passes: bool

    def to_dict(self) -> dict:
        return dict(sigma=self.sigma, sup_decay=self.sup_decay, sup_difference=self.sup_difference,
                    bound_decay=self.bound_decay, bound_difference=self.bound_difference,
                    j_max=self.j_max, passes=self.passes)


def check_psi_properties(sigma: float, j_max: int = 10_000, s_grid=None) -> PsiReport:
    """Sup of ``j^{1+sigma}|psi(j,s)|`` and ``j^{2+sigma}|psi(j+1,s) - psi(j,s)|``.

    Sampled on ``j = 1..j_max`` and ``s`` in ``s_grid`` (default 41 points in
    ``[0, 1]``); compared with the bounds ``1/2`` and ``(1+sigma)/2``.
    """
    if not 0 < sigma < 0.5:
        raise ParameterError("sigma must lie in (0, 1/2)")
    s = np.linspace(0, 1, 41) if s_grid is None else np.asarray(s_grid, dtype=float)
    j = np.arange(1, j_max + 2, dtype=float)
    vals = psi(j[:, None], s[None, :], sigma)
    decay = float(np.max(j[:-1, None] ** (1 + sigma) * np.abs(vals[:-1])))
    diff = float(np.max(j[:-1, None] ** (2 + sigma) * np.abs(np.diff(vals, axis=0))))
    bd, bdiff = 0.5, 0.5 * (1 + sigma)
    ok = math.isfinite(decay) and math.isfinite(diff) and decay <= bd * (1 + 1e-9) and diff <= bdiff * (1 + 1e-6)
    return PsiReport(sigma, decay, diff, bd, bdiff, j_max, ok)


# ---------------------------------------------------------------------------
# operator probes


@dataclass(frozen=True)
class NormProbe:
    """``max`` over probes of ``(E||I(k) g||^p)^{1/p} / (E||g||^p)^{1/p}``."""

    value: float
    per_probe: tuple
    variant: str
    p: float
    q: float
    alpha: float

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {"value": self.value, "variant": self.variant, "p": self.p, "q": self.q, "alpha": self.alpha,
                "per_probe": [e.to_dict() for e in self.per_probe]}


def convolve_increments(kernel: np.ndarray, inc: np.ndarray, variant: str = "causal") -> np.ndarray:
    """Apply a scalar kernel ``k_0..`` to increments ``[P, N, M]``; output ``[P, N+1, M]``.

    Causal: ``Y_n = sum_{j<n} k_{n-j} inc_j``.  Anticausal:
    ``Y_n = sum_{j>=n} k_{j-n} inc_j`` for ``n = 1..N-1`` with ``Y_0 = 0``
    (``Y_N = 0`` as no increment is left).
    """
    from .evolve import _convolve

    if variant not in ("causal", "anticausal"):
        raise ParameterError(f"unknown variant {variant!r}")
    P, N, M = inc.shape
    k = np.zeros((N + 1, M), dtype=complex)
    kv = np.asarray(kernel, dtype=complex)[: N + 1]
    k[: kv.size] = kv[:, None]
    out = np.zeros((P, N + 1, M), dtype=complex)
    for part, unit in ((k.real, 1.0), (k.imag, 1j)):
        if not np.any(part):
            continue
        if variant == "causal":
            out[:, 1:, :] += unit * _convolve(inc, part, causal=True)
        else:
            out[:, 1:N, :] += unit * _convolve(inc, part, causal=False)[:, 1:, :]
    return out


def operator_norm_probe(spec: KernelSpec, probes, variant: str = "causal", p: float = 2.0,
                        q: float = 2.0, alpha: float = 0.0, n_paths: int = 512, seed: int = 0,
                        bundle=None, workers: int | None = None) -> NormProbe:
    """Monte Carlo norm ratios of ``I^tau(k)`` (or its anticausal version) on probe processes.

    ``probes`` are diagonal :class:`StepProcess` objects on a common grid of
    step ``spec.tau``.  The output norm is
    ``(sum_n tau t_{n+1}^alpha ||Y_n||_q^p)^{1/p}``, the input norm the
    weighted ``L^p(L^q)`` norm of ``g``.  Random probes must be adapted to
    ``bundle``.  The spec must pass the ``K_tau`` membership test after
    normalisation by its own sum.
    """
    from .noise import sample_bundle, weighted_Lp_data_norm
    from .norms import _step_weights, ratio_estimate, root_estimate
    from .spectral import DiagonalOperator

    probes = list(probes)
    if not probes:
        raise ParameterError("need at least one probe process")
    if not p >= 2 or not q >= 2:
        raise ParameterError("p and q must be >= 2")
    if not alpha > -1:
        raise ParameterError("alpha must exceed -1")
    res = ktau_sum(spec)
    if not math.isfinite(res.sum + res.tail_bound):
        raise NumericError("kernel is not in any multiple of K_tau")
    N, M = probes[0].n_steps, probes[0].n_modes
    for g in probes:
        if g.n_steps != N or g.n_modes != M or not np.isclose(g.step, spec.tau) or not g.diagonal:
            raise ParameterError("probes must be diagonal and share the kernel's time grid")
    if n_paths < 16:
        raise ParameterError("n_paths must be >= 16")
    lam = np.arange(1, M + 1, dtype=float)
    if bundle is None:
        bundle = sample_bundle(lam, N, spec.tau, seed=seed, paths=np.arange(n_paths), tag="kernel-probe")
    model = DiagonalOperator(lam, q)
    kernel = kernel_values(spec, N + 1)
    w = _step_weights(N + 1, spec.tau, alpha)
    per = []
    for g in probes:
        inc = g.batch(bundle.n_paths) * bundle.dW
        Y = convolve_increments(kernel, inc, variant)
        out = np.sum(np.abs(Y) ** q, axis=-1) ** (p / q) @ w
        data = weighted_Lp_data_norm(model, g, p, alpha, q, smoothness=0.0, power=True)
        data = np.broadcast_to(np.asarray(data, dtype=float), out.shape)
        if np.all(data == 0):
            per.append(root_estimate(ratio_estimate(out, np.ones_like(out)), p))
            continue
        per.append(root_estimate(ratio_estimate(out, data), p))
    best = max(e.mean for e in per)
    return NormProbe(float(best), tuple(per), variant, float(p), float(q), float(alpha))


def audit_family(family: str, scheme: SchemeFunction | None = None, nu: float | None = None,
                 sigma: float = 0.25, n_paths: int = 256, seed: int = 0) -> dict:
    """Uniform scan plus operator probes at ``lam = 16`` for ``tau = 2^-2, 2^-4, 2^-6``."""
    from .noise import make_test_process
    from .spectral import make_dirichlet_laplacian

    out: dict = {"family": family}
    if family == "j_reference":
        out["ktau_sums"] = [{"m": m, "tau": t, **ktau_sum(KernelSpec("j_reference", t, m=m)).to_dict()}
                            for m in (1, 10, 1000) for t in (2.0**-10, 1.0)]
    else:
        out["uniform"] = verify_family_uniform(family, nu, sigma, scheme=scheme).to_dict()
    op = make_dirichlet_laplacian(8)
    probes_out = []
    for tau in (2.0**-2, 2.0**-4, 2.0**-6):
        if family == "j_reference":
            spec = KernelSpec("j_reference", tau, m=4)
        else:
            spec = KernelSpec(family, tau, 16.0, nu=nu, sigma=sigma, scheme=scheme)
        N = 32
        g = make_test_process("constant", op, N, tau)
        norm = ktau_sum(spec).sum
        probe = operator_norm_probe(spec, [g], p=2.0, q=2.0, n_paths=n_paths, seed=seed)
        probes_out.append({"tau": tau, "ktau_sum": norm, "probe_norm": probe.value,
                           "probe_norm_normalized": probe.value / norm if norm > 0 else 0.0,
                           "stderr": probe.per_probe[0].stderr})
    out["probes"] = probes_out
    if scheme is not None:
        out["scheme"] = scheme.name
    return out

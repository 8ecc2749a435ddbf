"""Diagonal model operators and their functional calculus.

A positive self-adjoint operator with eigenvalues ``lam_k`` acts on mode
coefficients, so every function of the operator is a per-eigenvalue
multiplier.  Mode vectors are numpy arrays whose last axis indexes modes;
leading axes (paths, time steps) are broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, NumericError, ParameterError
from .rational_calc import SchemeFunction, evaluate_real

MAX_MODES = 4096


@dataclass(frozen=True)
class DiagonalOperator:
    """Positive diagonal operator on an ``l^q`` sequence model (``q = 2``: Hilbert)."""

    eigenvalues: np.ndarray
    q_exponent: float = 2.0

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float).ravel()
        if lam.size == 0:
            raise ParameterError("operator needs at least one eigenvalue")
        if lam.size > MAX_MODES:
            raise ParameterError(f"at most {MAX_MODES} modes supported, got {lam.size}")
        if not np.all(np.isfinite(lam)) or lam[0] <= 0:
            raise ParameterError("eigenvalues must be finite and positive")
        if np.any(np.diff(lam) <= 0):
            raise ParameterError("eigenvalues must be strictly increasing")
        if not self.q_exponent >= 2:
            raise ParameterError("q_exponent must be >= 2")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "q_exponent", float(self.q_exponent))

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def with_q(self, q: float) -> "DiagonalOperator":
        return DiagonalOperator(self.eigenvalues, q)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "q": self.q_exponent,
                "lambda_min": float(self.eigenvalues[0]), "lambda_max": float(self.eigenvalues[-1])}


def make_dirichlet_laplacian(M: int, L: float = math.pi, q: float = 2.0) -> DiagonalOperator:
    """Dirichlet Laplacian ``-d^2/dx^2`` on ``(0, L)``: ``lam_k = (pi k / L)**2``."""
    if M < 1:
        raise ParameterError("M must be positive")
    if not L > 0:
        raise ParameterError("L must be positive")
    k = np.arange(1, M + 1, dtype=float)
    return DiagonalOperator((math.pi * k / L) ** 2, q)


def operator_from_spec(spec: dict) -> DiagonalOperator:
    """Build an operator from ``{type: dirichlet_laplacian, modes, length}`` or ``{type: explicit, eigenvalues}``."""
    kind = spec.get("type", "dirichlet_laplacian")
    q = float(spec.get("q", 2.0))
    if kind == "dirichlet_laplacian":
        return make_dirichlet_laplacian(int(spec.get("modes", 64)), float(spec.get("length", math.pi)), q)
    if kind == "explicit":
        return DiagonalOperator(np.asarray(spec["eigenvalues"], dtype=float), q)
    raise ParameterError(f"unknown operator type {kind!r}")


# ---------------------------------------------------------------------------
# functional calculus


def multiplier(op: DiagonalOperator, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``f(lam_k)`` for all eigenvalues; non-finite values are a domain error."""
    with np.errstate(all="ignore"):
        vals = np.asarray(f(op.eigenvalues))
    if vals.shape != op.eigenvalues.shape:
        vals = np.broadcast_to(vals, op.eigenvalues.shape)
    if not np.all(np.isfinite(vals)):
        bad = op.eigenvalues[~np.isfinite(vals)][0]
        raise DomainError(f"function undefined at eigenvalue {bad}")
    return vals


def apply_spectral(op: DiagonalOperator, f: Callable[[np.ndarray], np.ndarray], x) -> np.ndarray:
    """``f(A) x`` computed mode by mode."""
    x = np.asarray(x)
    if x.shape[-1] != op.dim:
        raise ParameterError(f"mode vector has {x.shape[-1]} entries, operator has {op.dim}")
    return multiplier(op, f) * x


def semigroup(op: DiagonalOperator, t: float, x) -> np.ndarray:
    if t < 0:
        raise ParameterError("semigroup time must be nonnegative")
    return apply_spectral(op, lambda lam: np.exp(-t * lam), x)


def frac_power(op: DiagonalOperator, alpha: float, x) -> np.ndarray:
    if not -1 <= alpha <= 1:
        raise ParameterError("alpha must lie in [-1, 1]")
    return apply_spectral(op, lambda lam: lam**alpha, x)


def scheme_multipliers(op: DiagonalOperator, scheme: SchemeFunction, tau: float) -> np.ndarray:
    """``r(tau lam_k)``; real because the eigenvalues are real and ``r`` has real coefficients."""
    if not tau > 0:
        raise ParameterError("tau must be positive")
    return multiplier(op, lambda lam: evaluate_real(scheme, tau * lam))


def scheme_step(op: DiagonalOperator, scheme: SchemeFunction, tau: float, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != op.dim:
        raise ParameterError(f"mode vector has {x.shape[-1]} entries, operator has {op.dim}")
    return scheme_multipliers(op, scheme, tau) * x


# ---------------------------------------------------------------------------
# norms


def _qnorm(y: np.ndarray, q: float) -> np.ndarray:
    if q == 2:
        return np.sqrt(np.sum(y * y, axis=-1))
    return np.sum(np.abs(y) ** q, axis=-1) ** (1.0 / q)


def space_norm(op: DiagonalOperator, x, alpha: float = 0.0) -> np.ndarray | float:
    """``||A^alpha x||`` in the operator's ``l^q`` model (reduces over the last axis)."""
    x = np.asarray(x)
    if x.shape[-1] != op.dim:
        raise ParameterError(f"mode vector has {x.shape[-1]} entries, operator has {op.dim}")
    out = _qnorm(op.eigenvalues**alpha * x, op.q_exponent)
    return float(out) if np.ndim(out) == 0 else out


class TraceNorm:
    """Semigroup-integral norm of the real interpolation space ``(X_0, X_1)_{alpha, p}``.

    ``||x|| + (int_0^inf (t^(1-alpha) ||A e^{-tA} x||)^p dt/t)^(1/p)``, with the
    integral computed by the trapezoid rule in ``log t`` on
    ``[1e-12/lam_max, 1e3/lam_min]``.  The rule is compared with its own
    every-other-node subset on each call; a relative change above ``rtol``
    raises :class:`NumericError`.
    """

    def __init__(self, op: DiagonalOperator, alpha: float, p: float,
                 points_per_decade: int = 40, rtol: float = 1e-6):
        if not 0 < alpha < 1:
            raise ParameterError("trace space index alpha must lie in (0, 1)")
        if not p >= 1:
            raise ParameterError("p must be >= 1")
        self.op, self.alpha, self.p, self.rtol = op, float(alpha), float(p), rtol
        lam = op.eigenvalues
        lo = math.log(1e-12 / lam[-1])
        hi = math.log(1e3 / lam[0])
        decades = (hi - lo) / math.log(10)
        n = 2 * int(math.ceil(decades * points_per_decade / 2)) + 1
        u = np.linspace(lo, hi, n)
        self.h = u[1] - u[0]
        t = np.exp(u)
        self.t = t
        q = op.q_exponent
        # ||A e^{-tA} x||_q^q = sum_k |x_k|^q (lam_k e^{-t lam_k})^q
        self._w = (lam[:, None] * np.exp(-t[None, :] * lam[:, None])) ** q
        self._tpow = t ** ((1 - self.alpha) * self.p)
        self._trap = np.full(n, self.h)
        self._trap[[0, -1]] *= 0.5
        self._trap_coarse = np.zeros(n)
        self._trap_coarse[::2] = 2 * self.h
        self._trap_coarse[[0, -1]] = self.h

    def seminorm_p(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Fine and coarse quadrature values of the p-th power of the integral part."""
        x = np.asarray(x, dtype=float)
        q = self.op.q_exponent
        sq = np.abs(x) ** q @ self._w
        integrand = self._tpow * sq ** (self.p / q)
        return integrand @ self._trap, integrand @ self._trap_coarse

    def __call__(self, x) -> np.ndarray | float:
        fine, coarse = self.seminorm_p(x)
        scale = np.maximum(np.abs(fine), np.finfo(float).tiny)
        err = np.abs(fine - coarse) / scale
        if np.any((fine > 0) & (err > self.rtol)):
            raise NumericError(f"trace-norm quadrature not converged (relative change {float(np.max(err)):.2e})")
        out = space_norm(self.op, x, 0.0) + fine ** (1.0 / self.p)
        return float(out) if np.ndim(out) == 0 else out


def trace_norm(op: DiagonalOperator, x, alpha: float, p: float, points_per_decade: int = 40):
    """Norm of ``x`` in the trace space ``(X_0, X_1)_{alpha, p}``; see :class:`TraceNorm`."""
    return TraceNorm(op, alpha, p, points_per_decade)(x)

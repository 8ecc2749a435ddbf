"""Scheme recursion, discrete stochastic convolutions and the exact mild solution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ParameterError, TruncationError, UnsupportedConfigurationError
from .noise import PathBundle, StepProcess
from .rational_calc import SchemeFunction
from .spectral import DiagonalOperator, scheme_multipliers

TAIL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Trajectory:
    """``values[..., n, k]`` for ``n = 0..N`` with ``values[..., 0, :] = 0``."""

    values: np.ndarray
    step: float
    label: str

    @property
    def n_steps(self) -> int:
        return self.values.shape[-2] - 1

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class PowerKernel:
    """The kernel ``k_n = m**n`` (``n >= 1``) of a one-step multiplier ``m`` per mode."""

    multipliers: np.ndarray


@dataclass(frozen=True)
class KernelSequence:
    """Explicit kernel ``k_0..k_{L-1}`` (shape ``[L]`` or ``[L, M]``), zero beyond ``L``
    up to the certified ``tail_bound`` on ``sum_{n >= L} |k_n|``."""

    values: np.ndarray
    tail_bound: float = 0.0


def increments(g: StepProcess, bundle: PathBundle, tau: float | None = None) -> np.ndarray:
    """``Delta_n I_g = g_n dW_n`` per X-mode, ``[P, N, M_X]``.

    When ``tau`` is a multiple ``K`` of the step of ``g`` the increments of
    ``K`` consecutive data steps are summed.
    """
    P = bundle.n_paths
    if g.n_steps != bundle.n_steps or not np.isclose(g.step, bundle.tau):
        raise ParameterError("step process and bundle disagree on the time grid")
    gv = g.batch(P)
    if g.diagonal:
        if gv.shape[-1] != bundle.E.shape[-1]:
            raise ParameterError("g has the wrong number of modes")
        inc = gv * bundle.driving_increments()
    else:
        if gv.shape[-2:] != (bundle.E.shape[-1], bundle.dW.shape[-1]):
            raise ParameterError(f"g slices have shape {gv.shape[-2:]}, bundle needs "
                                 f"({bundle.E.shape[-1]}, {bundle.dW.shape[-1]})")
        inc = np.einsum("pnkm,pnm->pnk", gv, bundle.dW)
    if tau is None or np.isclose(tau, g.step):
        return inc
    K = tau / g.step
    if abs(K - round(K)) > 1e-9 or round(K) < 1 or g.n_steps % round(K):
        raise ParameterError("tau must be an integer multiple of the data step dividing the horizon")
    K = int(round(K))
    return inc.reshape(P, g.n_steps // K, K, -1).sum(axis=2)


def _power_recursion(m: np.ndarray, inc: np.ndarray) -> np.ndarray:
    """``Y_0 = 0``, ``Y_{n+1} = m (Y_n + inc_n)`` along axis -2."""
    shape = inc.shape[:-2] + (inc.shape[-2] + 1, inc.shape[-1])
    Y = np.zeros(shape)
    y = np.zeros(inc.shape[:-2] + inc.shape[-1:])
    for n in range(inc.shape[-2]):
        y = m * (y + inc[..., n, :])
        Y[..., n + 1, :] = y
    return Y


def run_discrete(op: DiagonalOperator, scheme: SchemeFunction, g: StepProcess, bundle: PathBundle,
                 tau: float | None = None) -> Trajectory:
    """``Y_{n+1} = r(tau A)(Y_n + Delta_n I_g)`` from ``Y_0 = 0``, mode by mode."""
    if bundle.E.shape[-1] != op.dim:
        raise ParameterError("bundle and operator disagree on the number of modes")
    tau = bundle.tau if tau is None else tau
    inc = increments(g, bundle, tau)
    m = scheme_multipliers(op, scheme, tau)
    return Trajectory(_power_recursion(m, inc), tau, "discrete")


def discrete_convolution(kernel: PowerKernel | KernelSequence, g: StepProcess, bundle: PathBundle,
                         variant: str = "causal", tol: float = TAIL_TOLERANCE) -> Trajectory:
    """Causal ``sum_{j<n} k_{n-j} Delta_j I_g`` or anticausal ``sum_{j>=n} k_{j-n} Delta_j I_g``.

    A :class:`PowerKernel` in the causal variant runs the same recursion as
    :func:`run_discrete`, so the two agree bit for bit.
    """
    inc = increments(g, bundle)
    P, N, M = inc.shape
    if variant not in ("causal", "anticausal"):
        raise ParameterError(f"unknown variant {variant!r}")
    if isinstance(kernel, PowerKernel):
        m = np.broadcast_to(np.asarray(kernel.multipliers, dtype=float), (M,))
        if variant == "causal":
            return Trajectory(_power_recursion(m, inc), bundle.tau, "convolution")
        L = N + 1
        kv = m[None, :] ** np.arange(L)[:, None]
        kernel = KernelSequence(kv)
    kv = np.asarray(kernel.values, dtype=float)
    if kv.ndim == 1:
        kv = np.broadcast_to(kv[:, None], (kv.shape[0], M))
    if kv.shape[1] != M:
        raise ParameterError("kernel has the wrong number of modes")
    if kv.shape[0] < N + 1 and kernel.tail_bound > tol:
        raise TruncationError(f"kernel tail bound {kernel.tail_bound:.3e} exceeds {tol:.1e}")
    L = N + 1
    k = np.zeros((L, M))
    k[: min(L, kv.shape[0])] = kv[:L]
    out = np.zeros((P, N + 1, M))
    if variant == "causal":
        out[:, 1:, :] = _convolve(inc, k, causal=True)
    else:
        out[:, :N, :] = _convolve(inc, k, causal=False)
    return Trajectory(out, bundle.tau, "convolution")


_DIRECT_MAX_STEPS = 256


def _convolve(inc: np.ndarray, k: np.ndarray, causal: bool) -> np.ndarray:
    """Row ``n-1`` (causal) or ``n`` (anticausal) of the convolution sums.

    Direct summation up to ``_DIRECT_MAX_STEPS`` steps, FFT beyond.
    """
    P, N, M = inc.shape
    if N > _DIRECT_MAX_STEPS:
        if causal:
            return fftconvolve(inc, k[None, 1:, :], axes=1)[:, :N, :]
        # correlation: sum_j k_{j-n} inc_j = convolution of reversed inc with k
        rev = fftconvolve(inc[:, ::-1, :], k[None, :N, :], axes=1)[:, :N, :]
        return rev[:, ::-1, :]
    out = np.zeros((P, N, M))
    if causal:
        for n in range(1, N + 1):
            out[:, n - 1, :] = np.einsum("pjm,jm->pm", inc[:, :n, :], k[n:0:-1, :])
    else:
        for n in range(N):
            out[:, n, :] = np.einsum("pjm,jm->pm", inc[:, n:, :], k[: N - n, :])
    return out


def _require_diagonal(g: StepProcess, bundle: PathBundle) -> np.ndarray:
    gv = g.batch(bundle.n_paths)
    if not g.diagonal:
        off = gv.copy()
        idx = np.arange(gv.shape[-2])
        if gv.shape[-1] != gv.shape[-2]:
            raise UnsupportedConfigurationError("exact mild solution needs square diagonal coupling")
        off[..., idx, idx] = 0
        if np.any(off != 0):
            raise UnsupportedConfigurationError("exact mild solution needs diagonal coupling")
        gv = gv[..., idx, idx]
    if not bundle.is_diagonal:
        raise UnsupportedConfigurationError("exact mild solution needs the diagonal coupling map")
    return gv


def run_mild_exact(op: DiagonalOperator, g: StepProcess, bundle: PathBundle) -> Trajectory:
    """Mild solution on the grid: ``y(t_{n+1}) = e^{-tau A} y(t_n) + g_n E_n``."""
    gv = _require_diagonal(g, bundle)
    if g.n_steps != bundle.n_steps or not np.isclose(g.step, bundle.tau):
        raise ParameterError("step process and bundle disagree on the time grid")
    decay = np.exp(-bundle.tau * op.eigenvalues)
    inc = gv * bundle.E
    Y = np.zeros((bundle.n_paths, bundle.n_steps + 1, op.dim))
    y = np.zeros((bundle.n_paths, op.dim))
    for n in range(bundle.n_steps):
        y = decay * y + inc[:, n, :]
        Y[:, n + 1, :] = y
    return Trajectory(Y, bundle.tau, "mild")


def mild_at_nodes(op: DiagonalOperator, g: StepProcess, bundle: PathBundle, grid: Trajectory | None = None):
    """Mild solution at the interior sub-interval nodes ``t_n + o_i``, ``[P, N, S-1, M]``."""
    if bundle.offsets is None:
        raise ParameterError("bundle was sampled without sub-interval offsets")
    gv = _require_diagonal(g, bundle)
    grid = run_mild_exact(op, g, bundle) if grid is None else grid
    offs = bundle.offsets
    h = np.diff(offs)
    lam = op.eigenvalues
    S = h.size
    out = np.empty((bundle.n_paths, bundle.n_steps, S - 1, op.dim))
    y = grid.values[:, :-1, :]
    for i in range(S - 1):
        y = np.exp(-lam * h[i]) * y + gv * bundle.E_sub[:, :, i, :]
        out[:, :, i, :] = y
    return out

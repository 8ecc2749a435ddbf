"""Solution-side functionals, Monte Carlo summaries and closed-form second moments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AnalysisError, MonteCarloError, ParameterError
from .evolve import Trajectory
from .noise import StepProcess, gamma_half_norm, phi1, time_weights, weighted_Lp_data_norm
from .rational_calc import EXPONENTIAL, SchemeFunction, _PowerDifference
from .spectral import DiagonalOperator, TraceNorm, scheme_multipliers, space_norm

Z95 = 1.959963984540054


def _step_weights(n_points: int, tau: float, alpha: float) -> np.ndarray:
    """``tau * t_{n+1}^alpha`` for ``n = 0..n_points-1``."""
    return tau * (tau * np.arange(1, n_points + 1)) ** alpha


def dsmr_functional(op: DiagonalOperator, traj: Trajectory, p: float, alpha: float = 0.0,
                    q: float | None = None, power: bool = False):
    """``(sum_{n>=0} tau t_{n+1}^alpha ||A Y_n||^p)^(1/p)`` per path.

    ``power=True`` returns the p-th power (the quantity averaged over paths).
    """
    if not p >= 1:
        raise ParameterError("p must be >= 1")
    if not alpha > -1:
        raise ParameterError("alpha must exceed -1")
    model = op if q is None else op.with_q(q)
    norms = space_norm(model, traj.values, 1.0)
    total = norms**p @ _step_weights(traj.values.shape[-2], traj.step, alpha)
    out = total if power else total ** (1.0 / p)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SupTrace:
    """Both maximal functionals of a trajectory, one value per path."""

    plain: np.ndarray
    weighted: np.ndarray


class SupTraceFunctional:
    """Pathwise ``sup_n ||Y_n||`` in the two trace spaces of the maximal estimate.

    For ``p > 2``: ``sup_n ||Y_n||_{(X_0, X_1)_{1-(1+alpha)/p, p}}`` and
    ``sup_n ((tau n)^alpha ||Y_n||^p_{(X_0, X_1)_{1-1/p, p}})^(1/p)``.
    For ``p = 2`` (Hilbert) both reduce to ``sup_n ||A^{1/2} Y_n||``.
    """

    def __init__(self, op: DiagonalOperator, p: float, alpha: float = 0.0, points_per_decade: int = 40):
        if not p >= 2:
            raise ParameterError("p must be >= 2")
        if p > 2 and not 0 <= alpha < p / 2 - 1:
            raise ParameterError(f"alpha must lie in [0, p/2 - 1) = [0, {p / 2 - 1})")
        if p == 2 and alpha != 0:
            raise ParameterError("p = 2 admits only alpha = 0")
        self.op, self.p, self.alpha = op, float(p), float(alpha)
        if p > 2:
            self.first = TraceNorm(op, 1 - (1 + alpha) / p, p, points_per_decade)
            self.second = TraceNorm(op, 1 - 1 / p, p, points_per_decade)

    def __call__(self, traj: Trajectory) -> SupTrace:
        Y = traj.values[..., 1:, :]
        if self.p == 2:
            v = np.max(space_norm(self.op, Y, 0.5), axis=-1)
            return SupTrace(v, v.copy())
        n = np.arange(1, Y.shape[-2] + 1)
        a = self.first(Y)
        b = self.second(Y) * (traj.step * n) ** (self.alpha / self.p)
        return SupTrace(np.max(a, axis=-1), np.max(b, axis=-1))


def sup_trace_functional(op: DiagonalOperator, traj: Trajectory, p: float, alpha: float = 0.0) -> SupTrace:
    return SupTraceFunctional(op, p, alpha)(traj)


# ---------------------------------------------------------------------------
# Monte Carlo summaries


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int
    median_of_means: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - Z95 * self.stderr, self.mean + Z95 * self.stderr)

    def to_dict(self) -> dict:
        out = {"mean": self.mean, "stderr": self.stderr, "ci95": list(self.ci95), "n": self.n}
        if self.median_of_means is not None:
            out["median_of_means"] = self.median_of_means
        out.update(self.extra)
        return out


def _check_finite(values: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise MonteCarloError(f"{bad.size} path value(s) are not finite (first: path {bad[0]})", bad)


def median_of_means(values: np.ndarray, blocks: int = 8) -> float:
    """Median of ``blocks`` contiguous block means (blocks of equal size, remainder dropped)."""
    n = values.size // blocks * blocks
    if n == 0:
        return float(np.mean(values))
    return float(np.median(values[:n].reshape(blocks, -1).mean(axis=1)))


def summarize(values, p: float | None = None) -> MCEstimate:
    """Mean and standard error of per-path values; median-of-means added when ``p >= 4``."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise ParameterError("need at least two paths")
    _check_finite(v)
    mean = float(np.mean(v))
    stderr = float(np.std(v, ddof=1) / math.sqrt(v.size))
    mom = median_of_means(v) if p is not None and p >= 4 else None
    return MCEstimate(mean, stderr, v.size, mom)


def mc_estimate(path_values, n_paths: int, workers: int | None = None, p: float | None = None) -> MCEstimate:
    """Estimate ``E[f(path)]`` from ``path_values(start, stop) -> values``.

    Paths are evaluated in fixed chunks (see :func:`dsmr_lab.rng.map_paths`),
    so the estimate is deterministic for any worker count.
    """
    from .rng import map_paths

    if n_paths < 16:
        raise ParameterError("mc_estimate needs n_paths >= 16")
    return summarize(map_paths(path_values, n_paths, workers), p)


def ratio_estimate(num, den) -> MCEstimate:
    """``E[num] / E[den]`` with a delta-method standard error."""
    x = np.asarray(num, dtype=float).ravel()
    y = np.asarray(den, dtype=float).ravel()
    if x.size != y.size or x.size < 2:
        raise ParameterError("ratio estimate needs paired samples")
    _check_finite(x)
    _check_finite(y)
    mx, my = float(np.mean(x)), float(np.mean(y))
    if my == 0:
        raise AnalysisError("ratio estimate with vanishing denominator")
    r = mx / my
    if np.all(y == y[0]):
        var = np.var(x, ddof=1) / my**2
    else:
        c = np.cov(x, y, ddof=1)
        var = (c[0, 0] - 2 * r * c[0, 1] + r * r * c[1, 1]) / my**2
    return MCEstimate(r, float(math.sqrt(max(var, 0.0) / x.size)), x.size)


def root_estimate(est: MCEstimate, p: float) -> MCEstimate:
    """``m^(1/p)`` of a moment estimate with its delta-method standard error."""
    if est.mean <= 0:
        return MCEstimate(0.0, 0.0, est.n)
    root = est.mean ** (1.0 / p)
    return MCEstimate(root, root * est.stderr / (p * est.mean), est.n,
                      None if est.median_of_means is None else max(est.median_of_means, 0.0) ** (1.0 / p))


# ---------------------------------------------------------------------------
# closed forms for q = 2, deterministic g


def _row_energy(g: StepProcess) -> np.ndarray:
    """``||row_k(g_n)||^2``, shape ``[N, M]``."""
    if g.random:
        raise ParameterError("closed forms need a deterministic step process")
    v = g.values
    return v * v if g.diagonal else np.sum(v * v, axis=-1)


def second_moments_discrete(op: DiagonalOperator, scheme: SchemeFunction, g: StepProcess,
                            tau: float | None = None) -> np.ndarray:
    """``E|Y_{n,k}|^2`` for ``n = 0..N``: ``S_{n+1} = m^2 (S_n + tau G_n)``."""
    tau = g.step if tau is None else tau
    if not np.isclose(tau, g.step):
        raise ParameterError("closed forms use the data grid as scheme grid")
    m2 = scheme_multipliers(op, scheme, tau) ** 2
    G = _row_energy(g)
    S = np.zeros((G.shape[0] + 1, G.shape[1]))
    for n in range(G.shape[0]):
        S[n + 1] = m2 * (S[n] + tau * G[n])
    return S


def dsmr_constant_p2_closed_form(op: DiagonalOperator, scheme: SchemeFunction, g: StepProcess,
                                 tau: float | None = None, N: int | None = None, alpha: float = 0.0,
                                 parts: bool = False):
    """Exact ``(sum_n tau t_{n+1}^alpha E||A Y_n||^2)^(1/2) / ||g||_{L^2(w_alpha; gamma(H, X_{1/2}))}``.

    Itô's isometry gives ``E||A Y_n||^2`` in closed form for deterministic
    ``g`` in the Hilbert model.  ``parts=True`` also returns numerator and
    denominator.
    """
    if op.q_exponent != 2:
        raise ParameterError("the closed form needs the Hilbert model q = 2")
    if N is not None and N != g.n_steps:
        raise ParameterError("N must match the step process")
    S = second_moments_discrete(op, scheme, g, tau)
    energy = S @ op.eigenvalues**2
    num = math.sqrt(float(energy @ _step_weights(energy.size, g.step, alpha)))
    den = weighted_Lp_data_norm(op, g, 2, alpha)
    if den == 0:
        raise AnalysisError("data norm vanishes: the DSMR ratio is undefined")
    return (num / den, num, den) if parts else num / den


def _exp_minus_r(scheme: SchemeFunction, z: np.ndarray) -> np.ndarray:
    """``e^{-z} - r(z)`` without cancellation for small ``z``."""
    if scheme.kind == EXPONENTIAL:
        return np.zeros_like(z)
    return -np.real(_PowerDifference(scheme)(z.astype(complex), np.ones_like(z)))


def scheme_difference_p2_closed_form(op: DiagonalOperator, scheme_a: SchemeFunction, scheme_b: SchemeFunction,
                                     g: StepProcess, alpha: float = 0.0, parts: bool = False):
    """Exact ``(sum_n tau t_{n+1}^alpha E||A(Y^a_n - Y^b_n)||^2)^(1/2)`` over the data norm.

    With ``c_m = a^m - b^m`` the recursion ``c_{m+1} = a c_m + (a - b) b^m``
    keeps the factor ``a - b`` explicit, so nearby schemes lose no digits.
    """
    if op.q_exponent != 2:
        raise ParameterError("the closed form needs the Hilbert model q = 2")
    tau = g.step
    z = tau * op.eigenvalues
    a = scheme_multipliers(op, scheme_a, tau)
    b = scheme_multipliers(op, scheme_b, tau)
    d = _exp_minus_r(scheme_b, z) - _exp_minus_r(scheme_a, z)     # a - b
    w = tau * _row_energy(g)
    N = w.shape[0]
    Q = np.zeros(op.dim)
    X = np.zeros(op.dim)
    B = np.zeros(op.dim)
    out = np.zeros((N + 1, op.dim))
    for n in range(N):
        Bt = B + w[n]
        Q = a * a * Q + 2 * a * d * X + d * d * Bt
        X = a * b * X + d * b * Bt
        B = b * b * Bt
        out[n + 1] = Q
    energy = out @ op.eigenvalues**2
    num = math.sqrt(float(energy @ _step_weights(N + 1, tau, alpha)))
    den = weighted_Lp_data_norm(op, g, 2, alpha)
    if den == 0:
        raise AnalysisError("data norm vanishes: the ratio is undefined")
    return (num / den, num, den) if parts else num / den


def gauss_legendre_offsets(tau: float, n_nodes: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Sub-interval offsets ``[0, s_1..s_n, tau]`` and the quadrature weights of the ``s_i``."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    s = tau * (1 + x) / 2
    return np.concatenate([[0.0], s, [tau]]), tau * w / 2


def convergence_error_p2_closed_form(op: DiagonalOperator, scheme: SchemeFunction, g: StepProcess,
                                     beta: float, n_nodes: int = 8) -> float:
    """Exact ``(sum_n sum_i w_i E||A^beta (y(t_n + s_i) - Y_n)||^2)^(1/2)`` for deterministic diagonal ``g``.

    ``s_i, w_i`` is the Gauss-Legendre rule on each step, the same quadrature
    as the Monte Carlo estimator.
    """
    if op.q_exponent != 2:
        raise ParameterError("the closed form needs the Hilbert model q = 2")
    if not g.diagonal:
        raise ParameterError("closed form implemented for diagonal coupling")
    tau = g.step
    lam = op.eigenvalues
    G = _row_energy(g)
    r = scheme_multipliers(op, scheme, tau)
    e1 = np.exp(-lam * tau)
    V = tau * phi1(2 * lam * tau)
    C = tau * phi1(lam * tau)
    offs, wq = gauss_legendre_offsets(tau, n_nodes)
    s = offs[1:-1]
    es = np.exp(-np.outer(s, lam))              # [I, M]
    Vs = s[:, None] * phi1(2 * np.outer(s, lam))
    S1 = np.zeros(op.dim)
    S2 = np.zeros(op.dim)
    S3 = np.zeros(op.dim)
    total = np.zeros(op.dim)
    for n in range(G.shape[0]):
        err = es**2 * V * S1 - 2 * es * C * S2 + tau * S3 + G[n] * Vs     # [I, M]
        total += wq @ err
        S1 = e1 * e1 * S1 + G[n]
        S2 = e1 * r * S2 + r * G[n]
        S3 = r * r * (S3 + G[n])
    return math.sqrt(float(total @ lam ** (2 * beta)))


def data_norm_p2(op: DiagonalOperator, g: StepProcess, smoothness: float) -> float:
    """``||g||_{L^2(0, T; gamma(H, X_s))}`` for deterministic ``g``."""
    w = time_weights(g.n_steps, g.step, 0.0)
    return math.sqrt(float(gamma_half_norm(op, g.values, 2, smoothness, diagonal=g.diagonal) ** 2 @ w))

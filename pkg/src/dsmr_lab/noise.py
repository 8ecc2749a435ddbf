"""Brownian increments with exact Ornstein-Uhlenbeck integrals, step processes and data norms.

For an X-mode ``k`` driven by the H-mode ``kappa(k)``, a step of length ``h``
carries the pair ``(dW, E)`` with ``E = int e^{-lam_k (t_end - s)} dW(s)``.
The pair is jointly Gaussian with

* ``Var dW = h``,
* ``Cov(dW, E) = (1 - e^{-lam h}) / lam``,
* ``Var E = (1 - e^{-2 lam h}) / (2 lam)``,

so discrete schemes (which see ``dW``) and the exact mild solution (which
sees ``E``) can be run on the same path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ParameterError
from .rng import ALGORITHM_ID, path_generator
from .spectral import DiagonalOperator

# Maclaurin coefficients of phi(2x) - phi(x)^2, phi(x) = (1 - e^{-x}) / x
_CONDVAR_SERIES = np.array([
    0.0, 0.0, 1 / 12, -1 / 12, 17 / 360, -7 / 360, 43 / 6720, -107 / 60480,
    769 / 1814400, -163 / 1814400, 4097 / 239500800, -709 / 239500800,
])
_SERIES_SWITCH = 0.1


def phi1(x) -> np.ndarray:
    """``(1 - e^{-x}) / x`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = x != 0
    out[nz] = -np.expm1(-x[nz]) / x[nz]
    return out


def ou_moments(lam, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(Cov(dW, E), Var E, Var(E | dW))`` for a step of length ``h``."""
    lam = np.asarray(lam, dtype=float)
    x = lam * h
    cov = h * phi1(x)
    var = h * phi1(2 * x)
    cond = np.empty_like(x)
    small = x < _SERIES_SWITCH
    cond[small] = h * np.polynomial.polynomial.polyval(x[small], _CONDVAR_SERIES)
    cond[~small] = h * (phi1(2 * x[~small]) - phi1(x[~small]) ** 2)
    if np.any(~np.isfinite(cond)) or np.any(cond < 0):
        raise NumericError("2x2 increment covariance is not positive semidefinite")
    return cov, var, cond


def diagonal_coupling(M_X: int) -> np.ndarray:
    return np.arange(M_X)


@dataclass
class PathBundle:
    """Increments for a block of paths.

    ``dW``: ``[P, N, M_H]``; ``E``: ``[P, N, M_X]``.  With sub-interval
    ``offsets`` (``0 = o_0 < ... < o_S = tau``) the per-sub-interval pairs are
    kept in ``dW_sub`` ``[P, N, S, M_H]`` and ``E_sub`` ``[P, N, S, M_X]``.
    """

    dW: np.ndarray
    E: np.ndarray
    tau: float
    eigenvalues: np.ndarray
    coupling: np.ndarray
    seed: int
    paths: np.ndarray
    tag: str = "bundle"
    offsets: np.ndarray | None = None
    dW_sub: np.ndarray | None = None
    E_sub: np.ndarray | None = None
    algorithm: str = field(default=ALGORITHM_ID)

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.dW.shape[2] == self.E.shape[2] and np.array_equal(self.coupling, np.arange(self.E.shape[2]))

    def driving_increments(self) -> np.ndarray:
        """``dW`` of the H-mode coupled to each X-mode, ``[P, N, M_X]``."""
        return self.dW[:, :, self.coupling]


def sample_bundle(
    eigenvalues,
    N: int,
    tau: float,
    M_H: int | None = None,
    coupling=None,
    *,
    seed: int = 0,
    paths=None,
    tag: str = "bundle",
    offsets=None,
) -> PathBundle:
    """Draw exact ``(dW, E)`` pairs for the given paths.

    ``coupling[k]`` is the H-mode driving X-mode ``k`` (an injective map);
    H-modes not in its range receive plain ``N(0, h)`` increments.  Each path
    is drawn from its own keyed stream, so any path can be replayed alone.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    M_X = lam.size
    if N < 1 or not tau > 0:
        raise ParameterError("need N >= 1 and tau > 0")
    kappa = diagonal_coupling(M_X) if coupling is None else np.asarray(coupling, dtype=int)
    M_H = M_X if M_H is None else int(M_H)
    if kappa.shape != (M_X,) or kappa.min() < 0 or kappa.max() >= M_H:
        raise ParameterError("coupling must map every X-mode to an H-mode index")
    if np.unique(kappa).size != M_X:
        raise ParameterError("coupling must be injective (one X-mode per driving H-mode)")
    if paths is None:
        paths = np.arange(1)
    paths = np.atleast_1d(np.asarray(paths, dtype=int))
    if offsets is None:
        offs = np.array([0.0, tau])
    else:
        offs = np.asarray(offsets, dtype=float)
        if offs[0] != 0 or not np.isclose(offs[-1], tau) or np.any(np.diff(offs) <= 0):
            raise ParameterError("offsets must increase from 0 to tau")
        offs = offs.copy()
        offs[-1] = tau
    h = np.diff(offs)
    S = h.size
    chol = []
    for hi in h:
        cov, _, cond = ou_moments(lam, hi)
        chol.append((cov / np.sqrt(hi), np.sqrt(cond)))
    a = np.stack([c[0] for c in chol])            # [S, M_X]
    b = np.stack([c[1] for c in chol])
    sq_h = np.sqrt(h)[:, None]                     # [S, 1]
    P = paths.size
    dW_sub = np.empty((P, N, S, M_H))
    E_sub = np.empty((P, N, S, M_X))
    for i, path in enumerate(paths):
        z = path_generator(seed, path, tag).standard_normal((N, S, M_H, 2))
        dW_sub[i] = sq_h * z[..., 0]
        zc = z[:, :, kappa, :]
        E_sub[i] = a * zc[..., 0] + b * zc[..., 1]
    dW = dW_sub.sum(axis=2)
    decay = np.exp(-lam[None, :] * (tau - offs[1:])[:, None])   # [S, M_X]
    E = np.einsum("pnsk,sk->pnk", E_sub, decay)
    keep_sub = offsets is not None
    return PathBundle(
        dW=dW, E=E, tau=float(tau), eigenvalues=lam, coupling=kappa, seed=int(seed), paths=paths,
        tag=tag, offsets=offs if keep_sub else None,
        dW_sub=dW_sub if keep_sub else None, E_sub=E_sub if keep_sub else None,
    )


def dump_bundle(bundle: PathBundle, directory: str | Path) -> Path:
    """Write little-endian float64 arrays and a JSON sidecar describing them."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = f"{bundle.tag}_p{int(bundle.paths[0])}-{int(bundle.paths[-1])}"
    arrays = {"dW": bundle.dW, "E": bundle.E}
    meta = {"tau": bundle.tau, "seed": bundle.seed, "paths": bundle.paths.tolist(),
            "algorithm": bundle.algorithm, "coupling": bundle.coupling.tolist(), "arrays": {}}
    for name, arr in arrays.items():
        fname = f"{stem}_{name}.f64"
        np.ascontiguousarray(arr, dtype="<f8").tofile(d / fname)
        meta["arrays"][name] = {"file": fname, "shape": list(arr.shape), "dtype": "<f8"}
    side = d / f"{stem}.json"
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return side


# ---------------------------------------------------------------------------
# step processes


@dataclass(frozen=True)
class StepProcess:
    """Piecewise-constant integrand ``g = sum g_n 1_[t_n, t_{n+1})``.

    ``values`` is ``[N, M_X]`` (diagonal coupling) or ``[N, M_X, M_H]``; a
    leading path axis marks a random process.
    """

    values: np.ndarray
    step: float
    diagonal: bool = True
    random: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        want = (2 if self.diagonal else 3) + (1 if self.random else 0)
        if v.ndim != want:
            raise ParameterError(f"step-process values need {want} axes, got shape {v.shape}")
        if not self.step > 0:
            raise ParameterError("step must be positive")
        if not np.all(np.isfinite(v)):
            raise ParameterError("step-process values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def n_steps(self) -> int:
        return self.values.shape[1 if self.random else 0]

    @property
    def total_time(self) -> float:
        return self.n_steps * self.step

    @property
    def n_modes(self) -> int:
        return self.values.shape[2 if self.random else 1]

    def scaled(self, c: float) -> "StepProcess":
        return StepProcess(c * self.values, self.step, self.diagonal, self.random)

    def __add__(self, other: "StepProcess") -> "StepProcess":
        if (self.step, self.diagonal) != (other.step, other.diagonal):
            raise ParameterError("step processes must share step and coupling layout")
        return StepProcess(self.values + other.values, self.step, self.diagonal, self.random or other.random)

    def batch(self, n_paths: int) -> np.ndarray:
        """Values with an explicit path axis of length ``n_paths``."""
        if self.random:
            if self.values.shape[0] != n_paths:
                raise ParameterError("random process path count does not match")
            return self.values
        return np.broadcast_to(self.values, (n_paths,) + self.values.shape)

    def as_full(self) -> "StepProcess":
        if not self.diagonal:
            return self
        v = self.values
        full = np.zeros(v.shape + (v.shape[-1],))
        idx = np.arange(v.shape[-1])
        full[..., idx, idx] = v
        return StepProcess(full, self.step, False, self.random)


def gamma_half_norm(op: DiagonalOperator, g_slice, q: float | None = None, smoothness: float = 0.5,
                    diagonal: bool = False):
    """Norm of ``g_n`` in ``gamma(H, X_s)``, ``s = smoothness``.

    ``g_slice`` is an ``[..., M_X, M_H]`` coupling matrix, or ``[..., M_X]``
    holding the diagonal when ``diagonal`` is set.  For ``q = 2`` the value
    is the Hilbert-Schmidt norm of ``A^s g_n``; for ``q > 2`` it is the
    square-function norm ``(sum_k (lam_k^s ||row_k||_2)^q)^(1/q)``.
    """
    q = op.q_exponent if q is None else float(q)
    g = np.asarray(g_slice, dtype=float)
    lam = op.eigenvalues
    if diagonal:
        if g.shape[-1] != lam.size:
            raise ParameterError(f"g slice shape {g.shape} does not match {lam.size} modes")
        rows = np.abs(g)
    else:
        if g.ndim < 2 or g.shape[-2] != lam.size:
            raise ParameterError(f"g slice shape {g.shape} does not match {lam.size} modes")
        rows = np.sqrt(np.sum(g * g, axis=-1))
    scaled = lam**smoothness * rows
    if q == 2:
        out = np.sqrt(np.sum(scaled * scaled, axis=-1))
    else:
        out = np.sum(scaled**q, axis=-1) ** (1.0 / q)
    return float(out) if np.ndim(out) == 0 else out


def time_weights(N: int, tau: float, alpha: float) -> np.ndarray:
    """``int_{t_n}^{t_{n+1}} t^alpha dt`` for ``n = 0..N-1``."""
    if not alpha > -1:
        raise ParameterError("weight exponent must exceed -1")
    t = tau * np.arange(N + 1)
    return (t[1:] ** (alpha + 1) - t[:-1] ** (alpha + 1)) / (alpha + 1)


def check_weight(p: float, alpha: float) -> None:
    """Require ``p >= 2`` and ``-1 < alpha < p/2 - 1`` (the weighted regularity range)."""
    if not p >= 2:
        raise ParameterError("p must be >= 2")
    if not -1 < alpha < p / 2 - 1:
        raise ParameterError(f"alpha = {alpha} outside (-1, p/2 - 1) = (-1, {p / 2 - 1})")


def weighted_Lp_data_norm(op: DiagonalOperator, g: StepProcess, p: float, alpha: float = 0.0,
                          q: float | None = None, smoothness: float = 0.5, power: bool = False):
    """``(sum_n int_{t_n}^{t_{n+1}} t^alpha dt ||g_n||^p_{gamma(H, X_s)})^(1/p)``.

    Random processes give one value per path.  ``power=True`` returns the
    p-th power.  Only ``alpha > -1`` (integrability) is enforced here; the
    studies impose the narrower regularity range via :func:`check_weight`.
    """
    if not p >= 1:
        raise ParameterError("p must be >= 1")
    w = time_weights(g.n_steps, g.step, alpha)
    norms = gamma_half_norm(op, g.values, q, smoothness, diagonal=g.diagonal)
    total = np.asarray(norms, dtype=float) ** p @ w
    out = total if power else total ** (1.0 / p)
    return float(out) if np.ndim(out) == 0 else out


PROCESS_KINDS = ("constant", "mode_decay", "random_adapted", "high_frequency")


def resonant_band(op: DiagonalOperator, tau: float, band=(0.25, 4.0)) -> np.ndarray:
    """Mask of modes with ``lam tau`` in ``band``; the mode closest to ``lam tau = 1`` if empty."""
    z = op.eigenvalues * tau
    mask = (z >= band[0]) & (z <= band[1])
    if not mask.any():
        mask[np.argmin(np.abs(np.log(z)))] = True
    return mask


def make_test_process(kind: str, op: DiagonalOperator, N: int, tau: float, params: dict | None = None,
                      bundle: PathBundle | None = None) -> StepProcess:
    """Canned integrands with diagonal coupling.

    * ``constant``: ``g_n = c I`` on the first ``modes`` modes.
    * ``mode_decay``: ``g_{n,k} = k^{-s}``.
    * ``random_adapted``: ``g_{n,k} = k^{-s} (1 + amp sin W_k(t_n))`` built from
      the bundle's own increments strictly before ``t_n``.
    * ``high_frequency``: sign-alternating ``(-1)^n lam_k^{-1/2}`` on the modes
      with ``lam_k tau`` in ``band``, the scales the step resolves worst.
    """
    params = dict(params or {})
    M = op.dim
    modes = int(params.get("modes", M))
    if not 1 <= modes <= M:
        raise ParameterError("modes must lie in 1..dim")
    k = np.arange(1, M + 1, dtype=float)
    support = (k <= modes).astype(float)
    if kind == "constant":
        c = float(params.get("value", 1.0))
        values = np.broadcast_to(c * support, (N, M)).copy()
        return StepProcess(values, tau)
    if kind == "mode_decay":
        s = float(params.get("s", 1.0))
        with np.errstate(over="ignore"):
            prof = k**-s * support
        if not np.all(np.isfinite(prof)):
            raise ParameterError(f"mode_decay exponent s = {s} overflows")
        return StepProcess(np.broadcast_to(prof, (N, M)).copy(), tau)
    if kind == "high_frequency":
        band = tuple(params.get("band", (0.25, 4.0)))
        mask = resonant_band(op, tau, band) & (support > 0)
        if not mask.any():
            raise ParameterError("high_frequency band contains no retained mode")
        prof = np.where(mask, op.eigenvalues**-0.5, 0.0)
        sign = (-1.0) ** np.arange(N)
        return StepProcess(sign[:, None] * prof[None, :], tau)
    if kind == "random_adapted":
        if bundle is None:
            raise ParameterError("random_adapted needs the path bundle it is adapted to")
        if bundle.n_steps != N or bundle.E.shape[2] != M:
            raise ParameterError("bundle does not match (N, modes)")
        s = float(params.get("s", 1.0))
        amp = float(params.get("amplitude", 0.5))
        dWk = bundle.driving_increments()
        W_before = np.cumsum(dWk, axis=1) - dWk       # W(t_n), uses increments 0..n-1
        values = (k**-s * support) * (1 + amp * np.sin(W_before))
        return StepProcess(values, tau, diagonal=True, random=True)
    raise ParameterError(f"unknown process kind {kind!r}")

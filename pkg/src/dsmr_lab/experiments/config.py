"""Study configuration: YAML schema, defaults and admissibility checks.

A config file is a YAML mapping::

    schema_version: 1
    study: dsmr_uniformity
    operator: {type: dirichlet_laplacian, modes: 64, length: 3.141592653589793}
    schemes: [exponential_euler, implicit_euler, pade_1_2]
    cases: [{p: 2, q: 2, method: closed_form}, {p: 4, q: 2, method: mc}]
    taus: {base: 1.0, levels: [2, 8]}      # or an explicit list of steps
    T: 1.0
    n_paths: 512
    seed: 20240611
    probes: [{kind: constant}, {kind: mode_decay, s: 1}]
    out: results/dsmr_uniformity

Keys left out take the study's default.  ``cases`` holds the study-specific
parameter tuples (``alpha``/``beta`` for convergence, ``p``/``q``/``alpha``
elsewhere).  Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError, DSMRError
from ..kernels import FAMILIES
from ..noise import PROCESS_KINDS
from ..rational_calc import builtin_scheme
from ..spectral import operator_from_spec

SCHEMA_VERSION = 1
STUDIES = ("convergence", "dsmr_uniformity", "scheme_equivalence", "maximal_estimate",
           "weighted_extrapolation", "kernel_audit", "scheme_audit")
SIMULATION_STUDIES = STUDIES[:5]

# Versioned probe family shared by the uniformity-type studies.
PROBE_FAMILY_VERSION = 1
DEFAULT_PROBES = (
    {"kind": "constant"},
    {"kind": "mode_decay", "s": 1.0},
    {"kind": "mode_decay", "s": 2.0},
    {"kind": "random_adapted", "s": 1.0, "amplitude": 0.5},
    {"kind": "high_frequency"},
)

_LAPLACIAN_64 = {"type": "dirichlet_laplacian", "modes": 64, "length": math.pi}

_DEFAULTS: dict[str, dict] = {
    "convergence": {
        "operator": _LAPLACIAN_64,
        "schemes": ["implicit_euler"],
        "cases": [{"alpha": 0.0, "beta": 0.0}, {"alpha": 0.0, "beta": 0.4}, {"alpha": 0.25, "beta": 0.5}],
        "taus": {"base": 1.0, "levels": [5, 9]},
        "T": 0.25,
        "n_paths": 1024,
        "seed": 20240601,
        "probes": [{"kind": "resonant", "band": [0.25, 4.0]}],
    },
    "dsmr_uniformity": {
        "operator": _LAPLACIAN_64,
        "schemes": ["exponential_euler", "implicit_euler", "pade_1_2"],
        "cases": [{"p": 2, "q": 2, "method": "closed_form"}, {"p": 4, "q": 2, "method": "mc"},
                  {"p": 4, "q": 4, "method": "mc"}],
        "taus": {"base": 1.0, "levels": [2, 8]},
        "T": 1.0,
        "n_paths": 512,
        "seed": 20240602,
        "probes": list(DEFAULT_PROBES),
    },
    "scheme_equivalence": {
        "operator": _LAPLACIAN_64,
        "schemes": ["exponential_euler", "implicit_euler", "exponential_euler", "pade_1_2"],
        "cases": [{"p": 2, "q": 2, "method": "closed_form"}, {"p": 4, "q": 2, "method": "mc"}],
        "taus": {"base": 1.0, "levels": [2, 8]},
        "T": 1.0,
        "n_paths": 512,
        "seed": 20240603,
        "probes": list(DEFAULT_PROBES),
    },
    "maximal_estimate": {
        "operator": {"type": "dirichlet_laplacian", "modes": 32, "length": math.pi},
        "schemes": ["exponential_euler", "implicit_euler"],
        "cases": [{"p": 2, "q": 2, "alpha": 0.0}, {"p": 4, "q": 2, "alpha": 0.0},
                  {"p": 4, "q": 2, "alpha": 0.5}],
        "taus": {"base": 1.0, "levels": [2, 7]},
        "T": 1.0,
        "n_paths": 256,
        "seed": 20240604,
        "probes": list(DEFAULT_PROBES),
    },
    "weighted_extrapolation": {
        "operator": _LAPLACIAN_64,
        "schemes": ["exponential_euler", "implicit_euler", "pade_1_2"],
        "cases": [{"p": 4, "q": 2, "alpha": 0.0}, {"p": 4, "q": 2, "alpha": 0.5}],
        "taus": {"base": 1.0, "levels": [2, 8]},
        "T": 1.0,
        "n_paths": 512,
        "seed": 20240602,
        "probes": list(DEFAULT_PROBES),
    },
    "kernel_audit": {
        "cases": [{"family": "exp_basic"}, {"family": "exp_phi"}, {"family": "exp_variant"},
                  {"family": "rational_basic", "scheme": "implicit_euler"},
                  {"family": "rational_phi", "scheme": "pade_1_2"},
                  {"family": "rational_variant", "scheme": "pade_1_3"},
                  {"family": "j_reference"}],
        "sigma": 0.25,
        "n_paths": 256,
        "seed": 20240605,
    },
    "scheme_audit": {
        "schemes": ["exponential_euler", "implicit_euler", "pade_0_2", "pade_1_2", "pade_0_3",
                    "pade_1_3", "crank_nicolson", "explicit_euler"],
    },
}

_KEYS = ("schema_version", "study", "operator", "schemes", "cases", "taus", "T", "n_paths", "seed",
         "probes", "sigma", "out")


@dataclass
class StudyConfig:
    """A validated study configuration; ``taus`` is always an explicit list."""

    study: str
    operator: dict = field(default_factory=dict)
    schemes: list = field(default_factory=list)
    cases: list = field(default_factory=list)
    taus: list = field(default_factory=list)
    T: float = 1.0
    n_paths: int = 0
    seed: int = 0
    probes: list = field(default_factory=list)
    sigma: float = 0.25
    out: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def n_steps(self) -> list[int]:
        return [int(round(self.T / t)) for t in self.taus]


def default_config(study: str) -> StudyConfig:
    return build_config({"study": study})


def _expand_taus(raw) -> list[float]:
    if isinstance(raw, dict):
        base = float(raw.get("base", 1.0))
        lo, hi = raw["levels"]
        return [base * 2.0 ** -k for k in range(int(lo), int(hi) + 1)]
    return [float(t) for t in raw]


def build_config(raw: dict) -> StudyConfig:
    """Merge ``raw`` over the study defaults and validate."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - set(_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    study = raw.get("study")
    if study not in STUDIES:
        raise ConfigError(f"study must be one of {STUDIES}, got {study!r}")
    merged = copy.deepcopy(_DEFAULTS[study])
    merged.update({k: copy.deepcopy(v) for k, v in raw.items() if k not in ("study", "schema_version")})
    try:
        cfg = StudyConfig(
            study=study,
            operator=dict(merged.get("operator", {})),
            schemes=[str(s) for s in merged.get("schemes", [])],
            cases=[dict(c) for c in merged.get("cases", [])],
            taus=_expand_taus(merged["taus"]) if "taus" in merged else [],
            T=float(merged.get("T", 1.0)),
            n_paths=int(merged.get("n_paths", 0)),
            seed=int(merged.get("seed", 0)),
            probes=[dict(p) for p in merged.get("probes", [])],
            sigma=float(merged.get("sigma", 0.25)),
            out=None if merged.get("out") is None else str(merged["out"]),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    validate(cfg)
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> StudyConfig:
    """Read a YAML config and apply ``overrides`` (e.g. seed or n_paths from the CLI)."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    raw = dict(raw or {})
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(raw)


# ---------------------------------------------------------------------------
# admissibility


def _is_dyadic(taus: list[float]) -> bool:
    return all(math.isclose(a / b, 2.0, rel_tol=1e-12) for a, b in zip(taus, taus[1:]))


def _check_common(cfg: StudyConfig, min_levels: int) -> None:
    try:
        op = operator_from_spec(cfg.operator)
    except (DSMRError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"operator: {exc}") from exc
    if cfg.probes and op.q_exponent != 2:
        raise ConfigError("set q per case, not on the operator")
    taus = cfg.taus
    if len(taus) < 2 or len(set(taus)) < 2:
        raise ConfigError("a tau list needs at least two distinct step sizes")
    if len(taus) < min_levels:
        raise ConfigError(f"{cfg.study} needs at least {min_levels} step sizes, got {len(taus)}")
    if any(not t > 0 for t in taus):
        raise ConfigError("step sizes must be positive")
    if not _is_dyadic(sorted(taus, reverse=True)) or taus != sorted(taus, reverse=True):
        raise ConfigError("taus must be decreasing dyadic refinements of a base step")
    if not cfg.T > 0:
        raise ConfigError("T must be positive")
    for t in taus:
        n = cfg.T / t
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ConfigError(f"tau = {t} does not divide T = {cfg.T}")
    if cfg.n_paths < 16:
        raise ConfigError("n_paths must be at least 16")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if not cfg.schemes:
        raise ConfigError("at least one scheme is required")
    for name in cfg.schemes:
        _admissible_scheme(name)
    if not cfg.probes:
        raise ConfigError("at least one probe process is required")
    for pr in cfg.probes:
        _check_probe(pr, cfg.study)


def _admissible_scheme(name: str):
    try:
        scheme = builtin_scheme(name)
    except DSMRError as exc:
        raise ConfigError(str(exc)) from exc
    if not scheme.dsmr_admissible:
        raise ConfigError(f"scheme {name!r} is not admissible: need the exponential or r(inf) = 0")
    return scheme


def _check_probe(pr: dict, study: str) -> None:
    kind = pr.get("kind")
    allowed = ("resonant",) if study == "convergence" else PROCESS_KINDS
    if kind not in allowed:
        raise ConfigError(f"probe kind {kind!r} not in {allowed}")
    if kind == "constant" and float(pr.get("value", 1.0)) == 0:
        raise ConfigError("degenerate probe: g = 0 makes every ratio undefined")
    if kind == "random_adapted" and float(pr.get("amplitude", 0.5)) <= -1:
        raise ConfigError("random_adapted amplitude must exceed -1 so that g does not vanish")
    if kind == "resonant" and float(pr.get("scale", 1.0)) == 0:
        raise ConfigError("degenerate probe: g = 0 makes every error identically zero")


def _num(case: dict, key: str, default=None) -> float:
    if key not in case and default is None:
        raise ConfigError(f"case {case} lacks {key!r}")
    try:
        return float(case.get(key, default))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"case {case}: {key} is not a number") from exc


def _check_cases(cfg: StudyConfig) -> None:
    if not cfg.cases:
        raise ConfigError("at least one case is required")
    for case in cfg.cases:
        if cfg.study == "convergence":
            a, b = _num(case, "alpha"), _num(case, "beta")
            if not 0 <= a <= b <= 1:
                raise ConfigError(f"convergence needs 0 <= alpha <= beta <= 1, got ({a}, {b})")
            if not b - a < 0.5:
                raise ConfigError(f"convergence needs beta - alpha < 1/2, got {b - a}")
            continue
        p, q = _num(case, "p"), _num(case, "q", 2.0)
        alpha = _num(case, "alpha", 0.0)
        if not p >= 2 or not q >= 2:
            raise ConfigError(f"case {case}: need p >= 2 and q >= 2")
        method = case.get("method", "mc")
        if method not in ("mc", "closed_form"):
            raise ConfigError(f"case {case}: method must be 'mc' or 'closed_form'")
        if method == "closed_form" and (p != 2 or q != 2):
            raise ConfigError(f"case {case}: closed forms exist only for p = q = 2")
        if cfg.study in ("dsmr_uniformity", "scheme_equivalence") and alpha != 0:
            raise ConfigError(f"{cfg.study} is unweighted; use weighted_extrapolation for alpha != 0")
        if cfg.study == "maximal_estimate":
            if p == 2 and (q != 2 or alpha != 0):
                raise ConfigError("the p = 2 maximal case needs q = 2 and alpha = 0")
            if p > 2 and not 0 <= alpha < p / 2 - 1:
                raise ConfigError(f"maximal estimate needs alpha in [0, p/2 - 1) = [0, {p / 2 - 1}), got {alpha}")
        if cfg.study == "weighted_extrapolation":
            if not -1 < alpha < p / 2 - 1:
                raise ConfigError(f"alpha = {alpha} outside the open interval (-1, p/2 - 1) = (-1, {p / 2 - 1})")


def validate(cfg: StudyConfig) -> None:
    """Raise :class:`ConfigError` unless ``cfg`` is admissible for its study."""
    study = cfg.study
    if study == "scheme_audit":
        if not cfg.schemes:
            raise ConfigError("scheme_audit needs at least one scheme")
        for name in cfg.schemes:
            try:
                builtin_scheme(name)
            except DSMRError as exc:
                raise ConfigError(str(exc)) from exc
        return
    if study == "kernel_audit":
        if not cfg.cases:
            raise ConfigError("kernel_audit needs at least one family")
        for case in cfg.cases:
            fam = case.get("family")
            if fam not in FAMILIES or fam == "custom":
                raise ConfigError(f"kernel_audit family {fam!r} not in {FAMILIES[:-1]}")
            if fam.startswith("rational"):
                if "scheme" not in case:
                    raise ConfigError(f"{fam} needs a scheme")
                scheme = _admissible_scheme(case["scheme"])
                if not scheme.is_rational:
                    raise ConfigError(f"{fam} needs a rational scheme")
        if not 0 < cfg.sigma < 0.5:
            raise ConfigError("sigma must lie in (0, 1/2)")
        if cfg.n_paths < 16:
            raise ConfigError("n_paths must be at least 16")
        return
    min_levels = {"convergence": 3, "dsmr_uniformity": 6, "scheme_equivalence": 6,
                  "maximal_estimate": 2, "weighted_extrapolation": 2}[study]
    _check_common(cfg, min_levels)
    _check_cases(cfg)
    if study == "convergence":
        if cfg.operator.get("q", 2) != 2:
            raise ConfigError("convergence runs in the Hilbert model q = 2")
    if study == "scheme_equivalence":
        if len(cfg.schemes) < 2 or cfg.schemes[0] != "exponential_euler":
            raise ConfigError("scheme_equivalence needs >= 2 schemes, the first being exponential_euler")
    if study == "weighted_extrapolation":
        ps = {_num(c, "p") for c in cfg.cases}
        alphas = {_num(c, "alpha", 0.0) for c in cfg.cases}
        if 0.0 not in alphas or len(alphas) < 2:
            raise ConfigError("weighted_extrapolation needs alpha = 0 and at least one further alpha")
        if len(ps) != 1 or any(c.get("method", "mc") != "mc" for c in cfg.cases):
            raise ConfigError("weighted_extrapolation compares Monte Carlo cases at one common p")

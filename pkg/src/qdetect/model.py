"""Diffusion model family, disorder prior and delay penalty.

The observation process lives on (0, inf) and solves

    dX_t = (mu0(X_t) + 1{theta <= t} (mu1(X_t) - mu0(X_t))) dt + sigma(X_t) dB_t.

Two families are supported. ``eta_sigmoid`` is the solvable subclass with

    sigma(x) = x * s(x),   s(x) = s0 + (s1 - s0) * x / (1 + x),
    mu_i(x)  = eta_i * sigma(x)**2 / x,   eta0 + eta1 = 1,

so the signal/noise ratio rho(x) = (eta1 - eta0)**2 * s(x)**2 moves
monotonically between its two limits. ``tabulated`` models are sampled
coefficient tables, accepted only by simulation, filtering and risk
evaluation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CapabilityError, ConfigError, NonPositiveSigma, SubclassViolation

ETA_SIGMOID = "eta_sigmoid"
TABULATED = "tabulated"
LINEAR = "linear"
EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class CoefficientTable:
    x: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("x", "mu0", "mu1", "sigma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.x.size
        if n < 2 or any(getattr(self, k).shape != (n,) for k in ("mu0", "mu1", "sigma")):
            raise ConfigError("table columns must be 1-d arrays of equal length >= 2", "model.table")
        if np.any(self.x <= 0) or np.any(np.diff(self.x) <= 0):
            raise ConfigError("table x grid must be positive and strictly increasing", "model.table.x")

    def interp(self, column: np.ndarray, x):
        # piecewise linear in log-x; np.interp extrapolates flat
        return np.interp(np.log(x), np.log(self.x), column)


@dataclass(frozen=True)
class DiffusionModel:
    family: str
    eta0: float = 0.0
    eta1: float = 1.0
    s0: float = 1.0
    s1: float = 1.0
    z: float = 1.0
    table: CoefficientTable | None = None

    def __post_init__(self):
        if self.family not in (ETA_SIGMOID, TABULATED):
            raise ConfigError(f"unknown family {self.family!r}", "model.family")
        if not self.z > 0:
            raise ConfigError("z must be positive", "model.z")
        if self.family == ETA_SIGMOID:
            if not (self.s0 > 0 and self.s1 > 0 and math.isfinite(self.s0) and math.isfinite(self.s1)):
                raise NonPositiveSigma("eta_sigmoid requires finite s0, s1 > 0")
        elif self.table is None:
            raise ConfigError("tabulated model needs a table", "model.table")

    @classmethod
    def eta_sigmoid(cls, eta0, eta1, s0, s1, z=1.0):
        return cls(ETA_SIGMOID, eta0=float(eta0), eta1=float(eta1), s0=float(s0), s1=float(s1), z=float(z))

    @classmethod
    def tabulated(cls, x, mu0, mu1, sigma, z=1.0):
        return cls(TABULATED, z=float(z), table=CoefficientTable(x, mu0, mu1, sigma))

    @property
    def is_subclass(self) -> bool:
        return self.family == ETA_SIGMOID

    @property
    def eta(self) -> float:
        """1 / (eta1 - eta0); only meaningful for the subclass."""
        self.require_subclass()
        return 1.0 / (self.eta1 - self.eta0)

    def require_subclass(self):
        if not self.is_subclass:
            raise CapabilityError("solver requires subclass model")

    def with_z(self, z: float) -> "DiffusionModel":
        return DiffusionModel(self.family, self.eta0, self.eta1, self.s0, self.s1, float(z), self.table)

    def with_constant_s(self, s: float) -> "DiffusionModel":
        """Same drift exponents with the modulation frozen at ``s``."""
        self.require_subclass()
        return DiffusionModel.eta_sigmoid(self.eta0, self.eta1, s, s, self.z)

    # --- coefficients (vectorized over x) ---

    def s(self, x):
        x = np.asarray(x, dtype=float)
        return self.s0 + (self.s1 - self.s0) * x / (1.0 + x)

    def sigma(self, x):
        if self.family == ETA_SIGMOID:
            return np.asarray(x, dtype=float) * self.s(x)
        return self.table.interp(self.table.sigma, x)

    def mu0(self, x):
        if self.family == ETA_SIGMOID:
            x = np.asarray(x, dtype=float)
            return self.eta0 * x * self.s(x) ** 2
        return self.table.interp(self.table.mu0, x)

    def mu1(self, x):
        if self.family == ETA_SIGMOID:
            x = np.asarray(x, dtype=float)
            return self.eta1 * x * self.s(x) ** 2
        return self.table.interp(self.table.mu1, x)

    def signal_ratio(self, x):
        """(mu1 - mu0) / sigma, signed."""
        if self.family == ETA_SIGMOID:
            return (self.eta1 - self.eta0) * self.s(x)
        sig = self.sigma(x)
        return (self.mu1(x) - self.mu0(x)) / sig

    def log_lik_coefs(self, x):
        """Integrands r = (mu1-mu0)/sigma^2 and q = (mu1^2-mu0^2)/sigma^2."""
        if self.family == ETA_SIGMOID:
            x = np.asarray(x, dtype=float)
            d = self.eta1 - self.eta0
            s2 = self.s(x) ** 2
            return d / x, (self.eta1 ** 2 - self.eta0 ** 2) * s2
        m0, m1, sig = self.mu0(x), self.mu1(x), self.sigma(x)
        if np.any(sig <= 0):
            raise NonPositiveSigma("sigma(x) <= 0 encountered")
        s2 = sig * sig
        return (m1 - m0) / s2, (m1 * m1 - m0 * m0) / s2

    def rho_limits(self) -> tuple[float, float]:
        """(rho as x -> 0, rho as x -> inf) for the subclass."""
        self.require_subclass()
        d2 = (self.eta1 - self.eta0) ** 2
        return d2 * self.s0 ** 2, d2 * self.s1 ** 2

    def rho_bounds(self) -> tuple[float, float]:
        a, b = self.rho_limits()
        return min(a, b), max(a, b)


def rho(model: DiffusionModel, x):
    """Signal/noise ratio ((mu1 - mu0) / sigma)^2."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0):
        raise ValueError("rho requires x > 0")
    sig = model.sigma(xa)
    if np.any(sig <= 0):
        raise NonPositiveSigma("sigma(x) <= 0 encountered")
    out = model.signal_ratio(xa) ** 2
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Prior:
    pi: float
    lam: float

    def __post_init__(self):
        # pi = 1 is admitted for degenerate "change already happened" experiments
        if not 0.0 <= self.pi <= 1.0:
            raise ConfigError("pi must lie in [0, 1]", "prior.pi")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive", "prior.lambda")

    @property
    def phi0(self) -> float:
        return self.pi / (1.0 - self.pi) if self.pi < 1.0 else math.inf

    def horizon(self, tail: float = 1e-4) -> float:
        """Smallest T with P(theta > T) <= tail."""
        return math.log((1.0 - self.pi) / tail) / self.lam if self.pi < 1 - tail else 0.0


@dataclass(frozen=True)
class PenaltySpec:
    kind: str
    c: float
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in (LINEAR, EXPONENTIAL):
            raise ConfigError(f"unknown penalty kind {self.kind!r}", "penalty.kind")
        if not self.c > 0:
            raise ConfigError("c must be positive", "penalty.c")
        # alpha = 0 is legal for filtering (it collapses onto the linear statistic)
        if self.kind == EXPONENTIAL and not self.alpha >= 0:
            raise ConfigError("alpha must be non-negative", "penalty.alpha")

    @classmethod
    def linear(cls, c):
        return cls(LINEAR, float(c))

    @classmethod
    def exponential(cls, c, alpha):
        return cls(EXPONENTIAL, float(c), float(alpha))

    @property
    def rate_shift(self) -> float:
        """Extra exponential rate of the weighted likelihood ratio (alpha, or 0)."""
        return self.alpha if self.kind == EXPONENTIAL else 0.0

    @property
    def running_cost(self) -> float:
        """Coefficient of (1 - pi_t) phi_t in the running cost."""
        return self.c * self.alpha if self.kind == EXPONENTIAL else self.c

    def lower_bound(self, prior: Prior) -> float:
        """Level of phi below which stopping is never optimal."""
        return prior.lam / self.running_cost


def penalty_cost(spec: PenaltySpec, delay):
    d = np.maximum(np.asarray(delay, dtype=float), 0.0)
    if spec.kind == LINEAR:
        out = spec.c * d
    else:
        out = spec.c * np.expm1(spec.alpha * d)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ValidationReport:
    K: float
    K_growth: float
    K_ratio: float
    ratio_min: float
    ratio_max: float
    subclass: bool
    checks: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def check_subclass(model: DiffusionModel):
    if model.is_subclass:
        if not math.isclose(model.eta0 + model.eta1, 1.0, abs_tol=1e-12):
            raise SubclassViolation(f"eta0 + eta1 = {model.eta0 + model.eta1:g} != 1")
        if model.eta0 == model.eta1:
            raise SubclassViolation("eta0 == eta1")


def validate_model(model: DiffusionModel, grid) -> ValidationReport:
    """Witness the growth and signal bounds on ``grid``.

    Only sign and positivity violations raise; the smallest K consistent with
    the grid is reported since a finite grid cannot certify a global bound.
    """
    x = np.asarray(grid, dtype=float)
    if x.ndim != 1 or x.size == 0 or np.any(x <= 0) or np.any(np.diff(x) <= 0):
        raise ValueError("grid must be strictly increasing and positive")
    check_subclass(model)
    sig = model.sigma(x)
    bad = np.flatnonzero(~(sig > 0))
    if bad.size:
        raise NonPositiveSigma(f"sigma <= 0 at x = {x[bad[0]]:g}")
    m0, m1 = model.mu0(x), model.mu1(x)
    growth = np.maximum(np.abs(m0), np.abs(m1)) + np.abs(sig)
    growth = growth / (1.0 + x)
    ratio = (m1 - m0) / sig
    report = ValidationReport(
        K=float(max(growth.max(), np.abs(ratio).max())),
        K_growth=float(growth.max()),
        K_ratio=float(np.abs(ratio).max()),
        ratio_min=float(ratio.min()),
        ratio_max=float(ratio.max()),
        subclass=model.is_subclass,
    )
    report.checks["sigma_positive"] = True
    nonzero = np.abs(ratio) > 0
    report.checks["signal_nonzero"] = bool(nonzero.all())
    if not nonzero.all():
        report.warnings.append(f"mu1 - mu0 vanishes at x = {x[~nonzero][0]:g}")
    same_sign = bool(np.all(ratio > 0) or np.all(ratio < 0))
    report.checks["signal_one_sign"] = same_sign
    if not same_sign:
        report.warnings.append("(mu1 - mu0)/sigma changes sign on the grid")
    report.checks["growth_bound"] = bool(np.isfinite(report.K_growth))
    report.checks["ratio_bound"] = bool(np.isfinite(report.K_ratio))
    return report


# --- JSON config ---

_MODEL_KEYS = {
    ETA_SIGMOID: {"family", "eta0", "eta1", "s0", "s1", "z"},
    TABULATED: {"family", "z", "table"},
}
_TABLE_KEYS = {"x", "mu0", "mu1", "sigma"}
_PRIOR_KEYS = {"pi", "lambda"}
_PENALTY_KEYS = {LINEAR: {"kind", "c"}, EXPONENTIAL: {"kind", "c", "alpha"}}
_TOP_KEYS = {"model", "prior", "penalty", "x0", "simulation", "solver", "risk"}


@dataclass(frozen=True)
class Config:
    model: DiffusionModel
    prior: Prior
    penalty: PenaltySpec
    x0: float = 1.0
    simulation: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    risk: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, compare=False)

    def with_penalty(self, penalty: PenaltySpec) -> "Config":
        raw = dict(self.raw)
        raw["penalty"] = penalty_to_dict(penalty)
        return Config(self.model, self.prior, penalty, self.x0, self.simulation, self.solver, self.risk, raw)


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError("missing required field", f"{path}.{key}" if path else key)
    return d[key]


def _check_keys(d: Any, allowed: set, path: str):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", path)
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown field(s) {', '.join(extra)}", path)


def _number(d: dict, key: str, path: str, default=None) -> float:
    if key not in d and default is not None:
        return float(default)
    v = _require(d, key, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("expected a number", f"{path}.{key}")
    return float(v)


def model_from_dict(d: dict) -> DiffusionModel:
    if not isinstance(d, dict):
        raise ConfigError("expected an object", "model")
    family = _require(d, "family", "model")
    if family not in _MODEL_KEYS:
        raise ConfigError(f"unknown family {family!r}", "model.family")
    _check_keys(d, _MODEL_KEYS[family], "model")
    z = _number(d, "z", "model", default=1.0)
    if family == ETA_SIGMOID:
        model = DiffusionModel.eta_sigmoid(
            _number(d, "eta0", "model"), _number(d, "eta1", "model"),
            _number(d, "s0", "model"), _number(d, "s1", "model"), z,
        )
        check_subclass(model)
        return model
    t = _require(d, "table", "model")
    _check_keys(t, _TABLE_KEYS, "model.table")
    cols = [np.asarray(_require(t, k, "model.table"), dtype=float) for k in ("x", "mu0", "mu1", "sigma")]
    return DiffusionModel.tabulated(*cols, z=z)


def model_to_dict(model: DiffusionModel) -> dict:
    if model.is_subclass:
        return {"family": ETA_SIGMOID, "eta0": model.eta0, "eta1": model.eta1,
                "s0": model.s0, "s1": model.s1, "z": model.z}
    t = model.table
    return {"family": TABULATED, "z": model.z,
            "table": {k: getattr(t, k).tolist() for k in ("x", "mu0", "mu1", "sigma")}}


def penalty_to_dict(p: PenaltySpec) -> dict:
    out = {"kind": p.kind, "c": p.c}
    if p.kind == EXPONENTIAL:
        out["alpha"] = p.alpha
    return out


def config_from_dict(d: dict) -> Config:
    _check_keys(d, _TOP_KEYS, "config")
    model = model_from_dict(_require(d, "model", ""))
    pr = _require(d, "prior", "")
    _check_keys(pr, _PRIOR_KEYS, "prior")
    prior = Prior(_number(pr, "pi", "prior"), _number(pr, "lambda", "prior"))
    pe = _require(d, "penalty", "")
    if not isinstance(pe, dict):
        raise ConfigError("expected an object", "penalty")
    kind = _require(pe, "kind", "penalty")
    if kind not in _PENALTY_KEYS:
        raise ConfigError(f"unknown penalty kind {kind!r}", "penalty.kind")
    _check_keys(pe, _PENALTY_KEYS[kind], "penalty")
    if kind == LINEAR:
        penalty = PenaltySpec.linear(_number(pe, "c", "penalty"))
    else:
        penalty = PenaltySpec.exponential(_number(pe, "c", "penalty"), _number(pe, "alpha", "penalty"))
    x0 = _number(d, "x0", "", default=model.z)
    if not x0 > 0:
        raise ConfigError("x0 must be positive", "x0")
    sections = {}
    for name in ("simulation", "solver", "risk"):
        sec = d.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError("expected an object", name)
        sections[name] = dict(sec)
    return Config(model, prior, penalty, x0, raw=d, **sections)


def load_config(path) -> Config:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(d)

"""Normal-form change of variables y = log(phi) - int_z^x (mu1 - mu0)/sigma^2 dw.

For the subclass the integral is (1/eta) log(x/z) and the inverse is
x = z e^{-eta y} phi^eta; tabulated models fall back on quadrature in log-x
and a bracketing root search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import NotInvertible, QuadratureFailure
from .model import DiffusionModel

QUAD_TOL = 1e-10


@dataclass(frozen=True)
class ChangeOfVariables:
    model: DiffusionModel
    z: float

    @classmethod
    def of(cls, model: DiffusionModel, z: float | None = None) -> "ChangeOfVariables":
        return cls(model, float(model.z if z is None else z))

    @property
    def eta(self) -> float:
        return self.model.eta

    def with_model(self, model: DiffusionModel) -> "ChangeOfVariables":
        return ChangeOfVariables(model, self.z)

    def drift_integral(self, x: float) -> float:
        """int_z^x (mu1 - mu0)/sigma^2 dw."""
        m = self.model
        if m.is_subclass:
            return math.log(x / self.z) / m.eta
        a, b = math.log(self.z), math.log(x)
        if a == b:
            return 0.0
        lo, hi = min(a, b), max(a, b)
        knots = np.log(m.table.x)
        knots = knots[(knots > lo) & (knots < hi)]

        def f(t):
            w = math.exp(t)
            r, _ = m.log_lik_coefs(w)
            return float(r) * w

        val, err = integrate.quad(f, lo, hi, points=knots if knots.size else None,
                                  epsabs=QUAD_TOL, epsrel=0.0, limit=200 + 2 * knots.size)
        if not err <= QUAD_TOL:
            raise QuadratureFailure(f"drift integral to x={x:g} reached error {err:.2e}")
        return val if b > a else -val


def y_of(cov: ChangeOfVariables, phi, x):
    phi_a, x_a = np.asarray(phi, dtype=float), np.asarray(x, dtype=float)
    if cov.model.is_subclass:
        out = np.log(phi_a) - np.log(x_a / cov.z) / cov.model.eta
        return float(out) if out.ndim == 0 else out
    if phi_a.ndim or x_a.ndim:
        return np.vectorize(lambda p, w: math.log(p) - cov.drift_integral(w))(phi_a, x_a)
    return math.log(float(phi)) - cov.drift_integral(float(x))


def _check_invertible(model: DiffusionModel):
    t = model.table
    d = t.mu1 - t.mu0
    if not (np.all(d > 0) or np.all(d < 0)):
        raise NotInvertible("(mu1 - mu0)/sigma^2 changes sign; y is not monotone in x")


def x_of(cov: ChangeOfVariables, phi, y):
    m = cov.model
    if m.is_subclass:
        eta = m.eta
        out = cov.z * np.exp(-eta * np.asarray(y, dtype=float)) * np.asarray(phi, dtype=float) ** eta
        return float(out) if out.ndim == 0 else out
    if np.ndim(phi) or np.ndim(y):
        return np.vectorize(lambda p, v: x_of(cov, float(p), float(v)))(phi, y)
    _check_invertible(m)
    target = math.log(phi) - y

    def g(t):
        return cov.drift_integral(math.exp(t)) - target

    lo = hi = math.log(cov.z)
    step = 1.0
    glo = ghi = g(lo)
    for _ in range(200):
        if glo <= 0 <= ghi or ghi <= 0 <= glo:
            break
        lo, hi = lo - step, hi + step
        glo, ghi = g(lo), g(hi)
        step *= 1.5
    else:
        raise NotInvertible(f"no x with y(phi={phi:g}, x) = {y:g}")
    t = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(t)


def rho_hat(cov: ChangeOfVariables, phi, y):
    """Signal/noise ratio at x(phi, y); the diffusion coefficient of the transformed operator."""
    m = cov.model
    m.require_subclass()
    x = x_of(cov, phi, y)
    return (m.eta1 - m.eta0) ** 2 * m.s(x) ** 2


def y_drift(lam: float, shift: float, phi):
    """Rate of the bounded-variation coordinate Y for the subclass."""
    return lam / phi + lam + shift

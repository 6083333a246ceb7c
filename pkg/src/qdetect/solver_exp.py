"""Exponential delay penalty: fundamental solution, smooth-fit boundary and value.

The bounded positive solution H_inf of

    1/2 rho_hat phi^2 H'' + (lambda + (lambda+alpha) phi) H' - lambda H = 0

is traced through v = H'/H and log H in t = log phi, which keeps every
quantity finite however fast H grows. Only ratios of H_inf are used, so the
normalization H_inf(phi_min) = 1 drops out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .boundary import COORD_Y, BoundaryTable, ValueSlice
from .errors import ConfigError, NoRoot, StiffnessFailure
from .geometry import ChangeOfVariables
from .model import EXPONENTIAL, Prior

PHI_MIN = 1e-6
RTOL = 1e-10
H_MAX_LIMIT = 1e9


def _rho_hat_fn(cov: ChangeOfVariables, y: float):
    m = cov.model
    m.require_subclass()
    d2 = (m.eta1 - m.eta0) ** 2
    if m.s0 == m.s1:
        r = d2 * m.s0 ** 2
        return lambda phi: r
    scale = cov.z * math.exp(-m.eta * y)
    eta, s0, ds = m.eta, m.s0, m.s1 - m.s0

    def rho(phi):
        x = scale * phi ** eta
        s = s0 + ds * x / (1.0 + x) if math.isfinite(x) else m.s1
        return d2 * s * s

    return rho


@dataclass
class FundamentalSolution:
    y: float
    phi_min: float
    phi_max: float
    sol: object
    rtol: float

    def _state(self, phi):
        phi = np.asarray(phi, dtype=float)
        t = np.log(np.clip(phi, self.phi_min, self.phi_max))
        v, logH = self.sol.sol(t)
        # below phi_min H is continued by its regular expansion H ~ H(phi_min) e^{phi - phi_min}
        below = phi < self.phi_min
        logH = np.where(below, logH + (phi - self.phi_min), logH)
        v = np.where(below, 1.0, v)
        return v, logH

    def log_values(self, phi):
        out = self._state(phi)[1]
        return float(out) if out.ndim == 0 else out

    def values(self, phi):
        return np.exp(self.log_values(phi))

    def log_slope(self, phi):
        """H_inf'/H_inf."""
        out = self._state(phi)[0]
        return float(out) if out.ndim == 0 else out

    def derivative(self, phi):
        return self.log_slope(phi) * self.values(phi)

    def ratio(self, phi, h):
        """H_inf(phi)/H_inf(h)."""
        return np.exp(self.log_values(phi) - self.log_values(h))


def fundamental_Hinf(cov: ChangeOfVariables, prior: Prior, alpha: float, y: float, phi_max: float,
                     phi_min: float = PHI_MIN, rtol: float = RTOL) -> FundamentalSolution:
    if not phi_max > phi_min:
        raise ValueError("phi_max must exceed phi_min")
    rho = _rho_hat_fn(cov, y)
    lam, k = prior.lam, prior.lam + alpha

    def rhs(t, s):
        phi = math.exp(t)
        v = s[0]
        return [2.0 * (lam - (lam + k * phi) * v) / (rho(phi) * phi) - phi * v * v, phi * v]

    def jac(t, s):
        phi = math.exp(t)
        v = s[0]
        return [[-2.0 * (lam + k * phi) / (rho(phi) * phi) - 2.0 * phi * v, 0.0], [phi, 0.0]]

    sol = integrate.solve_ivp(rhs, (math.log(phi_min), math.log(phi_max)), [1.0, 0.0], method="Radau",
                              jac=jac, rtol=rtol, atol=rtol * 1e-2, dense_output=True)
    if not sol.success:
        raise StiffnessFailure(f"fundamental solution integration failed at y={y:g}: {sol.message}")
    steps = np.diff(sol.t)
    if steps.size and steps.min() < 1e-14:
        raise StiffnessFailure(f"step size collapsed to {steps.min():.2e} at y={y:g}")
    return FundamentalSolution(float(y), phi_min, phi_max, sol, rtol)


def _require_alpha(alpha: float):
    if not alpha > 0:
        raise ConfigError("exponential boundary requires alpha > 0", "penalty.alpha")


def smooth_fit_residual(fs: FundamentalSolution, c: float, h: float) -> float:
    """dH/dphi at h- for the value built on threshold h; zero at the boundary."""
    return fs.log_slope(h) * (c * (1.0 + h) + 1.0) - c


def solve_boundary_exp(cov: ChangeOfVariables, prior: Prior, c: float, alpha: float, y: float,
                       tol: float = 1e-8, return_solution: bool = False):
    """Smooth-fit root h of v(h)(c(1+h)+1) = c above lambda/(c alpha)."""
    _require_alpha(alpha)
    lower = prior.lam / (c * alpha)
    hi = 4.0 * lower
    while True:
        fs = fundamental_Hinf(cov, prior, alpha, y, hi * 1.01)
        lo = lower * (1 + 1e-9)
        r_lo = smooth_fit_residual(fs, c, lo)
        if r_lo <= 0:
            raise NoRoot(f"smooth-fit residual nonpositive at the lower bound (y={y:g})")
        grid = np.geomspace(lo, hi, 64)
        r = np.array([smooth_fit_residual(fs, c, g) for g in grid])
        neg = np.nonzero(r < 0)[0]
        if neg.size:
            a, b = grid[neg[0] - 1], grid[neg[0]]
            break
        if hi > H_MAX_LIMIT:
            raise NoRoot(f"no smooth-fit root below {H_MAX_LIMIT:g} (y={y:g})")
        hi *= 8.0
    h = optimize.brentq(lambda g: smooth_fit_residual(fs, c, g), a, b, xtol=tol * 1e-4, rtol=1e-15)
    return (h, fs) if return_solution else h


def solve_boundary_exp_table(cov: ChangeOfVariables, prior: Prior, c: float, alpha: float, y_grid,
                             tol: float = 1e-8) -> BoundaryTable:
    y_grid = np.atleast_1d(np.asarray(y_grid, dtype=float))
    const = cov.model.s0 == cov.model.s1
    hs, res = [], []
    for y in y_grid:
        if const and hs:
            hs.append(hs[0])
            res.append(res[0])
            continue
        h, fs = solve_boundary_exp(cov, prior, c, alpha, float(y), tol, return_solution=True)
        hs.append(h)
        res.append(smooth_fit_residual(fs, c, h))
    meta = {"lower_bound": prior.lam / (c * alpha), "max_residual": float(np.max(np.abs(res))),
            "residuals": res, "alpha": alpha}
    return BoundaryTable(COORD_Y, y_grid, np.array(hs), EXPONENTIAL, cov.z, "exponential", tol, meta)


def value_from_solution(fs: FundamentalSolution, c: float, phi, h: float):
    phi = np.asarray(phi, dtype=float)
    inside = phi < h
    H = np.ones_like(phi)
    if np.any(inside):
        p = phi[inside]
        H[inside] = (c * (1.0 + h) + 1.0) * fs.ratio(p, h) - c * (1.0 + p)
    H = np.clip(H, 0.0, 1.0)
    return float(H) if H.ndim == 0 else H


def value_exp(cov: ChangeOfVariables, prior: Prior, c: float, alpha: float, phi, y: float, h: float):
    """H(phi, y; h); the full value is (1-pi) H, with payoff 1 at and beyond h."""
    fs = fundamental_Hinf(cov, prior, alpha, y, max(h, PHI_MIN * 10) * 1.01)
    return value_from_solution(fs, c, phi, h)


def value_slice_exp(cov: ChangeOfVariables, prior: Prior, c: float, alpha: float, y: float, h: float,
                    phi_grid) -> ValueSlice:
    phi_grid = np.asarray(phi_grid, dtype=float)
    return ValueSlice(float(y), phi_grid, np.atleast_1d(value_exp(cov, prior, c, alpha, phi_grid, y, h)),
                      float(h), "H")

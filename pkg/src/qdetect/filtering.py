"""Likelihood ratio, weighted likelihood ratios and posterior along an observed path.

The continuous-time formulas

    log L_t = int r(X) dX - 1/2 int q(X) dt,
    phi_t   = e^{kappa t} L_t (phi_0 + int_0^t lambda e^{-kappa s} / L_s ds),

are discretized with left-endpoint rules in X and L; the exponential kernel
of the time integral is integrated exactly over each step, so the filter is
exact when the observation carries no information (L = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import EXPONENTIAL, DiffusionModel, PenaltySpec, Prior
from .simulate import PHI_CAP, SamplePath


@dataclass(frozen=True)
class FilterState:
    t: float
    logL: float
    phi: float
    pi: float
    saturated: bool = False


def update_logL(logL, model: DiffusionModel, x_prev, x_next, dt):
    r, q = model.log_lik_coefs(x_prev)
    return logL + r * (x_next - x_prev) - 0.5 * q * dt


def effective_step(kappa: float, dt: float) -> float:
    """int_0^dt e^{-kappa s} ds, the weight of the prior inflow over one step."""
    if kappa == 0.0:
        return dt
    return -math.expm1(-kappa * dt) / kappa


def phi_step(phi, lam: float, kappa: float, L_ratio, dt: float):
    grow = math.exp(kappa * dt)
    out = grow * L_ratio * (phi + lam * effective_step(kappa, dt))
    return np.minimum(out, PHI_CAP)


def update_phi(phi, prior: Prior, penalty: PenaltySpec, L_ratio, dt: float):
    """Advance the weighted likelihood ratio matching ``penalty`` by one step."""
    kappa = prior.lam + (penalty.rate_shift if penalty.kind == EXPONENTIAL else 0.0)
    return phi_step(phi, prior.lam, kappa, L_ratio, dt)


@dataclass(frozen=True)
class FilterTrack:
    """Filter output along a path.

    ``phi`` is the statistic matching the penalty; ``pi`` always comes from
    the linear statistic ``phi_lin`` (they coincide for a linear penalty).
    """

    t: np.ndarray
    logL: np.ndarray
    phi: np.ndarray
    pi: np.ndarray
    phi_lin: np.ndarray

    def __len__(self):
        return self.t.size

    def __getitem__(self, k) -> FilterState:
        phi = float(self.phi[k])
        return FilterState(float(self.t[k]), float(self.logL[k]), phi, float(self.pi[k]), phi >= PHI_CAP)

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def saturated(self) -> bool:
        return bool(np.any(self.phi >= PHI_CAP))


def run_filter(path: SamplePath, model: DiffusionModel, prior: Prior, penalty: PenaltySpec) -> FilterTrack:
    X, t = np.asarray(path.X, dtype=float), np.asarray(path.times, dtype=float)
    n = X.size - 1
    logL = np.zeros(n + 1)
    lin = np.empty(n + 1)
    lin[0] = min(prior.phi0, PHI_CAP)
    exp_case = penalty.kind == EXPONENTIAL
    stat = np.empty(n + 1) if exp_case else lin
    stat[0] = lin[0]
    if n:
        dts = np.diff(t)
        r, q = model.log_lik_coefs(X[:-1])
        incr = r * np.diff(X) - 0.5 * q * dts
        logL[1:] = np.cumsum(incr)
        ratios = np.exp(incr)
        lam = prior.lam
        kappa = lam + (penalty.rate_shift if exp_case else 0.0)
        for k in range(n):
            lin[k + 1] = phi_step(lin[k], lam, lam, ratios[k], dts[k])
            if exp_case:
                stat[k + 1] = phi_step(stat[k], lam, kappa, ratios[k], dts[k])
    pi = lin / (1.0 + lin)
    return FilterTrack(t, logL, stat, pi, lin)


def innovation_increments(model: DiffusionModel, X, pi, dt: float) -> np.ndarray:
    """Discrete innovation dBbar = dX/sigma - (mu0/sigma + pi (mu1-mu0)/sigma) dt."""
    X = np.asarray(X, dtype=float)
    x = X[:-1]
    sig = model.sigma(x)
    return np.diff(X) / sig - (model.mu0(x) / sig + np.asarray(pi)[:-1] * model.signal_ratio(x)) * dt

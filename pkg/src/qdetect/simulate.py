"""Euler-Maruyama sample paths of the observation and of the sufficient statistics.

Randomness is drawn from counter-based Philox streams keyed by
``(seed, path_index)``, so a path's increments do not depend on how many
other paths are simulated or in which order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StateUnderflow
from .model import EXPONENTIAL, DiffusionModel, PenaltySpec, Prior

X_FLOOR = 1e-10
PI_CEIL = 1.0 - 1e-12
PHI_CAP = 1e12


@dataclass(frozen=True)
class SimGrid:
    horizon: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.horizon >= self.step:
            raise ValueError("horizon must be at least one step")

    @property
    def n_steps(self) -> int:
        # guard against T/dt landing a hair above an integer
        return int(math.ceil(self.horizon / self.step - 1e-9))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.step

    def index_of(self, t: float) -> int:
        return min(int(round(t / self.step)), self.n_steps)


@dataclass(frozen=True)
class SamplePath:
    times: np.ndarray
    X: np.ndarray
    dB: np.ndarray
    theta: float
    seed: int | None = None
    clamps: int = 0


@dataclass(frozen=True)
class JointPath:
    times: np.ndarray
    pi: np.ndarray
    phi: np.ndarray
    X: np.ndarray
    dBbar: np.ndarray
    seed: int | None = None
    clamps: int = 0
    # max |pi_sde - phi/(1+phi)| when the debug mode also evolves pi by its own SDE
    pi_drift: float | None = None


def path_rng(seed: int, index: int = 0) -> np.random.Generator:
    key = np.array([int(seed) % 2**64, int(index) % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _theta_from(prior: Prior, u: float, e: float) -> float:
    return 0.0 if u < prior.pi else e / prior.lam


def draw_disorder_time(prior: Prior, rng_seed: int, index: int = 0) -> float:
    """theta = 0 with probability pi, otherwise Exp(lambda)."""
    rng = path_rng(rng_seed, index)
    return _theta_from(prior, rng.random(), rng.standard_exponential())


def draw_path_inputs(prior: Prior, seed: int, index: int, n_steps: int, dt: float):
    """Disorder time and Brownian increments for path ``index`` of a Monte Carlo run."""
    rng = path_rng(seed, index)
    theta = _theta_from(prior, rng.random(), rng.standard_exponential())
    return theta, rng.standard_normal(n_steps) * math.sqrt(dt)


def coefficients(model: DiffusionModel, x):
    """(mu0, mu1, sigma) at x with a single evaluation of the modulation."""
    if model.is_subclass:
        s = model.s(x)
        xs2 = x * s * s
        return model.eta0 * xs2, model.eta1 * xs2, x * s
    return model.mu0(x), model.mu1(x), model.sigma(x)


def euler_x_step(model: DiffusionModel, x, changed, dB, dt):
    """One Euler step of the observation; returns (x_next, clamped_mask)."""
    m0, m1, sig = coefficients(model, x)
    drift = np.where(changed, m1, m0)
    x_next = x + drift * dt + sig * dB
    clamped = x_next < X_FLOOR
    return np.where(clamped, X_FLOOR, x_next), clamped


def _check_clamps(clamps: int, n_steps: int, max_clamp_fraction: float):
    if clamps > max_clamp_fraction * n_steps:
        raise StateUnderflow(f"positivity clamp hit on {clamps} of {n_steps} steps")


def simulate_observation(model: DiffusionModel, theta: float, x0: float, grid: SimGrid,
                         rng_seed: int, max_clamp_fraction: float = 0.01) -> SamplePath:
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    n, dt = grid.n_steps, grid.step
    dB = path_rng(rng_seed).standard_normal(n) * math.sqrt(dt)
    return _observation_from_increments(model, theta, x0, grid, dB, rng_seed, max_clamp_fraction)


def _observation_from_increments(model, theta, x0, grid, dB, seed, max_clamp_fraction=0.01):
    n, dt = grid.n_steps, grid.step
    times = grid.times
    X = np.empty(n + 1)
    X[0] = x0
    clamps = 0
    x = float(x0)
    for k in range(n):
        x, clamped = euler_x_step(model, x, theta <= times[k], dB[k], dt)
        x = float(x)
        clamps += bool(clamped)
        X[k + 1] = x
    _check_clamps(clamps, n, max_clamp_fraction)
    return SamplePath(times, X, dB, float(theta), seed, clamps)


def simulate_observation_batch(model: DiffusionModel, thetas, x0: float, grid: SimGrid,
                               seed: int, start: int = 0, max_clamp_fraction: float = 0.01):
    """Vectorized ``simulate_observation`` for paths ``start .. start+len(thetas)``.

    Path ``p`` uses the same stream as ``simulate_observation(..., (seed, p))``
    would with index ``p``. Returns (X, dB) with shapes (m, n+1), (m, n).
    """
    thetas = np.asarray(thetas, dtype=float)
    m, n, dt = thetas.size, grid.n_steps, grid.step
    dB = np.empty((m, n))
    for i in range(m):
        dB[i] = path_rng(seed, start + i).standard_normal(n) * math.sqrt(dt)
    times = grid.times
    X = np.empty((m, n + 1))
    X[:, 0] = x0
    clamps = np.zeros(m, dtype=int)
    for k in range(n):
        X[:, k + 1], clamped = euler_x_step(model, X[:, k], thetas <= times[k], dB[:, k], dt)
        clamps += clamped
    _check_clamps(int(clamps.max(initial=0)), n, max_clamp_fraction)
    return X, dB


def _joint_drifts(lam, shift, rho_x, pi, phi):
    return lam + (lam + shift) * phi + rho_x * pi * phi


def joint_step(model: DiffusionModel, prior: Prior, shift: float, x, phi_lin, phi_stat, dBbar, dt):
    """Euler step of (phi_lin, phi_stat, X) driven by the innovation increment.

    ``shift`` is 0 for the linear statistic and alpha for the exponential
    one; pi is always derived from the linear statistic.
    """
    m0, m1, sig = coefficients(model, x)
    ratio = (m1 - m0) / sig
    r2 = ratio * ratio
    pi = phi_lin / (1.0 + phi_lin)
    lam = prior.lam
    new_lin = phi_lin + _joint_drifts(lam, 0.0, r2, pi, phi_lin) * dt + ratio * phi_lin * dBbar
    if shift == 0.0:
        new_stat = new_lin
    else:
        new_stat = phi_stat + _joint_drifts(lam, shift, r2, pi, phi_stat) * dt + ratio * phi_stat * dBbar
    x_next = x + (m0 + pi * (m1 - m0)) * dt + sig * dBbar
    clamped = x_next < X_FLOOR
    x_next = np.where(clamped, X_FLOOR, x_next)
    new_lin = np.clip(new_lin, 0.0, PHI_CAP)
    new_stat = np.clip(new_stat, 0.0, PHI_CAP)
    return x_next, new_lin, new_stat, clamped


def _pi_of(phi):
    return np.minimum(phi / (1.0 + phi), PI_CEIL)


def simulate_joint(model: DiffusionModel, prior: Prior, penalty: PenaltySpec, x0: float,
                   grid: SimGrid, rng_seed: int, debug: bool = False,
                   max_clamp_fraction: float = 0.01, index: int = 0) -> JointPath:
    """Closed system (pi, phi, X) under the mixture measure.

    ``phi`` holds the statistic matching the penalty (rate lambda for linear,
    lambda + alpha for exponential). With ``debug`` the posterior is also
    evolved by its own SDE and the largest gap to phi/(1+phi) is reported.
    """
    n, dt = grid.n_steps, grid.step
    dBbar = path_rng(rng_seed, index).standard_normal(n) * math.sqrt(dt)
    shift = penalty.rate_shift if penalty.kind == EXPONENTIAL else 0.0
    phi0 = min(prior.phi0, PHI_CAP)
    X = np.empty(n + 1)
    lin = np.empty(n + 1)
    stat = np.empty(n + 1)
    X[0], lin[0], stat[0] = x0, phi0, phi0
    clamps = 0
    pi_sde = min(prior.pi, PI_CEIL)
    gap = 0.0
    for k in range(n):
        if debug:
            ratio = float(model.signal_ratio(X[k]))
            pi_sde = pi_sde + prior.lam * (1 - pi_sde) * dt + ratio * pi_sde * (1 - pi_sde) * dBbar[k]
            pi_sde = min(max(pi_sde, 0.0), PI_CEIL)
        x, a, b, clamped = joint_step(model, prior, shift, X[k], lin[k], stat[k], dBbar[k], dt)
        X[k + 1], lin[k + 1], stat[k + 1] = x, a, b
        clamps += bool(clamped)
        if debug:
            gap = max(gap, abs(pi_sde - float(_pi_of(a))))
    _check_clamps(clamps, n, max_clamp_fraction)
    return JointPath(grid.times, _pi_of(lin), stat, X, dBbar, rng_seed, clamps,
                     gap if debug else None)


@dataclass
class JointBatch:
    """Joint statistics of many paths recorded at selected step indices."""

    steps: np.ndarray
    times: np.ndarray
    pi: np.ndarray
    phi: np.ndarray
    X: np.ndarray
    clamps: np.ndarray = field(repr=False)


def simulate_joint_batch(model: DiffusionModel, prior: Prior, penalty: PenaltySpec, x0: float,
                         grid: SimGrid, seed: int, n_paths: int, record_steps=None,
                         start: int = 0, max_clamp_fraction: float = 0.01) -> JointBatch:
    n, dt = grid.n_steps, grid.step
    steps = np.arange(n + 1) if record_steps is None else np.asarray(sorted(record_steps), dtype=int)
    dBbar = np.empty((n_paths, n))
    for i in range(n_paths):
        dBbar[i] = path_rng(seed, start + i).standard_normal(n) * math.sqrt(dt)
    shift = penalty.rate_shift if penalty.kind == EXPONENTIAL else 0.0
    phi0 = min(prior.phi0, PHI_CAP)
    x = np.full(n_paths, float(x0))
    lin = np.full(n_paths, phi0)
    stat = np.full(n_paths, phi0)
    out_pi = np.empty((n_paths, steps.size))
    out_phi = np.empty_like(out_pi)
    out_x = np.empty_like(out_pi)
    clamps = np.zeros(n_paths, dtype=int)
    slot = {int(s): j for j, s in enumerate(steps)}
    for k in range(n + 1):
        j = slot.get(k)
        if j is not None:
            out_pi[:, j], out_phi[:, j], out_x[:, j] = _pi_of(lin), stat, x
        if k == n:
            break
        x, lin, stat, clamped = joint_step(model, prior, shift, x, lin, stat, dBbar[:, k], dt)
        clamps += clamped
    _check_clamps(int(clamps.max(initial=0)), n, max_clamp_fraction)
    return JointBatch(steps, steps * dt, out_pi, out_phi, out_x, clamps)


def simulate_indexed_path(model: DiffusionModel, prior: Prior, x0: float, grid: SimGrid, seed: int,
                          index: int, max_clamp_fraction: float = 0.01) -> SamplePath:
    """Path ``index`` of a run: disorder time and increments from stream (seed, index)."""
    theta, dB = draw_path_inputs(prior, seed, index, grid.n_steps, grid.step)
    return _observation_from_increments(model, theta, x0, grid, dB, seed, max_clamp_fraction)

import math

import numpy as np
import pytest

from qdetect.filtering import effective_step, innovation_increments, phi_step, run_filter, update_phi
from qdetect.model import DiffusionModel, PenaltySpec, Prior
from qdetect.simulate import (PHI_CAP, SamplePath, SimGrid, simulate_indexed_path, simulate_joint,
                              simulate_observation_batch)


@pytest.fixture
def path(rising_model):
    return simulate_indexed_path(rising_model, Prior(0.1, 1.0), 1.0, SimGrid(2.0, 1e-3), 17, 0)


def test_pi_identity(path, rising_model):
    tr = run_filter(path, rising_model, Prior(0.1, 1.0), PenaltySpec.linear(1))
    assert np.max(np.abs(tr.pi - tr.phi / (1 + tr.phi))) <= 1e-12


def test_alpha_zero_is_bitwise_linear(path, rising_model):
    prior = Prior(0.1, 1.0)
    a = run_filter(path, rising_model, prior, PenaltySpec.linear(1))
    b = run_filter(path, rising_model, prior, PenaltySpec.exponential(1, 0.0))
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.pi, b.pi)


def test_exponential_statistic_dominates(path, rising_model):
    prior = Prior(0.1, 1.0)
    a = run_filter(path, rising_model, prior, PenaltySpec.linear(1))
    b = run_filter(path, rising_model, prior, PenaltySpec.exponential(1, 0.7))
    assert np.all(b.phi >= a.phi) and np.array_equal(b.pi, a.pi)


def test_unit_ratio_step_is_exact():
    # with L = 1 the recursion reproduces phi_t = e^{kt}(phi0 + lam/k) - lam/k exactly
    lam, phi0, dt = 1.3, 1 / 3, 0.05
    for k in (lam, lam + 0.5):
        phi = phi0
        for _ in range(40):
            phi = phi_step(phi, lam, k, 1.0, dt)
        assert phi == pytest.approx(math.exp(2 * k) * (phi0 + lam / k) - lam / k, rel=1e-13)


def test_effective_step():
    assert effective_step(0.0, 0.1) == 0.1
    assert effective_step(2.0, 0.1) == pytest.approx((1 - math.exp(-0.2)) / 2, rel=1e-15)


def test_update_phi_matches_run_filter(path, rising_model):
    prior, pen = Prior(0.1, 1.0), PenaltySpec.exponential(1, 0.3)
    tr = run_filter(path, rising_model, prior, pen)
    phi = tr.phi[0]
    for k in range(50):
        phi = update_phi(phi, prior, pen, math.exp(tr.logL[k + 1] - tr.logL[k]), 1e-3)
    assert phi == pytest.approx(tr.phi[50], rel=1e-12)


def test_likelihood_ratio_mean_one(rising_model):
    g = SimGrid(2.0, 1e-3)
    X, _ = simulate_observation_batch(rising_model, np.full(3000, np.inf), 1.0, g, 5)
    r, q = rising_model.log_lik_coefs(X[:, :-1])
    L = np.exp(np.sum(r * np.diff(X, axis=1) - 0.5 * q * g.step, axis=1))
    assert abs(L.mean() - 1) < 3 * L.std(ddof=1) / math.sqrt(L.size)


def test_prior_one_saturates(rising_model, path):
    tr = run_filter(path, rising_model, Prior(1.0, 1.0), PenaltySpec.linear(1))
    assert tr.saturated and tr[0].saturated and tr.pi[0] == PHI_CAP / (1 + PHI_CAP)


def test_innovation_increments_are_standard_before_change(rising_model):
    g = SimGrid(1.0, 1e-3)
    p = simulate_indexed_path(rising_model, Prior(0.0, 1e-6), 1.0, g, 3, 0)
    assert p.theta > 1.0
    dB = innovation_increments(rising_model, p.X, np.zeros(p.X.size), g.step)
    assert np.allclose(dB, p.dB, atol=1e-12)


def test_strong_convergence_order(rising_model):
    prior, pen = Prior(0.1, 1.0), PenaltySpec.linear(1)
    steps = (4, 8, 16, 32)
    errs = {k: [] for k in steps}
    for i in range(60):
        p = simulate_indexed_path(rising_model, prior, 1.0, SimGrid(1.0, 2.0 ** -13), 5, i)
        ref = math.log(run_filter(p, rising_model, prior, pen).phi[-1])
        for k in steps:
            sub = SamplePath(p.times[::k], p.X[::k], p.dB[::k], p.theta)
            errs[k].append(abs(math.log(run_filter(sub, rising_model, prior, pen).phi[-1]) - ref))
    slope = np.polyfit(np.log(steps), np.log([np.mean(errs[k]) for k in steps]), 1)[0]
    assert 0.35 < slope < 0.8


def test_filter_tracks_joint_sde(rising_model):
    # the Euler-evolved statistic has strong order 1/2, so the gap shrinks like sqrt(dt)
    prior, pen = Prior(0.1, 1.0), PenaltySpec.linear(1)
    steps = (4e-3, 2e-3, 1e-3, 5e-4)
    gaps = []
    for dt in steps:
        g, worst = SimGrid(1.0, dt), []
        for i in range(100):
            jp = simulate_joint(rising_model, prior, pen, 1.0, g, 3, index=i)
            tr = run_filter(SamplePath(jp.times, jp.X, jp.dBbar, math.nan), rising_model, prior, pen)
            worst.append(np.max(np.abs(np.log(tr.phi[1:]) - np.log(jp.phi[1:]))))
        gaps.append(np.mean(worst))
    slope = np.polyfit(np.log(steps), np.log(gaps), 1)[0]
    assert np.all(np.diff(gaps) < 0) and 0.35 < slope < 0.8


def _flat_model():
    xs = np.geomspace(0.01, 100, 9)
    return DiffusionModel.tabulated(xs, 0.1 * xs, 0.1 * xs, 0.5 * xs)


def test_no_information_model():
    # equal drifts: log L stays 0 and phi_t = e^{lam t} - 1 from pi = 0
    m = _flat_model()
    g = SimGrid(0.2, 1e-5)
    p = simulate_indexed_path(m, Prior(0.0, 1.0), 1.0, g, 2, 0)
    tr = run_filter(p, m, Prior(0.0, 1.0), PenaltySpec.linear(1))
    assert np.all(tr.logL == 0.0)
    assert np.max(np.abs(tr.phi - np.expm1(tr.t))) <= 1e-8


def test_one_step_sums_by_hand():
    m = DiffusionModel.eta_sigmoid(0, 1, 1.5, 1.5, 1)
    t = np.array([0.0, 0.1, 0.2])
    X = np.array([1.0, 1.2, 0.9])
    tr = run_filter(SamplePath(t, X, np.zeros(2), math.inf), m, Prior(0.0, 1.0), PenaltySpec.linear(1))
    # r = (mu1 - mu0)/sigma^2 = 1/x, q = (mu1^2 - mu0^2)/sigma^2 = s^2
    want = (0.2 / 1.0 - 0.5 * 2.25 * 0.1) + (-0.3 / 1.2 - 0.5 * 2.25 * 0.1)
    assert tr.logL[-1] == pytest.approx(want, abs=1e-12)


def test_zero_rate_step():
    assert phi_step(2.0, 0.0, 0.0, 1.0, 0.1) == 2.0
    assert phi_step(2.0, 0.0, 0.5, 1.0, 0.1) == pytest.approx(2.0 * math.exp(0.05), rel=1e-15)


def test_initial_state(rising_model):
    p = SamplePath(np.array([0.0]), np.array([1.0]), np.zeros(0), math.inf)
    tr = run_filter(p, rising_model, Prior(0.5, 1.0), PenaltySpec.linear(1))
    assert len(tr) == 1 and tr[0].phi == 1.0 and tr[0].pi == 0.5 and tr[0].logL == 0.0
    tr0 = run_filter(p, rising_model, Prior(0.0, 1.0), PenaltySpec.linear(1))
    assert tr0.phi[0] == 0.0 and tr0.pi[0] == 0.0


def test_strong_signal_detected():
    # rho = 9 and theta = 0: the posterior is near one by T = 5 on almost every path
    m = DiffusionModel.eta_sigmoid(0, 1, 3.0, 3.0, 1)
    prior, g = Prior(0.0, 1.0), SimGrid(5.0, 1e-3)
    X, _ = simulate_observation_batch(m, np.zeros(1000), 1.0, g, 31)
    r, q = m.log_lik_coefs(X[:, :-1])
    ratios = np.exp(r * np.diff(X, axis=1) - 0.5 * q * g.step)
    phi = np.zeros(1000)
    for k in range(g.n_steps):
        phi = phi_step(phi, 1.0, 1.0, ratios[:, k], g.step)
    assert np.mean(phi / (1 + phi) > 0.99) >= 0.95

import math

import numpy as np
import pytest

from oracles import EXP_ROOT_UNIT, exp_root_mp, kummer_hinf
from qdetect.errors import ConfigError
from qdetect.geometry import ChangeOfVariables, rho_hat
from qdetect.model import DiffusionModel, Prior
from qdetect.solver_exp import (fundamental_Hinf, smooth_fit_residual, solve_boundary_exp,
                                solve_boundary_exp_table, value_exp, value_slice_exp)


def test_unit_root_matches_kummer(const_cov, prior0):
    assert solve_boundary_exp(const_cov, prior0, 1.0, 1.0, 0.0) == pytest.approx(EXP_ROOT_UNIT, abs=1e-9)


def test_second_root_matches_kummer():
    cov = ChangeOfVariables.of(DiffusionModel.eta_sigmoid(0, 1, 1, 1, 1))
    h = solve_boundary_exp(cov, Prior(0, 0.5), 1.5, 2.0, 0.0)
    assert h == pytest.approx(exp_root_mp(0.5, 2.0, 1.5, 1.0, (0.17, 2.0)), abs=1e-9)


def test_fundamental_solution_shape_matches_kummer(const_cov, prior0):
    fs = fundamental_Hinf(const_cov, prior0, 1.0, 0.0, 5.0)
    phis = np.array([0.05, 0.5, 1.0, 3.0, 4.5])
    ref = np.array([float(kummer_hinf(p, 1.0, 1.0, 2.0)) for p in phis])
    got = fs.values(phis)
    assert np.allclose(got / got[2], ref / ref[2], rtol=1e-8)


def test_ode_residual(rising_cov, prior0):
    # 1/2 rho phi^2 H'' + (lam + k phi) H' - lam H = 0 along a fixed-y slice
    y, lam, k = 0.2, 1.0, 2.0
    fs = fundamental_Hinf(rising_cov, prior0, 1.0, y, 4.0)
    d = 1e-4
    for phi in (0.3, 1.0, 2.5):
        H = fs.values(phi)
        d2 = (fs.derivative(phi + d) - fs.derivative(phi - d)) / (2 * d)
        r = 0.5 * rho_hat(rising_cov, phi, y) * phi ** 2 * d2 + (lam + k * phi) * fs.derivative(phi) - lam * H
        assert abs(r) <= 1e-4 * lam * H


def test_table_residuals_and_bounds(rising_cov, prior0):
    ys = np.linspace(-2, 2, 9)
    t = solve_boundary_exp_table(rising_cov, prior0, 1.0, 1.0, ys)
    assert t.meta["max_residual"] <= 1e-7
    assert np.all(t.h >= 1.0)
    # rho increases in y for eta = 1 at fixed phi, and the boundary moves with it
    assert np.all(np.diff(t.h) != 0)


def test_value_continuity_and_bounds(rising_cov, prior0):
    y = 0.4
    h = solve_boundary_exp(rising_cov, prior0, 1.0, 1.0, y)
    phis = np.linspace(0, 1.5 * h, 40)
    vs = value_slice_exp(rising_cov, prior0, 1.0, 1.0, y, h, phis)
    assert np.all((vs.values >= 0) & (vs.values <= 1))
    assert np.all(np.diff(vs.values) >= -1e-12)
    assert value_exp(rising_cov, prior0, 1.0, 1.0, h * (1 - 1e-10), y, h) == pytest.approx(1.0, abs=1e-8)


def test_smooth_fit_by_finite_difference(rising_cov, prior0):
    y = -0.3
    h, fs = solve_boundary_exp(rising_cov, prior0, 1.0, 1.0, y, return_solution=True)
    assert abs(smooth_fit_residual(fs, 1.0, h)) <= 1e-7
    d = 1e-5
    H = [value_exp(rising_cov, prior0, 1.0, 1.0, h - j * d, y, h) for j in (0, 1, 2)]
    assert abs((3 * H[0] - 4 * H[1] + H[2]) / (2 * d)) <= 1e-5


def test_alpha_zero_rejected(const_cov, prior0):
    with pytest.raises(ConfigError, match="alpha"):
        solve_boundary_exp(const_cov, prior0, 1.0, 0.0, 0.0)


def test_fundamental_extends_below_phi_min(const_cov, prior0):
    fs = fundamental_Hinf(const_cov, prior0, 1.0, 0.0, 2.0)
    assert fs.log_values(0.0) == pytest.approx(fs.log_values(fs.phi_min) - fs.phi_min)
    assert math.isfinite(fs.values(0.0))


def test_initial_slope_is_one(rising_cov, prior0):
    for pm in (1e-6, 1e-7):
        fs = fundamental_Hinf(rising_cov, prior0, 1.0, 0.0, 2.0, phi_min=pm)
        assert abs(fs.log_slope(pm) - 1) <= 1e-4


def test_tolerance_self_convergence(rising_cov, prior0):
    a = fundamental_Hinf(rising_cov, prior0, 1.0, 0.0, 3.0, rtol=1e-10)
    b = fundamental_Hinf(rising_cov, prior0, 1.0, 0.0, 3.0, rtol=5e-11)
    phis = np.linspace(0.05, 2.5, 20)
    assert np.max(np.abs(a.ratio(phis, 2.5) - b.ratio(phis, 2.5))) < 1e-8


def test_fundamental_positive_increasing(rising_cov, prior0):
    fs = fundamental_Hinf(rising_cov, prior0, 1.0, -1.0, 50.0)
    phis = np.geomspace(1e-6, 50, 400)
    v = fs.values(phis)
    assert np.all(v > 0) and np.all(np.diff(v) > 0)


def test_constant_rho_flat_in_y(const_cov, prior0):
    hs = [solve_boundary_exp(const_cov, prior0, 1.0, 1.0, y) for y in (-3.0, 0.0, 3.0)]
    assert np.ptp(hs) <= 1e-6


def test_value_range_and_stopping(rising_cov, prior0):
    h = solve_boundary_exp(rising_cov, prior0, 1.0, 1.0, 1.0)
    H = value_exp(rising_cov, prior0, 1.0, 1.0, np.linspace(0, h, 50), 1.0, h)
    assert np.all((H >= 0) & (H <= 1)) and H[-1] == 1.0


def test_small_alpha_approaches_linear(rising_cov, prior0):
    from qdetect.solver_linear import solve_boundary_linear
    h_lin = solve_boundary_linear(rising_cov, prior0, 1.0, [0.2]).h[0]
    gaps = [abs(solve_boundary_exp(rising_cov, prior0, 1.0 / a, a, 0.2) - h_lin) for a in (1.0, 0.1, 0.01)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 2e-3

import json
import math

import numpy as np
import pytest

from qdetect.errors import CapabilityError, ConfigError, NonPositiveSigma, SubclassViolation
from qdetect.model import (DiffusionModel, PenaltySpec, Prior, config_from_dict, load_config, model_from_dict,
                           model_to_dict, penalty_cost, rho, validate_model)


def test_validate_unit_model():
    m = DiffusionModel.eta_sigmoid(0, 1, 1, 1, 1)
    grid = np.geomspace(0.1, 10, 50)
    rep = validate_model(m, grid)
    assert rep.passed and rep.subclass
    assert rep.ratio_min == pytest.approx(1.0) and rep.ratio_max == pytest.approx(1.0)
    # mu1 = sigma = x, mu0 = 0
    assert rep.K_growth == pytest.approx(np.max(2 * grid / (1 + grid)))
    assert rep.K == pytest.approx(max(rep.K_growth, 1.0))


def test_validate_sloped_model_ratio_range():
    m = DiffusionModel.eta_sigmoid(0, 1, 0.5, 2.0, 1)
    grid = np.geomspace(1e-4, 1e4, 200)
    rep = validate_model(m, grid)
    s = lambda x: 0.5 + 1.5 * x / (1 + x)
    assert rep.passed
    assert rep.ratio_min == pytest.approx(s(1e-4))
    assert rep.ratio_max == pytest.approx(s(1e4))


@pytest.mark.parametrize("eta0,eta1", [(2.0, 0.0), (0.5, 0.5), (0.0, 0.0)])
def test_subclass_violation(eta0, eta1):
    with pytest.raises(SubclassViolation):
        validate_model(DiffusionModel.eta_sigmoid(eta0, eta1, 1, 1, 1), [1.0, 2.0])


def test_negative_exponent_pair_is_admissible():
    # (2, -1) sums to one and is a member of the family with eta = -1/3
    m = DiffusionModel.eta_sigmoid(2.0, -1.0, 1, 1, 1)
    assert validate_model(m, np.geomspace(0.1, 10, 20)).passed
    assert m.eta == pytest.approx(-1 / 3)


def test_nonpositive_sigma_tabulated():
    x = np.array([0.5, 1.0, 2.0])
    m = DiffusionModel.tabulated(x, np.zeros(3), np.ones(3), np.array([1.0, 0.0, 1.0]))
    with pytest.raises(NonPositiveSigma):
        validate_model(m, x)


@pytest.mark.parametrize("s0,s1", [(0.3, 0.3), (0.5, 3.0), (4.0, 0.2), (1e-3, 1e3)])
def test_musig_bounds_on_wide_grid(s0, s1):
    rep = validate_model(DiffusionModel.eta_sigmoid(0, 1, s0, s1, 1), np.geomspace(1e-3, 1e3, 300))
    assert rep.passed and math.isfinite(rep.K)


def test_rho_examples():
    m = DiffusionModel.eta_sigmoid(0, 1, math.sqrt(2), math.sqrt(2), 1)
    xs = np.geomspace(1e-3, 1e3, 100)
    assert np.allclose(rho(m, xs), 2.0, rtol=0, atol=1e-14)
    up = rho(DiffusionModel.eta_sigmoid(0, 1, 0.5, 2, 1), xs)
    assert np.all(np.diff(up) > 0)
    down = rho(DiffusionModel.eta_sigmoid(0, 1, 2, 0.5, 1), xs)
    assert np.all(np.diff(down) < 0)
    tab = DiffusionModel.tabulated(xs, xs * 0.1, xs * 0.1 + xs ** 0.5, xs ** 0.5)
    assert np.allclose(rho(tab, xs), 1.0)


def test_rho_matches_subclass_formula():
    m = DiffusionModel.eta_sigmoid(-0.5, 1.5, 0.4, 1.9, 2.0)
    xs = np.geomspace(1e-2, 1e2, 40)
    assert np.allclose(rho(m, xs), 4.0 * m.s(xs) ** 2, rtol=1e-13)


def test_penalty_cost():
    assert penalty_cost(PenaltySpec.linear(2), 3) == 6
    assert penalty_cost(PenaltySpec.exponential(1, 1), 0) == 0
    for spec in (PenaltySpec.linear(2), PenaltySpec.exponential(1, 0.5)):
        assert penalty_cost(spec, -1) == 0
        d = np.linspace(-2, 5, 200)
        assert np.all(np.diff(penalty_cost(spec, d)) >= 0)
    assert penalty_cost(PenaltySpec.exponential(2, 0.5), 2) == pytest.approx(2 * (math.e - 1))


def test_prior_and_penalty_validation():
    with pytest.raises(ConfigError):
        Prior(1.5, 1)
    with pytest.raises(ConfigError):
        Prior(0.2, 0)
    with pytest.raises(ConfigError):
        PenaltySpec.linear(0)
    assert Prior(0.5, 1).phi0 == 1.0
    assert PenaltySpec.exponential(2, 0.5).lower_bound(Prior(0, 3)) == 3.0


def test_tabulated_rejected_by_solvers():
    x = np.geomspace(0.1, 10, 5)
    m = DiffusionModel.tabulated(x, 0 * x, x, x)
    with pytest.raises(CapabilityError, match="solver requires subclass model"):
        m.require_subclass()


def test_tabulated_interpolation_is_loglinear_and_flat():
    x = np.array([1.0, 100.0])
    m = DiffusionModel.tabulated(x, [0.0, 2.0], [1.0, 1.0], [1.0, 1.0])
    assert m.mu0(10.0) == pytest.approx(1.0)
    assert m.mu0(1e-3) == 0.0 and m.mu0(1e5) == 2.0


BASE = {"model": {"family": "eta_sigmoid", "eta0": 0, "eta1": 1, "s0": 1, "s1": 2, "z": 1},
        "prior": {"pi": 0.1, "lambda": 2}, "penalty": {"kind": "exponential", "c": 1, "alpha": 0.5}}


def test_config_round_trip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(BASE))
    cfg = load_config(p)
    assert cfg.prior.lam == 2 and cfg.penalty.alpha == 0.5 and cfg.x0 == 1
    assert model_from_dict(model_to_dict(cfg.model)) == cfg.model


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d.pop("prior"), "prior"),
    (lambda d: d["model"].update(extra=1), "model"),
    (lambda d: d.update(bogus=1), "config"),
    (lambda d: d["penalty"].update(alpha="x"), "penalty.alpha"),
    (lambda d: d["model"].update(eta1=3), None),
])
def test_config_errors_name_the_field(mutate, field):
    d = json.loads(json.dumps(BASE))
    mutate(d)
    with pytest.raises(ValueError) as info:
        config_from_dict(d)
    if field:
        assert field in str(info.value)


def test_bad_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"model": {\n  "family": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)

import numpy as np
import pytest

from oracles import EXP_ROOT_UNIT, LINEAR_ROOT_UNIT
from qdetect.errors import CapabilityError
from qdetect.geometry import ChangeOfVariables
from qdetect.model import DiffusionModel, PenaltySpec, Prior
from qdetect.solver_pde import (assemble_operator, constant_rho_boundaries, extract_boundary, make_grid, solve_lcp,
                                solve_pde)


@pytest.fixture(scope="module")
def rising():
    return ChangeOfVariables.of(DiffusionModel.eta_sigmoid(0, 1, 0.7, 1.6, 1))


@pytest.mark.parametrize("pen,want", [(PenaltySpec.exponential(1, 1), EXP_ROOT_UNIT),
                                      (PenaltySpec.linear(1), LINEAR_ROOT_UNIT)])
def test_constant_rho_within_one_cell(const_cov, prior0, pen, want):
    grid, table = solve_pde(const_cov, prior0, pen)
    cell = grid.cell_at(want)
    assert np.all(np.abs(table.h - want) <= cell)
    assert grid.residual <= 1e-6
    assert table.meta["connected"]


def test_obstacle_and_complementarity(rising, prior0):
    pen = PenaltySpec.exponential(1, 1)
    grid = make_grid(rising, prior0, pen, n_fine=60)
    op = assemble_operator(rising, prior0, pen, grid)
    assert op.diagnostics["positive_offdiag_violations"] == 0
    sol = solve_lcp(op)
    assert sol.residual <= 1e-6
    assert np.all(sol.H <= 1.0) and np.all(sol.H >= 0.0)
    # residuals scaled by the diagonal of each column system
    LH = (op.apply(sol.H) + op.source) / (op.b / grid.dy - op.di)
    cont = ~sol.active
    cont[:, -1] = False
    # continuation: L H + f phi = 0 ; stopping: H = 1 and L H + f phi >= 0
    assert np.max(np.abs(LH[:-1][cont[:-1]])) <= 1e-6
    assert np.all(LH[:-1][sol.active[:-1]] >= -1e-6)


def test_policy_iteration_matches_psor(rising, prior0):
    pen = PenaltySpec.linear(1)
    grid = make_grid(rising, prior0, pen, n_fine=40)
    op = assemble_operator(rising, prior0, pen, grid)
    a, b = solve_lcp(op, "psor"), solve_lcp(op, "policy")
    assert np.max(np.abs(a.H - b.H)) <= 1e-6
    assert np.array_equal(extract_boundary(a).h, extract_boundary(b).h) or \
        np.max(np.abs(extract_boundary(a).h - extract_boundary(b).h)) <= 1e-5


@pytest.mark.parametrize("pen", [PenaltySpec.exponential(1, 1), PenaltySpec.linear(1)], ids=["exp", "lin"])
def test_smooth_fit_jump_halves(rising, prior0, pen):
    jumps = []
    for n in (60, 120, 240):
        _, table = solve_pde(rising, prior0, pen, n_fine=n)
        jumps.append(np.max(np.abs(table.meta["smooth_fit_jump"])))
    assert jumps[1] <= 0.6 * jumps[0] and jumps[2] <= 0.6 * jumps[1]


@pytest.mark.parametrize("pen", [PenaltySpec.exponential(1, 1), PenaltySpec.linear(1)], ids=["exp", "lin"])
def test_boundary_between_limiting_problems(rising, prior0, pen):
    grid, table = solve_pde(rising, prior0, pen)
    far = constant_rho_boundaries(rising, prior0, pen)
    lo, hi = min(far.values()), max(far.values())
    cells = np.array([grid.cell_at(h) for h in table.h])
    assert np.all(table.h >= lo - cells) and np.all(table.h <= hi + cells)
    assert np.all(table.h >= pen.lower_bound(prior0))
    # the far columns approach the limiting constant-rho boundaries
    assert abs(table.h[-1] - far["s0"]) <= 2 * grid.cell_at(far["s0"])
    assert abs(table.h[0] - far["s1"]) <= 2 * grid.cell_at(far["s1"])


def test_grid_refinement_region(rising, prior0):
    pen = PenaltySpec.linear(1)
    g = make_grid(rising, prior0, pen, n_fine=50)
    far = g.meta["far_boundaries"]
    assert g.phi[0] == 0 and np.all(np.diff(g.phi) > 0)
    fine = g.meta["fine_cell"]
    for h in far.values():
        assert g.cell_at(h) == pytest.approx(fine, rel=1e-9)


def test_tabulated_rejected(prior0):
    xs = np.geomspace(0.1, 10, 5)
    cov = ChangeOfVariables.of(DiffusionModel.tabulated(xs, 0 * xs, xs, xs))
    with pytest.raises(CapabilityError):
        solve_pde(cov, prior0, PenaltySpec.linear(1))


def test_prior_mass_does_not_change_boundary(rising):
    pen = PenaltySpec.exponential(1, 1)
    _, a = solve_pde(rising, Prior(0.0, 1.0), pen, n_fine=40)
    _, b = solve_pde(rising, Prior(0.4, 1.0), pen, n_fine=40)
    assert np.array_equal(a.h, b.h)


def test_operator_polynomial_exactness(rising, prior0):
    pen = PenaltySpec.exponential(1, 1)
    grid = make_grid(rising, prior0, pen, n_fine=30)
    op = assemble_operator(rising, prior0, pen, grid)
    ones = np.ones((grid.y.size, grid.phi.size))
    assert np.allclose(op.apply(ones)[:, :-1], -1.0, atol=1e-10)
    # linear in phi: only the drift and -lambda terms survive
    eps, p0 = 1e-3, 0.7
    H = 1 + eps * (grid.phi - p0)[None, :] * ones
    k = 2.0
    want = (1.0 + k * grid.phi) * eps - H[0]
    got = op.apply(H)
    assert np.allclose(got[:, 1:-1], want[None, 1:-1], atol=1e-10)


def test_constant_rho_solution_flat_in_y(const_cov, prior0):
    grid, _ = solve_pde(const_cov, prior0, PenaltySpec.exponential(1, 1), n_fine=60)
    dH = np.abs(np.diff(grid.H, axis=0)) / grid.dy
    assert dH.max() <= 1e-4


def test_connected_columns(rising, prior0):
    grid, table = solve_pde(rising, prior0, PenaltySpec.linear(1), n_fine=60)
    for j in range(grid.y.size):
        act = grid.active[j].copy()
        act[-1] = True
        i = int(np.argmax(act))
        assert np.all(act[i:]) and not np.any(act[:i])
    assert table.meta["connected"]


def test_grid_convergence(rising, prior0):
    pen = PenaltySpec.exponential(1, 1)
    g1, t1 = solve_pde(rising, prior0, pen, n_fine=60, dy=0.1)
    g2, t2 = solve_pde(rising, prior0, pen, n_fine=120, dy=0.05, y_range=(g1.y[0], g1.y[-1]))
    coarse = g1.meta["fine_cell"]
    assert np.max(np.abs(t2(g1.y) - t1.h)) < 2 * coarse

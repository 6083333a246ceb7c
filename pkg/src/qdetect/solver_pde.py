"""Free-boundary problem in (phi, y) as a linear complementarity problem.

With U = (1 - pi) H the pi-dependence factors out and H solves

    1/2 rho_hat phi^2 H_pp + (lambda + k phi) H_p + (lambda/phi + k) H_y - lambda H = -f phi,
    H <= 1,

with k = lambda + alpha, f = c alpha (exponential) or k = lambda, f = c
(linear). The y-drift is positive, so y is time-like: columns are solved
from the far edge y_max downward, each one a tridiagonal LCP in phi.

In u = 1 - H each column reads u >= 0, A u - r >= 0, u (A u - r) = 0 with
A = -L_phi + (b/dy) I an M-matrix; it is solved by projected SOR.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .boundary import COORD_Y, BoundaryTable
from .errors import DegenerateColumn, NoConvergence, NonMonotoneScheme
from .geometry import ChangeOfVariables, rho_hat, y_of
from .model import EXPONENTIAL, LINEAR, PenaltySpec, Prior

OMEGA = 1.5
X_EDGE_SMALL = 1.0 / 99.0
X_EDGE_LARGE = 99.0


@dataclass
class LCPGrid:
    phi: np.ndarray
    y: np.ndarray
    H: np.ndarray | None = None
    active: np.ndarray | None = None
    residual: float = math.nan
    sweeps: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    def cell_at(self, phi: float) -> float:
        """Width of the phi-cell containing ``phi``."""
        i = int(np.clip(np.searchsorted(self.phi, phi), 1, self.phi.size - 1))
        return float(self.phi[i] - self.phi[i - 1])


def _piecewise(edges, widths):
    pts = [0.0]
    for (a, b), w in zip(zip(edges[:-1], edges[1:]), widths):
        n = max(1, int(math.ceil((b - a) / w - 1e-9)))
        pts.extend(np.linspace(a, b, n + 1)[1:])
    return np.array(pts)


def constant_rho_boundaries(cov: ChangeOfVariables, prior: Prior, penalty: PenaltySpec):
    """Boundaries of the problems with rho frozen at its two limits, keyed by s0 and s1."""
    from .solver_exp import solve_boundary_exp
    from .solver_linear import solve_boundary_linear

    out = {}
    for key, s in (("s0", cov.model.s0), ("s1", cov.model.s1)):
        c_cov = cov.with_model(cov.model.with_constant_s(s))
        if penalty.kind == EXPONENTIAL:
            out[key] = solve_boundary_exp(c_cov, prior, penalty.c, penalty.alpha, 0.0)
        else:
            out[key] = float(solve_boundary_linear(c_cov, prior, penalty.c, [0.0], scan=False).h[0])
    return out


def make_grid(cov: ChangeOfVariables, prior: Prior, penalty: PenaltySpec, n_fine: int = 120,
              dy: float = 0.05, coarse_ratio: float = 4.0, y_range: tuple | None = None,
              far: dict | None = None) -> LCPGrid:
    """Graded phi nodes, dense around the constant-rho boundaries, and a uniform y grid.

    The y range is chosen so that s(x(phi, y)) is within 1% of its limit at
    both edges for the phi values that matter there.
    """
    cov.model.require_subclass()
    far = constant_rho_boundaries(cov, prior, penalty) if far is None else far
    h_lo, h_hi = min(far.values()), max(far.values())
    lower = penalty.lower_bound(prior)
    phi_max = 4.0 * h_hi
    a, b = 0.8 * min(h_lo, lower), 1.2 * h_hi
    d = (b - a) / n_fine
    phi = _piecewise([0.0, a, b, phi_max], [coarse_ratio * d, d, coarse_ratio * d])
    if y_range is None:
        eta = cov.eta
        x_far, x_near = (X_EDGE_SMALL, X_EDGE_LARGE) if eta > 0 else (X_EDGE_LARGE, X_EDGE_SMALL)
        y_max = y_of(cov, phi_max, x_far)
        y_min = y_of(cov, 0.5 * lower, x_near)
    else:
        y_min, y_max = y_range
    n_y = max(2, int(math.ceil((y_max - y_min) / dy)))
    y = y_min + np.arange(n_y + 1) * ((y_max - y_min) / n_y)
    return LCPGrid(phi, y, meta={"far_boundaries": far, "lower_bound": lower, "fine_cell": d})


@dataclass
class DiscreteOperator:
    """Tridiagonal phi-part of the operator per y column, plus y-drift and source.

    ``lo``, ``di``, ``up`` hold the stencil of L_phi (including -lambda H) at
    every node, shape (n_y, n_phi); row n_phi-1 is the Dirichlet node H = 1.
    """

    grid: LCPGrid
    lo: np.ndarray
    di: np.ndarray
    up: np.ndarray
    b: np.ndarray
    source: np.ndarray
    far: tuple
    penalty: str
    lower_bound: float
    diagnostics: dict

    def apply(self, H: np.ndarray) -> np.ndarray:
        """(L H) on every node except the Dirichlet edge, with a one-sided y difference."""
        H = np.asarray(H, dtype=float)
        out = self.di * H
        out[:, 1:] += self.lo[:, 1:] * H[:, :-1]
        out[:, :-1] += self.up[:, :-1] * H[:, 1:]
        dy = self.grid.dy
        dH = np.empty_like(H)
        dH[:-1] = (H[1:] - H[:-1]) / dy
        dH[-1] = dH[-2]
        out += self.b * dH
        out[:, -1] = 0.0
        return out


def _stencil(phi, rho_vals, lam, k):
    n = phi.size
    lo, di, up = np.zeros(n), np.zeros(n), np.zeros(n)
    hm = np.diff(phi)[:-1]
    hp = np.diff(phi)[1:]
    p = phi[1:-1]
    D = 0.5 * rho_vals[1:-1] * p * p
    a = lam + k * p
    c2 = 2.0 / (hm + hp)
    central_lo = D * c2 / hm - a / (hm + hp)
    upwind = central_lo < 0
    lo[1:-1] = np.where(upwind, D * c2 / hm, central_lo)
    up[1:-1] = np.where(upwind, D * c2 / hp + a / hp, D * c2 / hp + a / (hm + hp))
    di[1:-1] = -(lo[1:-1] + up[1:-1]) - lam
    # phi = 0: diffusion vanishes, drift lambda points inward
    up[0] = lam / phi[1]
    di[0] = -lam / phi[1] - lam
    di[-1] = -1.0  # Dirichlet row H = 1
    return lo, di, up, int(upwind.sum())


def assemble_operator(cov: ChangeOfVariables, prior: Prior, penalty: PenaltySpec, grid: LCPGrid) -> DiscreteOperator:
    cov.model.require_subclass()
    phi, y = grid.phi, grid.y
    lam = prior.lam
    k = lam + penalty.rate_shift
    n_y, n = y.size, phi.size
    lo, di, up = (np.empty((n_y, n)) for _ in range(3))
    n_upwind = 0
    p_safe = np.maximum(phi, phi[1] * 1e-300)
    for j, yj in enumerate(y):
        r = np.asarray(rho_hat(cov, p_safe, yj), dtype=float)
        lo[j], di[j], up[j], nu = _stencil(phi, r, lam, k)
        n_upwind += nu
    # y-drift lambda/phi + k, regularized at phi = 0 by its value at phi_1 / 2
    b_row = lam / np.maximum(phi, 0.5 * phi[1]) + k
    b = np.broadcast_to(b_row, (n_y, n)).copy()
    source = penalty.running_cost * phi
    m = cov.model
    eta = m.eta
    far_s = m.s0 if eta > 0 else m.s1
    r_far = np.full(n, (m.eta1 - m.eta0) ** 2 * far_s ** 2)
    far = _stencil(phi, r_far, lam, k)[:3]
    bad = int(np.sum(lo[:, 1:-1] < 0) + np.sum(up[:, :-1] < 0))
    diag_dom = (di[:, :-1] + lo[:, :-1] + up[:, :-1])
    diagnostics = {"upwind_nodes": n_upwind, "positive_offdiag_violations": bad,
                   "max_row_sum": float(diag_dom.max()), "min_row_sum": float(diag_dom.min())}
    if bad:
        warnings.warn(f"{bad} stencil entries break the M-matrix sign pattern; refine the phi grid",
                      NonMonotoneScheme, stacklevel=2)
    return DiscreteOperator(grid, lo, di, up, b, source, far, penalty.kind, penalty.lower_bound(prior), diagnostics)


@numba.njit(cache=True)
def _psor(a_lo, a_di, a_up, r, u, omega, tol_res, tol_upd, max_sweeps):
    """Projected SOR for u >= 0, A u >= r, complementarity; last node fixed at 0."""
    n = u.size
    u[n - 1] = 0.0
    res = 0.0
    for sweep in range(1, max_sweeps + 1):
        upd = 0.0
        for i in range(n - 1):
            s = a_di[i] * u[i]
            if i > 0:
                s += a_lo[i] * u[i - 1]
            s += a_up[i] * u[i + 1]
            new = u[i] + omega * (r[i] - s) / a_di[i]
            if new < 0.0:
                new = 0.0
            d = abs(new - u[i])
            if d > upd:
                upd = d
            u[i] = new
        if upd <= tol_upd:
            res = 0.0
            for i in range(n - 1):
                s = a_di[i] * u[i] + a_up[i] * u[i + 1]
                if i > 0:
                    s += a_lo[i] * u[i - 1]
                w = (s - r[i]) / a_di[i]
                m = min(u[i], w)
                if abs(m) > res:
                    res = abs(m)
            if res <= tol_res:
                return sweep, res
    return -1, res


def _policy_iteration(a_lo, a_di, a_up, r, u0, max_iter=200):
    """Howard's method on the same column LCP; exact up to round-off."""
    from scipy.linalg import solve_banded

    n = u0.size
    stop = np.zeros(n, dtype=bool)
    stop[-1] = True
    for _ in range(max_iter):
        ab = np.zeros((3, n))
        ab[0, 1:] = np.where(stop[:-1], 0.0, a_up[:-1])
        ab[1] = np.where(stop, 1.0, a_di)
        ab[2, :-1] = np.where(stop[1:], 0.0, a_lo[1:])
        rhs = np.where(stop, 0.0, r)
        u = solve_banded((1, 1), ab, rhs)
        Au = a_di * u
        Au[1:] += a_lo[1:] * u[:-1]
        Au[:-1] += a_up[:-1] * u[1:]
        new_stop = u < (Au - r)  # the obstacle row is the smaller of the two
        new_stop[-1] = True
        if np.array_equal(new_stop, stop):
            return u
        stop = new_stop
    raise NoConvergence("policy iteration did not settle")


def _column_system(op: DiscreteOperator, j: int, H_next):
    """A and r of the column LCP at index j, given the column above (or the far field)."""
    if H_next is None:
        lo, di, up = (-x for x in op.far)
        q = op.source.copy()
    else:
        c = op.b[j] / op.grid.dy
        lo, di, up = -op.lo[j], -op.di[j] + c, -op.up[j]
        q = op.source + c * H_next
    # A 1 for the Dirichlet-free rows; r = A 1 - q
    A1 = di.copy()
    A1[1:] += lo[1:]
    A1[:-1] += up[:-1]
    return lo, di, up, A1 - q


def _comp_residual(lo, di, up, r, u):
    Au = di * u
    Au[1:] += lo[1:] * u[:-1]
    Au[:-1] += up[:-1] * u[1:]
    return float(np.max(np.abs(np.minimum(u, (Au - r) / di))[:-1]))


def solve_lcp(op: DiscreteOperator, method: str = "psor", omega: float = OMEGA, tol_res: float = 1e-7,
              tol_upd: float = 1e-9, max_sweeps: int = 100_000) -> LCPGrid:
    """March the columns from y_max down; the far field is the steady limiting-rho column."""
    grid = op.grid
    n_y, n = grid.y.size, grid.phi.size
    U = np.empty((n_y, n))
    sweeps = np.zeros(n_y + 1, dtype=np.int64)
    worst = 0.0

    def solve(system, u0, slot):
        nonlocal worst
        lo, di, up, r = system
        if method == "policy":
            u = _policy_iteration(lo, di, up, r, u0)
            sweeps[slot] = 0
        else:
            u = u0.copy()
            k, _ = _psor(lo, di, up, r, u, omega, tol_res, tol_upd, max_sweeps)
            if k < 0:
                raise NoConvergence(f"PSOR did not converge in {max_sweeps} sweeps (column {slot})")
            sweeps[slot] = k
        worst = max(worst, _comp_residual(lo, di, up, r, u))
        return u

    # the steady far-field column is solved exactly, then checked like the rest
    far_sys = _column_system(op, n_y, None)
    u_far = _policy_iteration(*far_sys, np.zeros(n))
    worst = max(worst, _comp_residual(*far_sys, u_far))
    H_next = 1.0 - u_far
    u_prev = u_far
    for j in range(n_y - 1, -1, -1):
        u = solve(_column_system(op, j, H_next), u_prev, j)
        U[j] = u
        H_next, u_prev = 1.0 - u, u
    H = 1.0 - U
    out = LCPGrid(grid.phi, grid.y, H, U <= 0.0, worst, sweeps,
                  dict(grid.meta, method=method, far_field=1.0 - u_far, penalty=op.penalty,
                       lower_bound=op.lower_bound, diagnostics=op.diagnostics))
    return out


def extract_boundary(grid: LCPGrid) -> BoundaryTable:
    """First stopped node per column, refined by extrapolating sqrt(1 - H) to zero."""
    phi = grid.phi
    lower = grid.meta["lower_bound"]
    hs, jumps = [], []
    connected = True
    for j in range(grid.y.size):
        act = grid.active[j].copy()
        act[-1] = True
        stopped = np.nonzero(act[:-1])[0]
        if stopped.size == 0 and not np.any(grid.H[j, :-1] < 1.0):
            raise DegenerateColumn(f"column y={grid.y[j]:g} is entirely stopped")
        if np.all(act[:-1]):
            raise DegenerateColumn(f"column y={grid.y[j]:g} is entirely stopped")
        i = int(np.argmax(act))
        if i == 0:
            raise DegenerateColumn(f"column y={grid.y[j]:g} has no continuation region")
        connected &= bool(np.all(act[i:]))
        g1, g0 = math.sqrt(max(1.0 - grid.H[j, i - 1], 0.0)), math.sqrt(max(1.0 - grid.H[j, i - 2], 0.0)) if i >= 2 else None
        h = phi[i]
        if g0 is not None and g0 > g1:
            h = phi[i - 1] + g1 * (phi[i - 1] - phi[i - 2]) / (g0 - g1)
        h = min(max(h, phi[i - 1]), phi[i])
        hs.append(max(h, lower))
        jumps.append((grid.H[j, i] - grid.H[j, i - 1]) / (phi[i] - phi[i - 1]))
    meta = {"lower_bound": lower, "connected": connected, "smooth_fit_jump": np.array(jumps),
            "complementarity": grid.residual}
    return BoundaryTable(COORD_Y, grid.y, np.array(hs), grid.meta.get("penalty", EXPONENTIAL),
                         math.nan, "pde", grid.meta.get("fine_cell", math.nan), meta)


def solve_pde(cov: ChangeOfVariables, prior: Prior, penalty: PenaltySpec, n_fine: int = 120, dy: float = 0.05,
              method: str = "psor", y_range=None):
    """Grid, operator, LCP and boundary in one call; returns (LCPGrid, BoundaryTable)."""
    grid = make_grid(cov, prior, penalty, n_fine=n_fine, dy=dy, y_range=y_range)
    op = assemble_operator(cov, prior, penalty, grid)
    sol = solve_lcp(op, method=method)
    table = extract_boundary(sol)
    table.z = cov.z
    return sol, table


def linear_penalty_check(penalty: PenaltySpec) -> bool:
    return penalty.kind == LINEAR

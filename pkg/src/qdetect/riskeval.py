"""Monte Carlo Bayesian risk of stopping policies.

Every path draws its disorder time and Brownian increments from its own
``(seed, index)`` stream, is simulated by Euler-Maruyama and filtered with
the same discretization as :mod:`qdetect.filtering`; all policies are
applied to the same paths (common random numbers).

The default ``hybrid`` estimator scores a path by

    (1 - pi_tau) + F((tau - theta)^+),

using the posterior at the alarm for the false-alarm part, whose mean is
P(tau < theta); ``direct`` uses the realized indicator 1{tau < theta}.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .boundary import COORD_X, COORD_Y, BoundaryTable
from .errors import CapabilityError
from .model import EXPONENTIAL, DiffusionModel, PenaltySpec, Prior, penalty_cost
from .simulate import PHI_CAP, X_FLOOR, SimGrid, draw_path_inputs

CONSTANT, IN_X, IN_Y, NEVER, IMMEDIATE = range(5)
PHI_LINEAR, PHI_EXPONENTIAL = "phi_linear", "phi_exponential"
HYBRID, DIRECT = "hybrid", "direct"
CHUNK = 2048


@dataclass(frozen=True)
class Policy:
    kind: int
    statistic: str = PHI_LINEAR
    h: float = math.nan
    table: BoundaryTable | None = None
    z: float = math.nan
    label: str = ""

    def __post_init__(self):
        if self.statistic not in (PHI_LINEAR, PHI_EXPONENTIAL):
            raise ValueError(f"unknown statistic {self.statistic!r}")
        if self.kind == CONSTANT and not self.h > 0:
            raise ValueError("threshold must be positive")
        if self.kind in (IN_X, IN_Y):
            if self.table is None or np.any(self.table.h <= 0):
                raise ValueError("boundary table must have positive heights")
            want = COORD_X if self.kind == IN_X else COORD_Y
            if self.table.coordinate != want:
                raise ValueError(f"policy expects a boundary in {want}")

    @classmethod
    def constant(cls, h, statistic=PHI_LINEAR):
        return cls(CONSTANT, statistic, h=float(h), label=f"phi>={h:.6g}")

    @classmethod
    def boundary_in_x(cls, table, statistic=PHI_LINEAR):
        return cls(IN_X, statistic, table=table, label="g(X)")

    @classmethod
    def boundary_in_y(cls, table, z=None, statistic=PHI_LINEAR):
        return cls(IN_Y, statistic, table=table, z=float(table.z if z is None else z), label="h(Y)")

    @classmethod
    def never(cls):
        return cls(NEVER, label="never")

    @classmethod
    def immediate(cls):
        return cls(IMMEDIATE, label="immediate")

    def scaled(self, factor: float) -> "Policy":
        if self.kind == CONSTANT:
            return Policy.constant(self.h * factor, self.statistic)
        if self.kind in (IN_X, IN_Y):
            return Policy(self.kind, self.statistic, table=self.table.scaled(factor), z=self.z,
                          label=f"{self.label}*{factor:g}")
        return self


def statistic_for(penalty: PenaltySpec) -> str:
    return PHI_EXPONENTIAL if penalty.kind == EXPONENTIAL else PHI_LINEAR


@dataclass
class RiskEstimate:
    risk: float
    se: float
    n: int
    false_alarm: float
    delay: float
    truncated: int
    flagged: bool
    label: str = ""
    samples: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"risk": self.risk, "se": self.se, "false_alarm": self.false_alarm, "delay": self.delay,
                "n": self.n, "truncated": self.truncated}


# --- per-path kernel ---

@numba.njit(cache=True)
def _coefs(x, fam, e0, e1, s0, s1, tx, t0, t1, ts):
    if fam == 0:
        s = s0 + (s1 - s0) * x / (1.0 + x)
        xs2 = x * s * s
        return e0 * xs2, e1 * xs2, x * s
    lx = math.log(x)
    return np.interp(lx, tx, t0), np.interp(lx, tx, t1), np.interp(lx, tx, ts)


@numba.njit(cache=True)
def _run_path(theta, dB, x0, dt, phi0, lam, kappa, fam, e0, e1, s0, s1, tx, t0, t1, ts,
              kinds, stats, consts, grids, vals, lens, zs, eta,
              out_k, out_pi, out_trunc):
    """Simulate and filter one path; record the stopping step of every policy."""
    n = dB.size
    npol = kinds.size
    x = x0
    lin = phi0
    ex = phi0
    rem = 0
    for p in range(npol):
        out_k[p] = -1
        if kinds[p] == 4:
            out_k[p] = 0
            out_pi[p] = 1.0 / (1.0 + lin)
        elif kinds[p] != 3:
            rem += 1
    eff_l = -math.expm1(-lam * dt) / lam
    eff_e = -math.expm1(-kappa * dt) / kappa
    g_l = math.exp(lam * dt)
    g_e = math.exp(kappa * dt)
    for k in range(n + 1):
        if rem > 0:
            for p in range(npol):
                if out_k[p] >= 0 or kinds[p] == 3:
                    continue
                stat = lin if stats[p] == 0 else ex
                kd = kinds[p]
                if kd == 0:
                    thr = consts[p]
                else:
                    m = lens[p]
                    if kd == 1:
                        v = x
                    else:
                        v = math.log(max(stat, 1e-300)) - math.log(x / zs[p]) / eta
                    thr = np.interp(v, grids[p, :m], vals[p, :m])
                if stat >= thr:
                    out_k[p] = k
                    out_pi[p] = 1.0 / (1.0 + lin)
                    rem -= 1
        if k == n or (rem == 0 and not _has_never(kinds)):
            break
        m0, m1, sig = _coefs(x, fam, e0, e1, s0, s1, tx, t0, t1, ts)
        drift = m1 if theta <= k * dt else m0
        xn = x + drift * dt + sig * dB[k]
        if xn < X_FLOOR:
            xn = X_FLOOR
        # likelihood-ratio increment at the left point
        s2 = sig * sig
        incr = (m1 - m0) / s2 * (xn - x) - 0.5 * (m1 * m1 - m0 * m0) / s2 * dt
        ratio = math.exp(incr)
        lin = min(g_l * ratio * (lin + lam * eff_l), PHI_CAP)
        ex = min(g_e * ratio * (ex + lam * eff_e), PHI_CAP)
        x = xn
    for p in range(npol):
        out_trunc[p] = False
        if out_k[p] < 0:
            out_k[p] = n
            out_pi[p] = 1.0 / (1.0 + lin)
            out_trunc[p] = True
    return 0


@numba.njit(cache=True)
def _has_never(kinds):
    for k in kinds:
        if k == 3:
            return True
    return False


def _encode(model: DiffusionModel, policies):
    npol = len(policies)
    kinds = np.array([p.kind for p in policies], dtype=np.int64)
    stats = np.array([0 if p.statistic == PHI_LINEAR else 1 for p in policies], dtype=np.int64)
    consts = np.array([p.h if p.kind == CONSTANT else 0.0 for p in policies])
    width = max([p.table.grid.size for p in policies if p.table is not None] + [1])
    grids, vals = np.zeros((npol, width)), np.zeros((npol, width))
    lens = np.ones(npol, dtype=np.int64)
    zs = np.ones(npol)
    for i, p in enumerate(policies):
        if p.table is not None:
            m = p.table.grid.size
            grids[i, :m], vals[i, :m], lens[i] = p.table.grid, p.table.h, m
        if p.kind == IN_Y:
            if not model.is_subclass:
                raise CapabilityError("boundary in Y requires subclass model")
            zs[i] = p.z
    eta = model.eta if model.is_subclass else 1.0
    return kinds, stats, consts, grids, vals, lens, zs, eta


def _model_args(model: DiffusionModel):
    if model.is_subclass:
        e = np.zeros(2)
        return 0, model.eta0, model.eta1, model.s0, model.s1, e, e, e, e
    t = model.table
    return 1, 0.0, 0.0, 0.0, 0.0, np.log(t.x), t.mu0, t.mu1, t.sigma


def simulate_stopping(model: DiffusionModel, prior: Prior, penalty: PenaltySpec, policies, grid: SimGrid,
                      n_paths: int, seed: int, x0: float | None = None, start: int = 0, workers: int = 1):
    """Stopping data of every policy on paths ``start .. start+n_paths``.

    Returns (theta, tau_index, one_minus_pi_tau, truncated) with shapes
    (n,), (n, P), (n, P), (n, P).
    """
    x0 = float(model.z if x0 is None else x0)
    n, dt = grid.n_steps, grid.step
    enc = _encode(model, policies)
    margs = _model_args(model)
    phi0 = min(prior.phi0, PHI_CAP)
    lam = prior.lam
    kappa = lam + penalty.rate_shift
    npol = len(policies)

    def run_chunk(lo, hi):
        m = hi - lo
        th = np.empty(m)
        ks = np.empty((m, npol), dtype=np.int64)
        pis = np.empty((m, npol))
        tr = np.empty((m, npol), dtype=np.bool_)
        for i in range(m):
            theta, dB = draw_path_inputs(prior, seed, lo + i, n, dt)
            th[i] = theta
            _run_path(theta, dB, x0, dt, phi0, lam, kappa, *margs, *enc, ks[i], pis[i], tr[i])
        return th, ks, pis, tr

    bounds = [(a, min(a + CHUNK, start + n_paths)) for a in range(start, start + n_paths, CHUNK)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        parts = [run_chunk(*b) for b in bounds]
    th = np.concatenate([p[0] for p in parts])
    ks = np.concatenate([p[1] for p in parts])
    pis = np.concatenate([p[2] for p in parts])
    tr = np.concatenate([p[3] for p in parts])
    return th, ks, pis, tr


def evaluate_risks(model: DiffusionModel, prior: Prior, penalty: PenaltySpec, policies, grid: SimGrid,
                   n_paths: int, seed: int, x0: float | None = None, estimator: str = HYBRID,
                   workers: int = 1, keep_samples: bool = False):
    """Risk of several policies on shared paths."""
    if estimator not in (HYBRID, DIRECT):
        raise ValueError(f"unknown estimator {estimator!r}")
    th, ks, pis, tr = simulate_stopping(model, prior, penalty, policies, grid, n_paths, seed, x0, workers=workers)
    tau = ks * grid.step
    out = []
    for j, pol in enumerate(policies):
        delay = penalty_cost(penalty, tau[:, j] - th)
        if pol.kind == NEVER or not math.isfinite(prior.phi0):
            # no alarm is ever raised, or every alarm comes after the change
            fa = np.zeros(n_paths)
        elif estimator == HYBRID:
            fa = pis[:, j]
        else:
            fa = (tau[:, j] < th).astype(float)
        total = fa + delay
        trunc = int(tr[:, j].sum())
        se = float(np.std(total, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.nan
        out.append(RiskEstimate(float(np.sum(total) / n_paths), se, n_paths, float(np.sum(fa) / n_paths),
                                float(np.sum(delay) / n_paths), trunc, trunc > 0.01 * n_paths
                                and pol.kind != NEVER, pol.label, total if keep_samples else None))
    return out


def evaluate_risk(model, prior, penalty, policy, grid, n_paths, seed, **kw) -> RiskEstimate:
    return evaluate_risks(model, prior, penalty, [policy], grid, n_paths, seed, **kw)[0]


def default_grid(prior: Prior, step: float = 1e-3, tail: float = 1e-4) -> SimGrid:
    """Horizon with P(theta > T) <= tail under the prior."""
    return SimGrid(max(prior.horizon(tail), step), step)


def never_risk_linear(prior: Prior, c: float, T: float) -> float:
    """E[c (T - theta)^+] for the prior of theta."""
    lam = prior.lam
    return prior.pi * c * T + (1 - prior.pi) * c * (T - (1 - math.exp(-lam * T)) / lam)


@dataclass
class ScanRow:
    multiplier: float
    risk: float
    se: float
    diff: float
    diff_se: float


@dataclass
class ScanResult:
    rows: list
    base_is_min: bool
    resolved: bool

    def to_dict(self) -> dict:
        return {"rows": [r.__dict__ for r in self.rows], "base_is_min": self.base_is_min,
                "resolved": self.resolved}


def optimality_scan(model, prior, penalty, base_policy: Policy, multipliers, n_paths: int, seed: int,
                    grid: SimGrid, x0=None, workers: int = 1) -> ScanResult:
    """Risks of scaled thresholds with paired (common random number) differences to the base.

    The base passes when no other multiplier beats it by more than two
    paired standard errors; ``resolved`` says every margin exceeds two.
    """
    mults = [float(m) for m in multipliers]
    if any(m <= 0 for m in mults):
        raise ValueError("multipliers must be positive")
    pols = [base_policy] + [base_policy.scaled(m) for m in mults]
    est = evaluate_risks(model, prior, penalty, pols, grid, n_paths, seed, x0, workers=workers, keep_samples=True)
    base = est[0].samples
    rows, ok, resolved = [], True, True
    for m, e in zip(mults, est[1:]):
        d = e.samples - base
        dse = float(np.std(d, ddof=1) / math.sqrt(n_paths))
        diff = float(np.sum(d) / n_paths)
        rows.append(ScanRow(m, e.risk, e.se, diff, dse))
        if m != 1.0:
            ok &= diff >= -2 * dse
            resolved &= diff > 2 * dse
    return ScanResult(rows, bool(ok), bool(resolved))


@dataclass
class SandwichReport:
    lower_bound: float
    h_lo: float
    h_hi: float
    x: np.ndarray
    g: np.ndarray
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"lower_bound": self.lower_bound, "h_lo": self.h_lo, "h_hi": self.h_hi,
                "n_points": int(self.x.size), "violations": self.violations}


def sandwich_audit(model: DiffusionModel, prior: Prior, penalty: PenaltySpec, g_table: BoundaryTable,
                   n_points: int = 200, slack: float | None = None, bounds=None) -> SandwichReport:
    """Check lower_bound <= h_lo <= g(x) <= h_hi against the constant-rho boundaries."""
    from .geometry import ChangeOfVariables
    from .solver_pde import constant_rho_boundaries

    model.require_subclass()
    if bounds is None:
        far = constant_rho_boundaries(ChangeOfVariables.of(model), prior, penalty)
        bounds = (min(far.values()), max(far.values()))
    h_lo, h_hi = bounds
    lower = penalty.lower_bound(prior)
    slack = 10 * g_table.tolerance if slack is None else slack
    grid = g_table.grid
    x = np.geomspace(grid[0], grid[-1], n_points) if grid[0] > 0 else np.linspace(grid[0], grid[-1], n_points)
    g = g_table(x)
    viol = []
    if h_lo < lower:
        viol.append({"x": None, "value": h_lo, "bound": "lower_bound"})
    for xi, gi in zip(x, g):
        if gi < h_lo - slack * max(1.0, h_lo):
            viol.append({"x": float(xi), "value": float(gi), "bound": "h_lo"})
        elif gi > h_hi + slack * max(1.0, h_hi):
            viol.append({"x": float(xi), "value": float(gi), "bound": "h_hi"})
    return SandwichReport(lower, h_lo, h_hi, x, g, viol)

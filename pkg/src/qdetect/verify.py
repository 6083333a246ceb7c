"""Self-check suites run by ``qdetect verify``.

Each suite returns a report with one entry per check; a suite's exit code
is 0 when every check passes, 1 when some check fails, and the error's own
code when a check could not run at all (3 for capability, 4 numerical).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boundary import BoundaryTable
from .errors import QDetectError
from .filtering import run_filter
from .geometry import ChangeOfVariables
from .model import EXPONENTIAL, Config, PenaltySpec
from .simulate import SimGrid, simulate_indexed_path, simulate_joint_batch, simulate_observation_batch

SUITES = ("filters", "boundaries", "risk")


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    tolerance: float | None = None
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "value": _num(self.value),
                "tolerance": _num(self.tolerance), "detail": self.detail}


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else str(v)


@dataclass
class SuiteReport:
    suite: str
    checks: list = field(default_factory=list)
    error_code: int = 0

    @property
    def passed(self) -> bool:
        return self.error_code == 0 and all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        if self.error_code:
            return self.error_code
        return 0 if self.passed else 1

    def add(self, *args, **kw):
        self.checks.append(Check(*args, **kw))

    def to_dict(self):
        return {"suite": self.suite, "passed": self.passed, "exit_code": self.exit_code,
                "checks": [c.to_dict() for c in self.checks]}


def _guard(report: SuiteReport, name: str, fn):
    try:
        fn()
    except QDetectError as exc:
        report.add(name, False, detail=f"{type(exc).__name__}: {exc}")
        report.error_code = max(report.error_code, exc.exit_code)


def _opt(cfg: Config, key: str, default):
    return cfg.solver.get(key, cfg.risk.get(key, default))


def suite_filters(cfg: Config, seed: int = 1, n_paths: int = 10_000) -> SuiteReport:
    rep = SuiteReport("filters")
    model, prior, x0 = cfg.model, cfg.prior, cfg.x0

    def identities():
        grid = SimGrid(2.0, 1e-3)
        path = simulate_indexed_path(model, prior, x0, grid, seed, 0)
        lin = run_filter(path, model, prior, PenaltySpec.linear(1.0))
        gap = float(np.max(np.abs(lin.pi - lin.phi / (1.0 + lin.phi))))
        rep.add("pi_identity", gap <= 1e-12, gap, 1e-12)
        ex = run_filter(path, model, prior, PenaltySpec.exponential(1.0, 0.0))
        rep.add("alpha0_equals_linear", bool(np.array_equal(ex.phi, lin.phi)), detail="bitwise")

    def likelihood_mean():
        grid = SimGrid(2.0, 1e-3)
        X, _ = simulate_observation_batch(model, np.full(n_paths, np.inf), x0, grid, seed)
        r, q = model.log_lik_coefs(X[:, :-1])
        L = np.exp(np.sum(r * np.diff(X, axis=1) - 0.5 * q * grid.step, axis=1))
        se = np.std(L, ddof=1) / math.sqrt(n_paths)
        z = abs(L.mean() - 1.0) / se
        rep.add("likelihood_mean_one", z <= 3.0, z, 3.0, f"E[L_T]={L.mean():.6f} se={se:.2e}")

    def posterior_mean():
        grid = SimGrid(2.0, 1e-3)
        steps = [grid.n_steps // 4, grid.n_steps // 2, grid.n_steps]
        b = simulate_joint_batch(model, prior, PenaltySpec.linear(1.0), x0, grid, seed + 1, n_paths, steps)
        worst = 0.0
        for j, t in enumerate(b.times):
            v = 1.0 - b.pi[:, j]
            se = np.std(v, ddof=1) / math.sqrt(n_paths)
            want = (1 - prior.pi) * math.exp(-prior.lam * t)
            worst = max(worst, abs(v.mean() - want) / max(se, 1e-300))
        rep.add("posterior_mean_law", worst <= 3.0, worst, 3.0, "max |z| over t = T/4, T/2, T")

    for name, fn in (("identities", identities), ("likelihood_mean_one", likelihood_mean),
                     ("posterior_mean_law", posterior_mean)):
        _guard(rep, name, fn)
    return rep


def x_grid_for(cfg: Config, n: int = 200):
    lo = float(_opt(cfg, "x_min", cfg.x0 / 10.0))
    hi = float(_opt(cfg, "x_max", cfg.x0 * 10.0))
    return np.geomspace(lo, hi, n)


def solve_g(cfg: Config, penalty: PenaltySpec | None = None, x_grid=None, n_y: int = 41):
    """Closed-form boundary on a y range wide enough for ``x_grid``, mapped to g(x)."""
    from .solver_exp import solve_boundary_exp_table
    from .solver_linear import solve_boundary_linear, solve_g_of_x, y_range_for
    from .solver_pde import constant_rho_boundaries

    penalty = cfg.penalty if penalty is None else penalty
    model, prior = cfg.model, cfg.prior
    model.require_subclass()
    cov = ChangeOfVariables.of(model, cfg.x0)
    x_grid = x_grid_for(cfg) if x_grid is None else x_grid
    far = constant_rho_boundaries(cov, prior, penalty)
    h_lo, h_hi = min(far.values()), max(far.values())
    y_lo, y_hi = y_range_for(cov, x_grid[0], x_grid[-1], h_lo, h_hi)
    y_grid = np.linspace(y_lo, y_hi, n_y)
    if penalty.kind == EXPONENTIAL:
        table = solve_boundary_exp_table(cov, prior, penalty.c, penalty.alpha, y_grid)
    else:
        table = solve_boundary_linear(cov, prior, penalty.c, y_grid)
    g = solve_g_of_x(cov, table, x_grid)
    return table, g, (h_lo, h_hi)


def monotone_violation(g: BoundaryTable, model) -> float:
    d = np.diff(g.h)
    if model.s0 < model.s1:
        return float(max(0.0, -d.min()))
    if model.s0 > model.s1:
        return float(max(0.0, d.max()))
    return float(np.ptp(g.h))


def suite_boundaries(cfg: Config) -> SuiteReport:
    rep = SuiteReport("boundaries")
    model, prior, pen = cfg.model, cfg.prior, cfg.penalty
    penalties = [PenaltySpec.linear(pen.c)]
    if pen.kind == EXPONENTIAL and pen.alpha > 0:
        penalties.append(pen)

    def run(p: PenaltySpec):
        table, g, (h_lo, h_hi) = solve_g(cfg, p)
        lb = p.lower_bound(prior)
        tag = p.kind
        rep.add(f"{tag}_lower_bound", bool(np.all(table.h >= lb) and np.all(g.h >= lb)),
                float(min(table.h.min(), g.h.min()) - lb), 0.0)
        res = table.meta["max_residual"]
        rep.add(f"{tag}_root_residual", res <= 1e-7, res, 1e-7)
        if tag != EXPONENTIAL:
            rep.add("linear_root_slope_positive", table.meta["min_slope"] > 0, table.meta["min_slope"], 0.0)
        mv = monotone_violation(g, model)
        rep.add(f"{tag}_monotone_g", mv <= 1e-8, mv, 1e-8)
        slack = 1e-8
        n_bad = int(np.sum(g.h < h_lo - slack) + np.sum(g.h > h_hi + slack))
        rep.add(f"{tag}_sandwich", n_bad == 0, n_bad, 0.0, f"[{h_lo:.8g}, {h_hi:.8g}]")

    for p in penalties:
        _guard(rep, f"{p.kind}_boundary", lambda p=p: run(p))
    return rep


def suite_risk(cfg: Config, boundary: BoundaryTable | None = None, seed: int = 3,
               n_paths: int | None = None) -> SuiteReport:
    from .riskeval import (Policy, default_grid, evaluate_risks, never_risk_linear, optimality_scan,
                           sandwich_audit, statistic_for)

    rep = SuiteReport("risk")
    model, prior, pen = cfg.model, cfg.prior, cfg.penalty
    n = int(n_paths or cfg.risk.get("n_paths", 4000))
    grid = default_grid(prior, float(cfg.risk.get("step", 2e-3)))

    def baselines():
        lin = PenaltySpec.linear(pen.c)
        imm, nev = evaluate_risks(model, prior, lin, [Policy.immediate(), Policy.never()], grid, n, seed, cfg.x0)
        rep.add("immediate_exact", abs(imm.risk - (1 - prior.pi)) <= 1e-12 and imm.se <= 1e-12,
                abs(imm.risk - (1 - prior.pi)), 1e-12)
        want = never_risk_linear(prior, pen.c, grid.n_steps * grid.step)
        z = abs(nev.risk - want) / nev.se
        rep.add("never_closed_form", z <= 3.0, z, 3.0, f"mc={nev.risk:.6g} exact={want:.6g}")

    def sandwich():
        nonlocal boundary
        if boundary is None:
            _, boundary_x, _ = solve_g(cfg)
        else:
            boundary_x = boundary
        if boundary_x.coordinate != "X":
            rep.add("sandwich", False, detail="boundary file must be in the X coordinate")
            return
        audit = sandwich_audit(model, prior, pen, boundary_x, 200)
        rep.add("sandwich", audit.passed, len(audit.violations), 0.0,
                f"{len(audit.violations)} violations" if audit.violations else "")
        if boundary is None:
            boundary = boundary_x

    def scan():
        base = Policy.boundary_in_x(boundary, statistic_for(pen))
        res = optimality_scan(model, prior, pen, base, [0.8, 1.0, 1.25], n, seed + 5, grid, cfg.x0)
        worst = min(r.diff / r.diff_se for r in res.rows if r.multiplier != 1.0)
        rep.add("optimality_scan", res.base_is_min, worst, -2.0, "min paired z over multipliers")

    _guard(rep, "baselines", baselines)
    if model.is_subclass:
        _guard(rep, "sandwich", sandwich)
        if boundary is not None:
            _guard(rep, "optimality_scan", scan)
    else:
        rep.add("sandwich", True, detail="skipped: tabulated model")
    return rep


def run_suite(name: str, cfg: Config, boundary: BoundaryTable | None = None, seed: int = 1):
    if name == "filters":
        return [suite_filters(cfg, seed)]
    if name == "boundaries":
        return [suite_boundaries(cfg)]
    if name == "risk":
        return [suite_risk(cfg, boundary, seed + 2)]
    if name == "all":
        return [r for s in SUITES for r in run_suite(s, cfg, boundary, seed)]
    raise ValueError(f"unknown suite {name!r}")

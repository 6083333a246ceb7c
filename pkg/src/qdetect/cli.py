"""Command-line entry point: ``qdetect {simulate,filter,solve,evaluate,verify,plot}``.

Every command reads one JSON config, writes its outputs into ``--out`` and a
``manifest.json`` listing each output with its SHA-256. Exit codes: 0 ok,
1 failed verification, 2 config error, 3 capability error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CapabilityError, ConfigError, QDetectError

EXIT_OK, EXIT_FAILED = 0, 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _canonical(d) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write_manifest(out: Path, cfg, command: str, seed, outputs, started: float, overrides):
    manifest = {
        "command": command,
        "config_sha256": hashlib.sha256(_canonical(cfg.raw).encode()).hexdigest(),
        "config": cfg.raw,
        "overrides": overrides,
        "seed": seed,
        "version": __version__,
        "outputs": [{"file": p.name, "sha256": _sha256(p)} for p in outputs],
        "wall_time": round(time.time() - started, 3),
    }
    _write_json(out / "manifest.json", manifest)


def _parse_range(spec: str, name: str):
    """'a:b:n' -> (a, b, n)."""
    try:
        a, b, n = spec.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError as exc:
        raise ConfigError(f"expected 'start:stop:count', got {spec!r}", name) from exc
    if n < 2 or not b > a:
        raise ConfigError("need stop > start and count >= 2", name)
    return a, b, n


def _load(args):
    from .model import load_config

    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "config") from exc
    overrides = []
    if getattr(args, "x0", None) is not None:
        raw = dict(cfg.raw, x0=args.x0)
        from .model import config_from_dict

        cfg = config_from_dict(raw)
        overrides.append(f"x0={args.x0!r}")
    return cfg, overrides


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sim_grid(cfg, args):
    from .simulate import SimGrid

    sim = cfg.simulation
    horizon = args.horizon if args.horizon is not None else float(sim.get("horizon", 2.0))
    step = args.step if args.step is not None else float(sim.get("step", 1e-3))
    try:
        return SimGrid(horizon, step)
    except ValueError as exc:
        raise ConfigError(str(exc), "simulation") from exc


# --- commands ---

def cmd_simulate(args) -> int:
    from concurrent.futures import ThreadPoolExecutor

    from .csvio import write_path
    from .filtering import run_filter
    from .simulate import simulate_indexed_path, simulate_joint

    started = time.time()
    cfg, overrides = _load(args)
    out = _out_dir(args)
    grid = _sim_grid(cfg, args)
    width = max(4, len(str(args.paths - 1)))

    def one(i):
        name = out / f"path_{i:0{width}d}.csv"
        if args.joint:
            jp = simulate_joint(cfg.model, cfg.prior, cfg.penalty, cfg.x0, grid, args.seed, index=i)
            write_path(name, jp.times, jp.X, jp.pi, jp.phi, jp.dBbar, math.nan, args.seed)
        else:
            p = simulate_indexed_path(cfg.model, cfg.prior, cfg.x0, grid, args.seed, i)
            tr = run_filter(p, cfg.model, cfg.prior, cfg.penalty)
            write_path(name, p.times, p.X, tr.pi, tr.phi, p.dB, p.theta, args.seed)
        return name

    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            files = list(pool.map(one, range(args.paths)))
    else:
        files = [one(i) for i in range(args.paths)]
    _write_manifest(out, cfg, "simulate", args.seed, files, started, overrides)
    print(f"wrote {len(files)} path file(s) to {out}")
    return EXIT_OK


def cmd_filter(args) -> int:
    from .csvio import read_path, write_filter
    from .filtering import run_filter

    started = time.time()
    cfg, overrides = _load(args)
    out = _out_dir(args)
    try:
        path = read_path(args.path)
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read path file: {exc}", "path") from exc
    if np.any(path.X <= 0):
        raise ConfigError("path has non-positive states", "path.X")
    tr = run_filter(path, cfg.model, cfg.prior, cfg.penalty)
    target = out / "filter.csv"
    write_filter(target, tr)
    _write_manifest(out, cfg, "filter", None, [target], started, overrides)
    print(f"filtered {len(tr)} points; saturated={tr.saturated}")
    return EXIT_OK


_SOLVER_MODULES = {"linear": "solver_linear", "exp": "solver_exp", "pde": "solver_pde"}


def cmd_solve(args) -> int:
    try:
        return _solve(args)
    except (ConfigError, CapabilityError):
        raise
    except QDetectError as exc:
        exc.args = (f"{_SOLVER_MODULES[args.penalty]}: {exc}",)
        raise


def _solve(args) -> int:
    from .csvio import write_boundary, write_surface, write_value_slice
    from .geometry import ChangeOfVariables
    from .model import EXPONENTIAL, LINEAR, PenaltySpec
    from .solver_linear import solve_g_of_x, y_range_for
    from .solver_pde import constant_rho_boundaries

    started = time.time()
    cfg, overrides = _load(args)
    cfg.model.require_subclass()
    out = _out_dir(args)
    prior, pen = cfg.prior, cfg.penalty
    if args.penalty == "linear" and pen.kind != LINEAR:
        pen = PenaltySpec.linear(pen.c)
        overrides.append("penalty.kind=linear")
    elif args.penalty == "exp" and pen.kind != EXPONENTIAL:
        raise ConfigError("--penalty exp needs an exponential penalty with alpha > 0", "penalty.kind")
    if pen.kind == EXPONENTIAL and not pen.alpha > 0:
        raise ConfigError("exponential boundary requires alpha > 0", "penalty.alpha")
    cov = ChangeOfVariables.of(cfg.model, cfg.x0)
    x_lo, x_hi, n_x = _parse_range(args.xgrid, "xgrid") if args.xgrid else (cfg.x0 / 10, cfg.x0 * 10, 200)
    x_grid = np.geomspace(x_lo, x_hi, n_x)
    report = {"solver": args.penalty, "penalty": pen.kind, "lower_bound": pen.lower_bound(prior)}
    files = []

    if args.penalty == "pde":
        from .solver_pde import assemble_operator, extract_boundary, make_grid, solve_lcp

        n_fine = int(cfg.solver.get("n_fine", 120))
        dy = float(cfg.solver.get("dy", 0.05))
        grid = make_grid(cov, prior, pen, n_fine=n_fine, dy=dy)
        op = assemble_operator(cov, prior, pen, grid)
        sol = solve_lcp(op)
        table = extract_boundary(sol)
        table.z = cov.z
        report.update(complementarity=sol.residual, fine_cell=grid.meta["fine_cell"],
                      connected=table.meta["connected"], diagnostics=op.diagnostics,
                      smooth_fit_jump_max=float(np.max(np.abs(table.meta["smooth_fit_jump"]))))
        surf = out / "surface.csv"
        write_surface(surf, sol)
        files.append(surf)
        print(f"complementarity_residual={sol.residual:.3e}")
    else:
        far = constant_rho_boundaries(cov, prior, pen)
        h_lo, h_hi = min(far.values()), max(far.values())
        if args.ygrid:
            y_lo, y_hi, n_y = _parse_range(args.ygrid, "ygrid")
        else:
            y_lo, y_hi = y_range_for(cov, x_grid[0], x_grid[-1], h_lo, h_hi)
            n_y = int(cfg.solver.get("n_y", 41))
        y_grid = np.linspace(y_lo, y_hi, n_y)
        if pen.kind == EXPONENTIAL:
            from .solver_exp import solve_boundary_exp_table, value_slice_exp

            table = solve_boundary_exp_table(cov, prior, pen.c, pen.alpha, y_grid)
            report["smooth_fit_residual"] = table.meta["max_residual"]
            print(f"smooth_fit_residual={table.meta['max_residual']:.3e}")
        else:
            from .solver_linear import solve_boundary_linear

            table = solve_boundary_linear(cov, prior, pen.c, y_grid)
            report.update(root_residual=table.meta["max_residual"], min_slope=table.meta["min_slope"],
                          extra_crossings=table.meta["extra_crossings"])
            print(f"root_residual={table.meta['max_residual']:.3e}")
        report["constant_rho_bounds"] = [h_lo, h_hi]

    bfile = out / "boundary_y.csv"
    write_boundary(bfile, table)
    files.append(bfile)
    # value slice at the starting point y0 = y(phi0, x0) clipped into the table
    y0 = float(np.clip(0.0, table.grid[0], table.grid[-1]))
    h0 = table(y0)
    phis = np.linspace(0.0, 1.5 * h0, 151)
    if args.penalty == "pde":
        from .boundary import ValueSlice

        j = int(np.argmin(np.abs(sol.y - y0)))
        vs = ValueSlice(float(sol.y[j]), sol.phi, sol.H[j], float(table.h[j]), "H")
    elif pen.kind == EXPONENTIAL:
        vs = value_slice_exp(cov, prior, pen.c, pen.alpha, y0, h0, phis)
    else:
        from .solver_linear import value_slice_linear

        vs = value_slice_linear(cov, prior, pen.c, y0, h0, phis)
    vfile = out / "value_slice.csv"
    write_value_slice(vfile, vs)
    files.append(vfile)
    try:
        g = solve_g_of_x(cov, table, x_grid, lower=pen.lower_bound(prior))
        gfile = out / "boundary_x.csv"
        write_boundary(gfile, g)
        files.append(gfile)
        report["g_range"] = [float(g.h.min()), float(g.h.max())]
    except ValueError as exc:
        report["g_error"] = str(exc)
    rfile = out / "report.json"
    _write_json(rfile, report)
    files.append(rfile)
    _write_manifest(out, cfg, f"solve --penalty {args.penalty}", None, files, started, overrides)
    return EXIT_OK


def _policy_from_args(args, cfg):
    from .csvio import read_boundary
    from .riskeval import Policy, statistic_for

    stat = statistic_for(cfg.penalty)
    if args.policy == "never":
        return Policy.never()
    if args.policy == "immediate":
        return Policy.immediate()
    if args.policy == "threshold":
        if args.threshold is None:
            raise ConfigError("--threshold is required for the threshold policy", "threshold")
        return Policy.constant(args.threshold, stat)
    if args.boundary is None:
        raise ConfigError("--boundary is required for the boundary policy", "boundary")
    table = read_boundary(args.boundary)
    if table.coordinate == "X":
        return Policy.boundary_in_x(table, stat)
    return Policy.boundary_in_y(table, None if math.isnan(table.z) else table.z, stat)


def cmd_evaluate(args) -> int:
    from .riskeval import default_grid, evaluate_risks

    started = time.time()
    cfg, overrides = _load(args)
    out = _out_dir(args)
    policy = _policy_from_args(args, cfg)
    step = args.step if args.step is not None else float(cfg.risk.get("step", 1e-3))
    grid = default_grid(cfg.prior, step)
    n = args.paths if args.paths is not None else int(cfg.risk.get("n_paths", 10_000))
    est = evaluate_risks(cfg.model, cfg.prior, cfg.penalty, [policy], grid, n, args.seed, cfg.x0,
                         workers=args.workers)[0]
    target = out / "risk.json"
    _write_json(target, est.to_dict())
    _write_manifest(out, cfg, "evaluate", args.seed, [target], started, overrides)
    print(json.dumps(est.to_dict()))
    if est.flagged:
        print(f"warning: {est.truncated} of {est.n} paths reached the horizon", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .csvio import read_boundary
    from .verify import run_suite

    cfg, _ = _load(args)
    boundary = read_boundary(args.boundary) if args.boundary else None
    reports = run_suite(args.suite, cfg, boundary, args.seed)
    body = {"suites": [r.to_dict() for r in reports]}
    code = max(r.exit_code for r in reports)
    body["exit_code"] = code
    if args.out:
        out = _out_dir(args)
        _write_json(out / "verify.json", body)
    for r in reports:
        for c in r.checks:
            print(f"[{'PASS' if c.passed else 'FAIL'}] {r.suite}.{c.name} {c.detail}".rstrip())
    return code


def cmd_plot(args) -> int:
    import csv

    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for f in args.csv:
        with open(f, newline="") as fh:
            rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#"))]
        header, data = rows[0], np.array(rows[1:], dtype=object)
        xi, yi = (1, 2) if header[0] == "coord" else (0, 1)
        ax.plot(data[:, xi].astype(float), data[:, yi].astype(float), label=Path(f).stem)
        ax.set_xlabel(header[xi])
        ax.set_ylabel(header[yi])
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, format="svg", metadata={"Date": None})
    print(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdetect", description="Bayesian quickest detection toolkit")
    p.add_argument("--version", action="version", version=f"qdetect {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("config", help="JSON config file")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--x0", type=float, help="override the initial observation")

    s = sub.add_parser("simulate", help="simulate observation (or joint statistic) paths")
    common(s)
    s.add_argument("--paths", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--horizon", type=float)
    s.add_argument("--step", type=float)
    s.add_argument("--joint", action="store_true", help="simulate the (pi, phi, X) system instead")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("filter", help="filter an observed path CSV")
    common(s)
    s.add_argument("--path", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("solve", help="compute stopping boundaries")
    common(s)
    s.add_argument("--penalty", choices=["linear", "exp", "pde"], required=True)
    s.add_argument("--ygrid", help="y grid as start:stop:count")
    s.add_argument("--xgrid", help="x grid as start:stop:count (log-spaced)")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("evaluate", help="Monte Carlo risk of a policy")
    common(s)
    s.add_argument("--policy", choices=["threshold", "boundary", "never", "immediate"], required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--boundary")
    s.add_argument("--paths", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--step", type=float)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("verify", help="run self-check suites")
    common(s, out_required=False)
    s.add_argument("--suite", choices=["filters", "boundaries", "risk", "all"], default="all")
    s.add_argument("--boundary", help="boundary CSV in X to audit")
    s.add_argument("--seed", type=int, default=1)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("plot", help="SVG line plot of boundary or value CSVs")
    s.add_argument("csv", nargs="+")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QDetectError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

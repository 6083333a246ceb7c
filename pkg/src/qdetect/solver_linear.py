"""Closed-form boundary and value for the linear delay penalty (subclass models).

For fixed y the boundary h solves

    int_0^h c (1+u)/u W(u) exp(-int_u^h lambda (1+v)/v^2 W(v) dv) du = 1,
    W(v) = 2 eta^2 z^2 e^{-2 eta y} v^{2 eta} / sigma^2(z e^{-eta y} v^eta) = 2 / rho_hat(v, y),

and below the boundary the value is

    G(phi) = 1/(1+h) + int_phi^h J(w) / (1+w)^2 dw,

with J(w) the left-hand side above evaluated at upper limit w. Both
integrals run in log-variables; for constant rho the inner integral has the
closed form lambda W (ln(h/u) + 1/u - 1/h).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .boundary import COORD_X, COORD_Y, BoundaryTable, ValueSlice
from .errors import NoConvergence, NoRoot, QuadratureFailure
from .geometry import ChangeOfVariables, x_of, y_of
from .model import LINEAR, Prior

QUAD_FAIL = 1e-9
U_MIN_REL = 1e-8
H_MAX_LIMIT = 1e9


def weight_W(cov: ChangeOfVariables, v, y):
    m = cov.model
    m.require_subclass()
    eta = m.eta
    x = x_of(cov, v, y)
    sig = m.sigma(x)
    return 2.0 * eta * eta * x * x / (sig * sig)


def _constant_weight(cov: ChangeOfVariables):
    m = cov.model
    if m.s0 == m.s1:
        return 2.0 / ((m.eta1 - m.eta0) ** 2 * m.s0 ** 2)
    return None


@dataclass
class _Integrand:
    """Nested integrals for one (y, lambda, c); quadrature errors are accumulated."""

    cov: ChangeOfVariables
    lam: float
    c: float
    y: float
    err: float = 0.0
    inner_err: float = 0.0
    w_const: float | None = field(default=None)

    def __post_init__(self):
        self.w_const = _constant_weight(self.cov)
        m = self.cov.model
        self._x_scale = self.cov.z * math.exp(-m.eta * self.y)
        self._d2 = (m.eta1 - m.eta0) ** 2

    def W(self, v):
        if self.w_const is not None:
            return self.w_const
        m = self.cov.model
        x = self._x_scale * v ** m.eta
        s = m.s0 + (m.s1 - m.s0) * x / (1.0 + x) if math.isfinite(x) else m.s1
        return 2.0 / (self._d2 * s * s)

    def inner(self, u, h):
        """int_u^h lambda (1+v)/v^2 W(v) dv."""
        if self.w_const is not None:
            return self.lam * self.w_const * (math.log(h / u) + 1.0 / u - 1.0 / h)
        return self.inner_quad(u, h)

    def inner_quad(self, u, h):
        lam = self.lam

        def f(t):
            v = math.exp(t)
            return lam * (1.0 + v) * self.W(v) / v

        val, err = integrate.quad(f, math.log(u), math.log(h), epsabs=1e-13, epsrel=1e-12, limit=200)
        self.inner_err = err
        return val

    def lhs(self, h):
        """J(h) plus the tail bound for the truncated u-range."""
        u_min = U_MIN_REL * h
        c = self.c
        # an inner error d perturbs exp(-e) by about d exp(-e); track the worst such shift
        prop = [0.0]

        def f(t):
            u = math.exp(t)
            self.inner_err = 0.0
            e = self.inner(u, h)
            val = c * (1.0 + u) * self.W(u) * math.exp(-e) if e < 745 else 0.0
            prop[0] = max(prop[0], val * self.inner_err)
            return val

        a, b = math.log(u_min), math.log(h)
        # the integrand is negligible below h/60 (damping e^{-lambda W/u}); split there
        split = max(a, b - math.log(60.0))
        v1, e1 = integrate.quad(f, a, split, epsabs=1e-14, epsrel=1e-12, limit=200)
        v2, e2 = integrate.quad(f, split, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        tail = self._tail(u_min, h)
        self.err = max(self.err, e1 + e2 + tail + prop[0] * (b - a))
        return v1 + v2

    def _tail(self, u_min, h):
        # inner >= lambda W_lo (1/u - 1/h) and W <= W_hi on (0, u_min)
        m = self.cov.model
        if self.w_const is not None:
            w_lo = w_hi = self.w_const
        else:
            d2 = (m.eta1 - m.eta0) ** 2
            w_lo = 2.0 / (d2 * max(m.s0, m.s1) ** 2)
            w_hi = 2.0 / (d2 * min(m.s0, m.s1) ** 2)
        k = self.lam * w_lo
        arg = k / u_min
        if arg > 700:
            return 0.0
        return self.c * (1 + u_min) * w_hi * math.exp(k / h) * special.exp1(arg)


def _check(ig: _Integrand):
    if ig.err > QUAD_FAIL:
        raise QuadratureFailure(f"nested quadrature error {ig.err:.2e} exceeds {QUAD_FAIL:.0e}")


def lhs_boundary_eq(cov: ChangeOfVariables, prior: Prior, c: float, h: float, y: float,
                    force_quadrature: bool = False) -> float:
    if not h > 0:
        raise ValueError("h must be positive")
    ig = _Integrand(cov, prior.lam, c, y)
    if force_quadrature:
        ig.w_const = None
    val = ig.lhs(h)
    _check(ig)
    return val


@dataclass
class RootCertificate:
    y: float
    h: float
    residual: float
    slope: float
    extra_crossings: int


class JCurve:
    """J(w) and K(w) = int_0^w J/(1+v)^2 dv as functions of w, traced by an ODE.

    Differentiating J in its upper limit gives the linear equation
    dJ/dw = (1+w) W(w) (c - lambda J / w) / w, stiff but stable as w -> 0;
    J is started from its small-w asymptote c w / lambda.
    """

    def __init__(self, cov: ChangeOfVariables, lam: float, c: float, y: float, w_end: float,
                 w_start: float | None = None, rtol: float = 1e-10):
        self.cov, self.lam, self.c, self.y = cov, lam, c, y
        self._w = _Integrand(cov, lam, c, y)
        w0 = U_MIN_REL * lam / c if w_start is None else w_start
        self.w0 = w0

        def rhs(t, s):
            w = math.exp(t)
            W = self._w.W(w)
            return [(1.0 + w) * W * (c - lam * s[0] / w), w * s[0] / (1.0 + w) ** 2]

        def jac(t, s):
            w = math.exp(t)
            W = self._w.W(w)
            return [[-(1.0 + w) * W * lam / w, 0.0], [w / (1.0 + w) ** 2, 0.0]]

        def crossing(t, s):
            return s[0] - 1.0

        j0 = c * w0 / lam
        sol = integrate.solve_ivp(rhs, (math.log(w0), math.log(w_end)), [j0, 0.5 * c * w0 * w0 / lam],
                                  method="Radau", jac=jac, rtol=rtol, atol=1e-14,
                                  dense_output=True, events=crossing)
        if not sol.success:
            raise NoConvergence(f"J-curve integration failed: {sol.message}")
        self.sol = sol
        self.crossings = np.exp(sol.t_events[0])

    def J(self, w):
        w = np.asarray(w, dtype=float)
        out = np.where(w > self.w0, self.sol.sol(np.log(np.maximum(w, self.w0)))[0], self.c * w / self.lam)
        return float(out) if out.ndim == 0 else out

    def K(self, w):
        w = np.asarray(w, dtype=float)
        out = np.where(w > self.w0, self.sol.sol(np.log(np.maximum(w, self.w0)))[1],
                       0.5 * self.c * w * w / self.lam)
        return float(out) if out.ndim == 0 else out

    def slope(self, w):
        return (1.0 + w) * self._w.W(w) * (self.c - self.lam * self.J(w) / w) / w


def _solve_one(cov, lam, c, y, lower, tol, scan) -> RootCertificate:
    w_end = 8.0 * lower
    while True:
        curve = JCurve(cov, lam, c, y, w_end)
        hits = curve.crossings[curve.crossings > lower]
        if hits.size:
            break
        if w_end > H_MAX_LIMIT:
            raise NoRoot(f"no root below {H_MAX_LIMIT:g} (y={y:g})")
        w_end *= 8.0
    if curve.J(lower * (1 + 1e-9)) >= 1.0:
        raise NoRoot(f"left-hand side already >= 1 at the lower bound (y={y:g})")
    h = float(hits[0])
    ig = _Integrand(cov, lam, c, y)
    # one Newton polish against the nested quadrature, which also certifies the root
    r0 = ig.lhs(h) - 1.0
    h1 = h - r0 / curve.slope(h)
    r1 = ig.lhs(h1) - 1.0
    if abs(r1) <= abs(r0):
        h, r0 = h1, r1
    resid, slope = r0, curve.slope(h)
    _check(ig)
    extra = int(hits.size - 1) if scan else 0
    return RootCertificate(float(y), h, resid, slope, extra)


def solve_boundary_linear(cov: ChangeOfVariables, prior: Prior, c: float, y_grid,
                          tol: float = 1e-8, scan: bool = True) -> BoundaryTable:
    """Boundary h~(y) on ``y_grid``; each root is certified by the nested quadrature."""
    cov.model.require_subclass()
    y_grid = np.atleast_1d(np.asarray(y_grid, dtype=float))
    lower = prior.lam / c
    certs = []
    const = _constant_weight(cov) is not None
    for y in y_grid:
        if const and certs:
            certs.append(RootCertificate(float(y), *[getattr(certs[0], k) for k in
                                                     ("h", "residual", "slope", "extra_crossings")]))
            continue
        certs.append(_solve_one(cov, prior.lam, c, float(y), lower, tol, scan))
    h = np.array([ct.h for ct in certs])
    meta = {
        "lower_bound": lower,
        "max_residual": max(abs(ct.residual) for ct in certs),
        "min_slope": min(ct.slope for ct in certs),
        "extra_crossings": sum(ct.extra_crossings for ct in certs),
        "certificates": certs,
    }
    return BoundaryTable(COORD_Y, y_grid, h, LINEAR, cov.z, "linear", tol, meta)


def value_G(cov: ChangeOfVariables, prior: Prior, c: float, phi: float, y: float, h: float) -> float:
    if phi >= h:
        return 1.0 / (1.0 + phi)
    ig = _Integrand(cov, prior.lam, c, y)
    g = _G_piece(ig, max(phi, 0.0), h)
    _check(ig)
    return max(1.0 / (1.0 + h) + g, 0.0)


def _G_piece(ig: _Integrand, a: float, b: float) -> float:
    if b <= a:
        return 0.0

    def f(w):
        return ig.lhs(w) / (1.0 + w) ** 2 if w > 0 else 0.0

    val, err = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
    ig.err = max(ig.err, err)
    return val


def value_slice_linear(cov: ChangeOfVariables, prior: Prior, c: float, y: float, h: float,
                       phi_grid) -> ValueSlice:
    """G on ``phi_grid`` (payoff 1/(1+phi) at and above h) from the traced J-curve."""
    phi_grid = np.asarray(phi_grid, dtype=float)
    curve = JCurve(cov, prior.lam, c, y, h * (1 + 1e-9))
    inside = phi_grid < h
    G = np.empty_like(phi_grid)
    G[~inside] = 1.0 / (1.0 + phi_grid[~inside])
    if np.any(inside):
        G[inside] = 1.0 / (1.0 + h) + curve.K(h) - curve.K(np.maximum(phi_grid[inside], 0.0))
    return ValueSlice(float(y), phi_grid, np.maximum(G, 0.0), float(h), "G")


def dropped_term_blowup(cov: ChangeOfVariables, prior: Prior, y: float, phis, w: float = 1.0):
    """Homogeneous part of dG/dphi, exp(int_phi^w lambda (1+u)/u^2 W du)/(1+phi)^2.

    It diverges as phi -> 0, which is why its coefficient is set to zero; the
    returned values let callers confirm the divergence.
    """
    ig = _Integrand(cov, prior.lam, 1.0, y)
    out = []
    for p in np.atleast_1d(phis):
        e = ig.inner(float(p), w)
        out.append(math.exp(min(e, 700.0)) / (1 + p) ** 2)
    return np.array(out)


def solve_g_of_x(cov: ChangeOfVariables, table: BoundaryTable, x_grid, lower: float | None = None,
                 tol: float = 1e-8, damping: float = 0.5, max_iter: int = 1000) -> BoundaryTable:
    """Map a y-boundary to the observation scale: g(x) = h(y(g(x), x)).

    Anchoring z at x itself is equivalent to evaluating y with the table's
    own z, because h depends on (y, z) only through z e^{-eta y}.
    """
    if table.coordinate != COORD_Y:
        raise ValueError("expected a boundary in the Y coordinate")
    cov_t = ChangeOfVariables(cov.model, table.z)
    lower = table.meta.get("lower_bound", 0.0) if lower is None else lower
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    hmax = float(table.h.max())

    def H(g, x):
        return table(y_of(cov_t, g, x), extrapolate=True)

    out = np.empty_like(x_grid)
    iters = []
    for i, x in enumerate(x_grid):
        g = float(np.clip(H(hmax, x), lower, None))
        ok = False
        for k in range(max_iter):
            g_new = (1 - damping) * g + damping * H(g, x)
            if abs(g_new - g) <= tol * 1e-2 * max(1.0, g):
                g, ok = g_new, True
                break
            g = g_new
        if not ok or abs(g - H(g, x)) > tol:
            lo, hi = max(lower, 1e-300), 10.0 * hmax
            f_lo, f_hi = lo - H(lo, x), hi - H(hi, x)
            if f_lo > 0 or f_hi < 0:
                raise NoConvergence(f"g(x) fixed point not bracketed at x={x:g}")
            g = optimize.brentq(lambda v: v - H(v, x), lo, hi, xtol=tol * 1e-3, rtol=1e-14)
            k = max_iter
        yv = y_of(cov_t, g, x)
        if yv < table.grid[0] - 1e-12 or yv > table.grid[-1] + 1e-12:
            raise ValueError(f"boundary table does not cover y={yv:.4f} needed at x={x:g}")
        out[i] = g
        iters.append(k)
    meta = {"lower_bound": lower, "iterations": iters, "source_z": table.z}
    return BoundaryTable(COORD_X, x_grid, out, table.penalty, table.z, table.solver + "+g(x)", tol, meta)


def y_range_for(cov: ChangeOfVariables, x_lo: float, x_hi: float, h_lo: float, h_hi: float, pad: float = 0.05):
    """y interval that g(x) = h(y(g, x)) can reach for x in [x_lo, x_hi], g in [h_lo, h_hi]."""
    corners = [y_of(cov, g, x) for g in (h_lo, h_hi) for x in (x_lo, x_hi)]
    return min(corners) - pad, max(corners) + pad

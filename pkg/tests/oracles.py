"""Independent high-precision oracles for the constant-rho boundaries."""

import mpmath as mp
import numpy as np


def linear_lhs_mp(h, lam, c, w):
    # J(h) = c W e^{a/h} h^{-a} int_0^h (1+u) u^{a-1} e^{-a/u} du with a = lam W
    a = lam * w
    h = mp.mpf(h)
    integral = mp.quad(lambda u: (1 + u) * u ** (a - 1) * mp.exp(-a / u), [0, h / 10, h])
    return c * w * mp.exp(a / h) * h ** (-a) * integral


def linear_root_mp(lam, c, w, guess):
    with mp.workdps(30):
        return float(mp.findroot(lambda h: linear_lhs_mp(h, lam, c, w) - 1, guess))


def linear_lhs_trapezoid(h, n=1_000_000):
    """lam = c = 1, rho = 2 left-hand side by a plain n-node trapezoid rule."""
    u = np.linspace(0.0, h, n + 1)[1:]
    f = (1 + u) * np.exp(1.0 / h - 1.0 / u) / h
    du = h / n
    return du * (f.sum() - 0.5 * f[-1])


def bisect(f, a, b, tol=1e-13):
    fa = f(a)
    while b - a > tol:
        m = 0.5 * (a + b)
        fm = f(m)
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def kummer_hinf(phi, lam, alpha, rho):
    A, B, C = 2 * lam / rho, 2 * (lam + alpha) / rho, 2 * lam / rho
    k = (-(1 - B) + mp.sqrt((1 - B) ** 2 + 4 * C)) / 2
    xi = A / mp.mpf(phi)
    return xi ** k * mp.hyperu(k, 2 * k + 2 - B, xi)


def exp_root_mp(lam, alpha, c, rho, bracket):
    with mp.workdps(30):
        def r(h):
            v = mp.diff(lambda p: mp.log(kummer_hinf(p, lam, alpha, rho)), h)
            return v * (c * (1 + h) + 1) - c
        return bisect(lambda h: float(r(h)), *bracket, tol=1e-14)


LINEAR_ROOT_UNIT = 1.5153403515970778
EXP_ROOT_UNIT = 1.3678812949306045

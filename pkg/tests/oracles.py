"""Independent reference computations used to freeze and cross-check values.

Nothing here calls into the package: every oracle is brute force, a generic
scipy routine, or a textbook closed form.
"""
import math
from decimal import Decimal, localcontext

import numpy as np
from scipy import optimize


def lognormal_power_value(pi, r, b, sigma, beta, T=1.0, x0=1.0):
    """E[X(T)**beta / beta] for constant fraction pi in one stock."""
    mu = math.log(x0) + (r + pi * (b - r) - 0.5 * (pi * sigma) ** 2) * T
    var = (pi * sigma) ** 2 * T
    return math.exp(beta * mu + 0.5 * beta ** 2 * var) / beta


def golden_primal_fraction(r, b, sigma, beta, lo=-20.0, hi=20.0):
    """Maximize the exact lognormal moment over a constant fraction."""
    res = optimize.minimize_scalar(lambda p: -lognormal_power_value(p, r, b, sigma, beta),
                                   bracket=(lo, 0.0, hi), method="golden", tol=1e-12)
    return res.x


def power_dual_objective(y, x0, r, theta_hat, beta, T=1.0):
    """y -> x0 y + E[Ut(Y(T))] with Y lognormal, dual drift r + |theta_hat|^2 / 2."""
    q = beta / (beta - 1.0)
    mu = math.log(y) - (r + 0.5 * theta_hat ** 2) * T
    var = theta_hat ** 2 * T
    return x0 * y + (1.0 - beta) / beta * math.exp(q * mu + 0.5 * q * q * var)


def golden_min(fn, lo, hi, tol=1e-13):
    """Plain golden-section minimization."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def power_dual_y_golden_decimal(x0, r, theta_hat, beta, T=1.0, lo=0.1, hi=10.0, digits=40):
    """Golden-section minimizer of the power dual objective in 40-digit decimal.

    In double precision golden section cannot resolve the minimizer better than
    about sqrt(eps) relative, since the objective is flat there to rounding.
    """
    with localcontext() as ctx:
        ctx.prec = digits
        D = Decimal
        x0, r, th, beta, T = D(repr(x0)), D(repr(r)), D(repr(theta_hat)), D(repr(beta)), D(repr(T))
        q = beta / (beta - 1)
        drift = (r + th * th / 2) * T
        var = th * th * T

        def f(y):
            mu = y.ln() - drift
            return x0 * y + (1 - beta) / beta * (q * mu + q * q * var / 2).exp()

        g = (D(5).sqrt() - 1) / 2
        a, b = D(repr(lo)), D(repr(hi))
        c, d = b - g * (b - a), a + g * (b - a)
        fc, fd = f(c), f(d)
        while b - a > D(10) ** (-(digits // 2 - 2)):
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - g * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + g * (b - a)
                fd = f(d)
        return float((a + b) / 2)


def quartic_bisection(x0, r, th2, T=1.0, lo=1e-3, hi=10.0):
    """Root of x0 y^4 - e^{(r+th2)T} y^2 - e^{(3r+6 th2)T} on (lo, hi] by bisection."""
    A = math.exp((r + th2) * T)
    B = math.exp((3 * r + 6 * th2) * T)
    f = lambda y: x0 * y ** 4 - A * y ** 2 - B
    a, b = lo, hi
    assert f(a) < 0 < f(b)
    for _ in range(200):
        m = 0.5 * (a + b)
        if f(m) < 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def conjugate_on_grid(U, y, x_max=50.0, step=1e-4):
    x = np.arange(step, x_max + step / 2, step)
    return float(np.max(U(x) - x * y))


def _grid(R, n, dim):
    g = np.linspace(-R, R, n)
    if dim == 1:
        return g[:, None]
    return np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)


def _members(A, c, P):
    if A.shape[0] == 0:
        return P
    return P[np.all(P @ A.T <= c + 1e-12, axis=1)]


def brute_force_projection_2d(A, c, x, R=3.0, n=1201):
    """Nearest grid point of {A p <= c} to x on a square grid."""
    cand = _members(A, c, _grid(R, n, 2))
    return cand[np.argmin(np.linalg.norm(cand - x, axis=1))]


def brute_force_normal_cone(A, c, x, y, R=10.0, n=401):
    """max of y'(x* - x) over a grid of {A x* <= c} in [-R, R]^N, N <= 2."""
    cand = _members(A, c, _grid(R, n, len(x)))
    return float(np.max((cand - x) @ y))


def cone_projection_lsq(gens_cols, x):
    """Projection onto the cone generated by the columns via bounded least squares."""
    res = optimize.lsq_linear(gens_cols, x, bounds=(0, np.inf), tol=1e-15, method="bvls")
    return gens_cols @ res.x


def log_pointwise_qp(sigma, theta, lower, upper):
    """pi* = argmin over the box of |sigma' pi - theta|^2 / 2, then v = sigma (sigma' pi* - theta)."""
    sigma = np.asarray(sigma, dtype=float)
    theta = np.asarray(theta, dtype=float)
    fun = lambda p: 0.5 * np.sum((sigma.T @ p - theta) ** 2)
    jac = lambda p: sigma @ (sigma.T @ p - theta)
    bounds = [(None if not np.isfinite(l) else l, None if not np.isfinite(u) else u)
              for l, u in zip(lower, upper)]
    res = optimize.minimize(fun, np.zeros(theta.size), jac=jac, bounds=bounds, method="L-BFGS-B",
                            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000})
    pi = res.x
    return pi, sigma @ (sigma.T @ pi - theta)


def brute_force_1d_min(fn, lo, hi, step=1e-6):
    x = np.arange(lo, hi + step / 2, step)
    return float(x[np.argmin(fn(x))])

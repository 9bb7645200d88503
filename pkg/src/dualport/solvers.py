"""Closed-form dual solvers and the dual <-> primal construction maps.

Each solver returns a :class:`DualSolution`: the optimal initial dual state
``y_hat`` and dual control ``v_hat`` together with evaluators that produce
the dual state Y, the dual adjoint pair (p2, q2) and, through the dynamic
relations, the primal strategy pi, wealth X and primal adjoint pair (p1, q1)
along simulated Brownian paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .constraints import (
    Box,
    ConstraintSet,
    FullSpace,
    Orthant,
    project,
    project_barrier_cone,
    sigma_transformed_cone_project,
    support_function,
    support_function_batch,
)
from .market import MarketModel, market_price_of_risk, solve_cells
from .paths import PathBundle, simulate_dual, w_left
from .utility import LogUtility, NonHARAUtility, PowerUtility, UtilityFunction

__all__ = [
    "SolverError",
    "DualSolution",
    "Trajectories",
    "pointwise_dual_minimizer",
    "pointwise_dual_minimizer_batch",
    "outer_y_optimize",
    "nonhara_y_hat",
    "solve_power",
    "solve_log",
    "solve_nonhara",
    "solve",
    "primal_from_dual",
    "dual_from_primal",
]

PG_TOL = 1e-10
PG_MAX_ITER = 100_000


class SolverError(ValueError):
    """A solver precondition is violated (wrong constraint family, coefficients...)."""


# --------------------------------------------------------------------------
# pointwise minimization of delta_K(v) + 0.5 |theta + sigma^{-1} v|^2
# --------------------------------------------------------------------------

def _proximal_gradient(K: ConstraintSet, sigma: np.ndarray, theta: np.ndarray) -> np.ndarray:
    sinv = np.linalg.inv(sigma)
    H = sinv.T @ sinv
    step = 1.0 / float(np.max(np.linalg.eigvalsh(H)))
    v = np.zeros_like(theta)
    for _ in range(PG_MAX_ITER):
        grad = sinv.T @ (theta + sinv @ v)
        z = v - step * grad
        # prox of step * delta_K: z - P_{-step K}(z) = z + step * P_K(-z / step)
        v_new = z + step * project(K, -z / step)
        if np.linalg.norm(v_new - v) < PG_TOL:
            return v_new
        v = v_new
    raise SolverError("pointwise dual minimizer did not converge in 1e5 iterations")


def pointwise_dual_minimizer(K: ConstraintSet, sigma, theta) -> np.ndarray:
    """argmin over the barrier cone of delta_K(v) + 0.5 |theta + sigma^{-1} v|^2.

    For a cone this is ``sigma @ proj(-theta | sigma^{-1} K~)``; otherwise a
    proximal-gradient iteration with step 1/L.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if K.is_cone:
        v = sigma @ sigma_transformed_cone_project(K, sigma, -theta)
    else:
        v = _proximal_gradient(K, sigma, theta)
    # remove rounding that would put v a hair outside the barrier cone
    return project_barrier_cone(K, v)


def _is_diagonal(sigma: np.ndarray) -> bool:
    off = sigma - np.einsum("...ii->...i", sigma)[..., None] * np.eye(sigma.shape[-1])
    return not np.any(off)


def pointwise_dual_minimizer_batch(K: ConstraintSet, sigma, theta) -> np.ndarray:
    """Minimizer for stacks of (sigma, theta), shapes (..., N, N) and (..., N).

    Box-type sets with diagonal volatility separate by coordinate and are
    solved in closed form; everything else loops over distinct cells.
    """
    sigma = np.asarray(sigma, dtype=float)
    theta = np.asarray(theta, dtype=float)
    sigma = np.broadcast_to(sigma, theta.shape[:-1] + sigma.shape[-2:])
    if isinstance(K, (FullSpace, Orthant, Box)) and _is_diagonal(sigma):
        s = np.einsum("...ii->...i", sigma)
        if isinstance(K, FullSpace):
            return np.zeros_like(theta)
        lo = np.zeros(K.n) if isinstance(K, Orthant) else K.lower
        up = np.full(K.n, np.inf) if isinstance(K, Orthant) else K.upper
        # the minimizing v is sigma (sigma' pi - theta) with pi the
        # coordinatewise clip of theta / s into the box
        free = theta / s
        pi = np.clip(free, lo, up)
        # exactly zero on coordinates where the bound is slack
        return np.where(pi == free, 0.0, s * (s * pi - theta))
    flat_s = sigma.reshape(-1, K.n, K.n)
    flat_t = theta.reshape(-1, K.n)
    out = np.empty_like(flat_t)
    cache: dict = {}
    for i in range(flat_t.shape[0]):
        key = flat_s[i].tobytes() + flat_t[i].tobytes()
        if key not in cache:
            cache[key] = pointwise_dual_minimizer(K, flat_s[i], flat_t[i])
        out[i] = cache[key]
    return out.reshape(theta.shape)


# --------------------------------------------------------------------------
# outer one-dimensional problem in y
# --------------------------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def outer_y_optimize(fn: Callable[[float], float], bracket=(1e-6, 1e6), tol: float = 1e-10,
                     n_scan: int = 241) -> float:
    """Minimize a convex function of y > 0.

    A log-spaced scan locates the minimum, golden-section search narrows the
    bracket, and bisection on the sign of a central difference resolves the
    last digits (function values alone are flat to rounding near a minimum).
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 < lo < hi:
        raise SolverError("bracket must satisfy 0 < y_lo < y_hi")
    ys = np.logspace(np.log10(lo), np.log10(hi), n_scan)
    vals = np.array([fn(y) for y in ys])
    i = int(np.nanargmin(vals))
    if i == 0 or i == n_scan - 1:
        raise SolverError("bracket does not contain a sign change of the derivative")
    a, b = ys[i - 1], ys[i + 1]

    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while (b - a) > max(1e-7 * c, tol):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)

    def slope(y):
        h = 1e-5 * y
        return fn(y + h) - fn(y - h)

    # widen slightly so the root of the slope is inside
    a, b = a - (b - a), b + (b - a)
    a = max(a, lo)
    sa, sb = slope(a), slope(b)
    if sa > 0 or sb < 0:
        return 0.5 * (a + b)
    while b - a > tol:
        mid = 0.5 * (a + b)
        if slope(mid) < 0:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


# --------------------------------------------------------------------------
# solution containers
# --------------------------------------------------------------------------

@dataclass
class Trajectories:
    """Processes at the grid points t_0..t_M along P paths.

    Scalars have shape (P, M+1), vectors (P, M+1, N).  Per-cell inputs are
    extended to the right endpoint with the last cell's value.
    """

    grid: np.ndarray
    dW: np.ndarray
    r: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    Y: np.ndarray
    p2: np.ndarray
    q2: np.ndarray
    pi: np.ndarray
    X: np.ndarray
    p1: np.ndarray
    q1: np.ndarray

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.grid)

    @property
    def theta_v(self) -> np.ndarray:
        return self.theta + solve_cells(self.sigma, self.v)


@dataclass
class DualSolution:
    kind: str
    market: MarketModel
    K: ConstraintSet
    utility: UtilityFunction
    y_hat: float
    v_hat: np.ndarray          # (M, N), or (P, M, N) for random coefficients
    theta_hat: np.ndarray      # same shape as v_hat
    pi_hat_cells: Optional[np.ndarray]  # closed-form strategy per cell when state free
    dual_value: Optional[float]
    primal_value: Optional[float]
    p2_fn: Callable = field(repr=False)
    q2_fn: Callable = field(repr=False)
    paths: Optional[PathBundle] = field(default=None, repr=False)

    @property
    def x0(self) -> float:
        return self.market.x0

    def trajectories(self, paths: Optional[PathBundle] = None, threads=None) -> Trajectories:
        paths = paths or self.paths
        if paths is None:
            raise SolverError("paths are required to evaluate the solution")
        if self.market.is_random and (paths.seed, paths.n_paths) != (self.paths.seed, self.paths.n_paths):
            raise SolverError("random-coefficient solutions are tied to the paths they were solved on")
        m = self.market
        dW = paths.dW
        r, b, sigma = m.coefficients(w_left(dW) if m.is_random else None)
        theta = market_price_of_risk(m, w_left(dW) if m.is_random else None).theta
        v = self.v_hat if self.v_hat.ndim == 3 else self.v_hat[None]
        Y = simulate_dual(m, self.y_hat, self.v_hat, self.K, paths, threads).values
        ext = _extend_cells
        r_p, b_p, s_p, th_p, v_p = ext(r), ext(b), ext(sigma), ext(theta), ext(v)
        thv_p = th_p + solve_cells(s_p, v_p)
        p2 = self.p2_fn(paths, dW, Y)
        q2 = self.q2_fn(paths, dW, Y, p2, thv_p)
        pi, X, p1, q1 = primal_from_dual(Y, p2, q2, v_p, th_p, s_p)
        P = dW.shape[0]
        bshape = (P,) + r_p.shape[1:]
        return Trajectories(
            grid=m.grid, dW=dW,
            r=np.broadcast_to(r_p, bshape), b=np.broadcast_to(b_p, bshape + (m.n_assets,)),
            sigma=np.broadcast_to(s_p, bshape + (m.n_assets, m.n_assets)),
            theta=np.broadcast_to(th_p, bshape + (m.n_assets,)),
            v=np.broadcast_to(v_p, bshape + (m.n_assets,)),
            Y=Y, p2=p2, q2=q2, pi=pi, X=X, p1=p1, q1=q1,
        )

    def summary(self) -> dict:
        out = {
            "kind": self.kind,
            "y_hat": self.y_hat,
            "dual_value": self.dual_value,
            "primal_value": self.primal_value,
        }
        return out


def _extend_cells(arr: np.ndarray) -> np.ndarray:
    """(P, M, ...) per-cell array -> (P, M+1, ...) per-point array."""
    return np.concatenate([arr, arr[:, -1:]], axis=1)


def primal_from_dual(Y, p2, q2, v, theta, sigma):
    """Dual optimum -> primal optimum.

    pi = sigma^{-T} q2 / p2, X = p2, p1 = -Y, q1 = Y (sigma^{-1} v + theta).
    """
    sT = np.swapaxes(sigma, -1, -2)
    pi = solve_cells(sT, q2) / p2[..., None]
    X = p2
    p1 = -Y
    q1 = Y[..., None] * (solve_cells(sigma, v) + theta)
    return pi, X, p1, q1


def dual_from_primal(X, pi, p1, q1, theta, sigma):
    """Primal optimum -> dual optimum.

    y = -p1(0), v = -sigma (q1 / p1 + theta), Y = -p1, p2 = X,
    q2 = sigma' pi X.
    """
    y_hat = -p1[..., 0]
    v = -(sigma @ (q1 / p1[..., None] + theta)[..., None])[..., 0]
    Y = -p1
    p2 = X
    q2 = (np.swapaxes(sigma, -1, -2) @ pi[..., None])[..., 0] * X[..., None]
    return y_hat, v, Y, p2, q2


# --------------------------------------------------------------------------
# helpers shared by the solvers
# --------------------------------------------------------------------------

def _require_cone(K: ConstraintSet, who: str):
    if not K.is_cone:
        raise SolverError(f"{who} solver requires a cone")


def _cone_cells(m: MarketModel, K: ConstraintSet):
    """v_hat and theta_hat on every cell of a deterministic market, K a cone."""
    theta = market_price_of_risk(m).theta[0]
    sigma = m.sigma
    v = pointwise_dual_minimizer_batch(K, sigma, theta)
    theta_hat = theta + solve_cells(sigma, v)
    return v, theta_hat


def _cumulative_integral(values_cells: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Left-point integral at grid points, shape (..., M+1)."""
    c = np.cumsum(values_cells * dt, axis=-1)
    return np.concatenate([np.zeros(c.shape[:-1] + (1,)), c], axis=-1)


# --------------------------------------------------------------------------
# power utility on a cone
# --------------------------------------------------------------------------

def solve_power(m: MarketModel, K: ConstraintSet, beta: float) -> DualSolution:
    """Power utility x**beta / beta with a closed convex cone constraint."""
    _require_cone(K, "power")
    if m.is_random:
        raise SolverError("power solver requires deterministic coefficients")
    u = PowerUtility(beta)
    v, theta_hat = _cone_cells(m, K)
    dt = m.dt
    th2 = np.sum(theta_hat ** 2, axis=-1)
    integral = float(np.sum((beta / (2 * (beta - 1) ** 2) * th2 - beta / (beta - 1) * m.r) * dt))
    growth = math.exp(integral)
    y_hat = m.x0 ** (beta - 1) * math.exp((1 - beta) * integral)
    dual_value = m.x0 * y_hat + (1 - beta) / beta * y_hat ** (beta / (beta - 1)) * growth

    drift_cells = m.r + (1 - 2 * beta) / (2 * (1 - beta) ** 2) * th2
    mu = math.log(m.x0) + float(np.sum(drift_cells * dt))
    var = float(np.sum(th2 * dt)) / (1 - beta) ** 2
    primal_value = math.exp(beta * mu + 0.5 * beta ** 2 * var) / beta

    sT = np.swapaxes(m.sigma, -1, -2)
    pi_cells = solve_cells(sT, theta_hat) / (1 - beta)
    drift_int = _cumulative_integral(drift_cells, dt)

    def p2_fn(paths, dW, Y):
        stoch = np.cumsum(np.sum(theta_hat[None] * dW, axis=-1), axis=1) / (1 - beta)
        stoch = np.concatenate([np.zeros((dW.shape[0], 1)), stoch], axis=1)
        return m.x0 * np.exp(drift_int[None] + stoch)

    def q2_fn(paths, dW, Y, p2, thv):
        return p2[..., None] * thv / (1 - beta)

    return DualSolution("power", m, K, u, y_hat, v, theta_hat, pi_cells,
                        dual_value, primal_value, p2_fn, q2_fn)


# --------------------------------------------------------------------------
# log utility, possibly random coefficients
# --------------------------------------------------------------------------

def solve_log(m: MarketModel, K: ConstraintSet, paths: Optional[PathBundle] = None) -> DualSolution:
    """Log utility with any supported convex K.

    In random-coefficient mode the dual control is minimized per path and
    per cell on the realized coefficients, so ``paths`` is required.
    """
    u = LogUtility()
    if m.is_random:
        if paths is None:
            raise SolverError("random coefficients need the paths to solve on")
        dW = paths.dW
        wl = w_left(dW)
        r, b, sigma = m.coefficients(wl)
        theta = market_price_of_risk(m, wl).theta
    else:
        r, b, sigma = m.r, m.b, m.sigma
        theta = market_price_of_risk(m).theta[0]
    v = pointwise_dual_minimizer_batch(K, sigma, theta)
    theta_hat = theta + solve_cells(sigma, v)
    # (sigma sigma')^{-1}(v + b - r) = sigma'^{-1} theta_hat, without squaring sigma
    pi_cells = solve_cells(np.swapaxes(sigma, -1, -2), theta_hat)
    y_hat = 1.0 / m.x0
    if m.is_random:
        dual_value = primal_value = None
    else:
        delta = support_function_batch(K, v)
        rate = r + delta + 0.5 * np.sum(theta_hat ** 2, axis=-1)
        dual_value = math.log(m.x0) + float(np.sum(rate * m.dt))
        primal_value = dual_value

    def p2_fn(paths_, dW, Y):
        return 1.0 / Y

    def q2_fn(paths_, dW, Y, p2, thv):
        return thv / Y[..., None]

    return DualSolution("log", m, K, u, y_hat, v, theta_hat, pi_cells,
                        dual_value, primal_value, p2_fn, q2_fn, paths=paths if m.is_random else None)


# --------------------------------------------------------------------------
# non-HARA utility, constant coefficients, cone
# --------------------------------------------------------------------------

def nonhara_y_hat(x0: float, r: float, theta_hat_sq: float, T: float) -> float:
    """Positive root of x0 y^4 - e^{(r+|th|^2)T} y^2 - e^{(3r+6|th|^2)T} = 0."""
    a = math.exp((r + theta_hat_sq) * T)
    b = math.exp((3 * r + 6 * theta_hat_sq) * T)
    return math.sqrt((a + math.sqrt(a * a + 4 * x0 * b)) / (2 * x0))


def solve_nonhara(m: MarketModel, K: ConstraintSet) -> DualSolution:
    _require_cone(K, "non-HARA")
    if not m.is_constant:
        raise SolverError("non-HARA solver requires constant coefficients")
    u = NonHARAUtility()
    v, theta_hat = _cone_cells(m, K)
    r = float(m.r[0])
    T = m.horizon
    th2 = float(np.sum(theta_hat[0] ** 2))
    y_hat = nonhara_y_hat(m.x0, r, th2, T)
    a_rate = r + th2
    b_rate = 3 * r + 6 * th2
    A = math.exp(a_rate * T)
    B = math.exp(b_rate * T)
    dual_value = m.x0 * y_hat + B / (3 * y_hat ** 3) + A / y_hat
    primal_value = 4.0 / 3.0 * B / y_hat ** 3 + 2 * A / y_hat
    tau = T - m.grid

    def p2_fn(paths, dW, Y):
        return Y ** -4 * np.exp(b_rate * tau) + Y ** -2 * np.exp(a_rate * tau)

    def q2_fn(paths, dW, Y, p2, thv):
        w = 4 * Y ** -4 * np.exp(b_rate * tau) + 2 * Y ** -2 * np.exp(a_rate * tau)
        return thv * w[..., None]

    return DualSolution("nonhara", m, K, u, y_hat, v, theta_hat, None,
                        dual_value, primal_value, p2_fn, q2_fn)


def solve(m: MarketModel, K: ConstraintSet, utility: UtilityFunction,
          paths: Optional[PathBundle] = None) -> DualSolution:
    """Dispatch on the utility kind."""
    if isinstance(utility, PowerUtility):
        return solve_power(m, K, utility.beta)
    if isinstance(utility, LogUtility):
        return solve_log(m, K, paths)
    if isinstance(utility, NonHARAUtility):
        return solve_nonhara(m, K)
    raise SolverError(f"no solver for utility {utility!r}")

"""Market coefficients, standing-assumption checks and the market price of risk.

Coefficients are piecewise constant on the cells of a time grid.  A model is
either *deterministic* (one value per cell) or *random*: in the latter case a
coefficient function is evaluated at the left end of every cell on the
realized Brownian path, which gives adapted, piecewise-constant coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "MarketError",
    "MarketModel",
    "RiskPricePath",
    "ValidationReport",
    "validate_market",
    "market_price_of_risk",
    "CONDITION_LIMIT",
]

CONDITION_LIMIT = 1e12

CoefficientFn = Callable[[float, np.ndarray], tuple]


class MarketError(ValueError):
    """Raised for malformed or degenerate market inputs."""


def _as_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise MarketError("grid must be a 1-d array with at least two points")
    if not np.all(np.isfinite(g)):
        raise MarketError("grid contains non-finite values")
    if g[0] != 0.0:
        raise MarketError("grid must start at 0")
    if np.any(np.diff(g) <= 0):
        raise MarketError("grid must be strictly increasing")
    return g


@dataclass(frozen=True)
class MarketModel:
    """Bank account plus N stocks with piecewise-constant coefficients.

    ``r`` has shape (M,), ``b`` (M, N) and ``sigma`` (M, N, N) where M is the
    number of grid cells.  When ``coefficient_fn`` is given the stored arrays
    are only nominal values; the realized coefficients on cell k are
    ``coefficient_fn(t_k, W(t_k))`` evaluated for a batch of paths.
    """

    n_assets: int
    x0: float
    grid: np.ndarray
    r: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    coefficient_fn: Optional[CoefficientFn] = field(default=None, compare=False)

    def __post_init__(self):
        grid = _as_grid(self.grid)
        m = grid.size - 1
        n = int(self.n_assets)
        if n < 1:
            raise MarketError("n_assets must be a positive integer")
        r = np.broadcast_to(np.asarray(self.r, dtype=float), (m,)).copy()
        b = np.asarray(self.b, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if b.ndim <= 1:
            b = np.broadcast_to(b, (m, n)).copy()
        if sigma.ndim < 2:
            sigma = np.broadcast_to(sigma, (n, n)) * np.eye(n)
        if sigma.ndim == 2:
            sigma = np.broadcast_to(sigma, (m,) + sigma.shape).copy()
        if b.shape != (m, n):
            raise MarketError(f"b must have shape ({m}, {n}), got {b.shape}")
        if sigma.ndim != 3 or sigma.shape[1] != sigma.shape[2]:
            raise MarketError("volatility must be square on every cell")
        if sigma.shape != (m, n, n):
            raise MarketError(f"sigma must have shape ({m}, {n}, {n}), got {sigma.shape}")
        for name, arr in (("r", r), ("b", b), ("sigma", sigma)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "n_assets", n)
        object.__setattr__(self, "x0", float(self.x0))

    @classmethod
    def constant(cls, r, b, sigma, horizon=1.0, x0=1.0, n_steps=252):
        """Constant-coefficient market on a uniform grid."""
        b = np.atleast_1d(np.asarray(b, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        grid = np.linspace(0.0, float(horizon), int(n_steps) + 1)
        return cls(b.size, x0, grid, r, b, sigma)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.grid)

    @property
    def is_random(self) -> bool:
        return self.coefficient_fn is not None

    @property
    def is_constant(self) -> bool:
        """True when every cell carries the same deterministic coefficients."""
        if self.is_random:
            return False
        return bool(
            np.all(self.r == self.r[0])
            and np.all(self.b == self.b[0])
            and np.all(self.sigma == self.sigma[0])
        )

    def refine(self, n_steps: int) -> "MarketModel":
        """Same constant-coefficient market on a uniform grid with ``n_steps`` cells."""
        if not self.is_constant:
            raise MarketError("refine is only defined for constant coefficients")
        return MarketModel.constant(
            self.r[0], self.b[0], self.sigma[0], self.horizon, self.x0, n_steps
        )

    def coefficients(self, w_left: Optional[np.ndarray] = None):
        """Per-path, per-cell coefficients ``(r, b, sigma)``.

        ``w_left`` holds W at the left end of each cell, shape (P, M, N).  For
        deterministic models the result has a leading axis of length 1.
        """
        if not self.is_random:
            return self.r[None], self.b[None], self.sigma[None]
        if w_left is None:
            raise MarketError("random coefficients need the Brownian path")
        p = w_left.shape[0]
        m, n = self.n_steps, self.n_assets
        r = np.empty((p, m))
        b = np.empty((p, m, n))
        s = np.empty((p, m, n, n))
        for k in range(m):
            rk, bk, sk = self.coefficient_fn(float(self.grid[k]), w_left[:, k, :])
            r[:, k] = rk
            b[:, k] = bk
            s[:, k] = sk
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(b)) and np.all(np.isfinite(s))):
            raise MarketError("coefficient function produced non-finite values")
        return r, b, s


@dataclass(frozen=True)
class RiskPricePath:
    theta: np.ndarray  # (..., M, N)


@dataclass
class ValidationReport:
    k: float
    bounds: dict
    checks: dict
    messages: list

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def _smallest_eig(sigma: np.ndarray) -> np.ndarray:
    ssT = sigma @ np.swapaxes(sigma, -1, -2)
    return np.linalg.eigvalsh(ssT)[..., 0]


def validate_market(m: MarketModel, w_left: Optional[np.ndarray] = None) -> ValidationReport:
    """Check the standing assumptions on (realized) coefficients.

    Structural defects (non-finite entries) raise ``MarketError``; a singular
    or badly conditioned volatility is reported as a failed check.
    """
    r, b, sigma = m.coefficients(w_left)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(b)) and np.all(np.isfinite(sigma))):
        raise MarketError("coefficients must be finite")
    messages = []
    k = float(np.min(_smallest_eig(sigma)))
    cond = float(np.max(np.linalg.cond(sigma)))
    checks = {
        "x0_positive": m.x0 > 0,
        "horizon_positive": m.horizon > 0,
        "nondegenerate": k > 0 and np.isfinite(cond) and cond <= CONDITION_LIMIT,
    }
    if not checks["nondegenerate"]:
        messages.append("singular volatility")
    if not checks["x0_positive"]:
        messages.append("initial wealth must be positive")
    bounds = {
        "r": float(np.max(np.abs(r))),
        "b": float(np.max(np.abs(b))),
        "sigma": float(np.max(np.abs(sigma))),
        "condition": cond,
    }
    return ValidationReport(k=k, bounds=bounds, checks=checks, messages=messages)


def solve_cells(sigma: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Batched ``sigma^{-1} rhs`` with a conditioning guard."""
    sigma = np.asarray(sigma, dtype=float)
    # drop broadcast (zero-stride) leading axes so each distinct matrix is checked once
    idx = tuple(slice(0, 1) if (st == 0 and n > 1) else slice(None)
                for st, n in zip(sigma.strides[:-2], sigma.shape[:-2]))
    sigma = sigma[idx]
    cond = np.linalg.cond(sigma)
    if not np.all(np.isfinite(cond)) or np.any(cond > CONDITION_LIMIT):
        raise MarketError("singular volatility (condition number above 1e12)")
    return np.linalg.solve(sigma, rhs[..., None])[..., 0]


def market_price_of_risk(m: MarketModel, w_left: Optional[np.ndarray] = None) -> RiskPricePath:
    """theta = sigma^{-1} (b - r 1) on every cell (and path, in random mode)."""
    r, b, sigma = m.coefficients(w_left)
    excess = b - r[..., None]
    theta = solve_cells(sigma, excess)
    return RiskPricePath(theta=theta)

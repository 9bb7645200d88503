"""Brownian increments on a time grid and exact-in-cell simulation of X and Y.

Increments are produced in fixed-size blocks of paths.  Block ``j`` draws from
a Philox stream keyed by ``(seed, j)``, so every path's numbers depend only on
the seed and the path index, never on how blocks are scheduled across
threads.
"""
from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .constraints import ConstraintSet, support_function_batch
from .market import MarketModel, solve_cells

__all__ = [
    "PathBundle",
    "StatePath",
    "SimulationError",
    "generate_paths",
    "simulate_wealth",
    "simulate_dual",
    "terminal_wealth",
    "terminal_dual",
    "keyed_generator",
    "default_threads",
    "write_paths",
    "read_paths",
    "BLOCK_SIZE",
    "MEMORY_CAP_ELEMENTS",
]

BLOCK_SIZE = 1024
MEMORY_CAP_ELEMENTS = 60_000_000
LOG_LIMIT = 700.0

# stream domains, kept distinct so that different uses never share numbers
DOMAIN_PATHS = 0
DOMAIN_INNER = 1
DOMAIN_SAMPLING = 2


class SimulationError(RuntimeError):
    pass


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("DPL_THREADS", "1")))
    except ValueError:
        return 1


def keyed_generator(seed: int, *key: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, *key)``."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in key]])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, dtype=np.uint64)))


@dataclass(frozen=True)
class PathBundle:
    """Lazily generated Brownian increments, shape (n_paths, M, N) when materialized."""

    grid: np.ndarray
    n_assets: int
    n_paths: int
    seed: int
    block_size: int = BLOCK_SIZE

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    @property
    def n_blocks(self) -> int:
        return -(-self.n_paths // self.block_size)

    def block_slice(self, j: int) -> slice:
        lo = j * self.block_size
        return slice(lo, min(lo + self.block_size, self.n_paths))

    def increments(self, j: int) -> np.ndarray:
        sl = self.block_slice(j)
        rng = keyed_generator(self.seed, DOMAIN_PATHS, j)
        z = rng.standard_normal((self.block_size, self.n_steps, self.n_assets))
        z = z[: sl.stop - sl.start]
        return z * np.sqrt(np.diff(self.grid))[None, :, None]

    @property
    def dW(self) -> np.ndarray:
        size = self.n_paths * self.n_steps * self.n_assets
        if size > MEMORY_CAP_ELEMENTS:
            raise SimulationError(
                f"materializing {size} increments exceeds the memory cap {MEMORY_CAP_ELEMENTS}"
            )
        return np.concatenate([self.increments(j) for j in range(self.n_blocks)], axis=0)

    def map_blocks(self, fn: Callable[[slice, np.ndarray], object], threads: Optional[int] = None):
        """Apply ``fn(slice, dW_block)`` to every block; results in block order."""
        threads = threads or default_threads()

        def job(j):
            return fn(self.block_slice(j), self.increments(j))

        if threads <= 1 or self.n_blocks == 1:
            return [job(j) for j in range(self.n_blocks)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, range(self.n_blocks)))


@dataclass
class StatePath:
    values: np.ndarray  # (P, M+1)
    aborted: np.ndarray  # (P,) bool

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


def generate_paths(m: MarketModel, n_paths: int, seed: int, block_size: int = BLOCK_SIZE) -> PathBundle:
    if int(n_paths) < 1:
        raise SimulationError("n_paths must be at least 1")
    if int(seed) < 0:
        raise SimulationError("seed must be a non-negative integer")
    return PathBundle(m.grid, m.n_assets, int(n_paths), int(seed), int(block_size))


def w_left(dW: np.ndarray) -> np.ndarray:
    """W at the left end of every cell, shape (P, M, N)."""
    w = np.cumsum(dW, axis=1)
    return np.concatenate([np.zeros_like(w[:, :1]), w[:, :-1]], axis=1)


def _rows(arr, sl: slice, n_paths: int):
    """Slice a per-path array, pass through broadcastable ones."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim >= 1 and arr.shape[0] == n_paths and arr.ndim == 3:
        return arr[sl]
    return arr[None] if arr.ndim == 2 else arr


def _cumulate(x0, log_incr):
    logs = np.concatenate(
        [np.full((log_incr.shape[0], 1), np.log(x0)), np.log(x0) + np.cumsum(log_incr, axis=1)],
        axis=1,
    )
    bad = np.any(np.abs(logs) > LOG_LIMIT, axis=1)
    values = np.exp(np.clip(logs, -LOG_LIMIT, LOG_LIMIT))
    values[bad] = np.nan
    return values, bad


def _wealth_log_increments(m: MarketModel, pi_block, dW):
    r, b, sigma = m.coefficients(w_left(dW) if m.is_random else None)
    excess = b - r[..., None]
    sTpi = (np.swapaxes(sigma, -1, -2) @ pi_block[..., None])[..., 0]
    drift = r + np.sum(pi_block * excess, axis=-1) - 0.5 * np.sum(sTpi ** 2, axis=-1)
    return drift * m.dt + np.sum(sTpi * dW, axis=-1)


def _check_pi(m, pi, n_paths):
    pi = np.asarray(pi, dtype=float)
    if pi.ndim == 1:
        pi = np.broadcast_to(pi, (m.n_steps, m.n_assets))
    if pi.shape[-2:] != (m.n_steps, m.n_assets) or pi.ndim not in (2, 3):
        raise SimulationError(f"strategy must have shape (M, N) or (P, M, N); got {pi.shape}")
    if pi.ndim == 3 and pi.shape[0] != n_paths:
        raise SimulationError("per-path strategy must have one row per path")
    if not np.all(np.isfinite(pi)):
        raise SimulationError("strategy must be finite")
    return pi


def simulate_wealth(m: MarketModel, pi, paths: PathBundle, threads: Optional[int] = None) -> StatePath:
    """Exact log-scheme for the wealth SDE with fractions ``pi`` held on each cell."""
    pi = _check_pi(m, pi, paths.n_paths)

    def kernel(sl, dW):
        incr = _wealth_log_increments(m, _rows(pi, sl, paths.n_paths), dW)
        return _cumulate(m.x0, incr)

    parts = paths.map_blocks(kernel, threads)
    return StatePath(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def terminal_wealth(m: MarketModel, pi, paths: PathBundle, threads: Optional[int] = None) -> np.ndarray:
    """X(T) only, streamed block by block (no full path storage)."""
    pi = _check_pi(m, pi, paths.n_paths)

    def kernel(sl, dW):
        incr = _wealth_log_increments(m, _rows(pi, sl, paths.n_paths), dW)
        logx = np.log(m.x0) + np.sum(incr, axis=1)
        return logx

    logx = np.concatenate(paths.map_blocks(kernel, threads))
    if np.any(np.abs(logx) > LOG_LIMIT):
        raise SimulationError("log wealth left [-700, 700]")
    return np.exp(logx)


def _dual_log_increments(m: MarketModel, K: ConstraintSet, v_block, dW):
    r, b, sigma = m.coefficients(w_left(dW) if m.is_random else None)
    delta = support_function_batch(K, v_block)
    if not np.all(np.isfinite(delta)):
        raise SimulationError("v not in effective domain (infinite support function)")
    theta_v = solve_cells(sigma, b - r[..., None] + v_block)
    drift = r + delta + 0.5 * np.sum(theta_v ** 2, axis=-1)
    return -drift * m.dt - np.sum(theta_v * dW, axis=-1)


def _check_v(m, v, n_paths):
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = np.broadcast_to(v, (m.n_steps, m.n_assets))
    if v.shape[-2:] != (m.n_steps, m.n_assets) or v.ndim not in (2, 3):
        raise SimulationError(f"dual control must have shape (M, N) or (P, M, N); got {v.shape}")
    if v.ndim == 3 and v.shape[0] != n_paths:
        raise SimulationError("per-path dual control must have one row per path")
    return v


def simulate_dual(m: MarketModel, y: float, v, K: ConstraintSet, paths: PathBundle,
                  threads: Optional[int] = None) -> StatePath:
    """Exact log-scheme for the dual state Y^(y, v)."""
    if not y > 0:
        raise SimulationError("y must be positive")
    v = _check_v(m, v, paths.n_paths)

    def kernel(sl, dW):
        incr = _dual_log_increments(m, K, _rows(v, sl, paths.n_paths), dW)
        return _cumulate(y, incr)

    parts = paths.map_blocks(kernel, threads)
    return StatePath(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def terminal_dual(m: MarketModel, y: float, v, K: ConstraintSet, paths: PathBundle,
                  threads: Optional[int] = None) -> np.ndarray:
    if not y > 0:
        raise SimulationError("y must be positive")
    v = _check_v(m, v, paths.n_paths)

    def kernel(sl, dW):
        incr = _dual_log_increments(m, K, _rows(v, sl, paths.n_paths), dW)
        return np.log(y) + np.sum(incr, axis=1)

    logy = np.concatenate(paths.map_blocks(kernel, threads))
    if np.any(np.abs(logy) > LOG_LIMIT):
        raise SimulationError("log dual state left [-700, 700]")
    return np.exp(logy)


_MAGIC = b"DPL1"
_HEADER = struct.Struct("<4sqqq")


def write_paths(path, paths: PathBundle) -> None:
    """Binary dump: magic, N, M, n_paths (int64 LE), then float64 LE increments row-major."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, paths.n_assets, paths.n_steps, paths.n_paths))
        for j in range(paths.n_blocks):
            fh.write(np.ascontiguousarray(paths.increments(j), dtype="<f8").tobytes())


def read_paths(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, n, m, p = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise SimulationError("not a DPL1 path file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * m * p:
        raise SimulationError("truncated path file")
    return data.reshape(p, m, n)

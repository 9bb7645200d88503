"""Closed convex constraint sets K containing the origin.

Five representations are supported: the full space, the nonnegative orthant,
boxes with (possibly infinite) bounds bracketing zero, polyhedral cones
``{x : G x <= 0}`` and polyhedra ``{x : A x <= c}`` with ``c >= 0``.  All of
them reduce to a half-space description, which is what the LP/QP routines
consume.

The support function here is ``delta_K(z) = sup_{x in K} -x'z`` and is
``math.inf`` when unbounded.  The barrier cone is ``{v : delta_K(v) < inf}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ._qp import QPError, active_set_qp

__all__ = [
    "ConstraintError",
    "QPError",
    "ConstraintSet",
    "FullSpace",
    "Orthant",
    "Box",
    "PolyhedralCone",
    "Polyhedron",
    "support_function",
    "support_function_batch",
    "barrier_cone_member",
    "project",
    "project_barrier_cone",
    "in_normal_cone",
    "sigma_transformed_cone_project",
    "MEMBERSHIP_TOL",
]

MEMBERSHIP_TOL = 1e-8
QP_TOL = 1e-10
BARRIER_RTOL = 1e-9


class ConstraintError(ValueError):
    pass


class ConstraintSet:
    """Base class; subclasses provide ``halfspaces()`` and ``is_cone``."""

    n: int
    name: str = "constraint"

    @property
    def is_cone(self) -> bool:
        raise NotImplementedError

    def halfspaces(self):
        """(A, c) with K = {x : A x <= c}."""
        raise NotImplementedError

    def recession_halfspaces(self):
        A, _ = self.halfspaces()
        return A, np.zeros(A.shape[0])

    # -- closed forms, overridden where available ------------------------------

    def _support(self, z: np.ndarray) -> float:
        return _lp_support(self, z)

    def _project(self, x: np.ndarray) -> np.ndarray:
        A, c = self.halfspaces()
        if np.all(A @ x <= c):
            return x.copy()
        if self.is_cone:
            return _project_halfspace_cone(A, x)
        return active_set_qp(np.eye(self.n), -x, A, c, np.zeros(self.n), tol=QP_TOL)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(self.violation(np.asarray(x, dtype=float)[None])[0] <= tol)

    def violation(self, X: np.ndarray) -> np.ndarray:
        """Largest signed distance to the bounding hyperplanes, per row of X.

        Non-positive for members; for boxes and single half-spaces it equals
        the Euclidean distance to K when positive.
        """
        A, c = self.halfspaces()
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        if A.shape[0] == 0:
            return np.full(X.shape[0], -np.inf)
        norms = np.linalg.norm(A, axis=1)
        return np.max((X @ A.T - c) / norms, axis=1)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _check_vec(z, n) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != n:
        raise ConstraintError(f"expected a vector of length {n}, got {z.size}")
    if not np.all(np.isfinite(z)):
        raise ConstraintError("input vector must be finite")
    return z


@dataclass(frozen=True, eq=False)
class FullSpace(ConstraintSet):
    n: int
    name = "full"

    @property
    def is_cone(self):
        return True

    def halfspaces(self):
        return np.zeros((0, self.n)), np.zeros(0)

    def _support(self, z):
        return 0.0 if not np.any(z) else math.inf

    def _project(self, x):
        return x.copy()

    def to_dict(self):
        return {"type": "full", "n": self.n}


@dataclass(frozen=True, eq=False)
class Orthant(ConstraintSet):
    n: int
    name = "orthant"

    @property
    def is_cone(self):
        return True

    def halfspaces(self):
        return -np.eye(self.n), np.zeros(self.n)

    def _support(self, z):
        return 0.0 if np.all(z >= 0) else math.inf

    def _project(self, x):
        return np.maximum(x, 0.0)

    def to_dict(self):
        return {"type": "orthant", "n": self.n}


class Box(ConstraintSet):
    """Entrywise bounds ``lower <= x <= upper`` with ``lower <= 0 <= upper``."""

    name = "box"

    def __init__(self, lower, upper):
        lower = np.array(lower, dtype=float).reshape(-1)
        upper = np.array(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise ConstraintError("box bounds must have the same length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ConstraintError("box bounds must not be NaN")
        if np.any(lower > 0) or np.any(upper < 0):
            raise ConstraintError("box must contain the origin (lower <= 0 <= upper)")
        lower.setflags(write=False)
        upper.setflags(write=False)
        self.lower, self.upper, self.n = lower, upper, lower.size

    @property
    def is_cone(self):
        finite = np.concatenate([self.lower[np.isfinite(self.lower)],
                                 self.upper[np.isfinite(self.upper)]])
        return bool(np.all(finite == 0))

    def halfspaces(self):
        eye = np.eye(self.n)
        up = np.isfinite(self.upper)
        lo = np.isfinite(self.lower)
        A = np.vstack([eye[up], -eye[lo]])
        c = np.concatenate([self.upper[up], -self.lower[lo]])
        return A, c

    def _support(self, z):
        # sup over x_i in [l_i, u_i] of -x_i z_i, coordinatewise
        total = 0.0
        for lo, up, zi in zip(self.lower, self.upper, z):
            if zi > 0:
                if not np.isfinite(lo):
                    return math.inf
                total += -lo * zi
            elif zi < 0:
                if not np.isfinite(up):
                    return math.inf
                total += -up * zi
        return total

    def _project(self, x):
        return np.clip(x, self.lower, self.upper)

    def to_dict(self):
        return {"type": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class PolyhedralCone(ConstraintSet):
    """K = {x : G x <= 0}."""

    name = "cone"

    def __init__(self, G):
        G = np.array(G, dtype=float)
        if G.ndim != 2:
            raise ConstraintError("G must be a 2-d matrix")
        if not np.all(np.isfinite(G)):
            raise ConstraintError("G must be finite")
        G.setflags(write=False)
        self.G, self.n = G, G.shape[1]

    @property
    def is_cone(self):
        return True

    def halfspaces(self):
        return self.G, np.zeros(self.G.shape[0])

    def to_dict(self):
        return {"type": "cone", "G": self.G.tolist()}


class Polyhedron(ConstraintSet):
    """K = {x : A x <= c} with c >= 0, so that 0 is in K."""

    name = "polyhedron"

    def __init__(self, A, c):
        A = np.array(A, dtype=float)
        c = np.array(c, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != c.size:
            raise ConstraintError("A must be m x N with c of length m")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(c))):
            raise ConstraintError("A and c must be finite")
        if np.any(c < 0):
            raise ConstraintError("polyhedron must contain the origin (c >= 0)")
        A.setflags(write=False)
        c.setflags(write=False)
        self.A, self.c, self.n = A, c, A.shape[1]

    @property
    def is_cone(self):
        return bool(np.all(self.c == 0))

    def halfspaces(self):
        return self.A, self.c

    def to_dict(self):
        return {"type": "polyhedron", "A": self.A.tolist(), "c": self.c.tolist()}


def _in_generated_cone(gens: np.ndarray, z: np.ndarray) -> bool:
    """Is z = gens' l for some l >= 0 (up to BARRIER_RTOL |z|)?

    The cone generated by the rows of ``gens`` is the polar of
    R = {x : gens x <= 0}, so by Moreau z belongs to it iff P_R(z) = 0.
    """
    if gens.shape[0] == 0:
        return not np.any(z)
    scale = float(np.max(np.abs(z)))
    if scale == 0.0:
        return True
    u = z / scale
    return float(np.linalg.norm(_project_halfspace_cone(gens, u))) <= BARRIER_RTOL


def _lp_support(K: ConstraintSet, z: np.ndarray) -> float:
    A, c = K.halfspaces()
    # finite exactly when -z lies in the polar of the recession cone {A x <= 0},
    # i.e. -z is a nonnegative combination of the rows of A
    if not _in_generated_cone(A, -z):
        return math.inf
    if not np.any(c):
        return 0.0
    # sup -x'z  <=>  -min x'z, solved for the unit direction (homogeneity)
    scale = float(np.max(np.abs(z)))
    if scale == 0.0:
        return 0.0
    res = linprog(z / scale, A_ub=A, b_ub=c, bounds=[(None, None)] * K.n, method="highs")
    if res.status == 3:
        return math.inf
    if res.status != 0:
        raise QPError(f"support LP failed: {res.message}")
    return max(0.0, -float(res.fun)) * scale


def support_function(K: ConstraintSet, z) -> float:
    """delta_K(z) = sup_{x in K} -x'z; ``math.inf`` when unbounded."""
    z = _check_vec(z, K.n)
    return K._support(z)


def support_function_batch(K: ConstraintSet, Z) -> np.ndarray:
    """Row-wise support function for an (..., N) array.

    Closed-form families are evaluated directly; LP families solve one LP per
    distinct direction and rescale by positive homogeneity.
    """
    Z = np.asarray(Z, dtype=float)
    shape = Z.shape[:-1]
    flat = Z.reshape(-1, K.n)
    out = np.empty(flat.shape[0])
    if isinstance(K, FullSpace):
        out[:] = np.where(np.any(flat != 0, axis=1), np.inf, 0.0)
    elif isinstance(K, Orthant):
        out[:] = np.where(np.all(flat >= 0, axis=1), 0.0, np.inf)
    elif isinstance(K, Box):
        lo = np.broadcast_to(K.lower, flat.shape)
        up = np.broadcast_to(K.upper, flat.shape)
        with np.errstate(invalid="ignore"):
            pos = np.where(flat > 0, -lo * flat, 0.0)
            neg = np.where(flat < 0, -up * flat, 0.0)
        out[:] = np.sum(pos + neg, axis=1)
    else:
        # max-abs scaling: the 2-norm of a tiny vector can underflow to zero
        norms = np.max(np.abs(flat), axis=1)
        out[norms == 0] = 0.0
        nz = np.nonzero(norms)[0]
        if nz.size:
            dirs = np.round(flat[nz] / norms[nz, None], 12)
            uniq, inverse = np.unique(dirs, axis=0, return_inverse=True)
            vals = np.array([K._support(u) for u in uniq])
            out[nz] = vals[inverse.reshape(-1)] * norms[nz]
    return out.reshape(shape)


def barrier_cone_member(K: ConstraintSet, v) -> bool:
    return math.isfinite(support_function(K, v))


def project(K: ConstraintSet, x) -> np.ndarray:
    """Euclidean projection of x onto K."""
    x = _check_vec(x, K.n)
    return K._project(x)


def _project_halfspace_cone(B: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Projection onto {u : B u <= 0}, solved on the unit sphere (the set is a cone)."""
    n = x.size
    scale = float(np.max(np.abs(x)))
    if B.shape[0] == 0 or scale == 0.0:
        return x.copy()
    u = active_set_qp(np.eye(n), -x / scale, B, np.zeros(B.shape[0]), np.zeros(n), tol=QP_TOL)
    return u * scale


def _project_generated_cone(G: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Projection onto {G' l : l >= 0}, returned as G' l so membership is exact."""
    scale = float(np.max(np.abs(z)))
    if G.shape[0] == 0 or scale == 0.0:
        return np.zeros_like(z)
    m = G.shape[0]
    lam = active_set_qp(G @ G.T, -(G @ z) / scale, -np.eye(m), np.zeros(m), np.zeros(m), tol=QP_TOL)
    return G.T @ np.maximum(lam, 0.0) * scale


def project_barrier_cone(K: ConstraintSet, z) -> np.ndarray:
    """Projection onto the barrier cone of K.

    With R = {x : A x <= 0} the recession cone, delta_K(v) is finite iff
    -x'v <= 0 on R, so the barrier cone is generated by the rows of -A.
    """
    z = _check_vec(z, K.n)
    if isinstance(K, FullSpace):
        return np.zeros_like(z)
    if isinstance(K, Orthant):
        return np.maximum(z, 0.0)
    if isinstance(K, Box):
        # coordinate i may be positive only with a finite lower bound,
        # negative only with a finite upper bound
        lo = np.where(np.isfinite(K.upper), -np.inf, 0.0)
        hi = np.where(np.isfinite(K.lower), np.inf, 0.0)
        return np.clip(z, lo, hi)
    A, _ = K.recession_halfspaces()
    return _project_generated_cone(-A, z)


def in_normal_cone(K: ConstraintSet, x, y, tol: float = MEMBERSHIP_TOL) -> bool:
    """True iff y'(x* - x) <= tol for every x* in K."""
    x = _check_vec(x, K.n)
    y = _check_vec(y, K.n)
    if not K.contains(x, tol):
        raise ConstraintError("x not in K")
    s = support_function(K, -y)
    return math.isfinite(s) and s <= float(y @ x) + tol


def normal_cone_excess(K: ConstraintSet, X, Y) -> np.ndarray:
    """Row-wise ``delta_K(-y) - y'x``; <= 0 exactly when y is normal to K at x."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    s = support_function_batch(K, -Y)
    return s - np.sum(X * Y, axis=-1)


def sigma_transformed_cone_project(K: ConstraintSet, sigma, point) -> np.ndarray:
    """Projection of ``point`` onto sigma^{-1} applied to the barrier cone of K.

    For a cone K = {A x <= 0} the barrier cone is {-A'l : l >= 0}; its image
    C under sigma^{-1} has polar {u : -A sigma^{-T} u <= 0}, and
    P_C(x) = x - P_{C polar}(x).
    """
    if not K.is_cone:
        raise ConstraintError("K not a cone")
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    point = _check_vec(point, K.n)
    if isinstance(K, FullSpace):
        return np.zeros_like(point)
    A, _ = K.halfspaces()
    B = -np.linalg.solve(sigma, A.T).T  # -A sigma^{-T}
    return point - _project_halfspace_cone(B, point)

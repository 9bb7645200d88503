"""Primal active-set solver for small convex QPs with linear inequalities.

    minimize   0.5 x'Qx + g'x
    subject to A x <= c

Q must be positive semidefinite (steps along its null space are taken as
minimum-norm solutions) and the starting point feasible.  Ties are broken
by the smallest constraint index (Bland) so results are reproducible.
"""
from __future__ import annotations

import numpy as np

__all__ = ["QPError", "active_set_qp"]


class QPError(RuntimeError):
    pass


def _solve_eqp(Q, grad, Aw):
    """Step d and multipliers for min 0.5 d'Qd + grad'd s.t. Aw d = 0."""
    n = Q.shape[0]
    m = Aw.shape[0]
    if m == 0:
        return np.linalg.lstsq(Q, -grad, rcond=None)[0], np.empty(0)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = Q
    kkt[:n, n:] = Aw.T
    kkt[n:, :n] = Aw
    rhs = np.concatenate([-grad, np.zeros(m)])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def active_set_qp(Q, g, A, c, x0, tol=1e-10, max_iter=500):
    Q = np.asarray(Q, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, Q.shape[0])
    c = np.asarray(c, dtype=float)
    x = np.array(x0, dtype=float)
    if A.shape[0] == 0:
        return np.linalg.solve(Q, -g)
    scale = max(1.0, float(np.max(np.abs(g))), float(np.max(np.abs(x))))
    slack0 = A @ x - c
    if np.any(slack0 > 1e-9 * scale):
        raise QPError("starting point is infeasible")
    working: list[int] = [i for i in range(A.shape[0]) if abs(slack0[i]) <= tol * scale]
    # keep only a linearly independent subset of the initially active rows
    indep: list[int] = []
    for i in working:
        trial = A[indep + [i]]
        if np.linalg.matrix_rank(trial, tol=1e-12) == len(indep) + 1:
            indep.append(i)
    working = indep

    for _ in range(max_iter):
        grad = Q @ x + g
        d, lam = _solve_eqp(Q, grad, A[working])
        if np.linalg.norm(d) <= tol * scale:
            # KKT: Qx + g + Aw' mu = 0 with mu >= 0; the EQP returns mu = lam
            neg = [w for w, mu in zip(working, lam) if mu < -tol * scale]
            if not neg:
                return x
            working.remove(min(neg))
            continue
        Ad = A @ d
        alpha = 1.0
        blocking = None
        for i in range(A.shape[0]):
            if i in working or Ad[i] <= tol * scale:
                continue
            step = (c[i] - A[i] @ x) / Ad[i]
            if step < alpha - 1e-15:
                alpha = max(step, 0.0)
                blocking = i
        x = x + alpha * d
        if blocking is not None:
            working.append(blocking)
            working.sort()
    raise QPError(f"active-set QP did not converge in {max_iter} iterations")

"""Monte Carlo value estimates, duality checks and optimality-condition residuals."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import (
    ConstraintSet,
    FullSpace,
    Orthant,
    Box,
    project,
    project_barrier_cone,
    support_function_batch,
)
from .market import MarketModel, solve_cells
from .paths import (
    DOMAIN_INNER,
    DOMAIN_SAMPLING,
    PathBundle,
    keyed_generator,
    simulate_wealth,
    terminal_dual,
    terminal_wealth,
)
from .solvers import DualSolution, Trajectories, dual_from_primal, primal_from_dual
from .utility import LogUtility, PowerUtility, UtilityFunction

__all__ = [
    "VerificationError",
    "McEstimate",
    "ConditionRow",
    "VerificationReport",
    "WeakDualityResult",
    "OracleResult",
    "estimate_primal_value",
    "estimate_dual_value",
    "weak_duality_check",
    "adjoint_oracle_p2",
    "check_fbsde_residuals",
    "bsde_step_residuals",
    "normal_cone_residual",
    "sample_admissible_pi",
    "sample_barrier_v",
    "CONFIDENCE",
]

CONFIDENCE = 4.0
BRANCH_BUDGET = 20_000_000


class VerificationError(ValueError):
    pass


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        n = x.size
        se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(x)), se, n)


def _check_admissible(K: ConstraintSet, pi: np.ndarray, tol: float):
    pi = np.asarray(pi, dtype=float)
    scale = np.maximum(1.0, np.linalg.norm(pi.reshape(-1, K.n), axis=1))
    if np.any(K.violation(pi.reshape(-1, K.n)) > tol * scale):
        raise VerificationError("inadmissible strategy: pi leaves K")


def estimate_primal_value(m: MarketModel, K: ConstraintSet, pi, paths: PathBundle,
                          utility: UtilityFunction, threads=None, tol: float = 1e-8) -> McEstimate:
    """MC estimate of E[U(X^pi(T))] for a strategy held constant on each cell."""
    _check_admissible(K, pi, tol)
    xT = terminal_wealth(m, pi, paths, threads)
    return McEstimate.from_samples(utility.U(xT))


def estimate_dual_value(m: MarketModel, K: ConstraintSet, y: float, v, paths: PathBundle,
                        utility: UtilityFunction, threads=None) -> McEstimate:
    """x0 y + MC estimate of E[Ut(Y^(y, v)(T))]."""
    yT = terminal_dual(m, y, v, K, paths, threads)
    est = McEstimate.from_samples(utility.conj(yT))
    return McEstimate(m.x0 * y + est.mean, est.std_error, est.n_paths)


@dataclass(frozen=True)
class WeakDualityResult:
    primal: McEstimate
    dual: McEstimate
    margin: float
    combined_se: float
    passed: bool


def weak_duality_check(m, K, pi, y, v, paths, utility, threads=None) -> WeakDualityResult:
    """Primal <= dual within CONFIDENCE combined standard errors (common random numbers)."""
    p = estimate_primal_value(m, K, pi, paths, utility, threads)
    d = estimate_dual_value(m, K, y, v, paths, utility, threads)
    se = math.hypot(p.std_error, d.std_error)
    margin = d.mean - p.mean
    return WeakDualityResult(p, d, margin, se, margin >= -CONFIDENCE * se)


# --------------------------------------------------------------------------
# random admissible controls
# --------------------------------------------------------------------------

def sample_admissible_pi(K: ConstraintSet, n_cells: int, rng: np.random.Generator,
                         max_tries: int = 1000) -> np.ndarray:
    """Per-cell strategies drawn uniformly from K intersected with the unit ball.

    Rejection sampling; after ``max_tries`` misses the ball sample is
    projected onto K, which stays in the ball because 0 is in K.
    """
    n = K.n
    out = np.empty((n_cells, n))
    for k in range(n_cells):
        for _ in range(max_tries):
            g = rng.standard_normal(n)
            u = g / np.linalg.norm(g) * rng.uniform() ** (1.0 / n)
            if K.contains(u, 0.0):
                break
        else:
            u = project(K, u)
        out[k] = u
    return out


def sample_barrier_v(K: ConstraintSet, n_cells: int, rng: np.random.Generator, scale: float = 0.1):
    """Per-cell dual controls projected into the barrier cone of K."""
    z = scale * rng.standard_normal((n_cells, K.n))
    return np.array([project_barrier_cone(K, zk) for zk in z])


# --------------------------------------------------------------------------
# nested Monte Carlo oracle for p2
# --------------------------------------------------------------------------

@dataclass
class OracleResult:
    t_index: int
    estimates: np.ndarray
    closed_form: np.ndarray
    std_errors: np.ndarray
    max_rel_deviation: float
    pooled_deviation: float
    pooled_se: float
    passed: bool


def adjoint_oracle_p2(solution: DualSolution, paths: PathBundle, t_index: int,
                      n_inner: int = 1000, n_outer: Optional[int] = None,
                      closed_form: Optional[np.ndarray] = None,
                      traj: Optional[Trajectories] = None) -> OracleResult:
    """Nested-MC estimate of E[-Y(T) Ut'(Y(T)) | F_t] / Y(t) versus the closed-form p2(t).

    Inner branches restart the dual state from each outer Y(t).  With
    deterministic cell coefficients log Y(T) - log Y(t) is Gaussian with the
    summed cell mean and variance, which the branches sample directly.
    ``closed_form`` may replace the solver's p2(t) to test alternative formulas.
    """
    m = solution.market
    if m.is_random:
        raise VerificationError("nested oracle needs deterministic coefficients")
    M = m.n_steps
    if not 0 <= t_index <= M:
        raise VerificationError("t_index must lie on the grid")
    traj = traj or solution.trajectories(paths)
    P = traj.Y.shape[0] if n_outer is None else min(n_outer, traj.Y.shape[0])
    if P * n_inner > BRANCH_BUDGET:
        raise VerificationError("branch budget exceeded")
    y_t = traj.Y[:P, t_index]
    p2_t = traj.p2[:P, t_index] if closed_form is None else np.asarray(closed_form)[:P]

    v = solution.v_hat
    thv = solution.theta_hat
    delta = support_function_batch(solution.K, v)
    dt = m.dt[t_index:]
    mean = -float(np.sum((m.r[t_index:] + delta[t_index:]
                          + 0.5 * np.sum(thv[t_index:] ** 2, axis=-1)) * dt))
    sd = math.sqrt(float(np.sum(np.sum(thv[t_index:] ** 2, axis=-1) * dt)))
    rng = keyed_generator(paths.seed, DOMAIN_INNER, t_index)
    z = rng.standard_normal((P, n_inner))
    y_T = y_t[:, None] * np.exp(mean - sd * z)
    payoff = -y_T * solution.utility.dconj(y_T)
    est = payoff.mean(axis=1) / y_t
    se = payoff.std(axis=1, ddof=1) / math.sqrt(n_inner) / y_t
    rel = est / p2_t - 1.0
    rel_se = se / p2_t
    pooled = float(np.mean(rel))
    pooled_se = float(math.sqrt(np.sum(rel_se ** 2)) / P)
    passed = abs(pooled) <= CONFIDENCE * pooled_se + 1e-9
    return OracleResult(t_index, est, p2_t, se, float(np.max(np.abs(rel))), pooled, pooled_se, passed)


# --------------------------------------------------------------------------
# pathwise optimality conditions
# --------------------------------------------------------------------------

@dataclass
class ConditionRow:
    name: str
    max_residual: float
    tolerance: float
    passed: bool
    note: str = ""


@dataclass
class VerificationReport:
    rows: list = field(default_factory=list)
    primal_value: Optional[McEstimate] = None
    dual_value: Optional[McEstimate] = None

    @property
    def duality_gap(self) -> Optional[float]:
        if self.primal_value is None or self.dual_value is None:
            return None
        return self.dual_value.mean - self.primal_value.mean

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if not r.passed]

    def row(self, name: str) -> ConditionRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def add(self, name, residual, tol, note=""):
        residual = float(residual)
        passed = bool(np.isfinite(residual) and residual <= tol)
        self.rows.append(ConditionRow(name, residual, float(tol), passed, note))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "max_residual", "tolerance", "pass"])
        for r in self.rows:
            w.writerow([r.name, f"{r.max_residual:.17g}", f"{r.tolerance:.17g}",
                        "true" if r.passed else "false"])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for r in self.rows:
            flag = "PASS" if r.passed else "FAIL"
            lines.append(f"{flag}  {r.name:<28s} {r.max_residual:.3e}  (tol {r.tolerance:.1e}) {r.note}")
        if self.duality_gap is not None:
            lines.append(f"primal {self.primal_value.mean:.10g} +- {self.primal_value.std_error:.2e}, "
                         f"dual {self.dual_value.mean:.10g} +- {self.dual_value.std_error:.2e}, "
                         f"gap {self.duality_gap:.3e}")
        return "\n".join(lines)


def _unit_rows(a: np.ndarray) -> np.ndarray:
    # pre-scale by the max entry so tiny rows do not underflow to zero
    m = np.max(np.abs(a), axis=-1, keepdims=True)
    a = np.divide(a, m, out=np.zeros_like(a), where=m > 0)
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    return np.divide(a, n, out=np.zeros_like(a), where=n > 0)


def _project_rows(K: ConstraintSet, X: np.ndarray) -> np.ndarray:
    if isinstance(K, FullSpace):
        return X.copy()
    if isinstance(K, Orthant):
        return np.maximum(X, 0.0)
    if isinstance(K, Box):
        return np.clip(X, K.lower, K.upper)
    keys = np.round(X, 12)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    proj = np.array([project(K, u) for u in uniq])
    return proj[inverse.reshape(-1)]


def normal_cone_residual(K: ConstraintSet, X, Y) -> np.ndarray:
    """Row-wise |P_K(x + y/|y|) - x|, zero exactly when y is in N_K(x).

    For cones N_K(sx) = N_K(x) for s > 0, so x is normalized as well.
    """
    X = np.asarray(X, dtype=float).reshape(-1, K.n)
    Y = np.asarray(Y, dtype=float).reshape(-1, K.n)
    xs = _unit_rows(X) if K.is_cone else X
    ys = _unit_rows(Y)
    return np.linalg.norm(_project_rows(K, xs + ys) - xs, axis=1)


def bsde_step_residuals(traj: Trajectories, which: str, K: ConstraintSet | None = None) -> np.ndarray:
    """One-step residuals of the adjoint BSDEs, relative to |p_k|, shape (P, M).

    The dual drift needs delta_K(v); pass K unless it was cached on ``traj``.

    dual:   p2' - p2 - [(r + delta) p2 + q2' theta_v] dt - q2' dW
    primal: p1' - p1 + [(r + pi' sigma theta) p1 + q1' sigma' pi] dt - q1' dW
    """
    dt = traj.dt
    dW = traj.dW
    if which == "dual":
        p, q = traj.p2, traj.q2
        delta = support_function_batch(K, traj.v) if K is not None else traj._delta
        thv = traj.theta_v[:, :-1]
        drift = (traj.r[:, :-1] + delta[:, :-1]) * p[:, :-1] + np.sum(q[:, :-1] * thv, axis=-1)
        resid = p[:, 1:] - p[:, :-1] - drift * dt - np.sum(q[:, :-1] * dW, axis=-1)
    elif which == "primal":
        p, q = traj.p1, traj.q1
        pi = traj.pi[:, :-1]
        sig = traj.sigma[:, :-1]
        sth = (sig @ traj.theta[:, :-1, :, None])[..., 0]
        sTpi = (np.swapaxes(sig, -1, -2) @ pi[..., None])[..., 0]
        drift = -((traj.r[:, :-1] + np.sum(pi * sth, axis=-1)) * p[:, :-1]
                  + np.sum(q[:, :-1] * sTpi, axis=-1))
        resid = p[:, 1:] - p[:, :-1] - drift * dt - np.sum(q[:, :-1] * dW, axis=-1)
    else:
        raise ValueError(which)
    return resid / np.abs(p[:, :-1])


def max_step_rms(traj: Trajectories, which: str, K: ConstraintSet | None = None) -> float:
    """max over steps of the path-RMS of the relative one-step BSDE residual."""
    r = bsde_step_residuals(traj, which, K)
    return float(np.max(np.sqrt(np.mean(r ** 2, axis=0))))


def _candidate_adjoint(u: UtilityFunction, X, pi, traj: Trajectories):
    """Primal adjoint pair of a candidate strategy held constant on each cell.

    For U' = x**(beta-1) (beta = 0 for log) the linear primal BSDE is solved
    by p1 = -c(t) U'(X), q1 = (beta - 1) p1 sigma' pi with
    c(t) = exp(int_t^T beta (r + pi' sigma theta) + beta (beta - 1) |sigma' pi|^2 / 2).
    """
    if isinstance(u, PowerUtility):
        beta = u.beta
    elif isinstance(u, LogUtility):
        beta = 0.0
    else:
        raise VerificationError("candidate adjoints are available for power and log utility only")
    sig = traj.sigma
    sth = (sig @ traj.theta[..., None])[..., 0]
    sTpi = (np.swapaxes(sig, -1, -2) @ pi[..., None])[..., 0]
    kappa = beta * (traj.r + np.sum(pi * sth, axis=-1)) + 0.5 * beta * (beta - 1) * np.sum(sTpi ** 2, axis=-1)
    tail = np.cumsum((kappa[:, :-1] * traj.dt)[:, ::-1], axis=1)[:, ::-1]
    c = np.exp(np.concatenate([tail, np.zeros((tail.shape[0], 1))], axis=1))
    p1 = -c * u.dU(X)
    q1 = (beta - 1.0) * p1[..., None] * sTpi
    return p1, q1


def _perturbed(solution: DualSolution, traj: Trajectories, paths, perturb_pi, threads):
    """Candidate pi_hat + perturbation with its own adjoints, mapped to the dual side."""
    pi_cells = traj.pi[:, :-1] + perturb_pi
    X = simulate_wealth(solution.market, pi_cells, paths, threads).values
    pi = np.concatenate([pi_cells, pi_cells[:, -1:]], axis=1)
    p1, q1 = _candidate_adjoint(solution.utility, X, pi, traj)
    _, v, Y, p2, q2 = dual_from_primal(X, pi, p1, q1, traj.theta, traj.sigma)
    return Trajectories(traj.grid, traj.dW, traj.r, traj.b, traj.sigma, traj.theta, v,
                        Y, p2, q2, pi, X, p1, q1)


def check_fbsde_residuals(solution: DualSolution, paths: PathBundle, tol: float = 1e-9,
                          membership_tol: float = 1e-8, bsde_tol: float = 2.0,
                          perturb_pi: float = 0.0, threads=None,
                          with_values: bool = True) -> VerificationReport:
    """Pathwise check of every optimality condition at every grid point.

    Rows (name: condition)
      p2_initial            p2(0) = x0
      pi_in_K               sigma^{-T} q2 / p2 in K
      complementarity       p2 delta_K(v) + q2' sigma^{-1} v = 0
      normal_cone           -X sigma (p1 theta + q1) in N_K(pi)
      v_dot_pi              v'pi = 0 (cones only)
      bsde_dual/primal      max_k RMS_paths(step residual / |p|) / dt
      terminal_p1/p2        p1(T) = -U'(X(T)), p2(T) = -Ut'(Y(T))
      reverse_map           v = -sigma (q1 / p1 + theta)
      wealth_resimulation   X = wealth SDE under pi on the same increments
      martingale_p2Y        E[p2(T) Y(T)] = x0 y_hat
      duality_gap           |dual - primal| <= 4 combined s.e.
    """
    m = solution.market
    K = solution.K
    traj = solution.trajectories(paths, threads)
    if perturb_pi:
        traj = _perturbed(solution, traj, paths, perturb_pi, threads)
    traj._delta = support_function_batch(K, traj.v)
    rep = VerificationReport()
    P = traj.Y.shape[0]

    rep.add("p2_initial", np.max(np.abs(traj.p2[:, 0] - m.x0)) / m.x0, tol)

    pi_from_q = solve_cells(np.swapaxes(traj.sigma, -1, -2), traj.q2) / traj.p2[..., None]
    flat = pi_from_q.reshape(-1, K.n)
    scale = np.maximum(1.0, np.linalg.norm(flat, axis=1))
    viol = np.max(K.violation(flat) / scale) if K.halfspaces()[0].shape[0] else 0.0
    rep.add("pi_in_K", max(viol, 0.0), membership_tol)

    sinv_v = solve_cells(traj.sigma, traj.v)
    comp = traj.p2 * traj._delta + np.sum(traj.q2 * sinv_v, axis=-1)
    rep.add("complementarity", np.max(np.abs(comp) / traj.p2), tol)

    y_nc = -traj.X[..., None] * (traj.sigma @ (traj.p1[..., None] * traj.theta + traj.q1)[..., None])[..., 0]
    nc = normal_cone_residual(K, traj.pi, y_nc)
    rep.add("normal_cone", np.max(nc), membership_tol)

    if K.is_cone:
        vn = np.linalg.norm(traj.v, axis=-1) * np.maximum(1.0, np.linalg.norm(traj.pi, axis=-1))
        rep.add("v_dot_pi", np.max(np.abs(np.sum(traj.v * traj.pi, axis=-1)) / np.maximum(vn, 1.0)), tol)

    dt_min = float(np.min(traj.dt))
    for which in ("dual", "primal"):
        rms = max_step_rms(traj, which)
        rep.add(f"bsde_{which}", rms / dt_min, bsde_tol, note=f"max step rms {rms:.3e}")

    u = solution.utility
    XT, YT = traj.X[:, -1], traj.Y[:, -1]
    rep.add("terminal_p1", np.max(np.abs(traj.p1[:, -1] + u.dU(XT)) / np.abs(traj.p1[:, -1])), tol)
    rep.add("terminal_p2", np.max(np.abs(traj.p2[:, -1] + u.dconj(YT)) / traj.p2[:, -1]), tol)

    y_rev, v_rev, _, _, _ = dual_from_primal(traj.X, traj.pi, traj.p1, traj.q1, traj.theta, traj.sigma)
    v_err = np.abs(v_rev - traj.v) / (1.0 + np.abs(traj.v))
    rep.add("reverse_map", max(float(np.max(v_err)),
                               float(np.max(np.abs(y_rev - solution.y_hat)) / solution.y_hat)), tol)

    if solution.pi_hat_cells is not None or perturb_pi:
        X_sim = simulate_wealth(m, traj.pi[:, :-1], paths, threads).values
        rep.add("wealth_resimulation", np.max(np.abs(X_sim - traj.p2) / traj.p2), tol)

    prod = McEstimate.from_samples(traj.p2[:, -1] * traj.Y[:, -1])
    target = m.x0 * solution.y_hat
    # a roundoff floor keeps degenerate (deterministic) products from dividing by ~0
    se = max(prod.std_error, tol * abs(target))
    rep.add("martingale_p2Y", abs(prod.mean - target) / se, CONFIDENCE, note="in standard errors")

    if with_values:
        pi_cells = traj.pi[:, :-1]
        if perturb_pi == 0.0 and solution.pi_hat_cells is not None and not m.is_random:
            pi_cells = solution.pi_hat_cells
        primal = McEstimate.from_samples(u.U(traj.X[:, -1])) if solution.pi_hat_cells is None and not perturb_pi \
            else estimate_primal_value(m, K, pi_cells, paths, u, threads, tol=1e6)
        dual = estimate_dual_value(m, K, solution.y_hat, solution.v_hat, paths, u, threads)
        rep.primal_value, rep.dual_value = primal, dual
        se = max(math.hypot(primal.std_error, dual.std_error), tol * max(1.0, abs(dual.mean)))
        rep.add("duality_gap", abs(dual.mean - primal.mean) / se, CONFIDENCE,
                note="in standard errors")
    return rep

"""Single-stock market: log and power utility solved through the dual.

Run:  python3 demos/merton_and_power.py
"""
import math

from dualport import (
    FullSpace,
    LogUtility,
    MarketModel,
    PowerUtility,
    estimate_dual_value,
    estimate_primal_value,
    generate_paths,
    solve_log,
    solve_power,
)

m = MarketModel.constant(0.05, 0.10, 0.2, horizon=1.0, x0=1.0, n_steps=252)
paths = generate_paths(m, 100_000, seed=1)
K = FullSpace(1)

# log: the dual control is zero and the fraction is theta / sigma
s = solve_log(m, K)
est = estimate_primal_value(m, K, s.pi_hat_cells, paths, LogUtility())
print(f"log    pi_hat = {s.pi_hat_cells[0, 0]:.6f}   y_hat = {s.y_hat:.6f}")
print(f"       E[log X(T)] = {est.mean:.6f} +- {est.std_error:.1e}   closed form {0.05 + 0.5 * 0.25 ** 2:.6f}")

# power, beta = 0.5
beta = 0.5
s = solve_power(m, K, beta)
u = PowerUtility(beta)
primal = estimate_primal_value(m, K, s.pi_hat_cells, paths, u)
dual = estimate_dual_value(m, K, s.y_hat, s.v_hat, paths, u)
print(f"power  pi_hat = {s.pi_hat_cells[0, 0]:.6f}   y_hat = {s.y_hat:.12f}   exp(0.05625) = {math.exp(0.05625):.12f}")
print(f"       primal {primal.mean:.6f} +- {primal.std_error:.1e}")
print(f"       dual   {dual.mean:.6f} +- {dual.std_error:.1e}   closed form {s.dual_value:.6f}")

# any other constant fraction does worse
for pi in (1.0, 2.0, 3.0, 4.0):
    e = estimate_primal_value(m, K, [pi], paths, u)
    print(f"       pi = {pi:.1f}: {e.mean:.6f}")

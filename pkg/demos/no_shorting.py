"""Negative excess return with shorting forbidden.

The unconstrained fraction would be negative, so the constraint binds: the
optimal fraction is zero and the dual control absorbs the whole excess
return.  A perturbed strategy breaks the normal-cone condition at every
grid point.

Run:  python3 demos/no_shorting.py
"""
from dualport import MarketModel, Orthant, check_fbsde_residuals, generate_paths, solve_power

m = MarketModel.constant(0.05, 0.03, 0.2, horizon=1.0, x0=1.0, n_steps=252)
K = Orthant(1)
s = solve_power(m, K, 0.5)
print(f"v_hat = {s.v_hat[0, 0]:.6f}   pi_hat = {s.pi_hat_cells[0, 0]:.6f}   theta_hat = {s.theta_hat[0, 0]:.6f}")

paths = generate_paths(m, 5000, seed=2)
print("\noptimal strategy")
print(check_fbsde_residuals(s, paths).summary())

print("\nstrategy shifted by +0.5")
print(check_fbsde_residuals(s, paths, perturb_pi=0.5).summary())

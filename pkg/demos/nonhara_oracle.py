"""Non-HARA utility: quartic for the dual initial value and a nested
Monte Carlo check of the dual adjoint at three times.

Run:  python3 demos/nonhara_oracle.py
"""
import math

from dualport import FullSpace, MarketModel, adjoint_oracle_p2, generate_paths, solve_nonhara

r, th2, T = 0.05, 0.0625, 1.0
m = MarketModel.constant(r, 0.10, 0.2, horizon=T, x0=1.0, n_steps=252)
s = solve_nonhara(m, FullSpace(1))
quartic = s.y_hat ** 4 - math.exp((r + th2) * T) * s.y_hat ** 2 - math.exp((3 * r + 6 * th2) * T)
print(f"y_hat = {s.y_hat:.15f}   quartic residual {quartic:.1e}")

paths = generate_paths(m, 1000, seed=3)
tr = s.trajectories(paths)
print(f"p2(0) = {tr.p2[0, 0]:.15f}")
for k in (0, m.n_steps // 2, m.n_steps):
    o = adjoint_oracle_p2(s, paths, k, n_inner=1000, traj=tr)
    print(f"t = {m.grid[k]:.3f}   pooled rel. deviation {o.pooled_deviation:+.2e} +- {o.pooled_se:.1e}"
          f"   {'ok' if o.passed else 'REJECTED'}")

# a variant with the exponent 3(r + th2) in place of 3r + 6 th2 is rejected
Y0 = tr.Y[:, 0]
alt = Y0 ** -4 * math.exp(3 * (r + th2) * T) + Y0 ** -2 * math.exp((r + th2) * T)
o = adjoint_oracle_p2(s, paths, 0, n_inner=1000, closed_form=alt, traj=tr)
print(f"alternative exponent: pooled rel. deviation {o.pooled_deviation:+.2e} +- {o.pooled_se:.1e}"
      f"   {'ok' if o.passed else 'REJECTED'}")

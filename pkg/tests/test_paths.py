import math
import struct

import numpy as np
import pytest

from dualport import FullSpace, MarketModel, Orthant, generate_paths, simulate_dual, simulate_wealth
from dualport.paths import (
    MEMORY_CAP_ELEMENTS,
    SimulationError,
    read_paths,
    terminal_dual,
    terminal_wealth,
    write_paths,
)


def test_same_seed_identical(merton_market):
    a = generate_paths(merton_market, 3000, 5).dW
    b = generate_paths(merton_market, 3000, 5).dW
    assert np.array_equal(a, b)


def test_seed_plus_one_differs(merton_market):
    a = generate_paths(merton_market, 100, 5).dW
    b = generate_paths(merton_market, 100, 6).dW
    assert not np.any(a == b)


def test_prefix_stable_in_n_paths(merton_market):
    a = generate_paths(merton_market, 1500, 9).dW
    b = generate_paths(merton_market, 4000, 9).dW
    assert np.array_equal(a, b[:1500])


def test_thread_count_does_not_change_results(merton_market):
    p = generate_paths(merton_market, 5000, 1)
    x1 = simulate_wealth(merton_market, [1.0], p, threads=1).values
    x8 = simulate_wealth(merton_market, [1.0], p, threads=8).values
    assert np.array_equal(x1, x8)


def test_increment_moments():
    m = MarketModel.constant(0.0, 0.0, 1.0, n_steps=100)
    dW = generate_paths(m, 100_000, 3).dW
    dt = 0.01
    assert abs(dW.mean()) <= 4 * math.sqrt(dt) / math.sqrt(dW.size)
    assert dW.var() == pytest.approx(dt, rel=4 * math.sqrt(2 / dW.size))


def test_memory_cap(merton_market):
    p = generate_paths(merton_market, MEMORY_CAP_ELEMENTS // 252 + 1, 0)
    with pytest.raises(SimulationError):
        p.dW


def test_invalid_arguments(merton_market):
    with pytest.raises(SimulationError):
        generate_paths(merton_market, 0, 1)
    with pytest.raises(SimulationError):
        generate_paths(merton_market, 10, -1)


def test_zero_strategy_is_bank_account(merton_market):
    p = generate_paths(merton_market, 200, 0)
    x = simulate_wealth(merton_market, [0.0], p).values
    assert np.allclose(x[:, -1], math.exp(0.05), rtol=1e-13)
    assert np.all(x > 0)


def test_full_investment_mean(merton_market):
    p = generate_paths(merton_market, 100_000, 2)
    xT = terminal_wealth(merton_market, [1.0], p)
    se = xT.std(ddof=1) / math.sqrt(xT.size)
    assert abs(xT.mean() - math.exp(0.10)) <= 4 * se


def test_log_variance_when_sigma_pi_is_minus_theta(merton_market):
    # sigma' pi = -theta => pi = -theta / sigma = -1.25
    p = generate_paths(merton_market, 100_000, 4)
    logx = np.log(terminal_wealth(merton_market, [-1.25], p))
    n = logx.size
    assert logx.mean() == pytest.approx((0.05 - 0.0625 - 0.5 * 0.0625), abs=4 * 0.25 / math.sqrt(n))
    assert logx.var(ddof=1) == pytest.approx(0.0625, rel=4 * math.sqrt(2 / n))


def test_exact_scheme_moments(merton_market):
    p = generate_paths(merton_market, 100_000, 8)
    pi = 0.7
    logx = np.log(terminal_wealth(merton_market, [pi], p))
    mu = 0.05 + pi * 0.05 - 0.5 * (pi * 0.2) ** 2
    var = (pi * 0.2) ** 2
    n = logx.size
    assert abs(logx.mean() - mu) <= 4 * math.sqrt(var / n)
    assert abs(logx.var(ddof=1) - var) <= 4 * var * math.sqrt(2 / n)


def test_dual_state_rate_only():
    m = MarketModel.constant(0.04, 0.04, 0.3, n_steps=10)
    p = generate_paths(m, 50, 0)
    y = simulate_dual(m, 1.0, [0.0], FullSpace(1), p).values
    assert np.allclose(y[:, -1], math.exp(-0.04), rtol=1e-13)


def test_dual_state_orthant_cancels_theta(bearish_market):
    p = generate_paths(bearish_market, 50, 0)
    y = simulate_dual(bearish_market, 1.0, [0.02], Orthant(1), p).values
    t = bearish_market.grid
    assert np.allclose(y, np.exp(-0.05 * t)[None], rtol=1e-12)


def test_dual_martingale(merton_market):
    p = generate_paths(merton_market, 100_000, 12)
    yT = terminal_dual(merton_market, 1.3, [0.0], FullSpace(1), p)
    z = math.exp(0.05) * yT
    assert abs(z.mean() - 1.3) <= 4 * z.std(ddof=1) / math.sqrt(z.size)


def test_v_outside_effective_domain(merton_market):
    p = generate_paths(merton_market, 10, 0)
    with pytest.raises(SimulationError, match="v not in effective domain"):
        simulate_dual(merton_market, 1.0, [-0.1], Orthant(1), p)
    with pytest.raises(SimulationError):
        simulate_dual(merton_market, 0.0, [0.0], Orthant(1), p)


def test_overflow_guard_marks_paths():
    m = MarketModel.constant(0.0, 50.0, 1.0, horizon=1.0, n_steps=4)
    p = generate_paths(m, 20, 0)
    st = simulate_wealth(m, [40.0], p)
    assert np.all(st.aborted)
    assert np.all(np.isnan(st.values[st.aborted, -1]))
    with pytest.raises(SimulationError):
        terminal_wealth(m, [40.0], p)


def test_strategy_shape_checked(merton_market):
    p = generate_paths(merton_market, 10, 0)
    with pytest.raises(SimulationError):
        simulate_wealth(merton_market, np.zeros((3, 1)), p)
    with pytest.raises(SimulationError):
        simulate_wealth(merton_market, [np.nan], p)


def test_refinement_aggregates_consistently():
    # with constant pi, X(T) depends on dW only through its sum, which the
    # exact scheme reproduces on any grid given the same total increment
    coarse = MarketModel.constant(0.05, 0.10, 0.2, n_steps=4)
    fine = MarketModel.constant(0.05, 0.10, 0.2, n_steps=8)
    pf = generate_paths(fine, 30, 1)
    dW = pf.dW
    xf = simulate_wealth(fine, [0.8], pf).values[:, -1]
    total = dW.sum(axis=1)[:, 0]
    closed = np.exp(0.05 + 0.8 * 0.05 - 0.5 * 0.16 ** 2 + 0.16 * total)
    assert np.allclose(xf, closed, rtol=1e-13)
    assert coarse.dt.sum() == fine.dt.sum()


def test_binary_dump_round_trip(tmp_path, two_asset_market):
    p = generate_paths(two_asset_market, 1500, 3)
    f = tmp_path / "paths.bin"
    write_paths(f, p)
    raw = f.read_bytes()
    magic, n, m, n_paths = struct.unpack("<4sqqq", raw[:28])
    assert (magic, n, m, n_paths) == (b"DPL1", 2, 52, 1500)
    assert len(raw) == 28 + 8 * 2 * 52 * 1500
    assert np.array_equal(read_paths(f), p.dW)
    f.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SimulationError):
        read_paths(f)

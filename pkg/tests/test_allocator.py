import numpy as np
import pytest

import supermux.allocator as al
from supermux.allocator import (Allocation, AllocatorOptions, MODE_MULTICAST, MODE_OFF,
                                MODE_SUPERPOSITION, MODE_UNICAST, algorithm1, algorithm2,
                                allocation_invariant_errors, baseline_multicast_only,
                                baseline_orthogonal, baseline_unicast_only,
                                outer_minimize, project_simplex, solve_waterline,
                                split_power, utility_u0_hat, utility_u1_hat,
                                z1_closed_form)
from supermux.channel import MimoShape, build_channel_stats
from supermux.rates import LN2, RateEstimator, rate_tuple, with_lookup_table

EST11 = with_lookup_table(MimoShape(1, 1), n_samples=50_000, seed=0)


def stats_1x2(ratio=4.0):
    return build_channel_stats([[ratio, 1.0]], [1.0])


def test_utility_u0_at_zero():
    stats = build_channel_stats([[2.0, 0.5]], [1.0])
    mu = np.array([1.5, 0.5])
    expect = (1.5 * 2.0 + 0.5 * 0.5) * 3 - 0.7 * LN2 / 1.0
    assert utility_u0_hat(0.0, 0, mu, 0.7, stats, alpha=1.0, n_r=3) == pytest.approx(expect)


def test_utility_u0_analytic_root():
    # single user, weight 2, unit SNR, two receive antennas, unit fraction:
    # u0(x) = 4/(1+x) - 1, zero at x = 3
    stats = build_channel_stats([[1.0]], [1.0])
    mu = np.array([2.0])
    lam = 1.0 / LN2
    assert utility_u0_hat(3.0, 0, mu, lam, stats, alpha=1.0, n_r=2) == pytest.approx(0.0, abs=1e-12)
    assert utility_u0_hat(2.9, 0, mu, lam, stats, alpha=1.0, n_r=2) > 0
    assert utility_u0_hat(3.1, 0, mu, lam, stats, alpha=1.0, n_r=2) < 0


def test_u1_zero_matches_closed_form():
    stats = build_channel_stats([[5.0, 2.0], [1.0, 3.0]], [0.5, 0.5])
    for i in range(2):
        z = z1_closed_form(i, 0.31, stats, alpha=1.4, n_r=2)
        assert utility_u1_hat(z, i, 0.31, stats, alpha=1.4, n_r=2) == pytest.approx(0.0, abs=1e-12)


def test_z1_examples():
    # n_r eta / (lam ln2) = 20 with snr 0.25 gives 20 - 4 = 16
    stats = build_channel_stats([[0.25]], [1.0])
    lam = 1.0 / (20.0 * LN2)
    assert z1_closed_form(0, lam, stats, alpha=1.0) == pytest.approx(16.0)
    big = build_channel_stats([[1e12]], [1.0])
    assert z1_closed_form(0, lam, big, alpha=1.0) == pytest.approx(20.0, rel=1e-9)
    small = build_channel_stats([[0.04]], [1.0])  # 1/snr = 25 > 20 -> negative
    assert z1_closed_form(0, lam, small, alpha=1.0) < 0
    with pytest.raises(ValueError):
        z1_closed_form(0, 0.0, stats, alpha=1.0)


def test_waterline_single_channel_gets_everything():
    stats = build_channel_stats([[3.0, 1.0]], [1.0])
    lam, p = solve_waterline(stats, [1.0, 1.0], alpha=1.0, p_t=5.0)
    assert p.sum() == pytest.approx(5.0, abs=5e-6)
    assert p[0] == pytest.approx(5.0, abs=5e-6)


def test_waterline_symmetry():
    stats = build_channel_stats([[2.0, 1.0], [2.0, 1.0]], [0.5, 0.5])
    _, p = solve_waterline(stats, [0.5, 1.5], alpha=1.2, p_t=4.0)
    assert p[0] == pytest.approx(p[1], rel=1e-6)
    assert p.sum() == pytest.approx(4.0, abs=4e-6)


def test_waterline_matches_scalar_waterfilling_oracle():
    # pure private traffic over two channels: classic water-filling on 1/snr
    stats = build_channel_stats([[4.0], [1.0]], [0.5, 0.5])
    p_t = 1.0
    lam, p = solve_waterline(stats, [0.0], alpha=1.0, p_t=p_t, n_r=1)
    # oracle: common level w with P_i = max(0, w - 1/g_i), both active here
    assert p[0] == pytest.approx(0.875, abs=1e-5)
    assert p[1] == pytest.approx(0.125, abs=1e-5)
    # waterline reported consistently: z1(lam) reproduces the powers
    for i in range(2):
        assert z1_closed_form(i, lam, stats, alpha=1.0, n_r=1) == pytest.approx(
            p[i], abs=1e-5)


def test_waterline_drops_weak_channel_at_low_power():
    stats = build_channel_stats([[4.0], [1.0]], [0.5, 0.5])
    _, p = solve_waterline(stats, [0.0], alpha=1.0, p_t=0.1, n_r=1)
    assert p[1] == 0.0
    assert p[0] == pytest.approx(0.1, abs=1e-6)


def test_split_power_superposition_root():
    # weight 2 on the weak user: g(x) = -1 + 2(0.25+x)/(1+x), root at 0.5
    stats = stats_1x2(4.0)
    p0, p1, mode = split_power(0, 10.0, [0.0, 2.0], stats, alpha=1.0)
    assert mode == MODE_SUPERPOSITION
    assert p1 == pytest.approx(0.5, abs=1e-9)
    assert p0 == pytest.approx(9.5, abs=1e-9)
    # power cap binds when the subchannel has less power than the root
    p0, p1, mode = split_power(0, 0.3, [0.0, 2.0], stats, alpha=1.0)
    assert mode == MODE_UNICAST and p1 == 0.3 and p0 == 0.0


def test_split_power_multicast_guard():
    stats = stats_1x2(4.0)
    p0, p1, mode = split_power(0, 10.0, [2.0, 0.0], stats, alpha=1.0)
    assert mode == MODE_MULTICAST and p1 == 0.0 and p0 == 10.0


def test_split_power_single_user_multicast_when_weighted():
    stats = build_channel_stats([[3.0]], [1.0])
    _, p1, mode = split_power(0, 2.0, [1.5], stats, alpha=1.0)
    assert mode == MODE_MULTICAST and p1 == 0.0


def test_split_power_off():
    stats = stats_1x2()
    assert split_power(0, 0.0, [1.0, 1.0], stats, alpha=1.0) == (0.0, 0.0, MODE_OFF)


def test_g_monotone_with_asymptote():
    stats = stats_1x2(4.0)
    mu = np.array([0.5, 1.5])  # mu_total = 2
    xs = np.logspace(-3, 3, 40)
    vals = [al._g_split(x, 0, mu, stats, 1.0) for x in xs]
    assert np.all(np.diff(vals) > 0)
    tail = al._g_split(1e9, 0, mu, stats, 1.0)
    assert (2.0 - 1.0 - 1e-3) < tail < (2.0 - 1.0)


def test_project_simplex():
    v = np.array([0.2, -1.0, 3.0])
    p = project_simplex(v, 2.0)
    assert p.sum() == pytest.approx(2.0)
    assert np.all(p >= 0)
    already = np.array([0.5, 1.5])
    assert np.allclose(project_simplex(already, 2.0), already)


def test_outer_minimize_single_user():
    calls = []

    def inner(mu):
        calls.append(mu.copy())
        return float(mu[0] ** 2), np.array([2 * mu[0]]), None

    res = outer_minimize(inner, 3.0, 1)
    assert np.allclose(res.mu_vec, [3.0])


def test_outer_minimize_best_no_worse_than_uniform():
    rng = np.random.default_rng(0)
    w = rng.uniform(0.5, 2.0, size=4)

    def inner(mu):
        # V convex piecewise-linear-ish in mu
        val = float(w @ mu + 0.3 * np.max(mu))
        g = w + 0.3 * (mu == mu.max())
        return val, g, None

    res = outer_minimize(inner, 4.0, 4, AllocatorOptions(max_outer_iters=100))
    uniform_val = inner(np.full(4, 1.0))[0]
    assert res.value <= uniform_val + 1e-12


def test_outer_minimize_concentrates_single_subchannel():
    # one subchannel: the weight mass should end on the weakest user
    stats = stats_1x2(4.0)
    _, rates = algorithm1(stats, 2.0, 10.0, 1.3, EST11)
    alloc, _ = algorithm1(stats, 2.0, 10.0, 1.3, EST11)
    weak = stats.orderings[0, -1]
    assert alloc.mu_vec[weak] >= 0.95 * 2.0


# ---------------------------------------------------------------------------
# full schemes

def test_algorithm1_mode_regions_single_subchannel():
    stats = stats_1x2(4.0)  # best/worst SNR ratio 4
    alloc, _ = algorithm1(stats, 0.5, 10.0, 1.306, EST11)
    assert alloc.mode[0] == MODE_UNICAST
    alloc, _ = algorithm1(stats, 2.0, 10.0, 1.306, EST11)
    assert alloc.mode[0] == MODE_SUPERPOSITION
    assert 0 < alloc.p1[0] < 10.0
    alloc, _ = algorithm1(stats, 5.0, 10.0, 1.306, EST11)
    assert alloc.mode[0] == MODE_MULTICAST


def test_algorithm1_power_conservation_and_invariants():
    rng = np.random.default_rng(42)
    est = with_lookup_table(MimoShape(2, 2), n_samples=20_000, seed=1)
    for trial in range(5):
        M, K = rng.integers(1, 4), rng.integers(1, 5)
        snr = 10 ** rng.uniform(0, 3, size=(M, K)) / 10
        eta = rng.uniform(0.5, 1.5, size=M)
        stats = build_channel_stats(snr, eta / eta.sum())
        p_t = float(rng.uniform(0.5, 20))
        mu = float(rng.uniform(1.1, K + 1))
        alloc, rates = algorithm1(stats, mu, p_t, 1.4, est,
                                  AllocatorOptions(max_outer_iters=40))
        assert allocation_invariant_errors(alloc, stats, p_t) == []
        assert rates.r0 >= 0 and np.all(rates.r_k >= -1e-12)
        # mode/guard consistency
        for i in range(M):
            if alloc.mode[i] == MODE_SUPERPOSITION:
                guard = float(alloc.mu_vec @ stats.snr[i])
                assert guard < stats.strongest_snr(i)
                assert abs(al._g_split(alloc.p1[i], 0 * i + i, alloc.mu_vec, stats, 1.4)) < 1e-6


def test_algorithm2_closed_form_matches_exact_root_single_weight():
    # single nonzero weight makes the closed-form bound tight
    stats = stats_1x2(4.0)
    est = EST11
    opts = AllocatorOptions(max_outer_iters=60)
    a1, _ = algorithm1(stats, 2.0, 10.0, 1.0, est, opts)
    a2, _ = algorithm2(stats, 2.0, 10.0, 1.0, est, opts)
    # both concentrate weight on the weak user; splits should coincide (M=1)
    assert a2.p1[0] == pytest.approx(a1.p1[0], rel=1e-6, abs=1e-9)
    assert a2.p1[0] == pytest.approx(0.5, abs=1e-6)


def test_algorithm2_closed_form_cases():
    stats = build_channel_stats([[4.0, 1.0], [4.0, 1.0]], [0.5, 0.5])
    est = with_lookup_table(MimoShape(1, 1), n_samples=10_000, seed=2)
    alloc, _ = algorithm2(stats, 2.0, 6.0, 1.0, est)
    assert np.allclose(alloc.p_total, 3.0)
    assert alloc.p1[0] == pytest.approx(alloc.p1[1], rel=1e-9)  # symmetry
    # negative bracket clamps to zero: strong-user weighting
    stats2 = stats_1x2(4.0)

    def inner_clamp():
        P = 3.0
        mu_vec = np.array([2.0, 0.0])
        z = (np.sum(mu_vec / 2.0 / stats2.snr[0]) - 2.0 / 4.0) / (1.0 * (2.0 - 1.0))
        return z

    assert inner_clamp() < 0  # the closed form would go negative -> P1 = 0


def test_baseline_unicast_only():
    stats = stats_1x2(4.0)
    alloc, rates = baseline_unicast_only(stats, 5.0, 1.0, EST11)
    assert alloc.mode == (MODE_UNICAST,)
    assert alloc.p1[0] == pytest.approx(5.0, abs=5e-6)
    assert alloc.selected_user[0] == 0
    assert rates.r0 == 0.0
    two = build_channel_stats([[2.0, 1.0], [2.0, 1.0]], [0.5, 0.5])
    alloc, _ = baseline_unicast_only(two, 4.0, 1.0, EST11)
    assert alloc.p_total[0] == pytest.approx(alloc.p_total[1], rel=1e-6)


def test_baseline_multicast_only():
    stats = build_channel_stats([[3.0]], [1.0])
    alloc, rates = baseline_multicast_only(stats, 2.0, 4.0, 1.0, EST11)
    assert alloc.mode == (MODE_MULTICAST,)
    assert alloc.p_total[0] == pytest.approx(4.0, abs=4e-6)
    assert np.all(rates.r_k == 0)
    # the common rate binds at the weakest weighted user
    multi = build_channel_stats([[5.0, 1.0]], [1.0])
    _, r = baseline_multicast_only(multi, 2.0, 4.0, 1.0, EST11)
    assert r.r0 == pytest.approx(float(EST11.table(1.0 * 4.0)), rel=1e-6)


def test_baseline_orthogonal_symmetric_tie_and_degenerate():
    stats = build_channel_stats([[2.0, 1.0], [2.0, 1.0]], [0.5, 0.5])
    alloc, rates = baseline_orthogonal(stats, 2.0, 4.0, 1.0, 0.5, EST11)
    assert sorted(alloc.mode) == [MODE_MULTICAST, MODE_UNICAST]
    full, full_rates = baseline_orthogonal(stats, 2.0, 4.0, 1.0, 1.0, EST11)
    mo, mo_rates = baseline_multicast_only(stats, 2.0, 4.0, 1.0, EST11)
    assert full_rates.wsr == pytest.approx(mo_rates.wsr, rel=1e-9)


def test_baseline_orthogonal_picks_good_multicast_subchannel():
    # subchannel 0 is strong for the weakest user: it should carry the common signal
    stats = build_channel_stats([[4.0, 3.0], [4.0, 0.2]], [0.5, 0.5])
    alloc, _ = baseline_orthogonal(stats, 3.0, 4.0, 1.0, 0.5, EST11,
                                   AllocatorOptions(max_outer_iters=60))
    assert alloc.mode[0] == MODE_MULTICAST
    assert alloc.mode[1] == MODE_UNICAST


def test_wsr_dominance_shared_seed():
    rng = np.random.default_rng(5)
    est = with_lookup_table(MimoShape(4, 2), n_samples=30_000, seed=3)
    opts = AllocatorOptions(max_outer_iters=80)
    for _ in range(3):
        M, K = 3, 4
        snr = 10 ** rng.uniform(0, 2.5, size=(M, K))
        stats = build_channel_stats(snr, np.full(M, 1 / M))
        mu, p_t = float(K), 1.0
        _, r1 = algorithm1(stats, mu, p_t, 1.16, est, opts)
        _, r2 = algorithm2(stats, mu, p_t, 1.16, est, opts)
        _, ruo = baseline_unicast_only(stats, p_t, 1.16, est, opts)
        ruo_wsr = ruo.sum_rate  # r0 = 0 so wsr at any mu equals sum of privates
        _, rmo = baseline_multicast_only(stats, mu, p_t, 1.16, est, opts)
        _, rom = baseline_orthogonal(stats, mu, p_t, 1.16, 0.5, est, opts)
        assert r1.wsr >= r2.wsr * (1 - 0.01)
        assert r1.wsr >= ruo_wsr * (1 - 0.01)
        assert r1.wsr >= rmo.wsr * (1 - 0.01)
        assert r1.wsr >= rom.wsr * (1 - 0.01)


def test_allocation_invariant_checker_flags_bad():
    stats = stats_1x2()
    bad = Allocation(p_total=np.array([1.0]), p1=np.array([0.5]),
                     selected_user=(None,), mode=(MODE_MULTICAST,),
                     lam=0.1, mu_vec=np.array([1.0, 1.0]))
    errs = allocation_invariant_errors(bad, stats, 2.0)
    assert errs  # wrong mode and wrong total


def test_mu_at_most_one_short_circuits():
    stats = stats_1x2()
    for mu in (0.0, 0.5, 1.0):
        alloc, rates = algorithm1(stats, mu, 3.0, 1.3, EST11)
        assert alloc.mode[0] == MODE_UNICAST
        assert rates.wsr == pytest.approx(rates.r_k.sum(), abs=1e-12)

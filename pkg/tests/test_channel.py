import numpy as np
import pytest

from supermux.channel import (ChannelStats, MimoShape, build_channel_stats,
                              dump_channel_stats, parse_channel_stats, stronger_set)


def test_ordering_descending():
    stats = build_channel_stats([[0.5, 2.0, 1.0]], [1.0])
    # users are 0-based: user 1 strongest, then 2, then 0
    assert stats.orderings.tolist() == [[1, 2, 0]]
    assert stats.strongest(0) == 1


def test_tie_break_subtracts_epsilon():
    stats = build_channel_stats([[1.0, 1.0]], [1.0], epsilon=1e-6)
    assert stats.snr[0, 0] == 1.0
    assert stats.snr[0, 1] == pytest.approx(1.0 - 1e-6, abs=1e-12)
    assert stats.orderings.tolist() == [[0, 1]]


def test_three_way_tie_strict():
    stats = build_channel_stats([[2.0, 2.0, 2.0]], [1.0])
    row = stats.snr[0]
    assert row[0] > row[1] > row[2]
    assert stats.orderings.tolist() == [[0, 1, 2]]


def test_cascading_tie_resolves():
    # breaking the first tie creates a collision with the third value
    eps = 1e-6
    stats = build_channel_stats([[1.0, 1.0, 1.0 - 1e-6]], [1.0], epsilon=eps)
    assert len(set(stats.snr[0])) == 3


def test_single_user():
    stats = build_channel_stats([[0.3], [7.0]], [0.5, 0.5])
    assert stats.orderings.tolist() == [[0], [0]]


def test_eta_normalized_exactly():
    stats = build_channel_stats([[1.0], [2.0], [3.0]], [0.2, 0.3, 0.5 + 4e-10])
    assert abs(stats.eta.sum() - 1.0) < 1e-12


def test_stronger_set_examples():
    stats = build_channel_stats([[4.0, 1.0, 2.0]], [1.0])
    assert stronger_set(stats, 0, 2) == {0}
    assert stronger_set(stats, 0, stats.orderings[0, 0]) == set()
    weakest = stats.orderings[0, -1]
    assert stronger_set(stats, 0, weakest) == {0, 2}


def test_stronger_set_sizes_match_rank():
    rng = np.random.default_rng(7)
    snr = rng.uniform(0.1, 50.0, size=(4, 6))
    stats = build_channel_stats(snr, np.full(4, 0.25))
    for i in range(4):
        for rank in range(6):
            k = stats.orderings[i, rank]
            assert len(stronger_set(stats, i, k)) == rank


def test_orderings_are_permutations():
    rng = np.random.default_rng(11)
    stats = build_channel_stats(rng.uniform(0, 10, (5, 8)), np.full(5, 0.2))
    for row in stats.orderings:
        assert sorted(row.tolist()) == list(range(8))
        inverse = np.empty(8, dtype=int)
        inverse[row] = np.arange(8)
        assert np.array_equal(row[inverse], np.arange(8))


def test_idempotent_rebuild():
    stats = build_channel_stats([[3.0, 3.0, 1.0]], [1.0], epsilon=1e-9)
    again = build_channel_stats(stats.snr, stats.eta, epsilon=1e-9)
    assert np.array_equal(stats.snr, again.snr)
    assert np.array_equal(stats.orderings, again.orderings)


def test_validation_errors():
    with pytest.raises(ValueError):
        build_channel_stats([[1.0, 2.0]], [0.5, 0.5])       # eta length mismatch
    with pytest.raises(ValueError):
        build_channel_stats([[1.0], [2.0]], [1.0, -0.1])    # nonpositive eta
    with pytest.raises(ValueError):
        build_channel_stats([[-1.0]], [1.0])                # negative SNR
    with pytest.raises(ValueError):
        build_channel_stats([[1.0], [2.0]], [0.6, 0.6])     # eta sum off
    with pytest.raises(IndexError):
        stronger_set(build_channel_stats([[1.0]], [1.0]), 0, 5)


def test_mimo_shape_validation():
    assert MimoShape(8, 4).n_min == 4
    with pytest.raises(ValueError):
        MimoShape(0, 2)


def test_text_roundtrip():
    stats = build_channel_stats([[4.0, 1.0], [2.5, 9.0]], [0.4, 0.6])
    again = parse_channel_stats(dump_channel_stats(stats))
    assert np.array_equal(stats.snr, again.snr)
    assert np.array_equal(stats.eta, again.eta)


def test_parse_defaults_uniform_eta():
    stats = parse_channel_stats("# comment\n1.0 2.0\n3.0 4.0\n")
    assert np.allclose(stats.eta, 0.5)
    with pytest.raises(ValueError):
        parse_channel_stats("1.0 2.0\n3.0\n")

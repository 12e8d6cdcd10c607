import numpy as np
import pytest
from hypothesis import given, strategies as st

from oblivdp.dp import PrivacyParams
from oblivdp.prefix_sum import (
    HorizonError, PrefixSumOracle, coupled_tape, decompose, draw_tape, prefix_noise, tape_length, tree_height,
)

QUIET = PrivacyParams(noiseless=True)


def test_all_zeros_give_zero_nodes():
    o = PrefixSumOracle(16, QUIET)
    o.feed_many([0] * 16)
    assert all(o.query(c) == 0 for c in range(1, 17))


def test_exact_prefix_sums():
    o = PrefixSumOracle(3, QUIET)
    for _ in range(3):
        o.feed(1)
    assert [o.query(c) for c in (1, 2, 3)] == [1, 2, 3]


def test_prefix_six_uses_two_nodes():
    # level 2 node 0 is [1..4]; level 1 node 2 is [5..6]
    assert decompose(6, 8) == [(2, 0), (1, 2)]


def test_full_horizon_power_of_two():
    assert decompose(8, 8) == [(2, 0), (2, 1)]


@given(st.integers(1, 5000), st.data())
def test_decomposition_covers_prefix(n, data):
    c = data.draw(st.integers(1, n))
    covered = []
    for lv, j in decompose(c, n):
        covered.extend(range(j * 2 ** lv + 1, (j + 1) * 2 ** lv + 1))
    assert sorted(covered) == list(range(1, c + 1))
    assert len(decompose(c, n)) <= max(tree_height(n), 2)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=300))
def test_noiseless_equals_exact(bits):
    o = PrefixSumOracle(len(bits), QUIET)
    o.feed_many(bits)
    ys = np.cumsum(bits)
    assert [o.query(c) for c in range(1, len(bits) + 1)] == list(ys)


@given(st.integers(1, 600), st.integers(0, 2 ** 32))
def test_vector_noise_matches_node_sums(n, seed):
    tape = draw_tape(np.random.default_rng(seed), PrivacyParams(), n)
    o = PrefixSumOracle(n, PrivacyParams(), tape=tape)
    o.feed_many([0] * n)
    noise = prefix_noise(tape, n)
    for c in {1, n, (n + 1) // 2}:
        assert o.query(c) == pytest.approx(noise[c - 1])


def test_each_position_in_at_most_L_nodes():
    n = 1000
    counts = np.zeros(n + 1, int)
    from oblivdp.prefix_sum import level_sizes
    for lv, size in enumerate(level_sizes(n)):
        for j in range(size):
            counts[j * 2 ** lv + 1:(j + 1) * 2 ** lv + 1] += 1
    assert counts[1:].max() <= tree_height(n)


def test_horizon_enforced():
    o = PrefixSumOracle(2, QUIET)
    o.feed_many([1, 1])
    with pytest.raises(HorizonError):
        o.feed(1)


def test_tape_length_checked():
    with pytest.raises(ValueError):
        PrefixSumOracle(8, PrivacyParams(), tape=np.zeros(3))
    assert tape_length(8) == 8 + 4 + 2


@given(st.lists(st.integers(0, 1), min_size=2, max_size=200), st.data())
def test_coupled_tape_equalises_answers(bits, data):
    n = len(bits)
    i = data.draw(st.integers(0, n - 1))
    nb = list(bits)
    nb[i] = 1 - nb[i]
    tape = draw_tape(np.random.default_rng(n), PrivacyParams(), n)
    a = PrefixSumOracle(n, PrivacyParams(), tape=tape)
    a.feed_many(bits)
    b = PrefixSumOracle(n, PrivacyParams(), tape=coupled_tape(tape, bits, nb, n))
    b.feed_many(nb)
    for c in range(1, n + 1):
        assert a.query(c) == pytest.approx(b.query(c))
    # only nodes covering position i move, each by exactly one
    shift = np.abs(coupled_tape(tape, bits, nb, n) - tape)
    assert np.count_nonzero(shift > 1e-9) <= tree_height(n)
    assert np.allclose(shift[shift > 1e-9], 1.0)

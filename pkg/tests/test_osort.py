import numpy as np
import pytest
from hypothesis import given, strategies as st

from oblivdp.memory import CryptoMode, EnclaveEnv, trace_fingerprint
from oblivdp.osort import (
    BucketPlan, OverflowAbort, SortKey, bitonic_sort, bitonic_sort_array, bucket_oblivious_sort, compact_reals,
    next_pow2, pow2_floor, row_key,
)
from oblivdp.relational import Schema, Table, is_filler

S = Schema([("k", "int64"), ("name", "ascii(6)"), ("v", "int64")])
KEY = SortKey(["k", "name"])


def _rows(rng, n, fill_frac=0.0):
    rows = S.empty(n)
    rows["k"] = rng.integers(-50, 50, n)
    rows["name"] = rng.choice(np.array([b"a", b"bb", b"c", b"zz"]), n)
    rows["v"] = np.arange(n)
    rows["_filler"] = rng.random(n) < fill_frac
    return rows


def _expected(rows):
    real = rows[~is_filler(rows)]
    return np.sort(row_key(real, KEY)), np.sort(real["v"])


def _check_sorted(out_rows, rows):
    assert len(out_rows) == len(rows)
    real = ~is_filler(out_rows)
    nreal = int(real.sum())
    assert real[:nreal].all() and not real[nreal:].any()
    keys, vs = _expected(rows)
    assert np.array_equal(row_key(out_rows[:nreal], KEY), keys)
    assert np.array_equal(np.sort(out_rows[:nreal]["v"]), vs)


def test_pow2_helpers():
    assert [next_pow2(x) for x in (1, 2, 3, 5, 64)] == [1, 2, 4, 8, 64]
    assert [pow2_floor(x) for x in (1, 3, 64, 100)] == [1, 2, 64, 64]


def test_small_network():
    assert bitonic_sort_array([3, 1, 2, 0]) == [0, 1, 2, 3]
    assert bitonic_sort_array([7]) == [7]
    assert bitonic_sort_array([]) == []


@given(st.lists(st.integers(-1000, 1000), max_size=70))
def test_network_sorts(xs):
    assert bitonic_sort_array(xs) == sorted(xs)


def test_int_key_order_includes_negatives():
    rows = S.rows([(-3, "a", 0), (2, "a", 0), (-(2 ** 62), "a", 0), (0, "a", 0)])
    order = np.argsort(row_key(rows, SortKey(["k"])), kind="stable")
    assert rows["k"][order].tolist() == sorted(rows["k"].tolist())


def test_prefix_key():
    rows = S.rows([(0, "abzzzz", 0), (0, "abaaaa", 1)])
    assert row_key(rows, SortKey([("name", 2)]))[0] == row_key(rows, SortKey([("name", 2)]))[1]


@given(st.lists(st.booleans(), max_size=200))
def test_compact_reals_stable(flags):
    rows = S.empty(len(flags))
    rows["v"] = np.arange(len(flags))
    rows["_filler"] = flags
    out = compact_reals(rows)
    real = [i for i, f in enumerate(flags) if not f]
    assert out["v"][:len(real)].tolist() == real
    assert is_filler(out[len(real):]).all()


@pytest.mark.parametrize("n", [1, 2, 63, 64, 65, 500, 3000])
def test_bitonic_table_sort(n):
    env = EnclaveEnv(crypto_mode=CryptoMode.PLAINTEXT, private_capacity_bytes=64 * 1024)
    rows = _rows(np.random.default_rng(n), n, 0.2)
    out = bitonic_sort(env, Table.from_rows(env, S, rows), KEY)
    _check_sorted(out.to_rows(), rows)


def _sort_digest(fn, rows, seed=0, **kw):
    env = EnclaveEnv(crypto_mode=CryptoMode.PLAINTEXT, rng_seed=seed, private_capacity_bytes=64 * 1024)
    t = Table.from_rows(env, S, rows)
    env.reset_observations()
    fn(env, t, KEY, **kw)
    return trace_fingerprint(env.trace)


def test_bitonic_trace_sorted_vs_reversed():
    rows = S.rows([(i, "a", i) for i in range(700)])
    assert _sort_digest(bitonic_sort, rows) == _sort_digest(bitonic_sort, rows[::-1].copy())


@given(st.integers(0, 2 ** 32), st.integers(0, 2 ** 32))
def test_bitonic_trace_content_free(s1, s2):
    a = _rows(np.random.default_rng(s1), 300, 0.3)
    b = _rows(np.random.default_rng(s2), 300, 0.0)
    assert _sort_digest(bitonic_sort, a) == _sort_digest(bitonic_sort, b)


@pytest.mark.parametrize("strict", [True, False])
@pytest.mark.parametrize("n", [1, 5, 256, 2000, 5000])
def test_bucket_sort_sorts(n, strict):
    env = EnclaveEnv(crypto_mode=CryptoMode.PLAINTEXT, rng_seed=n, private_capacity_bytes=256 * 1024)
    rows = _rows(np.random.default_rng(n + 1), n, 0.1)
    out = bucket_oblivious_sort(env, Table.from_rows(env, S, rows), KEY, strict=strict)
    _check_sorted(out.to_rows(), rows)


def test_bucket_sort_empty(env):
    out = bucket_oblivious_sort(env, Table(env, S), KEY)
    assert out.row_count == 0


@given(st.integers(0, 2 ** 32), st.integers(0, 2 ** 32), st.integers(0, 2 ** 16))
def test_strict_bucket_trace_content_and_tag_free(s1, s2, run_seed):
    a = _rows(np.random.default_rng(s1), 1500, 0.2)
    b = _rows(np.random.default_rng(s2), 1500, 0.0)
    da = _sort_digest(bucket_oblivious_sort, a, seed=run_seed)
    db = _sort_digest(bucket_oblivious_sort, b, seed=run_seed + 1)
    assert da == db


def test_bucket_plan():
    p = BucketPlan.for_table(5000, S, 4096)
    assert p.bucket_size == 512 and p.n_buckets == 32 and p.levels == 5
    assert p.n_buckets * p.bucket_size >= 2 * 5000
    assert p.overflow_bound() < 2.0 ** -40


def test_tiny_buckets_overflow():
    aborted = 0
    for seed in range(5):
        env = EnclaveEnv(crypto_mode=CryptoMode.PLAINTEXT, rng_seed=seed)
        rows = _rows(np.random.default_rng(seed), 4000)
        try:
            bucket_oblivious_sort(env, Table.from_rows(env, S, rows), KEY, bucket_size=4)
        except OverflowAbort:
            aborted += 1
    assert aborted == 5


def test_sort_ticks_compute(env):
    rows = _rows(np.random.default_rng(0), 600)
    bitonic_sort(env, Table.from_rows(env, S, rows), KEY)
    assert env.counters.compute_ticks > 0

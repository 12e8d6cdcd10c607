from collections import Counter

import numpy as np
import pytest

from oblivdp.baselines import SinglePassAbort, bitonic_join, naive_filter, padded_filter, single_pass_group
from oblivdp.dp import PrivacyParams
from oblivdp.memory import CryptoMode, EnclaveEnv, trace_fingerprint
from oblivdp.operators.common import col
from oblivdp.operators.group import GroupSpec, do_group_hash
from oblivdp.operators.join import do_join
from oblivdp.relational import Schema, Table, is_filler

import oracles

S = Schema([("k", "int64"), ("v", "int64")])
SPEC = GroupSpec(["k"], [("SUM", "v", "sum_v")])


def _env(seed=0):
    return EnclaveEnv(crypto_mode=CryptoMode.PLAINTEXT, rng_seed=seed)


def _table(env, rows):
    return Table.from_rows(env, S, S.rows(rows))


def test_naive_filter_correct_and_leaky():
    rows = [(i, i % 7) for i in range(500)]
    env = _env()
    out = naive_filter(env, _table(env, rows), col("v") > 4)
    assert oracles.as_tuples(out.to_rows(), ["k", "v"]) == [r for r in rows if r[1] > 4]
    digests = set()
    for thr in (4, 5):
        env = _env()
        t = _table(env, rows)
        env.reset_observations()
        naive_filter(env, t, col("v") > thr)
        digests.add(trace_fingerprint(env.trace))
    assert len(digests) == 2


def test_padded_filter_writes_n_rows():
    env = _env()
    rows = [(i, i % 3) for i in range(1000)]
    out = padded_filter(env, _table(env, rows), col("v") == 1)
    got = out.to_rows()
    assert len(got) == 1000 and int((~is_filler(got)).sum()) == sum(1 for r in rows if r[1] == 1)


def test_single_pass_group_fits():
    env = _env()
    rows = [(i % 30, 1) for i in range(300)]
    out = single_pass_group(env, _table(env, rows), SPEC, group_capacity=50)
    assert len(out.to_rows()) == 50
    assert Counter(oracles.as_tuples(out.to_rows(), ["k", "sum_v"])) == Counter({(g, 10): 1 for g in range(30)})


def test_single_pass_aborts_but_multi_pass_completes():
    rows = [(i % 900, i) for i in range(3000)]
    env = _env()
    with pytest.raises(SinglePassAbort):
        single_pass_group(env, _table(env, rows), SPEC, group_capacity=650)
    env = _env()
    res = do_group_hash(env, _table(env, rows), SPEC, PrivacyParams(1.0, 1e-3), group_capacity=650)
    want = oracles.hash_group(rows, ["k", "v"], "k", None, [("SUM", "v")])
    assert res.k > 1 and Counter(oracles.as_tuples(res.table.to_rows(), ["k", "sum_v"])) == want


@pytest.mark.parametrize("n", [0, 5, 1000])
def test_bitonic_join_matches_do_join(n):
    rng = np.random.default_rng(n)
    pk = [(i, 10 * i) for i in range(max(1, n // 4))]
    fk = [(int(rng.integers(0, max(1, n // 3))), j) for j in range(n)]
    env = _env()
    b = bitonic_join(env, _table(env, pk), _table(env, fk), "k", "k")
    env = _env()
    d = do_join(env, _table(env, pk), _table(env, fk), "k", "k", PrivacyParams(noiseless=True), s=2)
    names = b.table.schema.names
    assert Counter(oracles.as_tuples(b.table.to_rows(), names)) == Counter(oracles.as_tuples(d.table.to_rows(), names))
    assert b.table.row_count == n

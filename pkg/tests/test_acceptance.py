"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines as they
are produced; they are also repeated in the terminal summary.
"""
import math
import time
from collections import Counter

import numpy as np
import pytest

from oblivdp.baselines import SinglePassAbort, bitonic_join, single_pass_group
from oblivdp.bench import complexity as cx
from oblivdp.bench.benchmark import run_benchmark
from oblivdp.bench.config import BenchConfig
from oblivdp.bench.datagen import USERVISITS, gen_bdb
from oblivdp.bench.verify import OPERATORS, verify_do_structure
from oblivdp.distinct import (
    AesPrf, DistinctSketch, sample_estimates, sketch_size_1p1, verify_order_statistics, verify_sensitivity,
)
from oblivdp.dp import BoundMode, PrivacyParams, estimate_buffer_bound, simulate_concentration
from oblivdp.memory import CryptoMode, EnclaveEnv
from oblivdp.operators.common import col
from oblivdp.operators.filter import do_filter
from oblivdp.operators.group import GroupSpec, PartitionOverflow, do_group_hash, do_group_sort
from oblivdp.operators.join import combined_schema, do_join
from oblivdp.osort import SortKey, bucket_oblivious_sort, pow2_floor
from oblivdp.relational import Schema, Table, is_filler
from oblivdp.stats import binomial_margin

import oracles
from _shared import worst_prefix_noise

QUIET = PrivacyParams(1.0, 1e-3, noiseless=True)
NOISY = PrivacyParams(1.0, 1e-3)
S = Schema([("k", "int64"), ("v", "int64"), ("tag", "ascii(5)")])
SPEC = GroupSpec(["k"], [("SUM", "v", "sum_v"), ("COUNT", "v", "n"), ("MAX", "v", "max_v")])
SPEC_COLS = ["k", "sum_v", "n", "max_v"]
SPEC_AGGS = [("SUM", "v"), ("COUNT", "v"), ("MAX", "v")]
R = Schema([("id", "int64"), ("a", "ascii(4)")])
F = Schema([("rid", "int64"), ("x", "ascii(4)"), ("w", "int64")])
PRED = col("v") > 10


def _env(seed=0, crypto=CryptoMode.PLAINTEXT):
    return EnclaveEnv(crypto_mode=crypto, rng_seed=seed)


def _rows(rng, n, keys, fill=0.05):
    rows = S.empty(n)
    rows["k"] = rng.integers(0, max(keys, 1), n)
    rows["v"] = rng.integers(-100, 100, n)
    rows["tag"] = rng.choice(np.array([b"ab", b"cde", b"x"]), n)
    rows["_filler"] = rng.random(n) < fill
    return rows


def _join_inputs(rng, n_pk, n_fk):
    space = 2 * n_pk + 1  # about half the foreign keys dangle
    ids = rng.permutation(space)[:n_pk]
    r_rows = R.rows([(int(i), f"r{i % 97}") for i in ids])
    f_rows = F.empty(n_fk)
    f_rows["rid"] = rng.integers(0, space, n_fk)
    f_rows["x"] = b"f"
    f_rows["w"] = np.arange(n_fk)
    f_rows["_filler"] = rng.random(n_fk) < 0.05
    return r_rows, f_rows


def _group_slots(keys):
    # distinct keys stand in for the unknown estimate; both sizes pass the margin check
    return 1500 if keys <= 3000 else 4000


def _size(rng, i):
    return 10_000 if i % 100 == 0 else int(rng.integers(0, 1500))


# criterion 1 ------------------------------------------------------------------------

def _check_instance(op, rng, n):
    env = _env(int(rng.integers(2 ** 31)))
    if op == "join":
        n_pk = int(rng.integers(0, min(n, 1000) // 4 + 1))
        r_rows, f_rows = _join_inputs(rng, n_pk, n - n_pk)
        res = do_join(env, Table.from_rows(env, R, r_rows), Table.from_rows(env, F, f_rows), "id", "rid", NOISY)
        want = oracles.nested_loop_join(oracles.as_tuples(r_rows, R.names), R.names,
                                        oracles.as_tuples(f_rows, F.names), F.names, "id", "rid")
        return Counter(oracles.as_tuples(res.table.to_rows(), res.table.schema.names)) == want
    keys = int(rng.integers(1, max(n, 1) + 1))
    rows = _rows(rng, n, keys)
    table = Table.from_rows(env, S, rows)
    records = oracles.as_tuples(rows, S.names)
    if op == "filter":
        res = do_filter(env, table, PRED, NOISY, columns=["k", "v"])
        return oracles.as_tuples(res.table.to_rows(), ["k", "v"]) == \
            oracles.filter_scan(records, S.names, "v", 10, ["k", "v"])
    want = oracles.hash_group(records, S.names, "k", None, SPEC_AGGS)
    if op == "group_hash":
        res = do_group_hash(env, table, SPEC, NOISY, group_capacity=_group_slots(keys))
        return Counter(oracles.as_tuples(res.table.to_rows(), SPEC_COLS)) == want
    res = do_group_sort(env, table, SPEC, NOISY)
    got = oracles.as_tuples(res.table.to_rows(), SPEC_COLS)
    return Counter(got) == want and [g[0] for g in got] == sorted(g[0] for g in got)


def test_criterion_01_operators_match_oracles(record):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad = Counter()
    for op in OPERATORS:
        for i in range(200):
            if not _check_instance(op, rng, _size(rng, i)):
                bad[op] += 1
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 120
    record(1, ok, f"4 operators x 200 random instances vs brute-force oracles, mismatches={dict(bad)}, "
                  f"{elapsed:.0f}s (< 120s)")
    assert ok


# criterion 2 ------------------------------------------------------------------------

def test_criterion_02_noiseless_output_sizes(record):
    rng = np.random.default_rng(202)
    wrong = []
    for trial in range(25):
        n = int(rng.integers(1, 3000))
        keys = int(rng.integers(1, n + 1))
        rows = _rows(rng, n, keys)
        s = int(rng.integers(1, 200))
        env = _env(trial)
        t = Table.from_rows(env, S, rows)
        real = rows[~is_filler(rows)]
        R_count = int(((real["v"] > 10)).sum())
        G = len(np.unique(real["k"]))

        f = do_filter(env, t, PRED, QUIET, s=s)
        if f.table.row_count != R_count + s:
            wrong.append(("filter", n, f.table.row_count, R_count + s))
        gs = do_group_sort(env, t, SPEC, QUIET, s=s)
        if gs.table.row_count != G + s:
            wrong.append(("group_sort", n, gs.table.row_count, G + s))
        m = _group_slots(keys)
        gh = do_group_hash(env, t, SPEC, QUIET, group_capacity=m)
        if gh.table.row_count != gh.k * m or gh.k != max(1, math.ceil(G / (0.9 * m))):
            wrong.append(("group_hash", n, gh.table.row_count, gh.k * m))

        r_rows, f_rows = _join_inputs(rng, int(rng.integers(0, 300)), n)
        res = do_join(env, Table.from_rows(env, R, r_rows), Table.from_rows(env, F, f_rows), "id", "rid", QUIET, s=s)
        rf = f_rows[~is_filler(f_rows)]
        joined = int(np.isin(rf["rid"], r_rows["id"]).sum())
        if res.table.row_count != joined + s:
            wrong.append(("join", n, res.table.row_count, joined + s))
    ok = not wrong
    record(2, ok, f"noise-off sizes: filter R+s, group-hash k*M, group-sort G+s, join R+s over 25 inputs; "
                  f"violations={wrong[:3]}")
    assert ok


# criterion 3 ------------------------------------------------------------------------

def _bdb_join(n, seed=3):
    env = _env(seed)
    pk = gen_bdb(env, "rankings", n // 4, seed)
    fk = gen_bdb(env, "uservisits", n - n // 4, seed, n_pages=n // 4)
    env.reset_observations()
    res = do_join(env, pk, fk, "pageURL", "destURL", PrivacyParams(1.0, 2.0 ** -30), bound_mode="simulated")
    return env, pk, fk, res


def test_criterion_03_block_transfer_contracts(record):
    lines = []
    ok = True
    for n in (4096, 16384, 65536):
        env = _env(n)
        rows = gen_bdb(env, "rankings", n, 1)
        env.reset_observations()
        f = do_filter(env, rows, col("pageRank") > 1000, NOISY, columns=["pageURL", "pageRank"])
        want = cx.filter_transfers(n, rows.rows_per_block, f.output_rows, f.table.rows_per_block)
        ok &= env.counters.transfers == want
        lines.append(f"filter N={n} {env.counters.transfers}=={want}")

        uv = gen_bdb(env, "uservisits", n, 1)
        env.reset_observations()
        g = do_group_hash(env, uv, GroupSpec([("sourceIP", 8)], [("SUM", "adRevenue")]), NOISY, group_capacity=3000)
        want = cx.group_hash_transfers(n, uv.rows_per_block, g.k, g.m_groups, g.table.rows_per_block)
        ok &= env.counters.transfers == want
        lines.append(f"group_hash N={n} k={g.k} {env.counters.transfers}=={want}")

    consts = []
    for p in range(12, 17):
        n = 2 ** p
        env, pk, fk, res = _bdb_join(n)
        cs = combined_schema(pk.schema, fk.schema, "pageURL", "destURL")
        rpb = pow2_floor(cs.rows_per_block(env.block_size_bytes))
        bound = cx.join_bound(n, rpb, res.filter.matches, res.table.rows_per_block, res.s)
        c = cx.fitted_sort_constant(res.sort_transfers, n, rpb)
        consts.append(c)
        ok &= env.counters.transfers <= bound and c <= 8
        lines.append(f"join N=2^{p} {env.counters.transfers}<={bound:.0f} C={c:.2f}")

    wide = Schema([("k", "int64"), ("pad", "ascii(55)")])  # 64-byte rows
    for p in (12, 14, 16):
        n = 2 ** p
        env = _env(p)
        rows = wide.empty(n)
        rows["k"] = np.random.default_rng(p).permutation(n)
        t = Table.from_rows(env, wide, rows)
        env.reset_observations()
        out = bucket_oblivious_sort(env, t, SortKey(["k"]))
        rpb = pow2_floor(wide.rows_per_block(env.block_size_bytes))
        c = cx.fitted_sort_constant(env.counters.transfers, n, rpb)
        srt = out.to_rows()
        srt = srt[~is_filler(srt)]
        ok &= c <= 8 and np.array_equal(srt["k"], np.arange(n))
        lines.append(f"bucket sort N=2^{p} C={c:.2f}")
    record(3, bool(ok), "; ".join(lines))
    assert ok


# criterion 4 ------------------------------------------------------------------------

def test_criterion_04_prefix_noise_concentration(record):
    n, trials = 2 ** 16, 10_000
    worst = worst_prefix_noise(n, trials)
    lines, ok = [], True
    deltas = [2.0 ** -k for k in range(5, 16)]
    for d in deltas:
        bound = estimate_buffer_bound(PrivacyParams(1.0, d), n, BoundMode.ANALYTIC).raw
        freq = float(np.mean(worst > bound))
        good = freq <= d + binomial_margin(d, trials)
        ok &= good
        lines.append(f"2^{round(-math.log2(d))}:{freq:.4f}")

    fit = simulate_concentration(1.0, n, deltas)
    ok &= fit.r_squared > 0.95
    # second route: quantiles of the full-run maximum, straight from the sample
    emp = [d for d in deltas if d * trials >= 10]
    q = np.array([np.quantile(worst, 1 - d) for d in emp])
    x = np.log(1 / np.array(emp))
    pred = np.polyval(np.polyfit(x, q, 1), x)
    r2_direct = 1 - np.sum((q - pred) ** 2) / np.sum((q - q.mean()) ** 2)
    ok &= r2_direct > 0.95
    record(4, bool(ok), f"N=2^16, {trials} runs: P[max_c |noise| > analytic s] per delta {' '.join(lines)}; "
                        f"simulated-quantile fit R^2={fit.r_squared:.4f}, full-run maximum fit R^2={r2_direct:.4f}")
    assert ok


# criterion 5 ------------------------------------------------------------------------

def test_criterion_05_distinct_estimate_within_ten_percent(record):
    eps, delta = 1.0, 1e-3
    t = sketch_size_1p1(eps, delta)
    rng = np.random.default_rng(505)
    trials = 10_000
    lines, ok = [], True
    for mult in (10, 50):
        n = mult * t
        g = sample_estimates(n, t, eps, 0.1, delta, trials, rng)
        fail = float(np.mean((g < n) | (g > 1.1 * n)))
        good = fail <= delta + binomial_margin(delta, trials)
        ok &= good
        lines.append(f"n={mult}t fail={fail:.4f}")

    # route two: real PRF sketches over n = 10t distinct keys
    n = 10 * t
    items = np.arange(n, dtype=">u8").view("S8")
    runs, fails = 12, 0
    for r in range(runs):
        sk = DistinctSketch(t, AesPrf(rng.bytes(16)))
        sk.update_many(items)
        est = sk.estimate(eps, 0.1, delta, unit_noise=float(rng.laplace()))
        fails += not (n <= est.g_tilde <= 1.1 * n)
    ok &= fails / runs <= delta + binomial_margin(delta, runs)
    record(5, bool(ok), f"t={t}, Beta-law sketches x{trials}: {', '.join(lines)} (limit {delta} + 3 sigma); "
                        f"AES sketches at n=10t: {fails}/{runs} outside [n, 1.1n]")
    assert ok


# criterion 6 ------------------------------------------------------------------------

def test_criterion_06_order_statistic_claims(record):
    checks = verify_order_statistics(10_000, 100, 10_000, delta=0.1, alpha=20, eta=0.25, delta_approx=0.4)
    checks.append(verify_sensitivity(10_000, 200, 10_000, delta=0.05))
    ok = all(c.passed for c in checks)
    record(6, ok, " | ".join(str(c) for c in checks))
    assert ok


# criterion 7 ------------------------------------------------------------------------

def test_criterion_07_trace_structure(record):
    reports = [verify_do_structure(op, trials=100, params=NOISY) for op in OPERATORS]
    ok = all(r.passed for r in reports)
    record(7, ok, " | ".join(str(r) for r in reports))
    assert ok


# criterion 8 ------------------------------------------------------------------------

def test_criterion_08_failure_frequencies(record):
    runs = 10_000
    margin = binomial_margin(1e-3, runs)
    rng = np.random.default_rng(808)
    n = 4096
    failed = 0
    for i in range(runs):
        env = _env(i)
        rows = _rows(rng, n, 500, fill=0.0)
        res = do_filter(env, Table.from_rows(env, S, rows), PRED, NOISY, bound_mode="simulated")
        failed += res.log.failed
    f_freq = failed / runs

    # 2000 groups over 4000 rows; 1000 slots give k = 3 passes with room in the margin check
    g_rows = S.empty(4000)
    g_rows["k"] = np.concatenate([np.arange(2000), rng.integers(0, 2000, 2000)])
    g_rows["v"] = rng.integers(0, 100, 4000)
    overflow, passes = 0, Counter()
    for i in range(runs):
        env = _env(i)
        try:
            res = do_group_hash(env, Table.from_rows(env, S, g_rows), SPEC, NOISY, group_capacity=1000)
            passes[res.k] += 1
        except PartitionOverflow:
            overflow += 1
    g_freq = overflow / runs
    ok = f_freq <= 1e-3 + margin and g_freq <= 1e-3 + margin
    record(8, ok, f"{runs} runs at delta=1e-3: DoFilter failure freq {f_freq:.4f}, "
                  f"DoGroup_h (G=2000, M=1000, k={dict(passes)}) overflow freq {g_freq:.4f} "
                  f"(limit {1e-3 + margin:.4f})")
    assert ok


# criterion 9 ------------------------------------------------------------------------

def test_criterion_09_multi_pass_grouping(record):
    env = _env(9)
    uv = gen_bdb(env, "uservisits", 20_000, 9, groups=6000)
    spec = GroupSpec([("sourceIP", 8)], [("SUM", "adRevenue")])
    aborted = False
    try:
        single_pass_group(env, uv, spec, group_capacity=4000)
    except SinglePassAbort:
        aborted = True
    res = do_group_hash(env, uv, spec, PrivacyParams(), group_capacity=4000)
    rows = uv.to_rows()
    want = oracles.hash_group(oracles.as_tuples(rows, USERVISITS.names), USERVISITS.names,
                              "sourceIP", 8, [("SUM", "adRevenue")])
    got = Counter(oracles.as_tuples(res.table.to_rows(), ["sourceIP", "sum_adRevenue"]))
    ok = aborted and res.k >= 2 and got == want
    record(9, ok, f"6000 groups, 4000 slots: single pass aborted={aborted}; multi-pass k={res.k}, "
                  f"{len(want)} groups equal to oracle={got == want}")
    assert ok


# criterion 10 -----------------------------------------------------------------------

def test_criterion_10_cost_shape(record):
    r = run_benchmark(BenchConfig(operator="filter", preset="large", crypto="aead"))
    sh = r.breakdown.shares
    movement = sh["decrypt"] + sh["encrypt"] + sh["copy_in"] + sh["copy_out"]
    env, pk, fk, res = _bdb_join(8192, seed=10)
    ours = env.counters.transfers
    env.reset_observations()
    base = bitonic_join(env, pk, fk, "pageURL", "destURL").transfers
    ok = movement > sh["compute"] and ours < base
    record(10, ok, f"large filter (AEAD): data movement {movement:.3f} vs compute {sh['compute']:.3f}; "
                   f"join N=8192 transfers {ours} vs bitonic baseline {base}")
    assert ok

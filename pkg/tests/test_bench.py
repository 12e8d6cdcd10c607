import math

import numpy as np
import pytest

from oblivdp.bench import complexity as cx
from oblivdp.bench.benchmark import BreakdownReport, run_benchmark, to_csv
from oblivdp.bench.config import BenchConfig, ConfigError, eval_number, load_config, parse_config
from oblivdp.bench.datagen import default_groups, distinct_prefixes, gen_bdb, gen_rows, ip_prefixes
from oblivdp.bench.verify import binomial_threshold, verify_binomial_tail, verify_do_structure
from oblivdp.dp import PrivacyParams
from oblivdp.memory import CostCounters, CryptoMode, EnclaveEnv
from oblivdp.relational import RANKINGS, USERVISITS


# datagen

def test_gen_empty_and_deterministic():
    _, rows = gen_rows("uservisits", 0, 1)
    assert len(rows) == 0
    a = gen_rows("rankings", 500, 3)[1]
    b = gen_rows("rankings", 500, 3)[1]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gen_rows("rankings", 500, 4)[1])


def test_gen_schemas():
    s, rows = gen_rows("rankings", 10, 0)
    assert s == RANKINGS and rows.dtype == RANKINGS.dtype
    s, rows = gen_rows("uservisits", 10, 0)
    assert s == USERVISITS
    with pytest.raises(ValueError):
        gen_rows("orders", 10, 0)


def test_group_target_is_met():
    _, rows = gen_rows("uservisits", 5000, 0, groups=3000)
    assert distinct_prefixes(rows) == 3000


def test_default_groups_sublinear():
    assert default_groups(1) == 1
    assert default_groups(10_000) == round(2 * 10_000 ** 0.75)
    assert default_groups(10 ** 6) / 10 ** 6 < default_groups(10 ** 4) / 10 ** 4


def test_ip_prefix_format():
    assert ip_prefixes(np.array([0, 1234, 999_999])).tolist() == [b"000.000.", b"001.234.", b"999.999."]


def test_rankings_selectivity_plausible():
    _, rows = gen_rows("rankings", 20_000, 0)
    frac = float(np.mean(rows["pageRank"] > 1000))
    assert 0.2 < frac < 0.5


def test_gen_bdb_table(env):
    t = gen_bdb(env, "uservisits", 300, 0)
    assert t.row_count == 300 and len(env.trace) == 0


# config

def test_parse_config_values():
    cfg = parse_config("""
        # comment
        operator = group
        rows = 2000
        delta = 2**-20
        epsilon = 0.5
        noiseless = yes
        delta_list = 2^-5, 2^-6
        groups = none
    """)
    assert cfg.operator == "group" and cfg.rows == 2000 and cfg.delta == 2.0 ** -20
    assert cfg.noiseless is True and cfg.delta_list == [2 ** -5, 2 ** -6] and cfg.groups is None


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("colour = blue")
    with pytest.raises(ConfigError):
        parse_config("just words")
    with pytest.raises(ConfigError):
        BenchConfig(operator="sort").validate()
    with pytest.raises(ConfigError):
        BenchConfig(preset="huge").n_rows
    with pytest.raises(ConfigError):
        load_config(None, {"bogus": 1})


def test_presets_and_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("preset = medium\nscale = 0.5\n")
    cfg = load_config(p, {"seed": 9, "rows": None})
    assert cfg.n_rows == 50_000 and cfg.seed == 9
    assert BenchConfig(preset="large").n_rows == 10 ** 6


def test_eval_number():
    assert eval_number("2**-30") == 2.0 ** -30
    assert eval_number("1e-3") == 1e-3
    assert eval_number("12") == 12 and isinstance(eval_number("12"), int)


# complexity and breakdown

def test_filter_transfer_formula():
    assert cx.filter_transfers(1024, 64, 100, 64) == 16 + 2
    assert cx.filter_transfers(0, 64, 3, 64) == 1


def test_group_hash_formula():
    assert cx.group_hash_transfers(1000, 100, 3, 50, 40) == 4 * 10 + math.ceil(150 / 40)


def test_report_pass_fail():
    assert cx.assert_complexity("x", 10, 10, exact=True).passed
    assert not cx.assert_complexity("x", 11, 10, exact=True).passed
    assert cx.assert_complexity("x", 9, 10).passed
    assert str(cx.assert_complexity("x", 11, 10)).startswith("FAIL")


def test_breakdown_shares_sum_to_one():
    c = CostCounters(bytes_encrypted=4096, bytes_decrypted=8192, bytes_copied_in=8192, bytes_copied_out=4096,
                     compute_ticks=1000)
    bd = BreakdownReport.from_counters(c)
    assert sum(bd.shares.values()) == pytest.approx(1.0)
    assert BreakdownReport.from_counters(CostCounters()).total == 0


def test_to_csv_union_of_columns():
    assert to_csv([{"a": 1}, {"b": 2}]) == "a,b\n1,\n,2\n"


# benchmark runs (plaintext, small)

@pytest.mark.parametrize("operator,impl", [("filter", "hash"), ("group", "hash"), ("group", "sort"), ("join", "hash")])
def test_benchmark_runs(operator, impl):
    cfg = BenchConfig(operator=operator, group_impl=impl, rows=4000, crypto="plaintext", delta=1e-3,
                      group_slots=800 if impl == "hash" else None, groups=300)
    res = run_benchmark(cfg)
    assert res.passed, [str(c) for c in res.checks]
    assert res.row["transfers"] == res.row["blocks_read"] + res.row["blocks_written"]
    assert res.row["real_rows"] <= res.row["output_rows"]


def test_benchmark_rejects_tiny_input():
    with pytest.raises(ConfigError):
        run_benchmark(BenchConfig(operator="filter", rows=100, crypto="plaintext", bound_mode="analytic"))


def test_benchmark_aead_counts_crypto():
    res = run_benchmark(BenchConfig(operator="filter", rows=3000, crypto="aead", delta=1e-3))
    assert res.row["bytes_encrypted"] > 0 and res.breakdown.data_movement_share > 0.5


# verify harness

@pytest.mark.parametrize("op", ["filter", "group_hash", "group_sort", "join"])
def test_structure_smoke(op):
    rep = verify_do_structure(op, trials=4, n=300, params=PrivacyParams(1.0, 1e-3))
    assert rep.passed, str(rep)
    assert rep.neighbor_pairs == 4


def test_binomial_threshold_value():
    assert binomial_threshold(1000, 0.5, 0.01) == pytest.approx(500 + math.sqrt(500 * math.log(100)))
    assert binomial_threshold(1000, 0.5, 0.01) == pytest.approx(547.99, abs=0.01)


def test_binomial_degenerate_cases():
    assert verify_binomial_tail(100, 0.0, 0.01, 1000).empirical == 0.0
    assert binomial_threshold(1000, 0.5, 1.0) == 500
    r = verify_binomial_tail(1000, 0.5, 1.0, 10_000)
    assert r.passed and 0.45 < r.empirical < 0.56


def test_binomial_tail_million_trials():
    r = verify_binomial_tail(1000, 0.5, 0.01, 1_000_000, seed=1)
    assert r.passed, str(r)

"""Trace-structure verification and the binomial tail check.

``replay_*`` rebuild an operator's trace from its public outputs with the
data-free simulators.  :func:`verify_do_structure` runs seeded trials that

* compare each real trace with its replay,
* run neighbouring inputs under coupled noise (so the released noisy
  quantities coincide) and compare digests, and
* for the filter, run the naive non-oblivious filter on the same neighbours
  as a negative control.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import tracesim
from ..baselines import naive_filter
from ..distinct import AesPrf, DistinctSketch, sketch_size_1p1
from ..dp import PrivacyParams
from ..memory import CryptoMode, EnclaveEnv, trace_fingerprint
from ..operators.common import Predicate, col
from ..operators.filter import FilterResult, do_filter
from ..operators.group import GroupHashResult, GroupSortResult, GroupSpec, do_group_hash, do_group_sort, group_boundaries
from ..operators.join import JoinResult, combined_schema, do_join
from ..prefix_sum import coupled_tape, draw_tape
from ..relational import Schema, Table, is_filler
from ..stats import CheckResult, binomial_margin

OPERATORS = ("filter", "group_hash", "group_sort", "join")

TEST_SCHEMA = Schema([("k", "int64"), ("v", "int64")])
TEST_PRED = col("v") > 50
TEST_SPEC = GroupSpec(["k"], [("SUM", "v", "sum_v"), ("COUNT", "v", "n")])


# replay -------------------------------------------------------------------------

def _shape(stats) -> tracesim.SortShape | None:
    return tracesim.SortShape(stats.plan, stats.capacity_rows) if stats is not None else None


def replay_filter(first_region: int, table: Table, res: FilterResult):
    return tracesim.simulate_filter(first_region, table.region, table.row_count, table.rows_per_block,
                                    res.table.rows_per_block, res.s, res.y_tilde)


def replay_group_hash(first_region: int, table: Table, res: GroupHashResult, batch_rows: int | None = None):
    return tracesim.simulate_group_hash(first_region, table.region, table.row_count, table.rows_per_block,
                                        res.table.rows_per_block, batch_rows or table.rows_per_block * 16,
                                        res.k, res.m_groups)


def replay_group_sort(first_region: int, table: Table, res: GroupSortResult):
    return tracesim.simulate_group_sort(first_region, table.region, table.row_count, table.rows_per_block,
                                        res.table.rows_per_block, _shape(res.sort_stats), res.s, res.log.y_tilde)


def replay_join(first_region: int, pk: Table, fk: Table, pk_col: str, fk_col: str, res: JoinResult):
    crpb = combined_schema(pk.schema, fk.schema, pk_col, fk_col).rows_per_block(pk.env.block_size_bytes)
    return tracesim.simulate_join(first_region, pk.region, pk.row_count, pk.rows_per_block,
                                  fk.region, fk.row_count, fk.rows_per_block, crpb, res.table.rows_per_block,
                                  _shape(res.sort_stats), res.s, res.filter.y_tilde)


# indicator streams ----------------------------------------------------------------

def filter_bits(rows: np.ndarray, pred: Predicate) -> np.ndarray:
    return (pred(rows) & ~is_filler(rows)).astype(np.int64)


def group_sort_bits(sorted_rows: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Boundary indicators over the sorted input plus the terminal bit."""
    real = ~is_filler(sorted_rows)
    bits, _ = group_boundaries(spec.key_bytes(sorted_rows), real, None)
    return np.concatenate([bits, [1 if real.any() else 0]])


def join_bits(scan_rows: np.ndarray) -> np.ndarray:
    return (~is_filler(scan_rows)).astype(np.int64)


# harness ---------------------------------------------------------------------------

@dataclass
class StructureReport:
    operator: str
    trials: int = 0
    replay_matches: int = 0
    neighbor_pairs: int = 0        # pairs whose released noisy quantities coincide
    neighbor_equal: int = 0        # ... and whose digests are equal
    same_tape_equal: int = 0       # neighbours under the same (uncoupled) tape with equal digests
    control_pairs: int = 0
    control_differ: int = 0        # naive-filter neighbours with different digests
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        ok = self.replay_matches == self.trials and self.neighbor_equal == self.neighbor_pairs
        if self.control_pairs:
            ok = ok and self.control_differ == self.control_pairs
        return ok

    def __str__(self) -> str:
        s = (f"{'PASS' if self.passed else 'FAIL'} {self.operator}: replay {self.replay_matches}/{self.trials}, "
             f"coupled neighbours equal {self.neighbor_equal}/{self.neighbor_pairs}, "
             f"same-tape neighbours equal {self.same_tape_equal}/{self.trials}")
        if self.control_pairs:
            s += f", naive control differs {self.control_differ}/{self.control_pairs}"
        return s


def _env(seed: int) -> EnclaveEnv:
    return EnclaveEnv(crypto_mode=CryptoMode.PLAINTEXT, rng_seed=seed)


def _random_rows(rng: np.random.Generator, n: int, keys: int) -> np.ndarray:
    rows = TEST_SCHEMA.empty(n)
    rows["k"] = rng.integers(0, keys, n)
    rows["v"] = rng.integers(0, 100, n)
    return rows


def _neighbor_rows(rng: np.random.Generator, rows: np.ndarray, keys: int) -> np.ndarray:
    """Change one record: to a filler, or to a fresh random record."""
    i = int(rng.integers(len(rows)))
    out = rows.copy()
    if rng.random() < 0.5:
        out[i] = TEST_SCHEMA.filler()
    else:
        out[i] = _random_rows(rng, 1, keys)[0]
    return out


def _run(seed: int, op: str, rows: np.ndarray, params: PrivacyParams, extra: dict):
    """Run ``op`` in a fresh env; returns (digest, replay digest, result)."""
    env = _env(seed)
    table = Table.from_rows(env, TEST_SCHEMA, rows)
    pk = None
    if op == "join":
        pk = Table.from_rows(env, TEST_SCHEMA, extra["pk_rows"])
    env.reset_observations()
    first = env.n_regions
    if op == "filter":
        res = do_filter(env, table, TEST_PRED, params, tape=extra.get("tape"))
        sim = replay_filter(first, table, res)
    elif op == "group_hash":
        res = do_group_hash(env, table, TEST_SPEC, params, group_capacity=extra["m_groups"],
                            unit_noise=extra.get("unit_noise"), prf_key=extra["prf_key"])
        sim = replay_group_hash(first, table, res)
    elif op == "group_sort":
        res = do_group_sort(env, table, TEST_SPEC, params, tape=extra.get("tape"))
        sim = replay_group_sort(first, table, res)
    elif op == "join":
        res = do_join(env, pk, table, "k", "k", params, tape=extra.get("tape"))
        sim = replay_join(first, pk, table, "k", "k", res)
    else:
        raise ValueError(f"unknown operator {op!r}")
    return trace_fingerprint(env.trace), trace_fingerprint(sim), res


def _bits(op: str, res, rows: np.ndarray) -> np.ndarray:
    if op == "filter":
        return filter_bits(rows, TEST_PRED)
    if op == "group_sort":
        return group_sort_bits(res.sorted_table.to_rows(), TEST_SPEC)
    return join_bits(res.scan_table.to_rows())


def _released(op: str, res) -> tuple:
    if op == "group_hash":
        return (res.k, res.m_groups)
    log = res.filter.log if op == "join" else res.log
    return (res.s, tuple(int(round(y)) for y in log.y_tilde))


def _unit_noise_for(rows: np.ndarray, g_target: float, params: PrivacyParams, prf_key: bytes) -> float:
    """Lap(1) draw that makes the neighbour's distinct estimate equal ``g_target``."""
    t = sketch_size_1p1(params.epsilon, params.delta / 2)
    sk = DistinctSketch(t, AesPrf(prf_key))
    sk.update_many(TEST_SPEC.key_bytes(rows[~is_filler(rows)]))
    base = sk.estimate(params.epsilon, 0.1, params.delta / 2, unit_noise=0.0, strict=False)
    return (g_target - base.g_tilde) / base.noise_scale if base.noise_scale else 0.0


def verify_do_structure(operator: str, trials: int = 100, n: int = 600, seed: int = 0,
                        params: PrivacyParams | None = None, keys: int = 40) -> StructureReport:
    """Replay, coupled-neighbour and (filter only) negative-control checks over ``trials`` seeds."""
    params = params or PrivacyParams()
    rep = StructureReport(operator)
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        rows = _random_rows(rng, n, keys)
        nrows = _neighbor_rows(rng, rows, keys)
        extra: dict = {}
        if operator == "join":
            extra["pk_rows"] = TEST_SCHEMA.rows([(i, i) for i in range(_pk_count(keys))])
        if operator == "group_hash":
            extra["prf_key"] = rng.bytes(16)
            extra["m_groups"] = 4 * keys + 200
            extra["unit_noise"] = float(rng.laplace())
        else:
            extra["tape"] = draw_tape(rng, params, _horizon(operator, n, keys))
        run_seed = int(rng.integers(2**31))

        d, sim_d, res = _run(run_seed, operator, rows, params, extra)
        rep.trials += 1
        rep.replay_matches += d == sim_d

        # same tape, no coupling
        nd, _, nres = _run(run_seed, operator, nrows, params, extra)
        rep.same_tape_equal += nd == d

        # coupled: make the neighbour release the same noisy quantities
        nextra = dict(extra)
        if operator == "group_hash":
            nextra["unit_noise"] = _unit_noise_for(nrows, res.g_tilde, params, extra["prf_key"])
        else:
            nextra["tape"] = coupled_tape(extra["tape"], _bits(operator, res, rows),
                                          _bits(operator, nres, nrows), _horizon(operator, n, keys))
        cd, csim, cres = _run(run_seed, operator, nrows, params, nextra)
        if _released(operator, cres) == _released(operator, res):
            rep.neighbor_pairs += 1
            rep.neighbor_equal += cd == d
        else:
            rep.notes.append(f"trial {trial}: coupling did not equalise released values")

        if operator == "filter":
            # the control neighbour flips one row's match status
            rep.control_pairs += 1
            flipped = _flip_match(rows, int(rng.integers(n)))
            rep.control_differ += _naive_digest(run_seed, rows) != _naive_digest(run_seed, flipped)
    return rep


def _horizon(operator: str, n: int, keys: int) -> int:
    if operator == "group_sort":
        return n + 1
    if operator == "join":
        return n + _pk_count(keys)
    return max(n, 1)


def _pk_count(keys: int) -> int:
    return max(1, keys - 5)  # a few foreign keys dangle


def _naive_digest(seed: int, rows: np.ndarray) -> str:
    env = _env(seed)
    table = Table.from_rows(env, TEST_SCHEMA, rows)
    env.reset_observations()
    naive_filter(env, table, TEST_PRED)
    return trace_fingerprint(env.trace)


def _flip_match(rows: np.ndarray, i: int) -> np.ndarray:
    out = rows.copy()
    hit = bool(filter_bits(rows[i:i + 1], TEST_PRED)[0])
    out["v"][i] = 0 if hit else 99
    out["_filler"][i] = 0
    return out


# binomial tails -------------------------------------------------------------------------

def binomial_threshold(n: int, p: float, delta: float) -> float:
    """``n p + sqrt(0.5 n ln(1/delta))``."""
    return n * p + math.sqrt(0.5 * n * math.log(1.0 / delta))


def verify_binomial_tail(n: int, p: float, delta: float, trials: int, seed: int = 0) -> CheckResult:
    """Monte Carlo frequency of X >= threshold for X ~ Bin(n, p), against delta."""
    rng = np.random.default_rng(seed)
    thr = binomial_threshold(n, p, delta)
    x = rng.binomial(n, p, trials)
    hits = int((x >= thr).sum())
    emp = hits / trials
    m = binomial_margin(min(delta, 1.0), trials)
    return CheckResult(f"binomial tail n={n} p={p} delta={delta}", delta, emp, m, emp <= delta + m, "<=")

"""Differentially oblivious grouping with aggregation: hash-partitioned and sort-based."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..distinct import AesPrf, DistinctEstimate, DistinctSketch, sketch_size_1p1, to_unit
from ..dp import BoundMode, PrivacyParams, laplace_sample
from ..memory import EnclaveEnv, PrivateMemoryError
from ..osort import BucketSortStats, SortKey, as_bytes_key, bucket_oblivious_sort
from ..prefix_sum import PrefixSumOracle, draw_tape
from ..relational import FILLER_FIELD, Schema, Table, TableWriter, is_filler, table_scan_batched
from .common import PacedOutput, PacingLog
from .filter import resolve_s

AGG_FUNCS = ("SUM", "COUNT", "MIN", "MAX")
SLOT_OVERHEAD = 16   # bytes of bookkeeping per hash-table slot
LOAD_FACTOR = 0.7


class InfeasibleMemory(RuntimeError):
    """Private memory cannot hold enough groups for the partitioning to succeed whp."""


class PartitionOverflow(RuntimeError):
    """One partition held more groups than the private hash table can take."""

    def __init__(self, pass_index: int, groups: int, capacity: int):
        super().__init__(f"pass {pass_index}: {groups} groups exceed capacity {capacity}")
        self.pass_index = pass_index
        self.groups = groups
        self.capacity = capacity


class GroupSpec:
    """Grouping columns (optionally ascii prefixes) and aggregations.

    >>> spec = GroupSpec([("sourceIP", 8)], [("SUM", "adRevenue")])
    """

    def __init__(self, keys: Sequence[str | tuple[str, int]],
                 aggregations: Sequence[tuple[str, str] | tuple[str, str, str]]):
        self.key = SortKey(keys)
        self.aggs = []
        for agg in aggregations:
            func, column = agg[0].upper(), agg[1]
            if func not in AGG_FUNCS:
                raise ValueError(f"unknown aggregate {func}")
            name = agg[2] if len(agg) > 2 else f"{func.lower()}_{column}"
            self.aggs.append((func, column, name))

    def output_schema(self, schema: Schema) -> Schema:
        cols = []
        for name, prefix in self.key.columns:
            t = schema.column_type(name)
            cols.append((name, t if t == "int64" or prefix is None else f"ascii({prefix})"))
        for func, column, name in self.aggs:
            if func != "COUNT" and schema.column_type(column) != "int64":
                raise ValueError(f"{func} needs an int64 column, {column} is not")
            cols.append((name, "int64"))
        return Schema(cols)

    def key_bytes(self, rows: np.ndarray) -> np.ndarray:
        return as_bytes_key(self.key.encode(rows))

    def partial(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        """Aggregate a batch: (unique key bytes, first index of each, per-aggregate partials)."""
        kb = self.key_bytes(rows)
        uniq, first, inv = np.unique(kb, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")  # keep first-seen order
        remap = np.empty_like(order)
        remap[order] = np.arange(len(order))
        inv = remap[inv]
        parts = []
        for func, column, _ in self.aggs:
            g = len(uniq)
            if func == "COUNT":
                acc = np.bincount(inv, minlength=g).astype(np.int64)
            elif func == "SUM":
                acc = np.zeros(g, np.int64)
                np.add.at(acc, inv, rows[column])
            elif func == "MIN":
                acc = np.full(g, np.iinfo(np.int64).max)
                np.minimum.at(acc, inv, rows[column])
            else:
                acc = np.full(g, np.iinfo(np.int64).min)
                np.maximum.at(acc, inv, rows[column])
            parts.append(acc)
        return uniq[order], first[order], parts

    def row_values(self, rows: np.ndarray) -> np.ndarray:
        """Each row's own contribution to every aggregate, shape (n, n_aggs)."""
        cols = [np.ones(len(rows), np.int64) if f == "COUNT" else rows[c].astype(np.int64)
                for f, c, _ in self.aggs]
        return np.stack(cols, axis=1) if cols else np.zeros((len(rows), 0), np.int64)

    def combine(self, a: list[int], b: list[int]) -> list[int]:
        out = []
        for (func, _, _), x, y in zip(self.aggs, a, b):
            out.append(x + y if func in ("SUM", "COUNT") else (min(x, y) if func == "MIN" else max(x, y)))
        return out


def _key_fields(spec: GroupSpec, schema: Schema, out_schema: Schema, rows: np.ndarray) -> np.ndarray:
    """Output rows carrying only the (possibly truncated) key columns of ``rows``."""
    out = np.zeros(len(rows), dtype=out_schema.dtype)
    for name, prefix in spec.key.columns:
        col = rows[name]
        if prefix is not None and col.dtype.kind == "S":
            m = np.frombuffer(np.ascontiguousarray(col).tobytes(), np.uint8).reshape(len(rows), -1)
            out[name] = as_bytes_key(m[:, :prefix]) if len(rows) else out[name]
        else:
            out[name] = col
    return out


class _GroupTable:
    """Private hash table of groups: key bytes -> (representative row, aggregates)."""

    def __init__(self, spec: GroupSpec, schema: Schema, out_schema: Schema):
        self.spec = spec
        self.schema = schema
        self.out_schema = out_schema
        self.groups: dict[bytes, list] = {}
        self.reps: dict[bytes, np.void] = {}

    def __len__(self) -> int:
        return len(self.groups)

    def add(self, rows: np.ndarray) -> None:
        if not len(rows):
            return
        keys, first, parts = self.spec.partial(rows)
        for i, k in enumerate(keys.tolist()):
            vals = [int(p[i]) for p in parts]
            if k in self.groups:
                self.groups[k] = self.spec.combine(self.groups[k], vals)
            else:
                self.groups[k] = vals
                self.reps[k] = rows[first[i]]

    def rows(self) -> np.ndarray:
        if not self.groups:
            return self.out_schema.empty()
        reps = np.array(list(self.reps.values()), dtype=self.schema.dtype)
        out = _key_fields(self.spec, self.schema, self.out_schema, reps)
        vals = np.array(list(self.groups.values()), dtype=np.int64).reshape(len(self.groups), -1)
        for j, (_, _, name) in enumerate(self.spec.aggs):
            out[name] = vals[:, j]
        return out


# hash-based grouping -------------------------------------------------------------

@dataclass
class GroupHashResult:
    table: Table
    estimate: DistinctEstimate
    k: int
    m_groups: int
    sketch_t: int
    pass_groups: list[int]

    @property
    def g_tilde(self) -> float:
        return self.estimate.g_tilde


def default_group_capacity(env: EnclaveEnv, out_schema: Schema, reserved: int = 0) -> int:
    slot = out_schema.row_width_bytes + SLOT_OVERHEAD
    return int(LOAD_FACTOR * max(0, env.private_free - reserved) // slot)


def plan_passes(g_tilde: float, m_groups: int, delta: float) -> int:
    """Number of partitions k, after checking the partition-overflow margin."""
    g = max(0.0, g_tilde)
    k = max(1, math.ceil(g / (0.9 * m_groups)))
    if math.sqrt(0.5 * g * math.log(2 * k / delta)) > 0.1 * m_groups:
        raise InfeasibleMemory(f"{m_groups} group slots are too few for an estimated {g:.0f} groups")
    return k


def do_group_hash(env: EnclaveEnv, table: Table, spec: GroupSpec, params: PrivacyParams,
                  group_capacity: int | None = None, unit_noise: float | None = None,
                  prf_key: bytes | None = None, sketch_t: int | None = None,
                  batch_rows: int | None = None, label: str = "group") -> GroupHashResult:
    """Group and aggregate with ``k`` PRF-partitioned passes.

    A DP distinct count (eta = 0.1, delta / 2) fixes the number of passes; each
    pass aggregates one partition in a private hash table and writes exactly
    ``m_groups`` rows.  ``unit_noise`` pins the Lap(1) draw behind the estimate.
    """
    schema = table.schema
    out_schema = spec.output_schema(schema)
    prf = AesPrf(prf_key if prf_key is not None else env.rng("prf").bytes(16))
    t = sketch_t or sketch_size_1p1(params.epsilon, params.delta / 2)
    batch = batch_rows or table.rows_per_block * 16
    try:
        sketch_mem = env.reserve(8 * t, f"{label} sketch")
    except PrivateMemoryError as exc:
        raise InfeasibleMemory(f"sketch of {t} hashes does not fit in private memory") from exc
    sketch = DistinctSketch(t, prf)
    for rows in table_scan_batched(env, table, batch, label=f"{label} sketch scan"):
        real = rows[~is_filler(rows)]
        sketch.update_many(spec.key_bytes(real))
        env.tick(len(rows))
    if unit_noise is None and not params.noiseless:
        unit_noise = float(laplace_sample(env.rng("noise"), 1.0))
    est = sketch.estimate(params.epsilon, 0.1, params.delta / 2, unit_noise=unit_noise,
                          strict=False, noiseless=params.noiseless)
    sketch_mem.release()

    io_bytes = (batch + table.rows_per_block) * schema.row_width_bytes + env.block_size_bytes
    m_groups = group_capacity or default_group_capacity(env, out_schema, io_bytes)
    if m_groups < 1:
        raise InfeasibleMemory("no room for a group hash table")
    k = plan_passes(est.g_tilde, m_groups, params.delta)

    out = Table(env, out_schema, label=f"{label} out")
    pass_groups = []
    try:
        hmem = env.reserve(m_groups * (out_schema.row_width_bytes + SLOT_OVERHEAD), f"{label} hash table")
    except PrivateMemoryError as exc:
        raise InfeasibleMemory(str(exc)) from exc
    with hmem, TableWriter(out, f"{label} writer") as writer:
        for i in range(k):
            groups = _GroupTable(spec, schema, out_schema)
            for rows in table_scan_batched(env, table, batch, label=f"{label} pass"):
                real = rows[~is_filler(rows)]
                part = np.minimum((to_unit(prf.hash_ints(spec.key_bytes(real))) * k).astype(np.int64), k - 1)
                groups.add(real[part == i])
                env.tick(len(rows))
                if len(groups) > m_groups:
                    raise PartitionOverflow(i, len(groups), m_groups)
            got = groups.rows()
            pass_groups.append(len(got))
            writer.append(got)
            writer.append(out_schema.fillers(m_groups - len(got)))
    return GroupHashResult(out, est, k, m_groups, t, pass_groups)


# sort-based grouping ---------------------------------------------------------------

@dataclass
class GroupSortResult:
    table: Table
    sorted_table: Table
    s: int
    log: PacingLog
    tape: np.ndarray
    sort_stats: BucketSortStats | None = None


def group_boundaries(kb: np.ndarray, real: np.ndarray, prev_key: bytes | None) -> tuple[np.ndarray, bytes | None]:
    """Indicator of rows whose arrival closes the current group (a real row with a new key)."""
    bits = np.zeros(len(kb), np.int64)
    last = prev_key
    for i in np.flatnonzero(real):
        k = kb[i]
        if last is not None and k != last:
            bits[i] = 1
        last = k
    return bits, last


def do_group_sort(env: EnclaveEnv, table: Table, spec: GroupSpec, params: PrivacyParams,
                  mode: str = "standard", s: int | None = None,
                  bound_mode: BoundMode | str = BoundMode.ANALYTIC, tape: np.ndarray | None = None,
                  label: str = "group-sort") -> GroupSortResult:
    """Group by obliviously sorting on the key, then one DP-paced scan.

    The scan keeps a working group and pushes it to the FIFO when a new key
    arrives; the prefix-sum oracle counts those boundaries (plus one terminal
    bit for the last group, so its horizon is N + 1).
    """
    if mode not in ("standard", "oblivious"):
        raise ValueError(f"unknown mode {mode!r}")
    schema = table.schema
    out_schema = spec.output_schema(schema)
    sort_stats: list = []
    sorted_t = bucket_oblivious_sort(env, table, spec.key, label=f"{label} sort", stats=sort_stats)
    N = table.row_count
    horizon = N + 1
    s = resolve_s(params, horizon, table.rows_per_block, s, bound_mode)
    if tape is None:
        tape = draw_tape(env.rng("noise"), params, horizon)
    oracle = PrefixSumOracle(horizon, params, tape=tape)
    out = Table(env, out_schema, label=f"{label} out")
    paced = PacedOutput(env, out, s, oracle, oblivious=(mode == "oblivious"))

    cur_key = None
    cur_rep = None
    cur_vals = None
    with env.reserve(out_schema.row_width_bytes, f"{label} working tuple"):
        for rows in table_scan_batched(env, sorted_t, s, label=f"{label} batch"):
            real = ~is_filler(rows)
            kb = spec.key_bytes(rows)
            bits, _ = group_boundaries(kb, real, cur_key)
            contrib = spec.row_values(rows).tolist()
            emitted = []
            slots = out_schema.fillers(len(rows)) if mode == "oblivious" else None
            for i in np.flatnonzero(real):
                k = kb[i]
                vals = contrib[i]
                if cur_key is not None and k == cur_key:
                    cur_vals = spec.combine(cur_vals, vals)
                    continue
                if cur_key is not None:
                    done = _emit(spec, schema, out_schema, cur_rep, cur_vals)
                    emitted.append(done)
                    if slots is not None:
                        slots[i] = done
                cur_key, cur_rep, cur_vals = k, rows[i], vals
            env.tick(len(rows))
            if slots is not None:
                pushed = slots
            else:
                pushed = np.array(emitted, dtype=out_schema.dtype) if emitted else out_schema.empty()
            paced.batch(pushed, bits)
        if cur_key is not None:
            tail = np.array([_emit(spec, schema, out_schema, cur_rep, cur_vals)], dtype=out_schema.dtype)
            log = paced.finish(tail, [1])
        else:
            log = paced.finish(None, [0])
    return GroupSortResult(out, sorted_t, s, log, tape, sort_stats[-1] if sort_stats else None)


def _emit(spec, schema, out_schema, rep, vals) -> np.void:
    row = _key_fields(spec, schema, out_schema, np.array([rep], dtype=schema.dtype))[0]
    for (_, _, name), v in zip(spec.aggs, vals):
        row[name] = v
    return row

"""Reference fixtures: a non-oblivious filter and minimal fully-oblivious baselines.

None of these carry a DP guarantee.  The naive filter leaks match positions
through its write pattern and serves as the negative control for trace
checks.  The padded operators mirror the worst-case padding used by fully
oblivious systems such as ObliDB: a filter that always writes N rows, a
single-pass grouping limited to what fits in private memory, and a join
built from block-memory bitonic sorts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .memory import EnclaveEnv, PrivateMemoryError
from .osort import SortKey, bitonic_sort, pow2_floor
from .operators.common import Predicate, Projection
from .operators.group import SLOT_OVERHEAD, GroupSpec, _GroupTable
from .operators.join import concat_marked, join_scan, joined_schema
from .relational import FILLER_FIELD, Table, TableWriter, is_filler, table_scan_batched


def naive_filter(env: EnclaveEnv, table: Table, pred: Predicate, columns: Sequence[str] | None = None) -> Table:
    """Write each matching row as soon as it is seen (not oblivious).

    Every match rewrites the output's tail block, so the trace shows where in
    the input the matches are and how many there are.
    """
    proj = Projection(table.schema, columns)
    out = Table(env, proj.schema, label="naive filter out")
    orpb = out.rows_per_block
    tail = proj.schema.empty()
    for rows in table_scan_batched(env, table, table.rows_per_block):
        hit = pred(rows) & ~is_filler(rows)
        env.tick(len(rows))
        matched = proj(rows[hit])
        for i in range(len(matched)):
            tail = np.concatenate([tail, matched[i:i + 1]])
            out.write_block(out.row_count // orpb, tail)
            out.row_count += 1
            if len(tail) == orpb:
                tail = proj.schema.empty()
    return out


def padded_filter(env: EnclaveEnv, table: Table, pred: Predicate, columns: Sequence[str] | None = None) -> Table:
    """Fully oblivious filter: one output row (real or filler) per input row."""
    proj = Projection(table.schema, columns)
    out = Table(env, proj.schema, label="padded filter out")
    with TableWriter(out) as w:
        for rows in table_scan_batched(env, table, table.rows_per_block):
            hit = pred(rows) & ~is_filler(rows)
            o = proj(rows)
            o[FILLER_FIELD] = np.where(hit, 0, 1)
            env.tick(len(rows))
            w.append(o)
    return out


class SinglePassAbort(RuntimeError):
    """The single-pass grouping ran out of private hash-table slots."""


def single_pass_group(env: EnclaveEnv, table: Table, spec: GroupSpec, group_capacity: int) -> Table:
    """One scan into a private hash table of ``group_capacity`` groups, padded output.

    Aborts when the input has more distinct groups than fit, which is the
    limitation the multi-pass grouping removes.
    """
    schema = table.schema
    out_schema = spec.output_schema(schema)
    try:
        mem = env.reserve(group_capacity * (out_schema.row_width_bytes + SLOT_OVERHEAD), "single-pass table")
    except PrivateMemoryError as exc:
        raise SinglePassAbort(str(exc)) from exc
    out = Table(env, out_schema, label="single-pass group out")
    with mem:
        groups = _GroupTable(spec, schema, out_schema)
        for rows in table_scan_batched(env, table, table.rows_per_block):
            groups.add(rows[~is_filler(rows)])
            env.tick(len(rows))
            if len(groups) > group_capacity:
                raise SinglePassAbort(f"{len(groups)} groups exceed {group_capacity} slots")
        got = groups.rows()
        with TableWriter(out) as w:
            w.append(got)
            w.append(out_schema.fillers(group_capacity - len(got)))
    return out


@dataclass
class BitonicJoinResult:
    table: Table
    transfers: int


def bitonic_join(env: EnclaveEnv, pk_table: Table, fk_table: Table, pk_col: str, fk_col: str,
                 capacity_blocks: int = 2) -> BitonicJoinResult:
    """Sort-scan-sort join with worst-case padding (output = |S| rows).

    Both sorts are external bitonic sorts using ``capacity_blocks`` blocks of
    private memory, as in systems that keep only a block or two in the enclave.
    """
    before = env.counters.transfers
    rs, ss = pk_table.schema, fk_table.schema
    oschema = joined_schema(rs, ss)
    combined = concat_marked(env, pk_table, fk_table, pk_col, fk_col, "bitonic join")
    cschema = combined.schema
    cap_c = pow2_floor(cschema.rows_per_block(env.block_size_bytes)) * capacity_blocks
    sorted_t = bitonic_sort(env, combined, SortKey(["_k", "_mark"]), capacity_rows=cap_c, label="bitonic join sort")
    inter, _ = join_scan(env, sorted_t, rs, ss, "bitonic join")
    # second sort pushes fillers to the back; keep the worst case |S| rows
    cap_o = pow2_floor(oschema.rows_per_block(env.block_size_bytes)) * capacity_blocks
    compacted = bitonic_sort(env, inter, SortKey([]), capacity_rows=cap_o, label="bitonic join compact")
    out = Table(env, oschema, label="bitonic join out")
    with TableWriter(out) as w:
        left = fk_table.row_count
        for rows in table_scan_batched(env, compacted, compacted.rows_per_block):
            if left <= 0:
                break
            w.append(rows[:left])
            left -= len(rows)
    return BitonicJoinResult(out, env.counters.transfers - before)

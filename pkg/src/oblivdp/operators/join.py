"""Differentially oblivious primary-key / foreign-key join."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dp import BoundMode, PrivacyParams
from ..memory import EnclaveEnv
from ..osort import BucketSortStats, SortKey, as_bytes_key, bucket_oblivious_sort
from ..relational import FILLER_FIELD, Schema, Table, TableWriter, is_filler, table_scan_batched
from .common import NOT_FILLER
from .filter import FilterResult, do_filter

MARK_R, MARK_S = 0, 1


@dataclass
class JoinResult:
    table: Table
    filter: FilterResult
    combined_rows: int
    dangling: int          # foreign-key rows with no matching primary key (not released)
    sort_transfers: int
    scan_transfers: int
    sort_stats: BucketSortStats | None = None
    scan_table: Table | None = None  # the (k, mark)-ordered scan output fed to the filter

    @property
    def s(self) -> int:
        return self.filter.s


def _key_type(a: str, b: str) -> str:
    if a == b:
        return a
    if a.startswith("ascii") and b.startswith("ascii"):
        w = max(int(a[6:-1]), int(b[6:-1]))
        return f"ascii({w})"
    raise ValueError(f"join columns have incompatible types {a} and {b}")


def joined_schema(r: Schema, s: Schema) -> Schema:
    """R's columns followed by S's; clashing S names get an ``s_`` prefix."""
    cols = list(r.columns)
    taken = set(r.names)
    for n, t in s.columns:
        cols.append((f"s_{n}" if n in taken else n, t))
    return Schema(cols)


def combined_schema(r: Schema, s: Schema, pk_col: str, fk_col: str) -> Schema:
    """Common padded row format ``(k, mark, payload)`` for both join inputs."""
    ktype = _key_type(r.column_type(pk_col), s.column_type(fk_col))
    width = max(r.row_width_bytes, s.row_width_bytes) - 1
    return Schema([("_k", ktype), ("_mark", "int64"), ("_payload", f"ascii({max(width, 1)})")])


def _payload(rows: np.ndarray, width: int) -> np.ndarray:
    raw = np.frombuffer(np.ascontiguousarray(rows).tobytes(), np.uint8).reshape(len(rows), -1)
    raw = raw[:, :-1]  # drop the filler byte; the combined row has its own
    if raw.shape[1] < width:
        raw = np.concatenate([raw, np.zeros((len(rows), width - raw.shape[1]), np.uint8)], axis=1)
    return raw


def _unpayload(mat: np.ndarray, schema: Schema) -> np.ndarray:
    w = schema.row_width_bytes - 1
    full = np.concatenate([mat[:, :w], np.zeros((len(mat), 1), np.uint8)], axis=1)
    return np.frombuffer(np.ascontiguousarray(full).tobytes(), dtype=schema.dtype).copy()


def concat_marked(env: EnclaveEnv, pk_table: Table, fk_table: Table, pk_col: str, fk_col: str,
                  label: str = "join") -> Table:
    """Write R then S, block by block, in the common ``(k, mark, payload)`` format."""
    cschema = combined_schema(pk_table.schema, fk_table.schema, pk_col, fk_col)
    width = cschema.dtype["_payload"].itemsize
    combined = Table(env, cschema, label=f"{label} combined")
    with TableWriter(combined, f"{label} concat") as w:
        for src, key_col, mark in ((pk_table, pk_col, MARK_R), (fk_table, fk_col, MARK_S)):
            for rows in table_scan_batched(env, src, src.rows_per_block, label=f"{label} concat"):
                out = np.zeros(len(rows), dtype=cschema.dtype)
                out["_k"] = rows[key_col]
                out["_mark"] = mark
                out["_payload"] = as_bytes_key(_payload(rows, width))
                out[FILLER_FIELD] = rows[FILLER_FIELD]
                w.append(out)
    return combined


def join_scan(env: EnclaveEnv, sorted_t: Table, rs: Schema, ss: Schema, label: str = "join") -> tuple[Table, int]:
    """One pass over the (k, mark)-sorted rows, writing one output row per input row.

    A primary-key row becomes the working tuple and emits a filler; a
    foreign-key row emits its join with the working tuple, or a filler when no
    primary key precedes it (counted as dangling).
    """
    oschema = joined_schema(rs, ss)
    inter = Table(env, oschema, label=f"{label} scan out")
    dangling = 0
    cur_key = None
    cur_r = None
    rnames, snames = rs.names, ss.names
    onames = oschema.names
    with env.reserve(rs.row_width_bytes, f"{label} working tuple"), TableWriter(inter, f"{label} scan") as w:
        for rows in table_scan_batched(env, sorted_t, sorted_t.rows_per_block, label=f"{label} scan"):
            out = oschema.fillers(len(rows))
            payload = np.frombuffer(np.ascontiguousarray(rows["_payload"]).tobytes(), np.uint8).reshape(len(rows), -1)
            for i in range(len(rows)):
                if rows[FILLER_FIELD][i]:
                    continue
                if rows["_mark"][i] == MARK_R:
                    cur_key = rows["_k"][i]
                    cur_r = _unpayload(payload[i:i + 1], rs)[0]
                    continue
                if cur_r is None or rows["_k"][i] != cur_key:
                    dangling += 1
                    continue
                srow = _unpayload(payload[i:i + 1], ss)[0]
                vals = [cur_r[n] for n in rnames] + [srow[n] for n in snames]
                for n, v in zip(onames, vals):
                    out[n][i] = v
                out[FILLER_FIELD][i] = 0
            env.tick(len(rows))
            w.append(out)
    return inter, dangling


def do_join(env: EnclaveEnv, pk_table: Table, fk_table: Table, pk_col: str, fk_col: str,
            params: PrivacyParams, s: int | None = None,
            bound_mode: BoundMode | str = BoundMode.ANALYTIC, tape: np.ndarray | None = None,
            strict_sort: bool = True, label: str = "join") -> JoinResult:
    """Join every foreign-key row of ``fk_table`` with its primary-key row.

    Both tables are padded to one row format ``(k, mark, payload)`` and
    concatenated, bucket-obliviously sorted on ``(k, mark)``, and scanned once:
    a primary-key row becomes the working tuple and emits a filler, a
    foreign-key row emits its join with the working tuple.  The filler-removing
    filter then paces the output with DP noise.  Foreign-key rows without a
    primary key emit fillers and are counted in ``dangling``.
    """
    rs, ss = pk_table.schema, fk_table.schema
    before = env.counters.transfers
    combined = concat_marked(env, pk_table, fk_table, pk_col, fk_col, label)
    sort_stats: list = []
    sorted_t = bucket_oblivious_sort(env, combined, SortKey(["_k", "_mark"]), strict=strict_sort,
                                     label=f"{label} sort", stats=sort_stats)
    sort_transfers = env.counters.transfers - before

    before = env.counters.transfers
    inter, dangling = join_scan(env, sorted_t, rs, ss, label)
    scan_transfers = env.counters.transfers - before

    filt = do_filter(env, inter, NOT_FILLER, params, s=s, bound_mode=bound_mode, tape=tape,
                     label=f"{label} compact")
    return JoinResult(filt.table, filt, combined.row_count, dangling, sort_transfers, scan_transfers,
                      sort_stats[-1] if sort_stats else None, inter)

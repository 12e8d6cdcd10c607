"""Oblivious sorting over untrusted memory.

Two sorts live here:

* an external bitonic sort, whose block schedule depends only on the row
  count and the chunk size, and
* a bucket oblivious sort: random tags route elements through a butterfly of
  padded buckets, after which a bitonic pass (strict mode) or a plain merge
  of the randomly permuted buckets finishes the job.

Sort keys are turned into order-preserving byte strings so that one numpy
comparison orders rows on any mix of int64 and ascii columns.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .memory import EnclaveEnv
from .relational import FILLER_FIELD, Schema, Table, TableWriter, table_scan_batched

TAG_FIELD = "_tag"
DUMMY_TAG = -1
DEFAULT_BUCKET_SIZE = 512


class OverflowAbort(RuntimeError):
    """More than Z real elements were routed to one bucket."""

    def __init__(self, level: int, load: int, capacity: int):
        super().__init__(f"bucket overflow at level {level}: {load} > {capacity}")
        self.level = level
        self.load = load
        self.capacity = capacity


def next_pow2(x: int) -> int:
    return 1 << max(0, int(x - 1).bit_length())


def pow2_floor(x: int) -> int:
    return 1 << (int(x).bit_length() - 1)


# keys -------------------------------------------------------------------------

class SortKey:
    """Columns (optionally truncated ascii prefixes) forming a lexicographic key."""

    def __init__(self, columns: Sequence[str | tuple[str, int]]):
        self.columns = [(c, None) if isinstance(c, str) else (c[0], int(c[1])) for c in columns]

    def width(self, schema: Schema) -> int:
        w = 0
        for name, prefix in self.columns:
            t = schema.column_type(name)
            w += 8 if t == "int64" else (prefix or schema.dtype[name].itemsize)
        return w

    def encode(self, rows: np.ndarray) -> np.ndarray:
        """``(n, width)`` uint8 matrix whose row-wise lexicographic order is the key order."""
        parts = []
        for name, prefix in self.columns:
            col = rows[name]
            if col.dtype.kind == "i":
                u = col.astype("<i8").view("<u8") ^ np.uint64(1 << 63)
                parts.append(np.frombuffer(u.astype(">u8").tobytes(), np.uint8).reshape(len(rows), 8))
            else:
                w = col.dtype.itemsize
                m = np.frombuffer(np.ascontiguousarray(col).tobytes(), np.uint8).reshape(len(rows), w)
                parts.append(m[:, :prefix] if prefix else m)
        if not parts:
            return np.zeros((len(rows), 0), np.uint8)
        return np.concatenate(parts, axis=1)


def as_bytes_key(mat: np.ndarray) -> np.ndarray:
    """View a uint8 matrix as fixed-width byte strings (numpy orders them lexicographically)."""
    mat = np.ascontiguousarray(mat, dtype=np.uint8)
    if mat.shape[1] == 0:
        mat = np.zeros((len(mat), 1), np.uint8)
    return mat.view(f"S{mat.shape[1]}").ravel()


def row_key(rows: np.ndarray, key: SortKey, with_dummy: bool = False) -> np.ndarray:
    """Full comparison key: [dummy byte] + filler byte + key bytes; fillers sort after reals."""
    cols = []
    if with_dummy:
        cols.append((rows[TAG_FIELD] == DUMMY_TAG).astype(np.uint8)[:, None])
    cols.append(rows[FILLER_FIELD].astype(np.uint8)[:, None])
    cols.append(key.encode(rows))
    return as_bytes_key(np.concatenate(cols, axis=1))


# in-memory bitonic network ---------------------------------------------------------

def bitonic_stages(n: int, k_from: int = 2) -> list[tuple[int, int]]:
    stages = []
    k = max(2, k_from)
    while k <= n:
        j = k // 2
        while j >= 1:
            stages.append((k, j))
            j //= 2
        k *= 2
    return stages


def apply_stages(keys: np.ndarray, perm: np.ndarray, stages, base: int = 0,
                 gidx: np.ndarray | None = None) -> int:
    """Run compare-exchange stages on ``perm`` in place; returns comparisons made.

    Each stage is ``(k, j)`` with ``j`` a local bit mask.  The comparator
    direction is taken from the global index of the element (``base + i``, or
    ``gidx[i]`` when the loaded elements are not contiguous), so the result
    matches the full-size network.
    """
    n = len(perm)
    idx = np.arange(n)
    g = idx + base if gidx is None else gidx
    comparisons = 0
    for k, j in stages:
        lo = idx[(idx & j) == 0]
        hi = lo | j
        asc = (g[lo] & k) == 0
        a = keys[perm[lo]]
        b = keys[perm[hi]]
        swap = np.where(asc, a > b, a < b)
        pl, ph = perm[lo[swap]], perm[hi[swap]]
        perm[lo[swap]], perm[hi[swap]] = ph, pl
        comparisons += len(lo)
    return comparisons


def bitonic_perm(keys: np.ndarray) -> tuple[np.ndarray, int]:
    """Permutation sorting ``keys`` ascending via a bitonic network (length a power of two)."""
    n = len(keys)
    if n & (n - 1):
        raise ValueError("bitonic network needs a power-of-two length")
    perm = np.arange(n)
    c = apply_stages(keys, perm, bitonic_stages(n))
    return perm, c


def bitonic_sort_array(values: Sequence, env: EnclaveEnv | None = None) -> list:
    """Sort a small list with the bitonic network (pads with +inf-like sentinels)."""
    vals = list(values)
    n = next_pow2(max(1, len(vals)))
    order = sorted(range(len(vals)), key=lambda i: vals[i])
    rank = np.empty(len(vals), dtype=np.int64)
    rank[order] = np.arange(len(vals))
    keys = np.concatenate([rank, np.full(n - len(vals), len(vals), dtype=np.int64)])
    perm, c = bitonic_perm(keys)
    if env is not None:
        env.tick(c)
    return [vals[i] for i in perm if i < len(vals)]


def compact_reals(rows: np.ndarray, env: EnclaveEnv | None = None) -> np.ndarray:
    """Move real rows to the front (stably) with a bitonic network over a padded copy.

    Used by the in-enclave-oblivious operator variants, where even private
    memory accesses must not depend on which rows are fillers.
    """
    n = len(rows)
    if n == 0:
        return rows
    m = next_pow2(n)
    flags = np.concatenate([rows[FILLER_FIELD].astype(np.int64), np.ones(m - n, np.int64)])
    keys = flags * m + np.arange(m)  # position breaks ties, keeping real rows in order
    perm, c = bitonic_perm(keys)
    if env is not None:
        env.tick(c)
    perm = perm[perm < n]
    return rows[perm]


# external bitonic sort ------------------------------------------------------------

@dataclass
class SortStats:
    n_padded: int
    capacity_rows: int
    passes: int
    comparisons: int


def _sort_layout(schema: Schema, block_size: int) -> int:
    return pow2_floor(schema.rows_per_block(block_size))


def _default_capacity(env: EnclaveEnv, width: int, n: int, rpb: int, share: float = 0.5) -> int:
    budget = int(env.private_free * share) // width
    return max(2 * rpb, min(n, pow2_floor(max(1, budget))))


def bitonic_schedule(n: int, cap: int, rpb: int) -> list:
    """Passes of an external bitonic sort of ``n`` rows with ``cap`` rows of private memory.

    ``("local", stages)`` passes load contiguous windows of ``cap`` rows.
    ``("strided", k, bits)`` passes load, for each setting of the other bits,
    the ``2**len(bits)`` pieces that differ only in ``bits`` and run those
    merge stages in memory.  Pieces are at least one block long.
    """
    cap = min(cap, n)
    log_c = cap.bit_length() - 1
    max_bits = max(1, (cap // rpb).bit_length() - 1)
    schedule = [("local", bitonic_stages(cap))]
    k = 2 * cap
    while k <= n:
        high = list(range(k.bit_length() - 2, log_c - 1, -1))
        for i in range(0, len(high), max_bits):
            schedule.append(("strided", k, high[i:i + max_bits]))
        schedule.append(("local", [(k, j) for j in _halvings(cap // 2)]))
        k *= 2
    return schedule


def _external_bitonic(env: EnclaveEnv, work: Table, n: int, cap: int, keyfn, loader, sink) -> SortStats:
    """Sort ``n`` rows (a power of two) using ``cap`` rows of private memory.

    ``loader(w)`` supplies window ``w`` (``cap`` rows) for the first pass; later
    passes read the work region.  The last pass hands its windows to ``sink``
    in order instead of writing them back.
    """
    rpb = work.rows_per_block
    cap = min(cap, n)
    if cap < n and cap < 2 * rpb:
        raise ValueError("external bitonic sort needs at least two blocks of private memory")
    width = work.schema.row_width_bytes
    schedule = bitonic_schedule(n, cap, rpb)
    comparisons = 0

    def read_rows(start, count):
        b0 = start // rpb
        return np.concatenate([work.read_block(b0 + i) for i in range(count // rpb)])

    def write_rows(start, rows):
        b0 = start // rpb
        for i in range(len(rows) // rpb):
            work.write_block(b0 + i, rows[i * rpb:(i + 1) * rpb])

    with env.reserve(cap * width, "bitonic window"):
        for p, step in enumerate(schedule):
            last = p == len(schedule) - 1
            if step[0] == "local":
                for w in range(n // cap):
                    rows = loader(w) if p == 0 else read_rows(w * cap, cap)
                    perm = np.arange(cap)
                    comparisons += apply_stages(keyfn(rows), perm, step[1], base=w * cap)
                    rows = rows[perm]
                    if last and sink is not None:
                        sink(rows)
                    else:
                        write_rows(w * cap, rows)
            else:
                _, k, bits = step
                h = len(bits)
                piece = cap >> h
                b_lo = bits[-1]
                mask = sum(1 << b for b in bits)
                starts_local = np.arange(1 << h)
                stages = [(k, piece << (b - b_lo)) for b in bits]
                for anchor in range(0, n, piece):
                    if anchor & mask:
                        continue
                    starts = anchor + (starts_local << b_lo)
                    rows = np.concatenate([read_rows(int(st), piece) for st in starts])
                    gidx = (starts[:, None] + np.arange(piece)[None, :]).ravel()
                    perm = np.arange(cap)
                    comparisons += apply_stages(keyfn(rows), perm, stages, gidx=gidx)
                    rows = rows[perm]
                    for i, st in enumerate(starts):
                        write_rows(int(st), rows[i * piece:(i + 1) * piece])
    env.tick(comparisons)
    return SortStats(n, cap, len(schedule), comparisons)


def _halvings(j: int) -> list[int]:
    out = []
    while j >= 1:
        out.append(j)
        j //= 2
    return out


def _sized_writer(out: Table, limit: int):
    writer = TableWriter(out, "sort output")
    state = {"left": limit}

    def sink(rows):
        take = min(state["left"], len(rows))
        if take:
            writer.append(rows[:take])
            state["left"] -= take

    return writer, sink


def bitonic_sort(env: EnclaveEnv, table: Table, key: SortKey, capacity_rows: int | None = None,
                 label: str = "bitonic") -> Table:
    """Oblivious external bitonic sort; fillers end up after all real rows.

    The block schedule depends only on the row count and ``capacity_rows``, the
    number of rows held in private memory at once (a power of two, at least two
    blocks).  By default it takes half of the free private memory.
    """
    schema = table.schema
    N = table.row_count
    out = Table(env, schema, label=f"{label} out")
    if N == 0:
        return out
    rpb = _sort_layout(schema, env.block_size_bytes)
    n = max(next_pow2(N), rpb)
    cap = capacity_rows or _default_capacity(env, schema.row_width_bytes, n, rpb)
    if cap & (cap - 1) or cap < rpb:
        raise ValueError("capacity_rows must be a power of two and at least one block")
    cap = min(cap, n)
    work = Table(env, schema, label=f"{label} work")
    work.rows_per_block = rpb
    work.row_count = n
    batches = table_scan_batched(env, table, cap, label=f"{label} input")

    def loader(w):
        got = next(batches, None)
        rows = got if got is not None else schema.empty()
        if len(rows) < cap:
            rows = np.concatenate([rows, schema.fillers(cap - len(rows))])
        return rows

    writer, sink = _sized_writer(out, N)
    _external_bitonic(env, work, n, cap, lambda r: row_key(r, key), loader, sink)
    batches.close()
    writer.close()
    return out


# bucket oblivious sort ----------------------------------------------------------------

@dataclass(frozen=True)
class BucketPlan:
    n: int
    bucket_size: int
    n_buckets: int
    levels: int
    rows_per_block: int

    @classmethod
    def for_table(cls, n: int, schema: Schema, block_size: int, bucket_size: int = DEFAULT_BUCKET_SIZE):
        z = next_pow2(bucket_size)
        rpb = min(_sort_layout(tagged_schema(schema), block_size), z)
        beta = max(2, next_pow2(math.ceil(2 * n / z)))
        return cls(n, z, beta, beta.bit_length() - 1, rpb)

    def overflow_bound(self) -> float:
        """Union (Chernoff) bound on the chance that any merge overflows.

        Each routed bucket's real load is a sum of independent indicators with
        mean at most Z/2; Pr[load > Z] <= exp(-Z/6) per bucket and level.
        """
        return self.levels * self.n_buckets * math.exp(-self.bucket_size / 6.0)

    def level_groups(self, buckets_in_memory: int) -> list[list[int]]:
        """Consecutive butterfly levels handled by one pass over the buckets."""
        g = max(1, min(self.levels, buckets_in_memory.bit_length() - 1))
        return [list(range(i, min(self.levels, i + g))) for i in range(0, self.levels, g)]


def tagged_schema(schema: Schema) -> Schema:
    return Schema(list(schema.columns) + [(TAG_FIELD, "int64")])


@dataclass
class BucketSortStats:
    plan: BucketPlan
    finish: str
    overflow_level: int | None = None
    capacity_rows: int = 0


def _merge_split(group: np.ndarray, bit: int, Z: int, level: int, env: EnclaveEnv) -> np.ndarray:
    """Route one pair of buckets (2Z rows) on tag bit ``bit``; each half keeps exactly Z rows."""
    is_dummy = group[TAG_FIELD] == DUMMY_TAG
    goes_hi = ((group[TAG_FIELD] & bit) != 0) & ~is_dummy
    n_hi = int(goes_hi.sum())
    n_lo = int((~goes_hi & ~is_dummy).sum())
    if n_lo > Z or n_hi > Z:
        raise OverflowAbort(level, max(n_lo, n_hi), Z)
    # class 0: real to low bucket, 1: dummy, 2: real to high bucket
    cls = np.where(is_dummy, 1, np.where(goes_hi, 2, 0)).astype(np.int64)
    perm, c = bitonic_perm(cls)
    env.tick(c)
    return group[perm]


def bucket_oblivious_sort(env: EnclaveEnv, table: Table, key: SortKey, bucket_size: int = DEFAULT_BUCKET_SIZE,
                          strict: bool = True, rng: np.random.Generator | None = None,
                          capacity_rows: int | None = None, label: str = "bucket sort",
                          stats: list | None = None) -> Table:
    """Sort ``table`` by ``key`` with a random-tag butterfly followed by a finish pass.

    Every element gets a uniform tag in ``[0, beta)``; each butterfly level fixes
    one bit of the element's bucket index to the matching tag bit, so that after
    all levels the buckets hold a uniformly random permutation padded with
    dummies.  As many levels as fit in private memory share one pass.

    With ``strict`` the finish is an external bitonic sort over all padded
    buckets, so the whole trace is a function of (N, Z, B, M).  Otherwise the
    buckets are stripped of dummies and merged without obliviousness, which is
    safe only because the butterfly has already permuted the input at random.
    """
    schema = table.schema
    N = table.row_count
    out = Table(env, schema, label=f"{label} out")
    if N == 0:
        return out
    rng = rng if rng is not None else env.rng("sort tags")
    tschema = tagged_schema(schema)
    plan = BucketPlan.for_table(N, schema, env.block_size_bytes, bucket_size)
    Z, beta, rpb = plan.bucket_size, plan.n_buckets, plan.rows_per_block
    bpb = Z // rpb
    work = Table(env, tschema, label=f"{label} buckets")
    work.rows_per_block = rpb
    work.row_count = beta * Z
    width = tschema.row_width_bytes
    cap = capacity_rows or _default_capacity(env, width, beta * Z, rpb)
    cap = min(max(cap, 2 * Z), beta * Z)

    def tagged(rows):
        t = np.zeros(len(rows), dtype=tschema.dtype)
        for name in schema.names + [FILLER_FIELD]:
            t[name] = rows[name]
        return t

    def dummies(n):
        d = tschema.fillers(n)
        d[TAG_FIELD] = DUMMY_TAG
        return d

    def read_bucket(b):
        return np.concatenate([work.read_block(b * bpb + i) for i in range(bpb)])

    def write_bucket(b, rows):
        for i in range(bpb):
            work.write_block(b * bpb + i, rows[i * rpb:(i + 1) * rpb])

    # 1. distribute: Z/2 input rows per bucket, random tags, pad with dummies
    half = Z // 2
    batches = table_scan_batched(env, table, half, label=f"{label} input")
    for b in range(beta):
        got = next(batches, None)
        rows = tagged(got) if got is not None else tschema.empty()
        rows[TAG_FIELD] = rng.integers(0, beta, len(rows))
        write_bucket(b, np.concatenate([rows, dummies(Z - len(rows))]))
    batches.close()

    # 2. butterfly, several levels per pass
    with env.reserve(cap * width, f"{label} butterfly"):
        for levels in plan.level_groups(cap // Z):
            l0 = levels[0]
            span = sum(1 << lv for lv in levels)
            members = [sel << l0 for sel in range(1 << len(levels))]
            for base in range(beta):
                if base & span:
                    continue
                ids = [base + m for m in members]
                group = np.concatenate([read_bucket(b) for b in ids])
                for lv in levels:
                    bit = 1 << lv
                    local = 1 << (lv - l0)
                    for i in range(len(ids)):
                        if i & local:
                            continue
                        j = i | local
                        pair = np.concatenate([group[i * Z:(i + 1) * Z], group[j * Z:(j + 1) * Z]])
                        try:
                            pair = _merge_split(pair, bit, Z, lv, env)
                        except OverflowAbort as exc:
                            if stats is not None:
                                stats.append(BucketSortStats(plan, "aborted", exc.level, cap))
                            raise
                        group[i * Z:(i + 1) * Z] = pair[:Z]
                        group[j * Z:(j + 1) * Z] = pair[Z:]
                for i, b in enumerate(ids):
                    write_bucket(b, group[i * Z:(i + 1) * Z])

    # 3. finish
    if strict:
        n = beta * Z
        writer, sink = _sized_writer(out, N)

        def strip(rows):
            plain = np.zeros(len(rows), dtype=schema.dtype)
            for name in schema.names + [FILLER_FIELD]:
                plain[name] = rows[name]
            sink(plain)

        def loader(w):
            return np.concatenate([work.read_block(w * (cap // rpb) + i) for i in range(cap // rpb)])

        _external_bitonic(env, work, n, cap, lambda r: row_key(r, key, with_dummy=True), loader, strip)
        writer.close()
    else:
        _merge_finish(env, work, plan, schema, key, out)
    if stats is not None:
        stats.append(BucketSortStats(plan, "strict" if strict else "merge", None, cap))
    return out


def _merge_finish(env, work: Table, plan: BucketPlan, schema: Schema, key: SortKey, out: Table):
    """Strip dummies, sort each bucket in private memory, then k-way merge the runs.

    The trace of this pass reveals bucket loads and the merge order; both are
    functions of the random permutation applied by the butterfly.
    """
    Z, beta, rpb = plan.bucket_size, plan.n_buckets, plan.rows_per_block
    bpb = Z // rpb
    runs = Table(env, schema, label="bucket runs")
    run_bounds = []
    with TableWriter(runs) as w:
        for b in range(beta):
            rows = np.concatenate([work.read_block(b * bpb + i) for i in range(bpb)])
            rows = rows[rows[TAG_FIELD] != DUMMY_TAG]
            plain = np.zeros(len(rows), dtype=schema.dtype)
            for name in schema.names + [FILLER_FIELD]:
                plain[name] = rows[name]
            plain = plain[np.argsort(row_key(plain, key), kind="stable")]
            start = runs.row_count
            w.append(plain)
            run_bounds.append((start, runs.row_count))
    rrpb = runs.rows_per_block

    def run_iter(lo, hi):
        blk, rows = -1, None
        for i in range(lo, hi):
            if i // rrpb != blk:
                blk = i // rrpb
                rows = runs.read_block(blk)
            r = rows[i % rrpb]
            yield bytes(row_key(rows[i % rrpb:i % rrpb + 1], key)[0]), i, r

    with TableWriter(out) as w:
        buf = []
        for _, _, r in heapq.merge(*(run_iter(lo, hi) for lo, hi in run_bounds), key=lambda x: (x[0], x[1])):
            buf.append(r)
            if len(buf) >= rrpb:
                w.append(np.array(buf, dtype=schema.dtype))
                buf = []
        if buf:
            w.append(np.array(buf, dtype=schema.dtype))

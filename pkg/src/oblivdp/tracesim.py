"""Data-free trace simulators.

Each function rebuilds the block trace of one operator from public shape
parameters (row counts, rows per block, buffer bound, region ids) and the
released noisy quantities alone.  If a real run's trace digest equals the
simulated one, the run's access pattern carried no information beyond those
inputs.  Runs that hit a privacy failure (FIFO overflow or underflow past the
final padding) are expected to diverge.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .memory import AccessKind, TraceLog
from .osort import BucketPlan, bitonic_schedule, next_pow2

R, W = AccessKind.READ, AccessKind.WRITE


class TraceSim:
    """Trace recorder plus region allocator mirroring :class:`EnclaveEnv`."""

    def __init__(self, first_region: int):
        self.trace = TraceLog()
        self.next_region = int(first_region)

    def region(self) -> int:
        r = self.next_region
        self.next_region += 1
        return r

    def read(self, region: int, index: int) -> None:
        self.trace.append(R, region, index)

    def write(self, region: int, index: int) -> None:
        self.trace.append(W, region, index)

    def scan(self, region: int, n: int, rpb: int, s: int):
        """Yield batch sizes of a batched scan, emitting reads on demand."""
        block, staged, pos = 0, 0, 0
        while pos < n:
            want = min(s, n - pos)
            while staged < want:
                self.read(region, block)
                staged += min(rpb, n - block * rpb)
                block += 1
            yield want
            staged -= want
            pos += want


class SimWriter:
    """Counts rows like :class:`TableWriter` and emits whole-block writes."""

    def __init__(self, sim: TraceSim, region: int, rpb: int):
        self.sim, self.region, self.rpb = sim, region, rpb
        self.rows = 0
        self.flushed = 0

    def append(self, n: int) -> None:
        self.rows += int(n)
        while (self.flushed + 1) * self.rpb <= self.rows:
            self.sim.write(self.region, self.flushed)
            self.flushed += 1

    def close(self) -> None:
        if self.rows > self.flushed * self.rpb:
            self.sim.write(self.region, self.flushed)
            self.flushed += 1


# paced output -----------------------------------------------------------------

def _paced(sim: TraceSim, in_region: int, n: int, in_rpb: int, out_region: int, out_rpb: int,
           s: int, y_tilde: Sequence[float]) -> None:
    """A DP-paced scan: after each batch grow the output to round(y)-s, finish at round(y_N)+s."""
    w = SimWriter(sim, out_region, out_rpb)
    j = 0
    for _ in sim.scan(in_region, n, in_rpb, s):
        target = int(round(y_tilde[j])) - s
        if target > w.rows:
            w.append(target - w.rows)
        j += 1
    if len(y_tilde) != j + 1:
        raise ValueError(f"expected {j + 1} released counts, got {len(y_tilde)}")
    final = int(round(y_tilde[-1])) + s
    if final > w.rows:
        w.append(final - w.rows)
    w.close()


def simulate_filter(first_region: int, in_region: int, n: int, in_rpb: int, out_rpb: int,
                    s: int, y_tilde: Sequence[float]) -> TraceLog:
    """Trace of the filter (either mode) from N, s and the released noisy counts."""
    sim = TraceSim(first_region)
    out = sim.region()
    _paced(sim, in_region, n, in_rpb, out, out_rpb, s, y_tilde)
    return sim.trace


def simulate_group_hash(first_region: int, in_region: int, n: int, in_rpb: int, out_rpb: int,
                        batch_rows: int, k: int, m_groups: int) -> TraceLog:
    """Trace of hash grouping: one sketch scan, then k scans each writing m_groups rows."""
    sim = TraceSim(first_region)
    for _ in sim.scan(in_region, n, in_rpb, batch_rows):
        pass
    out = sim.region()
    w = SimWriter(sim, out, out_rpb)
    for _ in range(k):
        for _ in sim.scan(in_region, n, in_rpb, batch_rows):
            pass
        w.append(m_groups)
    w.close()
    return sim.trace


# sorts ----------------------------------------------------------------------------

def _external_bitonic(sim: TraceSim, work: int, n: int, cap: int, rpb: int,
                      loader: Callable[[int], None], sink: Callable[[int], None] | None) -> None:
    cap = min(cap, n)
    bpc = cap // rpb
    schedule = bitonic_schedule(n, cap, rpb)
    for p, step in enumerate(schedule):
        last = p == len(schedule) - 1
        if step[0] == "local":
            for win in range(n // cap):
                if p == 0:
                    loader(win)
                else:
                    for i in range(bpc):
                        sim.read(work, win * bpc + i)
                if last and sink is not None:
                    sink(cap)
                else:
                    for i in range(bpc):
                        sim.write(work, win * bpc + i)
        else:
            _, k, bits = step
            h = len(bits)
            piece = cap >> h
            b_lo = bits[-1]
            mask = sum(1 << b for b in bits)
            ppb = piece // rpb
            for anchor in range(0, n, piece):
                if anchor & mask:
                    continue
                starts = [anchor + (i << b_lo) for i in range(1 << h)]
                for st in starts:
                    for i in range(ppb):
                        sim.read(work, st // rpb + i)
                for st in starts:
                    for i in range(ppb):
                        sim.write(work, st // rpb + i)


def _sized_sink(writer: SimWriter, limit: int) -> Callable[[int], None]:
    left = [limit]

    def sink(count: int) -> None:
        take = min(left[0], count)
        if take:
            writer.append(take)
            left[0] -= take

    return sink


def simulate_bitonic_sort(sim: TraceSim, in_region: int, n_rows: int, in_rpb: int,
                          sort_rpb: int, cap: int) -> int:
    """Append the trace of :func:`oblivdp.osort.bitonic_sort`; returns the output region."""
    out = sim.region()
    if n_rows == 0:
        return out
    work = sim.region()
    n = max(next_pow2(n_rows), sort_rpb)
    cap = min(cap, n)
    batches = sim.scan(in_region, n_rows, in_rpb, cap)

    def loader(_w):
        next(batches, None)

    writer = SimWriter(sim, out, in_rpb)
    _external_bitonic(sim, work, n, cap, sort_rpb, loader, _sized_sink(writer, n_rows))
    writer.close()
    return out


@dataclass(frozen=True)
class SortShape:
    """Public parameters fixing a strict bucket sort's trace."""

    plan: BucketPlan
    capacity_rows: int


def simulate_bucket_sort(sim: TraceSim, in_region: int, n_rows: int, in_rpb: int,
                         shape: SortShape | None) -> int:
    """Append the trace of a strict bucket oblivious sort; returns the output region."""
    out = sim.region()
    if n_rows == 0:
        return out
    plan, cap = shape.plan, shape.capacity_rows
    Z, beta, rpb = plan.bucket_size, plan.n_buckets, plan.rows_per_block
    bpb = Z // rpb
    work = sim.region()

    batches = sim.scan(in_region, n_rows, in_rpb, Z // 2)
    for b in range(beta):
        next(batches, None)
        for i in range(bpb):
            sim.write(work, b * bpb + i)

    for levels in plan.level_groups(cap // Z):
        l0 = levels[0]
        span = sum(1 << lv for lv in levels)
        members = [sel << l0 for sel in range(1 << len(levels))]
        for base in range(beta):
            if base & span:
                continue
            ids = [base + m for m in members]
            for b in ids:
                for i in range(bpb):
                    sim.read(work, b * bpb + i)
            for b in ids:
                for i in range(bpb):
                    sim.write(work, b * bpb + i)

    bpc = cap // rpb

    def loader(w):
        for i in range(bpc):
            sim.read(work, w * bpc + i)

    writer = SimWriter(sim, out, in_rpb)
    _external_bitonic(sim, work, beta * Z, cap, rpb, loader, _sized_sink(writer, n_rows))
    writer.close()
    return out


# composite operators ------------------------------------------------------------------

def simulate_group_sort(first_region: int, in_region: int, n: int, rpb: int, out_rpb: int,
                        shape: SortShape | None, s: int, y_tilde: Sequence[float]) -> TraceLog:
    """Sort-based grouping: strict bucket sort, then a paced scan of the sorted table."""
    sim = TraceSim(first_region)
    sorted_region = simulate_bucket_sort(sim, in_region, n, rpb, shape)
    out = sim.region()
    _paced(sim, sorted_region, n, rpb, out, out_rpb, s, y_tilde)
    return sim.trace


def simulate_join(first_region: int, pk_region: int, n_pk: int, pk_rpb: int,
                  fk_region: int, n_fk: int, fk_rpb: int, combined_rpb: int, out_rpb: int,
                  shape: SortShape | None, s: int, y_tilde: Sequence[float]) -> TraceLog:
    """Join: concatenate, bucket sort, one scan writing a row per row, then the paced filter."""
    sim = TraceSim(first_region)
    combined = sim.region()
    w = SimWriter(sim, combined, combined_rpb)
    for region, n, rpb in ((pk_region, n_pk, pk_rpb), (fk_region, n_fk, fk_rpb)):
        for got in sim.scan(region, n, rpb, rpb):
            w.append(got)
    w.close()
    total = n_pk + n_fk
    sorted_region = simulate_bucket_sort(sim, combined, total, combined_rpb, shape)
    inter = sim.region()
    w = SimWriter(sim, inter, out_rpb)
    for got in sim.scan(sorted_region, total, combined_rpb, combined_rpb):
        w.append(got)
    w.close()
    out = sim.region()
    _paced(sim, inter, total, out_rpb, out, out_rpb, s, y_tilde)
    return sim.trace

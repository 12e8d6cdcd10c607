"""Block-transfer contracts, evaluated from a run's own parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass


def blocks(rows: int, rows_per_block: int) -> int:
    return -(-int(rows) // int(rows_per_block))


@dataclass(frozen=True)
class ComplexityReport:
    name: str
    measured: int
    bound: float
    exact: bool           # measured must equal the bound rather than stay below it

    @property
    def ratio(self) -> float:
        return self.measured / self.bound if self.bound else math.inf

    @property
    def passed(self) -> bool:
        return self.measured == self.bound if self.exact else self.measured <= self.bound

    def __str__(self) -> str:
        rel = "==" if self.exact else "<="
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: measured={self.measured} "
                f"{rel} bound={self.bound:.6g} (ratio {self.ratio:.3f})")


def filter_transfers(n: int, in_rpb: int, out_rows: int, out_rpb: int) -> int:
    """``(N + output) / B``: one read per input block, one write per output block."""
    return blocks(n, in_rpb) + blocks(out_rows, out_rpb)


def group_hash_transfers(n: int, in_rpb: int, k: int, m_groups: int, out_rpb: int) -> int:
    """``N/B + k (N + M_groups) / B``: sketch scan, k pass scans, k * M_groups rows out."""
    return (k + 1) * blocks(n, in_rpb) + blocks(k * m_groups, out_rpb)


def sort_shape(n_blocks: float) -> float:
    return n_blocks * math.log2(n_blocks) if n_blocks > 1 else 1.0


def fitted_sort_constant(transfers: int, n: int, rpb: int) -> float:
    """C such that transfers = C (N/B) log2(N/B)."""
    return transfers / sort_shape(n / rpb)


def join_bound(n: int, rpb: int, r: int, out_rpb: int, s: int, c: float = 8.0) -> float:
    """``C (N/B) log2(N/B) + (N + R)/B`` plus slack.

    The slack covers the filter's ``2 s`` padding rows and a few partial
    blocks: ``2 s / B + 4``.
    """
    nb = n / rpb
    return c * sort_shape(nb) + nb + r / out_rpb + 2 * s / out_rpb + 4


def assert_complexity(name: str, measured: int, bound: float, exact: bool = False) -> ComplexityReport:
    return ComplexityReport(name, int(measured), float(bound), exact)

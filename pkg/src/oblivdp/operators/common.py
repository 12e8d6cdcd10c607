"""Predicates, projections, the private FIFO, and DP-paced output writing."""
from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..memory import EnclaveEnv
from ..prefix_sum import PrefixSumOracle
from ..relational import FILLER_FIELD, Schema, Table, TableWriter, is_filler
from ..osort import compact_reals


# predicates -----------------------------------------------------------------

class Predicate:
    """Vectorised row predicate; evaluation never touches untrusted memory."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], text: str = "?"):
        self._fn = fn
        self.text = text

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(self._fn(rows), dtype=bool)

    def __and__(self, other: "Predicate") -> "Predicate":
        return Predicate(lambda r: self(r) & other(r), f"({self.text} AND {other.text})")

    def __or__(self, other: "Predicate") -> "Predicate":
        return Predicate(lambda r: self(r) | other(r), f"({self.text} OR {other.text})")

    def __invert__(self) -> "Predicate":
        return Predicate(lambda r: ~self(r), f"NOT {self.text}")

    def __repr__(self) -> str:
        return f"Predicate({self.text})"


class col:
    """Column reference for building predicates: ``col("pageRank") > 1000``."""

    def __init__(self, name: str):
        self.name = name

    def _cmp(self, op, sym, value) -> Predicate:
        if isinstance(value, str):
            value = value.encode("ascii")
        name = self.name
        return Predicate(lambda r: op(r[name], value), f"{name} {sym} {value!r}")

    def __gt__(self, v): return self._cmp(operator.gt, ">", v)
    def __ge__(self, v): return self._cmp(operator.ge, ">=", v)
    def __lt__(self, v): return self._cmp(operator.lt, "<", v)
    def __le__(self, v): return self._cmp(operator.le, "<=", v)
    def __eq__(self, v): return self._cmp(operator.eq, "==", v)  # type: ignore[override]
    def __ne__(self, v): return self._cmp(operator.ne, "!=", v)  # type: ignore[override]
    __hash__ = None  # type: ignore[assignment]


TRUE = Predicate(lambda r: np.ones(len(r), bool), "TRUE")
FALSE = Predicate(lambda r: np.zeros(len(r), bool), "FALSE")
NOT_FILLER = Predicate(lambda r: ~is_filler(r), "NOT FILLER")


class Projection:
    """Keep a subset of columns (all columns when ``columns`` is None)."""

    def __init__(self, schema: Schema, columns: Sequence[str] | None = None):
        self.source = schema
        names = schema.names if columns is None else list(columns)
        self.schema = Schema([(n, schema.column_type(n)) for n in names])

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        out = np.zeros(len(rows), dtype=self.schema.dtype)
        for n in self.schema.names + [FILLER_FIELD]:
            out[n] = rows[n]
        return out


# FIFO -------------------------------------------------------------------------

class FifoBuffer:
    """FIFO of rows in private memory with a nominal capacity.

    The buffer never refuses a push; the owner checks :attr:`excess` and
    converts it into immediate writes (see :class:`PacedOutput`).
    """

    def __init__(self, env: EnclaveEnv, schema: Schema, capacity: int, label: str = "fifo"):
        self.schema = schema
        self.capacity = int(capacity)
        self._rows = schema.empty()
        self._mem = env.reserve(self.capacity * schema.row_width_bytes, label)

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def excess(self) -> int:
        return max(0, len(self._rows) - self.capacity)

    def push(self, rows: np.ndarray) -> None:
        if len(rows):
            self._rows = np.concatenate([self._rows, rows])

    def pop(self, n: int) -> tuple[np.ndarray, int]:
        """Pop ``n`` rows; missing rows are replaced by fillers.  Returns (rows, n_fillers)."""
        n = max(0, int(n))
        head = self._rows[:n]
        self._rows = self._rows[n:]
        short = n - len(head)
        if short:
            head = np.concatenate([head, self.schema.fillers(short)])
        return head, short

    def replace(self, rows: np.ndarray) -> None:
        self._rows = rows

    def contents(self) -> np.ndarray:
        return self._rows

    def release(self) -> None:
        self._mem.release()


# DP-paced output ------------------------------------------------------------------

@dataclass
class PacingLog:
    """Everything the paced writer released or converted, in order."""

    s: int
    horizon: int
    positions: list[int] = field(default_factory=list)   # c after each batch
    y_tilde: list[float] = field(default_factory=list)   # released noisy prefix counts
    sizes: list[int] = field(default_factory=list)       # |output| after each batch
    final_size: int = 0
    overflow_rows: int = 0
    underflow_rows: int = 0
    final_excess_rows: int = 0

    @property
    def failures(self) -> int:
        return self.overflow_rows + self.underflow_rows + self.final_excess_rows

    @property
    def failed(self) -> bool:
        return self.failures > 0


class PacedOutput:
    """Writes rows to ``out`` at the pace dictated by noisy prefix counts.

    After each input batch the output grows to ``round(Y~_c) - s``; at the end
    it is completed to ``round(Y~_N) + s`` with fillers.  A FIFO of ``2 s`` rows
    absorbs the difference.  Rows that would overflow the FIFO are written at
    once and pops from an empty FIFO write fillers; both count as failures.

    In ``oblivious`` mode every input row pushes either itself or a filler, and
    the FIFO is compacted with a bitonic network before each pop, so private
    memory accesses do not depend on which rows matched.
    """

    def __init__(self, env: EnclaveEnv, out: Table, s: int, oracle: PrefixSumOracle,
                 oblivious: bool = False):
        self.env = env
        self.out = out
        self.s = int(s)
        self.oracle = oracle
        self.oblivious = oblivious
        self.fifo = FifoBuffer(env, out.schema, 2 * self.s, "paced fifo")
        self.writer = TableWriter(out, "paced writer")
        self.log = PacingLog(self.s, oracle.horizon)
        self.written = 0

    def _write(self, rows: np.ndarray) -> None:
        if len(rows):
            self.writer.append(rows)
            self.written += len(rows)

    def _compact(self) -> None:
        if self.oblivious:
            self.fifo.replace(compact_reals(self.fifo.contents(), self.env))

    def _pop_to(self, target: int) -> None:
        need = target - self.written
        if need <= 0:
            return
        if self.oblivious:
            rows, _ = self.fifo.pop(need)
            short = int(is_filler(rows).sum())
        else:
            rows, short = self.fifo.pop(need)
        self.log.underflow_rows += short
        self._write(rows)

    def _truncate(self) -> None:
        """Oblivious mode: cut the compacted FIFO back to its capacity.

        Excess real rows leave from the head, as in standard mode, so real rows
        keep their input order even when the buffer overflows.
        """
        if self.oblivious:
            rows = self.fifo.contents()
            excess = max(0, int((~is_filler(rows)).sum()) - self.fifo.capacity)
            self.fifo.replace(rows[excess:excess + self.fifo.capacity])
            self.log.overflow_rows += excess
            self._write(rows[:excess])

    def batch(self, pushed: np.ndarray, bits) -> None:
        """Account for one input batch: feed its indicator bits, push its rows, pop."""
        self.oracle.feed_many(bits)
        self.fifo.push(pushed)
        self.env.tick(len(bits))
        self._compact()
        c = self.oracle.items_consumed
        y = self.oracle.query(c)
        self._pop_to(int(round(y)) - self.s)
        self._truncate()
        if self.fifo.excess:
            rows, _ = self.fifo.pop(self.fifo.excess)
            self.log.overflow_rows += len(rows)
            self._write(rows)
        self.log.positions.append(c)
        self.log.y_tilde.append(y)
        self.log.sizes.append(self.written)

    def finish(self, tail: np.ndarray | None = None, tail_bits=()) -> PacingLog:
        """Flush: feed any remaining bits, then write the FIFO plus fillers."""
        if len(tail_bits):
            self.oracle.feed_many(tail_bits)
        if tail is not None:
            self.fifo.push(tail)
        self._compact()
        rows = self.fifo.contents()
        self.fifo.replace(rows[~is_filler(rows)])
        y = self.oracle.query(self.oracle.items_consumed)
        target = int(round(y)) + self.s
        remaining = len(self.fifo)
        rows, _ = self.fifo.pop(remaining)
        self._write(rows)
        if self.written > target:
            self.log.final_excess_rows = self.written - target
        else:
            self._write(self.out.schema.fillers(target - self.written))
        self.writer.close()
        self.fifo.release()
        self.log.y_tilde.append(y)
        self.log.final_size = self.written
        return self.log

"""Fixed-width tuples, schemas and block-batched table I/O.

Rows are numpy structured records.  Each schema carries a trailing one-byte
``_filler`` flag (1 = filler, 0 = real) that travels inside the encrypted block,
so the host cannot tell real rows from dummies.
"""
from __future__ import annotations

import csv
import functools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .memory import BlockAddr, EnclaveEnv

FILLER_FIELD = "_filler"
_ASCII_RE = re.compile(r"^ascii\((\d+)\)$")


class SchemaError(ValueError):
    pass


def _column_dtype(ctype: str) -> str:
    if ctype == "int64":
        return "<i8"
    m = _ASCII_RE.match(ctype)
    if m and int(m.group(1)) > 0:
        return f"S{int(m.group(1))}"
    raise SchemaError(f"unsupported column type {ctype!r}")


@dataclass(frozen=True)
class Schema:
    """Ordered ``(name, type)`` columns, type being ``int64`` or ``ascii(n)``."""

    columns: tuple[tuple[str, str], ...]

    def __init__(self, columns: Iterable[tuple[str, str]]):
        cols = tuple((str(n), str(t)) for n, t in columns)
        names = [n for n, _ in cols]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")
        if FILLER_FIELD in names:
            raise SchemaError(f"{FILLER_FIELD} is reserved")
        for _, t in cols:
            _column_dtype(t)
        object.__setattr__(self, "columns", cols)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    @functools.cached_property
    def dtype(self) -> np.dtype:
        fields = [(n, _column_dtype(t)) for n, t in self.columns]
        return np.dtype(fields + [(FILLER_FIELD, "u1")])

    @functools.cached_property
    def row_width_bytes(self) -> int:
        return self.dtype.itemsize

    def column_type(self, name: str) -> str:
        for n, t in self.columns:
            if n == name:
                return t
        raise SchemaError(f"no column {name!r}")

    def rows_per_block(self, block_size: int) -> int:
        rpb = block_size // self.row_width_bytes
        if rpb < 1:
            raise SchemaError(f"row width {self.row_width_bytes} exceeds block size {block_size}")
        return rpb

    def empty(self, n: int = 0) -> np.ndarray:
        return np.zeros(n, dtype=self.dtype)

    def fillers(self, n: int) -> np.ndarray:
        rows = np.zeros(n, dtype=self.dtype)
        rows[FILLER_FIELD] = 1
        return rows

    def filler(self) -> np.void:
        return self.fillers(1)[0]

    def rows(self, records: Iterable[Sequence | dict], filler: bool = False) -> np.ndarray:
        """Build real (or filler) rows from tuples or dicts."""
        records = list(records)
        out = np.zeros(len(records), dtype=self.dtype)
        names = self.names
        for i, rec in enumerate(records):
            if isinstance(rec, dict):
                for n in names:
                    out[i][n] = _coerce(rec[n])
            else:
                if len(rec) != len(names):
                    raise SchemaError(f"expected {len(names)} values, got {len(rec)}")
                for n, v in zip(names, rec):
                    out[i][n] = _coerce(v)
        out[FILLER_FIELD] = 1 if filler else 0
        return out

    def row(self, *values) -> np.void:
        return self.rows([values])[0]

    def check(self, rows: np.ndarray) -> np.ndarray:
        if rows.dtype != self.dtype:
            raise SchemaError(f"row dtype {rows.dtype} does not match schema {self.dtype}")
        return rows


def _coerce(v):
    return v.encode("ascii") if isinstance(v, str) else v


def is_filler(rows: np.ndarray) -> np.ndarray:
    return rows[FILLER_FIELD] != 0


def real_rows(rows: np.ndarray) -> np.ndarray:
    return rows[~is_filler(rows)]


RANKINGS = Schema([
    ("pageURL", "ascii(100)"),
    ("pageRank", "int64"),
    ("avgDuration", "int64"),
])

USERVISITS = Schema([
    ("sourceIP", "ascii(16)"),
    ("destURL", "ascii(100)"),
    ("visitDate", "int64"),
    ("adRevenue", "int64"),
    ("userAgent", "ascii(64)"),
    ("countryCode", "ascii(3)"),
    ("languageCode", "ascii(6)"),
    ("searchWord", "ascii(32)"),
    ("duration", "int64"),
])


class Table:
    """A table stored block-by-block in one untrusted region."""

    def __init__(self, env: EnclaveEnv, schema: Schema, region: int | None = None,
                 row_count: int = 0, label: str = ""):
        self.env = env
        self.schema = schema
        self.region = env.alloc_region(0, label) if region is None else region
        self.row_count = row_count
        self.rows_per_block = schema.rows_per_block(env.block_size_bytes)

    def __len__(self) -> int:
        return self.row_count

    def __repr__(self) -> str:
        return f"Table(region={self.region}, rows={self.row_count}, rpb={self.rows_per_block})"

    @property
    def n_blocks(self) -> int:
        return math.ceil(self.row_count / self.rows_per_block)

    # block codec ----------------------------------------------------------
    def encode_block(self, rows: np.ndarray) -> bytes:
        rpb = self.rows_per_block
        if len(rows) < rpb:
            rows = np.concatenate([rows, self.schema.fillers(rpb - len(rows))])
        raw = rows.tobytes()
        return raw + bytes(self.env.block_size_bytes - len(raw))

    def decode_block(self, data: bytes) -> np.ndarray:
        width = self.schema.row_width_bytes
        return np.frombuffer(data[: self.rows_per_block * width], dtype=self.schema.dtype).copy()

    # traced access ----------------------------------------------------------
    def read_block(self, index: int) -> np.ndarray:
        return self.decode_block(self.env.read_block(BlockAddr(self.region, index)))

    def write_block(self, index: int, rows: np.ndarray) -> None:
        self.env.write_block(BlockAddr(self.region, index), self.encode_block(rows))

    # data-owner access (untraced) ---------------------------------------------
    @classmethod
    def from_rows(cls, env: EnclaveEnv, schema: Schema, rows: np.ndarray, label: str = "") -> "Table":
        """Upload rows as the data owner would; the upload is not observed."""
        schema.check(rows)
        t = cls(env, schema, label=label)
        rpb = t.rows_per_block
        for b in range(math.ceil(len(rows) / rpb)):
            env.upload(t.region, b, t.encode_block(rows[b * rpb:(b + 1) * rpb]))
        t.row_count = len(rows)
        return t

    def to_rows(self, keep_fillers: bool = True) -> np.ndarray:
        """Download and decrypt the whole table without tracing it."""
        parts = [self.decode_block(self.env.download(self.region, b)) for b in range(self.n_blocks)]
        rows = np.concatenate(parts)[: self.row_count] if parts else self.schema.empty()
        return rows if keep_fillers else real_rows(rows)


class TableWriter:
    """Sequential whole-block appender.

    Rows accumulate in a one-block private staging area; only full blocks are
    written until :meth:`close`, which pads the last block with fillers.
    """

    def __init__(self, table: Table, label: str = "writer"):
        self.table = table
        self.env = table.env
        rpb = table.rows_per_block
        self._buf = self.env.reserve(rpb * table.schema.row_width_bytes, label)
        self._next_block = table.row_count // rpb
        tail = table.row_count % rpb
        self._pending = table.read_block(self._next_block)[:tail] if tail else table.schema.empty()
        self.closed = False

    def append(self, rows: np.ndarray) -> None:
        if self.closed:
            raise ValueError("writer is closed")
        t = self.table
        t.schema.check(rows)
        if len(rows) == 0:
            return
        rpb = t.rows_per_block
        rows = np.concatenate([self._pending, rows]) if len(self._pending) else rows
        n_full = len(rows) // rpb
        for i in range(n_full):
            t.write_block(self._next_block, rows[i * rpb:(i + 1) * rpb])
            self._next_block += 1
        self._pending = rows[n_full * rpb:].copy()
        t.row_count = (self._next_block * rpb) + len(self._pending)

    def close(self) -> Table:
        if not self.closed:
            if len(self._pending):
                self.table.write_block(self._next_block, self._pending)
                self._next_block += 1
                self._pending = self.table.schema.empty()
            self._buf.release()
            self.closed = True
        return self.table

    def __enter__(self) -> "TableWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def table_append_batched(env: EnclaveEnv, table: Table, rows: np.ndarray) -> None:
    if table.env is not env:
        raise ValueError("table belongs to another env")
    with TableWriter(table) as w:
        w.append(rows)


def table_scan_batched(env: EnclaveEnv, table: Table, s: int, label: str = "scan") -> Iterator[np.ndarray]:
    """Yield the table in batches of ``s`` rows.

    Blocks are read in order, each exactly once, on demand; the batch buffer of
    ``s`` rows (plus one staging block) is charged to private memory.
    """
    if table.env is not env:
        raise ValueError("table belongs to another env")
    s = int(s)
    if s < 1:
        raise ValueError("batch size must be positive")
    width = table.schema.row_width_bytes
    rpb = table.rows_per_block
    with env.reserve((s + rpb) * width, label):
        n = table.row_count
        block = 0
        staged = table.schema.empty()
        pos = 0
        while pos < n:
            want = min(s, n - pos)
            while len(staged) < want:
                rows = table.read_block(block)
                take = min(rpb, n - block * rpb)
                staged = np.concatenate([staged, rows[:take]])
                block += 1
            yield staged[:want]
            staged = staged[want:]
            pos += want


def make_neighbor(table: Table, row_index: int, replacement=None, env: EnclaveEnv | None = None) -> Table:
    """Copy ``table`` with row ``row_index`` replaced (by a filler when ``replacement`` is None)."""
    if not 0 <= row_index < table.row_count:
        raise IndexError(f"row {row_index} outside table of {table.row_count} rows")
    rows = table.to_rows()
    if replacement is None:
        replacement = table.schema.filler()
    elif not isinstance(replacement, np.void):
        replacement = table.schema.rows([replacement])[0]
    rows[row_index] = replacement
    return Table.from_rows(env or table.env, table.schema, rows)


# CSV ------------------------------------------------------------------------

def rows_to_csv(schema: Schema, rows: np.ndarray, path, keep_fillers: bool = False) -> None:
    """Write rows as CSV to ``path`` (a filename or an open text stream)."""
    if hasattr(path, "write"):
        _write_csv(schema, rows, path, keep_fillers)
        return
    with open(path, "w", newline="") as fh:
        _write_csv(schema, rows, fh, keep_fillers)


def _write_csv(schema: Schema, rows: np.ndarray, fh, keep_fillers: bool) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(schema.names + (["is_filler"] if keep_fillers else []))
    for r in rows:
        fill = bool(r[FILLER_FIELD])
        if fill and not keep_fillers:
            continue
        vals = [_render(r[n]) for n in schema.names]
        w.writerow(vals + ([int(fill)] if keep_fillers else []))


def _render(v):
    if isinstance(v, bytes):
        return v.decode("ascii")
    return int(v)


def rows_from_csv(schema: Schema, path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        recs, flags = [], []
        for rec in reader:
            values = []
            for n, t in schema.columns:
                values.append(int(rec[n]) if t == "int64" else rec[n])
            recs.append(values)
            flags.append(int(rec.get("is_filler") or 0))
    rows = schema.rows(recs)
    if recs:
        rows[FILLER_FIELD] = flags
    return rows


def table_to_csv(table: Table, path, keep_fillers: bool = False) -> None:
    rows_to_csv(table.schema, table.to_rows(), path, keep_fillers)


def table_from_csv(env: EnclaveEnv, schema: Schema, path) -> Table:
    return Table.from_rows(env, schema, rows_from_csv(schema, path))

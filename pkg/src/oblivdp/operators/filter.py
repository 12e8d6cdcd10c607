"""Differentially oblivious selection with projection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..dp import BoundMode, PrivacyParams, estimate_buffer_bound
from ..memory import EnclaveEnv
from ..prefix_sum import PrefixSumOracle, draw_tape
from ..relational import Table, is_filler, table_scan_batched
from .common import PacedOutput, PacingLog, Predicate, Projection


@dataclass
class FilterResult:
    table: Table
    s: int
    log: PacingLog
    tape: np.ndarray
    input_rows: int
    matches: int  # true count R; kept for tests, never released

    @property
    def y_tilde(self) -> list[float]:
        return self.log.y_tilde

    @property
    def output_rows(self) -> int:
        return self.table.row_count


def resolve_s(params: PrivacyParams, n: int, rows_per_block: int, s: int | None = None,
              bound_mode: BoundMode | str = BoundMode.ANALYTIC, seed: int = 0) -> int:
    if s is not None:
        if s < 1:
            raise ValueError("s must be positive")
        return int(s)
    if n < 2:
        return rows_per_block
    return estimate_buffer_bound(params, n, bound_mode, rows_per_block, seed=seed).s


def do_filter(env: EnclaveEnv, table: Table, pred: Predicate, params: PrivacyParams,
              columns: Sequence[str] | None = None, mode: str = "standard", s: int | None = None,
              bound_mode: BoundMode | str = BoundMode.ANALYTIC, tape: np.ndarray | None = None,
              label: str = "filter") -> FilterResult:
    """Select rows matching ``pred`` and project them onto ``columns``.

    The input is read in batches of ``s`` rows; after each batch the output is
    grown to the noisy match count minus ``s``, and the final flush pads it to
    the noisy total plus ``s``.  Real rows keep their input order.

    ``tape`` pins the prefix-sum noise (for replay); otherwise it is drawn from
    the env's noise stream.  ``mode`` is ``"standard"`` or ``"oblivious"`` (the
    in-enclave-oblivious variant).
    """
    if mode not in ("standard", "oblivious"):
        raise ValueError(f"unknown mode {mode!r}")
    proj = Projection(table.schema, columns)
    N = table.row_count
    s = resolve_s(params, N, table.rows_per_block, s, bound_mode)
    horizon = max(N, 1)
    if tape is None:
        tape = draw_tape(env.rng("noise"), params, horizon)
    oracle = PrefixSumOracle(horizon, params, tape=tape)
    out = Table(env, proj.schema, label=f"{label} out")
    paced = PacedOutput(env, out, s, oracle, oblivious=(mode == "oblivious"))
    matches = 0
    for rows in table_scan_batched(env, table, s, label=f"{label} batch"):
        hit = pred(rows) & ~is_filler(rows)
        matches += int(hit.sum())
        if mode == "oblivious":
            pushed = proj(rows)
            pushed["_filler"] = np.where(hit, 0, 1)
        else:
            pushed = proj(rows[hit])
        paced.batch(pushed, hit.astype(np.int64))
    log = paced.finish()
    return FilterResult(out, s, log, tape, N, matches)

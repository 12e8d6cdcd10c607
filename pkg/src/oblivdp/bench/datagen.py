"""Synthetic Big-Data-Benchmark-style tables.

Rankings rows have unique page URLs; UserVisits rows point at those URLs and
carry a source IP whose first 8 characters (``"aaa.bbb."``) name the group.
The number of groups grows sublinearly with the row count unless a target is
given.
"""
from __future__ import annotations

import numpy as np

from ..memory import EnclaveEnv
from ..relational import RANKINGS, USERVISITS, Schema, Table

KINDS = ("rankings", "uservisits")


def default_groups(n: int) -> int:
    """Sublinear group count: about 2 * n**0.75."""
    return max(1, min(n, int(round(2 * n ** 0.75))))


def page_urls(ids: np.ndarray) -> np.ndarray:
    return np.char.add(b"http://site.example/p", np.char.zfill(ids.astype("S12"), 9))


def ip_prefixes(groups: np.ndarray) -> np.ndarray:
    hi, lo = np.divmod(groups.astype(np.int64), 1000)
    if (hi > 999).any():
        raise ValueError("group ids must be below 10**6")
    return np.char.add(np.char.add(np.char.add(np.char.zfill(hi.astype("S3"), 3), b"."),
                                   np.char.zfill(lo.astype("S3"), 3)), b".")


def rankings_rows(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, 1])
    rows = RANKINGS.empty(n)
    rows["pageURL"] = page_urls(np.arange(n))
    # heavy-tailed ranks; roughly a third exceed 1000
    rows["pageRank"] = np.minimum((rng.pareto(1.1, n) + 1) * 400, 10**7).astype(np.int64)
    rows["avgDuration"] = rng.integers(1, 100, n)
    return rows


def uservisits_rows(n: int, seed: int = 0, groups: int | None = None, n_pages: int | None = None) -> np.ndarray:
    rng = np.random.default_rng([seed, 2])
    rows = USERVISITS.empty(n)
    if n == 0:
        return rows
    g = default_groups(n) if groups is None else max(1, min(int(groups), n))
    # every group appears at least once, the rest are uniform
    gid = np.concatenate([np.arange(g), rng.integers(0, g, n - g)])
    rng.shuffle(gid)
    tail = rng.integers(0, 256, (n, 2))
    suffix = np.char.add(np.char.add(tail[:, 0].astype("S3"), b"."), tail[:, 1].astype("S3"))
    rows["sourceIP"] = np.char.add(ip_prefixes(gid), suffix)
    pages = n_pages if n_pages is not None else max(1, n)
    rows["destURL"] = page_urls(rng.integers(0, pages, n))
    rows["visitDate"] = rng.integers(20_000_000, 20_991_231, n)
    rows["adRevenue"] = rng.integers(1, 1000, n)
    rows["userAgent"] = b"Mozilla/5.0"
    rows["countryCode"] = rng.choice(np.array([b"USA", b"DEU", b"FRA", b"JPN", b"BRA"]), n)
    rows["languageCode"] = b"en-US"
    rows["searchWord"] = rng.choice(np.array([b"enclave", b"privacy", b"oblivious", b"sgx"]), n)
    return rows


def gen_rows(kind: str, n: int, seed: int = 0, groups: int | None = None,
             n_pages: int | None = None) -> tuple[Schema, np.ndarray]:
    kind = kind.lower()
    if kind == "rankings":
        return RANKINGS, rankings_rows(n, seed)
    if kind == "uservisits":
        return USERVISITS, uservisits_rows(n, seed, groups, n_pages)
    raise ValueError(f"unknown table kind {kind!r}; expected one of {KINDS}")


def gen_bdb(env: EnclaveEnv, kind: str, n: int, seed: int = 0, groups: int | None = None,
            n_pages: int | None = None) -> Table:
    """Generate and upload a table; identical arguments give identical tables."""
    schema, rows = gen_rows(kind, n, seed, groups, n_pages)
    return Table.from_rows(env, schema, rows, label=kind)


def distinct_prefixes(rows: np.ndarray, width: int = 8) -> int:
    return len(np.unique(rows["sourceIP"].astype(f"S{width}")))

"""Simulated enclave: bounded private memory over block-granular untrusted memory.

Everything an operator moves between the two sides goes through
:meth:`EnclaveEnv.read_block` / :meth:`EnclaveEnv.write_block`, which append one
event to the trace.  The trace records the kind of access and the block address,
never the contents; that is exactly what the access-pattern adversary sees.

Every explicit block transfer counts as one observable event.  Page swaps inside
a real enclave are not modelled separately.
"""
from __future__ import annotations

import contextlib
import enum
import hashlib
import json
import zlib
from array import array
from dataclasses import asdict, dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

KiB = 1024
MiB = 1024 * KiB

DEFAULT_BLOCK_SIZE = 4096
DEFAULT_PRIVATE_CAPACITY = 8 * MiB
NONCE_BYTES = 12


class MemoryModelError(Exception):
    """Base class for memory-model failures."""


class AddressError(MemoryModelError, IndexError):
    pass


class BlockSizeError(MemoryModelError, ValueError):
    pass


class IntegrityError(MemoryModelError):
    """A block failed AEAD verification (it was tampered with or moved)."""


class PrivateMemoryError(MemoryModelError):
    """An allocation would push private memory past its capacity."""


class CryptoMode(str, enum.Enum):
    AEAD = "aead"
    PLAINTEXT = "plaintext"  # for fast correctness tests only


class AccessKind(enum.IntEnum):
    READ = 0
    WRITE = 1


class BlockAddr(NamedTuple):
    region: int
    index: int


class TraceEvent(NamedTuple):
    seq: int
    kind: AccessKind
    addr: BlockAddr


class TraceLog:
    """Append-only sequence of (kind, region, index) events.

    The sequence number of an event is its position in the log.
    """

    def __init__(self) -> None:
        self._kinds = array("b")
        self._regions = array("q")
        self._indices = array("q")

    def append(self, kind: AccessKind, region: int, index: int) -> None:
        self._kinds.append(kind)
        self._regions.append(region)
        self._indices.append(index)

    def __len__(self) -> int:
        return len(self._kinds)

    def __iter__(self) -> Iterator[TraceEvent]:
        for seq, (k, r, i) in enumerate(zip(self._kinds, self._regions, self._indices)):
            yield TraceEvent(seq, AccessKind(k), BlockAddr(r, i))

    def __getitem__(self, seq: int) -> TraceEvent:
        if seq < 0:
            seq += len(self)
        return TraceEvent(seq, AccessKind(self._kinds[seq]),
                          BlockAddr(self._regions[seq], self._indices[seq]))

    def as_array(self) -> np.ndarray:
        """Return an ``(n, 3)`` int64 array of ``kind, region, index`` rows."""
        out = np.empty((len(self), 3), dtype=np.int64)
        if len(self):
            out[:, 0] = np.frombuffer(self._kinds, dtype=np.int8)
            out[:, 1] = np.frombuffer(self._regions, dtype=np.int64)
            out[:, 2] = np.frombuffer(self._indices, dtype=np.int64)
        return out

    def count(self, kind: AccessKind) -> int:
        return self._kinds.count(int(kind))

    def to_lines(self) -> list[str]:
        """Export as ``seq,kind,region,index`` records."""
        names = {AccessKind.READ: "R", AccessKind.WRITE: "W"}
        return [f"{e.seq},{names[e.kind]},{e.addr.region},{e.addr.index}" for e in self]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")

    @classmethod
    def from_lines(cls, lines) -> "TraceLog":
        log = cls()
        for line in lines:
            line = line.strip()
            if not line:
                continue
            _, kind, region, index = line.split(",")
            log.append(AccessKind.READ if kind == "R" else AccessKind.WRITE, int(region), int(index))
        return log


EMPTY_TRACE_DIGEST = hashlib.sha256(b"").hexdigest()


def trace_fingerprint(trace: TraceLog) -> str:
    """Canonical SHA-256 digest of the (kind, region, index) sequence."""
    if len(trace) == 0:
        return EMPTY_TRACE_DIGEST
    return hashlib.sha256(trace.as_array().astype("<i8").tobytes()).hexdigest()


@dataclass
class CostCounters:
    blocks_read: int = 0
    blocks_written: int = 0
    bytes_encrypted: int = 0
    bytes_decrypted: int = 0
    bytes_copied_in: int = 0
    bytes_copied_out: int = 0
    compute_ticks: int = 0

    @property
    def transfers(self) -> int:
        return self.blocks_read + self.blocks_written

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def snapshot(self) -> "CostCounters":
        return CostCounters(**self.to_dict())

    def __sub__(self, other: "CostCounters") -> "CostCounters":
        a, b = self.to_dict(), other.to_dict()
        return CostCounters(**{k: a[k] - b[k] for k in a})


@dataclass
class _Reservation:
    label: str
    nbytes: int


class PrivateBuffer:
    """Handle for bytes reserved in private memory; release it or use ``with``."""

    def __init__(self, env: "EnclaveEnv", nbytes: int, label: str) -> None:
        self._env = env
        self.nbytes = nbytes
        self.label = label
        self.released = False

    def resize(self, nbytes: int) -> None:
        self._env._resize(self, nbytes)

    def release(self) -> None:
        if not self.released:
            self._env._release(self)
            self.released = True

    def __enter__(self) -> "PrivateBuffer":
        return self

    def __exit__(self, *exc) -> None:
        self.release()


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode())


@dataclass
class EnclaveEnv:
    """One simulated enclave with its untrusted memory, trace and counters.

    Single-owner: do not share an env across threads.
    """

    private_capacity_bytes: int = DEFAULT_PRIVATE_CAPACITY
    block_size_bytes: int = DEFAULT_BLOCK_SIZE
    crypto_mode: CryptoMode = CryptoMode.AEAD
    rng_seed: int = 0
    key: bytes | None = None
    trace: TraceLog = field(default_factory=TraceLog)
    counters: CostCounters = field(default_factory=CostCounters)

    def __post_init__(self) -> None:
        self.crypto_mode = CryptoMode(self.crypto_mode)
        if self.block_size_bytes < 2:
            raise BlockSizeError("block size must be at least 2 bytes")
        if self.key is None:
            self.key = self.rng("aead-key").bytes(16)
        if len(self.key) != 16:
            raise ValueError("AEAD key must be 128 bits")
        self._aead = AESGCM(self.key)
        self._nonce_rng = self.rng("nonce")
        self._regions: list[list[bytes | None]] = []
        self._region_labels: list[str] = []
        self._reservations: set[PrivateBuffer] = set()
        self.private_in_use = 0
        self.peak_private = 0

    # randomness -----------------------------------------------------------
    def rng(self, purpose: str) -> np.random.Generator:
        """Independent generator for one purpose, derived from the run seed.

        Keeping purposes on separate streams means the number of draws made for
        one purpose (say, nonces) never shifts the draws of another (noise).
        """
        return np.random.default_rng([int(self.rng_seed), _purpose_code(purpose)])

    # private memory -------------------------------------------------------
    def reserve(self, nbytes: int, label: str = "") -> PrivateBuffer:
        nbytes = int(nbytes)
        if nbytes < 0:
            raise ValueError("negative reservation")
        self._check_room(nbytes, label)
        buf = PrivateBuffer(self, nbytes, label)
        self._reservations.add(buf)
        self.private_in_use += nbytes
        self.peak_private = max(self.peak_private, self.private_in_use)
        return buf

    def _check_room(self, extra: int, label: str) -> None:
        if self.private_in_use + extra > self.private_capacity_bytes:
            raise PrivateMemoryError(
                f"reserving {extra} bytes for {label or 'buffer'} exceeds private capacity "
                f"({self.private_in_use} of {self.private_capacity_bytes} in use)")

    def _resize(self, buf: PrivateBuffer, nbytes: int) -> None:
        delta = int(nbytes) - buf.nbytes
        if delta > 0:
            self._check_room(delta, buf.label)
        buf.nbytes = int(nbytes)
        self.private_in_use += delta
        self.peak_private = max(self.peak_private, self.private_in_use)

    def _release(self, buf: PrivateBuffer) -> None:
        self._reservations.discard(buf)
        self.private_in_use -= buf.nbytes

    @property
    def private_free(self) -> int:
        return self.private_capacity_bytes - self.private_in_use

    # untrusted memory -----------------------------------------------------
    def alloc_region(self, n_blocks: int = 0, label: str = "") -> int:
        """Allocate a region of zero-initialised blocks; returns its id."""
        self._regions.append([None] * int(n_blocks))
        self._region_labels.append(label)
        return len(self._regions) - 1

    @property
    def n_regions(self) -> int:
        return len(self._regions)

    def region_blocks(self, region: int) -> int:
        return len(self._regions[region])

    def _slot(self, addr: BlockAddr, writing: bool) -> list:
        region, index = addr
        if not 0 <= region < len(self._regions):
            raise AddressError(f"no region {region}")
        blocks = self._regions[region]
        limit = len(blocks) + (1 if writing else 0)
        if not 0 <= index < limit:
            raise AddressError(f"block {index} outside region {region} ({len(blocks)} blocks)")
        return blocks

    def _aad(self, region: int, index: int) -> bytes:
        return region.to_bytes(8, "little") + index.to_bytes(8, "little")

    def read_block(self, addr: BlockAddr | tuple[int, int]) -> bytes:
        region, index = addr
        blocks = self._slot(BlockAddr(region, index), writing=False)
        self.trace.append(AccessKind.READ, region, index)
        c = self.counters
        c.blocks_read += 1
        c.bytes_copied_in += self.block_size_bytes
        stored = blocks[index]
        if stored is None:
            return bytes(self.block_size_bytes)
        if self.crypto_mode is CryptoMode.PLAINTEXT:
            return stored
        c.bytes_decrypted += self.block_size_bytes
        try:
            return self._aead.decrypt(stored[:NONCE_BYTES], stored[NONCE_BYTES:], self._aad(region, index))
        except InvalidTag as exc:
            raise IntegrityError(f"block ({region}, {index}) failed authentication") from exc

    def write_block(self, addr: BlockAddr | tuple[int, int], plaintext: bytes) -> None:
        region, index = addr
        if len(plaintext) != self.block_size_bytes:
            raise BlockSizeError(f"block must be {self.block_size_bytes} bytes, got {len(plaintext)}")
        blocks = self._slot(BlockAddr(region, index), writing=True)
        self.trace.append(AccessKind.WRITE, region, index)
        c = self.counters
        c.blocks_written += 1
        c.bytes_copied_out += self.block_size_bytes
        if self.crypto_mode is CryptoMode.AEAD:
            c.bytes_encrypted += self.block_size_bytes
            nonce = self._nonce_rng.bytes(NONCE_BYTES)
            stored = nonce + self._aead.encrypt(nonce, bytes(plaintext), self._aad(region, index))
        else:
            stored = bytes(plaintext)
        if index == len(blocks):
            blocks.append(stored)
        else:
            blocks[index] = stored

    def tick(self, n: int = 1) -> None:
        self.counters.compute_ticks += int(n)

    # client-side access (not observed, not counted) -------------------------
    def upload(self, region: int, index: int, plaintext: bytes) -> None:
        """Data-owner upload: store a block without tracing it."""
        saved_trace, saved_counters = self.trace, self.counters
        self.trace, self.counters = TraceLog(), CostCounters()
        try:
            self.write_block(BlockAddr(region, index), plaintext)
        finally:
            self.trace, self.counters = saved_trace, saved_counters

    def download(self, region: int, index: int) -> bytes:
        """Data-owner download: fetch and decrypt a block without tracing it."""
        saved_trace, saved_counters = self.trace, self.counters
        self.trace, self.counters = TraceLog(), CostCounters()
        try:
            return self.read_block(BlockAddr(region, index))
        finally:
            self.trace, self.counters = saved_trace, saved_counters

    def stored_bytes(self, addr: BlockAddr) -> bytes | None:
        """Raw stored representation of a block (ciphertext in AEAD mode)."""
        return self._regions[addr.region][addr.index]

    def tamper(self, addr: BlockAddr, bit: int) -> None:
        """Flip one bit of the stored block, as a malicious host would."""
        blocks = self._slot(addr, writing=False)
        stored = blocks[addr.index]
        if stored is None:
            raise AddressError("cannot tamper with an unwritten block")
        raw = bytearray(stored)
        raw[bit // 8] ^= 1 << (bit % 8)
        blocks[addr.index] = bytes(raw)

    @contextlib.contextmanager
    def untraced(self):
        """Suspend tracing and counting (verification harness only)."""
        saved_trace, saved_counters = self.trace, self.counters
        self.trace, self.counters = TraceLog(), CostCounters()
        try:
            yield
        finally:
            self.trace, self.counters = saved_trace, saved_counters

    def reset_observations(self) -> None:
        self.trace = TraceLog()
        self.counters = CostCounters()

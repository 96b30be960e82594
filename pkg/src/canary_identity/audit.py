"""Append-only, hash-chained audit log.

Every record carries the identity hash that was current when it was written,
so reconstructing "which agent wrote this" is a lookup rather than a replay.
Each record's digest covers its predecessor's digest; editing any record
after the fact breaks the chain at that record.
"""

from __future__ import annotations

import enum
import hashlib
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator, List, Optional, TextIO, Union

from .encoding import length_prefixed

GENESIS_DIGEST = bytes(32)


class AuditKind(str, enum.Enum):
    TRANSITION = "transition"
    REKEY = "rekey"
    ROLLBACK_REASON = "rollback_reason"
    SYNTHETIC_RESTART_ROLLBACK = "synthetic_restart_rollback"


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    prev_digest: bytes
    kind: AuditKind
    payload: str
    identity_at_write: bytes
    timestamp: datetime
    self_digest: bytes

    @property
    def identity_hex(self) -> str:
        return self.identity_at_write.hex()

    def to_line(self) -> str:
        # payload is the only free-text field; commas/newlines are escaped
        payload = self.payload.replace("\\", "\\\\").replace(",", "\\,").replace("\n", "\\n")
        return ",".join(
            [
                str(self.seq),
                self.prev_digest.hex(),
                self.kind.value,
                payload,
                self.identity_at_write.hex(),
                self.timestamp.isoformat(),
                self.self_digest.hex(),
            ]
        )


def record_digest(
    seq: int,
    prev_digest: bytes,
    kind: AuditKind,
    payload: str,
    identity: bytes,
    timestamp: datetime,
) -> bytes:
    encoded = length_prefixed(
        str(seq),
        prev_digest,
        AuditKind(kind).value,
        payload,
        identity,
        timestamp.isoformat(),
    )
    return hashlib.sha256(encoded).digest()


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


class AuditChain:
    """In-memory audit chain.

    Appends are serialized by the caller's exclusion region in normal use; a
    private lock makes direct appends from multiple threads safe as well.
    """

    def __init__(self, clock: Optional[Callable[[], datetime]] = None) -> None:
        self._records: List[AuditRecord] = []
        self._clock = clock or _utc_now
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[AuditRecord]:
        return iter(list(self._records))

    def __getitem__(self, idx: int) -> AuditRecord:
        return self._records[idx]

    @property
    def records(self) -> List[AuditRecord]:
        return list(self._records)

    @property
    def head_digest(self) -> bytes:
        return self._records[-1].self_digest if self._records else GENESIS_DIGEST

    def append(self, kind: AuditKind, payload: str, identity: Union[bytes, "object"]) -> AuditRecord:
        identity_bytes = _identity_bytes(identity)
        kind = AuditKind(kind)
        with self._lock:
            seq = len(self._records)
            prev = self.head_digest
            ts = self._clock()
            if ts.tzinfo is None:
                raise ValueError("audit timestamps must be timezone-aware")
            digest = record_digest(seq, prev, kind, payload, identity_bytes, ts)
            record = AuditRecord(seq, prev, kind, payload, identity_bytes, ts, digest)
            self._records.append(record)
        return record

    def verify(self) -> Optional[int]:
        return verify_chain(self)

    def query_by_identity(self, identity) -> List[AuditRecord]:
        return query_by_identity(self, identity)

    def export(self, dest: Union[str, Path, TextIO]) -> None:
        """Write one ``seq,prev_hex,kind,payload,identity_hex,timestamp_iso,self_hex`` line per record."""
        lines = "".join(r.to_line() + "\n" for r in self._records)
        if isinstance(dest, (str, Path)):
            Path(dest).write_text(lines, encoding="utf-8")
        else:
            dest.write(lines)


def _identity_bytes(identity) -> bytes:
    if isinstance(identity, (bytes, bytearray)):
        raw = bytes(identity)
    elif isinstance(identity, str):
        raw = bytes.fromhex(identity)
    else:
        raw = bytes(identity.digest)
    if len(raw) != 32:
        raise ValueError(f"identity digest must be 32 bytes, got {len(raw)}")
    return raw


def verify_chain(chain: AuditChain) -> Optional[int]:
    """Return ``None`` if the chain is intact, else the first inconsistent seq."""
    prev = GENESIS_DIGEST
    for idx, rec in enumerate(chain.records):
        if rec.seq != idx or rec.prev_digest != prev:
            return idx
        expected = record_digest(
            rec.seq, rec.prev_digest, rec.kind, rec.payload, rec.identity_at_write, rec.timestamp
        )
        if expected != rec.self_digest:
            return idx
        prev = rec.self_digest
    return None


def query_by_identity(chain: AuditChain, identity) -> List[AuditRecord]:
    target = _identity_bytes(identity)
    return [r for r in chain.records if r.identity_at_write == target]

"""Length-prefixed byte encoding shared by the manifest and audit digests."""

from __future__ import annotations

import struct
from typing import Union

Field = Union[bytes, str]


def encode_field(value: Field) -> bytes:
    raw = value.encode("utf-8") if isinstance(value, str) else bytes(value)
    return struct.pack(">I", len(raw)) + raw


def length_prefixed(*fields: Field) -> bytes:
    """Concatenate fields as ``len(4 bytes, big-endian) || bytes``.

    Prefixing every field keeps ``"ab" + "c"`` and ``"a" + "bc"`` distinct.
    """
    return b"".join(encode_field(f) for f in fields)

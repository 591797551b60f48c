"""TLS record layer: protocol detection and record framing over a byte stream.

Works on reassembled per-direction TCP streams. Records that span several
TCP segments are joined here; each record remembers the capture position
(timestamp, packet index) of its first payload byte so flows can be ordered
across directions later.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

CCS = 20
ALERT = 21
HANDSHAKE = 22
APPDATA = 23

_CONTENT_TYPES = frozenset({CCS, ALERT, HANDSHAKE, APPDATA})

# wire value reported for an SSLv2-framed ClientHello record
SSL2_VERSION = 0x0002

_HEADER_LEN = 5


@dataclass
class StreamView:
    """One direction's reassembled bytes with capture-position markers."""

    data: bytearray = field(default_factory=bytearray)
    mark_offsets: list[int] = field(default_factory=list)
    mark_stamps: list[tuple[float, int]] = field(default_factory=list)

    def append(self, chunk: bytes, ts: float, pkt_idx: int) -> None:
        self.mark_offsets.append(len(self.data))
        self.mark_stamps.append((ts, pkt_idx))
        self.data.extend(chunk)

    def stamp(self, offset: int) -> tuple[float, int]:
        """Capture position of the segment that delivered byte ``offset``."""
        if not self.mark_offsets:
            return (0.0, 0)
        i = bisect.bisect_right(self.mark_offsets, offset) - 1
        return self.mark_stamps[max(i, 0)]


@dataclass(frozen=True)
class TlsRecord:
    content_type: int
    record_version: int
    payload: bytes
    at: tuple[float, int]


def detect_tls(prefix: bytes) -> bool:
    """Does this client-stream prefix look like the start of a TLS session?"""
    if len(prefix) < 3:
        return False
    if prefix[0] == HANDSHAKE:
        return prefix[1] == 0x03 and prefix[2] <= 0x04
    # SSLv2-compatible ClientHello: 2-byte length with the high bit set,
    # then message type 1 (CLIENT-HELLO)
    return bool(prefix[0] & 0x80) and prefix[2] == 0x01


def iter_records(view: StreamView) -> tuple[list[TlsRecord], bool]:
    """All complete TLS records in the stream and whether it ends mid-record.

    An undecodable remainder (bad content type or version) also counts as
    truncation: the stream could not be consumed cleanly.
    """
    data = bytes(view.data)
    out: list[TlsRecord] = []
    pos = 0

    if data and data[0] & 0x80:
        # SSLv2 framing for the first record only
        if len(data) < 3:
            return out, True
        length = ((data[0] & 0x7F) << 8) | data[1]
        if len(data) < 2 + length:
            return out, True
        out.append(
            TlsRecord(HANDSHAKE, SSL2_VERSION, data[2 : 2 + length], view.stamp(0))
        )
        pos = 2 + length

    while pos < len(data):
        if pos + _HEADER_LEN > len(data):
            return out, True
        ctype = data[pos]
        version = (data[pos + 1] << 8) | data[pos + 2]
        length = (data[pos + 3] << 8) | data[pos + 4]
        if ctype not in _CONTENT_TYPES or data[pos + 1] != 0x03 or data[pos + 2] > 0x04:
            return out, True
        body_start = pos + _HEADER_LEN
        if body_start + length > len(data):
            return out, True
        out.append(
            TlsRecord(
                ctype,
                version,
                data[body_start : body_start + length],
                view.stamp(body_start if length else pos),
            )
        )
        pos = body_start + length
    return out, False


def split_records(
    records: list[TlsRecord],
) -> tuple[list[TlsRecord], list[TlsRecord], list[TlsRecord]]:
    """Route records by content type: (handshake, appdata, alerts).

    Change-cipher-spec records carry no information we use and are dropped.
    """
    handshake = [r for r in records if r.content_type == HANDSHAKE]
    appdata = [r for r in records if r.content_type == APPDATA]
    alerts = [r for r in records if r.content_type == ALERT]
    return handshake, appdata, alerts


def build_record(content_type: int, version: int, payload: bytes) -> bytes:
    """Frame one TLS record (the inverse of iter_records for tests/synthesis)."""
    if len(payload) > 0xFFFF:
        raise ValueError("record payload exceeds 2^16 - 1 bytes")
    header = bytes(
        (content_type, (version >> 8) & 0xFF, version & 0xFF)
    ) + len(payload).to_bytes(2, "big")
    return header + payload

"""Writing classic pcap files: the inverse of the ingest path.

Used by tests and by the synthetic-scenario pcap emitter. Only the pieces
the reader understands are produced (Ethernet or raw-IP frames, IPv4, TCP),
but timestamps, byte order, and fragmentation are all scriptable so the
reader can be exercised properly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .pcap import LINKTYPE_ETHERNET, LINKTYPE_RAW_IP

_CLIENT_MAC = bytes.fromhex("020000000001")
_SERVER_MAC = bytes.fromhex("020000000002")

FIN = 0x01
SYN = 0x02
RST = 0x04
PSH = 0x08
ACK = 0x10


def ipv4_tcp_frame(
    src: str,
    dst: str,
    sport: int,
    dport: int,
    seq: int,
    ack: int,
    flags: int,
    payload: bytes = b"",
    ethernet: bool = True,
) -> bytes:
    tcp = struct.pack(
        ">HHIIBBHHH",
        sport,
        dport,
        seq & 0xFFFFFFFF,
        ack & 0xFFFFFFFF,
        5 << 4,
        flags,
        0xFFFF,  # window
        0,  # checksum (not validated by the reader)
        0,
    ) + payload
    total = 20 + len(tcp)
    ip = struct.pack(
        ">BBHHHBBH4s4s",
        0x45,
        0,
        total,
        0,
        0,  # no fragmentation
        64,
        6,  # TCP
        0,
        _ip4(src),
        _ip4(dst),
    ) + tcp
    if not ethernet:
        return ip
    return _SERVER_MAC + _CLIENT_MAC + b"\x08\x00" + ip


def _ip4(addr: str) -> bytes:
    return bytes(int(part) for part in addr.split("."))


def write_pcap(
    frames: list[tuple[float, bytes]],
    linktype: int = LINKTYPE_ETHERNET,
    nanosecond: bool = False,
    big_endian: bool = False,
) -> bytes:
    endian = ">" if big_endian else "<"
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    divisor = 1e9 if nanosecond else 1e6
    out = bytearray(
        struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, 0x40000, linktype)
    )
    for ts, frame in frames:
        sec = int(ts)
        frac = round((ts - sec) * divisor)
        out += struct.pack(endian + "IIII", sec, frac, len(frame), len(frame))
        out += frame
    return bytes(out)


@dataclass
class FlowScript:
    """Byte-level script of one TCP connection.

    ``c()`` and ``s()`` queue application bytes in each direction; segments
    are emitted with the three-way handshake first and a FIN exchange last.
    ``fragment`` splits a send into fixed-size TCP segments and ``repeat``
    emits the same segment again (a retransmission).
    """

    client: tuple[str, int] = ("10.0.0.1", 49152)
    server: tuple[str, int] = ("192.0.2.10", 443)
    start_ts: float = 1.0
    step: float = 0.001
    isn_client: int = 0x1000
    isn_server: int = 0x2000
    ethernet: bool = True
    _sends: list[tuple[str, bytes, int | None, bool]] = field(default_factory=list)

    def c(self, data: bytes, fragment: int | None = None, repeat: bool = False) -> "FlowScript":
        self._sends.append(("c", data, fragment, repeat))
        return self

    def s(self, data: bytes, fragment: int | None = None, repeat: bool = False) -> "FlowScript":
        self._sends.append(("s", data, fragment, repeat))
        return self

    def segments(self, with_fin: bool = True) -> list[tuple[float, bytes]]:
        frames: list[tuple[float, bytes]] = []
        ts = self.start_ts
        seq = {"c": self.isn_client, "s": self.isn_server}

        def emit(direction: str, flags: int, payload: bytes = b"") -> None:
            nonlocal ts
            if direction == "c":
                src, dst = self.client, self.server
                ack = seq["s"]
            else:
                src, dst = self.server, self.client
                ack = seq["c"]
            frames.append(
                (
                    ts,
                    ipv4_tcp_frame(
                        src[0], dst[0], src[1], dst[1],
                        seq[direction], ack, flags, payload,
                        ethernet=self.ethernet,
                    ),
                )
            )
            ts += self.step

        emit("c", SYN)
        seq["c"] += 1
        emit("s", SYN | ACK)
        seq["s"] += 1
        emit("c", ACK)

        for direction, data, fragment, repeat in self._sends:
            size = fragment or len(data) or 1
            chunks = [data[i : i + size] for i in range(0, len(data), size)] or [b""]
            for chunk in chunks:
                if not chunk:
                    continue
                emit(direction, PSH | ACK, chunk)
                if repeat:  # retransmit the identical segment
                    emit(direction, PSH | ACK, chunk)
                seq[direction] += len(chunk)

        if with_fin:
            emit("c", FIN | ACK)
            seq["c"] += 1
            emit("s", FIN | ACK)
            seq["s"] += 1
            emit("c", ACK)
        return frames


def build_pcap(
    scripts: list[FlowScript],
    nanosecond: bool = False,
    big_endian: bool = False,
) -> bytes:
    """One pcap containing every script's segments, merged in time order."""
    frames: list[tuple[float, bytes]] = []
    for script in scripts:
        frames.extend(script.segments())
    frames.sort(key=lambda f: f[0])
    ethernet = scripts[0].ethernet if scripts else True
    if any(s.ethernet != ethernet for s in scripts):
        raise ValueError("all scripts in one capture must share a link type")
    return write_pcap(
        frames,
        linktype=LINKTYPE_ETHERNET if ethernet else LINKTYPE_RAW_IP,
        nanosecond=nanosecond,
        big_endian=big_endian,
    )

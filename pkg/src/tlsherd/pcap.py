"""Classic pcap reading, TCP reassembly, and TLS flow assembly.

Reads classic pcap in either byte order (microsecond and nanosecond
variants) over Ethernet or raw-IP link layers. Reassembly handles in-order
delivery, exact duplicate retransmissions, and modest out-of-order windows;
overlapping rewrites keep the first writer's bytes. IP fragments and
pcapng are out of scope.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field, replace

from .certs import classify_chain, parse_leaf
from .handshake import (
    MSG_CERTIFICATE,
    MSG_CLIENT_HELLO,
    MSG_NEW_SESSION_TICKET,
    MSG_SERVER_HELLO,
    ParseError,
    iter_messages,
    parse_certificate,
    parse_client_hello,
    parse_new_session_ticket,
    parse_server_hello,
)
from .model import (
    AppDataSequenceRaw,
    CertificateChain,
    ChainOwner,
    Direction,
    FlowKey,
    PacketRecord,
    SourceKind,
    TlsFlow,
    TlsVersion,
    TraceMeta,
    version_from_wire,
)
from .records import SSL2_VERSION, StreamView, detect_tls, iter_records, split_records

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IP = 101

_MAGIC_US_LE = 0xA1B2C3D4
_MAGIC_US_BE = 0xD4C3B2A1
_MAGIC_NS_LE = 0xA1B23C4D
_MAGIC_NS_BE = 0x4D3CB2A1

_FIN = 0x01
_SYN = 0x02
_RST = 0x04

_PENDING_CAP = 64


class PcapError(ValueError):
    """The file is not a readable classic pcap."""


def read_pcap(data: bytes) -> tuple[int, list[tuple[float, bytes]]]:
    """(linktype, [(timestamp_seconds, frame bytes)]) from classic pcap bytes."""
    if len(data) < 24:
        raise PcapError("file shorter than a pcap global header")
    magic = struct.unpack("<I", data[:4])[0]
    if magic == _MAGIC_US_LE:
        endian, divisor = "<", 1e6
    elif magic == _MAGIC_NS_LE:
        endian, divisor = "<", 1e9
    elif magic == _MAGIC_US_BE:
        endian, divisor = ">", 1e6
    elif magic == _MAGIC_NS_BE:
        endian, divisor = ">", 1e9
    else:
        raise PcapError(f"not a classic pcap file (magic 0x{magic:08x})")
    linktype = struct.unpack(endian + "I", data[20:24])[0]
    if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW_IP):
        raise PcapError(
            f"unsupported link type {linktype}; expected Ethernet (1) or raw IP (101)"
        )
    frames: list[tuple[float, bytes]] = []
    pos = 24
    header = struct.Struct(endian + "IIII")
    while pos + 16 <= len(data):
        sec, frac, incl, _orig = header.unpack_from(data, pos)
        pos += 16
        if pos + incl > len(data):
            break  # truncated capture tail
        frames.append((sec + frac / divisor, data[pos : pos + incl]))
        pos += incl
    return linktype, frames


# ---------------------------------------------------------------------------
# frame -> TCP segment


@dataclass(frozen=True)
class TcpSegment:
    ts: float
    index: int
    src: str
    dst: str
    sport: int
    dport: int
    seq: int
    flags: int
    payload: bytes


def parse_frame(linktype: int, frame: bytes) -> TcpSegment | None:
    """TCP segment from one captured frame; None for anything else."""
    if linktype == LINKTYPE_ETHERNET:
        offset = 14
        if len(frame) < offset:
            return None
        ethertype = (frame[12] << 8) | frame[13]
        while ethertype in (0x8100, 0x88A8):  # 802.1Q / QinQ tag: TCI then type
            if len(frame) < offset + 4:
                return None
            ethertype = (frame[offset + 2] << 8) | frame[offset + 3]
            offset += 4
        if ethertype == 0x0800:
            return _parse_ipv4(frame, offset)
        if ethertype == 0x86DD:
            return _parse_ipv6(frame, offset)
        return None
    if not frame:
        return None
    nibble = frame[0] >> 4
    if nibble == 4:
        return _parse_ipv4(frame, 0)
    if nibble == 6:
        return _parse_ipv6(frame, 0)
    return None


def _parse_ipv4(frame: bytes, off: int) -> TcpSegment | None:
    if len(frame) < off + 20 or frame[off] >> 4 != 4:
        return None
    ihl = (frame[off] & 0x0F) * 4
    total = (frame[off + 2] << 8) | frame[off + 3]
    if ihl < 20 or len(frame) < off + ihl or total < ihl:
        return None
    frag = ((frame[off + 6] & 0x3F) << 8) | frame[off + 7]
    if frag:  # fragmented (MF set or nonzero offset): out of scope
        return None
    if frame[off + 9] != 6:
        return None
    src = socket.inet_ntop(socket.AF_INET, frame[off + 12 : off + 16])
    dst = socket.inet_ntop(socket.AF_INET, frame[off + 16 : off + 20])
    end = min(off + total, len(frame))
    return _parse_tcp(frame, off + ihl, end, src, dst)


def _parse_ipv6(frame: bytes, off: int) -> TcpSegment | None:
    if len(frame) < off + 40 or frame[off] >> 4 != 6:
        return None
    payload_len = (frame[off + 4] << 8) | frame[off + 5]
    if frame[off + 6] != 6:  # extension headers unsupported
        return None
    src = socket.inet_ntop(socket.AF_INET6, frame[off + 8 : off + 24])
    dst = socket.inet_ntop(socket.AF_INET6, frame[off + 24 : off + 40])
    end = min(off + 40 + payload_len, len(frame))
    return _parse_tcp(frame, off + 40, end, src, dst)


def _parse_tcp(frame: bytes, off: int, end: int, src: str, dst: str) -> TcpSegment | None:
    if end < off + 20 or len(frame) < off + 20:
        return None
    sport, dport, seq = struct.unpack_from(">HHI", frame, off)
    data_off = (frame[off + 12] >> 4) * 4
    if data_off < 20 or off + data_off > end:
        return None
    flags = frame[off + 13]
    return TcpSegment(
        ts=0.0,
        index=0,
        src=src,
        dst=dst,
        sport=sport,
        dport=dport,
        seq=seq,
        flags=flags,
        payload=frame[off + data_off : end],
    )


# ---------------------------------------------------------------------------
# TCP reassembly


@dataclass
class _DirState:
    direction: Direction
    base: int | None = None
    next_rel: int = 0
    view: StreamView = field(default_factory=StreamView)
    pending: dict[int, tuple[bytes, float, int]] = field(default_factory=dict)
    fin: bool = False
    packets: list[PacketRecord] = field(default_factory=list)

    def on_segment(self, seg: TcpSegment) -> None:
        if seg.flags & _SYN:
            self.base = (seg.seq + 1) & 0xFFFFFFFF
        if seg.flags & _FIN:
            self.fin = True
        if not seg.payload:
            return
        if self.base is None:
            self.base = seg.seq  # mid-stream capture: anchor on first data
        rel = (seg.seq - self.base) & 0xFFFFFFFF
        if rel >= 0x80000000:  # far behind the window: stale duplicate
            return
        self._feed(rel, seg.payload, seg.ts, seg.index)
        while self.pending and self.next_rel in self.pending:
            payload, ts, idx = self.pending.pop(self.next_rel)
            self._feed(self.next_rel, payload, ts, idx)

    def _feed(self, rel: int, payload: bytes, ts: float, idx: int) -> None:
        """Write whatever part of the segment is new; drop the rest."""
        fresh = b""
        if rel == self.next_rel:
            fresh = payload
        elif rel < self.next_rel:
            if rel + len(payload) > self.next_rel:
                fresh = payload[self.next_rel - rel :]
            # else: exact or subsumed retransmission, nothing new
        else:
            # gap: hold until the hole fills; first writer wins on collisions
            if rel not in self.pending and len(self.pending) < _PENDING_CAP:
                self.pending[rel] = (payload, ts, idx)
            return
        if not fresh:
            return
        self.view.append(fresh, ts, idx)
        self.next_rel += len(fresh)
        self.packets.append(
            PacketRecord(
                timestamp=ts,
                direction=self.direction,
                payload_len=len(fresh),
                tcp_seq=(self.base + rel) & 0xFFFFFFFF if self.base is not None else rel,
            )
        )


@dataclass
class TcpConnection:
    client_addr: tuple[str, int]
    server_addr: tuple[str, int]
    first_seen: float
    client: _DirState = field(default_factory=lambda: _DirState(Direction.CLIENT_TO_SERVER))
    server: _DirState = field(default_factory=lambda: _DirState(Direction.SERVER_TO_CLIENT))
    reset: bool = False

    @property
    def closed(self) -> bool:
        return self.reset or (self.client.fin and self.server.fin)

    @property
    def key(self) -> FlowKey:
        return FlowKey(
            src=self.client_addr[0],
            dst=self.server_addr[0],
            sport=self.client_addr[1],
            dport=self.server_addr[1],
            ts=self.first_seen,
        )

    def packet_records(self) -> list[PacketRecord]:
        both = self.client.packets + self.server.packets
        return sorted(both, key=lambda p: p.timestamp)


def reassemble_tcp(segments: list[TcpSegment]) -> list[TcpConnection]:
    """Group segments into connections and rebuild both byte streams.

    A SYN on a 4-tuple whose previous connection closed starts a fresh
    connection (port reuse); otherwise the 4-tuple maps to one connection
    for the whole trace.
    """
    active: dict[tuple, TcpConnection] = {}
    done: list[TcpConnection] = []
    for seg in segments:
        a, b = (seg.src, seg.sport), (seg.dst, seg.dport)
        canon = (a, b) if a <= b else (b, a)
        conn = active.get(canon)
        fresh_syn = bool(seg.flags & _SYN) and not (seg.flags & 0x10)  # SYN without ACK
        if conn is not None and conn.closed and fresh_syn:
            done.append(conn)
            conn = None
        if conn is None:
            conn = TcpConnection(client_addr=a, server_addr=b, first_seen=seg.ts)
            active[canon] = conn
        if (seg.src, seg.sport) == conn.client_addr:
            conn.client.on_segment(seg)
        else:
            conn.server.on_segment(seg)
        if seg.flags & _RST:
            conn.reset = True
    done.extend(active.values())
    done.sort(key=lambda c: c.first_seen)
    return done


def segments_from_pcap(data: bytes) -> list[TcpSegment]:
    linktype, frames = read_pcap(data)
    out: list[TcpSegment] = []
    for index, (ts, frame) in enumerate(frames):
        seg = parse_frame(linktype, frame)
        if seg is not None:
            out.append(replace(seg, ts=ts, index=index))
    return out


# ---------------------------------------------------------------------------
# connection -> TlsFlow


def flow_from_connection(
    conn: TcpConnection,
    meta: TraceMeta,
    trust_roots: list[bytes] | None = None,
) -> TlsFlow | None:
    """Assemble a TlsFlow, or None when the connection is not TLS."""
    if not detect_tls(bytes(conn.client.view.data[:3])):
        return None
    c_records, c_trunc = iter_records(conn.client.view)
    s_records, s_trunc = iter_records(conn.server.view)
    c_hs, c_app, c_alerts = split_records(c_records)
    s_hs, s_app, s_alerts = split_records(s_records)

    client_hello = None
    client_chain = None
    ssl2 = bool(c_hs) and c_hs[0].record_version == SSL2_VERSION
    if ssl2:
        client_hello = parse_client_hello(c_hs[0].payload, SSL2_VERSION)
        c_hs = c_hs[1:]
    messages = iter_messages(b"".join(r.payload for r in c_hs))
    for msg in messages:
        if msg.msg_type == MSG_CLIENT_HELLO and client_hello is None:
            client_hello = parse_client_hello(
                msg.body, c_hs[0].record_version if c_hs else 0x0301
            )
        elif msg.msg_type == MSG_CERTIFICATE and client_chain is None:
            # Encrypted Finished data shares the handshake content type, so
            # later "messages" can be ciphertext; ignore ones that don't parse.
            try:
                ders = parse_certificate(msg.body)
            except ParseError:
                continue
            if ders:
                client_chain = _chain(ders, ChainOwner.CLIENT, None)
    if client_hello is None:
        raise ParseError(f"no parseable ClientHello in flow {conn.key.uid}")

    server_hello = None
    server_chain = None
    for msg in iter_messages(b"".join(r.payload for r in s_hs)):
        if msg.msg_type == MSG_SERVER_HELLO and server_hello is None:
            try:
                server_hello = parse_server_hello(
                    msg.body, s_hs[0].record_version if s_hs else 0x0301
                )
            except ParseError:
                continue
        elif msg.msg_type == MSG_CERTIFICATE and server_chain is None:
            try:
                ders = parse_certificate(msg.body)
            except ParseError:
                continue
            if ders:
                server_chain = _chain(ders, ChainOwner.SERVER, trust_roots)
        elif msg.msg_type == MSG_NEW_SESSION_TICKET and server_hello is not None:
            try:
                lifetime, ticket = parse_new_session_ticket(msg.body)
            except ParseError:
                continue
            server_hello.ticket_lifetime = lifetime
            server_hello.issued_ticket = ticket

    alerts: list[tuple[int, int, tuple[float, int]]] = []
    for rec in c_alerts + s_alerts:
        if len(rec.payload) == 2 and rec.payload[0] in (1, 2):
            alerts.append((rec.payload[0], rec.payload[1], rec.at))
    alerts.sort(key=lambda a: a[2])

    appdata = sorted(
        [(r, Direction.CLIENT_TO_SERVER) for r in c_app]
        + [(r, Direction.SERVER_TO_CLIENT) for r in s_app],
        key=lambda pair: pair[0].at,
    )
    sequences: list[AppDataSequenceRaw] = []
    for rec, direction in appdata:
        if not sequences or sequences[-1].direction is not direction:
            sequences.append(AppDataSequenceRaw(direction=direction))
        sequences[-1].packets.append((len(rec.payload), rec.at[0]))

    first_fatal = next((a[2] for a in alerts if a[0] == 2), None)
    established = server_hello is not None and (
        first_fatal is None or (appdata and appdata[0][0].at < first_fatal)
    )

    if server_hello is not None:
        wire = server_hello.supported_version or server_hello.version
        negotiated = version_from_wire(wire)
    else:
        negotiated = TlsVersion.UNKNOWN

    return TlsFlow(
        key=conn.key,
        meta=meta,
        client=client_hello,
        server=server_hello,
        server_chain=server_chain,
        client_chain=client_chain,
        alerts=[(level, desc) for level, desc, _ in alerts],
        sequences=sequences,
        established=bool(established),
        negotiated_version=negotiated,
        truncated=c_trunc or s_trunc,
    )


def _chain(
    ders: list[bytes], owner: ChainOwner, trust_roots: list[bytes] | None
) -> CertificateChain:
    try:
        leaf = parse_leaf(ders[0])
    except ValueError:
        leaf = None
    return CertificateChain(
        owner=owner,
        certs_der=ders,
        leaf=leaf,
        validation_status=classify_chain(ders, trust_roots),
    )


def flows_from_pcap(
    data: bytes,
    sample_id: str | None = None,
    path: str | None = None,
    trust_roots: list[bytes] | None = None,
) -> tuple[list[TlsFlow], dict[str, int]]:
    """All TLS flows in a pcap plus skip counters.

    Counters: non_tls (connections that never looked like TLS) and
    rejected (TLS-looking connections whose ClientHello would not parse).
    """
    meta = TraceMeta(source_kind=SourceKind.SANDBOX_PCAP, sample_id=sample_id, path=path)
    flows: list[TlsFlow] = []
    skipped = {"non_tls": 0, "rejected": 0}
    for conn in reassemble_tcp(segments_from_pcap(data)):
        try:
            flow = flow_from_connection(conn, meta, trust_roots)
        except ParseError:
            skipped["rejected"] += 1
            continue
        if flow is None:
            skipped["non_tls"] += 1
            continue
        flows.append(flow)
    return flows, skipped

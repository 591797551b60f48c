"""Core flow model shared by ingest, feature extraction, and detection.

Everything downstream operates on :class:`TlsFlow`, whether the flow came
from a pcap trace or from a JSONL flow log. The model keeps handshake
fields as they appeared on the wire (integer code points, raw bytes) and
leaves interpretation to the feature layer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Direction(enum.Enum):
    CLIENT_TO_SERVER = "c2s"
    SERVER_TO_CLIENT = "s2c"

    def flipped(self) -> "Direction":
        if self is Direction.CLIENT_TO_SERVER:
            return Direction.SERVER_TO_CLIENT
        return Direction.CLIENT_TO_SERVER


class TlsVersion(enum.Enum):
    SSL2 = "SSL2"
    SSL3 = "SSL3"
    TLS10 = "TLS10"
    TLS11 = "TLS11"
    TLS12 = "TLS12"
    TLS13 = "TLS13"
    UNKNOWN = "Unknown"


# Wire encoding (major, minor) -> version. 0x0304 only ever appears inside
# supported_versions; on the record layer 1.3 masquerades as 0x0303.
WIRE_VERSIONS = {
    0x0002: TlsVersion.SSL2,
    0x0300: TlsVersion.SSL3,
    0x0301: TlsVersion.TLS10,
    0x0302: TlsVersion.TLS11,
    0x0303: TlsVersion.TLS12,
    0x0304: TlsVersion.TLS13,
}


def version_from_wire(code: int) -> TlsVersion:
    return WIRE_VERSIONS.get(code, TlsVersion.UNKNOWN)


class SourceKind(enum.Enum):
    SANDBOX_PCAP = "sandbox_pcap"
    FLOW_LOG = "flow_log"


class ChainOwner(enum.Enum):
    SERVER = "server"
    CLIENT = "client"


class ValidationStatus(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNCHECKED = "unchecked"


@dataclass(frozen=True)
class FlowKey:
    """5-tuple plus first-seen timestamp; identifies one TCP connection."""

    src: str
    dst: str
    sport: int
    dport: int
    ts: float

    @property
    def uid(self) -> str:
        return f"{self.src}:{self.sport}>{self.dst}:{self.dport}@{self.ts:.6f}"


@dataclass
class TraceMeta:
    source_kind: SourceKind
    sample_id: str | None = None
    path: str | None = None


@dataclass(frozen=True)
class PacketRecord:
    """One TCP segment's payload contribution, as seen during reassembly."""

    timestamp: float
    direction: Direction
    payload_len: int
    tcp_seq: int


@dataclass
class DnFields:
    """The distinguished-name components we keep from certificate names."""

    cn: str | None = None
    o: str | None = None
    ou: str | None = None
    c: str | None = None
    st: str | None = None
    l: str | None = None
    email: str | None = None

    def as_dict(self) -> dict[str, str | None]:
        return {
            "cn": self.cn,
            "o": self.o,
            "ou": self.ou,
            "c": self.c,
            "st": self.st,
            "l": self.l,
            "email": self.email,
        }


@dataclass
class ParsedLeaf:
    version: int
    validity_days: int
    san_count: int
    ext_count: int
    self_signed: bool
    sign_alg: str
    pubkey_hash: str
    pubkey_size: int | None
    subject: DnFields
    issuer: DnFields


@dataclass
class CertificateChain:
    """DER chain in wire order (leaf first) plus the parsed leaf, if it parsed."""

    owner: ChainOwner
    certs_der: list[bytes]
    leaf: ParsedLeaf | None = None
    validation_status: ValidationStatus = ValidationStatus.UNCHECKED

    @property
    def num_certs(self) -> int:
        return len(self.certs_der)


@dataclass
class ClientHello:
    version: int
    record_version: int
    session_id: bytes = b""
    ciphers: list[int] = field(default_factory=list)
    comp_methods: list[int] = field(default_factory=list)
    curves: list[int] = field(default_factory=list)
    point_formats: list[int] = field(default_factory=list)
    extensions: list[int] = field(default_factory=list)
    server_name: str | None = None
    alpn: list[str] = field(default_factory=list)
    supported_versions: list[int] = field(default_factory=list)
    # None: no session_ticket extension. b"": extension present but empty
    # (a request for a ticket rather than a resumption attempt).
    session_ticket: bytes | None = None
    psk_identity: bytes | None = None

    @property
    def offered_ticket(self) -> bytes | None:
        """Bytes the client presents to resume, from either mechanism."""
        if self.session_ticket:
            return self.session_ticket
        if self.psk_identity:
            return self.psk_identity
        return None


@dataclass
class ServerHello:
    """Server-side handshake state, including the NewSessionTicket if one came."""

    version: int
    record_version: int
    cipher: int
    comp_method: int = 0
    session_id: bytes = b""
    extensions: list[int] = field(default_factory=list)
    alpn: str | None = None
    supported_version: int | None = None
    ct_signature: bytes | None = None
    issued_ticket: bytes | None = None
    ticket_lifetime: int | None = None


@dataclass
class AppDataSequenceRaw:
    """Consecutive application-data records flowing in one direction.

    ``packets`` holds (ciphertext_len, timestamp) pairs, one per record.
    """

    direction: Direction
    packets: list[tuple[int, float]] = field(default_factory=list)

    @property
    def total_size(self) -> int:
        return sum(p[0] for p in self.packets)

    @property
    def num_packets(self) -> int:
        return len(self.packets)


@dataclass
class TlsFlow:
    key: FlowKey
    meta: TraceMeta
    client: ClientHello | None = None
    server: ServerHello | None = None
    server_chain: CertificateChain | None = None
    client_chain: CertificateChain | None = None
    alerts: list[tuple[int, int]] = field(default_factory=list)
    sequences: list[AppDataSequenceRaw] = field(default_factory=list)
    established: bool = False
    negotiated_version: TlsVersion = TlsVersion.UNKNOWN
    resumed: bool = False
    fake_resumption: bool = False
    inherited_chain: CertificateChain | None = None
    truncated: bool = False

    @property
    def uid(self) -> str:
        return self.key.uid

    @property
    def sample_id(self) -> str | None:
        return self.meta.sample_id

    @property
    def has_appdata(self) -> bool:
        return any(seq.packets for seq in self.sequences)

    @property
    def effective_server_chain(self) -> CertificateChain | None:
        """The chain certificate features should read: inherited beats own."""
        if self.inherited_chain is not None:
            return self.inherited_chain
        return self.server_chain

    @property
    def has_fatal_alert(self) -> bool:
        return any(level == 2 for level, _ in self.alerts)

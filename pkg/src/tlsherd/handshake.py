"""Handshake message parsing and building.

Parses the plaintext handshake flight out of concatenated handshake-record
payloads: ClientHello, ServerHello, Certificate, NewSessionTicket. Building
the same messages back is supported so tests and the traffic synthesizer can
produce byte streams the parser accepts; parse(build(x)) is a fixed point
for every feature-relevant field.

Every read is bounds-checked. Malformed input raises ParseError, nothing
else, so the parser is total over arbitrary bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ClientHello, ServerHello
from .records import SSL2_VERSION

MSG_CLIENT_HELLO = 1
MSG_SERVER_HELLO = 2
MSG_NEW_SESSION_TICKET = 4
MSG_CERTIFICATE = 11

EXT_SERVER_NAME = 0
EXT_SUPPORTED_GROUPS = 10
EXT_EC_POINT_FORMATS = 11
EXT_ALPN = 16
EXT_SCT = 18
EXT_SESSION_TICKET = 35
EXT_PRE_SHARED_KEY = 41
EXT_SUPPORTED_VERSIONS = 43


class ParseError(ValueError):
    """Input bytes do not decode as the expected TLS structure."""


class _Cursor:
    __slots__ = ("data", "pos", "end")

    def __init__(self, data: bytes, start: int = 0, end: int | None = None):
        self.data = data
        self.pos = start
        self.end = len(data) if end is None else end

    def remaining(self) -> int:
        return self.end - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise ParseError("structure extends past end of data")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        b = self.take(2)
        return (b[0] << 8) | b[1]

    def u24(self) -> int:
        b = self.take(3)
        return (b[0] << 16) | (b[1] << 8) | b[2]

    def u32(self) -> int:
        b = self.take(4)
        return int.from_bytes(b, "big")

    def sub(self, n: int) -> "_Cursor":
        if self.pos + n > self.end:
            raise ParseError("length field overruns data")
        c = _Cursor(self.data, self.pos, self.pos + n)
        self.pos += n
        return c


@dataclass(frozen=True)
class HandshakeMessage:
    msg_type: int
    body: bytes


def iter_messages(stream: bytes) -> list[HandshakeMessage]:
    """Split a concatenated handshake stream into messages.

    A trailing partial message is dropped silently: with TLS 1.3 the tail of
    the flight is encrypted and unreadable anyway.
    """
    out: list[HandshakeMessage] = []
    cur = _Cursor(stream)
    while cur.remaining() >= 4:
        msg_type = cur.u8()
        length = cur.u24()
        if cur.remaining() < length:
            break
        out.append(HandshakeMessage(msg_type, bytes(cur.take(length))))
    return out


# ---------------------------------------------------------------------------
# ClientHello


def parse_client_hello(body: bytes, record_version: int) -> ClientHello:
    if record_version == SSL2_VERSION:
        return _parse_ssl2_hello(body, record_version)
    cur = _Cursor(body)
    version = cur.u16()
    cur.take(32)  # random
    session_id = bytes(cur.take(cur.u8()))
    ciphers_raw = cur.sub(cur.u16())
    ciphers = []
    while ciphers_raw.remaining() >= 2:
        ciphers.append(ciphers_raw.u16())
    comp_methods = list(cur.take(cur.u8()))

    hello = ClientHello(
        version=version,
        record_version=record_version,
        session_id=session_id,
        ciphers=ciphers,
        comp_methods=comp_methods,
    )
    if cur.remaining() == 0:
        return hello
    exts = cur.sub(cur.u16())
    while exts.remaining() >= 4:
        ext_type = exts.u16()
        ext = exts.sub(exts.u16())
        hello.extensions.append(ext_type)
        if ext_type == EXT_SERVER_NAME:
            hello.server_name = _parse_sni(ext)
        elif ext_type == EXT_SUPPORTED_GROUPS:
            groups = ext.sub(ext.u16())
            while groups.remaining() >= 2:
                hello.curves.append(groups.u16())
        elif ext_type == EXT_EC_POINT_FORMATS:
            hello.point_formats = list(ext.take(ext.u8()))
        elif ext_type == EXT_ALPN:
            hello.alpn = _parse_alpn_list(ext)
        elif ext_type == EXT_SESSION_TICKET:
            hello.session_ticket = bytes(ext.take(ext.remaining()))
        elif ext_type == EXT_SUPPORTED_VERSIONS:
            versions = ext.sub(ext.u8())
            while versions.remaining() >= 2:
                hello.supported_versions.append(versions.u16())
        elif ext_type == EXT_PRE_SHARED_KEY:
            identities = ext.sub(ext.u16())
            if identities.remaining() >= 2:
                hello.psk_identity = bytes(identities.take(identities.u16()))
    return hello


def _parse_ssl2_hello(body: bytes, record_version: int) -> ClientHello:
    cur = _Cursor(body)
    if cur.u8() != MSG_CLIENT_HELLO:
        raise ParseError("SSLv2 record is not a CLIENT-HELLO")
    version = cur.u16()
    spec_len = cur.u16()
    session_len = cur.u16()
    cur.u16()  # challenge length
    specs = cur.sub(spec_len)
    ciphers = []
    while specs.remaining() >= 3:
        ciphers.append(specs.u24())
    cur.take(session_len)
    return ClientHello(
        version=version,
        record_version=record_version,
        ciphers=ciphers,
        comp_methods=[0],
    )


def _parse_sni(ext: _Cursor) -> str | None:
    names = ext.sub(ext.u16())
    while names.remaining() >= 3:
        name_type = names.u8()
        value = names.take(names.u16())
        if name_type == 0:
            return value.decode("ascii", errors="replace")
    return None


def _parse_alpn_list(ext: _Cursor) -> list[str]:
    protocols = ext.sub(ext.u16())
    out = []
    while protocols.remaining() >= 1:
        out.append(
            bytes(protocols.take(protocols.u8())).decode("ascii", errors="replace")
        )
    return out


# ---------------------------------------------------------------------------
# ServerHello, Certificate, NewSessionTicket


def parse_server_hello(body: bytes, record_version: int) -> ServerHello:
    cur = _Cursor(body)
    version = cur.u16()
    cur.take(32)
    session_id = bytes(cur.take(cur.u8()))
    cipher = cur.u16()
    comp_method = cur.u8()
    hello = ServerHello(
        version=version,
        record_version=record_version,
        cipher=cipher,
        comp_method=comp_method,
        session_id=session_id,
    )
    if cur.remaining() == 0:
        return hello
    exts = cur.sub(cur.u16())
    while exts.remaining() >= 4:
        ext_type = exts.u16()
        ext = exts.sub(exts.u16())
        hello.extensions.append(ext_type)
        if ext_type == EXT_ALPN:
            names = _parse_alpn_list(ext)
            hello.alpn = names[0] if names else None
        elif ext_type == EXT_SUPPORTED_VERSIONS:
            hello.supported_version = ext.u16()
        elif ext_type == EXT_SCT:
            hello.ct_signature = bytes(ext.take(ext.remaining()))
    return hello


def parse_certificate(body: bytes) -> list[bytes]:
    """DER blobs from a plaintext (pre-1.3) Certificate message, in order."""
    cur = _Cursor(body)
    chain = cur.sub(cur.u24())
    certs = []
    while chain.remaining() >= 3:
        certs.append(bytes(chain.take(chain.u24())))
    return certs


def parse_new_session_ticket(body: bytes) -> tuple[int, bytes]:
    """(lifetime_hint_seconds, ticket_bytes)."""
    cur = _Cursor(body)
    lifetime = cur.u32()
    ticket = bytes(cur.take(cur.u16()))
    return lifetime, ticket


# ---------------------------------------------------------------------------
# builders (tests and traffic synthesis)


def _vec(payload: bytes, size_bytes: int) -> bytes:
    return len(payload).to_bytes(size_bytes, "big") + payload


def _extension(ext_type: int, payload: bytes) -> bytes:
    return ext_type.to_bytes(2, "big") + _vec(payload, 2)


def _message(msg_type: int, body: bytes) -> bytes:
    return bytes([msg_type]) + _vec(body, 3)


def build_client_hello(hello: ClientHello, random: bytes = b"\x00" * 32) -> bytes:
    if len(random) != 32:
        raise ValueError("hello random must be 32 bytes")
    exts: list[bytes] = []
    for ext_type in hello.extensions:
        exts.append(_extension(ext_type, _client_ext_payload(hello, ext_type)))
    body = (
        hello.version.to_bytes(2, "big")
        + random
        + _vec(hello.session_id, 1)
        + _vec(b"".join(c.to_bytes(2, "big") for c in hello.ciphers), 2)
        + _vec(bytes(hello.comp_methods), 1)
        + _vec(b"".join(exts), 2)
    )
    return _message(MSG_CLIENT_HELLO, body)


def _client_ext_payload(hello: ClientHello, ext_type: int) -> bytes:
    if ext_type == EXT_SERVER_NAME:
        name = (hello.server_name or "").encode("ascii")
        return _vec(b"\x00" + _vec(name, 2), 2)
    if ext_type == EXT_SUPPORTED_GROUPS:
        return _vec(b"".join(c.to_bytes(2, "big") for c in hello.curves), 2)
    if ext_type == EXT_EC_POINT_FORMATS:
        return _vec(bytes(hello.point_formats), 1)
    if ext_type == EXT_ALPN:
        return _vec(b"".join(_vec(p.encode("ascii"), 1) for p in hello.alpn), 2)
    if ext_type == EXT_SESSION_TICKET:
        return hello.session_ticket or b""
    if ext_type == EXT_SUPPORTED_VERSIONS:
        return _vec(
            b"".join(v.to_bytes(2, "big") for v in hello.supported_versions), 1
        )
    if ext_type == EXT_PRE_SHARED_KEY:
        identity = _vec(hello.psk_identity or b"", 2) + b"\x00\x00\x00\x00"
        return _vec(identity, 2) + _vec(b"\x00" * 32, 2)
    return b""


def build_server_hello(hello: ServerHello, random: bytes = b"\x00" * 32) -> bytes:
    exts: list[bytes] = []
    for ext_type in hello.extensions:
        exts.append(_extension(ext_type, _server_ext_payload(hello, ext_type)))
    body = (
        hello.version.to_bytes(2, "big")
        + random
        + _vec(hello.session_id, 1)
        + hello.cipher.to_bytes(2, "big")
        + bytes([hello.comp_method])
        + _vec(b"".join(exts), 2)
    )
    return _message(MSG_SERVER_HELLO, body)


def _server_ext_payload(hello: ServerHello, ext_type: int) -> bytes:
    if ext_type == EXT_ALPN:
        return _vec(_vec((hello.alpn or "").encode("ascii"), 1), 2)
    if ext_type == EXT_SUPPORTED_VERSIONS:
        return (hello.supported_version or hello.version).to_bytes(2, "big")
    if ext_type == EXT_SCT:
        return hello.ct_signature or b""
    return b""


def build_certificate(certs: list[bytes]) -> bytes:
    chain = b"".join(_vec(c, 3) for c in certs)
    return _message(MSG_CERTIFICATE, _vec(chain, 3))


def build_new_session_ticket(lifetime: int, ticket: bytes) -> bytes:
    return _message(
        MSG_NEW_SESSION_TICKET, lifetime.to_bytes(4, "big") + _vec(ticket, 2)
    )


def build_ssl2_client_hello(version: int, ciphers: list[int]) -> bytes:
    """A complete SSLv2 CLIENT-HELLO record, framing included."""
    challenge = b"\x00" * 16
    body = (
        bytes([MSG_CLIENT_HELLO])
        + version.to_bytes(2, "big")
        + (3 * len(ciphers)).to_bytes(2, "big")
        + (0).to_bytes(2, "big")
        + len(challenge).to_bytes(2, "big")
        + b"".join(c.to_bytes(3, "big") for c in ciphers)
        + challenge
    )
    return (0x8000 | len(body)).to_bytes(2, "big") + body

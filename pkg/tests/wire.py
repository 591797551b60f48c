"""Composing TLS byte streams onto scripted TCP connections.

Shared by the ingest tests and the golden capture fixtures. Everything here
rides on the real record/handshake builders, so what the tests feed the
reader is what a cooperating implementation would put on the wire.
"""

from __future__ import annotations

from tlsherd import handshake as hs
from tlsherd import records
from tlsherd.model import ClientHello, ServerHello
from tlsherd.pcapgen import FlowScript

TLS10 = 0x0301
TLS12 = 0x0303
TLS13 = 0x0304


def default_client_hello(
    sni: str | None = "files.example.net",
    version: int = TLS12,
    ciphers: tuple[int, ...] = (0xC02F, 0xC030, 0x009C),
    alpn: tuple[str, ...] = (),
    ticket: bytes | None = None,
    psk: bytes | None = None,
    supported_versions: tuple[int, ...] = (),
) -> ClientHello:
    hello = ClientHello(
        version=version,
        record_version=version,
        ciphers=list(ciphers),
        comp_methods=[0],
        curves=[23, 24],
        point_formats=[0],
    )
    if sni is not None:
        hello.extensions.append(hs.EXT_SERVER_NAME)
        hello.server_name = sni
    hello.extensions += [hs.EXT_SUPPORTED_GROUPS, hs.EXT_EC_POINT_FORMATS]
    if alpn:
        hello.extensions.append(hs.EXT_ALPN)
        hello.alpn = list(alpn)
    if ticket is not None:
        hello.extensions.append(hs.EXT_SESSION_TICKET)
        hello.session_ticket = ticket
    if supported_versions:
        hello.extensions.append(hs.EXT_SUPPORTED_VERSIONS)
        hello.supported_versions = list(supported_versions)
    if psk is not None:
        hello.extensions.append(hs.EXT_PRE_SHARED_KEY)
        hello.psk_identity = psk
    return hello


def client_flight(hello: ClientHello) -> bytes:
    return records.build_record(
        records.HANDSHAKE, hello.record_version, hs.build_client_hello(hello)
    )


def server_flight(
    hello: ServerHello,
    certs: list[bytes] | None = None,
    ticket: tuple[int, bytes] | None = None,
) -> bytes:
    """ServerHello plus optional Certificate and NewSessionTicket records."""
    out = records.build_record(
        records.HANDSHAKE, hello.record_version, hs.build_server_hello(hello)
    )
    if certs:
        out += records.build_record(
            records.HANDSHAKE, hello.record_version, hs.build_certificate(certs)
        )
    if ticket is not None:
        out += records.build_record(
            records.HANDSHAKE,
            hello.record_version,
            hs.build_new_session_ticket(*ticket),
        )
    return out


def app_record(size: int, version: int = TLS12, fill: int = 0xA5) -> bytes:
    return records.build_record(records.APPDATA, version, bytes([fill]) * size)


def alert_record(level: int, desc: int, version: int = TLS12) -> bytes:
    return records.build_record(records.ALERT, version, bytes([level, desc]))


def ccs_record(version: int = TLS12) -> bytes:
    return records.build_record(records.CCS, version, b"\x01")


def tls12_session(
    script: FlowScript,
    client_hello: ClientHello | None = None,
    certs: list[bytes] | None = None,
    cipher: int = 0xC02F,
    alpn: str | None = None,
    ticket: tuple[int, bytes] | None = None,
    app_sizes: tuple[tuple[str, int], ...] = (("c", 221), ("s", 1460), ("s", 980)),
) -> FlowScript:
    """A complete plaintext-handshake TLS 1.2 conversation on the script."""
    ch = client_hello or default_client_hello()
    sh = ServerHello(version=TLS12, record_version=TLS12, cipher=cipher)
    if alpn is not None:
        sh.extensions.append(hs.EXT_ALPN)
        sh.alpn = alpn
    script.c(client_flight(ch))
    script.s(server_flight(sh, certs=certs, ticket=ticket) + ccs_record())
    script.c(ccs_record())
    for direction, size in app_sizes:
        rec = app_record(size)
        script.c(rec) if direction == "c" else script.s(rec)
    return script


def tls13_session(
    script: FlowScript,
    client_hello: ClientHello | None = None,
    cipher: int = 0x1301,
    app_sizes: tuple[tuple[str, int], ...] = (("s", 2048), ("c", 160), ("s", 512)),
) -> FlowScript:
    """TLS 1.3 shape: 1.2 legacy fields, the real version in the extension,
    and the encrypted flight travelling as application data."""
    ch = client_hello or default_client_hello(supported_versions=(TLS13, TLS12))
    sh = ServerHello(
        version=TLS12,
        record_version=TLS12,
        cipher=cipher,
        extensions=[hs.EXT_SUPPORTED_VERSIONS],
        supported_version=TLS13,
    )
    script.c(client_flight(ch))
    # EncryptedExtensions/Certificate/Finished ride in appdata records
    script.s(server_flight(sh) + ccs_record() + app_record(1133, version=TLS12))
    script.c(ccs_record() + app_record(74, version=TLS12))
    for direction, size in app_sizes:
        rec = app_record(size)
        script.c(rec) if direction == "c" else script.s(rec)
    return script

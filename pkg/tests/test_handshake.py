"""Record framing and handshake message codecs.

The builders exist for synthesis, so the main property is that parsing a
built message recovers every field we extract features from.
"""

import pytest

from tlsherd import handshake as hs
from tlsherd import records
from tlsherd.model import ClientHello, ServerHello


def view_of(*chunks: bytes, start_ts: float = 1.0) -> records.StreamView:
    view = records.StreamView()
    for i, chunk in enumerate(chunks):
        view.append(chunk, start_ts + i, i)
    return view


def test_client_hello_round_trip():
    hello = ClientHello(
        version=0x0303,
        record_version=0x0301,
        session_id=b"\x11" * 8,
        ciphers=[0xC02F, 0x009C, 0x1301],
        comp_methods=[0],
        curves=[23, 29],
        point_formats=[0, 1],
        extensions=[
            hs.EXT_SERVER_NAME,
            hs.EXT_SUPPORTED_GROUPS,
            hs.EXT_EC_POINT_FORMATS,
            hs.EXT_ALPN,
            hs.EXT_SESSION_TICKET,
            hs.EXT_SUPPORTED_VERSIONS,
            hs.EXT_PRE_SHARED_KEY,
        ],
        server_name="c2.badhost.example",
        alpn=["h2", "http/1.1"],
        supported_versions=[0x0304, 0x0303],
        session_ticket=b"\xaa\xbb\xcc",
        psk_identity=b"resume-me",
    )
    built = hs.build_client_hello(hello)
    msgs = hs.iter_messages(built)
    assert len(msgs) == 1 and msgs[0].msg_type == hs.MSG_CLIENT_HELLO
    back = hs.parse_client_hello(msgs[0].body, 0x0301)

    assert back.version == hello.version
    assert back.record_version == 0x0301
    assert back.session_id == hello.session_id
    assert back.ciphers == hello.ciphers
    assert back.comp_methods == hello.comp_methods
    assert back.curves == hello.curves
    assert back.point_formats == hello.point_formats
    assert back.extensions == hello.extensions
    assert back.server_name == hello.server_name
    assert back.alpn == hello.alpn
    assert back.supported_versions == hello.supported_versions
    assert back.session_ticket == hello.session_ticket
    assert back.psk_identity == hello.psk_identity


def test_empty_ticket_extension_is_kept_distinct_from_absent():
    offered = ClientHello(
        version=0x0303,
        record_version=0x0303,
        ciphers=[0x009C],
        comp_methods=[0],
        extensions=[hs.EXT_SESSION_TICKET],
        session_ticket=b"",
    )
    back = hs.parse_client_hello(
        hs.iter_messages(hs.build_client_hello(offered))[0].body, 0x0303
    )
    assert back.session_ticket == b""
    assert back.offered_ticket is None  # empty offer is a request, not a resume

    bare = ClientHello(
        version=0x0303, record_version=0x0303, ciphers=[0x009C], comp_methods=[0]
    )
    back = hs.parse_client_hello(
        hs.iter_messages(hs.build_client_hello(bare))[0].body, 0x0303
    )
    assert back.session_ticket is None


def test_ssl2_compat_hello():
    record = hs.build_ssl2_client_hello(0x0300, [0x010080, 0x0700C0, 0x000039])
    assert record[0] & 0x80
    recs, truncated = records.iter_records(view_of(record))
    assert not truncated and len(recs) == 1
    rec = recs[0]
    assert rec.content_type == records.HANDSHAKE
    assert rec.record_version == records.SSL2_VERSION

    hello = hs.parse_client_hello(rec.payload, rec.record_version)
    assert hello.version == 0x0300
    assert hello.ciphers == [0x010080, 0x0700C0, 0x000039]
    assert hello.comp_methods == [0]
    assert hello.server_name is None

    with pytest.raises(hs.ParseError):
        hs.parse_client_hello(b"\x02" + rec.payload[1:], records.SSL2_VERSION)


def test_server_hello_round_trip():
    hello = ServerHello(
        version=0x0303,
        record_version=0x0303,
        cipher=0xC030,
        comp_method=0,
        session_id=b"\x42" * 32,
        extensions=[hs.EXT_ALPN, hs.EXT_SUPPORTED_VERSIONS, hs.EXT_SCT],
        alpn="h2",
        supported_version=0x0304,
        ct_signature=b"\x00\x01signed",
    )
    back = hs.parse_server_hello(
        hs.iter_messages(hs.build_server_hello(hello))[0].body, 0x0303
    )
    assert back.version == hello.version
    assert back.cipher == hello.cipher
    assert back.session_id == hello.session_id
    assert back.extensions == hello.extensions
    assert back.alpn == "h2"
    assert back.supported_version == 0x0304
    assert back.ct_signature == hello.ct_signature


def test_certificate_and_ticket_round_trip():
    ders = [b"\x30\x82" + bytes(40), b"\x30\x10" + bytes(14), b"leaf?"]
    assert hs.parse_certificate(hs.iter_messages(hs.build_certificate(ders))[0].body) == ders

    lifetime, ticket = hs.parse_new_session_ticket(
        hs.iter_messages(hs.build_new_session_ticket(7200, b"T" * 48))[0].body
    )
    assert lifetime == 7200
    assert ticket == b"T" * 48


def test_iter_messages_drops_partial_tail():
    whole = hs.build_certificate([b"x" * 9])
    partial = hs.build_new_session_ticket(60, b"t")[:-2]
    msgs = hs.iter_messages(whole + partial)
    assert [m.msg_type for m in msgs] == [hs.MSG_CERTIFICATE]
    assert hs.iter_messages(b"\x01\x00") == []


def test_malformed_bodies_raise_parse_error():
    good = hs.iter_messages(hs.build_client_hello(
        ClientHello(version=0x0303, record_version=0x0303, ciphers=[1], comp_methods=[0])
    ))[0].body
    for cut in (1, 10, 34, len(good) - 1):
        with pytest.raises(hs.ParseError):
            hs.parse_client_hello(good[:cut], 0x0303)
    with pytest.raises(hs.ParseError):
        hs.parse_certificate(b"\x00\x00\xff")
    with pytest.raises(hs.ParseError):
        hs.parse_new_session_ticket(b"\x00\x00")


def test_detect_tls():
    assert records.detect_tls(b"\x16\x03\x01\x00\x50")
    assert records.detect_tls(b"\x16\x03\x04")
    assert records.detect_tls(b"\x80\x2e\x01")  # SSLv2 CLIENT-HELLO
    assert not records.detect_tls(b"\x16\x03\x05")
    assert not records.detect_tls(b"\x16\x02\x01")
    assert not records.detect_tls(b"GET")
    assert not records.detect_tls(b"\x80\x2e\x04")
    assert not records.detect_tls(b"\x16\x03")  # too short to say


def test_record_iteration_and_truncation():
    r1 = records.build_record(records.HANDSHAKE, 0x0301, b"\x01\x02\x03")
    r2 = records.build_record(records.CCS, 0x0303, b"\x01")
    r3 = records.build_record(records.APPDATA, 0x0303, b"payload bytes")
    r4 = records.build_record(records.ALERT, 0x0303, b"\x02\x28")

    # split across odd segment boundaries
    stream = r1 + r2 + r3 + r4
    view = view_of(stream[:4], stream[4:11], stream[11:])
    recs, truncated = records.iter_records(view)
    assert not truncated
    assert [r.content_type for r in recs] == [22, 20, 23, 21]
    assert recs[2].payload == b"payload bytes"
    assert recs[0].record_version == 0x0301

    hs_recs, app, alerts = records.split_records(recs)
    assert [r.content_type for r in hs_recs] == [22]
    assert [r.content_type for r in app] == [23]
    assert [r.content_type for r in alerts] == [21]

    recs, truncated = records.iter_records(view_of(stream[:-3]))
    assert truncated and len(recs) == 3

    recs, truncated = records.iter_records(view_of(r1 + b"\x99garbage"))
    assert truncated and len(recs) == 1


def test_record_stamps_follow_first_payload_byte():
    r1 = records.build_record(records.HANDSHAKE, 0x0303, b"aaaa")
    r2 = records.build_record(records.APPDATA, 0x0303, b"bb")
    # r2's header arrives with the first segment, its payload with the second
    split = len(r1) + 5
    view = view_of((r1 + r2)[:split], (r1 + r2)[split:])
    recs, _ = records.iter_records(view)
    assert recs[0].at == (1.0, 0)
    assert recs[1].at == (2.0, 1)

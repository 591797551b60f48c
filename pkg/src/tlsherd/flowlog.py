"""JSONL flow logs: one TlsFlow per line.

This is the interchange format between pipeline stages and the way flows
captured on a research network enter the toolkit without pcap. The writer
is deterministic (sorted keys, compact separators) so identical flow lists
produce identical files. Readers ignore unknown fields; missing required
fields and undecodable lines raise :class:`FlowLogError` carrying the line
number, and the reader can either abort on the first bad line or skip past
it, depending on how it is called.
"""

from __future__ import annotations

import base64
import json
import logging
from pathlib import Path
from typing import Iterable, Iterator

from .certs import parse_leaf
from .model import (
    AppDataSequenceRaw,
    CertificateChain,
    ChainOwner,
    ClientHello,
    Direction,
    FlowKey,
    ServerHello,
    SourceKind,
    TlsFlow,
    TlsVersion,
    TraceMeta,
    ValidationStatus,
)

SCHEMA_VERSION = 1

log = logging.getLogger(__name__)


class FlowLogError(ValueError):
    """A line does not decode as a schema-conformant flow."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str, path: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as exc:
        raise FlowLogError(f"field `{path}` is not valid base64: {exc}") from None


def _req(obj: dict, name: str, parent: str = ""):
    path = f"{parent}.{name}" if parent else name
    if not isinstance(obj, dict) or name not in obj or obj[name] is None:
        raise FlowLogError(f"missing required field `{path}`")
    return obj[name]


# ---------------------------------------------------------------------------
# flow -> dict


def flow_to_dict(flow: TlsFlow) -> dict:
    if flow.client is None:
        raise ValueError(f"flow {flow.uid} has no ClientHello; cannot serialize")
    obj: dict = {
        "schema_version": SCHEMA_VERSION,
        "key": {
            "src": flow.key.src,
            "dst": flow.key.dst,
            "sport": flow.key.sport,
            "dport": flow.key.dport,
            "ts": flow.key.ts,
        },
        "sample_id": flow.sample_id,
        "client": _client_dict(flow.client),
        "server": _server_dict(flow.server) if flow.server else None,
        "alerts": [[level, desc] for level, desc in flow.alerts],
        "sequences": [
            {
                "dir": seq.direction.value,
                "pkts": [{"len": length, "ts": ts} for length, ts in seq.packets],
            }
            for seq in flow.sequences
        ],
        "established": flow.established,
        "negotiated_version": flow.negotiated_version.value,
        "truncated": flow.truncated,
    }
    if flow.server_chain is not None:
        obj["cert_chain"] = [_b64(der) for der in flow.server_chain.certs_der]
        obj["cert_validation"] = flow.server_chain.validation_status.value
    if flow.client_chain is not None:
        obj["client_cert_chain"] = [_b64(der) for der in flow.client_chain.certs_der]
    if flow.resumed:
        obj["resumed"] = True
    if flow.fake_resumption:
        obj["fake_resumption"] = True
    if flow.inherited_chain is not None:
        obj["inherited_cert_chain"] = [
            _b64(der) for der in flow.inherited_chain.certs_der
        ]
        obj["inherited_cert_validation"] = flow.inherited_chain.validation_status.value
    return obj


def _client_dict(hello: ClientHello) -> dict:
    obj: dict = {
        "version": hello.version,
        "record_version": hello.record_version,
        "session_id": _b64(hello.session_id),
        "ciphers": hello.ciphers,
        "comp_methods": hello.comp_methods,
        "curves": hello.curves,
        "point_formats": hello.point_formats,
        "extensions": hello.extensions,
        "alpn": hello.alpn,
        "supported_versions": hello.supported_versions,
    }
    if hello.server_name is not None:
        obj["server_name"] = hello.server_name
    if hello.session_ticket is not None:
        obj["session_ticket"] = _b64(hello.session_ticket)
    if hello.psk_identity is not None:
        obj["psk_identity"] = _b64(hello.psk_identity)
    return obj


def _server_dict(hello: ServerHello) -> dict:
    obj: dict = {
        "version": hello.version,
        "record_version": hello.record_version,
        "cipher": hello.cipher,
        "comp_method": hello.comp_method,
        "session_id": _b64(hello.session_id),
        "extensions": hello.extensions,
    }
    if hello.alpn is not None:
        obj["alpn"] = hello.alpn
    if hello.supported_version is not None:
        obj["supported_version"] = hello.supported_version
    if hello.ct_signature is not None:
        obj["ct_signature"] = _b64(hello.ct_signature)
    if hello.issued_ticket is not None:
        obj["issued_ticket"] = _b64(hello.issued_ticket)
    if hello.ticket_lifetime is not None:
        obj["ticket_lifetime"] = hello.ticket_lifetime
    return obj


# ---------------------------------------------------------------------------
# dict -> flow


def flow_from_dict(obj: dict, path: str | None = None) -> TlsFlow:
    version = _req(obj, "schema_version")
    if version != SCHEMA_VERSION:
        raise FlowLogError(
            f"unsupported schema_version {version!r} (this reader understands "
            f"{SCHEMA_VERSION})"
        )
    key_obj = _req(obj, "key")
    key = FlowKey(
        src=_req(key_obj, "src", "key"),
        dst=_req(key_obj, "dst", "key"),
        sport=int(_req(key_obj, "sport", "key")),
        dport=int(_req(key_obj, "dport", "key")),
        ts=float(_req(key_obj, "ts", "key")),
    )
    flow = TlsFlow(
        key=key,
        meta=TraceMeta(
            SourceKind.FLOW_LOG, sample_id=obj.get("sample_id"), path=path
        ),
        client=_client_from(_req(obj, "client")),
        established=bool(obj.get("established", False)),
        truncated=bool(obj.get("truncated", False)),
        resumed=bool(obj.get("resumed", False)),
        fake_resumption=bool(obj.get("fake_resumption", False)),
    )
    if obj.get("server") is not None:
        flow.server = _server_from(obj["server"])

    raw_version = obj.get("negotiated_version", TlsVersion.UNKNOWN.value)
    try:
        flow.negotiated_version = TlsVersion(raw_version)
    except ValueError:
        raise FlowLogError(f"unknown negotiated_version {raw_version!r}") from None

    for level, desc in obj.get("alerts", []):
        flow.alerts.append((int(level), int(desc)))
    for seq_obj in obj.get("sequences", []):
        try:
            direction = Direction(_req(seq_obj, "dir", "sequences[]"))
        except ValueError:
            raise FlowLogError(
                f"unknown sequence direction {seq_obj.get('dir')!r}"
            ) from None
        seq = AppDataSequenceRaw(direction=direction)
        for pkt in seq_obj.get("pkts", []):
            seq.packets.append(
                (int(_req(pkt, "len", "sequences[].pkts[]")), float(pkt.get("ts", 0.0)))
            )
        flow.sequences.append(seq)

    if "cert_chain" in obj:
        flow.server_chain = _chain_from(
            obj["cert_chain"],
            ChainOwner.SERVER,
            obj.get("cert_validation"),
            "cert_chain",
        )
    if "client_cert_chain" in obj:
        flow.client_chain = _chain_from(
            obj["client_cert_chain"], ChainOwner.CLIENT, None, "client_cert_chain"
        )
    if "inherited_cert_chain" in obj:
        flow.inherited_chain = _chain_from(
            obj["inherited_cert_chain"],
            ChainOwner.SERVER,
            obj.get("inherited_cert_validation"),
            "inherited_cert_chain",
        )
    return flow


def _client_from(obj: dict) -> ClientHello:
    hello = ClientHello(
        version=int(_req(obj, "version", "client")),
        record_version=int(_req(obj, "record_version", "client")),
        session_id=_unb64(obj.get("session_id", ""), "client.session_id"),
        ciphers=[int(c) for c in obj.get("ciphers", [])],
        comp_methods=[int(c) for c in obj.get("comp_methods", [])],
        curves=[int(c) for c in obj.get("curves", [])],
        point_formats=[int(c) for c in obj.get("point_formats", [])],
        extensions=[int(c) for c in obj.get("extensions", [])],
        server_name=obj.get("server_name"),
        alpn=[str(p) for p in obj.get("alpn", [])],
        supported_versions=[int(v) for v in obj.get("supported_versions", [])],
    )
    if obj.get("session_ticket") is not None:
        hello.session_ticket = _unb64(obj["session_ticket"], "client.session_ticket")
    if obj.get("psk_identity") is not None:
        hello.psk_identity = _unb64(obj["psk_identity"], "client.psk_identity")
    return hello


def _server_from(obj: dict) -> ServerHello:
    hello = ServerHello(
        version=int(_req(obj, "version", "server")),
        record_version=int(_req(obj, "record_version", "server")),
        cipher=int(_req(obj, "cipher", "server")),
        comp_method=int(obj.get("comp_method", 0)),
        session_id=_unb64(obj.get("session_id", ""), "server.session_id"),
        extensions=[int(c) for c in obj.get("extensions", [])],
        alpn=obj.get("alpn"),
        ct_signature=None,
        issued_ticket=None,
    )
    if obj.get("supported_version") is not None:
        hello.supported_version = int(obj["supported_version"])
    if obj.get("ct_signature") is not None:
        hello.ct_signature = _unb64(obj["ct_signature"], "server.ct_signature")
    if obj.get("issued_ticket") is not None:
        hello.issued_ticket = _unb64(obj["issued_ticket"], "server.issued_ticket")
    if obj.get("ticket_lifetime") is not None:
        hello.ticket_lifetime = int(obj["ticket_lifetime"])
    return hello


def _chain_from(
    items: list, owner: ChainOwner, validation: str | None, field_name: str
) -> CertificateChain:
    ders = [_unb64(item, f"{field_name}[]") for item in items]
    status = ValidationStatus.UNCHECKED
    if validation is not None:
        try:
            status = ValidationStatus(validation)
        except ValueError:
            raise FlowLogError(f"unknown cert validation {validation!r}") from None
    leaf = None
    if ders:
        try:
            leaf = parse_leaf(ders[0])
        except ValueError:
            leaf = None
    return CertificateChain(
        owner=owner, certs_der=ders, leaf=leaf, validation_status=status
    )


# ---------------------------------------------------------------------------
# files


def write_flow_log(path: str | Path, flows: Iterable[TlsFlow]) -> int:
    """Write flows as JSONL; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="ascii") as fh:
        for flow in flows:
            fh.write(json.dumps(flow_to_dict(flow), sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def read_flow_log(path: str | Path, skip_malformed: bool = False) -> Iterator[TlsFlow]:
    """Yield one flow per line.

    With ``skip_malformed`` a bad line is logged and skipped; otherwise the
    first bad line aborts the read with a :class:`FlowLogError` naming it.
    """
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FlowLogError(f"not valid JSON: {exc}") from None
                if not isinstance(obj, dict):
                    raise FlowLogError("line is not a JSON object")
                yield flow_from_dict(obj, path=str(path))
            except FlowLogError as exc:
                err = FlowLogError(str(exc), line_no) if exc.line_no is None else exc
                if skip_malformed:
                    log.warning("%s: skipped %s", path, err)
                    continue
                raise err from None

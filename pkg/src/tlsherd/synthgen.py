"""Deterministic synthetic TLS corpora for desk-scale testing.

A scenario describes a handful of malware families as templates (client
profile, server profile, certificates, SNI behavior, payload shape) plus a
benign background, and ``generate`` realizes it into a labeled flow-log
corpus. No real handshake runs; flows are composed at the model level, but
sizes follow the wire: application payload is chunked into records and each
record grows by the AEAD tag plus the per-version framing bytes, so sequence
lengths look exactly like what the pcap path would have measured.

Everything is reproducible from the scenario seed: certificates use Ed25519
(key material is derived from the seed, and Ed25519 signatures contain no
randomness), timestamps are scripted, and all choices flow through one
seeded generator. Two corpora built with the same scenario are identical
byte for byte.
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import random
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from cryptography import x509
from cryptography.hazmat.primitives.asymmetric import ed25519
from cryptography.hazmat.primitives.serialization import Encoding
from cryptography.x509.oid import NameOID

from .certs import parse_leaf
from .flowlog import write_flow_log
from .handshake import (
    EXT_ALPN,
    EXT_EC_POINT_FORMATS,
    EXT_SERVER_NAME,
    EXT_SESSION_TICKET,
    EXT_SUPPORTED_GROUPS,
    EXT_SUPPORTED_VERSIONS,
)
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
    WIRE_VERSIONS,
    version_from_wire,
)
from .psl import registrable_domain
from .resumption import link_resumptions

# fixed epoch for certificate validity windows; absolute dates keep the
# generated DER stable no matter when the generator runs
_VALIDITY_START = datetime.datetime(2026, 1, 1, tzinfo=datetime.timezone.utc)


def derived_key(seed: bytes) -> ed25519.Ed25519PrivateKey:
    """Private key deterministically derived from arbitrary seed bytes."""
    return ed25519.Ed25519PrivateKey.from_private_bytes(
        hashlib.sha256(b"key:" + seed).digest()
    )


def make_cert(
    subject_cn: str,
    *,
    seed: bytes,
    issuer_cn: str | None = None,
    issuer_key: ed25519.Ed25519PrivateKey | None = None,
    days: int = 365,
    sans: tuple[str, ...] = (),
    org: str | None = None,
    country: str | None = None,
) -> tuple[bytes, ed25519.Ed25519PrivateKey]:
    """One deterministic DER certificate and its private key.

    Self-signed unless an issuer name and key are given.
    """
    key = derived_key(seed)
    subject_attrs = [x509.NameAttribute(NameOID.COMMON_NAME, subject_cn)]
    if org:
        subject_attrs.append(x509.NameAttribute(NameOID.ORGANIZATION_NAME, org))
    if country:
        subject_attrs.append(x509.NameAttribute(NameOID.COUNTRY_NAME, country))
    subject = x509.Name(subject_attrs)
    if issuer_cn is None:
        issuer, signer = subject, key
    else:
        issuer = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, issuer_cn)])
        signer = issuer_key if issuer_key is not None else derived_key(issuer_cn.encode())

    builder = (
        x509.CertificateBuilder()
        .subject_name(subject)
        .issuer_name(issuer)
        .public_key(key.public_key())
        .serial_number(int.from_bytes(hashlib.sha256(b"serial:" + seed).digest()[:8], "big") | 1)
        .not_valid_before(_VALIDITY_START)
        .not_valid_after(_VALIDITY_START + datetime.timedelta(days=days))
    )
    if sans:
        builder = builder.add_extension(
            x509.SubjectAlternativeName([x509.DNSName(s) for s in sans]),
            critical=False,
        )
    cert = builder.sign(signer, algorithm=None)
    return cert.public_bytes(Encoding.DER), key


# ---------------------------------------------------------------------------
# scenario vocabulary


class ScenarioError(ValueError):
    """A scenario or template that cannot be realized."""


@dataclass(frozen=True)
class ClientProfile:
    """What the template's client offers in its hello."""

    version: int
    ciphers: tuple[int, ...]
    record_version: int = 0x0301
    curves: tuple[int, ...] = (23, 24)
    point_formats: tuple[int, ...] = (0,)
    alpn: tuple[str, ...] = ()
    supported_versions: tuple[int, ...] = ()
    extra_extensions: tuple[int, ...] = ()


@dataclass(frozen=True)
class ServerProfile:
    """What the template's server negotiates back."""

    cipher: int
    version: int = 0x0303
    port: int = 443
    ips: tuple[str, ...] = ("203.0.113.10",)
    alpn: str | None = None
    ticket_lifetime: int | None = None
    extra_extensions: tuple[int, ...] = ()
    # plaintext size of the encrypted TLS 1.3 server flight that rides as
    # the first application-data sequence; ignored for earlier versions
    flight_plaintext: int = 640


@dataclass(frozen=True)
class CertProfile:
    """How the template's servers present certificates.

    ``shared-ca`` signs every leaf with one scenario-local CA, ``free-ca``
    mints one leaf per domain under a DV-style issuer, and ``none`` sends no
    chain at all (TLS 1.3, or an abbreviated resumption handshake).
    """

    kind: str
    ca_name: str = ""
    org: str | None = None
    validity_days: int = 365
    validation: str = "unchecked"
    # subject for the leaf when there is no SNI to copy it from
    leaf_subject: str | None = None


@dataclass(frozen=True)
class SniPolicy:
    kind: str  # "fixed" | "pool" | "absent"
    names: tuple[str, ...] = ()


# one request-response pair: ((req_lo, req_hi), (resp_lo, resp_hi)) in
# plaintext bytes; the realized sizes are drawn uniformly per flow
RrpRange = tuple[tuple[int, int], tuple[int, int]]


@dataclass(frozen=True)
class FamilyTemplate:
    name: str
    client_profile: ClientProfile
    server_profile: ServerProfile
    cert_profile: CertProfile
    sni_policy: SniPolicy
    payload_protocol: tuple[RrpRange, ...]
    flows_per_sample: int = 1
    samples: int = 40
    # family label for the sample list; several templates may share one
    # family (same malware, distinct infrastructure or payload variants)
    family: str | None = None
    # present a session ticket that nothing in the corpus ever issued
    fake_resumption: bool = False

    @property
    def label(self) -> str:
        return self.family or self.name

    @property
    def flow_count(self) -> int:
        return self.samples * self.flows_per_sample

    @property
    def is_tls13(self) -> bool:
        return self.server_profile.version == 0x0304


@dataclass(frozen=True)
class Scenario:
    seed: int
    families: tuple[FamilyTemplate, ...]
    benign_background: FamilyTemplate
    tor_fraction: float = 0.0
    # corpus chaff exercising the filter's first two stages
    failed_flows: int = 0
    quiet_flows: int = 0
    # size of the separate benign-only stream (the "one day" FDR input)
    benign_day_flows: int = 0


def validate_scenario(scenario: Scenario) -> None:
    """Raise ScenarioError on anything generate() could not realize."""
    if not isinstance(scenario.seed, int) or not 0 <= scenario.seed < 2**64:
        raise ScenarioError("seed must be an unsigned 64-bit integer")
    if not 0.0 <= scenario.tor_fraction <= 1.0:
        raise ScenarioError("tor_fraction must be within [0, 1]")
    for knob in ("failed_flows", "quiet_flows", "benign_day_flows"):
        if getattr(scenario, knob) < 0:
            raise ScenarioError(f"{knob} must be >= 0")
    if not scenario.families:
        raise ScenarioError("scenario has no family templates")

    templates = list(scenario.families) + [scenario.benign_background]
    names = [t.name for t in templates]
    if len(set(names)) != len(names):
        raise ScenarioError("template names must be unique")
    for template in templates:
        _validate_template(template)
    if scenario.benign_background.sni_policy.kind == "absent":
        raise ScenarioError("the benign background needs SNIs for the benign list")

    for i, a in enumerate(scenario.families):
        for b in scenario.families[i + 1 :]:
            if a.label == b.label:
                # variants of one family may share the headline knobs but
                # must still differ somewhere, or their clusters collapse
                same = all(
                    getattr(a, f) == getattr(b, f)
                    for f in (
                        "client_profile",
                        "server_profile",
                        "cert_profile",
                        "sni_policy",
                        "payload_protocol",
                        "fake_resumption",
                    )
                )
                if same:
                    raise ScenarioError(
                        f"templates {a.name!r} and {b.name!r} are identical"
                    )
            elif (
                a.sni_policy == b.sni_policy
                and a.cert_profile == b.cert_profile
                and a.payload_protocol == b.payload_protocol
            ):
                raise ScenarioError(
                    f"templates {a.name!r} and {b.name!r} are indistinguishable: "
                    "they share sni_policy, cert_profile and payload_protocol"
                )


def _validate_template(t: FamilyTemplate) -> None:
    def bad(msg: str) -> ScenarioError:
        return ScenarioError(f"template {t.name!r}: {msg}")

    if not t.name or "," in t.name:
        raise ScenarioError(f"bad template name {t.name!r}")
    if t.samples < 1 or t.flows_per_sample < 1:
        raise bad("samples and flows_per_sample must be >= 1")

    cp, sp = t.client_profile, t.server_profile
    if cp.version not in WIRE_VERSIONS:
        raise bad(f"client version {cp.version:#06x} is not a TLS wire version")
    if sp.version not in WIRE_VERSIONS or sp.version == 0x0002:
        raise bad(f"server version {sp.version:#06x} is not negotiable here")
    if not cp.ciphers:
        raise bad("client offers no cipher suites")
    if sp.version == 0x0304 and 0x0304 not in cp.supported_versions:
        raise bad("server negotiates TLS 1.3 but the client never offers it")
    if sp.cipher not in _FRAMING_SUITES:
        raise bad(f"no sizing model for negotiated cipher {sp.cipher:#06x}")
    if (sp.cipher >> 8) == 0x13 and sp.version != 0x0304:
        raise bad("TLS 1.3 cipher suites require a TLS 1.3 server")
    if not sp.ips:
        raise bad("server profile lists no addresses")
    if not 0 < sp.port < 65536:
        raise bad(f"port {sp.port} out of range")
    if sp.flight_plaintext < 0:
        raise bad("flight_plaintext must be >= 0")

    sni = t.sni_policy
    if sni.kind == "fixed":
        if len(sni.names) != 1:
            raise bad("fixed sni_policy takes exactly one name")
    elif sni.kind == "pool":
        if len(sni.names) < 2:
            raise bad("pool sni_policy needs at least two names")
        if len(set(sni.names)) != len(sni.names):
            raise bad("sni pool repeats a name")
    elif sni.kind == "absent":
        if sni.names:
            raise bad("absent sni_policy takes no names")
    else:
        raise bad(f"unknown sni_policy kind {sni.kind!r}")

    cert = t.cert_profile
    if cert.kind not in ("shared-ca", "free-ca", "none"):
        raise bad(f"unknown cert_profile kind {cert.kind!r}")
    if cert.kind != "none":
        if t.is_tls13:
            raise bad("TLS 1.3 keeps certificates encrypted; use cert kind 'none'")
        if not cert.ca_name:
            raise bad("cert profile needs a ca_name")
        if cert.validity_days < 1:
            raise bad("certificate validity must be at least one day")
        if sni.kind == "absent" and not cert.leaf_subject:
            raise bad("no SNI to name the leaf after; set cert_profile.leaf_subject")
        try:
            ValidationStatus(cert.validation)
        except ValueError:
            raise bad(f"unknown validation status {cert.validation!r}") from None
    elif not t.is_tls13 and not t.fake_resumption:
        raise bad("only TLS 1.3 or resumed handshakes may omit the certificate")

    if not t.payload_protocol:
        raise bad("payload_protocol is empty")
    for rrp in t.payload_protocol:
        for lo, hi in rrp:
            if lo < 0 or hi < lo:
                raise bad(f"payload range ({lo}, {hi}) is not 0 <= lo <= hi")


# ---------------------------------------------------------------------------
# on-the-wire sizing

# AEAD_AES_128_GCM ciphertext is exactly the tag longer than its plaintext.
_AEAD_TAG = 16
# TLS 1.2 GCM records carry an 8-byte explicit nonce before the ciphertext;
# TLS 1.3 records hide one content-type byte inside it instead.
_TLS12_GCM_FRAMING = 8
_TLS13_FRAMING = 1

_MAX_RECORD_PLAINTEXT = 16384

# negotiated suites the generator knows how to size on the wire
_GCM_128_SUITES = frozenset({0x1301, 0x009C, 0xC02B, 0xC02F})
_CBC_SHA_SUITES = frozenset({0x000A, 0x002F, 0x0035, 0xC013, 0xC014})
_FRAMING_SUITES = _GCM_128_SUITES | _CBC_SHA_SUITES


def ciphertext_sizes(plaintext: int, version: int, cipher: int) -> list[int]:
    """Record payload sizes carrying ``plaintext`` bytes of application data.

    This is what a capture of the connection would show as TLS record
    lengths: data is split into records of at most 16 KiB of plaintext and
    each record grows by the cipher's per-record overhead.
    """
    if plaintext < 0:
        raise ValueError("plaintext size must be >= 0")
    sizes: list[int] = []
    remaining = plaintext
    while remaining > 0:
        chunk = min(remaining, _MAX_RECORD_PLAINTEXT)
        sizes.append(_record_size(chunk, version, cipher))
        remaining -= chunk
    return sizes


def _record_size(chunk: int, version: int, cipher: int) -> int:
    if version == 0x0304:
        return chunk + _TLS13_FRAMING + _AEAD_TAG
    if cipher in _GCM_128_SUITES:
        return chunk + _TLS12_GCM_FRAMING + _AEAD_TAG
    # CBC with HMAC-SHA1: append the MAC and at least one padding-length
    # byte, pad up to the block size; TLS 1.1+ adds an explicit 16-byte IV
    iv = 16 if version >= 0x0302 else 0
    padded = chunk + 20 + 1 + (-(chunk + 20 + 1) % 16)
    return iv + padded


# size of the encrypted Finished message the TLS 1.3 client returns inside
# the first application-data-typed record
_FINISHED_PLAINTEXT = 36


# ---------------------------------------------------------------------------
# realization


@dataclass
class GeneratedCorpus:
    """Paths and counts of one generate() run."""

    out_dir: Path
    flows_path: Path
    benign_path: Path
    ground_truth_path: Path
    labels_path: Path
    benign_domains_path: Path
    flow_count: int
    benign_count: int
    ground_truth: dict[str, str]  # flow uid -> template-derived cluster
    sample_labels: dict[str, str]  # sample id -> family


_EPOCH = 1767225600.0  # 2026-01-01T00:00:00Z, same origin as the cert clock


class _Builder:
    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.clock = _EPOCH
        self.next_sport = 49152
        self.sample_hosts: dict[str, str] = {}
        self._ca_cache: dict[str, tuple[bytes, ed25519.Ed25519PrivateKey]] = {}
        self._chain_cache: dict[tuple[str, str], list[bytes]] = {}

    # -- deterministic plumbing -------------------------------------------

    def tick(self) -> float:
        self.clock += self.rng.uniform(0.4, 2.5)
        return round(self.clock, 6)

    def sport(self) -> int:
        self.next_sport += self.rng.randint(1, 7)
        return self.next_sport

    def host_for(self, sample_id: str) -> str:
        host = self.sample_hosts.get(sample_id)
        if host is None:
            host = "10.{}.{}.{}".format(
                self.rng.randint(1, 240),
                self.rng.randint(1, 240),
                self.rng.randint(2, 240),
            )
            self.sample_hosts[sample_id] = host
        return host

    # -- certificates ------------------------------------------------------

    def _ca(self, profile: CertProfile) -> tuple[bytes, ed25519.Ed25519PrivateKey]:
        cached = self._ca_cache.get(profile.ca_name)
        if cached is None:
            cached = make_cert(
                profile.ca_name,
                seed=b"ca:" + profile.ca_name.encode(),
                days=3650,
                org=profile.org,
            )
            self._ca_cache[profile.ca_name] = cached
        return cached

    def chain_for(self, profile: CertProfile, subject: str) -> CertificateChain | None:
        if profile.kind == "none":
            return None
        key = (profile.ca_name, subject)
        ders = self._chain_cache.get(key)
        if ders is None:
            ca_der, ca_key = self._ca(profile)
            leaf_der, _ = make_cert(
                subject,
                seed=f"leaf:{profile.ca_name}:{subject}".encode(),
                issuer_cn=profile.ca_name,
                issuer_key=ca_key,
                days=profile.validity_days,
                sans=(subject,),
                org=profile.org if profile.kind == "shared-ca" else None,
            )
            ders = [leaf_der, ca_der]
            self._chain_cache[key] = ders
        return CertificateChain(
            owner=ChainOwner.SERVER,
            certs_der=list(ders),
            leaf=parse_leaf(ders[0]),
            validation_status=ValidationStatus(profile.validation),
        )

    def tor_chain(self, subject: str) -> CertificateChain:
        """Single self-styled leaf in the onion-router shape: the subject is
        the camouflage domain and the issuer is another random one."""
        issuer = "www.{}.net".format(self._tor_label())
        leaf_der, _ = make_cert(
            subject,
            seed=f"tor:{subject}".encode(),
            issuer_cn=issuer,
            days=90,
        )
        return CertificateChain(
            owner=ChainOwner.SERVER,
            certs_der=[leaf_der],
            leaf=parse_leaf(leaf_der),
            validation_status=ValidationStatus.UNCHECKED,
        )

    def _tor_label(self) -> str:
        alphabet = "abcdefghijklmnopqrstuvwxyz234567"
        return "".join(
            self.rng.choice(alphabet) for _ in range(self.rng.randint(10, 16))
        )

    def tor_domain(self) -> str:
        return "www.{}.com".format(self._tor_label())

    # -- hello composition ---------------------------------------------------

    def client_hello(
        self,
        profile: ClientProfile,
        sni: str | None,
        ticket: bytes | None = None,
    ) -> ClientHello:
        extensions: list[int] = []
        if sni is not None:
            extensions.append(EXT_SERVER_NAME)
        extensions += [EXT_SUPPORTED_GROUPS, EXT_EC_POINT_FORMATS]
        if profile.alpn:
            extensions.append(EXT_ALPN)
        if ticket is not None:
            extensions.append(EXT_SESSION_TICKET)
        if profile.supported_versions:
            # supported_versions travels with the other 1.3 offers
            extensions += [EXT_SUPPORTED_VERSIONS, 45, 51]
        extensions += profile.extra_extensions
        session_id = (
            self.rng.randbytes(32) if profile.supported_versions else b""
        )
        return ClientHello(
            version=profile.version,
            record_version=profile.record_version,
            session_id=session_id,
            ciphers=list(profile.ciphers),
            comp_methods=[0],
            curves=list(profile.curves),
            point_formats=list(profile.point_formats),
            extensions=extensions,
            server_name=sni,
            alpn=list(profile.alpn),
            supported_versions=list(profile.supported_versions),
            session_ticket=ticket,
        )

    def server_hello(
        self, profile: ServerProfile, client: ClientHello
    ) -> ServerHello:
        tls13 = profile.version == 0x0304
        extensions: list[int] = []
        issued = None
        if tls13:
            extensions += [EXT_SUPPORTED_VERSIONS, 51]
        else:
            extensions.append(0xFF01)  # renegotiation_info
            if profile.cipher >> 8 == 0xC0:
                extensions.append(EXT_EC_POINT_FORMATS)
            if profile.ticket_lifetime is not None:
                extensions.append(EXT_SESSION_TICKET)
                issued = self.rng.randbytes(176)
        if profile.alpn is not None:
            extensions.append(EXT_ALPN)
        extensions += profile.extra_extensions
        return ServerHello(
            version=0x0303 if tls13 else profile.version,
            record_version=0x0301 if profile.version == 0x0301 else 0x0303,
            cipher=profile.cipher,
            comp_method=0,
            session_id=client.session_id if tls13 else self.rng.randbytes(32),
            extensions=extensions,
            alpn=profile.alpn,
            supported_version=0x0304 if tls13 else None,
            issued_ticket=issued,
            ticket_lifetime=profile.ticket_lifetime if not tls13 else None,
        )

    # -- payload -------------------------------------------------------------

    def sequences(
        self, template: FamilyTemplate, ts: float
    ) -> list[AppDataSequenceRaw]:
        sp = template.server_profile
        version, cipher = sp.version, sp.cipher
        t = ts + 0.083
        seqs: list[AppDataSequenceRaw] = []

        def push(direction: Direction, sizes: list[int]) -> None:
            nonlocal t
            if not sizes:
                return
            seq = AppDataSequenceRaw(direction=direction)
            for size in sizes:
                seq.packets.append((size, round(t, 6)))
                t += 0.004
            t += 0.021
            seqs.append(seq)

        head: list[int] = []
        if template.is_tls13:
            # the encrypted server flight and the client Finished travel as
            # application data; the capture cannot tell them apart
            push(
                Direction.SERVER_TO_CLIENT,
                ciphertext_sizes(sp.flight_plaintext, version, cipher),
            )
            head = ciphertext_sizes(_FINISHED_PLAINTEXT, version, cipher)

        for req_range, resp_range in template.payload_protocol:
            req = self.rng.randint(*req_range)
            resp = self.rng.randint(*resp_range)
            push(
                Direction.CLIENT_TO_SERVER,
                head + ciphertext_sizes(req, version, cipher),
            )
            head = []
            push(
                Direction.SERVER_TO_CLIENT,
                ciphertext_sizes(resp, version, cipher),
            )
        return seqs

    # -- whole flows -----------------------------------------------------------

    def template_flow(
        self, template: FamilyTemplate, sample_id: str, sni: str | None
    ) -> TlsFlow:
        ticket = self.rng.randbytes(48) if template.fake_resumption else None
        client = self.client_hello(template.client_profile, sni, ticket)
        server = self.server_hello(template.server_profile, client)
        cert = template.cert_profile
        subject = sni if sni is not None else cert.leaf_subject
        chain = self.chain_for(cert, subject) if cert.kind != "none" else None

        ts = self.tick()
        sp = template.server_profile
        key = FlowKey(
            src=self.host_for(sample_id),
            dst=self.rng.choice(sp.ips),
            sport=self.sport(),
            dport=sp.port,
            ts=ts,
        )
        return TlsFlow(
            key=key,
            meta=TraceMeta(source_kind=SourceKind.FLOW_LOG, sample_id=sample_id),
            client=client,
            server=server,
            server_chain=chain,
            sequences=self.sequences(template, ts),
            established=True,
            negotiated_version=version_from_wire(sp.version),
        )

    def failed_flow(self, template: FamilyTemplate, index: int) -> TlsFlow:
        """Handshake that dies on a fatal alert before any ServerHello."""
        sni = self.rng.choice(template.sni_policy.names)
        client = self.client_hello(template.client_profile, sni)
        # alternate the two classic failure modes
        desc = 70 if index % 2 == 0 else 40  # protocol_version / handshake_failure
        ts = self.tick()
        key = FlowKey(
            src=self.host_for(f"chaff-{index:03d}"),
            dst=self.rng.choice(template.server_profile.ips),
            sport=self.sport(),
            dport=template.server_profile.port,
            ts=ts,
        )
        return TlsFlow(
            key=key,
            meta=TraceMeta(source_kind=SourceKind.FLOW_LOG, sample_id=None),
            client=client,
            alerts=[(2, desc)],
            established=False,
        )

    def quiet_flow(self, template: FamilyTemplate, index: int) -> TlsFlow:
        """Completed handshake that never exchanges application data."""
        sni = self.rng.choice(template.sni_policy.names)
        client = self.client_hello(template.client_profile, sni)
        server = self.server_hello(template.server_profile, client)
        chain = self.chain_for(template.cert_profile, sni)
        ts = self.tick()
        key = FlowKey(
            src=self.host_for(f"chaff-{index:03d}"),
            dst=self.rng.choice(template.server_profile.ips),
            sport=self.sport(),
            dport=template.server_profile.port,
            ts=ts,
        )
        return TlsFlow(
            key=key,
            meta=TraceMeta(source_kind=SourceKind.FLOW_LOG, sample_id=None),
            client=client,
            server=server,
            server_chain=chain,
            established=True,
            negotiated_version=version_from_wire(template.server_profile.version),
        )

    def tor_flow(self, template: FamilyTemplate, index: int) -> TlsFlow:
        domain = self.tor_domain()
        client = self.client_hello(template.client_profile, domain)
        server = self.server_hello(template.server_profile, client)
        ts = self.tick()
        key = FlowKey(
            src=self.host_for(f"relay-{index:03d}"),
            dst="203.0.113.{}".format(200 + index % 50),
            sport=self.sport(),
            dport=template.server_profile.port,
            ts=ts,
        )
        return TlsFlow(
            key=key,
            meta=TraceMeta(source_kind=SourceKind.FLOW_LOG, sample_id=None),
            client=client,
            server=server,
            server_chain=self.tor_chain(domain),
            sequences=self.sequences(template, ts),
            established=True,
            negotiated_version=version_from_wire(template.server_profile.version),
        )


def _draw_sni(builder: _Builder, template: FamilyTemplate) -> str | None:
    policy = template.sni_policy
    if policy.kind == "absent":
        return None
    if policy.kind == "fixed":
        return policy.names[0]
    return builder.rng.choice(policy.names)


def generate(scenario: Scenario, out_dir: str | Path) -> GeneratedCorpus:
    """Realize a scenario into a labeled corpus under ``out_dir``.

    Writes the mixed capture (``flows.jsonl``), a separate benign-only
    stream (``benign.jsonl``), the per-flow cluster ground truth
    (``groundtruth.csv``), the per-sample family labels (``labels.csv``)
    and the background's registrable domains (``benign_domains.txt``).
    """
    validate_scenario(scenario)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    builder = _Builder(scenario.seed)
    background = scenario.benign_background

    tasks: list[tuple[str, FamilyTemplate, object]] = []
    for template in scenario.families:
        for si in range(template.samples):
            sample_id = f"{template.name}-{si:03d}"
            tasks += [("family", template, sample_id)] * template.flows_per_sample
    for si in range(background.samples):
        sample_id = f"{background.name}-{si:03d}"
        tasks += [("benign", background, sample_id)] * background.flows_per_sample
    tor_count = round(scenario.tor_fraction * background.flow_count)
    tasks += [("tor", background, i) for i in range(tor_count)]
    tasks += [("failed", background, i) for i in range(scenario.failed_flows)]
    tasks += [("quiet", background, i) for i in range(scenario.quiet_flows)]
    builder.rng.shuffle(tasks)

    flows: list[TlsFlow] = []
    ground_truth: dict[str, str] = {}
    sample_labels: dict[str, str] = {}
    for kind, template, arg in tasks:
        if kind == "family":
            flow = builder.template_flow(template, arg, _draw_sni(builder, template))
            ground_truth[flow.uid] = template.name
            sample_labels[arg] = template.label
        elif kind == "benign":
            flow = builder.template_flow(template, arg, _draw_sni(builder, template))
        elif kind == "tor":
            flow = builder.tor_flow(template, arg)
        elif kind == "failed":
            flow = builder.failed_flow(template, arg)
        else:
            flow = builder.quiet_flow(template, arg)
        flows.append(flow)
    link_resumptions(flows)

    # the benign-only stream models a later capture day on the same network
    builder.clock += 86400.0
    day_flows = [
        builder.template_flow(
            background,
            "day-{:03d}".format(i // background.flows_per_sample),
            _draw_sni(builder, background),
        )
        for i in range(scenario.benign_day_flows)
    ]

    flows_path = out / "flows.jsonl"
    benign_path = out / "benign.jsonl"
    ground_truth_path = out / "groundtruth.csv"
    labels_path = out / "labels.csv"
    benign_domains_path = out / "benign_domains.txt"

    write_flow_log(flows_path, flows)
    write_flow_log(benign_path, day_flows)
    with open(ground_truth_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["flow_uid", "cluster"])
        writer.writerows(ground_truth.items())
    with open(labels_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "family"])
        writer.writerows(sorted(sample_labels.items()))
    domains = sorted({registrable_domain(n) for n in background.sni_policy.names})
    benign_domains_path.write_text(
        "# registrable domains of the synthetic benign background\n"
        + "".join(d + "\n" for d in domains),
        encoding="utf-8",
    )

    return GeneratedCorpus(
        out_dir=out,
        flows_path=flows_path,
        benign_path=benign_path,
        ground_truth_path=ground_truth_path,
        labels_path=labels_path,
        benign_domains_path=benign_domains_path,
        flow_count=len(flows),
        benign_count=len(day_flows),
        ground_truth=ground_truth,
        sample_labels=sample_labels,
    )


# ---------------------------------------------------------------------------
# the shipped scenario


def default_scenario() -> Scenario:
    """Six invented families over a TLS 1.0/1.2/1.3 mix, roughly 40 samples
    each, against a valid-certificate benign background.

    The roster covers the behaviors the pipeline has to tell apart: an old
    TLS 1.0 beacon on a family CA, a TLS 1.2 downloader rotating three
    domains with per-domain DV certificates, a TLS 1.3 family (no SNI, no
    visible certificate) split into two payload variants, an appliance
    family split across two server deployments, and a family faking ticket
    resumption so no certificate is ever shown.

    Malicious templates speak rigid binary protocols: every flow of a
    template exchanges the same message sizes, so its flows share one
    feature vector exactly. Template variants inside a family keep their
    own vector, which puts the ground-truth clusters at template
    granularity. The benign background draws from wide size ranges.
    """
    copperfin = FamilyTemplate(
        name="copperfin",
        client_profile=ClientProfile(
            version=0x0301,
            ciphers=(0x002F, 0x0035, 0x000A),
            curves=(23,),
        ),
        server_profile=ServerProfile(
            cipher=0x002F, version=0x0301, ips=("203.0.113.21",)
        ),
        cert_profile=CertProfile(
            kind="shared-ca",
            ca_name="Starlit Networks Root CA",
            org="Starlit Networks Ltd",
            validity_days=730,
        ),
        sni_policy=SniPolicy("fixed", ("update.brassfield-cdn.com",)),
        payload_protocol=(((132, 132), (296, 296)), ((104, 104), (216, 216))),
        flows_per_sample=2,
        samples=40,
    )

    quartz_client = ClientProfile(
        version=0x0303,
        ciphers=(0xC02F, 0xC02B, 0x009C),
        curves=(23, 24, 25),
        alpn=("http/1.1",),
        extra_extensions=(13, 23),
    )
    quartz_cert = CertProfile(
        kind="free-ca", ca_name="Lumen Domain Validation CA", validity_days=90
    )
    quartz_payload = (((160, 160), (7160, 7160)), ((104, 104), (520256, 520256)))

    def quartz(suffix: str, domain: str, ip: str, samples: int) -> FamilyTemplate:
        return FamilyTemplate(
            name=f"quartzloader-{suffix}",
            family="quartzloader",
            client_profile=quartz_client,
            server_profile=ServerProfile(
                cipher=0xC02F, ips=(ip,), alpn="http/1.1"
            ),
            cert_profile=quartz_cert,
            sni_policy=SniPolicy("fixed", (domain,)),
            payload_protocol=quartz_payload,
            samples=samples,
        )

    nightjar_client = ClientProfile(
        version=0x0303,
        ciphers=(0x1301, 0x1303, 0x1302),
        curves=(29, 23),
        supported_versions=(0x0304, 0x0303),
        extra_extensions=(13,),
    )
    nightjar_server = ServerProfile(
        cipher=0x1301,
        version=0x0304,
        ips=("203.0.113.41", "203.0.113.42"),
        flight_plaintext=640,
    )

    def nightjar(suffix: str, payload: tuple[RrpRange, ...]) -> FamilyTemplate:
        # one family, two C2 protocol revisions; only payload sizes differ
        return FamilyTemplate(
            name=f"nightjar-{suffix}",
            family="nightjar",
            client_profile=nightjar_client,
            server_profile=nightjar_server,
            cert_profile=CertProfile(kind="none"),
            sni_policy=SniPolicy("absent"),
            payload_protocol=payload,
            samples=20,
        )

    bronzekey = FamilyTemplate(
        name="bronzekey",
        client_profile=ClientProfile(
            version=0x0303,
            ciphers=(0x1301, 0x1302),
            curves=(29, 24, 23),
            alpn=("h2",),
            supported_versions=(0x0304,),
            extra_extensions=(5, 13, 18, 23),
        ),
        server_profile=ServerProfile(
            cipher=0x1301,
            version=0x0304,
            ips=("203.0.113.51",),
            alpn="h2",
            flight_plaintext=672,
        ),
        cert_profile=CertProfile(kind="none"),
        sni_policy=SniPolicy("absent"),
        payload_protocol=(((256, 256), (656, 656)), ((96, 96), (2064, 2064))),
        samples=40,
    )

    ironlatch_client = ClientProfile(
        version=0x0303,
        ciphers=(0x009C, 0x009D, 0x002F),
        curves=(23, 24),
        extra_extensions=(23,),
    )
    ironlatch_cert = CertProfile(
        kind="shared-ca",
        ca_name="Harborlight Device CA",
        leaf_subject="*.bridgeworkspace.net",
    )
    ironlatch_payload = (((528, 528), (1056, 1056)), ((204, 204), (408, 408)))

    def ironlatch(suffix: str, ip: str, lifetime: int) -> FamilyTemplate:
        # two deployments of one appliance family; only the server side
        # (ticket lifetime) tells them apart
        return FamilyTemplate(
            name=f"ironlatch-{suffix}",
            family="ironlatch",
            client_profile=ironlatch_client,
            server_profile=ServerProfile(
                cipher=0x009C, ips=(ip,), ticket_lifetime=lifetime
            ),
            cert_profile=ironlatch_cert,
            sni_policy=SniPolicy("absent"),
            payload_protocol=ironlatch_payload,
            samples=20,
        )

    ghostveil = FamilyTemplate(
        name="ghostveil",
        client_profile=ClientProfile(
            version=0x0303,
            ciphers=(0xC02F, 0xC030),
            curves=(23,),
            extra_extensions=(13, 23),
        ),
        server_profile=ServerProfile(cipher=0xC02F, ips=("203.0.113.71",)),
        cert_profile=CertProfile(kind="none"),
        sni_policy=SniPolicy("fixed", ("sync.veilport-app.com",)),
        payload_protocol=(((88, 88), (156, 156)), ((624, 624), (316, 316))),
        samples=40,
        fake_resumption=True,
    )

    benign = FamilyTemplate(
        name="benign",
        client_profile=ClientProfile(
            version=0x0303,
            ciphers=(0x1301, 0x1302, 0x1303, 0xC02B, 0xC02F, 0xC030, 0x009C),
            curves=(29, 23, 24),
            alpn=("h2", "http/1.1"),
            supported_versions=(0x0304, 0x0303),
            extra_extensions=(5, 13, 18, 23),
        ),
        server_profile=ServerProfile(
            cipher=0xC02F,
            ips=(
                "198.51.100.10",
                "198.51.100.11",
                "198.51.100.12",
                "198.51.100.13",
            ),
            alpn="h2",
            ticket_lifetime=7200,
        ),
        cert_profile=CertProfile(
            kind="shared-ca",
            ca_name="Meridian Trust Secure CA",
            org="Meridian Trust Inc",
            validation="valid",
        ),
        sni_policy=SniPolicy(
            "pool",
            (
                "www.lakeshorepost.com",
                "cdn.bluefir.net",
                "mail.harborpoint.org",
                "api.stonebridgepay.io",
                "shop.willowmart.com",
                "static.polarcdn.net",
                "portal.crestlinehq.com",
                "sync.driftcloud.app",
                "news.quarryfield.com",
                "files.larkspurbox.net",
                "auth.pinewheel.dev",
                "video.mossbrook.org",
            ),
        ),
        payload_protocol=(((417, 913), (1122, 8544)), ((300, 662), (505, 3008))),
        flows_per_sample=2,
        samples=60,
    )

    return Scenario(
        seed=42,
        families=(
            copperfin,
            quartz("a", "storedelivery-al.com", "203.0.113.31", 14),
            quartz("b", "storedelivery-ac.com", "203.0.113.32", 13),
            quartz("c", "parceldispatch-mg.com", "203.0.113.33", 13),
            nightjar("a", (((96, 96), (3128, 3128)), ((64, 64), (1040, 1040)))),
            nightjar("b", (((96, 96), (3128, 3128)), ((520, 520), (336, 336)))),
            bronzekey,
            ironlatch("a", "203.0.113.61", 3600),
            ironlatch("b", "203.0.113.62", 7200),
            ghostveil,
        ),
        benign_background=benign,
        tor_fraction=0.05,
        failed_flows=6,
        quiet_flows=6,
        benign_day_flows=150,
    )


# ---------------------------------------------------------------------------
# scenario (de)serialization for the CLI


_SCENARIO_KEYS = (
    "seed",
    "families",
    "benign_background",
    "tor_fraction",
    "failed_flows",
    "quiet_flows",
    "benign_day_flows",
)
_TEMPLATE_KEYS = (
    "name",
    "family",
    "client_profile",
    "server_profile",
    "cert_profile",
    "sni_policy",
    "payload_protocol",
    "flows_per_sample",
    "samples",
    "fake_resumption",
)


def _as_plain(value):
    if isinstance(value, tuple):
        return [_as_plain(v) for v in value]
    return value


def _deep_tuple(value):
    if isinstance(value, list):
        return tuple(_deep_tuple(v) for v in value)
    return value


def _check_keys(data: dict, allowed: tuple[str, ...], ctx: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ScenarioError(f"unknown key {unknown[0]!r} in {ctx}")


def _sub_to_dict(obj) -> dict:
    return {f.name: _as_plain(getattr(obj, f.name)) for f in dc_fields(obj)}


def _sub_from_dict(cls, data, ctx: str):
    if not isinstance(data, dict):
        raise ScenarioError(f"{ctx} must be an object")
    names = tuple(f.name for f in dc_fields(cls))
    _check_keys(data, names, ctx)
    try:
        return cls(**{k: _deep_tuple(v) for k, v in data.items()})
    except TypeError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from None


def _template_to_dict(template: FamilyTemplate) -> dict:
    return {
        "name": template.name,
        "family": template.family,
        "client_profile": _sub_to_dict(template.client_profile),
        "server_profile": _sub_to_dict(template.server_profile),
        "cert_profile": _sub_to_dict(template.cert_profile),
        "sni_policy": _sub_to_dict(template.sni_policy),
        "payload_protocol": _as_plain(template.payload_protocol),
        "flows_per_sample": template.flows_per_sample,
        "samples": template.samples,
        "fake_resumption": template.fake_resumption,
    }


def _template_from_dict(data, ctx: str) -> FamilyTemplate:
    if not isinstance(data, dict):
        raise ScenarioError(f"{ctx} must be an object")
    _check_keys(data, _TEMPLATE_KEYS, ctx)
    for required in ("name", "client_profile", "server_profile", "cert_profile",
                     "sni_policy", "payload_protocol"):
        if required not in data:
            raise ScenarioError(f"{ctx} is missing {required!r}")
    kwargs = {
        "name": data["name"],
        "client_profile": _sub_from_dict(
            ClientProfile, data["client_profile"], f"{ctx}.client_profile"
        ),
        "server_profile": _sub_from_dict(
            ServerProfile, data["server_profile"], f"{ctx}.server_profile"
        ),
        "cert_profile": _sub_from_dict(
            CertProfile, data["cert_profile"], f"{ctx}.cert_profile"
        ),
        "sni_policy": _sub_from_dict(
            SniPolicy, data["sni_policy"], f"{ctx}.sni_policy"
        ),
        "payload_protocol": _deep_tuple(data["payload_protocol"]),
    }
    for optional in ("family", "flows_per_sample", "samples", "fake_resumption"):
        if optional in data and data[optional] is not None:
            kwargs[optional] = data[optional]
    return FamilyTemplate(**kwargs)


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "seed": scenario.seed,
        "families": [_template_to_dict(t) for t in scenario.families],
        "benign_background": _template_to_dict(scenario.benign_background),
        "tor_fraction": scenario.tor_fraction,
        "failed_flows": scenario.failed_flows,
        "quiet_flows": scenario.quiet_flows,
        "benign_day_flows": scenario.benign_day_flows,
    }


def scenario_from_dict(data: dict) -> Scenario:
    """Parse and validate a scenario document. Unknown keys are errors."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a JSON object")
    _check_keys(data, _SCENARIO_KEYS, "scenario")
    for required in ("seed", "families", "benign_background"):
        if required not in data:
            raise ScenarioError(f"scenario is missing {required!r}")
    if not isinstance(data["families"], list):
        raise ScenarioError("scenario.families must be a list")
    scenario = Scenario(
        seed=data["seed"],
        families=tuple(
            _template_from_dict(t, f"families[{i}]")
            for i, t in enumerate(data["families"])
        ),
        benign_background=_template_from_dict(
            data["benign_background"], "benign_background"
        ),
        tor_fraction=data.get("tor_fraction", 0.0),
        failed_flows=data.get("failed_flows", 0),
        quiet_flows=data.get("quiet_flows", 0),
        benign_day_flows=data.get("benign_day_flows", 0),
    )
    validate_scenario(scenario)
    return scenario

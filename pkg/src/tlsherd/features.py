"""Per-flow feature extraction.

Four feature categories feed the clustering distance:

* client categorical (11): what the client offered in its hello
* server categorical (9): what the server picked, plus the contact port
* certificate categorical (24 server-side, 22 more if a client cert showed up)
* payload numerical (24): sizes and shapes of the encrypted conversation

Categorical values are string tokens. Multi-valued wire fields (cipher
lists, extension lists) become a single ordered token, hyphen-joined hex,
so the whole list fingerprints as one vocabulary entry. String lists such
as ALPN are comma-joined. A ``None`` value means the feature is absent
for this flow and contributes nothing to its vector.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .model import AppDataSequenceRaw, CertificateChain, Direction, TlsFlow

# Number of request-response pairs given dedicated feature slots.
RRP_COUNT = 3

CLIENT_FEATURES = (
    "c_version",
    "c_record_version",
    "c_supported_versions",
    "c_ciphers",
    "c_comp_methods",
    "c_curves",
    "c_point_formats",
    "c_extensions",
    "c_server_name",
    "c_alpn_list",
    "c_fake_resumption",
)

SERVER_FEATURES = (
    "s_dst_port",
    "s_version",
    "s_record_version",
    "s_cipher",
    "s_comp_method",
    "s_extensions",
    "s_alpn_list",
    "s_session_ticket_lifetime",
    "s_ct_signature",
)

_DN_PARTS = ("cn", "o", "ou", "c", "st", "l", "email")

CERT_FEATURES = (
    "s_num_certs",
    "s_leaf_cert_version",
    "s_leaf_cert_validity",
    "s_leaf_cert_num_SAN",
    "s_leaf_cert_ext_num",
    "s_leaf_cert_validation_status",
    "s_leaf_cert_self_signed",
    "s_leaf_cert_sign_alg",
    "s_leaf_cert_pubkey_hash",
    "s_leaf_cert_pubkey_size",
    *(f"s_leaf_cert_subj_{part}" for part in _DN_PARTS),
    *(f"s_leaf_cert_iss_{part}" for part in _DN_PARTS),
)

# Client certificates are rare; when one exists these ride along. There is
# no validation or self-signed judgement for them.
CLIENT_CERT_FEATURES = (
    "c_num_certs",
    "c_leaf_cert_version",
    "c_leaf_cert_validity",
    "c_leaf_cert_num_SAN",
    "c_leaf_cert_ext_num",
    "c_leaf_cert_sign_alg",
    "c_leaf_cert_pubkey_hash",
    "c_leaf_cert_pubkey_size",
    *(f"c_leaf_cert_subj_{part}" for part in _DN_PARTS),
    *(f"c_leaf_cert_iss_{part}" for part in _DN_PARTS),
)

PAYLOAD_FEATURES = (
    "enc_data_size",
    "enc_sent_size",
    "enc_recv_size",
    "enc_num_pkts",
    "enc_sent_pkts",
    "enc_recv_pkts",
    "c_max_seq",
    "c_max_length",
    "s_max_seq",
    "s_max_length",
    "sent_recv_pkts_ratio",
    "sent_recv_size_ratio",
    *(
        name
        for i in range(RRP_COUNT)
        for name in (
            f"msg_pkts_c_{i}",
            f"msg_size_c_{i}",
            f"msg_pkts_s_{i}",
            f"msg_size_s_{i}",
        )
    ),
)

N_CLIENT = len(CLIENT_FEATURES)
N_SERVER = len(SERVER_FEATURES)
N_CERT = len(CERT_FEATURES)
N_PAYLOAD = len(PAYLOAD_FEATURES)

assert (N_CLIENT, N_SERVER, N_CERT, N_PAYLOAD) == (11, 9, 24, 24)


@dataclass(frozen=True)
class FeatureConfig:
    """Which feature categories participate, and whether numerics get z-scored."""

    name: str = "all"
    include_client: bool = True
    include_server: bool = True
    include_cert: bool = True
    include_payload: bool = True
    zscore: bool = True

    @property
    def n_categorical(self) -> int:
        return (
            N_CLIENT * self.include_client
            + N_SERVER * self.include_server
            + N_CERT * self.include_cert
        )

    @property
    def n_numeric(self) -> int:
        return N_PAYLOAD * self.include_payload

    def categorical_features(self) -> tuple[str, ...]:
        out: tuple[str, ...] = ()
        if self.include_client:
            out += CLIENT_FEATURES
        if self.include_server:
            out += SERVER_FEATURES
        if self.include_cert:
            out += CERT_FEATURES + CLIENT_CERT_FEATURES
        return out

    def numeric_features(self) -> tuple[str, ...]:
        return PAYLOAD_FEATURES if self.include_payload else ()

    @classmethod
    def from_name(cls, name: str) -> "FeatureConfig":
        """Resolve a named configuration.

        Accepts the ablation grid names (``all``, ``no-client``, ``no-server``,
        ``no-cert``, ``no-payload``, ``payload-only``, each optionally with a
        ``-nozs`` suffix) and the canonical short aliases FD1..FD8.
        """
        key = name.strip().lower()
        aliases = {
            "fd1": "all",
            "fd2": "no-client",
            "fd3": "no-server",
            "fd4": "no-cert",
            "fd5": "no-payload",
            "fd6": "payload-only",
            "fd7": "no-cert-nozs",
            "fd8": "no-cert",
        }
        key = aliases.get(key, key)
        zscore = True
        if key.endswith("-nozs"):
            zscore = False
            key = key[: -len("-nozs")]
        grid = {
            "all": (True, True, True, True),
            "no-client": (False, True, True, True),
            "no-server": (True, False, True, True),
            "no-cert": (True, True, False, True),
            "no-payload": (True, True, True, False),
            "payload-only": (False, False, False, True),
        }
        if key not in grid:
            raise ValueError(f"unknown feature configuration name: {name!r}")
        client, server, cert, payload = grid[key]
        shown = key if zscore else key + "-nozs"
        return cls(shown, client, server, cert, payload, zscore)


ABLATION_GRID = tuple(
    base + suffix
    for base in ("all", "no-client", "no-server", "no-cert", "no-payload", "payload-only")
    for suffix in ("", "-nozs")
)


@dataclass
class RawFeatures:
    """Extraction output for one flow, before any vectorization."""

    categorical: dict[str, str | None] = field(default_factory=dict)
    numeric: dict[str, float] = field(default_factory=dict)


def _hexjoin(values: list[int], width: int = 4) -> str | None:
    if not values:
        return None
    return "-".join(f"{v:0{width}x}" for v in values)


def _strjoin(values: list[str]) -> str | None:
    if not values:
        return None
    return ",".join(values)


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def normalize_sequences(
    sequences: list[AppDataSequenceRaw],
) -> list[AppDataSequenceRaw]:
    """Merge adjacent same-direction sequences and drop empty ones.

    Well-formed input already alternates; this makes sequence_stats total
    over arbitrary input.
    """
    out: list[AppDataSequenceRaw] = []
    for seq in sequences:
        if not seq.packets:
            continue
        if out and out[-1].direction is seq.direction:
            out[-1].packets.extend(seq.packets)
        else:
            out.append(AppDataSequenceRaw(seq.direction, list(seq.packets)))
    return out


def sequences_from_packets(
    packets: list[tuple[Direction, int, float]],
) -> list[AppDataSequenceRaw]:
    """Group a flat packet list into direction runs.

    A sequence is every consecutive packet in one direction; it ends when
    the direction flips.
    """
    out: list[AppDataSequenceRaw] = []
    for direction, length, ts in packets:
        if not out or out[-1].direction is not direction:
            out.append(AppDataSequenceRaw(direction))
        out[-1].packets.append((length, ts))
    return out


def sequence_stats(sequences: list[AppDataSequenceRaw]) -> dict[str, float]:
    """The 24 payload features for one flow.

    Requests and responses are paired positionally: a request-response pair
    (RRP) is a client-direction sequence followed by a server-direction
    sequence. Pairing starts at the first client sequence; a leading server
    sequence forms a pair whose client slot stays 0. Only the first
    RRP_COUNT pairs get per-pair features. Ratios divide by
    ``max(denominator, 1)`` so flows with silent servers stay finite.
    """
    seqs = normalize_sequences(sequences)

    sent_pkts = recv_pkts = sent_size = recv_size = 0
    c_max_seq = c_max_length = s_max_seq = s_max_length = 0
    for seq in seqs:
        n = seq.num_packets
        size = seq.total_size
        if seq.direction is Direction.CLIENT_TO_SERVER:
            sent_pkts += n
            sent_size += size
            c_max_seq = max(c_max_seq, n)
            c_max_length = max(c_max_length, size)
        else:
            recv_pkts += n
            recv_size += size
            s_max_seq = max(s_max_seq, n)
            s_max_length = max(s_max_length, size)

    pairs: list[tuple[AppDataSequenceRaw | None, AppDataSequenceRaw | None]] = []
    i = 0
    if seqs and seqs[0].direction is Direction.SERVER_TO_CLIENT:
        pairs.append((None, seqs[0]))
        i = 1
    while i < len(seqs):
        client_seq = seqs[i]
        server_seq = seqs[i + 1] if i + 1 < len(seqs) else None
        pairs.append((client_seq, server_seq))
        i += 2

    stats: dict[str, float] = {
        "enc_data_size": sent_size + recv_size,
        "enc_sent_size": sent_size,
        "enc_recv_size": recv_size,
        "enc_num_pkts": sent_pkts + recv_pkts,
        "enc_sent_pkts": sent_pkts,
        "enc_recv_pkts": recv_pkts,
        "c_max_seq": c_max_seq,
        "c_max_length": c_max_length,
        "s_max_seq": s_max_seq,
        "s_max_length": s_max_length,
        "sent_recv_pkts_ratio": sent_pkts / max(recv_pkts, 1),
        "sent_recv_size_ratio": sent_size / max(recv_size, 1),
    }
    for idx in range(RRP_COUNT):
        client_seq, server_seq = (
            pairs[idx] if idx < len(pairs) else (None, None)
        )
        stats[f"msg_pkts_c_{idx}"] = client_seq.num_packets if client_seq else 0
        stats[f"msg_size_c_{idx}"] = client_seq.total_size if client_seq else 0
        stats[f"msg_pkts_s_{idx}"] = server_seq.num_packets if server_seq else 0
        stats[f"msg_size_s_{idx}"] = server_seq.total_size if server_seq else 0
    return stats


def _bool_token(value: bool) -> str:
    return "true" if value else "false"


def _chain_tokens(chain: CertificateChain | None, prefix: str, server_side: bool) -> dict[str, str | None]:
    names = CERT_FEATURES if server_side else CLIENT_CERT_FEATURES
    tokens: dict[str, str | None] = {name: None for name in names}
    if chain is None:
        return tokens
    tokens[f"{prefix}_num_certs"] = str(chain.num_certs)
    leaf = chain.leaf
    if leaf is None:
        return tokens
    tokens[f"{prefix}_leaf_cert_version"] = str(leaf.version)
    tokens[f"{prefix}_leaf_cert_validity"] = str(leaf.validity_days)
    tokens[f"{prefix}_leaf_cert_num_SAN"] = str(leaf.san_count)
    tokens[f"{prefix}_leaf_cert_ext_num"] = str(leaf.ext_count)
    if server_side:
        tokens["s_leaf_cert_validation_status"] = chain.validation_status.value
        tokens["s_leaf_cert_self_signed"] = _bool_token(leaf.self_signed)
    tokens[f"{prefix}_leaf_cert_sign_alg"] = leaf.sign_alg
    tokens[f"{prefix}_leaf_cert_pubkey_hash"] = leaf.pubkey_hash
    if leaf.pubkey_size is not None:
        tokens[f"{prefix}_leaf_cert_pubkey_size"] = str(leaf.pubkey_size)
    for part, value in leaf.subject.as_dict().items():
        tokens[f"{prefix}_leaf_cert_subj_{part}"] = value
    for part, value in leaf.issuer.as_dict().items():
        tokens[f"{prefix}_leaf_cert_iss_{part}"] = value
    return tokens


def extract_raw(flow: TlsFlow, config: FeatureConfig) -> RawFeatures:
    """Turn one flow into tokens and numbers under the given configuration.

    Only enabled categories produce keys. Within an enabled category every
    feature name is present; a None token means absent-for-this-flow.
    """
    raw = RawFeatures()

    if config.include_client:
        ch = flow.client
        cat: dict[str, str | None] = {name: None for name in CLIENT_FEATURES}
        if ch is not None:
            cat["c_version"] = f"{ch.version:04x}"
            cat["c_record_version"] = f"{ch.record_version:04x}"
            cat["c_supported_versions"] = _hexjoin(ch.supported_versions)
            cat["c_ciphers"] = _hexjoin(ch.ciphers)
            cat["c_comp_methods"] = _hexjoin(ch.comp_methods, width=2)
            cat["c_curves"] = _hexjoin(ch.curves)
            cat["c_point_formats"] = _hexjoin(ch.point_formats, width=2)
            cat["c_extensions"] = _hexjoin(ch.extensions)
            if ch.server_name is not None:
                cat["c_server_name"] = ch.server_name.lower()
            cat["c_alpn_list"] = _strjoin(ch.alpn)
        cat["c_fake_resumption"] = _bool_token(flow.fake_resumption)
        raw.categorical.update(cat)

    if config.include_server:
        sh = flow.server
        cat = {name: None for name in SERVER_FEATURES}
        cat["s_dst_port"] = str(flow.key.dport)
        if sh is not None:
            selected = sh.supported_version if sh.supported_version else sh.version
            cat["s_version"] = f"{selected:04x}"
            cat["s_record_version"] = f"{sh.record_version:04x}"
            cat["s_cipher"] = f"{sh.cipher:04x}"
            cat["s_comp_method"] = f"{sh.comp_method:02x}"
            cat["s_extensions"] = _hexjoin(sh.extensions)
            cat["s_alpn_list"] = sh.alpn
            if sh.ticket_lifetime is not None:
                cat["s_session_ticket_lifetime"] = str(sh.ticket_lifetime)
            if sh.ct_signature is not None:
                cat["s_ct_signature"] = _digest(sh.ct_signature)
        raw.categorical.update(cat)

    if config.include_cert:
        raw.categorical.update(
            _chain_tokens(flow.effective_server_chain, "s", server_side=True)
        )
        if flow.client_chain is not None:
            raw.categorical.update(
                _chain_tokens(flow.client_chain, "c", server_side=False)
            )

    if config.include_payload:
        raw.numeric.update(sequence_stats(flow.sequences))

    return raw

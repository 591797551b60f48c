"""X.509 leaf parsing and optional chain checking.

Pulls exactly the fields the certificate features need out of a DER blob.
Full path building, AIA chasing, and revocation are out of scope: without a
trust store every chain is Unchecked, and with one the check is signature
steps up the presented chain plus the validity window of the leaf.
"""

from __future__ import annotations

import hashlib

from cryptography import x509
from cryptography.hazmat.primitives.asymmetric import ed448, ed25519
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    PublicFormat,
)
from cryptography.x509.oid import ExtensionOID, NameOID

from .model import DnFields, ParsedLeaf, ValidationStatus

_DN_ATTRS = (
    ("cn", NameOID.COMMON_NAME),
    ("o", NameOID.ORGANIZATION_NAME),
    ("ou", NameOID.ORGANIZATIONAL_UNIT_NAME),
    ("c", NameOID.COUNTRY_NAME),
    ("st", NameOID.STATE_OR_PROVINCE_NAME),
    ("l", NameOID.LOCALITY_NAME),
    ("email", NameOID.EMAIL_ADDRESS),
)


def _dn_fields(name: x509.Name) -> DnFields:
    fields = DnFields()
    for attr, oid in _DN_ATTRS:
        values = name.get_attributes_for_oid(oid)
        if values:
            value = values[0].value
            if isinstance(value, bytes):
                value = value.decode("utf-8", errors="replace")
            setattr(fields, attr, value)
    return fields


def _pubkey_bits(cert: x509.Certificate) -> int:
    key = cert.public_key()
    if isinstance(key, ed25519.Ed25519PublicKey):
        return 256
    if isinstance(key, ed448.Ed448PublicKey):
        return 456
    return int(getattr(key, "key_size", 0))


def parse_leaf(der: bytes) -> ParsedLeaf:
    """Extract feature-relevant fields from one DER certificate.

    Raises ValueError when the bytes are not a certificate.
    """
    cert = x509.load_der_x509_certificate(der)
    not_before = cert.not_valid_before_utc
    not_after = cert.not_valid_after_utc
    try:
        san = cert.extensions.get_extension_for_oid(
            ExtensionOID.SUBJECT_ALTERNATIVE_NAME
        )
        san_count = len(san.value)
    except x509.ExtensionNotFound:
        san_count = 0
    spki = cert.public_key().public_bytes(
        Encoding.DER, PublicFormat.SubjectPublicKeyInfo
    )
    return ParsedLeaf(
        version=cert.version.value + 1,
        validity_days=(not_after - not_before).days,
        san_count=san_count,
        ext_count=len(cert.extensions),
        self_signed=cert.subject.public_bytes() == cert.issuer.public_bytes(),
        sign_alg=cert.signature_algorithm_oid.dotted_string,
        pubkey_hash=hashlib.sha256(spki).hexdigest(),
        pubkey_size=_pubkey_bits(cert),
        subject=_dn_fields(cert.subject),
        issuer=_dn_fields(cert.issuer),
    )


def classify_chain(
    certs_der: list[bytes], trust_roots: list[bytes] | None = None
) -> ValidationStatus:
    """Status of a presented chain against an optional trust set.

    No roots: Unchecked. With roots: Valid when every link in the presented
    order is signed by the next one and the last is signed by (or is) a
    root; anything that fails to parse or verify is Invalid.
    """
    if trust_roots is None:
        return ValidationStatus.UNCHECKED
    if not certs_der:
        return ValidationStatus.INVALID
    try:
        chain = [x509.load_der_x509_certificate(der) for der in certs_der]
        roots = [x509.load_der_x509_certificate(der) for der in trust_roots]
    except ValueError:
        return ValidationStatus.INVALID
    try:
        for child, parent in zip(chain, chain[1:]):
            child.verify_directly_issued_by(parent)
        top = chain[-1]
        if any(top.public_bytes(Encoding.DER) == r.public_bytes(Encoding.DER) for r in roots):
            return ValidationStatus.VALID
        for root in roots:
            try:
                top.verify_directly_issued_by(root)
                return ValidationStatus.VALID
            except Exception:
                continue
        # a self-signed top that is not in the trust set does not chain
        return ValidationStatus.INVALID
    except Exception:
        return ValidationStatus.INVALID

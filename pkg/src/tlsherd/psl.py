"""Registrable-domain (eTLD+1) lookup against a bundled suffix snapshot.

The snapshot ships inside the package, so lookups work offline and give
the same answer on every machine. Standard list semantics: the longest
matching rule wins, ``*.foo`` wildcards match one extra label, and ``!``
exception rules shorten the suffix they override. A hostname that has no
matching rule falls back to the implicit ``*`` rule (its last label is
the suffix).
"""

from __future__ import annotations

import ipaddress
from functools import lru_cache
from importlib import resources

_SNAPSHOT = "public_suffix_snapshot.dat"


@lru_cache(maxsize=1)
def _rules() -> tuple[frozenset[str], frozenset[str], frozenset[str]]:
    normal: set[str] = set()
    wildcard: set[str] = set()
    exceptions: set[str] = set()
    text = (
        resources.files("tlsherd")
        .joinpath("data", _SNAPSHOT)
        .read_text(encoding="utf-8")
    )
    for raw in text.splitlines():
        line = raw.strip().lower()
        if not line or line.startswith("//"):
            continue
        if line.startswith("!"):
            exceptions.add(line[1:])
        elif line.startswith("*."):
            wildcard.add(line[2:])
        else:
            normal.add(line)
    return frozenset(normal), frozenset(wildcard), frozenset(exceptions)


def _suffix_label_count(labels: list[str]) -> int:
    normal, wildcard, exceptions = _rules()
    for i in range(len(labels)):
        candidate = ".".join(labels[i:])
        if candidate in exceptions:
            return len(labels) - i - 1  # the rule minus its leading label
        if candidate in normal:
            return len(labels) - i
        if i + 1 < len(labels) and ".".join(labels[i + 1 :]) in wildcard:
            return len(labels) - i
    return 1  # implicit * rule


def registrable_domain(host: str) -> str:
    """The eTLD+1 of ``host``; IP literals pass through, '' never matches.

    Returns the empty string for empty input and for hosts that are
    themselves public suffixes (no registrable part exists).
    """
    host = host.strip().rstrip(".").lower()
    if not host:
        return ""
    try:
        ipaddress.ip_address(host)
        return host
    except ValueError:
        pass
    labels = host.split(".")
    suffix_len = _suffix_label_count(labels)
    if len(labels) <= suffix_len:
        return ""
    return ".".join(labels[len(labels) - suffix_len - 1 :])

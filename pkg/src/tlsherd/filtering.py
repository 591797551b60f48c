"""The four-stage traffic filter that runs before feature extraction.

Malicious corpora are mostly noise: handshakes that never completed,
connections that carried nothing, sandbox-generated visits to popular
benign sites, and Tor padding. Each stage drops one of those classes and
the report accounts for every input flow exactly once, at the first stage
that dropped it.

Stage order is fixed: (1) not established, (2) no application data,
(3) SNI registrable domain on the benign list, (4) Tor fingerprint.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .model import TlsFlow, ValidationStatus
from .psl import registrable_domain

TorPredicate = Callable[[TlsFlow], bool]


@dataclass
class FilterReport:
    input_flows: int = 0
    removed_not_established: int = 0
    removed_no_appdata: int = 0
    removed_benign_domain: int = 0
    removed_tor: int = 0
    remaining: int = 0
    input_samples: int = 0
    remaining_samples: int = 0
    # description code of the first fatal alert, over stage-1 removals
    alert_histogram: dict[int, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "input_flows": self.input_flows,
            "removed_not_established": self.removed_not_established,
            "removed_no_appdata": self.removed_no_appdata,
            "removed_benign_domain": self.removed_benign_domain,
            "removed_tor": self.removed_tor,
            "remaining": self.remaining,
            "input_samples": self.input_samples,
            "remaining_samples": self.remaining_samples,
            "alert_histogram": {
                str(code): count for code, count in sorted(self.alert_histogram.items())
            },
        }


@dataclass(frozen=True)
class BenignDomainList:
    """Registrable domains considered benign (a popularity-list snapshot)."""

    entries: frozenset[str]
    source_name: str = "inline"

    def __contains__(self, domain: str) -> bool:
        return domain in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def of(cls, domains: Iterable[str], source_name: str = "inline") -> "BenignDomainList":
        return cls(
            entries=frozenset(d.strip().rstrip(".").lower() for d in domains if d.strip()),
            source_name=source_name,
        )

    @classmethod
    def load(cls, path: str | Path) -> "BenignDomainList":
        """One domain per line, or ``rank,domain`` CSV; comments start with #."""
        domains = []
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "," in line:
                line = line.split(",", 1)[1].strip()
            domains.append(line)
        return cls.of(domains, source_name=Path(path).name)


# ---------------------------------------------------------------------------
# Tor fingerprint

_TOR_SUBJECT = re.compile(r"^www\.[a-z0-9]{10,16}\.com$")
_TOR_ISSUER = re.compile(r"^www\.[a-z0-9]{10,16}\.(com|net|org)$")


def tor_default_predicate(flow: TlsFlow) -> bool:
    """Default vanilla-Tor heuristic.

    Tor endpoints present throwaway certificates for hosts shaped like
    ``www.<random alnum>.com`` with an issuer CN of the same shape but a
    different name. The SNI (when present) and the leaf subject must both
    match; with neither SNI nor a visible chain the predicate abstains.
    Publicly valid chains never match.
    """
    sni = flow.client.server_name if flow.client else None
    chain = flow.effective_server_chain
    leaf = chain.leaf if chain is not None else None

    if sni is not None and not _TOR_SUBJECT.match(sni):
        return False
    if leaf is None:
        return sni is not None
    if chain.validation_status is ValidationStatus.VALID:
        return False
    subject = leaf.subject.cn or ""
    issuer = leaf.issuer.cn or ""
    if not _TOR_SUBJECT.match(subject):
        return False
    if sni is not None and subject != sni:
        return False
    return bool(_TOR_ISSUER.match(issuer)) and issuer != subject


# ---------------------------------------------------------------------------
# pipeline


def filter_pipeline(
    flows: Iterable[TlsFlow],
    benign_list: BenignDomainList | None = None,
    tor_predicate: TorPredicate | None = tor_default_predicate,
) -> tuple[list[TlsFlow], FilterReport]:
    """Apply the four stages in order; returns (kept flows, report)."""
    report = FilterReport()
    histogram: Counter[int] = Counter()
    in_samples: set[str] = set()
    out_samples: set[str] = set()
    kept: list[TlsFlow] = []

    for flow in flows:
        report.input_flows += 1
        if flow.sample_id is not None:
            in_samples.add(flow.sample_id)

        if not flow.established:
            report.removed_not_established += 1
            first_fatal = next(
                (desc for level, desc in flow.alerts if level == 2), None
            )
            if first_fatal is not None:
                histogram[first_fatal] += 1
            continue
        if not flow.has_appdata:
            report.removed_no_appdata += 1
            continue
        if benign_list is not None and flow.client is not None:
            sni = flow.client.server_name
            if sni and registrable_domain(sni) in benign_list:
                report.removed_benign_domain += 1
                continue
        if tor_predicate is not None and tor_predicate(flow):
            report.removed_tor += 1
            continue

        kept.append(flow)
        if flow.sample_id is not None:
            out_samples.add(flow.sample_id)

    report.remaining = len(kept)
    report.input_samples = len(in_samples)
    report.remaining_samples = len(out_samples)
    report.alert_histogram = dict(histogram)
    return kept, report

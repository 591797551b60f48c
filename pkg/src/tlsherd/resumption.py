"""Linking resumed sessions back to the flow that issued their ticket.

Resumed handshakes skip the certificate exchange, so their certificate
features would be blank. Tracking tickets across one corpus lets a resumed
flow borrow the chain its original session presented. A ticket nobody in
the corpus issued gets flagged instead: it may not be a resumption at all.

Both mechanisms funnel through the same index: pre-1.3 session tickets and
TLS 1.3 PSK identities are matched by exact bytes. Tickets are never aged
out; the traces this runs on span minutes, not ticket lifetimes.
"""

from __future__ import annotations

from .model import TlsFlow


def link_resumptions(flows: list[TlsFlow]) -> list[TlsFlow]:
    """Annotate resumed/fake_resumption/inherited_chain in place.

    ``flows`` must already be in time order; matching is "earliest prior
    flow that issued these exact ticket bytes", so the result is
    deterministic for a given input order. Each flow is checked as a
    presenter before being registered as an issuer, which keeps a flow
    from matching its own freshly issued ticket.
    """
    issued: dict[bytes, TlsFlow] = {}
    for flow in flows:
        offered = flow.client.offered_ticket if flow.client else None
        if offered is not None:
            original = issued.get(offered)
            if original is not None:
                flow.resumed = True
                flow.inherited_chain = original.server_chain
            else:
                flow.fake_resumption = True
        if flow.server is not None and flow.server.issued_ticket:
            issued.setdefault(flow.server.issued_ticket, flow)
    return flows

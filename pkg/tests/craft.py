"""Hand-rolled flow and vector factories shared across the test modules."""

from __future__ import annotations

import numpy as np
from scipy import sparse

from tlsherd.features import FeatureConfig
from tlsherd.vectorizer import VectorSet
from tlsherd.model import (
    AppDataSequenceRaw,
    CertificateChain,
    ClientHello,
    Direction,
    FlowKey,
    ServerHello,
    SourceKind,
    TlsFlow,
    TlsVersion,
    TraceMeta,
)

_DIR = {"c": Direction.CLIENT_TO_SERVER, "s": Direction.SERVER_TO_CLIENT}


def make_client_hello(**kw) -> ClientHello:
    defaults = dict(
        version=0x0301,
        record_version=0x0301,
        ciphers=[0x002F, 0x0035, 0x000A],
        comp_methods=[0],
        extensions=[0, 10, 11],
        curves=[23, 24],
        point_formats=[0],
    )
    defaults.update(kw)
    return ClientHello(**defaults)


def make_server_hello(**kw) -> ServerHello:
    defaults = dict(
        version=0x0301,
        record_version=0x0301,
        cipher=0x002F,
        comp_method=0,
        extensions=[65281],
    )
    defaults.update(kw)
    return ServerHello(**defaults)


def seqs_from_spec(spec: list[tuple[str, int]], t0: float = 0.0) -> list[AppDataSequenceRaw]:
    """Build appdata sequences from ("c"|"s", length) pairs with synthetic times."""
    out: list[AppDataSequenceRaw] = []
    ts = t0
    for dir_char, length in spec:
        direction = _DIR[dir_char]
        ts += 0.01
        if not out or out[-1].direction is not direction:
            out.append(AppDataSequenceRaw(direction))
        out[-1].packets.append((length, ts))
    return out


_FLOW_COUNTER = [0]


def make_flow(
    packets: list[tuple[str, int]] | None = None,
    sample_id: str | None = "sample-0",
    dport: int = 443,
    sni: str | None = None,
    **kw,
) -> TlsFlow:
    _FLOW_COUNTER[0] += 1
    n = _FLOW_COUNTER[0]
    key = kw.pop("key", None) or FlowKey(
        src=f"10.0.{n // 256}.{n % 256}",
        dst="192.0.2.1",
        sport=40000 + (n % 20000),
        dport=dport,
        ts=1700000000.0 + n,
    )
    meta = TraceMeta(SourceKind.FLOW_LOG, sample_id=sample_id)
    client = kw.pop("client", make_client_hello(server_name=sni))
    defaults = dict(
        key=key,
        meta=meta,
        client=client,
        server=make_server_hello(),
        established=True,
        negotiated_version=TlsVersion.TLS10,
    )
    defaults.update(kw)
    flow = TlsFlow(**defaults)
    if packets is not None:
        flow.sequences = seqs_from_spec(packets, t0=key.ts)
    return flow


def make_vector_set(
    numeric: list[list[float]],
    cats: list[int | None] | None = None,
    config_name: str = "payload-only",
    n_cat_cols: int = 8,
) -> VectorSet:
    """Build a VectorSet directly from raw coordinates.

    ``cats`` gives one-hot column indices (None = empty categorical block).
    The named config only determines the distance weights; the actual
    matrix dimensions are free.
    """
    config = FeatureConfig.from_name(config_name)
    arr = np.asarray(numeric, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    n = arr.shape[0]
    rows, cols, vals = [], [], []
    if cats is not None:
        for i, c in enumerate(cats):
            if c is not None:
                rows.append(i)
                cols.append(c)
                vals.append(1.0)
    cat = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(n, n_cat_cols), dtype=np.float64
    )
    return VectorSet(config, arr, cat, [None] * n)


def oracle_points(
    numeric: list[list[float]], cats: list[int | None] | None = None
) -> list[tuple[tuple, dict]]:
    """The same instance in the form the brute-force reference expects."""
    out = []
    for i, row in enumerate(numeric):
        cat = {}
        if cats is not None and cats[i] is not None:
            cat = {cats[i]: 1.0}
        out.append((tuple(float(x) for x in row), cat))
    return out

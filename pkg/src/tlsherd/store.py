"""Versioned on-disk artifacts: vectorizer, clusters, detector, and vectors.

Model artifacts are JSON envelopes so they stay auditable by eye; only the
bulk vector container is binary. Every envelope carries a payload checksum
and a format version, writes go through a temp file and an atomic rename,
and all keys are emitted sorted so identical inputs produce identical
bytes. ``SOURCE_DATE_EPOCH`` overrides the embedded creation time for
fully reproducible files.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
import tempfile
import time
from pathlib import Path

import numpy as np
from scipy import sparse

from . import __version__
from .clustering import ClusterMeta, Partition
from .detector import ClusterModel, DetectorConfig, ThresholdMethod
from .vectorizer import (
    VectorRef,
    VectorSet,
    VectorizerModel,
    config_from_dict,
    config_to_dict,
)

FORMAT_VERSION = 1

KIND_VECTORIZER = "vectorizer"
KIND_CLUSTERS = "clusters"
KIND_DETECTOR = "detector"


class StoreError(ValueError):
    """An artifact file is unreadable, corrupted, or from the wrong kind."""


# ---------------------------------------------------------------------------
# envelope


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _checksum(payload: dict) -> str:
    return "sha256:" + hashlib.sha256(_canonical(payload)).hexdigest()


def _created_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(stamp))


def _atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_envelope(
    path: str | Path, kind: str, payload: dict, run_config: dict | None = None
) -> None:
    envelope = {
        "format_version": FORMAT_VERSION,
        "artifact_kind": kind,
        "created_at": _created_at(),
        "tool_version": __version__,
        "checksum": _checksum(payload),
        "payload": payload,
    }
    if run_config is not None:
        # pipeline settings in effect when the artifact was produced; carried
        # for provenance only, so it sits outside the checksummed payload
        envelope["run_config"] = run_config
    text = json.dumps(envelope, sort_keys=True, indent=2) + "\n"
    _atomic_write(path, text.encode("utf-8"))


def read_envelope(path: str | Path, kind: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            envelope = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise StoreError(f"{path}: not a readable artifact: {exc}") from None
    if not isinstance(envelope, dict) or "payload" not in envelope:
        raise StoreError(f"{path}: not an artifact envelope")
    version = envelope.get("format_version")
    if version != FORMAT_VERSION:
        raise StoreError(
            f"{path}: unsupported format_version {version!r}; this build reads "
            f"version {FORMAT_VERSION}"
        )
    found_kind = envelope.get("artifact_kind")
    if found_kind != kind:
        raise StoreError(f"{path}: expected a {kind} artifact, found {found_kind!r}")
    if envelope.get("checksum") != _checksum(envelope["payload"]):
        raise StoreError(f"{path}: payload checksum mismatch (file corrupted?)")
    return envelope["payload"]


# ---------------------------------------------------------------------------
# vector container

_MAGIC = b"TLSV"
_CONTAINER_VERSION = 1


def _block(data: bytes) -> bytes:
    return struct.pack("<Q", len(data)) + data


class _BlockReader:
    def __init__(self, data: bytes, pos: int):
        self.data = data
        self.pos = pos

    def next(self) -> bytes:
        if self.pos + 8 > len(self.data):
            raise StoreError("vector container truncated")
        (length,) = struct.unpack_from("<Q", self.data, self.pos)
        self.pos += 8
        if self.pos + length > len(self.data):
            raise StoreError("vector container truncated")
        out = self.data[self.pos : self.pos + length]
        self.pos += length
        return out


def vector_set_to_bytes(vectors: VectorSet) -> bytes:
    """Serialize a VectorSet: little-endian, versioned, self-describing."""
    cat = vectors.cat.tocsr()
    n_rows, n_cat = cat.shape
    header = _MAGIC + struct.pack(
        "<HIIIQ",
        _CONTAINER_VERSION,
        n_rows,
        vectors.numeric.shape[1] if vectors.numeric.ndim == 2 else 0,
        n_cat,
        int(cat.nnz),
    )
    refs = [
        None
        if ref is None
        else {"uid": ref.uid, "sample_id": ref.sample_id, "sni": ref.sni, "leaf_hash": ref.leaf_hash}
        for ref in vectors.refs
    ]
    blocks = [
        _canonical(config_to_dict(vectors.config)),
        np.ascontiguousarray(vectors.numeric, dtype="<f8").tobytes(),
        np.ascontiguousarray(cat.indptr, dtype="<i8").tobytes(),
        np.ascontiguousarray(cat.indices, dtype="<i8").tobytes(),
        np.ascontiguousarray(cat.data, dtype="<f8").tobytes(),
        _canonical({"refs": refs}),
    ]
    return header + b"".join(_block(b) for b in blocks)


def vector_set_from_bytes(data: bytes) -> VectorSet:
    if len(data) < 4 + 22 or data[:4] != _MAGIC:
        raise StoreError("not a vector container (bad magic)")
    version, n_rows, n_num, n_cat, nnz = struct.unpack_from("<HIIIQ", data, 4)
    if version != _CONTAINER_VERSION:
        raise StoreError(
            f"unsupported vector container version {version}; this build reads "
            f"version {_CONTAINER_VERSION}"
        )
    reader = _BlockReader(data, 4 + 22)
    config = config_from_dict(json.loads(reader.next()))
    numeric = np.frombuffer(reader.next(), dtype="<f8").reshape(n_rows, n_num).copy()
    indptr = np.frombuffer(reader.next(), dtype="<i8").copy()
    indices = np.frombuffer(reader.next(), dtype="<i8").copy()
    values = np.frombuffer(reader.next(), dtype="<f8").copy()
    if len(indptr) != n_rows + 1 or len(indices) != nnz or len(values) != nnz:
        raise StoreError("vector container index blocks disagree with header")
    cat = sparse.csr_matrix((values, indices, indptr), shape=(n_rows, n_cat))
    refs = [
        None if obj is None else VectorRef(**obj)
        for obj in json.loads(reader.next())["refs"]
    ]
    if len(refs) != n_rows:
        raise StoreError("vector container ref count disagrees with header")
    return VectorSet(config, numeric, cat, refs)


def save_vector_set(path: str | Path, vectors: VectorSet) -> None:
    _atomic_write(path, vector_set_to_bytes(vectors))


def load_vector_set(path: str | Path) -> VectorSet:
    return vector_set_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# vectorizer


def save_vectorizer(
    path: str | Path, model: VectorizerModel, run_config: dict | None = None
) -> None:
    write_envelope(path, KIND_VECTORIZER, model.to_payload(), run_config=run_config)


def load_vectorizer(path: str | Path) -> VectorizerModel:
    return VectorizerModel.from_payload(read_envelope(path, KIND_VECTORIZER))


# ---------------------------------------------------------------------------
# clusters


def _meta_to_dict(meta: ClusterMeta) -> dict:
    return {
        "cluster_id": meta.cluster_id,
        "size": meta.size,
        "sample_ids": list(meta.sample_ids),
        "sni_domains": list(meta.sni_domains),
        "leaf_cert_hashes": list(meta.leaf_cert_hashes),
        "family_label": meta.family_label,
        "label_suffix": meta.label_suffix,
    }


def _meta_from_dict(obj: dict) -> ClusterMeta:
    return ClusterMeta(
        cluster_id=int(obj["cluster_id"]),
        size=int(obj["size"]),
        sample_ids=[str(s) for s in obj["sample_ids"]],
        sni_domains=[str(s) for s in obj["sni_domains"]],
        leaf_cert_hashes=[str(s) for s in obj["leaf_cert_hashes"]],
        family_label=obj.get("family_label"),
        label_suffix=obj.get("label_suffix"),
    )


def save_clusters(
    path: str | Path,
    partition: Partition,
    metas: list[ClusterMeta] | None = None,
    run_config: dict | None = None,
) -> None:
    payload = {
        "partition": {
            "assignment": {str(k): v for k, v in sorted(partition.assignment.items())},
            "noise": sorted(partition.noise),
        },
        "metas": [_meta_to_dict(m) for m in (metas or [])],
    }
    write_envelope(path, KIND_CLUSTERS, payload, run_config=run_config)


def load_clusters(path: str | Path) -> tuple[Partition, list[ClusterMeta]]:
    payload = read_envelope(path, KIND_CLUSTERS)
    part = payload["partition"]
    partition = Partition(
        assignment={int(k): int(v) for k, v in part["assignment"].items()},
        noise={int(x) for x in part["noise"]},
    )
    return partition, [_meta_from_dict(m) for m in payload["metas"]]


# ---------------------------------------------------------------------------
# detector


def save_detector(
    path: str | Path, model: ClusterModel, run_config: dict | None = None
) -> None:
    if model.vectorizer is None:
        raise StoreError(
            "detector has no vectorizer attached; a stored detector must be "
            "able to transform raw flows on load"
        )
    payload = {
        "config": {
            "method": model.config.method.value,
            "fixed_threshold": model.config.fixed_threshold,
            "min_cluster_flows": model.config.min_cluster_flows,
        },
        "cluster_ids": [int(c) for c in model.cluster_ids],
        "thresholds": {str(k): float(v) for k, v in sorted(model.thresholds.items())},
        "metas": {str(k): _meta_to_dict(m) for k, m in sorted(model.metas.items())},
        "vectorizer": model.vectorizer.to_payload(),
        "vectors": base64.b64encode(vector_set_to_bytes(model.vectors)).decode("ascii"),
    }
    write_envelope(path, KIND_DETECTOR, payload, run_config=run_config)


def load_detector(path: str | Path) -> ClusterModel:
    payload = read_envelope(path, KIND_DETECTOR)
    cfg = payload["config"]
    config = DetectorConfig(
        method=ThresholdMethod(cfg["method"]),
        fixed_threshold=float(cfg["fixed_threshold"]),
        min_cluster_flows=cfg["min_cluster_flows"],
    )
    try:
        vectors = vector_set_from_bytes(base64.b64decode(payload["vectors"]))
    except ValueError as exc:
        raise StoreError(f"{path}: embedded vector container unreadable: {exc}") from None
    return ClusterModel(
        vectors=vectors,
        cluster_ids=np.array(payload["cluster_ids"], dtype=np.int64),
        thresholds={int(k): float(v) for k, v in payload["thresholds"].items()},
        config=config,
        metas={int(k): _meta_from_dict(m) for k, m in payload["metas"].items()},
        vectorizer=VectorizerModel.from_payload(payload["vectorizer"]),
    )

"""Nearest-cluster detection against a frozen clustering model.

The model stores every clustered vector with its cluster id. Detection finds
the globally nearest stored node and compares that distance to a threshold:
either one fixed value, or a per-cluster value learned at build time (the
largest distance from any member to its closest neighbor inside the same
cluster). Below threshold means the flow is attributed to that cluster;
anything else is benign. A model is immutable once built, so concurrent
detect calls need no locking.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator

import numpy as np
from scipy import sparse

from .clustering import ClusterMeta, Partition
from .distance import cross_distances, pairwise_distances
from .vectorizer import FeatureVector, VectorizerModel, VectorSet


class ThresholdMethod(str, Enum):
    variable = "variable"
    fixed = "fixed"


class Verdict(str, Enum):
    malicious = "malicious"
    benign = "benign"


@dataclass(frozen=True)
class DetectorConfig:
    method: ThresholdMethod = ThresholdMethod.variable
    fixed_threshold: float = 0.05
    min_cluster_flows: int | None = None

    def __post_init__(self):
        if self.method is ThresholdMethod.fixed and self.fixed_threshold <= 0.0:
            raise ValueError("fixed threshold must be positive")
        if self.min_cluster_flows is not None and self.min_cluster_flows < 1:
            raise ValueError("min_cluster_flows must be >= 1")


@dataclass
class Detection:
    ref: object
    verdict: Verdict
    cluster_id: int | None
    nearest_distance: float
    cluster_meta: ClusterMeta | None = None

    @property
    def is_alarm(self) -> bool:
        return self.verdict is Verdict.malicious


class ClusterModel:
    """Stored cluster members, per-cluster thresholds, and provenance."""

    def __init__(
        self,
        vectors: VectorSet,
        cluster_ids: np.ndarray,
        thresholds: dict[int, float],
        config: DetectorConfig,
        metas: dict[int, ClusterMeta] | None = None,
        vectorizer: VectorizerModel | None = None,
    ):
        self.vectors = vectors
        self.cluster_ids = cluster_ids
        self.thresholds = thresholds
        self.config = config
        self.metas = metas or {}
        self.vectorizer = vectorizer

    def __len__(self) -> int:
        return len(self.vectors)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClusterModel):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.cluster_ids, other.cluster_ids)
            and self.thresholds == other.thresholds
            and self.metas == other.metas
            and self.vectorizer == other.vectorizer
            and self.vectors.config == other.vectors.config
            and np.array_equal(self.vectors.numeric, other.vectors.numeric)
            and self.vectors.cat.shape == other.vectors.cat.shape
            and (self.vectors.cat != other.vectors.cat).nnz == 0
            and self.vectors.refs == other.vectors.refs
        )


def build_detector(
    vectors: VectorSet,
    partition: Partition,
    config: DetectorConfig | None = None,
    metas: list[ClusterMeta] | None = None,
    vectorizer: VectorizerModel | None = None,
) -> ClusterModel:
    """Freeze a clustering into a detector model.

    Only assigned points become stored nodes (run the partition through
    finalize_clusters first if noise singletons should be detectable).
    Clusters smaller than ``min_cluster_flows`` are dropped entirely.
    """
    config = config or DetectorConfig()
    members: dict[int, list[int]] = {}
    for row, cid in partition.assignment.items():
        members.setdefault(cid, []).append(row)
    if config.min_cluster_flows is not None:
        members = {
            cid: rows
            for cid, rows in members.items()
            if len(rows) >= config.min_cluster_flows
        }
    if not members:
        raise ValueError("no clusters survive the size filter; nothing to detect with")

    thresholds: dict[int, float] = {}
    kept_rows: list[int] = []
    kept_ids: list[int] = []
    for cid in sorted(members):
        rows = sorted(members[cid])
        thresholds[cid] = _variable_threshold(vectors, rows)
        kept_rows.extend(rows)
        kept_ids.extend([cid] * len(rows))

    meta_map = {m.cluster_id: m for m in metas or [] if m.cluster_id in members}
    return ClusterModel(
        vectors=vectors.subset(np.asarray(kept_rows, dtype=np.int64)),
        cluster_ids=np.asarray(kept_ids, dtype=np.int64),
        thresholds=thresholds,
        config=config,
        metas=meta_map,
        vectorizer=vectorizer,
    )


def _variable_threshold(vectors: VectorSet, rows: list[int]) -> float:
    """Largest member-to-closest-intra-neighbor distance; singletons get 0."""
    if len(rows) < 2:
        return 0.0
    dist = pairwise_distances(vectors.subset(np.asarray(rows, dtype=np.int64)))
    np.fill_diagonal(dist, np.inf)
    return float(dist.min(axis=1).max())


def _as_row_set(model: ClusterModel, vec: FeatureVector) -> VectorSet:
    stored = model.vectors
    if vec.numeric.shape[0] != stored.numeric.shape[1]:
        raise ValueError(
            f"vector has {vec.numeric.shape[0]} numeric columns, "
            f"model stores {stored.numeric.shape[1]}"
        )
    width = stored.cat.shape[1]
    if vec.cat_indices.size and int(vec.cat_indices.max()) >= width:
        raise ValueError("vector categorical columns exceed the model's layout")
    cat = sparse.csr_matrix(
        (vec.cat_values, vec.cat_indices, np.array([0, len(vec.cat_indices)])),
        shape=(1, width),
    )
    return VectorSet(stored.config, vec.numeric.reshape(1, -1), cat, [vec.ref])


def detect(
    vector: FeatureVector,
    model: ClusterModel,
    config: DetectorConfig | None = None,
) -> Detection:
    """Verdict for one vector. ``config`` overrides the model's default."""
    return detect_many(_as_row_set(model, vector), model, config)[0]


def detect_many(
    batch: VectorSet,
    model: ClusterModel,
    config: DetectorConfig | None = None,
) -> list[Detection]:
    config = config or model.config
    dist = cross_distances(batch, model.vectors)
    out: list[Detection] = []
    for i in range(len(batch)):
        row = dist[i]
        nearest = float(row.min())
        # exact ties resolve to the lowest cluster id
        cid = int(model.cluster_ids[row == nearest].min())
        if config.method is ThresholdMethod.fixed:
            limit = config.fixed_threshold
        else:
            limit = model.thresholds[cid]
        if nearest <= limit:
            out.append(
                Detection(
                    ref=batch.refs[i],
                    verdict=Verdict.malicious,
                    cluster_id=cid,
                    nearest_distance=nearest,
                    cluster_meta=model.metas.get(cid),
                )
            )
        else:
            out.append(
                Detection(
                    ref=batch.refs[i],
                    verdict=Verdict.benign,
                    cluster_id=None,
                    nearest_distance=nearest,
                )
            )
    return out


def measure_fdr(
    model: ClusterModel,
    benign: VectorSet | Iterable[FeatureVector],
    config: DetectorConfig | None = None,
) -> tuple[int, float, dict[int, int]]:
    """Alarm count, alarm fraction, and per-cluster attribution on a stream
    that is benign by assumption (so every alarm is a false detection)."""
    alarms = 0
    total = 0
    per_cluster: dict[int, int] = {}
    for detection in _detections_over(model, benign, config):
        total += 1
        if detection.is_alarm:
            alarms += 1
            cid = detection.cluster_id
            per_cluster[cid] = per_cluster.get(cid, 0) + 1
    fdr = alarms / total if total else 0.0
    return alarms, fdr, per_cluster


def _detections_over(
    model: ClusterModel,
    stream: VectorSet | Iterable[FeatureVector],
    config: DetectorConfig | None,
) -> Iterator[Detection]:
    if isinstance(stream, VectorSet):
        yield from detect_many(stream, model, config)
        return
    for vec in stream:
        yield detect(vec, model, config)

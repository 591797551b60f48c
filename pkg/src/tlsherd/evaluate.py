"""Desk-scale evaluation runs: ablation sweeps, threshold sweeps, holdout.

Every run is deterministic given the corpus and the seed; the wall-clock
column in a sweep report is the one exception.
"""

from __future__ import annotations

import csv
import random
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .clustering import ClusterParams, Partition, cluster, clustering_metrics
from .detector import (
    ClusterModel,
    DetectorConfig,
    ThresholdMethod,
    build_detector,
    detect_many,
    measure_fdr,
)
from .distance import cross_distances
from .features import ABLATION_GRID, FeatureConfig, extract_raw
from .model import TlsFlow
from .vectorizer import VectorSet, ref_for, vectorize_flows


class GroundTruthError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruth:
    """Reference clusters for scoring, keyed by flow uid."""

    assignment: dict[str, str]
    families: dict[str, str]

    def __post_init__(self):
        if len(set(self.assignment.values())) < 2:
            raise GroundTruthError(
                "ground truth needs at least two clusters to score against"
            )

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        assignment: dict[str, str] = {}
        families: dict[str, str] = {}
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["flow_uid", "cluster"]:
                raise GroundTruthError(
                    f"{path}: expected a flow_uid,cluster[,family] header"
                )
            with_family = header[2:] == ["family"]
            if not with_family and len(header) > 2:
                raise GroundTruthError(f"{path}: unrecognized extra columns")
            for i, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise GroundTruthError(f"{path}:{i}: wrong column count")
                uid, cluster_id = row[0], row[1]
                if uid in assignment:
                    raise GroundTruthError(f"{path}:{i}: duplicate flow id {uid}")
                assignment[uid] = cluster_id
                if with_family:
                    families[uid] = row[2]
        return cls(assignment, families)

    def partition(self) -> Partition:
        ids = {c: i for i, c in enumerate(sorted(set(self.assignment.values())))}
        return Partition(
            assignment={uid: ids[c] for uid, c in self.assignment.items()}
        )


# ---------------------------------------------------------------------------
# feature-ablation sweep


@dataclass(frozen=True)
class SweepRow:
    config: str
    clusters: int
    singletons: int
    size_min: int
    size_max: int
    size_median: float
    size_mean: float
    size_pstdev: float
    precision: float
    recall: float
    f1: float
    seconds: float


@dataclass
class SweepReport:
    rows: list[SweepRow]

    def row(self, config: str) -> SweepRow:
        for row in self.rows:
            if row.config == config:
                return row
        raise KeyError(config)

    def as_dicts(self) -> list[dict]:
        return [dict(vars(r)) for r in self.rows]

    def format_table(self) -> str:
        heads = (
            "config clusters singletons min max median mean pstdev "
            "precision recall f1 seconds"
        ).split()
        cells = [heads]
        for r in self.rows:
            cells.append(
                [
                    r.config,
                    str(r.clusters),
                    str(r.singletons),
                    str(r.size_min),
                    str(r.size_max),
                    f"{r.size_median:.1f}",
                    f"{r.size_mean:.2f}",
                    f"{r.size_pstdev:.2f}",
                    f"{r.precision:.4f}",
                    f"{r.recall:.4f}",
                    f"{r.f1:.4f}",
                    f"{r.seconds:.2f}",
                ]
            )
        widths = [max(len(row[i]) for row in cells) for i in range(len(heads))]
        lines = []
        for row in cells:
            lines.append(
                "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
            )
        return "\n".join(lines)


def _score_config(
    name: str,
    flows: list[TlsFlow],
    reference: Partition,
    params: ClusterParams,
) -> SweepRow:
    started = time.perf_counter()
    config = FeatureConfig.from_name(name)
    _, vectors = vectorize_flows(flows, config)
    produced = cluster(vectors, params).relabeled(
        {i: ref.uid for i, ref in enumerate(vectors.refs)}
    )
    precision, recall, f1 = clustering_metrics(produced, reference)
    sizes = sorted(len(m) for m in produced.clusters().values())
    return SweepRow(
        config=name,
        clusters=len(sizes),
        singletons=len(produced.noise),
        size_min=sizes[0] if sizes else 0,
        size_max=sizes[-1] if sizes else 0,
        size_median=float(statistics.median(sizes)) if sizes else 0.0,
        size_mean=statistics.fmean(sizes) if sizes else 0.0,
        size_pstdev=statistics.pstdev(sizes) if len(sizes) > 1 else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        seconds=time.perf_counter() - started,
    )


def run_ablation_sweep(
    flows: list[TlsFlow],
    gt: GroundTruth,
    params: ClusterParams | None = None,
    configs: tuple[str, ...] = ABLATION_GRID,
    jobs: int = 1,
) -> SweepReport:
    """Cluster the ground-truth flows under each feature configuration.

    Only flows present in the ground truth are scored; ids the corpus does
    not cover are an error.
    """
    params = params or ClusterParams()
    by_uid = {f.uid: f for f in flows}
    missing = sorted(set(gt.assignment) - set(by_uid))
    if missing:
        shown = ", ".join(missing[:5]) + ("..." if len(missing) > 5 else "")
        raise ValueError(
            f"{len(missing)} ground-truth flows absent from the corpus: {shown}"
        )
    scored = [by_uid[uid] for uid in by_uid if uid in gt.assignment]
    reference = gt.partition()

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_score_config, name, scored, reference, params)
                for name in configs
            ]
            rows = [f.result() for f in futures]
    else:
        rows = [_score_config(name, scored, reference, params) for name in configs]
    return SweepReport(rows)


# ---------------------------------------------------------------------------
# detector threshold sweep


@dataclass(frozen=True)
class ThresholdRow:
    threshold: float
    alarms: int
    fdr: float
    per_cluster: dict[int, int]


def _alarms_at_zero(
    model: ClusterModel, benign: VectorSet
) -> tuple[int, float, dict[int, int]]:
    # the limit case: a threshold of zero flags only exact duplicates of
    # stored nodes, which the fixed-threshold config cannot express
    dist = cross_distances(benign, model.vectors)
    alarms = 0
    per_cluster: dict[int, int] = {}
    for i in range(len(benign)):
        row = dist[i]
        if float(row.min()) == 0.0:
            cid = int(model.cluster_ids[row == 0.0].min())
            alarms += 1
            per_cluster[cid] = per_cluster.get(cid, 0) + 1
    rate = alarms / len(benign) if len(benign) else 0.0
    return alarms, rate, per_cluster


def run_threshold_sweep(
    model: ClusterModel,
    benign: VectorSet,
    thresholds: list[float],
) -> list[ThresholdRow]:
    """One fixed-threshold FDR measurement per threshold, ascending."""
    if not thresholds:
        raise ValueError("no thresholds given")
    if any(t < 0.0 for t in thresholds):
        raise ValueError("thresholds must be non-negative")
    if sorted(thresholds) != list(thresholds):
        raise ValueError("thresholds must be sorted ascending")

    rows: list[ThresholdRow] = []
    for threshold in thresholds:
        if threshold == 0.0:
            alarms, fdr, per_cluster = _alarms_at_zero(model, benign)
        else:
            config = DetectorConfig(
                method=ThresholdMethod.fixed, fixed_threshold=threshold
            )
            alarms, fdr, per_cluster = measure_fdr(model, benign, config)
        rows.append(ThresholdRow(threshold, alarms, fdr, per_cluster))

    counts = [r.alarms for r in rows]
    assert counts == sorted(counts), "alarm counts must grow with the threshold"
    return rows


# ---------------------------------------------------------------------------
# holdout false negatives


@dataclass(frozen=True)
class FoldResult:
    fold: int
    holdout_flows: int
    false_negatives: int
    cross_cluster: int

    @property
    def fn_rate(self) -> float:
        return (
            self.false_negatives / self.holdout_flows if self.holdout_flows else 0.0
        )


@dataclass
class HoldoutReport:
    folds: list[FoldResult]

    @property
    def mean_fn_rate(self) -> float:
        return statistics.fmean(f.fn_rate for f in self.folds)

    @property
    def total_cross_cluster(self) -> int:
        return sum(f.cross_cluster for f in self.folds)


def run_holdout(
    flows: list[TlsFlow],
    gt: GroundTruth,
    feature_config: FeatureConfig | None = None,
    detector_config: DetectorConfig | None = None,
    params: ClusterParams | None = None,
    folds: int = 10,
    seed: int = 42,
) -> HoldoutReport:
    """Cluster 90%, detect the held-out 10%, count misses.

    A held-out flow is a false negative when the detector calls it benign,
    and a cross-cluster assignment when it lands in a cluster whose
    majority ground-truth label is not its own.
    """
    if folds < 2:
        raise ValueError("holdout needs at least two folds")
    feature_config = feature_config or FeatureConfig.from_name("fd8")
    detector_config = detector_config or DetectorConfig(
        method=ThresholdMethod.fixed, fixed_threshold=0.05
    )
    params = params or ClusterParams()

    by_uid = {f.uid: f for f in flows}
    missing = sorted(set(gt.assignment) - set(by_uid))
    if missing:
        raise ValueError(f"{len(missing)} ground-truth flows absent from the corpus")
    uids = sorted(gt.assignment)
    random.Random(seed).shuffle(uids)
    buckets = [uids[i::folds] for i in range(folds)]

    results: list[FoldResult] = []
    for fold, holdout_uids in enumerate(buckets):
        holdout_set = set(holdout_uids)
        train = [by_uid[u] for u in uids if u not in holdout_set]
        model, vectors = vectorize_flows(train, feature_config)
        partition = cluster(vectors, params)
        detector = build_detector(
            vectors, partition, detector_config, vectorizer=model
        )

        # majority ground-truth label per produced cluster
        majority: dict[int, str] = {}
        for cid, members in partition.clusters().items():
            labels = sorted(
                gt.assignment[vectors.refs[row].uid] for row in members
            )
            majority[cid] = statistics.mode(labels)

        held = [by_uid[u] for u in holdout_uids]
        batch = model.transform_many(
            [extract_raw(f, feature_config) for f in held],
            [ref_for(f) for f in held],
        )
        fn = 0
        crossed = 0
        for flow, detection in zip(held, detect_many(batch, detector)):
            if not detection.is_alarm:
                fn += 1
            elif majority.get(detection.cluster_id) != gt.assignment[flow.uid]:
                crossed += 1
        results.append(FoldResult(fold, len(held), fn, crossed))
    return HoldoutReport(results)


# ---------------------------------------------------------------------------
# side-by-side scoring of external per-flow verdict files


@dataclass(frozen=True)
class DetectionScore:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


_VERDICT_WORDS = {
    "malicious": True,
    "benign": False,
    "1": True,
    "0": False,
    "true": True,
    "false": False,
}


def load_verdicts(path: str | Path) -> dict[str, bool]:
    """Read a flow-id,verdict CSV from another detector for comparison."""
    verdicts: dict[str, bool] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or (i == 1 and row[0].lower() in ("flow_uid", "flow_id")):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{i}: expected flow-id,verdict")
            word = row[1].strip().lower()
            if word not in _VERDICT_WORDS:
                raise ValueError(f"{path}:{i}: unrecognized verdict {row[1]!r}")
            verdicts[row[0]] = _VERDICT_WORDS[word]
    return verdicts


def score_verdicts(
    verdicts: dict[str, bool], malicious_uids: set[str]
) -> DetectionScore:
    tp = fp = fn = tn = 0
    for uid, flagged in verdicts.items():
        truth = uid in malicious_uids
        if flagged and truth:
            tp += 1
        elif flagged:
            fp += 1
        elif truth:
            fn += 1
        else:
            tn += 1
    return DetectionScore(tp, fp, fn, tn)

"""Command line front end: one binary, one subcommand per pipeline stage.

Exit codes are part of the contract: 0 on success, 1 when the command line
itself is wrong (unknown flag, missing required argument), 2 when the inputs
are wrong (unreadable file, failed validation, mismatched artifacts).

Shared settings can live in a pipeline config file (``--pipeline FILE``, a
JSON document) so a whole run is reproducible from one place; per-command
flags override it.  Whatever settings were in effect get echoed into every
artifact envelope this tool writes, under the ``run_config`` key.

With ``--log-json`` progress goes to stderr as one JSON object per line;
without it the same events print as plain text.  Result summaries go to
stdout either way.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path
from typing import Callable, Iterable

from . import __version__
from .clustering import ClusterParams, cluster, finalize_clusters
from .detector import (
    ClusterModel,
    DetectorConfig,
    ThresholdMethod,
    build_detector,
    detect_many,
)
from .evaluate import (
    GroundTruth,
    run_ablation_sweep,
    run_holdout,
    run_threshold_sweep,
    load_verdicts,
    score_verdicts,
)
from .features import ABLATION_GRID, FeatureConfig, extract_raw
from .filtering import BenignDomainList, filter_pipeline, tor_default_predicate
from .flowlog import flow_to_dict, read_flow_log
from .model import TlsFlow
from .pcap import flows_from_pcap
from .store import (
    _atomic_write,
    load_clusters,
    load_detector,
    load_vector_set,
    load_vectorizer,
    save_clusters,
    save_detector,
    save_vector_set,
    save_vectorizer,
)
from .synthgen import default_scenario, generate, scenario_from_dict, scenario_to_dict
from .vectorizer import VectorSet, VectorizerModel, ref_for, vectorize_flows


class UsageExit(Exception):
    """Raised instead of argparse's sys.exit(2); main() maps it to exit 1."""

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class DataError(ValueError):
    """Input data is unusable; maps to exit 2."""


# every library-level validation error subclasses ValueError, so one catch
# covers ScenarioError, StoreError, FlowLogError, PcapError, GroundTruthError
_DATA_ERRORS = (OSError, ValueError)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        raise UsageExit(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# logging


class Log:
    """Progress events on stderr, JSON lines or plain text."""

    def __init__(self, as_json: bool):
        self.as_json = as_json

    def event(self, name: str, **fields) -> None:
        if self.as_json:
            record = {"ts": round(time.time(), 3), "event": name}
            record.update(fields)
            print(json.dumps(record, sort_keys=True), file=sys.stderr)
        else:
            tail = " ".join(f"{k}={v}" for k, v in fields.items())
            print(f"tlsherd: {name}" + (f" {tail}" if tail else ""), file=sys.stderr)

    def error(self, message: str) -> None:
        if self.as_json:
            self.event("error", error=message)
        else:
            print(f"tlsherd: error: {message}", file=sys.stderr)


# ---------------------------------------------------------------------------
# pipeline config


_TOP_KEYS = {"feature_config", "cluster_params", "detector", "jobs"}
_PARAM_KEYS = {"mpts", "mcs", "m"}
_DETECTOR_KEYS = {"method", "fixed_threshold", "min_cluster_flows"}


@dataclasses.dataclass
class Effective:
    """Settings after merging defaults, the pipeline file, and flags."""

    feature_config: str = "all"
    params: ClusterParams = dataclasses.field(default_factory=ClusterParams)
    method: str = "variable"
    fixed_threshold: float = 0.05
    min_cluster_flows: int | None = None
    jobs: int = dataclasses.field(default_factory=lambda: os.cpu_count() or 1)

    def as_dict(self) -> dict:
        return {
            "feature_config": self.feature_config,
            "cluster_params": {
                "mpts": self.params.mpts,
                "mcs": self.params.mcs,
                "m": self.params.m,
            },
            "detector": {
                "method": self.method,
                "fixed_threshold": self.fixed_threshold,
                "min_cluster_flows": self.min_cluster_flows,
            },
            "jobs": self.jobs,
        }

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            method=ThresholdMethod(self.method),
            fixed_threshold=self.fixed_threshold,
            min_cluster_flows=self.min_cluster_flows,
        )


def _reject_unknown(data: dict, allowed: set[str], where: str) -> None:
    for key in data:
        if key not in allowed:
            raise DataError(f"unknown key {key!r} in {where}")


def load_pipeline_config(path: str) -> Effective:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise DataError(f"{path}: pipeline config must be a JSON object")
    _reject_unknown(data, _TOP_KEYS, "pipeline config")

    eff = Effective()
    if "feature_config" in data:
        eff.feature_config = FeatureConfig.from_name(data["feature_config"]).name
    if "cluster_params" in data:
        block = data["cluster_params"]
        if not isinstance(block, dict):
            raise DataError("cluster_params must be an object")
        _reject_unknown(block, _PARAM_KEYS, "cluster_params")
        eff.params = ClusterParams(
            mpts=int(block.get("mpts", eff.params.mpts)),
            mcs=int(block.get("mcs", eff.params.mcs)),
            m=int(block.get("m", eff.params.m)),
        )
    if "detector" in data:
        block = data["detector"]
        if not isinstance(block, dict):
            raise DataError("detector must be an object")
        _reject_unknown(block, _DETECTOR_KEYS, "detector")
        eff.method = ThresholdMethod(block.get("method", eff.method)).value
        eff.fixed_threshold = float(block.get("fixed_threshold", eff.fixed_threshold))
        eff.min_cluster_flows = block.get("min_cluster_flows", eff.min_cluster_flows)
    if "jobs" in data:
        eff.jobs = int(data["jobs"])
        if eff.jobs < 1:
            raise DataError("jobs must be at least 1")
    # round-trip once so bad combinations fail here, not mid-pipeline
    eff.detector_config()
    return eff


def _apply_common_flags(eff: Effective, args: argparse.Namespace) -> None:
    if getattr(args, "jobs", None) is not None:
        eff.jobs = args.jobs
    if getattr(args, "config", None) is not None:
        eff.feature_config = FeatureConfig.from_name(args.config).name
    if getattr(args, "params", None) is not None:
        eff.params = args.params
    if getattr(args, "method", None) is not None:
        eff.method = args.method
    if getattr(args, "threshold", None) is not None:
        eff.fixed_threshold = args.threshold
    if getattr(args, "min_cluster_flows", None) is not None:
        eff.min_cluster_flows = args.min_cluster_flows


# ---------------------------------------------------------------------------
# flag value parsers (argparse type= hooks; failures are usage errors)


def _feature_config_arg(text: str) -> str:
    try:
        return FeatureConfig.from_name(text).name
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _params_arg(text: str) -> ClusterParams:
    values: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, raw = part.partition("=")
        if not sep or key not in _PARAM_KEYS:
            raise argparse.ArgumentTypeError(
                f"bad clustering parameter {part!r}; expected mpts=N,mcs=N,m=N"
            )
        try:
            values[key] = int(raw)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{key} takes an integer, got {raw!r}") from None
    defaults = ClusterParams()
    try:
        return ClusterParams(
            mpts=values.get("mpts", defaults.mpts),
            mcs=values.get("mcs", defaults.mcs),
            m=values.get("m", defaults.m),
        )
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _thresholds_arg(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from None


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("value must be at least 1")
    return value


# ---------------------------------------------------------------------------
# small I/O helpers


def _read_flows(path: str, skip_malformed: bool = False) -> list[TlsFlow]:
    flows = list(read_flow_log(path, skip_malformed=skip_malformed))
    if not flows:
        raise DataError(f"{path}: no flows")
    return flows


def _write_jsonl(path: str, records: Iterable[dict]) -> int:
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in records]
    _atomic_write(path, ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))
    return len(lines)


def _write_flows(path: str, flows: list[TlsFlow]) -> int:
    return _write_jsonl(path, (flow_to_dict(f) for f in flows))


def _write_json(path: str, document: dict) -> None:
    _atomic_write(path, (json.dumps(document, sort_keys=True, indent=2) + "\n").encode("utf-8"))


def _vector_batch(model: VectorizerModel, flows: list[TlsFlow]) -> VectorSet:
    raws = [extract_raw(f, model.config) for f in flows]
    return model.transform_many(raws, [ref_for(f) for f in flows])


def _load_sample_labels(path: str) -> dict[str, str]:
    labels: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if i == 0 and row[0].strip().lower() == "sample_id":
                continue
            if len(row) != 2:
                raise DataError(f"{path}: line {i + 1}: expected sample_id,family")
            labels[row[0].strip()] = row[1].strip()
    return labels


_PCAP_MAGICS = {b"\xd4\xc3\xb2\xa1", b"\xa1\xb2\xc3\xd4", b"\x4d\x3c\xb2\xa1", b"\xa1\xb2\x3c\x4d"}


def _sniff_format(path: str) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "pcap" if head in _PCAP_MAGICS else "flowlog"


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, eff: Effective, log: Log) -> int:
    if args.scenario:
        with open(args.scenario, "r", encoding="utf-8") as fh:
            scenario = scenario_from_dict(json.load(fh))
    else:
        scenario = default_scenario()
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)

    if args.emit_scenario:
        _write_json(args.emit_scenario, scenario_to_dict(scenario))
        log.event("scenario_written", path=args.emit_scenario, seed=scenario.seed)
        if not args.out_dir:
            return 0
    if not args.out_dir:
        raise UsageExit("tlsherd synth: error: --out-dir is required to generate a corpus")

    corpus = generate(scenario, args.out_dir)
    log.event(
        "corpus_generated",
        out_dir=args.out_dir,
        seed=scenario.seed,
        corpus_flows=corpus.flow_count,
        benign_day_flows=corpus.benign_count,
        clusters=len(set(corpus.ground_truth.values())),
    )
    print(
        f"wrote {corpus.flow_count} corpus flows and {corpus.benign_count} "
        f"benign day flows to {args.out_dir}"
    )
    return 0


def cmd_extract(args, eff: Effective, log: Log) -> int:
    fmt = args.format if args.format != "auto" else _sniff_format(args.inp)
    if fmt == "pcap":
        data = Path(args.inp).read_bytes()
        flows, skipped = flows_from_pcap(data, sample_id=args.sample_id, path=args.inp)
        log.event("pcap_extracted", flows=len(flows), **skipped)
    else:
        flows = _read_flows(args.inp, skip_malformed=args.skip_malformed)
        log.event("flowlog_read", flows=len(flows))
    count = _write_flows(args.out, flows)
    print(f"extracted {count} TLS flows from {args.inp} ({fmt})")
    return 0


def cmd_filter(args, eff: Effective, log: Log) -> int:
    flows = _read_flows(args.inp)
    benign = BenignDomainList.load(args.benign_list) if args.benign_list else None
    predicate = None if args.no_tor_filter else tor_default_predicate
    kept, report = filter_pipeline(flows, benign, predicate)
    log.event("filtered", **{k: v for k, v in report.as_dict().items() if k != "alert_histogram"})
    _write_flows(args.out, kept)
    if args.report:
        _write_json(args.report, report.as_dict())
    print(
        f"kept {report.remaining} of {report.input_flows} flows "
        f"(not_established={report.removed_not_established} "
        f"no_appdata={report.removed_no_appdata} "
        f"benign_domain={report.removed_benign_domain} "
        f"tor={report.removed_tor})"
    )
    return 0


def cmd_vectorize_fit(args, eff: Effective, log: Log) -> int:
    flows = _read_flows(args.inp)
    config = FeatureConfig.from_name(eff.feature_config)
    model, vectors = vectorize_flows(flows, config)
    save_vectorizer(args.model, model, run_config=eff.as_dict())
    log.event(
        "vectorizer_fitted",
        config=config.name,
        flows=len(flows),
        numeric_columns=vectors.numeric.shape[1],
        categorical_columns=vectors.cat.shape[1],
    )
    print(f"fitted {config.name} vectorizer on {len(flows)} flows -> {args.model}")
    return 0


def cmd_vectorize_transform(args, eff: Effective, log: Log) -> int:
    model = load_vectorizer(args.model)
    flows = _read_flows(args.inp)
    vectors = _vector_batch(model, flows)
    save_vector_set(args.out, vectors)
    log.event("vectors_written", flows=len(flows), config=model.config.name)
    print(f"transformed {len(flows)} flows with {model.config.name} -> {args.out}")
    return 0


def cmd_cluster(args, eff: Effective, log: Log) -> int:
    vectors = load_vector_set(args.vectors)
    if args.config is not None and args.config != vectors.config.name:
        raise DataError(
            f"{args.vectors}: vectors were built with feature config "
            f"{vectors.config.name!r}, not {args.config!r}"
        )
    eff.feature_config = vectors.config.name  # what is actually in effect
    partition = cluster(vectors, eff.params)
    raw_clusters, noise = len(partition.clusters()), len(partition.noise)
    labels = _load_sample_labels(args.labels) if args.labels else None
    final, metas = finalize_clusters(partition, vectors.refs, labels)
    save_clusters(args.out, final, metas, run_config=eff.as_dict())
    log.event(
        "clustered",
        vectors=len(vectors),
        clusters=raw_clusters,
        noise=noise,
        final_clusters=len(metas),
    )
    print(
        f"{raw_clusters} clusters and {noise} noise points over {len(vectors)} vectors; "
        f"{len(metas)} final clusters -> {args.out}"
    )
    return 0


def cmd_build_detector(args, eff: Effective, log: Log) -> int:
    vectorizer = load_vectorizer(args.model)
    vectors = load_vector_set(args.vectors)
    partition, metas = load_clusters(args.clusters)
    eff.feature_config = vectorizer.config.name
    detector = build_detector(
        vectors, partition, eff.detector_config(), metas=metas or None, vectorizer=vectorizer
    )
    save_detector(args.out, detector, run_config=eff.as_dict())
    n_clusters = len(set(int(c) for c in detector.cluster_ids))
    log.event(
        "detector_built",
        clusters=n_clusters,
        stored_vectors=len(detector.vectors),
        method=eff.method,
    )
    print(f"detector with {n_clusters} clusters -> {args.out}")
    return 0


def _detection_record(flow: TlsFlow, det) -> dict:
    record = {
        "uid": flow.uid,
        "key": {
            "src": flow.key.src,
            "dst": flow.key.dst,
            "sport": flow.key.sport,
            "dport": flow.key.dport,
            "ts": flow.key.ts,
        },
        "sample_id": flow.sample_id,
        "verdict": det.verdict.value,
        "cluster_id": det.cluster_id,
        "distance": det.nearest_distance,
        "family_label": None,
        "evidence": None,
    }
    if det.is_alarm and det.cluster_meta is not None:
        meta = det.cluster_meta
        record["family_label"] = meta.display_label
        sni = flow.client.server_name if flow.client else None
        record["evidence"] = {
            "flow_sni": sni,
            "matched_sni_domains": meta.sni_domains,
            "matched_cert_hashes": meta.leaf_cert_hashes,
        }
    return record


def cmd_detect(args, eff: Effective, log: Log) -> int:
    model = load_detector(args.model)
    override = None
    if args.method is not None or args.threshold is not None or args.min_cluster_flows is not None:
        base = model.config
        override = DetectorConfig(
            method=ThresholdMethod(args.method) if args.method else base.method,
            fixed_threshold=args.threshold if args.threshold is not None else base.fixed_threshold,
            min_cluster_flows=(
                args.min_cluster_flows
                if args.min_cluster_flows is not None
                else base.min_cluster_flows
            ),
        )
    flows = _read_flows(args.inp)
    if model.vectorizer is None:
        raise DataError(f"{args.model}: detector has no embedded vectorizer")
    batch = _vector_batch(model.vectorizer, flows)
    detections = detect_many(batch, model, override)
    count = _write_jsonl(args.out, (_detection_record(f, d) for f, d in zip(flows, detections)))
    alarms = sum(1 for d in detections if d.is_alarm)
    log.event("detected", flows=count, alarms=alarms)
    print(f"{alarms} alarms over {count} flows -> {args.out}")
    return 0


def cmd_eval_ablation(args, eff: Effective, log: Log) -> int:
    flows = _read_flows(args.inp)
    gt = GroundTruth.load(args.gt)
    configs = list(ABLATION_GRID)
    if args.configs:
        configs = [FeatureConfig.from_name(n.strip()).name for n in args.configs.split(",")]
    report = run_ablation_sweep(flows, gt, params=eff.params, configs=configs, jobs=eff.jobs)
    for row in report.rows:
        log.event("ablation_row", config=row.config, f1=round(row.f1, 6))
    if args.out:
        _write_json(args.out, {"rows": report.as_dicts(), "run_config": eff.as_dict()})
    print(report.format_table())
    return 0


def cmd_eval_fdr(args, eff: Effective, log: Log) -> int:
    model = load_detector(args.model)
    if model.vectorizer is None:
        raise DataError(f"{args.model}: detector has no embedded vectorizer")
    flows = _read_flows(args.inp)
    batch = _vector_batch(model.vectorizer, flows)
    rows = run_threshold_sweep(model, batch, args.thresholds)
    for row in rows:
        log.event("fdr_row", threshold=row.threshold, alarms=row.alarms, fdr=round(row.fdr, 8))
    if args.out:
        _write_json(
            args.out,
            {
                "rows": [
                    {
                        "threshold": r.threshold,
                        "alarms": r.alarms,
                        "fdr": r.fdr,
                        "per_cluster": {str(k): v for k, v in sorted(r.per_cluster.items())},
                    }
                    for r in rows
                ],
                "flows": len(flows),
                "run_config": eff.as_dict(),
            },
        )
    print(f"{'threshold':>10}  {'alarms':>7}  {'fdr':>10}")
    for row in rows:
        print(f"{row.threshold:>10.4f}  {row.alarms:>7}  {row.fdr:>10.6f}")
    return 0


def cmd_eval_holdout(args, eff: Effective, log: Log) -> int:
    flows = _read_flows(args.inp)
    gt = GroundTruth.load(args.gt)
    report = run_holdout(
        flows,
        gt,
        feature_config=FeatureConfig.from_name(eff.feature_config),
        detector_config=DetectorConfig(
            method=ThresholdMethod.fixed, fixed_threshold=eff.fixed_threshold
        ),
        params=eff.params,
        folds=args.folds,
        seed=args.seed,
    )
    for fold in report.folds:
        log.event(
            "holdout_fold",
            fold=fold.fold,
            holdout_flows=fold.holdout_flows,
            false_negatives=fold.false_negatives,
            cross_cluster=fold.cross_cluster,
        )
    if args.out:
        _write_json(
            args.out,
            {
                "folds": [dict(vars(f)) for f in report.folds],
                "mean_fn_rate": report.mean_fn_rate,
                "total_cross_cluster": report.total_cross_cluster,
                "run_config": eff.as_dict(),
            },
        )
    print(
        f"mean false-negative rate {report.mean_fn_rate:.6f} over {args.folds} folds, "
        f"{report.total_cross_cluster} cross-cluster assignments"
    )
    return 0


def cmd_eval_verdicts(args, eff: Effective, log: Log) -> int:
    verdicts = load_verdicts(args.verdicts)
    gt = GroundTruth.load(args.gt)
    score = score_verdicts(verdicts, set(gt.assignment))
    log.event(
        "verdicts_scored", tp=score.tp, fp=score.fp, fn=score.fn, tn=score.tn,
        f1=round(score.f1, 6),
    )
    if args.out:
        _write_json(
            args.out,
            {
                "tp": score.tp,
                "fp": score.fp,
                "fn": score.fn,
                "tn": score.tn,
                "precision": score.precision,
                "recall": score.recall,
                "f1": score.f1,
            },
        )
    print(
        f"precision {score.precision:.6f}  recall {score.recall:.6f}  f1 {score.f1:.6f}  "
        f"(tp={score.tp} fp={score.fp} fn={score.fn} tn={score.tn})"
    )
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _common_flags(suppress: bool) -> argparse.ArgumentParser:
    # subparsers get SUPPRESS defaults so they do not clobber values the
    # root parser already set when the flag appears before the subcommand
    missing = argparse.SUPPRESS if suppress else None
    parent = _Parser(add_help=False)
    parent.add_argument(
        "--pipeline", metavar="FILE", default=missing,
        help="pipeline config JSON; flags override its values",
    )
    parent.add_argument(
        "--log-json", action="store_true",
        default=argparse.SUPPRESS if suppress else False,
        help="emit progress as JSON lines on stderr",
    )
    parent.add_argument(
        "--jobs", type=_positive_int, metavar="N", default=missing,
        help="worker parallelism for data-parallel stages (default: logical cores)",
    )
    return parent


def _add_detector_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--method", choices=[m.value for m in ThresholdMethod],
        help="threshold method (default: variable)",
    )
    parser.add_argument(
        "--threshold", type=float, metavar="D",
        help="fixed distance threshold (used when --method fixed)",
    )
    parser.add_argument(
        "--min-cluster-flows", type=_positive_int, metavar="N",
        help="ignore clusters smaller than N when detecting",
    )


def build_parser() -> _Parser:
    root = _Parser(
        prog="tlsherd",
        description="Cluster malicious TLS flows and detect new ones by nearest cluster.",
        parents=[_common_flags(suppress=False)],
    )
    root.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    root.add_argument(
        "--help-json", action="store_true",
        help="print a machine-readable description of all commands and exit",
    )
    sub = root.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    common = [_common_flags(suppress=True)]

    p = sub.add_parser(
        "synth", parents=common,
        help="generate a labeled synthetic corpus",
        description="Generate a labeled synthetic corpus from a scenario description.",
    )
    p.add_argument("--scenario", metavar="FILE", help="scenario JSON (default: built-in scenario)")
    p.add_argument("--seed", type=int, metavar="N", help="override the scenario seed")
    p.add_argument("--out-dir", metavar="DIR", help="directory for the generated corpus")
    p.add_argument(
        "--emit-scenario", metavar="FILE",
        help="write the effective scenario as JSON (usable with --scenario later)",
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "extract", parents=common,
        help="read a capture or flow log and write a normalized flow log",
        description="Parse TLS flows out of a pcap or flow log and write them as JSONL.",
    )
    p.add_argument("--in", dest="inp", required=True, metavar="FILE", help="pcap or JSONL input")
    p.add_argument("--out", required=True, metavar="FILE", help="output flow log (JSONL)")
    p.add_argument(
        "--format", choices=["auto", "pcap", "flowlog"], default="auto",
        help="input format (default: sniff the file header)",
    )
    p.add_argument("--sample-id", metavar="ID", help="sample id to stamp on pcap flows")
    p.add_argument(
        "--skip-malformed", action="store_true",
        help="skip unreadable flow log lines instead of failing",
    )
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser(
        "filter", parents=common,
        help="drop benign and unusable flows",
        description="Run the four-stage benign filter and keep what remains.",
    )
    p.add_argument("--in", dest="inp", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE", help="kept flows (JSONL)")
    p.add_argument(
        "--benign-list", metavar="FILE",
        help="registrable domains to treat as benign, one per line",
    )
    p.add_argument("--no-tor-filter", action="store_true", help="keep Tor-looking flows")
    p.add_argument("--report", metavar="FILE", help="write per-stage counts as JSON")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser(
        "vectorize", parents=common,
        help="fit a vectorizer or transform flows with one",
        description="Fit a feature vectorizer on flows, or apply a fitted one.",
    )
    vsub = p.add_subparsers(dest="subcommand", metavar="ACTION", parser_class=_Parser)
    pf = vsub.add_parser(
        "fit", parents=common, help="fit on a flow log",
        description="Fit the vectorizer (vocabulary, tf-idf weights, z-scales) on flows.",
    )
    pf.add_argument("--config", type=_feature_config_arg, metavar="NAME",
                    help="feature config name, e.g. FD8 or no-payload (default: all)")
    pf.add_argument("--in", dest="inp", required=True, metavar="FILE")
    pf.add_argument("--model", required=True, metavar="FILE", help="vectorizer output")
    pf.set_defaults(func=cmd_vectorize_fit)
    pt = vsub.add_parser(
        "transform", parents=common, help="apply a fitted vectorizer",
        description="Transform flows into vectors with a fitted vectorizer.",
    )
    pt.add_argument("--model", required=True, metavar="FILE", help="fitted vectorizer")
    pt.add_argument("--in", dest="inp", required=True, metavar="FILE")
    pt.add_argument("--out", required=True, metavar="FILE", help="vector container output")
    pt.set_defaults(func=cmd_vectorize_transform)

    p = sub.add_parser(
        "cluster", parents=common,
        help="cluster a vector container",
        description="Cluster vectors, materialize noise as singletons, attach metadata.",
    )
    p.add_argument("--vectors", required=True, metavar="FILE")
    p.add_argument(
        "--params", type=_params_arg, metavar="K=V,...",
        help="clustering parameters, e.g. mpts=2,mcs=2,m=10",
    )
    p.add_argument(
        "--config", type=_feature_config_arg, metavar="NAME",
        help="fail unless the vectors were built with this feature config",
    )
    p.add_argument(
        "--labels", metavar="FILE",
        help="sample_id,family CSV used to label clusters by majority",
    )
    p.add_argument("--out", required=True, metavar="FILE", help="clusters output")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser(
        "build-detector", parents=common,
        help="freeze a clustering into a detector",
        description="Combine vectorizer, vectors, and clusters into a detector model.",
    )
    p.add_argument("--model", required=True, metavar="FILE", help="fitted vectorizer")
    p.add_argument("--vectors", required=True, metavar="FILE")
    p.add_argument("--clusters", required=True, metavar="FILE")
    _add_detector_flags(p)
    p.add_argument("--out", required=True, metavar="FILE", help="detector output")
    p.set_defaults(func=cmd_build_detector)

    p = sub.add_parser(
        "detect", parents=common,
        help="score flows against a detector",
        description="Assign each flow to its nearest cluster or call it benign.",
    )
    p.add_argument("--model", required=True, metavar="FILE", help="detector model")
    _add_detector_flags(p)
    p.add_argument("--in", dest="inp", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE", help="detections (JSONL)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser(
        "evaluate", parents=common,
        help="score clusterings and detectors",
        description="Evaluation harnesses: ablation sweep, FDR sweep, holdout, verdicts.",
    )
    esub = p.add_subparsers(dest="subcommand", metavar="ACTION", parser_class=_Parser)

    pe = esub.add_parser(
        "ablation", parents=common, help="feature-ablation clustering sweep",
        description="Cluster under each feature config and score against ground truth.",
    )
    pe.add_argument("--in", dest="inp", required=True, metavar="FILE", help="kept flows (JSONL)")
    pe.add_argument("--gt", required=True, metavar="FILE", help="flow_uid,cluster CSV")
    pe.add_argument("--configs", metavar="NAMES", help="comma-separated config names")
    pe.add_argument("--params", type=_params_arg, metavar="K=V,...")
    pe.add_argument("--out", metavar="FILE", help="write rows as JSON")
    pe.set_defaults(func=cmd_eval_ablation)

    pe = esub.add_parser(
        "fdr", parents=common, help="false-detection sweep over thresholds",
        description="Measure alarms on a benign stream at each fixed threshold.",
    )
    pe.add_argument("--model", required=True, metavar="FILE", help="detector model")
    pe.add_argument("--in", dest="inp", required=True, metavar="FILE", help="benign flows (JSONL)")
    pe.add_argument(
        "--thresholds", type=_thresholds_arg, required=True, metavar="D,D,...",
        help="ascending distance thresholds, e.g. 0.05,0.1,0.2",
    )
    pe.add_argument("--out", metavar="FILE", help="write rows as JSON")
    pe.set_defaults(func=cmd_eval_fdr)

    pe = esub.add_parser(
        "holdout", parents=common, help="k-fold holdout false-negative rate",
        description="Cluster most flows, detect the held-out rest, count misses.",
    )
    pe.add_argument("--in", dest="inp", required=True, metavar="FILE")
    pe.add_argument("--gt", required=True, metavar="FILE")
    pe.add_argument("--config", type=_feature_config_arg, metavar="NAME")
    pe.add_argument("--threshold", type=float, metavar="D", help="fixed threshold (default 0.05)")
    pe.add_argument("--folds", type=_positive_int, default=10, metavar="K")
    pe.add_argument("--seed", type=int, default=42, metavar="N")
    pe.add_argument("--params", type=_params_arg, metavar="K=V,...")
    pe.add_argument("--out", metavar="FILE", help="write per-fold results as JSON")
    pe.set_defaults(func=cmd_eval_holdout)

    pe = esub.add_parser(
        "verdicts", parents=common, help="score a verdict file against ground truth",
        description="Precision/recall/F1 of per-flow verdicts against labeled flows.",
    )
    pe.add_argument("--verdicts", required=True, metavar="FILE", help="flow_uid,verdict CSV")
    pe.add_argument("--gt", required=True, metavar="FILE")
    pe.add_argument("--out", metavar="FILE")
    pe.set_defaults(func=cmd_eval_verdicts)

    return root


# ---------------------------------------------------------------------------
# --help-json


def _action_doc(action: argparse.Action) -> dict | None:
    if isinstance(action, (argparse._SubParsersAction, argparse._HelpAction)):
        return None
    doc: dict = {
        "flags": list(action.option_strings),
        "dest": action.dest,
        "help": action.help,
        "required": bool(action.required),
    }
    if action.choices is not None:
        doc["choices"] = list(action.choices)
    if action.metavar is not None:
        doc["metavar"] = action.metavar
    if action.default not in (None, argparse.SUPPRESS) and not isinstance(action.default, bool):
        doc["default"] = action.default
    return doc


def _parser_doc(parser: argparse.ArgumentParser) -> dict:
    options = []
    commands = {}
    for action in parser._actions:  # noqa: SLF001 - argparse keeps no public view
        if isinstance(action, argparse._SubParsersAction):
            for name, child in action.choices.items():
                commands[name] = _parser_doc(child)
            continue
        doc = _action_doc(action)
        if doc is not None:
            options.append(doc)
    out = {"description": parser.description, "options": options}
    if commands:
        out["commands"] = commands
    return out


def help_json() -> dict:
    doc = _parser_doc(build_parser())
    doc["prog"] = "tlsherd"
    doc["version"] = __version__
    return doc


# ---------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageExit as exc:
        print(exc.message, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and --version print and exit themselves
        return int(exc.code or 0)

    if getattr(args, "help_json", False):
        print(json.dumps(help_json(), indent=2, sort_keys=True))
        return 0

    log = Log(as_json=bool(getattr(args, "log_json", False)))
    func: Callable | None = getattr(args, "func", None)
    if func is None:
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1

    try:
        eff = load_pipeline_config(args.pipeline) if getattr(args, "pipeline", None) else Effective()
        _apply_common_flags(eff, args)
        return func(args, eff, log)
    except UsageExit as exc:
        print(exc.message, file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        log.error(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())

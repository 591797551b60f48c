"""Detector: thresholds, verdicts, tie rules, alarm accounting."""

from __future__ import annotations

import numpy as np
import pytest

from craft import make_vector_set, oracle_points
from oracle_detector import reference_thresholds, reference_verdict
from tlsherd.clustering import ClusterMeta, Partition
from tlsherd.detector import (
    ClusterModel,
    Detection,
    DetectorConfig,
    ThresholdMethod,
    Verdict,
    build_detector,
    detect,
    detect_many,
    measure_fdr,
)
from tlsherd.features import FeatureConfig
from tlsherd.vectorizer import VectorRef

FIXED05 = DetectorConfig(method=ThresholdMethod.fixed, fixed_threshold=0.05)


def _model(numeric, assignment, config=None, cats=None, **kw):
    vs = make_vector_set(numeric, cats)
    part = Partition(assignment=assignment)
    return vs, build_detector(vs, part, config, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(method=ThresholdMethod.fixed, fixed_threshold=0.0)
    with pytest.raises(ValueError):
        DetectorConfig(min_cluster_flows=0)
    DetectorConfig(method=ThresholdMethod.variable, fixed_threshold=0.0)


def test_variable_threshold_is_max_of_nn_distances():
    # neighbor distances inside the cluster are {0.01, 0.01, 0.02}
    vs, model = _model([[0.0], [0.01], [0.03]], {0: 0, 1: 0, 2: 0})
    assert model.thresholds[0] == pytest.approx(0.02, abs=1e-12)


def test_singleton_threshold_zero_means_exact_match_only():
    vs, model = _model([[0.0], [5.0]], {0: 0, 1: 1})
    assert model.thresholds == {0: 0.0, 1: 0.0}
    hit = detect(vs.vector(0), model)
    assert hit.verdict is Verdict.malicious and hit.cluster_id == 0
    assert hit.nearest_distance == 0.0
    near = detect(make_vector_set([[1e-6]]).vector(0), model)
    assert near.verdict is Verdict.benign and near.cluster_id is None


def test_min_cluster_flows_filter():
    numeric = [[0.0], [0.01], [0.02], [9.0]]
    assignment = {0: 0, 1: 0, 2: 0, 3: 1}
    vs = make_vector_set(numeric)
    model = build_detector(
        vs, Partition(assignment=assignment), DetectorConfig(min_cluster_flows=2)
    )
    assert set(model.thresholds) == {0}
    assert len(model) == 3
    with pytest.raises(ValueError):
        build_detector(
            vs, Partition(assignment=assignment), DetectorConfig(min_cluster_flows=5)
        )


def test_fixed_threshold_boundary():
    vs, model = _model([[0.0]], {0: 0}, FIXED05)
    at_boundary = detect(make_vector_set([[0.05]]).vector(0), model)
    assert at_boundary.verdict is Verdict.malicious  # <= is inclusive
    just_over = detect(make_vector_set([[0.051]]).vector(0), model)
    assert just_over.verdict is Verdict.benign
    far = detect(make_vector_set([[0.30]]).vector(0), model)
    assert far.verdict is Verdict.benign
    assert far.nearest_distance == pytest.approx(0.30, abs=1e-12)


def test_distance_tie_reports_lowest_cluster_id():
    numeric = [[0.0], [2.0]]
    vs = make_vector_set(numeric)
    # same geometry, opposite id order: the probe at 1.0 is equidistant
    fixed = DetectorConfig(method=ThresholdMethod.fixed, fixed_threshold=1.5)
    a = build_detector(vs, Partition(assignment={0: 0, 1: 1}), fixed)
    b = build_detector(vs, Partition(assignment={0: 1, 1: 0}), fixed)
    probe = make_vector_set([[1.0]]).vector(0)
    assert detect(probe, a).cluster_id == 0
    assert detect(probe, b).cluster_id == 0


def test_detection_carries_meta_and_ref():
    meta = ClusterMeta(
        cluster_id=0, size=2, sample_ids=["s1"], sni_domains=["x.test"],
        leaf_cert_hashes=[], family_label="upatre", label_suffix=1,
    )
    vs, model = _model([[0.0], [0.001]], {0: 0, 1: 0}, metas=[meta])
    probe_set = make_vector_set([[0.0005]])
    probe_set.refs = [VectorRef("probe-1")]
    hit = detect_many(probe_set, model)[0]
    assert hit.cluster_meta is meta
    assert hit.ref == VectorRef("probe-1")
    assert hit.is_alarm


def test_dimension_mismatch_rejected():
    vs, model = _model([[0.0, 1.0]], {0: 0})
    with pytest.raises(ValueError):
        detect(make_vector_set([[0.0]]).vector(0), model)


def test_detect_is_pure():
    vs, model = _model([[0.0], [0.01], [7.0]], {0: 0, 1: 0, 2: 1})
    probe = make_vector_set([[0.005]]).vector(0)
    first = detect(probe, model)
    for _ in range(5):
        again = detect(probe, model)
        assert again == first


def test_fixed_threshold_monotone_alarm_sets(rng):
    for _ in range(20):
        n = rng.randrange(2, 9)
        stored = [[float(rng.randrange(0, 6))] for _ in range(n)]
        assignment = {i: rng.randrange(0, 3) for i in range(n)}
        vs = make_vector_set(stored)
        model = build_detector(vs, Partition(assignment=assignment))
        probes = make_vector_set(
            [[rng.uniform(-1.0, 7.0)] for _ in range(12)]
        )
        alarm_sets = []
        for t in (0.05, 0.10, 0.20):
            cfg = DetectorConfig(method=ThresholdMethod.fixed, fixed_threshold=t)
            hits = detect_many(probes, model, cfg)
            alarm_sets.append({i for i, h in enumerate(hits) if h.is_alarm})
        assert alarm_sets[0] <= alarm_sets[1] <= alarm_sets[2]


def test_measure_fdr_empty_stream():
    vs, model = _model([[0.0], [0.01]], {0: 0, 1: 0})
    assert measure_fdr(model, make_vector_set([])) == (0, 0.0, {})


def test_measure_fdr_degenerate_full_alarm():
    vs, model = _model([[1.0], [1.01]], {0: 0, 1: 0})
    copies = make_vector_set([[1.0]] * 4)
    alarms, fdr, per_cluster = measure_fdr(model, copies)
    assert (alarms, fdr) == (4, 1.0)
    assert per_cluster == {0: 4}


def test_matches_reference_fuzz(rng):
    config = FeatureConfig.from_name("payload-only")
    w_num = config.n_numeric / (config.n_numeric + config.n_categorical)
    w_cat = 1.0 - w_num
    for _ in range(40):
        n = rng.randrange(2, 9)
        stored_numeric = [
            [float(rng.randrange(0, 5)) for _ in range(2)] for _ in range(n)
        ]
        assignment = {i: rng.randrange(0, 3) for i in range(n)}
        vs = make_vector_set(stored_numeric)
        use_fixed = rng.random() < 0.5
        cfg = (
            DetectorConfig(method=ThresholdMethod.fixed, fixed_threshold=1.0)
            if use_fixed
            else DetectorConfig()
        )
        model = build_detector(vs, Partition(assignment=assignment), cfg)

        points = oracle_points(stored_numeric)
        members: dict[int, list[int]] = {}
        for i, cid in assignment.items():
            members.setdefault(cid, []).append(i)
        want_thresholds = reference_thresholds(points, members, w_num, w_cat)
        assert model.thresholds == want_thresholds

        probes_numeric = [
            [float(rng.randrange(0, 5)) for _ in range(2)] for _ in range(10)
        ]
        probes = make_vector_set(probes_numeric)
        got = detect_many(probes, model)
        ids = [int(c) for c in model.cluster_ids]
        stored_points = [points[i] for i in sorted(range(n), key=lambda i: (assignment[i], i))]
        # model rows are grouped by ascending cluster id, then row order
        want_alarms = 0
        for k, probe in enumerate(oracle_points(probes_numeric)):
            is_alarm, cid, dist = reference_verdict(
                probe,
                stored_points,
                ids,
                want_thresholds,
                w_num,
                w_cat,
                fixed=1.0 if use_fixed else None,
            )
            assert got[k].is_alarm == is_alarm
            assert got[k].cluster_id == cid
            assert got[k].nearest_distance == dist
            want_alarms += is_alarm
            if got[k].is_alarm:
                limit = 1.0 if use_fixed else model.thresholds[got[k].cluster_id]
                assert got[k].nearest_distance <= limit

        alarms, fdr, per_cluster = measure_fdr(model, probes)
        assert alarms == want_alarms
        assert fdr == want_alarms / 10
        assert sum(per_cluster.values()) == alarms

"""Corpus generator: determinism, sizing, labeling, and filter interplay."""

import hashlib
import json

import pytest

from tlsherd.features import FeatureConfig, extract_raw
from tlsherd.filtering import BenignDomainList, filter_pipeline
from tlsherd.flowlog import read_flow_log
from tlsherd.model import TlsVersion
from tlsherd.synthgen import (
    CertProfile,
    ClientProfile,
    FamilyTemplate,
    Scenario,
    ScenarioError,
    ServerProfile,
    SniPolicy,
    ciphertext_sizes,
    default_scenario,
    generate,
    scenario_from_dict,
    scenario_to_dict,
    validate_scenario,
)
from tlsherd.vectorizer import vectorize_flows

CORPUS_FILES = (
    "flows.jsonl",
    "benign.jsonl",
    "groundtruth.csv",
    "labels.csv",
    "benign_domains.txt",
)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return generate(default_scenario(), out)


@pytest.fixture(scope="module")
def kept_flows(corpus):
    flows = list(read_flow_log(corpus.flows_path))
    benign = BenignDomainList.load(corpus.benign_domains_path)
    kept, report = filter_pipeline(flows, benign)
    return flows, kept, report


# ---------------------------------------------------------------------------
# determinism


def test_same_seed_reproduces_every_file_byte_for_byte(corpus, tmp_path):
    again = generate(default_scenario(), tmp_path / "again")
    for name in CORPUS_FILES:
        a = hashlib.sha256((corpus.out_dir / name).read_bytes()).digest()
        b = hashlib.sha256((again.out_dir / name).read_bytes()).digest()
        assert a == b, f"{name} differs between identical runs"


def test_different_seed_changes_the_corpus(corpus, tmp_path):
    scenario = default_scenario()
    other = generate(
        Scenario(
            seed=scenario.seed + 1,
            families=scenario.families,
            benign_background=scenario.benign_background,
            tor_fraction=scenario.tor_fraction,
            failed_flows=scenario.failed_flows,
            quiet_flows=scenario.quiet_flows,
            benign_day_flows=scenario.benign_day_flows,
        ),
        tmp_path / "other",
    )
    assert (
        (corpus.out_dir / "flows.jsonl").read_bytes()
        != (other.out_dir / "flows.jsonl").read_bytes()
    )


# ---------------------------------------------------------------------------
# corpus shape


def test_corpus_reads_back_through_the_flow_log_schema(corpus):
    flows = list(read_flow_log(corpus.flows_path))
    day = list(read_flow_log(corpus.benign_path))
    assert len(flows) == corpus.flow_count
    assert len(day) == corpus.benign_count == 150


def test_ground_truth_and_labels_cover_the_malicious_flows(corpus):
    flows = {f.uid: f for f in read_flow_log(corpus.flows_path)}
    assert set(corpus.ground_truth) <= set(flows)
    scenario = default_scenario()
    assert len(corpus.ground_truth) == sum(
        t.flow_count for t in scenario.families
    )

    gt_lines = corpus.ground_truth_path.read_text().splitlines()
    assert gt_lines[0] == "flow_uid,cluster"
    assert len(gt_lines) == 1 + len(corpus.ground_truth)

    # every malicious flow's sample carries its family label; template
    # names are the family name with an optional variant suffix
    for uid, cluster in corpus.ground_truth.items():
        sample = flows[uid].sample_id
        assert sample is not None
        assert corpus.sample_labels[sample] in (cluster, cluster.rsplit("-", 1)[0])

    label_lines = corpus.labels_path.read_text().splitlines()
    assert label_lines[0] == "sample_id,family"
    families = {line.split(",")[1] for line in label_lines[1:]}
    assert families == {
        "copperfin",
        "quartzloader",
        "nightjar",
        "bronzekey",
        "ironlatch",
        "ghostveil",
    }
    clusters = set(corpus.ground_truth.values())
    assert len(clusters) == 10


def test_tls13_families_leave_no_certificate_trace(corpus):
    tls13_uids = {
        uid
        for uid, cluster in corpus.ground_truth.items()
        if cluster.startswith(("nightjar", "bronzekey"))
    }
    flows = [f for f in read_flow_log(corpus.flows_path) if f.uid in tls13_uids]
    assert len(flows) == 80
    for flow in flows:
        assert flow.server_chain is None
        assert flow.client.server_name is None
        assert flow.negotiated_version is TlsVersion.TLS13
        assert flow.server.supported_version == 0x0304

    # the serialized lines must omit the field too, not write a null
    with_chain = sum(
        1
        for line in corpus.flows_path.read_text().splitlines()
        if "cert_chain" in json.loads(line)
    )
    parsed = list(read_flow_log(corpus.flows_path))
    assert with_chain == sum(1 for f in parsed if f.server_chain is not None)


# ---------------------------------------------------------------------------
# record sizing


def test_ciphertext_sizes_per_suite():
    # one 986-byte message: AEAD tag plus per-suite framing
    assert ciphertext_sizes(986, 0x0303, 0xC02F) == [1010]
    assert ciphertext_sizes(986, 0x0304, 0x1301) == [1003]
    # CBC-SHA1 under TLS 1.0: MAC, padding to the block, no explicit IV
    assert ciphertext_sizes(132, 0x0301, 0x002F) == [160]
    # the same suite under TLS 1.2 gains a 16-byte explicit IV
    assert ciphertext_sizes(132, 0x0303, 0x002F) == [176]


def test_ciphertext_sizes_chunks_at_the_record_ceiling():
    assert ciphertext_sizes(16384, 0x0304, 0x1301) == [16401]
    assert ciphertext_sizes(16385, 0x0304, 0x1301) == [16401, 18]
    assert ciphertext_sizes(2 * 16384, 0x0303, 0xC02F) == [16408, 16408]
    assert ciphertext_sizes(0, 0x0303, 0xC02F) == []
    with pytest.raises(ValueError):
        ciphertext_sizes(-1, 0x0303, 0xC02F)


# ---------------------------------------------------------------------------
# filter interplay: the chaff is built to exercise every stage


def test_filter_stage_counts_on_the_default_corpus(kept_flows):
    _, kept, report = kept_flows
    assert report.removed_not_established == 6
    assert report.removed_no_appdata == 6
    assert report.removed_benign_domain == 120
    assert report.removed_tor == 6
    assert len(kept) == 280


def test_filter_keeps_exactly_the_ground_truth(corpus, kept_flows):
    _, kept, _ = kept_flows
    assert {f.uid for f in kept} == set(corpus.ground_truth)


def test_fake_resumption_is_ghostveil_alone(corpus, kept_flows):
    _, kept, _ = kept_flows
    for flow in kept:
        if flow.fake_resumption:
            assert corpus.ground_truth[flow.uid] == "ghostveil"
        else:
            assert corpus.ground_truth[flow.uid] != "ghostveil"
        assert not flow.resumed


def test_each_template_collapses_to_one_feature_vector(corpus, kept_flows):
    """The malicious templates speak rigid protocols: one vector each."""
    _, kept, _ = kept_flows
    _, vectors = vectorize_flows(kept, FeatureConfig.from_name("all"))
    signatures = {}
    for i, ref in enumerate(vectors.refs):
        v = vectors.vector(i)
        sig = (tuple(v.numeric), tuple(v.cat_indices), tuple(v.cat_values))
        signatures.setdefault(corpus.ground_truth[ref.uid], set()).add(
            hashlib.sha256(repr(sig).encode()).hexdigest()
        )
    assert len(signatures) == 10
    for cluster, sigs in signatures.items():
        assert len(sigs) == 1, f"{cluster} spans {len(sigs)} distinct vectors"
    # and no two templates share theirs
    flat = [next(iter(s)) for s in signatures.values()]
    assert len(set(flat)) == 10


def test_benign_day_stream_is_pure_background(corpus):
    scenario = default_scenario()
    pool = set(scenario.benign_background.sni_policy.names)
    for flow in read_flow_log(corpus.benign_path):
        assert flow.sample_id.startswith("day-")
        assert flow.client.server_name in pool
        assert flow.established


# ---------------------------------------------------------------------------
# scenario validation and round trip


def _tweak(template: FamilyTemplate, **kw) -> FamilyTemplate:
    base = {
        "name": template.name,
        "client_profile": template.client_profile,
        "server_profile": template.server_profile,
        "cert_profile": template.cert_profile,
        "sni_policy": template.sni_policy,
        "payload_protocol": template.payload_protocol,
        "flows_per_sample": template.flows_per_sample,
        "samples": template.samples,
        "family": template.family,
        "fake_resumption": template.fake_resumption,
    }
    base.update(kw)
    return FamilyTemplate(**base)


def test_scenario_validation_rejects_bad_documents():
    good = default_scenario()
    first = good.families[0]

    def swap(**kw):
        merged = {
            "seed": good.seed,
            "families": good.families,
            "benign_background": good.benign_background,
            "tor_fraction": good.tor_fraction,
            "failed_flows": good.failed_flows,
            "quiet_flows": good.quiet_flows,
            "benign_day_flows": good.benign_day_flows,
        }
        merged.update(kw)
        return Scenario(**merged)

    validate_scenario(good)

    with pytest.raises(ScenarioError, match="seed"):
        validate_scenario(swap(seed=-1))
    with pytest.raises(ScenarioError, match="tor_fraction"):
        validate_scenario(swap(tor_fraction=1.5))
    with pytest.raises(ScenarioError, match="unique"):
        validate_scenario(swap(families=(first, first)))
    with pytest.raises(ScenarioError, match="identical"):
        clone = _tweak(first, name="copperfin-b", family="copperfin")
        validate_scenario(swap(families=good.families + (clone,)))
    with pytest.raises(ScenarioError, match="indistinguishable"):
        clone = _tweak(
            first,
            name="brasswing",
            family="brasswing",
            client_profile=ClientProfile(version=0x0303, ciphers=(0xC02F,)),
            server_profile=ServerProfile(cipher=0xC02F),
        )
        validate_scenario(swap(families=good.families + (clone,)))

    with pytest.raises(ScenarioError, match="exactly one name"):
        _bad_sni = _tweak(first, sni_policy=SniPolicy("fixed", ("a.com", "b.com")))
        validate_scenario(swap(families=good.families[1:] + (_bad_sni,)))
    with pytest.raises(ScenarioError, match="payload"):
        validate_scenario(
            swap(families=good.families[1:] + (_tweak(first, payload_protocol=(((-1, 4), (2, 2)),)),))
        )
    with pytest.raises(ScenarioError, match="certificate"):
        tls13 = next(t for t in good.families if t.name == "bronzekey")
        validate_scenario(
            swap(
                families=good.families
                + (
                    _tweak(
                        tls13,
                        name="bronzekey-b",
                        family="bronzekey",
                        cert_profile=CertProfile(
                            kind="shared-ca", ca_name="Nope CA"
                        ),
                    ),
                )
            )
        )


def test_scenario_document_round_trip():
    scenario = default_scenario()
    doc = json.loads(json.dumps(scenario_to_dict(scenario)))
    assert scenario_from_dict(doc) == scenario


def test_scenario_document_rejects_unknown_keys():
    doc = scenario_to_dict(default_scenario())
    doc["verbosity"] = 3
    with pytest.raises(ScenarioError, match="unknown key 'verbosity'"):
        scenario_from_dict(doc)

    doc = scenario_to_dict(default_scenario())
    doc["families"][0]["client_profile"]["gossip"] = True
    with pytest.raises(ScenarioError, match="gossip"):
        scenario_from_dict(doc)

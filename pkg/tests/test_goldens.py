"""Pinned captures with exact expected outcomes.

The pcap files under goldens/ are the contract; goldens_build.py documents
how they were made and can rewrite them. If a wire builder changes shape,
the reproduction test fails while the behavioral tests keep checking the
pinned bytes.
"""

import json

import pytest

import goldens_build as gb
from tlsherd.cli import main as cli_main
from tlsherd.features import CERT_FEATURES, FeatureConfig, extract_raw
from tlsherd.filtering import BenignDomainList, filter_pipeline
from tlsherd.pcap import flows_from_pcap
from tlsherd.resumption import link_resumptions


def golden_bytes(name: str) -> bytes:
    return (gb.GOLDENS_DIR / name).read_bytes()


@pytest.mark.parametrize("name", sorted(gb.BUILDERS))
def test_builders_reproduce_the_pinned_bytes(name):
    assert gb.BUILDERS[name]() == golden_bytes(name)


# ---------------------------------------------------------------------------
# filtering golden


@pytest.fixture(scope="module")
def filter_flows():
    flows, skipped = flows_from_pcap(golden_bytes("filter_stages.pcap"), sample_id="golden")
    assert skipped == {"non_tls": 0, "rejected": 0}
    assert len(flows) == 12
    return flows


def test_filter_golden_stage_counts(filter_flows):
    benign = BenignDomainList(frozenset(gb.BENIGN_DOMAINS), source_name="golden")
    kept, report = filter_pipeline(filter_flows, benign)
    assert report.removed_not_established == 3
    assert report.removed_no_appdata == 2
    assert report.removed_benign_domain == 2
    assert report.removed_tor == 1
    assert report.remaining == len(kept) == 4
    assert report.alert_histogram == {
        gb.ALERT_PROTOCOL_VERSION: 1,
        gb.ALERT_HANDSHAKE_FAILURE: 1,
    }
    kept_snis = [f.client.server_name for f in kept]
    assert kept_snis == [
        "files.example.net", None, "beacon.copper-sky.net", "files.example.net",
    ]


def test_filter_golden_through_the_cli(tmp_path, capsys):
    pcap_path = tmp_path / "golden.pcap"
    pcap_path.write_bytes(golden_bytes("filter_stages.pcap"))
    domains = tmp_path / "benign.txt"
    domains.write_text("\n".join(gb.BENIGN_DOMAINS) + "\n")
    extracted = tmp_path / "flows.jsonl"
    kept = tmp_path / "kept.jsonl"
    report_path = tmp_path / "report.json"

    assert cli_main(["extract", "--in", str(pcap_path), "--format", "pcap",
                     "--out", str(extracted)]) == 0
    assert cli_main(["filter", "--in", str(extracted), "--benign-list", str(domains),
                     "--out", str(kept), "--report", str(report_path)]) == 0

    report = json.loads(report_path.read_text())
    assert report["input_flows"] == 12
    assert report["removed_not_established"] == 3
    assert report["removed_no_appdata"] == 2
    assert report["removed_benign_domain"] == 2
    assert report["removed_tor"] == 1
    assert report["remaining"] == 4
    assert len(kept.read_text().splitlines()) == 4


# ---------------------------------------------------------------------------
# resumption goldens


def _cert_view(flow):
    raw = extract_raw(flow, FeatureConfig.from_name("all"))
    return {name: raw.categorical[name] for name in CERT_FEATURES}


def test_resumed_flow_inherits_every_certificate_feature():
    flows, skipped = flows_from_pcap(golden_bytes("resumption_pair.pcap"))
    assert skipped == {"non_tls": 0, "rejected": 0}
    link_resumptions(flows)
    original, resumed = flows

    assert original.server.issued_ticket == gb.GOLD_TICKET
    assert not original.resumed and not original.fake_resumption
    assert resumed.resumed and not resumed.fake_resumption
    assert resumed.server_chain is None  # nothing on its own wire
    assert resumed.inherited_chain is not None
    assert resumed.inherited_chain.certs_der == original.server_chain.certs_der

    source = _cert_view(original)
    inherited = _cert_view(resumed)
    assert len(CERT_FEATURES) == 24
    for name in CERT_FEATURES:
        assert inherited[name] == source[name], name
        assert inherited[name] is not None or name in (
            # DN parts the golden chain genuinely leaves blank
            "s_leaf_cert_subj_o", "s_leaf_cert_subj_ou", "s_leaf_cert_subj_c",
            "s_leaf_cert_subj_st", "s_leaf_cert_subj_l", "s_leaf_cert_subj_email",
            "s_leaf_cert_iss_o", "s_leaf_cert_iss_ou", "s_leaf_cert_iss_c",
            "s_leaf_cert_iss_st", "s_leaf_cert_iss_l", "s_leaf_cert_iss_email",
        ), name
    assert inherited["s_num_certs"] == "2"
    assert inherited["s_leaf_cert_subj_cn"] == "portal.example.org"
    assert inherited["s_leaf_cert_iss_cn"] == "Golden Root"
    assert inherited["s_leaf_cert_validity"] == "365"
    assert inherited["s_leaf_cert_num_SAN"] == "1"
    assert inherited["s_leaf_cert_self_signed"] == "false"


def test_unmatched_ticket_flags_fake_resumption_and_leaves_certs_absent():
    flows, skipped = flows_from_pcap(golden_bytes("resumption_fake.pcap"))
    assert skipped == {"non_tls": 0, "rejected": 0}
    (flow,) = flows
    link_resumptions(flows)

    assert flow.fake_resumption and not flow.resumed
    assert flow.server_chain is None and flow.inherited_chain is None

    raw = extract_raw(flow, FeatureConfig.from_name("all"))
    for name in CERT_FEATURES:
        assert raw.categorical[name] is None, name
    assert raw.categorical["c_fake_resumption"] == "true"

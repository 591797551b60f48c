"""Registrable domains, the benign list, the Tor heuristic, and the pipeline."""

from tlsherd.filtering import (
    BenignDomainList,
    filter_pipeline,
    tor_default_predicate,
)
from tlsherd.model import (
    CertificateChain,
    ChainOwner,
    DnFields,
    ParsedLeaf,
    ValidationStatus,
)
from tlsherd.psl import registrable_domain

from craft import make_client_hello, make_flow


# ---------------------------------------------------------------------------
# registrable_domain


def test_etld_plus_one():
    assert registrable_domain("a.b.example.com") == "example.com"
    assert registrable_domain("example.com") == "example.com"
    assert registrable_domain("foo.co.uk") == "foo.co.uk"
    assert registrable_domain("deep.pile.foo.co.uk") == "foo.co.uk"
    assert registrable_domain("cdn.fastly.net") == "cdn.fastly.net"


def test_normalization_ips_and_degenerates():
    assert registrable_domain("WWW.Example.COM.") == "example.com"
    assert registrable_domain("192.0.2.1") == "192.0.2.1"
    assert registrable_domain("2001:db8::1") == "2001:db8::1"
    assert registrable_domain("") == ""
    assert registrable_domain("com") == ""
    assert registrable_domain("co.uk") == ""


def test_unknown_tld_uses_implicit_rule():
    assert registrable_domain("host.corp.internal") == "corp.internal"


def test_wildcard_and_exception_rules():
    assert registrable_domain("a.b.ck") == "a.b.ck"
    assert registrable_domain("www.ck") == "www.ck"
    assert registrable_domain("x.www.ck") == "www.ck"


# ---------------------------------------------------------------------------
# benign list


def test_benign_list_formats(tmp_path):
    plain = tmp_path / "plain.txt"
    plain.write_text("# snapshot\nTwitter.COM\nexample.org.\n\n")
    from_plain = BenignDomainList.load(plain)
    assert from_plain.entries == frozenset({"twitter.com", "example.org"})
    assert from_plain.source_name == "plain.txt"

    csv = tmp_path / "ranked.csv"
    csv.write_text("1,google.com\n2,youtube.com\n")
    from_csv = BenignDomainList.load(csv)
    assert "google.com" in from_csv and "twitter.com" not in from_csv
    assert len(from_csv) == 2


# ---------------------------------------------------------------------------
# Tor heuristic


def tor_leaf(subject_cn: str, issuer_cn: str) -> ParsedLeaf:
    return ParsedLeaf(
        version=3,
        validity_days=365,
        san_count=0,
        ext_count=0,
        self_signed=False,
        sign_alg="1.2.840.113549.1.1.11",
        pubkey_hash="0" * 64,
        pubkey_size=2048,
        subject=DnFields(cn=subject_cn),
        issuer=DnFields(cn=issuer_cn),
    )


def tor_chain(subject_cn: str, issuer_cn: str, status=ValidationStatus.UNCHECKED):
    return CertificateChain(
        owner=ChainOwner.SERVER,
        certs_der=[b"der"],
        leaf=tor_leaf(subject_cn, issuer_cn),
        validation_status=status,
    )


def test_tor_predicate_positive():
    flow = make_flow(
        sni="www.x7ekq2mbp4.com",
        server_chain=tor_chain("www.x7ekq2mbp4.com", "www.qq1jrt55abf.net"),
    )
    assert tor_default_predicate(flow)


def test_tor_predicate_negatives():
    assert not tor_default_predicate(
        make_flow(sni="google.com", server_chain=tor_chain("google.com", "GTS CA 1C3"))
    )
    # subject shaped right but issuer identical
    assert not tor_default_predicate(
        make_flow(
            sni="www.x7ekq2mbp4.com",
            server_chain=tor_chain("www.x7ekq2mbp4.com", "www.x7ekq2mbp4.com"),
        )
    )
    # issuer not of the shape
    assert not tor_default_predicate(
        make_flow(
            sni="www.x7ekq2mbp4.com",
            server_chain=tor_chain("www.x7ekq2mbp4.com", "Totally Real CA"),
        )
    )
    # SNI and subject disagree
    assert not tor_default_predicate(
        make_flow(
            sni="www.x7ekq2mbp4.com",
            server_chain=tor_chain("www.aaaaaaaaaa.com", "www.bbbbbbbbbb.net"),
        )
    )
    # publicly valid chain never matches
    assert not tor_default_predicate(
        make_flow(
            sni="www.x7ekq2mbp4.com",
            server_chain=tor_chain(
                "www.x7ekq2mbp4.com", "www.qq1jrt55abf.net", ValidationStatus.VALID
            ),
        )
    )
    # too short / too long / wrong charset
    for host in ("www.short1.com", "www." + "a" * 17 + ".com", "www.UPPER_case1.com"):
        assert not tor_default_predicate(make_flow(sni=host))


def test_tor_predicate_abstains_without_evidence():
    bare = make_flow()
    bare.client.server_name = None
    assert not tor_default_predicate(bare)
    # SNI alone, chain hidden (1.3): shape match is enough
    assert tor_default_predicate(make_flow(sni="www.k3q09zzm1xq.com"))


# ---------------------------------------------------------------------------
# pipeline


def corpus():
    failed_70 = make_flow(established=False, alerts=[(2, 70)], sample_id="s1")
    failed_40 = make_flow(established=False, alerts=[(2, 40), (2, 70)], sample_id="s1")
    failed_quiet = make_flow(established=False, sample_id="s2")
    silent = make_flow(packets=[], sample_id="s2")
    benign = make_flow(
        packets=[("c", 100), ("s", 200)], sni="assets.twitter.com", sample_id="s3"
    )
    tor = make_flow(
        packets=[("c", 543), ("s", 543)],
        sni="www.p0q1r2s3t4u5.com",
        server_chain=tor_chain("www.p0q1r2s3t4u5.com", "www.zz9yy8xx7ww6.net"),
        sample_id="s3",
    )
    kept_a = make_flow(packets=[("c", 300), ("s", 4096)], sni="cdn.badsite.example", sample_id="s3")
    kept_b = make_flow(packets=[("c", 80), ("s", 80)], sample_id="s4")  # no SNI
    return [failed_70, failed_40, failed_quiet, silent, benign, tor, kept_a, kept_b]


def test_pipeline_stages_and_report():
    flows = corpus()
    benign_list = BenignDomainList.of(["twitter.com"], source_name="top-1")
    kept, report = filter_pipeline(flows, benign_list)

    assert [f.sample_id for f in kept] == ["s3", "s4"]
    assert report.input_flows == 8
    assert report.removed_not_established == 3
    assert report.removed_no_appdata == 1
    assert report.removed_benign_domain == 1
    assert report.removed_tor == 1
    assert report.remaining == 2
    assert report.input_samples == 4
    assert report.remaining_samples == 2
    assert report.alert_histogram == {70: 1, 40: 1}

    total_removed = (
        report.removed_not_established
        + report.removed_no_appdata
        + report.removed_benign_domain
        + report.removed_tor
    )
    assert report.input_flows == total_removed + report.remaining

    as_dict = report.as_dict()
    assert as_dict["alert_histogram"] == {"40": 1, "70": 1}


def test_pipeline_is_idempotent_on_kept_output():
    benign_list = BenignDomainList.of(["twitter.com"])
    kept, _ = filter_pipeline(corpus(), benign_list)
    again, report = filter_pipeline(kept, benign_list)
    assert again == kept
    assert report.remaining == report.input_flows


def test_tor_stage_can_be_disabled():
    benign_list = BenignDomainList.of(["twitter.com"])
    kept, report = filter_pipeline(corpus(), benign_list, tor_predicate=None)
    assert report.removed_tor == 0
    assert report.remaining == 3


def test_no_benign_list_skips_stage_three():
    kept, report = filter_pipeline(corpus())
    assert report.removed_benign_domain == 0
    assert any(
        f.client.server_name == "assets.twitter.com" for f in kept if f.client
    )


def test_conservation_on_fuzzed_corpora(rng):
    sni_pool = [
        None,
        "a.example.com",
        "www.twitter.com",
        "api.twitter.com",
        "www.m4lw4r3c2xx.com",
        "203.0.113.9",
    ]
    benign_list = BenignDomainList.of(["twitter.com", "example.com"])
    for _ in range(50):
        flows = []
        for _ in range(rng.randint(0, 40)):
            established = rng.random() < 0.7
            flow = make_flow(
                established=established,
                packets=[("c", 10)] if rng.random() < 0.7 else [],
                sni=rng.choice(sni_pool),
                sample_id=f"s{rng.randint(0, 5)}",
                alerts=[(2, rng.choice([40, 70]))] if rng.random() < 0.3 else [],
            )
            flows.append(flow)
        kept, report = filter_pipeline(flows, benign_list)
        removed = (
            report.removed_not_established
            + report.removed_no_appdata
            + report.removed_benign_domain
            + report.removed_tor
        )
        assert report.input_flows == len(flows) == removed + report.remaining
        assert report.remaining == len(kept)
        assert sum(report.alert_histogram.values()) <= report.removed_not_established
        assert not any(not f.has_appdata for f in kept)

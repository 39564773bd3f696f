"""Smoke tests for the python module: one pass over each major operation."""

import os
import tempfile

import pytest

import umgr

T0 = 1767225600  # 2026-01-01T00:00:00Z


def physician_ctx():
    drkim = umgr.Subject("drkim", "Dr. Kim", ["physician"])
    return umgr.make_context(drkim, "physician", T0, "hospital", "certified")


def build_record(log):
    ctx = physician_ctx()
    record = umgr.Record("R1", "alice")
    record = umgr.append_fact(
        record, umgr.Fact("f1", "lab_marker", "drkim", "physician", T0, "chol 212"),
        ctx, log)
    record = umgr.append_fact(
        record, umgr.Fact("f2", "psychiatric", "drkim", "physician", T0, "note"),
        ctx, log)
    return record


def test_record_roundtrip_and_role_guard():
    log = umgr.AuditLog()
    record = build_record(log)
    assert record.version == 2
    assert len(umgr.current_facts(record)) == 2
    assert len(log) == 2
    assert log.verify() is None

    alice = umgr.Subject("alice", "Alice")
    patient = umgr.make_context(alice, "patient", T0, "home", "mobile")
    with pytest.raises(umgr.UmgrError):
        umgr.append_fact(
            record,
            umgr.Fact("f3", "prescription", "alice", "patient", T0, "self-rx"),
            patient, log)


def test_policy_parse_render_evaluate():
    policy = umgr.parse_policy(
        "permit read to researcher scope lab_marker when DeviceType = certified "
        "price 2.50\n"
        "deny read to employer\n")
    assert len(policy) == 2
    again = umgr.parse_policy(policy.text)
    assert again.text == policy.text

    ria = umgr.Subject("ria", "Ria", ["researcher"])
    ctx = umgr.make_context(ria, "researcher", T0, "lab", "certified")
    decision = umgr.evaluate(policy, "read", ["lab_marker"], ctx, T0)
    assert decision["outcome"] == "permit"
    assert decision["price"] == "2.50"

    mobile = umgr.make_context(ria, "researcher", T0, "lab", "mobile")
    assert umgr.evaluate(policy, "read", ["lab_marker"], mobile, T0)["outcome"] == "deny"

    statics, dynamics = umgr.classify_clauses(policy)
    assert len(statics) == 1 and len(dynamics) == 1


def test_bundle_flow():
    log = umgr.AuditLog()
    record = build_record(log)
    fr = umgr.apply_filter(record, umgr.Filter("f-labs", ["lab_marker"]))
    assert fr.categories == ["lab_marker"]

    policy = umgr.parse_policy(
        "permit read to researcher scope lab_marker", "POL-1", "alice")
    bundle = umgr.issue_bundle(fr, policy, "alice", "ria", T0, log)
    assert bundle.consumer == "ria"
    assert len(bundle.digest()) == 64
    assert "[provenance]" in bundle.document()
    assert "psychiatric" not in bundle.document()

    ria = umgr.Subject("ria", "Ria", ["researcher"])
    ctx = umgr.make_context(ria, "researcher", T0, "lab", "desktop")
    decision = umgr.request_use(bundle, "read", ["lab_marker"], ctx, T0, log)
    assert decision["outcome"] == "permit"
    assert umgr.request_use(bundle, "read", ["psychiatric"], ctx, T0, log)["outcome"] == "deny"


def test_negotiation_and_compensation():
    log = umgr.AuditLog()
    record = build_record(log)
    terms = umgr.parse_policy(
        "permit read to researcher scope lab_marker\n"
        "permit aggregate to researcher scope lab_marker",
        "POL-n", "alice")
    session = umgr.open_session("alice", "ria", "R1", ["lab_marker"], terms, "4.00")
    done = umgr.run_automated(session, producer_reserve="9.00", consumer_start="4.00",
                              consumer_step="1.00", consumer_limit="12.00")
    assert done.state == "Agreed"
    assert done.agreed_price == "9.00"

    bundle = umgr.conclude_to_bundle(done, record, T0, log)
    b2 = umgr.conclude_to_bundle(done, record, T0 + 60, log)

    ria = umgr.Subject("ria", "Ria", ["researcher"])
    ctx = umgr.make_context(ria, "researcher", T0, "lab", "desktop")
    agg = umgr.aggregate([bundle, b2], "read", ctx, T0, log)
    comp = umgr.attribute_compensation(agg, "7.77", log)
    cents = sum(int(a.replace(".", "")) for _, a in comp)
    assert cents == 777
    assert log.verify() is None


def test_scenario_determinism(tmp_path):
    fixtures = os.environ.get("UMGR_FIXTURES")
    if not fixtures:
        pytest.skip("UMGR_FIXTURES not set")
    t1 = umgr.run_scenario("employer_monitoring", fixtures, str(tmp_path / "s1"), seed=2)
    t2 = umgr.run_scenario("employer_monitoring", fixtures, str(tmp_path / "s2"), seed=2)
    assert t1 == t2
    assert "psychiatric read: deny" in t1

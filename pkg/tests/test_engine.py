import json
import math

import pytest

from conftest import alice_bob_contest, alice_bob_cvrs
from oracles import alpha_stopping_round
from noncesuch.election import CVR, BallotCard, Contest, Election
from noncesuch.engine import (
    ALL_CONFIRMED,
    FULL_HAND_COUNT,
    IN_PROGRESS,
    Audit,
    AuditConfig,
    MissingMVR,
    plain_overstatement_stream,
    read_card,
    run_audit,
)
from noncesuch.generate import generate_election
from noncesuch.reconciliation import pre_audit_checks
from noncesuch.retrieval import NO_CARD, Retriever, make_retriever
from noncesuch.risk import WITH_REPLACEMENT

BOB = "mayor: Bob beats Alice"


def audit_for(election, **cfg):
    return Audit(pre_audit_checks(election), AuditConfig(seed=cfg.pop("seed", "1"), **cfg), len(election.cards))


def index_of(audit, cvr_id):
    return next(i for i, c in enumerate(audit.plan.cvrs) if c.id == cvr_id)


def test_draws_are_reproducible(honest_election):
    a, b = audit_for(honest_election, seed="314"), audit_for(honest_election, seed="314")
    assert [a.draw_id() for _ in range(3)] == [b.draw_id() for _ in range(3)]
    with pytest.raises(LookupError):
        a.draw_id()


def test_single_cvr():
    c = Contest("c", ("A", "B"), ("A",), card_upper_bound=1)
    e = Election((c,), (CVR("only", {"c": "A"}),), (BallotCard(0, "only", {"c": "A"}),))
    assert audit_for(e).draw_id() == "only"


def test_with_replacement_uniformity(honest_election):
    a = audit_for(honest_election, scheme=WITH_REPLACEMENT)
    n = 100_000
    counts = {}
    for _ in range(n):
        i = a.draw_id()
        counts[i] = counts.get(i, 0) + 1
    sd = math.sqrt(n * (1 / 3) * (2 / 3))
    assert set(counts) == {"17", "91", "202"}
    for k in counts.values():
        assert abs(k - n / 3) <= 3 * sd


def test_honest_draw_gives_honest_value(honest_election):
    a = audit_for(honest_election)
    r = Retriever(honest_election.cards, honest_election.cvrs)
    # the third draw would retrieve the last card, which ends the audit
    for _ in range(2):
        rec = a.step(r, read_card)
        ((L, _),) = rec.values.values()
        assert L == pytest.approx(a.assertions["mayor"][0].honest_value)
    assert a.step(r, read_card) is None
    assert a.verdict == FULL_HAND_COUNT and a.reason == "all cards retrieved"


def test_attack_draw_202(attack_election):
    a = audit_for(attack_election)
    r = Retriever(attack_election.cards, attack_election.cvrs)
    idx = index_of(a, "202")
    result, mvr, hit = a.retrieve(idx, r, read_card)
    assert result.outcome == NO_CARD and not hit
    rec = a.process_draw(idx, result, mvr, hit)
    L, risk = rec.values[BOB]
    assert L == 0
    assert a.tests[BOB].t < 1 and risk == 1


def test_repeat_request_uses_cache(attack_election):
    a = audit_for(attack_election, scheme=WITH_REPLACEMENT)
    r = Retriever(attack_election.cards, attack_election.cvrs)
    idx = index_of(a, "17")
    first = a.retrieve(idx, r, read_card)
    second = a.retrieve(idx, r, read_card)
    assert len(r.history) == 1
    assert second[2] and second[0] == first[0]


def test_attack_escalates_and_reveals_alice(attack_election):
    audit = run_audit(attack_election, AuditConfig("5", scheme=WITH_REPLACEMENT, max_draws=20), Retriever(attack_election.cards))
    assert audit.verdict == FULL_HAND_COUNT
    hc = audit.report()["hand_count"]["mayor"]
    assert hc["winners"] == ["Alice"] and not hc["reported_outcome_correct"]


def test_honest_large_matches_oracle():
    e = generate_election({"candidates": ["A", "B"], "n_cards": 10_000, "true_tallies": {"A": 6000, "B": 4000}}, "s1")
    expected = alpha_stopping_round(1 / 1.8, 2 / 1.8, 10_000, 0.05)
    for seed in ("s1", "2"):
        audit = run_audit(e, AuditConfig(seed), make_retriever(None, e.cards, e.cvrs))
        assert audit.verdict == ALL_CONFIRMED
        assert audit.draws == expected


def test_withhold_all_never_confirms():
    e = generate_election({"candidates": ["A", "B"], "n_cards": 500, "margin": 0.2}, "3")
    r = make_retriever({"kind": "withhold"}, e.cards, e.cvrs)
    audit = run_audit(e, AuditConfig("3", max_draws=200), r)
    assert audit.verdict == FULL_HAND_COUNT and audit.draws == 200
    assert "max_draws" in audit.reason


def test_reported_loser_full_count_before_draws(honest_election):
    e = Election((alice_bob_contest("Alice"),), honest_election.cvrs, honest_election.cards)
    audit = run_audit(e, AuditConfig("1"), Retriever(e.cards))
    assert audit.verdict == FULL_HAND_COUNT and audit.draws == 0
    assert "did not win" in audit.reason


def test_phantom_draw():
    c = alice_bob_contest(n_cards=4)
    cvrs = alice_bob_cvrs()
    cards = tuple(BallotCard(i, x.id, dict(x.votes)) for i, x in enumerate(cvrs)) + (BallotCard(3, None, {"mayor": "Bob"}),)
    e = Election((c,), cvrs, cards)
    a = audit_for(e)
    idx = next(i for i, x in enumerate(a.plan.cvrs) if x.phantom)
    result, mvr, _ = a.retrieve(idx, Retriever(cards), read_card)
    assert result is None
    rec = a.process_draw(idx, result, mvr)
    v = a.margins[BOB]
    assert rec.outcome == "phantom"
    assert rec.values[BOB][0] == pytest.approx(0.5 / (2 - v))


def test_missing_mvr_names_draw(honest_election):
    calls = []

    def flaky(card):
        calls.append(card)
        return None if len(calls) == 2 else card.true_votes

    with pytest.raises(MissingMVR, match="draw 2"):
        run_audit(honest_election, AuditConfig("1", max_draws=3), Retriever(honest_election.cards), flaky)


def test_max_draws_over_population(honest_election):
    with pytest.raises(ValueError, match="exceeds"):
        audit_for(honest_election, max_draws=4)


def test_confirmation_is_monotone():
    # two contests on the same cards; the wide-margin one confirms first
    x = Contest("X", ("a", "b"), ("a",), card_upper_bound=400)
    y = Contest("Y", ("c", "d"), ("c",), card_upper_bound=400)
    cvrs, cards = [], []
    for i in range(400):
        votes = {"X": "a" if i % 10 else "b", "Y": "c" if i % 20 < 11 else "d"}
        cvrs.append(CVR(f"{i:04d}", votes))
        # a few Y overstatements on the cards
        true = dict(votes, Y="d") if i % 50 == 0 else dict(votes)
        cards.append(BallotCard(i, f"{i:04d}", true))
    e = Election((x, y), tuple(cvrs), tuple(cards))
    a = audit_for(e)
    r = Retriever(cards)
    seen: dict[str, bool] = {}
    while a.verdict == IN_PROGRESS:
        a.step(r, read_card)
        for label, ok in a.confirmed.items():
            assert ok or not seen.get(label, False)
            seen[label] = ok
    assert a.contest_confirmed["X"]
    assert a.tests["X: a beats b"].j < a.draws


def test_log_and_report(tmp_path, honest_election):
    audit = run_audit(honest_election, AuditConfig("9"), Retriever(honest_election.cards))
    audit.write_log(tmp_path / "draws.jsonl")
    lines = [json.loads(x) for x in (tmp_path / "draws.jsonl").read_text().splitlines()]
    assert len(lines) == audit.draws
    assert set(lines[0]) == {"draw", "id", "cvr_index", "outcome", "cache_hit", "assertions"}
    assert set(lines[0]["assertions"][BOB]) == {"L", "risk"}
    rep = audit.report()
    assert rep["verdict"] == audit.verdict and rep["total_draws"] == audit.draws
    assert rep["assertions"][BOB]["upper_bound"] == pytest.approx(1.2)
    assert rep["reconciliation"][0]["action"] == "none"
    assert AuditConfig.from_dict(rep["config"]) == audit.config


def test_l_stream_matches_plain_stream():
    e = generate_election({"candidates": ["A", "B"], "n_cards": 300, "margin": 0.3, "error_rate": 0.02}, "4")
    audit = run_audit(e, AuditConfig("4"), make_retriever(None, e.cards, e.cvrs))
    plain = plain_overstatement_stream(audit, {c.imprinted_id: c for c in e.cards})
    assert [{k: L for k, (L, _) in rec.values.items()} for rec in audit.log] == plain


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        AuditConfig("")
    with pytest.raises(ValueError):
        AuditConfig("1", scheme="sometimes")
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"seed": "42", "scheme": "with_replacement", "max_draws": 10, "estimator": {"eta0": "auto", "d": 50}}))
    cfg = AuditConfig.load(p)
    assert cfg.seed == "42" and cfg.max_draws == 10 and cfg.estimator.d == 50

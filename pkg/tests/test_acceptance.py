"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run just this file with ``pytest tests/test_acceptance.py -v -s`` to see the
lines as they are produced; they are also repeated in the terminal summary.
"""

import hashlib
import itertools
import math
import random
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import alice_bob_attack_cards, alice_bob_contest, alice_bob_cvrs, record_criterion
from oracles import alpha_stopping_round, card_sampling_audit
from noncesuch.assorters import (
    OverstatementAssorter,
    assertion_set,
    exceeds_half,
    overstatement_value,
    plurality_assorters,
)
from noncesuch.election import CVR, OVERVOTE, UNDERVOTE, BallotCard, Contest, Election
from noncesuch.engine import ALL_CONFIRMED, AuditConfig, plain_overstatement_stream, run_audit
from noncesuch.generate import generate_election
from noncesuch.prng import derive_prng
from noncesuch.reconciliation import FullCount, add_phantoms, pre_audit_checks, shrink_cvrs
from noncesuch.retrieval import (
    Retriever,
    Scripted,
    canonical_pi,
    classify_retrieval,
    lower_bound_L,
    make_retriever,
    paired_values,
)
from noncesuch.risk import WITH_REPLACEMENT, alpha_risk_paths
from noncesuch.simulate import ExperimentSpec, run_experiment

ALPHA = 0.05


def rate_bound(alpha, n):
    return alpha + 3 * math.sqrt(alpha * (1 - alpha) / n)


# ---------------------------------------------------------------------------
# 1


def random_election(rng, max_n=12, max_c=4):
    """Random plurality election whose reported winners are the CVR top-K with positive margins."""
    while True:
        n = int(rng.integers(1, max_n + 1))
        c = int(rng.integers(2, max_c + 1))
        k = int(rng.integers(1, c))
        cands = tuple(f"k{i}" for i in range(c))
        choices = list(cands) + [UNDERVOTE, OVERVOTE]
        cvr_votes = [choices[i] for i in rng.integers(0, len(choices), n)]
        card_votes = [choices[i] for i in rng.integers(0, len(choices), n)]
        counts = {x: cvr_votes.count(x) for x in cands}
        ranked = sorted(cands, key=lambda x: -counts[x])
        if k < c and counts[ranked[k - 1]] == counts[ranked[k]]:
            continue
        contest = Contest(
            "c", cands, tuple(ranked[:k]), social_choice="plurality" if k == 1 else "multiwinner_plurality"
        )
        ids = [f"{i}" for i in range(n)]
        imprint_pool = ids + [None, "foreign"]
        cvrs = tuple(CVR(ids[i], {"c": cvr_votes[i]}) for i in range(n))
        cards = tuple(
            BallotCard(i, imprint_pool[int(rng.integers(0, len(imprint_pool)))], {"c": card_votes[i]})
            for i in range(n)
        )
        try:
            oas = assertion_set(contest, cvrs)
        except ValueError:
            continue
        return cvrs, cards, oas


def test_criterion_1_permutation_invariance():
    rng = np.random.default_rng(1)
    worst = 0.0
    checks = 0
    for _ in range(1000):
        cvrs, cards, oas = random_election(rng)
        n = len(cvrs)
        for oa in oas:
            base = sum(paired_values(oa, cvrs, cards, range(n))) / n
            perms = [tuple(rng.permutation(n)) for _ in range(50)] + [canonical_pi(cvrs, cards, oa)]
            for pi in perms:
                worst = max(worst, abs(sum(paired_values(oa, cvrs, cards, pi)) / n - base))
                checks += 1
    ok = worst <= 1e-12
    record_criterion(1, "permutation invariance", ok, f"{checks} pairings over 1000 elections, max |diff| = {worst:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 2


def test_criterion_2_overstatement_equivalence():
    """Every 2-candidate election with N <= 6 cards and every selection state on
    CVRs and cards.  B is defined only when the CVR margin is positive; there the
    claim reduces to: cards say the winner won iff mean B > 1/2."""
    contest = Contest("c", ("A", "B"), ("A",))
    (assorter,) = plurality_assorters(contest)
    states = ["A", "B", UNDERVOTE, OVERVOTE]
    score = np.array([assorter.score({"c": s}) for s in states])
    counterexamples = 0
    checked = 0
    undefined = 0
    undefined_cards_win = 0
    for n in range(1, 7):
        vecs = np.array(list(itertools.product(range(len(states)), repeat=n)))
        card_scores = score[vecs]  # (4^n, n)
        card_means = card_scores.mean(axis=1)
        card_win = np.array([exceeds_half(m) for m in card_means])
        for row in vecs:
            cvr_scores = score[row]
            cvr_mean = cvr_scores.mean()
            v = 2 * cvr_mean - 1
            if not exceeds_half(cvr_mean):
                undefined += len(vecs)
                undefined_cards_win += int(card_win.sum())
                continue
            oa = OverstatementAssorter(assorter, v)
            b_means = oa.from_scores(cvr_scores[None, :], card_scores).mean(axis=1)
            b_win = np.array([exceeds_half(m) for m in b_means])
            counterexamples += int(np.sum(card_win != b_win))
            checked += len(vecs)
    ok = counterexamples == 0
    record_criterion(
        2,
        "overstatement equivalence",
        ok,
        f"{checked} (CVR, card) elections with CVR mean > 1/2, {counterexamples} counterexamples; "
        f"{undefined} with CVR mean <= 1/2 go to a full count before B is formed "
        f"({undefined_cards_win} of those have card mean > 1/2)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 3


def dominance_violations(cvrs, cards, oa):
    """Check L <= B^pi for every CVR and every card the retriever could hand back (or none).

    For CVRs whose id is on no card, L is also checked against the smallest B over
    all cards, which covers every way leftovers could be paired.
    """
    pi = canonical_pi(cvrs, cards, oa)
    bpi = paired_values(oa, cvrs, cards, pi)
    imprinted = {c.imprinted_id for c in cards}
    # cards with the same imprint and votes are interchangeable responses
    distinct = {(c.imprinted_id, tuple(sorted(c.true_votes.items()))): c for c in cards}
    responses = [None, *distinct.values()]
    bad = 0
    for i, cvr in enumerate(cvrs):
        bound = bpi[i]
        if cvr.id not in imprinted:
            bound = min(bound, min(overstatement_value(oa, cvr, c.true_votes) for c in cards))
        for card in responses:
            L = lower_bound_L(oa, cvr, classify_retrieval(cvr.id, card), None if card is None else card.true_votes)
            if L > bound + 1e-12:
                bad += 1
    return bad


def adaptive_chooser(seed):
    """Adaptive scripted policy: looks at the request history and picks among honest,
    least-favorable duplicate, random card, replay of an earlier card, or nothing."""
    rnd = random.Random(seed)

    def choose(requested_id, history, retriever):
        holders = retriever.by_imprint.get(requested_id, [])
        move = rnd.randrange(5)
        if move == 0 and holders:
            return holders[0].card_index
        if move == 1 and holders:
            cvr = retriever.cvrs.get(requested_id)
            return min(holders, key=lambda c: (c.true_votes == cvr.votes, -c.card_index)).card_index
        if move == 2:
            return rnd.choice(retriever.cards).card_index
        if move == 3 and history:
            prior = [idx for _, idx in history if idx is not None]
            if prior:
                return rnd.choice(prior)
        return None

    return choose


def test_criterion_3_L_dominance():
    contest = Contest("c", ("A", "B"), ("A",))
    (assorter,) = plurality_assorters(contest)
    sels = ["A", "B", UNDERVOTE]  # an overvote scores exactly like an undervote
    exhaustive = 0
    violations = 0
    for n in range(1, 6):
        ids = [str(i) for i in range(n)]
        imprint_options = [None, "foreign", *ids]
        card_types = list(itertools.product(sels, imprint_options))
        for cvr_votes in itertools.combinations_with_replacement(sels, n):
            cvrs = tuple(CVR(ids[i], {"c": cvr_votes[i]}) for i in range(n))
            mean = sum(assorter.score(c.votes) for c in cvrs) / n
            if not exceeds_half(mean):
                continue
            oa = OverstatementAssorter(assorter, 2 * mean - 1)
            for combo in itertools.combinations_with_replacement(card_types, n):
                cards = tuple(BallotCard(k, imp, {"c": vote}) for k, (vote, imp) in enumerate(combo))
                violations += dominance_violations(cvrs, cards, oa)
                exhaustive += 1

    rng = np.random.default_rng(3)
    trials = 0
    random_violations = 0
    n = 50
    ids = [f"{i:03d}" for i in range(n)]
    for e in range(2000):
        while True:
            cvr_votes = [sels[i] for i in rng.integers(0, 3, n)]
            mean = sum(assorter.score({"c": x}) for x in cvr_votes) / n
            if exceeds_half(mean):
                break
        cvrs = tuple(CVR(ids[i], {"c": cvr_votes[i]}) for i in range(n))
        oa = OverstatementAssorter(assorter, 2 * mean - 1)
        cards = []
        for k in range(n):
            u = rng.random()
            imp = ids[int(rng.integers(0, n))] if u < 0.6 else (None if u < 0.8 else f"x{k}")
            cards.append(BallotCard(k, imp, {"c": sels[int(rng.integers(0, 3))]}))
        cards = tuple(cards)
        bpi = paired_values(oa, cvrs, cards, canonical_pi(cvrs, cards, oa))
        retriever = Scripted(cards, cvrs, choose_fn=adaptive_chooser(e))
        for r in rng.integers(0, n, 50):
            cvr = cvrs[int(r)]
            card = retriever.retrieve(cvr.id)
            L = lower_bound_L(oa, cvr, classify_retrieval(cvr.id, card), None if card is None else card.true_votes)
            random_violations += L > bpi[int(r)] + 1e-12
            trials += 1
    ok = violations == 0 and random_violations == 0
    record_criterion(
        3,
        "L dominance",
        ok,
        f"exhaustive N<=5: {exhaustive} configurations, {violations} violations; "
        f"randomized N=50 adaptive: {trials} requests, {random_violations} violations",
    )
    assert ok


# ---------------------------------------------------------------------------
# 4


def test_criterion_4_attack_reproduction():
    contest, cvrs, cards = alice_bob_contest(), alice_bob_cvrs(), alice_bob_attack_cards()
    election = Election((contest,), cvrs, cards)

    # (a) sampling cards: every card, then 10,000 random card draws
    prng = derive_prng("4", "card-sampling")
    card_draws = list(range(len(cards))) + [prng.randbelow(len(cards)) for _ in range(10_000)]
    mismatches = card_sampling_audit(cvrs, cards, "mayor", card_draws)

    # (b) sampling CVR ids with replacement
    trials = 10_000
    plan = pre_audit_checks(election)
    rows = []
    ok_b = True
    for n in (1, 3, 5, 10):
        detected = 0
        for t in range(trials):
            config = AuditConfig("4", scheme=WITH_REPLACEMENT, max_draws=n, stream=f"n{n}:trial{t}")
            audit = run_audit(election, config, Retriever(cards, cvrs), plan=plan)
            detected += any(rec.outcome == "no_card" for rec in audit.log)
        p = 1 - (2 / 3) ** n
        sd = math.sqrt(p * (1 - p) / trials)
        freq = detected / trials
        good = abs(freq - p) <= 3 * sd
        ok_b &= good
        rows.append(f"n={n}: {freq:.4f} vs {p:.4f}")
    ok = mismatches == 0 and ok_b
    record_criterion(
        4,
        "attack reproduction",
        ok,
        f"card sampling: {mismatches} mismatches in {len(card_draws)} draws; id sampling detection " + ", ".join(rows),
    )
    assert ok


# ---------------------------------------------------------------------------
# 5

WRONG_OUTCOME = {
    "candidates": ["A", "B"],
    "n_cards": 1000,
    "true_tallies": {"A": 500, "B": 500},
    "flips": [{"from": "B", "to": "A", "count": 50}],
    "risk_limit": ALPHA,
}


@pytest.mark.slow
def test_criterion_5_risk_limit():
    reps = 10_000
    scenarios = [
        {"name": "honest", "election": WRONG_OUTCOME, "adversary": {"kind": "honest"}},
        {"name": "duplicate_exploit", "election": dict(WRONG_OUTCOME, imprint="attack"), "adversary": {"kind": "duplicate_exploit"}},
        {"name": "withhold", "election": WRONG_OUTCOME, "adversary": {"kind": "withhold", "params": {"target": "mismatched"}}},
        {"name": "wrong_card", "election": WRONG_OUTCOME, "adversary": {"kind": "wrong_card", "params": {"target": "mismatched"}}},
    ]
    spec = ExperimentSpec.from_dict({"seed": "5", "reps": reps, "alpha": ALPHA, "scenarios": scenarios})
    for s in spec.scenarios:
        e = generate_election(dict(s.election), f"{spec.seed}:{s.name}")
        cards_mean = sum(c.true_votes["contest"] == "A" for c in e.cards) / len(e.cards)
        assert cards_mean <= 0.5  # the reported winner really did not win
    records = run_experiment(spec, jobs=1)
    bound = rate_bound(ALPHA, reps)
    rates = {}
    for s in spec.scenarios:
        recs = [r for r in records if r["scenario"] == s.name]
        assert len(recs) == reps
        rates[s.name] = sum(r["verdict"] == ALL_CONFIRMED for r in recs) / reps
    ok = all(r <= bound for r in rates.values())
    record_criterion(
        5,
        "risk limit",
        ok,
        ", ".join(f"{k} {v:.4f}" for k, v in rates.items()) + f" (bound {bound:.4f}, {reps} audits each)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 6


def test_criterion_6_adaptivity():
    e = generate_election({"candidates": ["A", "B"], "n_cards": 10_000, "margin": 0.2}, "6")
    (oa,) = pre_audit_checks(e).assertions["contest"]
    assert oa.margin == pytest.approx(0.2, abs=1e-12)
    expected = alpha_stopping_round(oa.honest_value, oa.upper_bound, 10_000, ALPHA)
    by_imprint = {c.imprinted_id: c for c in e.cards}
    details = []
    ok = True
    for seed in ("1", "6", "20241105", "99999", "31337"):
        audit = run_audit(e, AuditConfig(seed), make_retriever(None, e.cards, e.cvrs))
        L_stream = [{k: L for k, (L, _) in rec.values.items()} for rec in audit.log]
        same_stream = L_stream == plain_overstatement_stream(audit, by_imprint)
        same_round = audit.verdict == ALL_CONFIRMED and audit.draws == expected
        ok &= same_stream and same_round
        details.append(f"seed {seed}: {audit.draws} draws, streams equal={same_stream}")
    record_criterion(6, "adaptivity", ok, f"oracle stopping round {expected}; " + "; ".join(details))
    assert ok


# ---------------------------------------------------------------------------
# 7


def test_criterion_7_alpha_null_validity():
    reps, N = 10_000, 1000
    # 800 honest values, 40 at one half, 160 two-vote overstatements: mean exactly 1/2
    pop = np.array([0.6] * 800 + [0.5] * 40 + [0.0] * 160)
    assert math.fsum(pop) == 500.0
    rng = np.random.default_rng(7)
    x = np.stack([rng.permutation(pop) for _ in range(reps)])
    risks = alpha_risk_paths(x, 1.2, N)
    rate = float((risks.min(axis=1) <= ALPHA).mean())
    bound = rate_bound(ALPHA, reps)
    ok = rate <= bound
    record_criterion(7, "ALPHA null validity", ok, f"anytime rejection rate {rate:.4f} (bound {bound:.4f})")
    assert ok


# ---------------------------------------------------------------------------
# 8


def test_criterion_8_reconciliation():
    label = "mayor: Bob beats Alice"
    results = []

    # N_c > N_b: the contest comes off the CVR latest in id order, a loser vote
    cvrs = [CVR(i, {"mayor": v}) for i, v in [("17", "Alice"), ("202", "Bob"), ("91", "Bob"), ("93", "Bob"), ("99", "Alice")]]
    out, rep = shrink_cvrs(alice_bob_contest(n_cards=4), cvrs, 4)
    results.append(sum(c.has_contest("mayor") for c in out) == 4 and abs(rep.post_cvr_means[label] - 0.75) <= 1e-12)

    # N_c < N_b: one phantom, mean 5/6, margin 2/3
    cvrs = [CVR("1", {"mayor": "Bob"}), CVR("2", {"mayor": "Bob"})]
    out, rep = add_phantoms(alice_bob_contest(), cvrs, 3)
    plan = pre_audit_checks(Election((alice_bob_contest(),), tuple(cvrs)))
    v = plan.assertions["mayor"][0].margin
    results.append(len(out) == 3 and plan.population_size("mayor") == 3 and abs(v - 2 / 3) <= 1e-12)

    # removal leaves the mean at exactly 1/2: full count
    cvrs = (CVR("1", {"mayor": "Bob"}), CVR("2", {"mayor": "Alice"}), CVR("9", {"mayor": "Bob"}))
    verdict = pre_audit_checks(Election((alice_bob_contest(n_cards=2),), cvrs))
    results.append(isinstance(verdict, FullCount))

    ok = all(results)
    record_criterion(
        8,
        "reconciliation",
        ok,
        f"shrink to N_b ok={results[0]}, phantoms v={v:.6f} ok={results[1]}, boundary full count={results[2]}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 9

# SHA-256 of the outputs of one gen + audit + simulate pipeline; these must be the
# same on every platform
GOLDEN = {
    "el/cards.json": "d1de382d47d8a7fe9ffe4b449668b20835026909488a7f847dd374b1513c87a4",
    "el/contests.json": "282cf36d82494347b40c8672a8c6facf488badf24069ec912d7aaad675b3710e",
    "el/cvrs.json": "0bc2b2d82c202b058a1b1c3cbdceb3a66cda7b54ec54788f9f97b105a795ab90",
    "el/manifest.csv": "5775ab07f5b4bdcba82b3afeb42a2f1c7d347997d0acaa3a7958fbaeee3ccf65",
    "audit/draws.jsonl": "c0fad29948db2bd84f0802ee78ce82de4af9bda6e5757c12ee431cff5ee93f5c",
    "audit/report.json": "066e51246b398a686371e36e4a77f731276ee0b0b280c9c73930078764e28ebe",
    "sim/replications.jsonl": "c2ab6699cb2d7f84d7f714efaf0dc37cc3dd39b99721b9685f600ca4f0176a23",
    "sim/summary.csv": "cb0cd08f844bb2e7d0168cdd503c192f387ba929d58ea286e053c9a534454fba",
    "sim/summary.json": "14ed2a8bffeaa17e0dbecbbce33b71d5ba47816de73f5b4c157854c3e19b5e70",
}

GEN_SPEC = '{"seed": "909", "election": {"candidates": ["A", "B", "C"], "n_cards": 2000, "true_tallies": {"A": 900, "B": 700, "C": 300}, "error_rate": 0.01}}'
SIM_SPEC = (
    '{"seed": "909", "reps": 20, "alpha": 0.05, "scenarios": ['
    '{"name": "close", "election": {"candidates": ["A", "B"], "n_cards": 500, "margin": 0.1, "error_rate": 0.01}},'
    '{"name": "attack", "election": {"candidates": ["A", "B"], "n_cards": 300, "true_tallies": {"A": 150, "B": 150},'
    ' "flips": [{"from": "B", "to": "A", "count": 15}], "imprint": "attack"}, "adversary": {"kind": "duplicate_exploit"}}]}'
)


def pipeline(workdir: Path) -> dict[str, str]:
    workdir.mkdir(parents=True)
    (workdir / "gen.json").write_text(GEN_SPEC)
    (workdir / "sim.json").write_text(SIM_SPEC)

    def run(*args):
        proc = subprocess.run([sys.executable, "-m", "noncesuch", *args], cwd=workdir, capture_output=True, text=True)
        assert proc.returncode in (0, 2), proc.stderr

    run("gen", "--spec", "gen.json", "--out", "el")
    run("audit", "--contests", "el/contests.json", "--cvrs", "el/cvrs.json", "--manifest", "el/manifest.csv",
        "--cards", "el/cards.json", "--seed", "271828", "--out", "audit")
    run("simulate", "--spec", "sim.json", "--jobs", "2", "--out", "sim")
    return {name: hashlib.sha256((workdir / name).read_bytes()).hexdigest() for name in GOLDEN}


def test_criterion_9_determinism(tmp_path):
    first = pipeline(tmp_path / "run1")
    second = pipeline(tmp_path / "run2")
    identical = first == second
    matches_golden = first == GOLDEN
    ok = identical and matches_golden
    record_criterion(
        9,
        "determinism",
        ok,
        f"two runs byte-identical={identical} over {len(first)} files; frozen digests match={matches_golden}",
    )
    assert ok, {k: first[k] for k in first}

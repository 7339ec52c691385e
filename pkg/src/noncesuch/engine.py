"""The audit loop: draw CVR ids, retrieve cards, compute L, update risks, confirm or escalate."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from noncesuch.assorters import OverstatementAssorter, contest_assorters, exceeds_half, overstatement_value
from noncesuch.election import (
    MULTIWINNER_PLURALITY,
    PLURALITY,
    BallotCard,
    Contest,
    Election,
    VoteRecord,
)
from noncesuch.prng import HashPRNG, derive_prng
from noncesuch.reconciliation import AuditPlan, FullCount, pre_audit_checks
from noncesuch.retrieval import (
    CARD_WITH_REQUESTED_ID,
    RetrievalResult,
    Retriever,
    classify_retrieval,
    lower_bound_L,
)
from noncesuch.risk import SCHEMES, WITHOUT_REPLACEMENT, AlphaMart, ShrinkTrunc

log = logging.getLogger(__name__)

IN_PROGRESS = "in_progress"
ALL_CONFIRMED = "all_confirmed"
FULL_HAND_COUNT = "full_hand_count"

PHANTOM = "phantom"

MVRProvider = Callable[[BallotCard], Optional[VoteRecord]]


class MissingMVR(LookupError):
    def __init__(self, draw: int, requested_id: str):
        super().__init__(f"draw {draw}: no manual-vote record for the card retrieved for id {requested_id!r}")
        self.draw = draw
        self.requested_id = requested_id


@dataclass(frozen=True)
class AuditConfig:
    seed: str
    scheme: str = WITHOUT_REPLACEMENT
    max_draws: Optional[int] = None
    estimator: ShrinkTrunc = field(default_factory=ShrinkTrunc)
    stream: str = "audit"

    def __post_init__(self):
        if not isinstance(self.seed, str) or not self.seed:
            raise ValueError("seed must be a nonempty decimal string")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.max_draws is not None and self.max_draws < 0:
            raise ValueError("max_draws must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scheme": self.scheme,
            "max_draws": self.max_draws,
            "estimator": self.estimator.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AuditConfig":
        if "seed" not in d:
            raise ValueError("audit config: missing field 'seed'")
        md = d.get("max_draws")
        return cls(
            seed=str(d["seed"]),
            scheme=d.get("scheme", WITHOUT_REPLACEMENT),
            max_draws=None if md is None else int(md),
            estimator=ShrinkTrunc.from_dict(d.get("estimator", {})),
        )

    @classmethod
    def load(cls, path: Path | str) -> "AuditConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class DrawRecord:
    draw: int
    cvr_index: int
    id: Optional[str]
    outcome: str
    cache_hit: bool
    values: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "draw": self.draw,
            "id": self.id,
            "cvr_index": self.cvr_index,
            "outcome": self.outcome,
            "cache_hit": self.cache_hit,
            "assertions": {k: {"L": L, "risk": r} for k, (L, r) in self.values.items()},
        }


class Audit:
    """State of one audit run.

    Built from the output of ``pre_audit_checks``; a FullCount there gives an
    audit that is already over.  ``pile_size`` is the number of physical
    cards when it is known (simulation); retrieving all of them ends the audit.
    """

    def __init__(
        self,
        plan: AuditPlan | FullCount,
        config: AuditConfig,
        pile_size: Optional[int] = None,
        keep_log: bool = True,
    ):
        self.config = config
        self.keep_log = keep_log
        self.pile_size = pile_size
        self.log: list[DrawRecord] = []
        self.cache: dict[str, tuple[RetrievalResult, Optional[VoteRecord]]] = {}
        self.retrieved_cards: set[int] = set()
        self.draws = 0
        self.hand_count: Optional[dict] = None
        self.rng: HashPRNG = derive_prng(config.seed, config.stream)
        self.tests: dict[str, AlphaMart] = {}
        self.confirmed: dict[str, bool] = {}
        self.contest_confirmed: dict[str, bool] = {}
        self.margins: dict[str, float] = {}
        if isinstance(plan, FullCount):
            self.plan = None
            self.reports = plan.reports
            self.verdict, self.reason = FULL_HAND_COUNT, plan.reason
            return
        self.plan = plan
        self.reports = plan.reports
        self.verdict, self.reason = IN_PROGRESS, ""
        self.risk_limits = {c.contest_id: c.risk_limit for c in plan.contests}
        self.assertions: dict[str, list[OverstatementAssorter]] = plan.assertions
        for c in plan.contests:
            n = plan.population_size(c.contest_id)
            for oa in plan.assertions[c.contest_id]:
                self.tests[oa.label] = AlphaMart(oa.upper_bound, n, config.scheme, config.estimator)
                self.confirmed[oa.label] = False
                self.margins[oa.label] = oa.margin
            self.contest_confirmed[c.contest_id] = False
        n_cvrs = len(plan.cvrs)
        if config.scheme == WITHOUT_REPLACEMENT and config.max_draws is not None and config.max_draws > n_cvrs:
            raise ValueError(f"max_draws {config.max_draws} exceeds the {n_cvrs} CVRs")
        self._remaining = list(range(n_cvrs))
        self._drawn: set[int] = set()
        if not self.assertions or all(not v for v in self.assertions.values()):
            self.verdict = ALL_CONFIRMED

    # -- sampling

    def draw_index(self) -> Optional[int]:
        """Next CVR position, or None when the population is exhausted."""
        if self.verdict != IN_PROGRESS:
            raise RuntimeError(f"audit is over: {self.verdict}")
        if self.config.scheme == WITHOUT_REPLACEMENT:
            if not self._remaining:
                return None
            r = self.rng.randbelow(len(self._remaining))
            idx = self._remaining[r]
            self._remaining[r] = self._remaining[-1]
            self._remaining.pop()
        else:
            idx = self.rng.randbelow(len(self.plan.cvrs))
        self._drawn.add(idx)
        return idx

    def draw_id(self) -> Optional[str]:
        """Draw a CVR and return its id (None for a phantom)."""
        idx = self.draw_index()
        if idx is None:
            raise LookupError("population exhausted")
        return self.plan.cvrs[idx].id

    # -- one draw

    def retrieve(
        self, idx: int, retriever: Retriever, mvr_provider: MVRProvider
    ) -> tuple[Optional[RetrievalResult], Optional[VoteRecord], bool]:
        cvr = self.plan.cvrs[idx]
        if cvr.phantom or cvr.id is None:
            return None, None, False
        if cvr.id in self.cache:
            result, mvr = self.cache[cvr.id]
            return result, mvr, True
        try:
            returned = retriever.retrieve(cvr.id)
        except MissingMVR:
            raise MissingMVR(self.draws + 1, cvr.id) from None
        result = classify_retrieval(cvr.id, returned)
        mvr = None
        if result.outcome == CARD_WITH_REQUESTED_ID:
            mvr = mvr_provider(result.card)
            if mvr is None:
                raise MissingMVR(self.draws + 1, cvr.id)
        if result.card is not None:
            self.retrieved_cards.add(result.card.card_index)
        self.cache[cvr.id] = (result, mvr)
        return result, mvr, False

    def process_draw(
        self,
        idx: int,
        result: Optional[RetrievalResult],
        mvr: Optional[VoteRecord],
        cache_hit: bool = False,
    ) -> DrawRecord:
        if self.verdict != IN_PROGRESS:
            raise RuntimeError(f"audit is over: {self.verdict}")
        cvr = self.plan.cvrs[idx]
        self.draws += 1
        outcome = PHANTOM if result is None else result.outcome
        record = DrawRecord(self.draws, idx, cvr.id, outcome, cache_hit)
        for cid in cvr.votes:
            if self.contest_confirmed.get(cid, True):
                continue
            for oa in self.assertions[cid]:
                if self.confirmed[oa.label]:
                    continue
                L = lower_bound_L(oa, cvr, result, mvr)
                test = self.tests[oa.label]
                test.update(L)
                record.values[oa.label] = (L, test.measured_risk)
        self._confirm(cvr.votes)
        if self.keep_log:
            self.log.append(record)
        return record

    def _confirm(self, contest_ids: Iterable[str]) -> None:
        for cid in contest_ids:
            if self.contest_confirmed.get(cid, True):
                continue
            oas = self.assertions[cid]
            alpha = self.risk_limits[cid]
            for oa in oas:
                if not self.confirmed[oa.label] and self.tests[oa.label].measured_risk <= alpha:
                    self.confirmed[oa.label] = True
            if all(self.confirmed[oa.label] for oa in oas):
                self.contest_confirmed[cid] = True
        if all(self.contest_confirmed.values()):
            self.verdict = ALL_CONFIRMED

    def escalate(self, reason: str) -> None:
        """Stop sampling and go to a full hand count."""
        self.verdict, self.reason = FULL_HAND_COUNT, reason

    def step(self, retriever: Retriever, mvr_provider: MVRProvider) -> Optional[DrawRecord]:
        if self.config.max_draws is not None and self.draws >= self.config.max_draws:
            self.escalate(f"reached max_draws={self.config.max_draws}")
            return None
        idx = self.draw_index()
        if idx is None:
            self.escalate("sample exhausted")
            return None
        result, mvr, hit = self.retrieve(idx, retriever, mvr_provider)
        if self.pile_size is not None and len(self.retrieved_cards) >= self.pile_size:
            self.draws += 1
            if self.keep_log:
                outcome = PHANTOM if result is None else result.outcome
                self.log.append(DrawRecord(self.draws, idx, self.plan.cvrs[idx].id, outcome, hit))
            self.escalate("all cards retrieved")
            return None
        record = self.process_draw(idx, result, mvr, hit)
        if (
            self.verdict == IN_PROGRESS
            and self.config.scheme == WITHOUT_REPLACEMENT
            and not self._remaining
        ):
            self.escalate("sample exhausted")
        return record

    def run(self, retriever: Retriever, mvr_provider: MVRProvider) -> "Audit":
        while self.verdict == IN_PROGRESS:
            self.step(retriever, mvr_provider)
        log.debug("audit finished after %d draws: %s %s", self.draws, self.verdict, self.reason)
        return self

    # -- reporting

    def measured_risks(self) -> dict[str, float]:
        return {k: t.measured_risk for k, t in self.tests.items()}

    def contest_status(self) -> dict[str, str]:
        if self.plan is None:
            return {}
        out = {}
        for cid, ok in self.contest_confirmed.items():
            out[cid] = "confirmed" if ok else (FULL_HAND_COUNT if self.verdict == FULL_HAND_COUNT else "unconfirmed")
        return out

    def report(self) -> dict:
        rep = {
            "verdict": self.verdict,
            "reason": self.reason,
            "total_draws": self.draws,
            "contests": self.contest_status(),
            "assertions": {
                label: {
                    "margin": self.margins[label],
                    "upper_bound": t.u_pop,
                    "risk": t.measured_risk,
                    "confirmed": self.confirmed[label],
                    "draws_used": t.j,
                }
                for label, t in self.tests.items()
            },
            "reconciliation": [r.to_dict() for r in self.reports],
            "config": self.config.to_dict(),
        }
        if self.verdict == FULL_HAND_COUNT:
            rep["hand_count"] = self.hand_count or {
                "instruction": "conduct a full hand count; its outcome becomes the final outcome"
            }
        return rep

    def write_log(self, path: Path | str) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def hand_count_outcome(contests: Iterable[Contest], cards: Sequence[BallotCard]) -> dict:
    """Outcome of every contest according to the cards themselves."""
    out = {}
    for contest in contests:
        cid = contest.contest_id
        holding = [c for c in cards if c.has_contest(cid)]
        tallies = Counter(c.true_votes[cid] for c in holding)
        entry = {"tallies": {k: tallies[k] for k in sorted(tallies)}}
        means = {}
        for a in contest_assorters(contest):
            means[a.label] = sum(a.score(c.true_votes) for c in holding) / len(holding) if holding else 0.5
        entry["assorter_means"] = means
        entry["reported_outcome_correct"] = all(exceeds_half(m) for m in means.values())
        if contest.social_choice in (PLURALITY, MULTIWINNER_PLURALITY):
            ranked = sorted(
                (c for c in contest.candidates),
                key=lambda c: (-tallies.get(c, 0), contest.candidates.index(c)),
            )
            entry["winners"] = ranked[: contest.n_winners]
        out[cid] = entry
    return out


def run_audit(
    election: Election,
    config: AuditConfig,
    retriever: Retriever,
    mvr_provider: Optional[MVRProvider] = None,
    keep_log: bool = True,
    contest_ids: Optional[Sequence[str]] = None,
    plan: AuditPlan | FullCount | None = None,
) -> Audit:
    """Pre-audit checks followed by the sampling loop until a terminal verdict.

    ``plan`` may be passed to reuse the result of ``pre_audit_checks`` across
    replications of the same election.
    """
    if mvr_provider is None:
        mvr_provider = read_card
    if plan is None:
        plan = pre_audit_checks(election, contest_ids)
    pile = None if election.cards is None else len(election.cards)
    audit = Audit(plan, config, pile_size=pile, keep_log=keep_log)
    audit.run(retriever, mvr_provider)
    if audit.verdict == FULL_HAND_COUNT and election.cards is not None:
        contests = election.contests if audit.plan is None else audit.plan.contests
        audit.hand_count = hand_count_outcome(contests, election.cards)
    return audit


def read_card(card: BallotCard) -> VoteRecord:
    """MVR provider for simulations: the human reading is the card's true votes."""
    return card.true_votes


def plain_overstatement_stream(audit: Audit, cards_by_id: Mapping[str, BallotCard]) -> list[dict[str, float]]:
    """B(b, c) for every logged draw, pairing each CVR with the card imprinted with its id.

    Only meaningful with unique honest imprints; used to compare against the L stream.
    """
    out = []
    for rec in audit.log:
        cvr = audit.plan.cvrs[rec.cvr_index]
        card = cards_by_id.get(cvr.id) if cvr.id is not None else None
        vals = {}
        for label in rec.values:
            oa = next(o for oas in audit.assertions.values() for o in oas if o.label == label)
            vals[label] = overstatement_value(oa, cvr, None if card is None else card.true_votes)
        out.append(vals)
    return out


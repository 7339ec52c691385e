"""The untrusted imprint-and-retrieve subsystem and the audit statistic L.

Retrievers hand back physical cards (or nothing) when asked for an ID.  The
auditor never trusts what a retriever says about a card: the outcome of a
request is classified from the imprint on the card that actually came back.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from noncesuch.assorters import OverstatementAssorter, cvr_score, overstatement_value
from noncesuch.election import CVR, BallotCard, VoteRecord

CARD_WITH_REQUESTED_ID = "card_with_requested_id"
CARD_WITH_OTHER_ID = "card_with_other_id"
CARD_WITHOUT_ID = "card_without_id"
NO_CARD = "no_card"


@dataclass(frozen=True)
class RetrievalResult:
    outcome: str
    card: Optional[BallotCard] = None


def classify_retrieval(requested_id: str, returned: Optional[BallotCard]) -> RetrievalResult:
    if returned is None:
        return RetrievalResult(NO_CARD)
    if returned.imprinted_id is None:
        return RetrievalResult(CARD_WITHOUT_ID, returned)
    if returned.imprinted_id == requested_id:
        return RetrievalResult(CARD_WITH_REQUESTED_ID, returned)
    return RetrievalResult(CARD_WITH_OTHER_ID, returned)


def lower_bound_L(
    oa: OverstatementAssorter,
    cvr: CVR,
    result: Optional[RetrievalResult],
    mvr: Optional[VoteRecord] = None,
) -> float:
    """Computable lower bound on the canonically paired overstatement value.

    ``result`` is None for a phantom CVR (nothing is requested).  Only a card
    bearing the requested ID is read; every other outcome scores the card as
    A(b) = 0.
    """
    if result is not None and result.outcome == CARD_WITH_REQUESTED_ID and not cvr.phantom:
        if mvr is None:
            raise ValueError(f"no manual reading supplied for the card retrieved for CVR {cvr.id!r}")
        return overstatement_value(oa, cvr, mvr)
    return oa.from_scores(cvr_score(oa.base, cvr), 0.0)


def canonical_pi(cvrs: Sequence[CVR], cards: Sequence[BallotCard], oa: OverstatementAssorter) -> tuple[int, ...]:
    """Canonical bijection from CVR positions to card positions, for one assertion.

    A CVR whose ID is on exactly one card is paired with it; an ID on several
    cards goes to the one maximizing the overstatement value (lowest
    ``card_index`` on ties).  Leftover CVRs and cards are paired in order.
    """
    n = len(cvrs)
    if len(cards) != n:
        raise ValueError(f"need as many cards as CVRs, got {len(cards)} cards and {n} CVRs")
    by_imprint: dict[str, list[int]] = defaultdict(list)
    for p, card in enumerate(cards):
        if card.imprinted_id is not None:
            by_imprint[card.imprinted_id].append(p)

    pi: list[Optional[int]] = [None] * n
    used: set[int] = set()
    seen: set[str] = set()
    for i, cvr in enumerate(cvrs):
        if cvr.phantom or cvr.id is None:
            continue
        if cvr.id in seen:
            raise ValueError(f"duplicate CVR id {cvr.id!r}")
        seen.add(cvr.id)
        holders = by_imprint.get(cvr.id)
        if not holders:
            continue
        best = max(
            holders,
            key=lambda p: (overstatement_value(oa, cvr, cards[p].true_votes), -cards[p].card_index),
        )
        pi[i] = best
        used.add(best)

    spare = iter(sorted((p for p in range(n) if p not in used), key=lambda p: cards[p].card_index))
    return tuple(next(spare) if p is None else p for p in pi)


def paired_values(
    oa: OverstatementAssorter, cvrs: Sequence[CVR], cards: Sequence[BallotCard], pi: Sequence[int]
) -> list[float]:
    """B(b_pi(i), c_i) for every CVR position i."""
    return [overstatement_value(oa, c, cards[pi[i]].true_votes) for i, c in enumerate(cvrs)]


# ---------------------------------------------------------------------------
# retriever policies

History = list[tuple[str, Optional[int]]]


class Retriever:
    """Honest retriever over a physical pile; subclasses misbehave.

    ``retrieve`` returns a card from the pile or None, and records every
    request in ``history`` (requested id, returned card_index).
    """

    kind = "honest"

    def __init__(self, cards: Sequence[BallotCard], cvrs: Sequence[CVR] = ()):
        self.cards = list(cards)
        self.by_index = {c.card_index: c for c in self.cards}
        self.by_imprint: dict[str, list[BallotCard]] = defaultdict(list)
        for c in sorted(self.cards, key=lambda c: c.card_index):
            if c.imprinted_id is not None:
                self.by_imprint[c.imprinted_id].append(c)
        self.cvrs = {c.id: c for c in cvrs if c.id is not None}
        self.history: History = []

    def honest(self, requested_id: str) -> Optional[BallotCard]:
        holders = self.by_imprint.get(requested_id)
        return holders[0] if holders else None

    def choose(self, requested_id: str) -> Optional[BallotCard]:
        return self.honest(requested_id)

    def retrieve(self, requested_id: str) -> Optional[BallotCard]:
        card = self.choose(requested_id)
        if card is not None and self.by_index.get(card.card_index) is not card:
            raise ValueError("retriever returned a card that is not in the physical pile")
        self.history.append((requested_id, None if card is None else card.card_index))
        return card


def _agreement(card: BallotCard, cvr: Optional[CVR]) -> int:
    if cvr is None:
        return 0
    return sum(1 for k, v in cvr.votes.items() if card.true_votes.get(k) == v)


class DuplicateExploit(Retriever):
    """Among cards imprinted with the requested id, return the one that best matches the CVR."""

    kind = "duplicate_exploit"

    def choose(self, requested_id):
        holders = self.by_imprint.get(requested_id)
        if not holders:
            return None
        cvr = self.cvrs.get(requested_id)
        return max(holders, key=lambda c: (_agreement(c, cvr), -c.card_index))


class _Targeted(Retriever):
    """Misbehaves only on targeted ids: a list, "all", or "mismatched"
    (ids whose honestly retrieved card disagrees with the CVR)."""

    def __init__(self, cards, cvrs=(), target: str | Iterable[str] = "all"):
        super().__init__(cards, cvrs)
        self.target = target if isinstance(target, str) else frozenset(target)

    def targeted(self, requested_id: str) -> bool:
        if self.target == "all":
            return True
        if self.target == "mismatched":
            card = self.honest(requested_id)
            cvr = self.cvrs.get(requested_id)
            return card is None or cvr is None or dict(card.true_votes) != dict(cvr.votes)
        if isinstance(self.target, str):
            raise ValueError(f"unknown target {self.target!r}")
        return requested_id in self.target

    def misbehave(self, requested_id: str) -> Optional[BallotCard]:
        raise NotImplementedError

    def choose(self, requested_id):
        if self.targeted(requested_id):
            return self.misbehave(requested_id)
        return self.honest(requested_id)


class Withhold(_Targeted):
    kind = "withhold"

    def misbehave(self, requested_id):
        return None


def _pick(cards: list[BallotCard], cvr: Optional[CVR], strategy: str) -> Optional[BallotCard]:
    if not cards:
        return None
    if strategy == "matching_votes":
        return max(cards, key=lambda c: (_agreement(c, cvr), -c.card_index))
    if strategy == "lowest_index":
        return min(cards, key=lambda c: c.card_index)
    raise ValueError(f"unknown strategy {strategy!r}")


class WrongCard(_Targeted):
    """Return a card imprinted with some other id (or none)."""

    kind = "wrong_card"

    def __init__(self, cards, cvrs=(), target="all", strategy: str = "matching_votes"):
        super().__init__(cards, cvrs, target)
        self.strategy = strategy

    def misbehave(self, requested_id):
        others = [c for c in self.cards if c.imprinted_id != requested_id]
        return _pick(others, self.cvrs.get(requested_id), self.strategy)


class BlankCard(_Targeted):
    kind = "blank_card"

    def __init__(self, cards, cvrs=(), target="all", strategy: str = "matching_votes"):
        super().__init__(cards, cvrs, target)
        self.strategy = strategy

    def misbehave(self, requested_id):
        blanks = [c for c in self.cards if c.imprinted_id is None]
        return _pick(blanks, self.cvrs.get(requested_id), self.strategy)


class Scripted(Retriever):
    """Scripted responses: ``script`` maps a requested id to a card_index or None.

    Unscripted ids are served honestly.  ``choose_fn``, when given, is called
    as ``choose_fn(requested_id, history, retriever)`` and may adapt to the
    requests seen so far; it returns a card_index or None.
    """

    kind = "scripted"

    def __init__(
        self,
        cards,
        cvrs=(),
        script: Optional[Mapping[str, Optional[int]]] = None,
        choose_fn: Optional[Callable[[str, History, "Scripted"], Optional[int]]] = None,
    ):
        super().__init__(cards, cvrs)
        self.script = dict(script or {})
        self.choose_fn = choose_fn

    @property
    def adaptive(self) -> bool:
        return self.choose_fn is not None

    def choose(self, requested_id):
        if self.choose_fn is not None:
            idx = self.choose_fn(requested_id, list(self.history), self)
        elif requested_id in self.script:
            idx = self.script[requested_id]
        else:
            return self.honest(requested_id)
        if idx is None:
            return None
        if idx not in self.by_index:
            raise ValueError(f"scripted card_index {idx} is not in the physical pile")
        return self.by_index[idx]


POLICIES = {
    "honest": Retriever,
    "duplicate_exploit": DuplicateExploit,
    "withhold": Withhold,
    "wrong_card": WrongCard,
    "blank_card": BlankCard,
    "scripted": Scripted,
}


def _script_index(v) -> Optional[int]:
    if isinstance(v, Mapping):
        v = v.get("return_card_index")
    return None if v is None else int(v)


def make_retriever(spec: Mapping | None, cards: Sequence[BallotCard], cvrs: Sequence[CVR] = ()) -> Retriever:
    """Build a retriever from ``{"kind": ..., "params": {...}}``."""
    spec = spec or {"kind": "honest"}
    kind = spec.get("kind", "honest")
    params = dict(spec.get("params", {}))
    if kind not in POLICIES:
        raise ValueError(f"unknown adversary kind {kind!r}; expected one of {sorted(POLICIES)}")
    if kind == "withhold" and "ids" in params:
        params["target"] = params.pop("ids")
    if kind == "scripted":
        script = params.pop("map", params.pop("script", {}))
        params["script"] = {k: _script_index(v) for k, v in script.items()}
    return POLICIES[kind](cards, cvrs, **params)


def load_adversary(path: Path | str) -> dict:
    return json.loads(Path(path).read_text())

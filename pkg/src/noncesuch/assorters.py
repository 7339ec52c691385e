"""SHANGRLA assorters and the overstatement assorters built from them.

An assorter maps the votes on a card (or in a CVR) to a number in ``[0, u]``;
the reported outcome of a contest is correct when the mean assorter value
over the cards exceeds 1/2 for every assorter of the contest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from noncesuch.election import (
    CVR,
    EXTERNAL_ASSERTIONS,
    MULTIWINNER_PLURALITY,
    PLURALITY,
    SUPERMAJORITY,
    Contest,
    VoteRecord,
)

# tolerance for comparing float means against 1/2
HALF_TOL = 1e-12


def exceeds_half(x: float, tol: float = HALF_TOL) -> bool:
    return x > 0.5 + tol


class NotConfirmedByCVRs(ValueError):
    """A reported winner did not win according to the CVRs; a full hand count is required."""


@dataclass(frozen=True)
class Assorter:
    """Score table for one contest.

    ``scores`` maps a selection to its value; selections absent from the table
    (including under- and overvotes unless listed) score ``default``.  A record
    that does not mention the contest also scores ``default``.
    """

    contest_id: str
    label: str
    upper_bound: float
    scores: Mapping[str, float] = field(default_factory=dict)
    default: float = 0.5

    def __post_init__(self):
        if self.upper_bound <= 0:
            raise ValueError(f"assorter {self.label!r}: upper bound must be positive")
        for sel, val in list(self.scores.items()) + [("<default>", self.default)]:
            if not 0 <= val <= self.upper_bound:
                raise ValueError(
                    f"assorter {self.label!r}: value {val} for {sel!r} outside [0, {self.upper_bound}]"
                )

    def score(self, votes: VoteRecord) -> float:
        sel = votes.get(self.contest_id)
        if sel is None:
            return self.default
        return self.scores.get(sel, self.default)

    @property
    def u(self) -> float:
        return self.upper_bound


def plurality_assorters(contest: Contest) -> list[Assorter]:
    """One assorter per (reported winner, reported loser) pair; K(C-K) in all."""
    if contest.social_choice not in (PLURALITY, MULTIWINNER_PLURALITY):
        raise ValueError(f"contest {contest.contest_id!r} is not a plurality contest")
    return [
        Assorter(
            contest_id=contest.contest_id,
            label=f"{contest.contest_id}: {w} beats {loser}",
            upper_bound=1.0,
            scores={w: 1.0, loser: 0.0},
        )
        for w in contest.reported_winners
        for loser in contest.reported_losers
    ]


def supermajority_assorter(contest: Contest) -> Assorter:
    f = contest.supermajority_fraction
    if contest.social_choice != SUPERMAJORITY:
        raise ValueError(f"contest {contest.contest_id!r} is not a supermajority contest")
    if f is None or not 0.5 < f < 1:
        raise ValueError(f"supermajority fraction {f} not in (1/2, 1)")
    if contest.n_winners != 1:
        raise ValueError("supermajority contest needs exactly one reported winner")
    (w,) = contest.reported_winners
    u = 1 / (2 * f)
    scores = {c: 0.0 for c in contest.candidates}
    scores[w] = u
    return Assorter(
        contest_id=contest.contest_id,
        label=f"{contest.contest_id}: {w} has more than {f:g} of valid votes",
        upper_bound=u,
        scores=scores,
    )


def external_assorters(contest: Contest) -> list[Assorter]:
    out = []
    for spec in contest.external_assertions:
        out.append(
            Assorter(
                contest_id=contest.contest_id,
                label=f"{contest.contest_id}: {spec['label']}",
                upper_bound=float(spec["u"]),
                scores={k: float(v) for k, v in spec["scores"].items()},
                default=float(spec.get("default", 0.5)),
            )
        )
    return out


def contest_assorters(contest: Contest) -> list[Assorter]:
    if contest.social_choice in (PLURALITY, MULTIWINNER_PLURALITY):
        return plurality_assorters(contest)
    if contest.social_choice == SUPERMAJORITY:
        return [supermajority_assorter(contest)]
    if contest.social_choice == EXTERNAL_ASSERTIONS:
        return external_assorters(contest)
    raise ValueError(f"unsupported social choice {contest.social_choice!r}")


def load_external_assertions(path: Path | str) -> tuple[str, list[dict]]:
    """Read ``{contest_id, assertions: [{label, u, scores}]}``."""
    data = json.loads(Path(path).read_text())
    assertions = data["assertions"]
    for a in assertions:
        for key in ("label", "u", "scores"):
            if key not in a:
                raise ValueError(f"{path}: assertion missing {key!r}")
    return data["contest_id"], assertions


def cvr_score(assorter: Assorter, cvr: CVR) -> float:
    if cvr.phantom:
        return 0.5
    return assorter.score(cvr.votes)


def card_score(assorter: Assorter, votes: Optional[VoteRecord]) -> float:
    """Assorter value of a retrieved card; no card, or a card outside the contest, scores 0."""
    if votes is None or assorter.contest_id not in votes:
        return 0.0
    return assorter.score(votes)


def cvr_mean(assorter: Assorter, cvrs: Sequence[CVR]) -> float:
    if not cvrs:
        raise ValueError("no CVRs")
    return sum(cvr_score(assorter, c) for c in cvrs) / len(cvrs)


def assorter_margin(assorter: Assorter, cvrs: Sequence[CVR]) -> float:
    """Reported assorter margin ``2 * mean - 1`` over the CVRs."""
    return 2 * cvr_mean(assorter, cvrs) - 1


@dataclass(frozen=True)
class OverstatementAssorter:
    base: Assorter
    margin: float

    def __post_init__(self):
        if not self.margin > 0:
            raise NotConfirmedByCVRs(
                f"{self.base.label}: margin {self.margin} <= 0, reported outcome not confirmed by CVRs"
            )
        if self.margin >= 2 * self.base.u:
            raise ValueError(f"{self.base.label}: margin {self.margin} exceeds 2u")

    @property
    def label(self) -> str:
        return self.base.label

    @property
    def contest_id(self) -> str:
        return self.base.contest_id

    @property
    def upper_bound(self) -> float:
        u = self.base.u
        return 2 * u / (2 * u - self.margin)

    @property
    def honest_value(self) -> float:
        """Value of a pair with no overstatement, u / (2u - v)."""
        u = self.base.u
        return u / (2 * u - self.margin)

    def from_scores(self, cvr_value: float, card_value: float) -> float:
        u = self.base.u
        return (1 - (cvr_value - card_value) / u) / (2 - self.margin / u)


def overstatement_value(oa: OverstatementAssorter, cvr: CVR, card_votes: Optional[VoteRecord]) -> float:
    """B(b, c) for one CVR and the votes read from one card.

    ``card_votes=None`` stands for a missing card and takes the value least
    favorable to the audit, A(b) = 0; a phantom CVR scores A(c) = 1/2.
    """
    return oa.from_scores(cvr_score(oa.base, cvr), card_score(oa.base, card_votes))


def assertion_set(
    contest: Contest, cvrs: Sequence[CVR], assorters: Optional[Iterable[Assorter]] = None
) -> list[OverstatementAssorter]:
    """Overstatement assorters for a contest, margins taken from the CVRs that contain it.

    Raises NotConfirmedByCVRs when any CVR mean is not above 1/2.
    """
    in_scope = [c for c in cvrs if c.has_contest(contest.contest_id)]
    if not in_scope:
        raise NotConfirmedByCVRs(f"contest {contest.contest_id!r}: no CVRs contain the contest")
    out = []
    for a in contest_assorters(contest) if assorters is None else assorters:
        mean = cvr_mean(a, in_scope)
        if not exceeds_half(mean):
            raise NotConfirmedByCVRs(
                f"{a.label}: CVR mean {mean:.6g} <= 1/2; reported winners did not win according to the CVRs"
            )
        out.append(OverstatementAssorter(a, 2 * mean - 1))
    return out

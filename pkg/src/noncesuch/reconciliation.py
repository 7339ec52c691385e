"""Pre-audit checks and reconciliation of CVR counts with trusted card counts."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from noncesuch.assorters import (
    NotConfirmedByCVRs,
    OverstatementAssorter,
    assertion_set,
    contest_assorters,
    cvr_mean,
    exceeds_half,
)
from noncesuch.election import CVR, Contest, Election, phantom_cvr

NONE = "none"
CONTEST_REMOVED = "contest_removed"
PHANTOMS_ADDED = "phantoms_added"


@dataclass
class ReconciliationReport:
    contest_id: str
    n_cards: int
    n_cvrs: int
    action: str = NONE
    removed_from: list[str] = field(default_factory=list)
    phantoms_added: int = 0
    post_cvr_means: dict[str, float] = field(default_factory=dict)
    full_count: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "contest_id": self.contest_id,
            "n_cards": self.n_cards,
            "n_cvrs": self.n_cvrs,
            "action": self.action,
            "removed_from": list(self.removed_from),
            "phantoms_added": self.phantoms_added,
            "post_cvr_means": dict(self.post_cvr_means),
            "full_count": self.full_count,
            "note": self.note,
        }


@dataclass(frozen=True)
class UniquenessCheck:
    duplicates: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.duplicates


def check_id_uniqueness(cvrs: Sequence[CVR]) -> UniquenessCheck:
    counts = Counter(c.id for c in cvrs if not c.phantom and c.id is not None)
    return UniquenessCheck(tuple(sorted(i for i, n in counts.items() if n > 1)))


def _means(contest: Contest, cvrs: Sequence[CVR]) -> dict[str, float]:
    in_scope = [c for c in cvrs if c.has_contest(contest.contest_id)]
    if not in_scope:
        return {a.label: 0.5 for a in contest_assorters(contest)}
    return {a.label: cvr_mean(a, in_scope) for a in contest_assorters(contest)}


def _finish(report: ReconciliationReport, contest: Contest, cvrs: Sequence[CVR]) -> ReconciliationReport:
    report.post_cvr_means = _means(contest, cvrs)
    report.full_count = not all(exceeds_half(m) for m in report.post_cvr_means.values())
    return report


def shrink_cvrs(contest: Contest, cvrs: Sequence[CVR], n_cards: int) -> tuple[list[CVR], ReconciliationReport]:
    """Drop the contest from the N_c - N_b CVRs latest in id order.

    Returns the new CVR list (same order, untouched CVRs are the same objects)
    and the report; ``report.full_count`` is set when a CVR mean is no longer
    above 1/2.
    """
    cid = contest.contest_id
    holders = [i for i, c in enumerate(cvrs) if c.has_contest(cid)]
    n_cvrs = len(holders)
    if n_cvrs <= n_cards:
        raise ValueError(f"shrink_cvrs needs N_c > N_b, got N_c={n_cvrs}, N_b={n_cards}")
    by_id = sorted(holders, key=lambda i: (cvrs[i].id is not None, cvrs[i].id or ""), reverse=True)
    drop = set(by_id[: n_cvrs - n_cards])
    out = []
    for i, c in enumerate(cvrs):
        if i in drop:
            c = CVR(id=c.id, votes={k: v for k, v in c.votes.items() if k != cid}, phantom=c.phantom)
        out.append(c)
    report = ReconciliationReport(
        contest_id=cid,
        n_cards=n_cards,
        n_cvrs=n_cvrs,
        action=CONTEST_REMOVED,
        removed_from=[cvrs[i].id for i in sorted(drop, key=by_id.index)],
        note="removed from the CVRs latest in id order; any other choice of CVRs is also valid",
    )
    return out, _finish(report, contest, out)


def add_phantoms(contest: Contest, cvrs: Sequence[CVR], n_cards: int) -> tuple[list[CVR], ReconciliationReport]:
    cid = contest.contest_id
    n_cvrs = sum(1 for c in cvrs if c.has_contest(cid))
    if n_cvrs >= n_cards:
        raise ValueError(f"add_phantoms needs N_c < N_b, got N_c={n_cvrs}, N_b={n_cards}")
    out = list(cvrs) + [phantom_cvr(cid) for _ in range(n_cards - n_cvrs)]
    report = ReconciliationReport(
        contest_id=cid,
        n_cards=n_cards,
        n_cvrs=n_cvrs,
        action=PHANTOMS_ADDED,
        phantoms_added=n_cards - n_cvrs,
    )
    return out, _finish(report, contest, out)


def reconcile_contest(contest: Contest, cvrs: Sequence[CVR]) -> tuple[list[CVR], ReconciliationReport]:
    n_cards = contest.card_upper_bound
    n_cvrs = sum(1 for c in cvrs if c.has_contest(contest.contest_id))
    if n_cvrs > n_cards:
        return shrink_cvrs(contest, cvrs, n_cards)
    if n_cvrs < n_cards:
        return add_phantoms(contest, cvrs, n_cards)
    report = ReconciliationReport(contest.contest_id, n_cards, n_cvrs)
    return list(cvrs), _finish(report, contest, cvrs)


@dataclass(frozen=True)
class AuditPlan:
    """Frozen input to the audit: reconciled CVRs and the assertions with their margins."""

    contests: tuple[Contest, ...]
    cvrs: tuple[CVR, ...]
    assertions: dict[str, list[OverstatementAssorter]]
    reports: tuple[ReconciliationReport, ...]

    def population_size(self, contest_id: str) -> int:
        return sum(1 for c in self.cvrs if c.has_contest(contest_id))

    @property
    def all_assertions(self) -> list[OverstatementAssorter]:
        return [oa for c in self.contests for oa in self.assertions[c.contest_id]]


@dataclass(frozen=True)
class FullCount:
    reason: str
    reports: tuple[ReconciliationReport, ...] = ()


def pre_audit_checks(election: Election, contest_ids: Optional[Sequence[str]] = None) -> AuditPlan | FullCount:
    """CVR-mean check, id uniqueness, then per-contest reconciliation.

    Returns the frozen plan, or a FullCount verdict naming the reason.
    """
    contests = tuple(
        election.contests if contest_ids is None else (election.contest(c) for c in contest_ids)
    )
    for contest in contests:
        try:
            assertion_set(contest, election.cvrs)
        except NotConfirmedByCVRs as e:
            return FullCount(f"did not win according to the CVRs: {e}")

    uniq = check_id_uniqueness(election.cvrs)
    if not uniq.passed:
        return FullCount(f"CVR ids are not unique: {', '.join(uniq.duplicates)}")

    cvrs = list(election.cvrs)
    reports = []
    for contest in contests:
        cvrs, report = reconcile_contest(contest, cvrs)
        reports.append(report)
        if report.full_count:
            return FullCount(
                f"contest {contest.contest_id!r}: CVR mean not above 1/2 after reconciliation",
                tuple(reports),
            )

    assertions = {c.contest_id: assertion_set(c, cvrs) for c in contests}
    return AuditPlan(contests, tuple(cvrs), assertions, tuple(reports))

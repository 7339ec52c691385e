"""Contests, cast-vote records, physical ballot cards, and their file formats."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

UNDERVOTE = "undervote"
OVERVOTE = "overvote"
NO_VALID_VOTE = (UNDERVOTE, OVERVOTE)

PLURALITY = "plurality"
MULTIWINNER_PLURALITY = "multiwinner_plurality"
SUPERMAJORITY = "supermajority"
EXTERNAL_ASSERTIONS = "external_assertions"
SOCIAL_CHOICES = (PLURALITY, MULTIWINNER_PLURALITY, SUPERMAJORITY, EXTERNAL_ASSERTIONS)

# contest_id -> candidate id | UNDERVOTE | OVERVOTE
VoteRecord = Mapping[str, str]


class ElectionFormatError(ValueError):
    """An election file could not be parsed; the message names the record and field."""


class GroundTruthUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class Contest:
    contest_id: str
    candidates: tuple[str, ...]
    reported_winners: tuple[str, ...]
    social_choice: str = PLURALITY
    card_upper_bound: int = 0
    risk_limit: float = 0.05
    supermajority_fraction: Optional[float] = None
    # only for EXTERNAL_ASSERTIONS: dicts {label, u, scores}
    external_assertions: tuple[Mapping[str, Any], ...] = ()

    @property
    def n_winners(self) -> int:
        return len(self.reported_winners)

    @property
    def reported_losers(self) -> tuple[str, ...]:
        return tuple(c for c in self.candidates if c not in self.reported_winners)


@dataclass(frozen=True)
class CVR:
    id: Optional[str]
    votes: VoteRecord = field(default_factory=dict)
    phantom: bool = False

    def has_contest(self, contest_id: str) -> bool:
        return contest_id in self.votes


@dataclass(frozen=True)
class BallotCard:
    card_index: int
    imprinted_id: Optional[str]
    true_votes: VoteRecord = field(default_factory=dict)

    def has_contest(self, contest_id: str) -> bool:
        return contest_id in self.true_votes


@dataclass(frozen=True)
class Election:
    contests: tuple[Contest, ...]
    cvrs: tuple[CVR, ...]
    # None in live-audit mode
    cards: Optional[tuple[BallotCard, ...]] = None

    def contest(self, contest_id: str) -> Contest:
        for c in self.contests:
            if c.contest_id == contest_id:
                return c
        raise KeyError(f"unknown contest {contest_id!r}")

    @property
    def is_simulation(self) -> bool:
        return self.cards is not None


def phantom_cvr(contest_id: str) -> CVR:
    return CVR(id=None, votes={contest_id: UNDERVOTE}, phantom=True)


def count_cards_with_contest(election: Election, contest_id: str) -> int:
    if election.cards is None:
        raise GroundTruthUnavailable("ground truth unavailable: no ballot cards in live mode")
    return sum(1 for card in election.cards if card.has_contest(contest_id))


def count_cvrs_with_contest(election: Election, contest_id: str) -> int:
    election.contest(contest_id)
    return sum(1 for cvr in election.cvrs if cvr.has_contest(contest_id))


def _check_votes(votes: VoteRecord, contests: Mapping[str, Contest], where: str) -> list[str]:
    findings = []
    for cid, sel in votes.items():
        contest = contests.get(cid)
        if contest is None:
            findings.append(f"{where}: unknown contest {cid!r}")
        elif sel not in NO_VALID_VOTE and sel not in contest.candidates:
            findings.append(f"{where}: selection {sel!r} is not a candidate in contest {cid!r}")
    return findings


def validate_election(election: Election) -> list[str]:
    """Return every invariant violation found; an empty list means the election is well formed.

    The result is sorted so that it does not depend on the order of the inputs.
    """
    findings: list[str] = []
    by_id: dict[str, Contest] = {}
    for contest in election.contests:
        cid = contest.contest_id
        if cid in by_id:
            findings.append(f"duplicate contest id {cid!r}")
        by_id[cid] = contest
        if contest.social_choice not in SOCIAL_CHOICES:
            findings.append(f"contest {cid!r}: unknown social choice {contest.social_choice!r}")
        if len(set(contest.candidates)) != len(contest.candidates):
            findings.append(f"contest {cid!r}: repeated candidate")
        if len(contest.candidates) < 2:
            findings.append(f"contest {cid!r}: fewer than 2 candidates")
        for w in contest.reported_winners:
            if w not in contest.candidates:
                findings.append(f"contest {cid!r}: reported winner {w!r} not in candidate list")
        if len(set(contest.reported_winners)) != len(contest.reported_winners):
            findings.append(f"contest {cid!r}: repeated reported winner")
        if not 0 < contest.n_winners < len(contest.candidates):
            findings.append(f"contest {cid!r}: need 0 < K < C reported winners")
        if contest.social_choice in (PLURALITY, SUPERMAJORITY) and contest.n_winners != 1:
            findings.append(f"contest {cid!r}: {contest.social_choice} has exactly one winner")
        if contest.social_choice == SUPERMAJORITY:
            f = contest.supermajority_fraction
            if f is None or not 0.5 < f < 1:
                findings.append(f"contest {cid!r}: supermajority fraction must be in (1/2, 1)")
        if contest.social_choice == EXTERNAL_ASSERTIONS and not contest.external_assertions:
            findings.append(f"contest {cid!r}: external_assertions contest has no assertions")
        if contest.card_upper_bound < 0:
            findings.append(f"contest {cid!r}: negative card upper bound")
        if not 0 < contest.risk_limit < 1:
            findings.append(f"contest {cid!r}: risk limit must be in (0, 1)")

    ids = Counter(cvr.id for cvr in election.cvrs if not cvr.phantom and cvr.id is not None)
    for dup in (i for i, n in ids.items() if n > 1):
        findings.append(f"duplicate CVR id {dup!r}")
    for cvr in election.cvrs:
        where = "phantom CVR" if cvr.phantom else f"CVR {cvr.id!r}"
        if cvr.phantom:
            if cvr.id is not None:
                findings.append(f"phantom CVR carries id {cvr.id!r}")
            if any(sel not in NO_VALID_VOTE for sel in cvr.votes.values()):
                findings.append("phantom CVR contains a valid vote")
        findings.extend(_check_votes(cvr.votes, by_id, where))
    for card in election.cards or ():
        findings.extend(_check_votes(card.true_votes, by_id, f"card {card.card_index}"))
    return sorted(set(findings))


# ---------------------------------------------------------------------------
# serialization


def contest_to_dict(contest: Contest) -> dict:
    d = {
        "contest_id": contest.contest_id,
        "social_choice": contest.social_choice,
        "candidates": list(contest.candidates),
        "reported_winners": list(contest.reported_winners),
        "card_upper_bound": contest.card_upper_bound,
        "risk_limit": contest.risk_limit,
    }
    if contest.supermajority_fraction is not None:
        d["supermajority_fraction"] = contest.supermajority_fraction
    if contest.external_assertions:
        d["assertions"] = [dict(a) for a in contest.external_assertions]
    return d


def _require(obj: Mapping, key: str, where: str, types: type | tuple = object) -> Any:
    if key not in obj:
        raise ElectionFormatError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, types):
        raise ElectionFormatError(f"{where}: field {key!r} has wrong type {type(value).__name__}")
    return value


def _votes(obj: Any, where: str) -> dict[str, str]:
    if not isinstance(obj, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in obj.items()
    ):
        raise ElectionFormatError(f"{where}: field 'votes' must map contest ids to selections")
    return dict(obj)


def contest_from_dict(d: Mapping, where: str = "contest") -> Contest:
    if not isinstance(d, Mapping):
        raise ElectionFormatError(f"{where}: expected an object")
    frac = d.get("supermajority_fraction")
    return Contest(
        contest_id=_require(d, "contest_id", where, str),
        candidates=tuple(_require(d, "candidates", where, list)),
        reported_winners=tuple(_require(d, "reported_winners", where, list)),
        social_choice=d.get("social_choice", PLURALITY),
        card_upper_bound=int(d.get("card_upper_bound", 0)),
        risk_limit=float(d.get("risk_limit", 0.05)),
        supermajority_fraction=None if frac is None else float(frac),
        external_assertions=tuple(d.get("assertions", ())),
    )


def cvr_to_dict(cvr: CVR) -> dict:
    return {"id": cvr.id, "phantom": cvr.phantom, "votes": dict(cvr.votes)}


def cvr_from_dict(d: Any, where: str = "CVR") -> CVR:
    if not isinstance(d, dict):
        raise ElectionFormatError(f"{where}: expected an object")
    cid = d.get("id")
    if cid is not None and not isinstance(cid, str):
        raise ElectionFormatError(f"{where}: field 'id' must be a string or null")
    phantom = d.get("phantom", False)
    if not isinstance(phantom, bool):
        raise ElectionFormatError(f"{where}: field 'phantom' must be a boolean")
    return CVR(id=cid, votes=_votes(_require(d, "votes", where), where), phantom=phantom)


def card_to_dict(card: BallotCard) -> dict:
    return {"imprinted_id": card.imprinted_id, "votes": dict(card.true_votes)}


def card_from_dict(d: Any, index: int, where: str = "card") -> BallotCard:
    if not isinstance(d, dict):
        raise ElectionFormatError(f"{where}: expected an object")
    iid = d.get("imprinted_id")
    if iid is not None and not isinstance(iid, str):
        raise ElectionFormatError(f"{where}: field 'imprinted_id' must be a string or null")
    return BallotCard(card_index=index, imprinted_id=iid, true_votes=_votes(_require(d, "votes", where), where))


def _load_json_array(text: str, name: str) -> list:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ElectionFormatError(f"{name}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(data, list):
        raise ElectionFormatError(f"{name}: expected a JSON array")
    return data


def parse_cvrs(text: str, name: str = "CVR file") -> tuple[CVR, ...]:
    return tuple(cvr_from_dict(d, f"{name}: record {i}") for i, d in enumerate(_load_json_array(text, name)))


def parse_cards(text: str, name: str = "card file") -> tuple[BallotCard, ...]:
    return tuple(
        card_from_dict(d, i, f"{name}: record {i}") for i, d in enumerate(_load_json_array(text, name))
    )


def parse_contests(text: str, name: str = "contest file") -> tuple[Contest, ...]:
    return tuple(
        contest_from_dict(d, f"{name}: record {i}") for i, d in enumerate(_load_json_array(text, name))
    )


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def serialize_cvrs(cvrs: Iterable[CVR]) -> str:
    return dump_json([cvr_to_dict(c) for c in cvrs])


def serialize_cards(cards: Iterable[BallotCard]) -> str:
    return dump_json([card_to_dict(c) for c in cards])


def serialize_contests(contests: Iterable[Contest]) -> str:
    return dump_json([contest_to_dict(c) for c in contests])


def parse_manifest(text: str, name: str = "manifest") -> dict[str, int]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"contest_id", "card_upper_bound"} <= set(reader.fieldnames):
        raise ElectionFormatError(f"{name}: header must be 'contest_id,card_upper_bound'")
    bounds = {}
    for row in reader:
        try:
            bounds[row["contest_id"]] = int(row["card_upper_bound"])
        except (TypeError, ValueError):
            raise ElectionFormatError(
                f"{name}: line {reader.line_num}: field 'card_upper_bound' is not an integer"
            ) from None
    return bounds


def serialize_manifest(contests: Iterable[Contest]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["contest_id", "card_upper_bound"])
    for c in contests:
        w.writerow([c.contest_id, c.card_upper_bound])
    return out.getvalue()


def apply_manifest(contests: Sequence[Contest], bounds: Mapping[str, int]) -> tuple[Contest, ...]:
    out = []
    for c in contests:
        if c.contest_id not in bounds:
            raise ElectionFormatError(f"manifest: no card_upper_bound for contest {c.contest_id!r}")
        out.append(replace(c, card_upper_bound=bounds[c.contest_id]))
    return tuple(out)


def election_to_dict(election: Election) -> dict:
    d = {
        "contests": [contest_to_dict(c) for c in election.contests],
        "cvrs": [cvr_to_dict(c) for c in election.cvrs],
    }
    if election.cards is not None:
        d["cards"] = [card_to_dict(c) for c in election.cards]
    return d


def election_from_dict(d: Mapping) -> Election:
    cards = d.get("cards")
    return Election(
        contests=tuple(contest_from_dict(c, f"contest {i}") for i, c in enumerate(d["contests"])),
        cvrs=tuple(cvr_from_dict(c, f"CVR {i}") for i, c in enumerate(d["cvrs"])),
        cards=None if cards is None else tuple(card_from_dict(c, i) for i, c in enumerate(cards)),
    )


def write_election(election: Election, out_dir: Path | str) -> dict[str, Path]:
    """Write contests.json, cvrs.json, manifest.csv and (simulation only) cards.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "contests": out / "contests.json",
        "cvrs": out / "cvrs.json",
        "manifest": out / "manifest.csv",
    }
    paths["contests"].write_text(serialize_contests(election.contests))
    paths["cvrs"].write_text(serialize_cvrs(election.cvrs))
    paths["manifest"].write_text(serialize_manifest(election.contests))
    if election.cards is not None:
        paths["cards"] = out / "cards.json"
        paths["cards"].write_text(serialize_cards(election.cards))
    return paths


def read_election(
    contests: Path | str,
    cvrs: Path | str,
    manifest: Path | str | None = None,
    cards: Path | str | None = None,
) -> Election:
    parsed = parse_contests(Path(contests).read_text(), str(contests))
    if manifest is not None:
        parsed = apply_manifest(parsed, parse_manifest(Path(manifest).read_text(), str(manifest)))
    return Election(
        contests=parsed,
        cvrs=parse_cvrs(Path(cvrs).read_text(), str(cvrs)),
        cards=None if cards is None else parse_cards(Path(cards).read_text(), str(cards)),
    )

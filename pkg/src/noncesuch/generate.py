"""Synthetic elections with exact tallies, CVR errors, and honest or attack imprinting."""

from __future__ import annotations

from collections import Counter
from typing import Mapping

from noncesuch.election import (
    PLURALITY,
    SUPERMAJORITY,
    UNDERVOTE,
    CVR,
    BallotCard,
    Contest,
    Election,
)
from noncesuch.prng import derive_prng

ID_SPACE = 10**12


def true_tallies(spec: Mapping) -> dict[str, int]:
    n = int(spec["n_cards"])
    cands = list(spec["candidates"])
    if "true_tallies" in spec:
        tallies = {c: int(spec["true_tallies"].get(c, 0)) for c in cands}
    elif "margin" in spec:
        if len(cands) != 2:
            raise ValueError("'margin' needs exactly two candidates")
        first = round(n * (1 + float(spec["margin"])) / 2)
        tallies = {cands[0]: first, cands[1]: n - first}
    else:
        raise ValueError("election spec needs 'true_tallies' or 'margin'")
    if any(v < 0 for v in tallies.values()):
        raise ValueError("negative tally")
    if sum(tallies.values()) > n:
        raise ValueError(f"infeasible tallies: {sum(tallies.values())} votes on {n} cards")
    return tallies


def _nonces(prng, n: int) -> list[str]:
    seen: set[str] = set()
    out = []
    while len(out) < n:
        nid = f"{prng.randbelow(ID_SPACE):012d}"
        if nid not in seen:
            seen.add(nid)
            out.append(nid)
    return out


def _reported_winners(spec: Mapping, cvr_sel: list[str], cands: list[str]) -> tuple[str, ...]:
    if "reported_winners" in spec:
        return tuple(spec["reported_winners"])
    k = int(spec.get("n_winners", 1))
    counts = Counter(cvr_sel)
    ranked = sorted(cands, key=lambda c: (-counts[c], cands.index(c)))
    return tuple(ranked[:k])


def _attack_imprints(card_sel: list[str], cvr_sel: list[str], ids: list[str]) -> list[str | None]:
    """Imprint each card with the id of a CVR showing the same vote, reusing ids when
    the CVRs run out; CVRs left over have no card at all."""
    n = len(card_sel)
    imprint: list[str | None] = [None] * n
    used = [False] * n
    for i in range(n):
        if card_sel[i] == cvr_sel[i]:
            imprint[i] = ids[i]
            used[i] = True
    for i in range(n):
        if imprint[i] is not None:
            continue
        free = next((k for k in range(n) if not used[k] and cvr_sel[k] == card_sel[i]), None)
        if free is not None:
            imprint[i] = ids[free]
            used[free] = True
            continue
        dup = next((k for k in range(n) if used[k] and cvr_sel[k] == card_sel[i]), None)
        if dup is not None:
            imprint[i] = ids[dup]
    return imprint


def generate_election(spec: Mapping, seed: str) -> Election:
    """Build a single-contest election from a generator spec.

    Keys: contest_id, candidates, n_cards, true_tallies | margin, flips
    ([{from, to, count}]), error_rate, imprint ("honest" | "attack"),
    reported_winners, n_winners, risk_limit, card_upper_bound,
    social_choice, supermajority_fraction.
    """
    cid = spec.get("contest_id", "contest")
    cands = list(spec["candidates"])
    n = int(spec["n_cards"])
    tallies = true_tallies(spec)

    card_sel = [c for c in cands for _ in range(tallies[c])]
    card_sel += [UNDERVOTE] * (n - len(card_sel))
    derive_prng(seed, "gen:order").shuffle(card_sel)

    cvr_sel = list(card_sel)
    touched: set[int] = set()
    flip_rng = derive_prng(seed, "gen:flips")
    for flip in spec.get("flips", ()):
        src, dst, count = flip["from"], flip["to"], int(flip["count"])
        pool = [i for i in range(n) if cvr_sel[i] == src and i not in touched]
        if count > len(pool):
            raise ValueError(f"cannot flip {count} {src!r} votes; only {len(pool)} available")
        for k in flip_rng.sample(len(pool), count):
            cvr_sel[pool[k]] = dst
            touched.add(pool[k])
    rate = float(spec.get("error_rate", 0.0))
    if not 0 <= rate <= 1:
        raise ValueError("error_rate must be in [0, 1]")
    if rate > 0:
        err_rng = derive_prng(seed, "gen:errors")
        pool = [i for i in range(n) if i not in touched]
        choices = cands + [UNDERVOTE]
        for k in err_rng.sample(len(pool), min(len(pool), round(rate * n))):
            i = pool[k]
            others = [c for c in choices if c != cvr_sel[i]]
            cvr_sel[i] = others[err_rng.randbelow(len(others))]

    ids = _nonces(derive_prng(seed, "gen:ids"), n)
    mode = spec.get("imprint", "honest")
    if mode == "honest":
        imprint: list[str | None] = list(ids)
    elif mode == "attack":
        imprint = _attack_imprints(card_sel, cvr_sel, ids)
    else:
        raise ValueError(f"unknown imprint mode {mode!r}")

    frac = spec.get("supermajority_fraction")
    contest = Contest(
        contest_id=cid,
        candidates=tuple(cands),
        reported_winners=_reported_winners(spec, cvr_sel, cands),
        social_choice=spec.get("social_choice", SUPERMAJORITY if frac is not None else PLURALITY),
        card_upper_bound=int(spec.get("card_upper_bound", n)),
        risk_limit=float(spec.get("risk_limit", 0.05)),
        supermajority_fraction=None if frac is None else float(frac),
    )
    cvrs = tuple(CVR(id=ids[i], votes={cid: cvr_sel[i]}) for i in range(n))
    cards = tuple(BallotCard(card_index=i, imprinted_id=imprint[i], true_votes={cid: card_sel[i]}) for i in range(n))
    return Election(contests=(contest,), cvrs=cvrs, cards=cards)

"""Independent reference implementations used only by the tests."""

import math


def alpha_stopping_round(x, u_pop, N, alpha, without_replacement=True, d=100, eps=1e-7):
    """Iterate the ALPHA / shrink-trunc recurrence on a constant stream x.

    Written from the formulas, sharing no code with the package.  Returns the
    first draw count at which 1 / max T <= alpha, or None.
    """
    eta0 = u_pop / 2
    c = (eta0 - 0.5) / 2
    T = M = 1.0
    S = 0.0
    for j in range(N):
        mu = (N / 2 - S) / (N - j) if without_replacement else 0.5
        if mu <= 0:
            return j
        eta = min(u_pop - eps, max(mu + c / math.sqrt(d + j), (d * eta0 + S) / (d + j)))
        T *= x / mu * (eta - mu) / (u_pop - mu) + (u_pop - eta) / (u_pop - mu)
        M = max(M, T)
        S += x
        if 1 / M <= alpha:
            return j + 1
    return None


def card_sampling_audit(cvrs, cards, contest_id, draws):
    """Conventional comparison audit that samples physical cards and compares each
    with the CVR carrying the card's imprinted id; returns the number of mismatches."""
    by_id = {c.id: c for c in cvrs}
    mismatches = 0
    for k in draws:
        card = cards[k]
        cvr = by_id.get(card.imprinted_id)
        if cvr is None or cvr.votes.get(contest_id) != card.true_votes.get(contest_id):
            mismatches += 1
    return mismatches

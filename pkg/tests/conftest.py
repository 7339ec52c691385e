import pytest

from noncesuch.election import CVR, BallotCard, Contest, Election


def alice_bob_contest(winner="Bob", n_cards=3):
    return Contest("mayor", ("Alice", "Bob"), (winner,), card_upper_bound=n_cards)


def alice_bob_cvrs():
    return (
        CVR("17", {"mayor": "Alice"}),
        CVR("91", {"mayor": "Bob"}),
        CVR("202", {"mayor": "Bob"}),
    )


def alice_bob_attack_cards():
    # two Alice cards both imprinted 17, one Bob card imprinted 91; nothing carries 202
    return (
        BallotCard(0, "17", {"mayor": "Alice"}),
        BallotCard(1, "17", {"mayor": "Alice"}),
        BallotCard(2, "91", {"mayor": "Bob"}),
    )


@pytest.fixture
def attack_election():
    return Election((alice_bob_contest(),), alice_bob_cvrs(), alice_bob_attack_cards())


@pytest.fixture
def honest_election():
    cvrs = alice_bob_cvrs()
    cards = tuple(BallotCard(i, c.id, dict(c.votes)) for i, c in enumerate(cvrs))
    return Election((alice_bob_contest(),), cvrs, cards)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_RESULTS: list[str] = []


def record_criterion(number, name, ok, detail):
    line = f"criterion {number} [{name}]: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

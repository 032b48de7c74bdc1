import pytest

from waterfall_abort.domain import AuctionObservation, RequestRecord
from waterfall_abort.simulator import SimConfig, generate


def make_request(rid="r1", pub="p0", tags=("a", "b", "c"), would_win=(False, True, False),
                 payoffs=None, median_bid=0.001, context=None, oracle=True):
    """A RequestRecord built from per-position would-win flags, the way the simulator does it."""
    payoffs = payoffs or [0.01 * (k + 1) for k in range(len(tags))]
    n = len(tags)
    first = next((k for k, w in enumerate(would_win) if w), None)
    played = n if first is None else first + 1
    rows = []
    for k, t in enumerate(tags):
        if not oracle and k >= played:
            break
        rows.append(AuctionObservation(
            request_id=rid, publisher_id=pub, tag_id=t, position=k + 1,
            won=first == k,
            counterfactual_would_win=bool(would_win[k]) if oracle else None,
            counterfactual_payoff=(payoffs[k] if would_win[k] else None) if oracle else None,
        ))
    return RequestRecord(
        request_id=rid, publisher_id=pub,
        payoff=0.0 if first is None else payoffs[first],
        num_played=played, waterfall_length=n, median_bid=median_bid,
        context=context if context is not None else {"segment": "v0"},
        auctions=rows,
    )


@pytest.fixture(scope="session")
def small_config():
    return SimConfig(seed=7, num_publishers=4, requests_per_publisher=3000)


@pytest.fixture(scope="session")
def small_log(small_config):
    return generate(small_config, 1)


@pytest.fixture(scope="session")
def small_test_log(small_config):
    return generate(small_config, 2)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])

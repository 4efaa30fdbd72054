"""Shared pytest hooks: a per-criterion verdict block for the acceptance run.

Acceptance tests are named test_criterion_NN_*; after the run, one line per
criterion reports PASS or FAIL plus any measured detail the tests recorded.
"""

import re
from collections import defaultdict

import pytest

CRITERIA = {
    1: "analytic gradients match finite differences",
    2: "attention rows sum to 1; permutation equivariance",
    3: "loss identities and Monte-Carlo KL agreement",
    4: "score blend reductions at gamma extremes",
    5: "tail fit recovers planted parameters and quantiles",
    6: "adjustment protocols match brute-force oracles",
    7: "synthetic benchmark meets F1 and diagnosis targets",
    8: "full model at least as good as each single-head ablation",
    9: "rerun reproduces checkpoints and score files byte for byte",
    10: "checkpoint roundtrip stable; bad shapes rejected",
}

_details: dict[int, str] = {}
_pattern = re.compile(r"test_criterion_(\d+)")


@pytest.fixture
def criterion_detail():
    """Lets an acceptance test attach a measured summary to its verdict."""

    def record(number: int, text: str) -> None:
        _details[number] = text

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = defaultdict(set)
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            match = _pattern.search(getattr(report, "nodeid", ""))
            if match:
                outcomes[int(match.group(1))].add(status)
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        statuses = outcomes[number]
        if statuses & {"failed", "error"}:
            verdict = "FAIL"
        elif statuses == {"skipped"}:
            verdict = "SKIP"
        else:
            verdict = "PASS"
        detail = _details.get(number, CRITERIA.get(number, ""))
        terminalreporter.write_line(
            f"[criterion {number:02d}] {verdict} - {detail}")

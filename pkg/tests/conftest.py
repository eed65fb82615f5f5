import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# Deterministic property tests: reruns of the suite must behave identically.
settings.register_profile(
    "ci",
    derandomize=True,
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    results = {}
    for key, word in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(key, []):
            m = re.search(r"test_criterion_(\d+)", getattr(rep, "nodeid", ""))
            if m:
                num = int(m.group(1))
                if word == "FAIL" or num not in results:
                    results[num] = word
    if results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(f"[{results[num]}] criterion {num}")

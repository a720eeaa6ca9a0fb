"""Acceptance suite: every criterion at its stated tolerance.

Each test delegates to the corresponding criterion function in
holoseis.acceptance (the same functions the `holoseis selftest` subcommand
runs), so the CLI and pytest exercise identical code paths and print one
pass/fail line per criterion.
"""

import pytest

from holoseis import acceptance


@pytest.mark.parametrize(
    "number", sorted(acceptance.CRITERIA), ids=lambda n: f"criterion_{n:02d}"
)
def test_criterion(number):
    name, func = acceptance.CRITERIA[number]
    passed, details = func()
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({name}): {details}")
    assert passed, f"criterion {number} ({name}): {details}"

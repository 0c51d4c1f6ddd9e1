"""Runs every acceptance criterion and prints one PASS/FAIL line per criterion."""

import pytest

from mppi_lab.acceptance import CRITERIA, AcceptanceContext, run_criterion


@pytest.fixture(scope="module")
def ctx():
    return AcceptanceContext()


@pytest.mark.parametrize("criterion", CRITERIA, ids=[c.key for c in CRITERIA])
def test_criterion(criterion, ctx, capsys):
    result = run_criterion(criterion, ctx)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.detail

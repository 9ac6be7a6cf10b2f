"""Acceptance suite: every criterion at its stated tolerance, one line per criterion."""

from __future__ import annotations

import pytest

from aclab.acceptance import FULL, run_suite


@pytest.fixture(scope="module")
def results():
    out = {}

    def report(r):
        out[r.number] = r
        print(r.line(), flush=True)

    run_suite("full", progress=report)
    return out


@pytest.mark.parametrize("number", FULL)
def test_criterion(results, number, capsys):
    r = results[number]
    with capsys.disabled():
        print("\n" + r.line())
    assert r.passed, r.line()

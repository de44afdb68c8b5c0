"""The ten acceptance criteria at their default thresholds, one line each."""

import pytest

from twistgap.acceptance import CRITERIA, DEFAULT_THRESHOLDS, run_criteria

RUNTIME_LIMITS = {1: 60, 2: 300, 3: 60, 4: 600, 5: 900, 6: 900, 7: 900, 8: 600, 9: 120, 10: 1800}


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    (res,) = run_criteria([number], DEFAULT_THRESHOLDS)
    with capsys.disabled():
        print(f"\n{res.line()}")
    assert res.status == "pass", res.line()
    assert res.seconds <= RUNTIME_LIMITS[number]

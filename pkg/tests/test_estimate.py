import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rsjd.estimate import MCEstimate, agree, combined_se


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200))
def test_from_samples_matches_numpy(xs):
    e = MCEstimate.from_samples(xs)
    a = np.asarray(xs)
    assert e.value == pytest.approx(a.mean(), abs=1e-9)
    assert e.se == pytest.approx(a.std(ddof=1) / math.sqrt(len(a)), abs=1e-9)
    assert e.n == len(a)


def test_complex_samples_and_guards():
    e = MCEstimate.from_samples(np.array([1 + 1j, 1 - 1j, 3 + 0j]))
    assert e.value == pytest.approx(5 / 3)
    with pytest.raises(ValueError):
        MCEstimate.from_samples([1.0])
    with pytest.raises(ValueError):
        MCEstimate(0.0, -1.0, 10)


def test_agreement_rule():
    a = MCEstimate(1.0, 0.1, 100)
    b = MCEstimate(1.5, 0.1, 100)
    assert combined_se(a, b) == pytest.approx(math.sqrt(0.02))
    assert not agree(a, b) and agree(a, b, z=4.0) and agree(a, b, slack=0.1)
    assert a.band() == pytest.approx(0.3)
    assert MCEstimate(0, 0.1, 5, bias_bound=0.2).band() == pytest.approx(0.5)

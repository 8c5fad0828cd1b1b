import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpmdp.calibration import PrivacyBudget
from tpmdp.composition import CompositionMode, CompositionRequest, compose, compose_advanced, compose_basic

B = PrivacyBudget


def test_basic_examples():
    assert compose_basic([[B(0.1, 1e-5)], [B(0.1, 1e-5)]]) == [B(0.2, 2e-5)]
    assert compose_basic([[B(0.3, 1e-6), B(1.0, 0.0)]]) == [B(0.3, 1e-6), B(1.0, 0.0)]
    assert compose_basic([[B(0.1, 1e-5)], [B(0.2, 1e-5)]])[0].epsilon == pytest.approx(0.3)


def test_basic_clamps_delta():
    assert compose_basic([[B(1, 0.7)], [B(1, 0.7)]])[0].delta == 1.0


def test_advanced_oracle():
    # 30-digit mpmath evaluation of the same expression.
    got = compose_advanced(0.1, 1e-6, 10, 1e-5)
    assert got.epsilon == pytest.approx(1.622598047460794, rel=1e-12)
    assert got.delta == pytest.approx(10 * 1e-6 + 1e-5)


def test_advanced_edge_cases():
    assert compose_advanced(0.0, 1e-6, 10, 1e-5).epsilon == 0.0
    assert compose_advanced(0.5, 1e-6, 1, 1e-9).epsilon > 0.5
    with pytest.raises(ValueError):
        compose_advanced(0.1, 1e-6, 10, 0.0)
    with pytest.raises(ValueError):
        compose_advanced(0.1, 1e-6, 0, 1e-5)


def test_advanced_growth_is_sqrt_m_for_small_eps():
    e = [compose_advanced(1e-3, 0, m, 1e-6).epsilon for m in (10, 100, 1000)]
    assert e[1] / e[0] == pytest.approx(math.sqrt(10), rel=0.02)
    assert e[2] / e[1] == pytest.approx(math.sqrt(10), rel=0.05)


def test_request_validation():
    with pytest.raises(ValueError):
        CompositionRequest(((B(0.1, 0),), (B(0.1, 0), B(0.2, 0))))
    with pytest.raises(ValueError):
        CompositionRequest(((B(0.1, 0),), (B(0.2, 0),)), CompositionMode.ADVANCED, (1e-5,))
    with pytest.raises(ValueError):
        CompositionRequest(((B(0.1, 0),),), thresholds=(2, 3))
    req = CompositionRequest(((B(0.1, 1e-6), B(0.2, 1e-6)),) * 3, CompositionMode.ADVANCED, (1e-5, 1e-6))
    out = compose(req)
    assert out[0] == compose_advanced(0.1, 1e-6, 3, 1e-5)
    assert out[1] == compose_advanced(0.2, 1e-6, 3, 1e-6)


budget = st.builds(B, st.floats(0, 5), st.floats(0, 1e-3))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.lists(st.lists(budget, min_size=n, max_size=n), min_size=1, max_size=6)),
       st.randoms(use_true_random=False))
def test_basic_exact_and_order_free(table, rnd):
    out = compose_basic(table)
    for i, b in enumerate(out):
        assert b.epsilon == math.fsum(row[i].epsilon for row in table)
        assert b.delta == min(1.0, math.fsum(row[i].delta for row in table))
    shuffled = list(table)
    rnd.shuffle(shuffled)
    assert compose_basic(shuffled) == out
    if len(table) >= 2:
        head = compose_basic(table[:1] + [compose_basic(table[1:])])
        np.testing.assert_allclose([b.epsilon for b in head], [b.epsilon for b in out], rtol=1e-12)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocdci.grid import ScaleGrid, build_scale_grid


def test_p2_beta1():
    g = build_scale_grid(2, 1.0)
    assert g.levels == 2
    assert g.b_min == pytest.approx(1 / math.sqrt(8), rel=1e-15)
    assert g.positive_scales == pytest.approx((0.3535533905932738, 0.5, 0.7071067811865476), rel=1e-15)
    assert g.scales_B0 == (g.b_min,)


def test_beta_doubling_is_exact():
    g1, g2 = ScaleGrid(2, 1.0), ScaleGrid(2, 2.0)
    assert all(2 * a == b for a, b in zip(g1.positive_scales, g2.positive_scales))
    g1, g2 = ScaleGrid(37, 0.3), ScaleGrid(37, 0.6)
    assert np.array_equal(2 * g1.signed_scales(), g2.signed_scales())


def test_p100_against_high_precision():
    # mpmath, 40 digits: 1 / sqrt(128 * log2(200))
    g = ScaleGrid(100, 1.0)
    assert g.levels == 7
    assert g.b_min == pytest.approx(0.03196971475179341, rel=1e-14)
    assert g.n_signed - 2 == 14


def test_signed_order_and_tie_convention():
    g = ScaleGrid(5, 1.0)
    s = g.signed_scales()
    assert s[0] == g.b_min and s[1] == -g.b_min
    assert np.all(s[0::2] > 0) and np.array_equal(s[1::2], -s[0::2])
    assert np.all(np.diff(s[0::2]) > 0)
    assert g.scale_index(-s[4]) == 5
    with pytest.raises(KeyError):
        g.scale_index(0.123)


@pytest.mark.parametrize("p,beta", [(1, 1.0), (0, 1.0), (4, 0.0), (4, -1.0), (4, math.nan)])
def test_rejects_bad_inputs(p, beta):
    with pytest.raises(ValueError):
        ScaleGrid(p, beta)


@given(st.integers(2, 4096), st.sampled_from([0.1, 1.0, 10.0]))
@settings(max_examples=300, deadline=None)
def test_defining_identity(p, beta):
    g = ScaleGrid(p, beta)
    assert 2**g.levels <= 2 * p < 2 ** (g.levels + 1)
    recovered = math.sqrt(g.b_min**2 * 2**g.levels * math.log2(2 * p))
    assert recovered == pytest.approx(beta, rel=1e-10)
    mags = np.array(g.positive_scales)
    assert len(mags) == g.levels + 1
    assert np.allclose(mags[1:] / mags[:-1], math.sqrt(2), rtol=1e-12)

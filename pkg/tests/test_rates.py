import math

import pytest
from scipy.optimize import brentq

from pdc_repeater.chain import ChainConfig, EndToEndResult
from pdc_repeater.devices import DetectorSpec
from pdc_repeater.fock_core import BranchEnsemble
from pdc_repeater.rates import (
    RateRow,
    direct_bps,
    h2,
    key_rate_bps,
    secret_fraction,
    tgw_bps,
    tgw_per_mode,
)


def result(p_link=(1.0,), p_swap=(), p_ab=1.0, q=(0.0, 0.0)):
    return EndToEndResult(p_link, p_swap, p_ab, q[0], q[1], BranchEnsemble.empty(4))


def test_h2():
    assert h2(0.5) == 1.0
    assert h2(0.0) == 0.0 and h2(1.0) == 0.0
    # the h2 = 1/2 crossing sits at q = 0.11003, within 5e-4 of the quoted 0.1104
    root = brentq(lambda q: h2(q) - 0.5, 0.05, 0.2)
    assert root == pytest.approx(0.1104, abs=5e-4)
    assert h2(0.1104) == pytest.approx(0.5, abs=2e-3)
    with pytest.raises(ValueError):
        h2(1.2)


def test_secret_fraction():
    assert secret_fraction(0.0) == 0.5
    assert secret_fraction(0.1104) == pytest.approx(0.0, abs=5e-4)
    assert secret_fraction(0.25) == 0.0
    qs = [i / 100 for i in range(51)]
    vals = [secret_fraction(q) for q in qs]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_key_rate_zero_distance_ideal():
    assert key_rate_bps(result(p_link=(0.5,)), 3e7) == pytest.approx(7.5e6)


def test_key_rate_uses_mean_qber():
    r = result(q=(0.0, 0.2))
    assert key_rate_bps(r, 1.0) == pytest.approx(0.5 - h2(0.1))
    assert key_rate_bps(result(q=(0.12, 0.12)), 1.0) == 0.0
    assert key_rate_bps(result(q=(None, None)), 1.0) == 0.0


def test_key_rate_survives_tiny_products():
    r = result(p_link=(1e-200, 1e-200), p_swap=(0.5,), p_ab=0.5)
    assert key_rate_bps(r, 3e7) == 0.0 or key_rate_bps(r, 3e7) > 0


def test_tgw():
    assert tgw_per_mode(0.01) == pytest.approx(0.02886, abs=1e-4)
    eta = 1e-8
    assert tgw_per_mode(eta) == pytest.approx(2 * eta / math.log(2), rel=1e-6)
    assert tgw_per_mode(1.0) == math.inf
    assert tgw_bps(0.0, 0.2, 3e7, 10) == math.inf
    assert tgw_bps(100, 0.2, 3e7, 10) == pytest.approx(3e8 * tgw_per_mode(0.01))


def test_direct_baseline():
    cfg = ChainConfig(0.0, 1, 0.2, freq_modes=2)
    assert direct_bps(0.0, cfg) == pytest.approx(3e7 * 2 * 0.25)
    det = DetectorSpec(eta=0.95, dark_rate_hz=1.0)
    cfg = ChainConfig(0.0, 1, 0.2, endpoint_detectors=det, freq_modes=10000, spatial_modes=100)
    grid = [50.0 * k for k in range(1, 29)]
    vals = [direct_bps(d, cfg) for d in grid]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(direct_bps(d, cfg) <= tgw_bps(d, 0.2, 3e7, cfg.modes) for d in grid)


def test_rate_row_invariants():
    with pytest.raises(ValueError):
        RateRow(1.0, 1, 0.1, 0.1, 0.1, 1.0, 0.1, 0.0, 0.0, 0.6, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        RateRow(1.0, 1, 0.1, 0.1, 0.1, 1.0, 0.1, 0.0, 0.0, 0.4, -1.0, 1.0, 1.0)

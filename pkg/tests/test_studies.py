import numpy as np
import pytest

from stochinv import InvalidArgumentError, NoiseRealization, build_grid, get_scenario, refine_noise
from stochinv.studies import fit_slope, nested_levels, ou_exact_terminal, ou_strong_convergence, rms


def test_fit_slope_recovers_a_power_law():
    hs = 2.0 ** -np.arange(3, 8)
    fit = fit_slope(hs, 3.0 * hs ** 0.75)
    assert fit.slope == pytest.approx(0.75, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log2(3.0), abs=1e-12)
    assert fit.residual <= 1e-12


def test_fit_slope_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        fit_slope([0.1], [0.2])
    with pytest.raises(InvalidArgumentError):
        fit_slope([0.1, 0.05], [0.2, 0.0])


def test_nested_levels_aggregate_exactly():
    s = get_scenario("ou1d")
    levels = nested_levels(s, 1.0, 8, 3, [0, 1])
    assert [lv[0].grid.n_steps for lv in levels] == [8, 16, 32]
    for p in range(2):
        fine = levels[2][p].dW.reshape(8, 4)
        assert np.allclose(fine.sum(axis=1), levels[0][p].dW[:, 0], atol=1e-14)
        assert levels[2][p].events == levels[0][p].events


def test_ou_closed_form_without_noise():
    g = build_grid(0.0, 1.0, 10)
    nz = NoiseRealization.from_events(g, 1, [(0.5, 0)])
    exact = ou_exact_terminal(2.0, 0.0, 1.0, refine_noise(nz, 2))
    assert exact == pytest.approx(2.0 * np.exp(-1.0) + np.exp(-0.5), rel=1e-14)


def test_ou_strong_order_is_one():
    res = ou_strong_convergence(get_scenario("ou1d"), 1.0, 1.0, 32, 3, 60)
    assert 0.7 <= res.fit.slope <= 1.3
    assert np.all(np.diff(res.errors) < 0)


def test_rms():
    assert rms([3.0, -4.0]) == pytest.approx(np.sqrt(12.5))

import numpy as np
import pytest

from stochinv import (
    NoiseRealization,
    OracleFailureError,
    build_grid,
    get_scenario,
    jacobian_fd_oracle,
    sample_noise,
    simulate_jacobian,
)
from stochinv.jacobian import divergence_integral, liouville_gap


def test_freeze_jacobian_is_identity(noises):
    s = get_scenario("freeze")
    _, js = simulate_jacobian(s, [0.2], noises(s, 32)[0])
    assert np.all(js.matrices == 1.0)
    assert np.all(js.dets == 1.0)


@pytest.mark.parametrize("name,x0", [("rot2d", [1.0, 0.3]), ("pendulum2d", [0.5, -0.4]),
                                     ("tanhjump1d", [0.7]), ("ou1d", [0.2])])
def test_variational_matches_bump_oracle(name, x0):
    s = get_scenario(name)
    nz = sample_noise(build_grid(0.0, 1.0, 256), s.m, s.mark_space, 11)
    _, js = simulate_jacobian(s, x0, nz)
    fd = jacobian_fd_oracle(s, x0, nz, delta=1e-4)
    assert np.max(np.abs(js.terminal - fd)) <= 1e-6


def test_linear_decay_determinant_is_the_discrete_product():
    s = get_scenario("decay1d", rate_of_decay=2.0)
    g = build_grid(0.0, 1.0, 64)
    _, js = simulate_jacobian(s, [1.0], NoiseRealization.from_events(g, s.m))
    assert np.isclose(js.dets[-1], (1 - 2.0 * g.h) ** 64, rtol=1e-13)
    assert abs(js.dets[-1] - np.exp(-2.0)) <= 2 * g.h


def test_rotation_flow_determinant_stays_near_one():
    s = get_scenario("rotflow2d")
    g = build_grid(0.0, 1.0, 512)
    path, js = simulate_jacobian(s, [1.0, 0.0], NoiseRealization.from_events(g, s.m))
    assert abs(js.dets[-1] - 1.0) <= 2 * g.h
    assert divergence_integral(s, path) == 0.0


def test_liouville_gap_shrinks_with_h():
    s = get_scenario("decay1d")
    gaps = [liouville_gap(s, [1.0], NoiseRealization.from_events(build_grid(0.0, 1.0, n), s.m))
            for n in (64, 128, 256)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[-1] <= 2 / 256


def test_oracle_fails_outside_the_box():
    s = get_scenario("rot2d")
    nz = sample_noise(build_grid(0.0, 1.0, 8), 1, s.mark_space, 0)
    with pytest.raises(OracleFailureError):
        jacobian_fd_oracle(s, [2.0, 0.0], nz)

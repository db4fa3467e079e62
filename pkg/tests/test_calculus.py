import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochinv import (
    CoefficientField,
    DomainExitError,
    InvalidArgumentError,
    InversionError,
    MarkSpace,
    NoiseRealization,
    Scenario,
    SingularJumpError,
    build_grid,
    refine_noise,
    composite_consistency,
    euler_ensemble,
    evolve_scalar_field,
    get_field,
    get_field_process,
    get_scenario,
    inverse_jump_map,
    ito_series,
    ito_wentzell_series,
    sample_noise,
    simulate_path,
)
from stochinv.calculus import (
    _stencil_derivatives,
    _stencil_offsets,
    composite_terminal_gaps,
    invert_jump,
    ito_increments,
    ito_wentzell_ensemble,
    jump_roundtrip_error,
)
from stochinv.noise import NoiseBatch


def _path(s, x0, n_steps=128, seed=0):
    nz = sample_noise(build_grid(0.0, 1.0, n_steps), s.m, s.mark_space, seed)
    return simulate_path(s, x0, nz), nz


def test_constant_field_has_zero_increments():
    s = get_scenario("pendulum2d")
    p, nz = _path(s, [0.3, 0.1])
    ser = ito_series(get_field("const", value=4.0), s, p, nz)
    assert np.all(ser.increments == 0.0)
    assert ser.discrepancy == 0.0


@pytest.mark.parametrize("name,x0", [("ou1d", [0.5]), ("pendulum2d", [0.3, 0.1]), ("rot2d", [1.0, 0.0])])
def test_identity_field_reproduces_path_increments(name, x0):
    s = get_scenario(name)
    p, nz = _path(s, x0)
    ser = ito_series(get_field("identity"), s, p, nz)
    assert np.allclose(ser.increments, np.diff(p.states[:, 0]), rtol=0, atol=1e-13)
    assert ser.discrepancy <= 1e-12
    assert np.allclose(ser.cumulative, np.cumsum(ser.increments))


@pytest.mark.parametrize("name", ["shift1d", "tanhjump1d"])
def test_pure_jump_systems_have_exact_series(name):
    s = get_scenario(name)
    p, nz = _path(s, [0.4], seed=5)
    assert len(p.applied_events) > 0
    ser = ito_series(get_field("wave"), s, p, nz)
    assert ser.discrepancy <= 1e-12


def test_square_of_brownian_motion_increment_formula():
    s = get_scenario("bm1d")
    p, nz = _path(s, [0.2], n_steps=16)
    ser = ito_series(get_field("square"), s, p, nz)
    x = p.states[:-1, 0]
    assert np.allclose(ser.increments, nz.grid.h + 2 * x * nz.dW[:, 0], atol=1e-15)
    # the gap is exactly the sum of dW^2 - h
    assert np.isclose(ser.discrepancy, abs(np.sum(nz.dW[:, 0] ** 2 - nz.grid.h)), atol=1e-13)


def test_mismatched_grids_are_rejected():
    s = get_scenario("bm1d")
    p, _ = _path(s, [0.0], n_steps=16)
    other = sample_noise(build_grid(0.0, 1.0, 32), 1, s.mark_space, 0)
    with pytest.raises(InvalidArgumentError):
        ito_series(get_field("square"), s, p, other)


def test_inverse_of_constant_shift():
    s = get_scenario("shift1d", c=0.75)
    pre = inverse_jump_map(s, 0.0, [1.0], s.mark_space.mark(0))
    assert pre.y[0] == 0.25
    assert pre.det_inv == 1.0
    assert pre.iterations == 0


def test_inverse_of_rotation():
    s = get_scenario("rot2d", angles=(0.9,))
    x = np.array([0.3, -1.2])
    pre = inverse_jump_map(s, 0.0, x, s.mark_space.mark(0))
    c, sn = np.cos(0.9), np.sin(0.9)
    Rinv = np.array([[c, sn], [-sn, c]])
    assert np.allclose(pre.y, Rinv @ x, atol=1e-14)
    assert np.isclose(pre.det_inv, 1.0, rtol=1e-14)


def test_inverse_of_tanh_jump_converges_fast():
    s = get_scenario("tanhjump1d", scale=0.1)
    pre = inverse_jump_map(s, 0.0, [0.5], 1.0)
    assert abs(pre.y[0] + 0.1 * np.tanh(pre.y[0]) - 0.5) <= 1e-12
    assert pre.iterations <= 8
    assert np.isclose(pre.det_inv, 1.0 / (1.0 + 0.1 / np.cosh(pre.y[0]) ** 2))


def _scenario_with_jump(g, dg=None):
    c = CoefficientField(1, 0, lambda t, x: 0.0 * x, lambda t, x: 0.0, g, dg=dg)
    return Scenario("custom", c, MarkSpace((1.0,), (1.0,)), ((-10.0, 10.0),))


def test_singular_jump_is_reported():
    s = _scenario_with_jump(lambda t, x, gam: -x, lambda t, x, gam: -np.ones(np.shape(x) + (1,)))
    with pytest.raises(SingularJumpError):
        inverse_jump_map(s, 0.0, [0.5], 1.0)


def test_nonconvergence_is_reported():
    # y + g(y) = arctan(y) never reaches 2
    s = _scenario_with_jump(lambda t, x, gam: np.arctan(x) - x)
    with pytest.raises(InversionError):
        inverse_jump_map(s, 0.0, [2.0], 1.0)
    t = get_scenario("tanhjump1d", scale=0.9)
    with pytest.raises(InversionError):
        invert_jump(t, 0.0, np.array([[3.0]]), 1.0, max_iter=1)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-5.0, max_value=5.0), st.floats(min_value=0.05, max_value=0.9))
def test_inverse_round_trip(x, scale):
    s = get_scenario("tanhjump1d", scale=scale)
    post = x + scale * np.tanh(x)
    pre = inverse_jump_map(s, 0.0, [post], 1.0)
    assert abs(pre.y[0] - x) <= 1e-10


def test_forward_and_preimage_jump_summands_agree():
    for name in ("rot2d", "tanhjump1d", "shift1d"):
        s = get_scenario(name)
        pts = s.lattice(6)
        u = get_field("wave")
        for j in range(len(s.mark_space)):
            assert jump_roundtrip_error(s, u, pts, s.mark_space.mark(j)) <= 1e-10


def test_stencil_is_exact_for_quadratics():
    offs = _stencil_offsets(2)
    assert offs.shape == (13, 2)
    x = np.array([0.7, -1.3])
    delta = 1e-3 * np.maximum(1.0, np.abs(x))
    Y = x + offs * delta
    q = lambda y: 1.5 * y[..., 0] ** 2 - y[..., 0] * y[..., 1] + 0.25 * y[..., 1] ** 2 + y[..., 1]  # noqa: E731
    grad, hess = _stencil_derivatives(q(Y), delta, 2)
    assert np.allclose(grad, [3.0 * x[0] - x[1], -x[0] + 0.5 * x[1] + 1.0], atol=1e-9)
    assert np.allclose(hess, [[3.0, -1.0], [-1.0, 0.5]], atol=1e-5)


SCENARIOS_FOR_REDUCTION = [("rot2d", [1.0, 0.2]), ("pendulum2d", [0.4, -0.3]), ("ou1d", [0.3]),
                           ("bm1d", [0.1]), ("tanhjump1d", [0.5]), ("freeze", [0.2])]


@pytest.mark.parametrize("name,x0", SCENARIOS_FOR_REDUCTION)
def test_wentzell_reduces_to_ito_for_a_fixed_field(name, x0):
    s = get_scenario(name)
    nzs = [sample_noise(build_grid(0.0, 1.0, 64), s.m, s.mark_space, k) for k in range(4)]
    ens = euler_ensemble(s, x0, nzs)
    f = get_field("wave")
    proc = get_field_process("null", n=s.n, m=s.m)
    ito = ito_increments(f, s, ens.grid, ens.states, NoiseBatch(nzs).dW, ens.jumps)
    iw = ito_wentzell_ensemble(proc, s, ens, nzs, f).increments
    scale = np.maximum(np.abs(ito), np.abs(iw))
    assert np.all(np.abs(ito - iw) <= 1e-12 * scale)


@pytest.mark.parametrize("proc_name", ["clocked1d", "null"])
def test_frozen_path_composite_is_the_field_at_the_start(proc_name):
    s = get_scenario("freeze")
    nz = sample_noise(build_grid(0.0, 1.0, 50), 1, s.mark_space, 2)
    assert nz.events
    proc = get_field_process(proc_name)
    ens = euler_ensemble(s, [0.3], nz)
    res = ito_wentzell_ensemble(proc, s, ens, nz)
    tr = evolve_scalar_field(proc, proc.initial, [[0.3]], nz, s.mark_space)
    assert np.array_equal(res.composite[0], tr.values[:, 0])
    rep = composite_consistency(proc, s, [0.3], nz)
    assert rep.terminal == 0.0


def test_fixed_field_on_deterministic_path_converges():
    s = get_scenario("rotflow2d")
    proc = get_field_process("null", n=2, m=1)
    gaps = []
    for n in (32, 64, 128):
        nz = NoiseRealization.from_events(build_grid(0.0, 1.0, n), 1)
        gaps.append(composite_consistency(proc, s, [1.0, 0.5], nz).terminal)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[1] / gaps[2] > 1.6


def test_closed_form_history_matches_replay():
    s = get_scenario("rot2d")
    proc = get_field_process("rot2d_mixed")
    replay = dataclasses.replace(proc, time_homogeneous=False)
    nzs = [sample_noise(build_grid(0.0, 1.0, 32), 1, s.mark_space, k) for k in range(3)]
    ens = euler_ensemble(s, [1.0, 0.2], nzs)
    a = ito_wentzell_ensemble(proc, s, ens, nzs)
    b = ito_wentzell_ensemble(replay, s, ens, nzs)
    assert np.allclose(a.increments, b.increments, rtol=0, atol=1e-9)
    assert np.allclose(a.field_on_path, b.field_on_path, rtol=0, atol=1e-12)


def test_mixed_field_gap_is_small_and_shrinks():
    s = get_scenario("rot2d")
    proc = get_field_process("rot2d_mixed")
    base = [sample_noise(build_grid(0.0, 1.0, 64), 1, s.mark_space, k) for k in range(200)]
    fine = [refine_noise(nz, 8) for nz in base]
    coarse_gap = np.sqrt(np.mean(composite_terminal_gaps(proc, s, [1.0, 0.2], base) ** 2))
    fine_gap = np.sqrt(np.mean(composite_terminal_gaps(proc, s, [1.0, 0.2], fine) ** 2))
    assert fine_gap < 0.6 * coarse_gap


def test_stencil_leaving_the_box_is_an_error():
    s = get_scenario("rot2d")
    nz = sample_noise(build_grid(0.0, 1.0, 8), 1, s.mark_space, 0)
    with pytest.raises(DomainExitError):
        ito_wentzell_series(get_field_process("rot2d_mixed"), s, [2.0, 0.0], nz)

"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a single PASS/FAIL line; the lines are printed in the
pytest terminal summary and also when this file is run as a script.
"""
import contextlib
import io

import numpy as np

from stochinv import (
    NoiseRealization,
    build_grid,
    check_conditions,
    composite_consistency,
    euler_ensemble,
    gaussian_kernel,
    get_field,
    get_field_process,
    get_scenario,
    ito_series,
    jacobian_fd_oracle,
    kernel_ratio_integrals,
    kernel_spde_solve,
    list_scenarios,
    sample_noise,
    simulate_jacobian,
    simulate_path,
    validate_scenario,
    volume_invariance,
)
from stochinv.calculus import ito_increments, ito_wentzell_ensemble
from stochinv.cli import main as cli_main
from stochinv.jacobian import divergence_integral
from stochinv.kernel import grid_ratio_integrals, grid_vs_characteristics
from stochinv.noise import NoiseBatch
from stochinv.studies import conservation_study, ito_study, ou_strong_convergence, wentzell_study

try:
    from conftest import record_acceptance
except ImportError:  # run as a script
    def record_acceptance(line):
        pass


def _report(number: int, title: str, checks):
    """checks: (label, value, tolerance text, ok)."""
    ok = all(c[3] for c in checks)
    detail = "; ".join(f"{label}={value:.3g} [{tol}]{'' if good else ' FAILED'}"
                       for label, value, tol, good in checks)
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
    record_acceptance(line)
    print(line)
    assert ok, line


def _quiet(s, n_steps, T=1.0):
    return NoiseRealization.from_events(build_grid(0.0, T, n_steps), s.m)


def test_criterion_01_scenario_validation():
    worst = 0.0
    for name in list_scenarios():
        s = get_scenario(name)
        worst = max(worst, validate_scenario(s, s.lattice(5), delta=1e-5, tol=1e-6).max_error)
    _report(1, f"derivative validation on {len(list_scenarios())} scenarios",
            [("max_error", worst, "<= 1e-6", worst <= 1e-6)])


def test_criterion_02_integrator_strong_convergence():
    s = get_scenario("ou1d", sigma=0.5, c=1.0, rate=1.0)
    res = ou_strong_convergence(s, 1.0, 1.0, 64, 4, 200, seed=0)
    slope = res.fit.slope
    _report(2, "ou1d terminal RMS error, h=2^-6..2^-9, 200 paths",
            [("slope", slope, "in [0.7, 1.3]", 0.7 <= slope <= 1.3)])


def test_criterion_03_jacobian_oracle():
    s = get_scenario("rot2d")
    g = build_grid(0.0, 1.0, 2 ** 10)
    worst = 0.0
    for seed in range(10):
        nz = sample_noise(g, 1, s.mark_space, seed)
        _, js = simulate_jacobian(s, [1.0, 0.3], nz)
        fd = jacobian_fd_oracle(s, [1.0, 0.3], nz, delta=1e-4)
        worst = max(worst, float(np.max(np.abs(js.terminal - fd))))

    fz = get_scenario("freeze")
    nz = sample_noise(g, 1, fz.mark_space, 0)
    _, jf = simulate_jacobian(fz, [0.2], nz)
    freeze_exact = bool(np.all(jf.matrices == 1.0)) and bool(np.all(jacobian_fd_oracle(fz, [0.2], nz) == 1.0))

    h = 2.0 ** -8
    liouville = 0.0
    for name, x0 in (("decay1d", [1.0]), ("rotflow2d", [1.0, 0.0]), ("drift1d", [0.0])):
        d = get_scenario(name)
        path, js = simulate_jacobian(d, x0, _quiet(d, 256))
        liouville = max(liouville, abs(js.dets[-1] - np.exp(divergence_integral(d, path))))
    _report(3, "variational vs bump Jacobian (rot2d, h=2^-10, 10 seeds)", [
        ("max|J_var-J_fd|", worst, "<= 5e-3", worst <= 5e-3),
        ("freeze_exact", float(freeze_exact), "== 1", freeze_exact),
        ("max|detJ-exp(int div a)|", liouville, f"<= 2h={2 * h:.3g}", liouville <= 2 * h),
    ])


def test_criterion_04_ito_formula():
    worst = 0.0
    for name, x0 in (("rot2d", [1.0, 0.2]), ("pendulum2d", [0.3, -0.1]), ("ou1d", [0.5])):
        s = get_scenario(name)
        for seed in range(3):
            nz = sample_noise(build_grid(0.0, 1.0, 128), s.m, s.mark_space, seed)
            p = simulate_path(s, x0, nz)
            worst = max(worst, ito_series(get_field("const"), s, p, nz).discrepancy,
                        ito_series(get_field("identity"), s, p, nz).discrepancy)
    for name in ("shift1d", "tanhjump1d"):
        s = get_scenario(name)
        for seed in range(3):
            nz = sample_noise(build_grid(0.0, 1.0, 128), s.m, s.mark_space, seed)
            worst = max(worst, ito_series(get_field("wave"), s, simulate_path(s, [0.4], nz), nz).discrepancy)
    res = ito_study(get_field("square"), get_scenario("bm1d"), [0.0], 1.0, 64, 4, 1000, seed=0)
    slope = res.fit.slope
    _report(4, "generalized Ito formula", [
        ("exact_cases_max", worst, "<= 1e-12", worst <= 1e-12),
        ("x^2 slope", slope, "in [0.4, 1.1]", 0.4 <= slope <= 1.1),
    ])


def test_criterion_05_wentzell_reduction():
    worst = 0.0
    for name in list_scenarios():
        s = get_scenario(name)
        x0 = np.full(s.n, 0.2)
        nzs = [sample_noise(build_grid(0.0, 1.0, 64), s.m, s.mark_space, seed) for seed in range(10)]
        ens = euler_ensemble(s, x0, nzs)
        f = get_field("wave")
        proc = get_field_process("null", n=s.n, m=s.m)
        ito = ito_increments(f, s, ens.grid, ens.states, NoiseBatch(nzs).dW, ens.jumps)
        iw = ito_wentzell_ensemble(proc, s, ens, nzs, f).increments
        scale = np.maximum(np.abs(ito), np.abs(iw))
        rel = np.where(scale > 0, np.abs(ito - iw) / np.where(scale > 0, scale, 1.0), 0.0)
        worst = max(worst, float(rel.max()))
    _report(5, "Ito-Wentzell reduces to Ito for a fixed field (all scenarios, 10 seeds)",
            [("max_rel_diff", worst, "<= 1e-12", worst <= 1e-12)])


def test_criterion_06_wentzell_two_way_consistency():
    s = get_scenario("rot2d")
    x0 = [1.0, 0.2]
    reg = wentzell_study(get_field_process("rot2d_shift"), s, x0, 1.0, 64, 4, 500, seed=0)
    mixed = wentzell_study(get_field_process("rot2d_mixed"), s, x0, 1.0, 64, 4, 500, seed=0)
    _report(6, "composite vs field-then-evaluate, rot2d, 500 paths", [
        ("registered slope", reg.fit.slope, ">= 0.4", reg.fit.slope >= 0.4),
        ("registered max rms gap", float(reg.errors.max()), "info: rounding level", True),
        ("mixed-process slope", mixed.fit.slope, ">= 0.4", mixed.fit.slope >= 0.4),
    ])


def test_criterion_07_kernel_spde():
    rho0 = gaussian_kernel()
    s = get_scenario("decay1d")
    sol = kernel_spde_solve(rho0, s, _quiet(s, 1000, T=0.5), 801, (-6.0, 6.0))
    exact = rho0(sol.x[:, None] * np.exp(0.5)) * np.exp(0.5)
    linf = float(np.max(np.abs(sol.values[-1] - exact)))
    mass = sol.mass()
    drift = float(np.max(np.abs(mass - mass[0])))

    sh = get_scenario("shift1d", c=1.0)
    nz = NoiseRealization.from_events(build_grid(0.0, 1.0, 10), 0, [(0.55, 0)])
    shifted = kernel_spde_solve(rho0, sh, nz, 801, (-6.0, 6.0))
    shift_err = float(np.max(np.abs(shifted.values[-1] - gaussian_kernel(1.0)(shifted.x[:, None]))))
    interp_bound = shifted.dx ** 2 / 8 * (1 / np.sqrt(2 * np.pi))
    _report(7, "kernel equation grid solver (a=-x, N=801, T=0.5; shift jump)", [
        ("Linf", linf, "<= 1e-3", linf <= 1e-3),
        ("mass_drift", drift, "<= 1e-3", drift <= 1e-3),
        ("shift_err", shift_err, f"<= dx^2/8 max|rho''|={interp_bound:.3g}", shift_err <= interp_bound),
    ])


def test_criterion_08_volume_invariance():
    identity = 0.0
    for name in ("ou1d", "tanhjump1d", "rot2d", "pendulum2d"):
        s = get_scenario(name)
        nz = sample_noise(build_grid(0.0, 1.0, 128), s.m, s.mark_space, 2)
        rep = volume_invariance(gaussian_kernel(n=s.n), s, nz, 400 if s.n == 1 else 40)
        identity = max(identity, abs(rep.pushforward_sum - rep.initial_sum) / abs(rep.initial_sum))
    s = get_scenario("ou1d")
    rep = volume_invariance(gaussian_kernel(), s, sample_noise(build_grid(0.0, 1.0, 64), 1, s.mark_space, 0),
                            400, [(-6.0, 6.0)])
    mass_err = abs(rep.initial_sum - 1.0)
    det = get_scenario("ou1d", sigma=0.0)
    nz = sample_noise(build_grid(0.0, 1.0, 1200), 1, det.mark_space, 0)
    char = grid_vs_characteristics(gaussian_kernel(), det, [-1.0, 0.0, 0.5, 1.0], nz, 801)
    _report(8, "pushforward quadrature and grid vs characteristics", [
        ("identity_rel", identity, "<= 1e-13 (exact up to rounding)", identity <= 1e-13),
        ("|sum-1|", mass_err, "<= 1e-6", mass_err <= 1e-6),
        ("grid_vs_char", char, "<= 5e-2", char <= 5e-2),
    ])


def test_criterion_09_kernel_ratios():
    det = get_scenario("ou1d", sigma=0.0)
    nz = sample_noise(build_grid(0.0, 1.0, 1200), 1, det.mark_space, 0)
    ks = [gaussian_kernel(0.5, 1.2), gaussian_kernel()]
    grid_dev = float(np.max(grid_ratio_integrals(ks, det, [0.3], nz, 801).deviation))
    char_dev = float(np.max(kernel_ratio_integrals(ks, det, [0.3], nz).deviation))
    rot = get_scenario("rot2d")
    nz2 = sample_noise(build_grid(0.0, 1.0, 256), 1, rot.mark_space, 1)
    ks2 = [gaussian_kernel([0.3, 0.0], 1.0, n=2), gaussian_kernel([0.0, 0.4], 0.8, n=2), gaussian_kernel(n=2)]
    char_dev = max(char_dev, float(np.max(kernel_ratio_integrals(ks2, rot, [0.6, -0.2], nz2).deviation)))
    _report(9, "kernel ratio first integrals", [
        ("grid_ratio_dev", grid_dev, "<= 5e-2", grid_dev <= 5e-2),
        ("char_ratio_dev", char_dev, "<= 1e-12", char_dev <= 1e-12),
    ])


def test_criterion_10_first_integral_conditions():
    u = get_field("radius2")
    s = get_scenario("rot2d")
    lattice = s.lattice(21, centered=False)
    rep = check_conditions(u, s, lattice)
    resid = max(rep.residuals.values())
    good = conservation_study(u, s, [1.0, 0.0], 1.0, 128, 3, 500, seed=0)
    pert = get_scenario("rot2d", eps=0.1)
    r2 = check_conditions(u, pert, lattice).R2
    bad = conservation_study(u, pert, [1.0, 0.0], 1.0, 128, 3, 500, seed=0)
    _report(10, "conditions L and the conservation oracle (rot2d, |x|^2)", [
        ("max_residual", resid, "<= 1e-9", resid <= 1e-9),
        ("oracle slope", good.fit.slope, "in [0.7, 1.3]", 0.7 <= good.fit.slope <= 1.3),
        ("eps R2", r2, ">= 0.1", r2 >= 0.1),
        ("eps plateau", float(bad.errors[-1]), ">= 0.01", bad.errors[-1] >= 0.01),
    ])


def test_criterion_11_cli_determinism(tmp_path):
    small = {
        "simulate": ["--set", "grid.n_steps=64"],
        "check-ito": ["--set", "seeds.n_paths=100"],
        "check-ito-wentzel": ["--set", "seeds.n_paths=40", "--set", "levels.n_levels=3"],
        "kernel": ["--set", "spatial_nodes=201", "--set", "grid.n_steps=400"],
        "first-integral": ["--set", "seeds.n_paths=50"],
        "convergence": ["--set", "seeds.n_paths=50"],
        "validate": ["--set", "all=true"],
    }
    mismatches = 0
    files = 0
    for exp, extra in small.items():
        for run in ("a", "b"):
            with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
                cli_main([exp, "--seed", "7", "--out", str(tmp_path / exp / run)] + extra)
        for csv in sorted((tmp_path / exp / "a").glob("*.csv")):
            files += 1
            if csv.read_bytes() != (tmp_path / exp / "b" / csv.name).read_bytes():
                mismatches += 1
    _report(11, f"CLI determinism over {len(small)} experiments ({files} CSV files)", [
        ("mismatched_files", float(mismatches), "== 0", mismatches == 0 and files > 0),
    ])


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)

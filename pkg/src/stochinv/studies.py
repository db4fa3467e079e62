"""Multi-level convergence studies on nested (Brownian-bridge refined) noise."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .calculus import composite_terminal_gaps, ito_discrepancies
from .errors import InvalidArgumentError
from .integral import conservation_deviations
from .integrate import euler_ensemble
from .noise import NoiseRealization, TimeGrid, refine_noise, sample_noise
from .system import ScalarFieldProcess, Scenario, SmoothScalarField


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual: float  # RMS of the log2 fit residuals


def fit_slope(hs, errors) -> SlopeFit:
    """Least-squares line through (log2 h, log2 error)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(hs) < 2 or len(hs) != len(errors):
        raise InvalidArgumentError("need at least two (h, error) pairs")
    if np.any(hs <= 0) or np.any(~(errors > 0)):
        raise InvalidArgumentError("step sizes and errors must be positive for a log fit")
    lx, ly = np.log2(hs), np.log2(errors)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return SlopeFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid ** 2))))


@dataclass
class StudyResult:
    name: str
    hs: np.ndarray
    errors: np.ndarray
    fit: SlopeFit

    def rows(self):
        return [{"h": float(h), "error": float(e)} for h, e in zip(self.hs, self.errors)]


def nested_levels(s: Scenario, T: float, coarse_steps: int, n_levels: int, seeds: Sequence[int],
                  t0: float = 0.0) -> list[list[NoiseRealization]]:
    """Noise on coarse_steps * 2^j steps (j < n_levels); each level refines the previous one."""
    grid = TimeGrid(t0, T, coarse_steps)
    levels = [[sample_noise(grid, s.m, s.mark_space, int(sd)) for sd in seeds]]
    for _ in range(1, n_levels):
        levels.append([refine_noise(nz, 2) for nz in levels[-1]])
    return levels


def run_study(name: str, levels, metric: Callable[[list], float]) -> StudyResult:
    hs = np.array([lv[0].grid.h for lv in levels])
    errs = np.array([metric(lv) for lv in levels])
    return StudyResult(name, hs, errs, fit_slope(hs, errs))


def rms(v) -> float:
    return float(np.sqrt(np.mean(np.square(v))))


def ou_exact_terminal(x0: float, sigma: float, c: float, reference: NoiseRealization) -> float:
    """Closed-form OU-with-shifts value at T, with the Wiener integral on a fine reference grid."""
    g = reference.grid
    mid = g.times[:-1] + 0.5 * g.h
    wiener = sigma * np.sum(np.exp(-(g.T - mid)) * reference.dW[:, 0])
    shifts = sum(c * np.exp(-(g.T - ev.time)) for ev in reference.events)
    return float(np.exp(-(g.T - g.t0)) * x0 + wiener + shifts)


def ou_strong_convergence(s: Scenario, x0: float, T: float, coarse_steps: int, n_levels: int,
                          n_paths: int, seed: int = 0, reference_factor: int = 32) -> StudyResult:
    """Terminal RMS error of the Euler scheme on the OU-with-shifts scenario."""
    sigma, c = float(s.params.get("sigma", 0.5)), float(s.params.get("c", 1.0))
    levels = nested_levels(s, T, coarse_steps, n_levels, range(seed, seed + n_paths))
    exact = np.array([ou_exact_terminal(x0, sigma, c, refine_noise(nz, reference_factor))
                      for nz in levels[-1]])

    def metric(lv):
        return rms(euler_ensemble(s, [x0], lv).states[:, -1, 0] - exact)

    return run_study("ou-strong", levels, metric)


def ito_study(f: SmoothScalarField, s: Scenario, x0, T: float, coarse_steps: int, n_levels: int,
              n_paths: int, seed: int = 0) -> StudyResult:
    levels = nested_levels(s, T, coarse_steps, n_levels, range(seed, seed + n_paths))
    return run_study("ito", levels, lambda lv: rms(ito_discrepancies(f, s, euler_ensemble(s, x0, lv), lv)))


def wentzell_study(proc: ScalarFieldProcess, s: Scenario, x0, T: float, coarse_steps: int,
                   n_levels: int, n_paths: int, seed: int = 0) -> StudyResult:
    levels = nested_levels(s, T, coarse_steps, n_levels, range(seed, seed + n_paths))
    return run_study("ito-wentzell", levels, lambda lv: rms(composite_terminal_gaps(proc, s, x0, lv)))


def conservation_study(u: SmoothScalarField, s: Scenario, x0, T: float, coarse_steps: int,
                       n_levels: int, n_paths: int, seed: int = 0) -> StudyResult:
    levels = nested_levels(s, T, coarse_steps, n_levels, range(seed, seed + n_paths))
    return run_study("conservation", levels, lambda lv: conservation_deviations(u, s, x0, lv).mean)

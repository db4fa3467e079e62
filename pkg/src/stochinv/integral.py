"""First integrals: the three pointwise conditions, the residual series of the
log-kernel equation, and a Monte Carlo conservation check.

A candidate u is a first integral when u(t, x(t)) stays equal to u(0, x(0))
along every trajectory.  The conditions

    R1_k = b_ik du/dx_i                                   (Wiener part)
    R2   = du/dt + du/dx_i (a_i - 1/2 b_jk db_ik/dx_j)     (drift part)
    R3   = u(t, x + g(t, x, gamma)) - u(t, x)               (jump part)

vanishing on the domain is sufficient; the oracle measures the conservation
itself on simulated paths.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .calculus import IncrementSeries, _series, invert_jump
from .errors import InvalidArgumentError
from .integrate import dot_noise, euler_ensemble
from .noise import NoiseRealization, TimeGrid, sample_noise
from .system import Scenario, SmoothScalarField


class FirstIntegralCandidate(SmoothScalarField):
    """A scalar field proposed as a first integral."""


def as_candidate(u: SmoothScalarField) -> FirstIntegralCandidate:
    if isinstance(u, FirstIntegralCandidate):
        return u
    return FirstIntegralCandidate(u.name, u.f, u.dt, u.grad, u.hess)


@dataclass
class ConditionsReport:
    candidate: str
    scenario: str
    R1: np.ndarray  # (m,) sup |b_ik du/dx_i| per Wiener component
    R2: float
    R3: float  # forward form
    R3_preimage: float  # |u(x) - u(preimage of x)|
    tol: float

    @property
    def residuals(self) -> dict:
        out = {f"R1[{k}]": float(v) for k, v in enumerate(self.R1)}
        out["R2"] = self.R2
        out["R3"] = self.R3
        return out

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    def failing(self) -> list[str]:
        return [k for k, v in self.residuals.items() if not v <= self.tol]


def _sup(v) -> float:
    v = np.abs(np.asarray(v, dtype=float))
    return float(v.max()) if v.size else 0.0


def drift_correction(s: Scenario, t, x) -> np.ndarray:
    """The vector 1/2 b_jk db_ik/dx_j, shape (..., n)."""
    b = s.coeffs.diffusion(t, x)
    db = s.coeffs.diffusion_jacobian(t, x)
    return 0.5 * np.einsum("...jk,...ikj->...i", b, db)


def check_conditions(u: SmoothScalarField, s: Scenario, points, times=(0.0,),
                     tol: float = 1e-9) -> ConditionsReport:
    """Sup of the residuals R1, R2, R3 over every (t, x) in times x points."""
    pts = np.asarray(points, dtype=float).reshape(-1, s.n)
    c = s.coeffs
    r1 = np.zeros(s.m)
    r2 = r3 = r3p = 0.0
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        t = float(t)
        grad = u.gradient(t, pts)
        bg = np.einsum("...ik,...i->...k", c.diffusion(t, pts), grad)
        if s.m:
            r1 = np.maximum(r1, np.abs(bg).max(axis=0))
        resid = u.time_derivative(t, pts) + np.einsum(
            "...i,...i->...", grad, c.drift(t, pts) - drift_correction(s, t, pts))
        r2 = max(r2, _sup(resid))
        base = u.value(t, pts)
        for j in range(len(s.mark_space)):
            gamma = s.mark_space.mark(j)
            r3 = max(r3, _sup(u.value(t, pts + c.jump(t, pts, gamma)) - base))
            y, _, _ = invert_jump(s, t, pts, gamma)
            r3p = max(r3p, _sup(u.value(t, y) - base))
    return ConditionsReport(u.name, s.name, r1, r2, r3, r3p, tol)


def eq35_bracket(u: SmoothScalarField, s: Scenario, t, x) -> np.ndarray:
    """dt coefficient -a.grad u + 1/2 b b : hess u - b_ik d/dx_i (b_jk du/dx_j)."""
    c = s.coeffs
    grad = u.gradient(t, x)
    hess = u.hessian(t, x)
    b = c.diffusion(t, x)
    db = c.diffusion_jacobian(t, x)
    bbh = np.einsum("...ik,...jk,...ij->...", b, b, hess)
    # d/dx_i (b_jk du/dx_j) = db_jk/dx_i du/dx_j + b_jk d2u/dx_i dx_j
    nested = np.einsum("...ik,...jki,...j->...", b, db, grad) + bbh
    return -np.einsum("...i,...i->...", c.drift(t, x), grad) + 0.5 * bbh - nested


def eq35_residual_series(u: SmoothScalarField, s: Scenario, x0, noise: NoiseRealization) -> IncrementSeries:
    """Accumulate the right-hand side of the log-kernel first-integral equation along a path.

    Jumps contribute u(t, y) - u(t, x-) with y the preimage of the pre-jump state.
    """
    ens = euler_ensemble(s, x0, noise)
    path = ens.path(0)
    grid = noise.grid
    t = grid.times[:-1]
    X = path.states[:-1]
    bg = np.einsum("...ik,...i->...k", s.coeffs.diffusion(t, X), u.gradient(t, X))
    inc = eq35_bracket(u, s, t, X) * grid.h - dot_noise(bg, noise.dW)
    for ev in path.applied_events:
        gamma = s.mark_space.mark(ev.mark_index)
        y, _, _ = invert_jump(s, ev.time, ev.pre, gamma)
        inc[ev.step] += float(u.value(ev.time, y) - u.value(ev.time, ev.pre))
    return _series(grid, inc)


@dataclass
class ConservationStats:
    grid: TimeGrid
    deviations: np.ndarray  # per surviving path, max_t |u(t_k, x_k) - u(0, x0)|
    n_diverged: int

    @property
    def mean(self) -> float:
        return float(self.deviations.mean()) if len(self.deviations) else float("nan")

    @property
    def max(self) -> float:
        return float(self.deviations.max()) if len(self.deviations) else float("nan")


def conservation_deviations(u: SmoothScalarField, s: Scenario, x0, noises) -> ConservationStats:
    ens = euler_ensemble(s, x0, noises)
    t = ens.grid.times
    vals = u.value(t, ens.states[ens.ok])
    dev = np.max(np.abs(vals - vals[:, :1]), axis=1)
    return ConservationStats(ens.grid, dev, int(np.sum(~ens.ok)))


def conservation_oracle(u: SmoothScalarField, s: Scenario, x0, n_paths: int, grid: TimeGrid,
                        seeds: Optional[Sequence[int]] = None, base_seed: int = 0) -> ConservationStats:
    """Simulate n_paths and report max_t |u(t, x(t)) - u(0, x0)| per path."""
    if n_paths < 1:
        raise InvalidArgumentError(f"n_paths must be positive, got {n_paths}")
    seeds = range(base_seed, base_seed + n_paths) if seeds is None else list(seeds)[:n_paths]
    noises = [sample_noise(grid, s.m, s.mark_space, int(sd)) for sd in seeds]
    return conservation_deviations(u, s, x0, noises)

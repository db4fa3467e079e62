"""Kernels of integral invariants: random densities carried by the flow.

Two representations are provided.  The characteristic one is exact by
construction: along x(t; y) the kernel equals rho0(y) / det J(t; y).  The grid
one solves the one-dimensional kernel equation

    d rho = [-(rho a)' + 1/2 (rho b^2)''] dt - (rho b)' dW
            + sum over events [rho(y(x)) / det(1 + g'(y(x))) - rho(x)]

explicitly on a uniform grid with zero boundary values, and is checked
against the characteristic one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .calculus import invert_jump
from .errors import (
    DegenerateJacobianError,
    InvalidArgumentError,
    RatioUndefinedError,
    StepSizeError,
)
from .integrate import euler_ensemble
from .jacobian import simulate_jacobian
from .noise import NoiseRealization, TimeGrid
from .system import Scenario

SINGULAR_DET = 1e-12
CFL_SAFETY = 0.4
NEGATIVE_TOL = -1e-6


@dataclass(frozen=True)
class KernelInit:
    """Initial kernel rho0 >= 0 on R^n with unit mass."""

    name: str
    n: int
    density: Callable  # x (..., n) -> (...)
    normalization: float = 1.0
    decay_radius: float = math.inf

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.density(x), dtype=float), x.shape[:-1]).copy()

    def mass(self, box, cells_per_axis: int = 400) -> float:
        """Midpoint-rule integral over ``box`` (n x 2)."""
        pts, dv = _cell_centers(np.asarray(box, dtype=float).reshape(self.n, 2), cells_per_axis)
        return float(np.sum(self(pts)) * dv)


def gaussian_kernel(mean=0.0, std=1.0, n: int = 1, name: Optional[str] = None) -> KernelInit:
    """Isotropic normal density; ``decay_radius`` is where it drops below 1e-12."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (n,)).copy()
    if not std > 0:
        raise InvalidArgumentError(f"std must be positive, got {std}")
    norm = (2.0 * math.pi * std * std) ** (-n / 2)

    def density(x):
        r2 = np.sum((x - mean) ** 2, axis=-1)
        return norm * np.exp(-0.5 * r2 / (std * std))

    radius = std * math.sqrt(2.0 * math.log(norm / 1e-12))
    return KernelInit(name or f"gauss({mean.tolist()},{std})", n, density, norm, radius)


def _cell_centers(box: np.ndarray, per_axis: int):
    axes = []
    dv = 1.0
    for lo, hi in box:
        dx = (hi - lo) / per_axis
        axes.append(lo + (np.arange(per_axis) + 0.5) * dx)
        dv *= dx
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1), dv


# ------------------------------------------------------- characteristic form

@dataclass(frozen=True, eq=False)
class KernelPath:
    grid: TimeGrid
    states: np.ndarray  # (N+1, n)
    dets: np.ndarray  # (N+1,)
    values: np.ndarray  # (N+1,)  rho(t_k, x(t_k; y))


def kernel_along_path(rho0: KernelInit, s: Scenario, y, noise: NoiseRealization) -> KernelPath:
    path, js = simulate_jacobian(s, y, noise)
    bad = np.flatnonzero(np.abs(js.dets) < SINGULAR_DET)
    if len(bad):
        raise DegenerateJacobianError(f"det J = {js.dets[bad[0]]:.3e} at node {bad[0]}")
    start = rho0(path.states[0])
    return KernelPath(noise.grid, path.states, js.dets, start / js.dets)


@dataclass(frozen=True)
class VolumeReport:
    initial_sum: float
    pushforward_sum: float
    cell_volume: float
    n_cells: int


def volume_invariance(rho0: KernelInit, s: Scenario, noise: NoiseRealization, n_cells: int,
                      box=None) -> VolumeReport:
    """Push a lattice of cells through the flow and sum rho(T, x_T) det J dV.

    ``n_cells`` is the number of cells per axis (n <= 2).
    """
    if s.n > 2:
        raise InvalidArgumentError("volume quadrature is limited to n <= 2")
    if rho0.n != s.n:
        raise InvalidArgumentError("kernel and scenario dimensions differ")
    box = s.box if box is None else np.asarray(box, dtype=float).reshape(s.n, 2)
    ys, dv = _cell_centers(box, n_cells)
    ens = euler_ensemble(s, ys, [noise] * len(ys), with_jacobian=True)
    dets = np.linalg.det(ens.jacobians[:, -1])
    if np.any(np.abs(dets) < SINGULAR_DET):
        raise DegenerateJacobianError("degenerate Jacobian inside the lattice")
    r0 = rho0(ys)
    rho_T = r0 / dets
    return VolumeReport(
        initial_sum=float(np.sum(r0) * dv),
        pushforward_sum=float(np.sum(rho_T * dets) * dv),
        cell_volume=float(dv),
        n_cells=len(ys),
    )


# ---------------------------------------------------------------- grid solver

@dataclass(frozen=True, eq=False)
class KernelGridState:
    x: np.ndarray  # (N,)
    grid: TimeGrid
    values: np.ndarray  # (n_steps + 1, N)
    warnings: tuple = field(default=())

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def mass(self) -> np.ndarray:
        return np.trapezoid(self.values, self.x, axis=-1)

    def at(self, k: int, points) -> np.ndarray:
        """Linear interpolation of the snapshot at node k."""
        return np.interp(points, self.x, self.values[k], left=0.0, right=0.0)


def _van_leer(dl, dr):
    prod = dl * dr
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(prod > 0, 2.0 * prod / (dl + dr), 0.0)
    return s


def _transport(rho, a_face, dx):
    """-(rho a)' by a limited upwind flux through the cell faces."""
    padded = np.concatenate(([0.0, 0.0], rho, [0.0, 0.0]))
    d = np.diff(padded)
    slope = _van_leer(d[:-1], d[1:])  # for padded[1:-1]
    core = padded[1:-1]
    left = core[:-1] + 0.5 * slope[:-1]  # state left of each face
    right = core[1:] - 0.5 * slope[1:]
    flux = np.where(a_face > 0, a_face * left, a_face * right)
    return -(flux[1:] - flux[:-1]) / dx


def _second(q, dx):
    padded = np.concatenate(([0.0], q, [0.0]))
    return (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / (dx * dx)


def _first(q, dx):
    padded = np.concatenate(([0.0], q, [0.0]))
    return (padded[2:] - padded[:-2]) / (2.0 * dx)


def kernel_spde_solve(rho0: KernelInit, s: Scenario, noise: NoiseRealization, N: int,
                      x_range=None) -> KernelGridState:
    """Explicit solve of the one-dimensional kernel equation on N nodes."""
    if s.n != 1 or s.m > 1 or rho0.n != 1:
        raise InvalidArgumentError("the grid solver handles n = 1, m <= 1 only")
    if N < 5:
        raise InvalidArgumentError(f"need at least 5 spatial nodes, got {N}")
    lo, hi = (s.box[0] if x_range is None else x_range)
    x = np.linspace(lo, hi, N)
    dx = x[1] - x[0]
    faces = np.concatenate(([x[0] - 0.5 * dx], x + 0.5 * dx))[:, None]
    grid = noise.grid
    h, c = grid.h, s.coeffs
    nodes = x[:, None]

    # CFL guard against the largest coefficients seen on the grid
    ts = grid.times
    a_max = max(float(np.max(np.abs(c.drift(t, faces)))) for t in (ts[0], ts[-1]))
    b_max = 0.0
    if s.m:
        b_max = max(float(np.max(c.diffusion(t, nodes) ** 2)) for t in (ts[0], ts[-1]))
    h_max = math.inf
    if a_max > 0:
        h_max = min(h_max, CFL_SAFETY * dx / a_max)
    if b_max > 0:
        h_max = min(h_max, CFL_SAFETY * dx * dx / b_max)
    if h > h_max:
        need = math.ceil((grid.T - grid.t0) / h_max)
        raise StepSizeError(f"h={h:.3e} exceeds the stability bound {h_max:.3e}; use n_steps >= {need}",
                            suggested_n_steps=need)

    def rhs(t, rho):
        out = _transport(rho, c.drift(t, faces)[:, 0], dx)
        if s.m:
            out = out + 0.5 * _second(rho * c.diffusion(t, nodes)[:, 0, 0] ** 2, dx)
        return out

    rho = rho0(nodes)
    rho[0] = rho[-1] = 0.0
    values = np.empty((grid.n_steps + 1, N))
    values[0] = rho
    warnings = []
    for k in range(grid.n_steps):
        t = grid.time(k)
        stage = rho + h * rhs(t, rho)
        new = 0.5 * (rho + stage + h * rhs(grid.time(k + 1), stage))
        if s.m:
            new = new - _first(rho * c.diffusion(t, nodes)[:, 0, 0], dx) * noise.dW[k, 0]
        for ev in noise.events_in_step(k):
            gamma = s.mark_space.mark(ev.mark_index)
            y, det_inv, _ = invert_jump(s, ev.time, nodes, gamma)
            new = np.interp(y[:, 0], x, new, left=0.0, right=0.0) * det_inv
        new[0] = new[-1] = 0.0
        if not np.all(np.isfinite(new)):
            raise StepSizeError(f"grid solution blew up at step {k}", suggested_n_steps=2 * grid.n_steps)
        if new.min() < NEGATIVE_TOL:
            warnings.append(f"negative kernel {new.min():.3e} at step {k + 1}")
        rho = new
        values[k + 1] = rho
    return KernelGridState(x, grid, values, tuple(warnings))


def grid_vs_characteristics(rho0: KernelInit, s: Scenario, ys, noise: NoiseRealization, N: int,
                            sol: Optional[KernelGridState] = None) -> float:
    """Max |grid kernel at x(t_k; y) - rho0(y) / det J(t_k; y)| over nodes and starts."""
    sol = kernel_spde_solve(rho0, s, noise, N) if sol is None else sol
    worst = 0.0
    for y in np.atleast_1d(np.asarray(ys, dtype=float)):
        kp = kernel_along_path(rho0, s, [y], noise)
        grid_vals = np.array([sol.at(k, kp.states[k, 0]) for k in range(len(kp.values))])
        worst = max(worst, float(np.max(np.abs(grid_vals - kp.values))))
    return worst


# ------------------------------------------------------------------ ratios

@dataclass(frozen=True, eq=False)
class RatioReport:
    grid: TimeGrid
    states: np.ndarray  # (N+1, n)
    ratios: np.ndarray  # (N+1, L)
    deviation: np.ndarray  # (L,) max_t |theta_l(t) - theta_l(0)|


def _ratio_report(grid, states, kernels: np.ndarray) -> RatioReport:
    den = kernels[:, -1]
    if np.any(~(np.abs(den) > 0)):
        k = int(np.flatnonzero(~(np.abs(den) > 0))[0])
        raise RatioUndefinedError(f"denominator kernel vanishes at node {k}")
    ratios = kernels[:, :-1] / den[:, None]
    return RatioReport(grid, states, ratios, np.max(np.abs(ratios - ratios[0]), axis=0))


def kernel_ratio_integrals(rho_list: Sequence[KernelInit], s: Scenario, y,
                           noise: NoiseRealization) -> RatioReport:
    """Ratios rho_l / rho_last along x(t; y) in the characteristic representation."""
    if len(rho_list) < 2:
        raise InvalidArgumentError("need at least two kernels")
    paths = [kernel_along_path(r, s, y, noise) for r in rho_list]
    kernels = np.stack([p.values for p in paths], axis=-1)
    return _ratio_report(noise.grid, paths[0].states, kernels)


def grid_ratio_integrals(rho_list: Sequence[KernelInit], s: Scenario, y, noise: NoiseRealization,
                         N: int) -> RatioReport:
    """Same ratios read off grid solutions at the pushed point x(t_k; y)."""
    if len(rho_list) < 2:
        raise InvalidArgumentError("need at least two kernels")
    path = kernel_along_path(rho_list[-1], s, y, noise)
    sols = [kernel_spde_solve(r, s, noise, N) for r in rho_list]
    pts = path.states[:, 0]
    kernels = np.stack(
        [np.array([sol.at(k, pts[k]) for k in range(len(pts))]) for sol in sols], axis=-1
    )
    return _ratio_report(noise.grid, path.states, kernels)

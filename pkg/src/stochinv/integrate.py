"""Pathwise Euler-Maruyama integration with end-of-step jump application.

One step from node k:

    x <- x + a(t_k, x) h + b(t_k, x) dW_k
    for each event (tau, gamma) in (t_k, t_{k+1}]:  x <- x + g(tau, x, gamma)

The same loop optionally carries the variational matrix J (see
:mod:`stochinv.jacobian`).  Everything is vectorized over a batch of
realizations; single-path entry points are batches of one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DivergedFieldError, DivergedPathError, InvalidArgumentError
from .noise import NoiseBatch, NoiseRealization, TimeGrid
from .system import ScalarFieldProcess, Scenario, SmoothScalarField

DIVERGENCE_RADIUS = 1e8
SINGULAR_DET = 1e-12


class AppliedJump(NamedTuple):
    step: int
    time: float
    mark_index: int
    pre: np.ndarray
    post: np.ndarray


@dataclass(frozen=True, eq=False)
class Path:
    grid: TimeGrid
    states: np.ndarray  # (n_steps + 1, n)
    applied_events: tuple = ()

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class FieldTrace:
    grid: TimeGrid
    sample_points: np.ndarray  # (S, n)
    values: np.ndarray  # (n_steps + 1, S)


@dataclass
class JumpLog:
    """Flat record of every applied jump across an ensemble."""

    path: np.ndarray
    step: np.ndarray
    time: np.ndarray
    mark: np.ndarray
    event_id: np.ndarray
    pre: np.ndarray
    post: np.ndarray

    def for_path(self, p: int) -> "JumpLog":
        sel = np.flatnonzero(self.path == p)
        sel = sel[np.argsort(self.event_id[sel], kind="stable")]
        return JumpLog(*(getattr(self, f)[sel] for f in JumpLog.__dataclass_fields__))

    def __len__(self):
        return len(self.path)


@dataclass
class Ensemble:
    scenario: Scenario
    grid: TimeGrid
    states: np.ndarray  # (P, N+1, n)
    jumps: JumpLog
    diverged_at: np.ndarray  # (P,) first bad node index or -1
    jacobians: Optional[np.ndarray] = None  # (P, N+1, n, n)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> np.ndarray:
        return self.diverged_at < 0

    def path(self, p: int) -> Path:
        if self.diverged_at[p] >= 0:
            raise DivergedPathError(
                f"path {p} diverged at step {self.diverged_at[p]}", step=int(self.diverged_at[p])
            )
        log = self.jumps.for_path(p)
        events = tuple(
            AppliedJump(int(log.step[i]), float(log.time[i]), int(log.mark[i]),
                        log.pre[i].copy(), log.post[i].copy())
            for i in range(len(log))
        )
        return Path(self.grid, self.states[p], events)

    def determinants(self) -> np.ndarray:
        if self.jacobians is None:
            raise InvalidArgumentError("ensemble was simulated without Jacobians")
        return np.linalg.det(self.jacobians)


def _as_batch(noises) -> NoiseBatch:
    if isinstance(noises, NoiseBatch):
        return noises
    if isinstance(noises, NoiseRealization):
        return NoiseBatch([noises])
    return NoiseBatch(noises)


def _check_dims(s: Scenario, batch: NoiseBatch):
    if batch.m != s.m:
        raise InvalidArgumentError(f"noise has m={batch.m}, scenario {s.name!r} needs m={s.m}")
    for nz in batch.noises:
        if nz.events and max(e.mark_index for e in nz.events) >= len(s.mark_space):
            raise InvalidArgumentError(f"noise carries marks outside scenario {s.name!r} mark space")


def euler_ensemble(s: Scenario, x0, noises, with_jacobian: bool = False) -> Ensemble:
    """Integrate one start point (or one per path) under every realization in ``noises``."""
    batch = _as_batch(noises)
    _check_dims(s, batch)
    c, ms, grid = s.coeffs, s.mark_space, batch.grid
    P, N, n, h = batch.size, grid.n_steps, s.n, grid.h
    x = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (P, n)))
    states = np.empty((P, N + 1, n))
    states[:, 0] = x
    eye = np.eye(n)
    J = np.broadcast_to(eye, (P, n, n)).copy() if with_jacobian else None
    Js = None
    if with_jacobian:
        Js = np.empty((P, N + 1, n, n))
        Js[:, 0] = J
    diverged = np.full(P, -1)
    log: dict[str, list] = {k: [] for k in JumpLog.__dataclass_fields__}

    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(N):
            t = grid.time(k)
            dW = batch.dW[:, k]
            drift = c.drift(t, x)
            diff = c.diffusion(t, x)
            if with_jacobian:
                A = c.drift_jacobian(t, x)
                B = c.diffusion_jacobian(t, x)
                M = A * h + np.einsum("pikj,pk->pij", B, dW)
                J = J + M @ J
            x = x + drift * h + np.einsum("pik,pk->pi", diff, dW)
            for rnd in batch.jumps(k):
                gamma = ms.mark(rnd.mark_index)
                pre = x[rnd.paths]
                if with_jacobian:
                    G = c.jump_jacobian(rnd.times, pre, gamma)
                    J[rnd.paths] = (eye + G) @ J[rnd.paths]
                post = pre + c.jump(rnd.times, pre, gamma)
                x[rnd.paths] = post
                log["path"].append(rnd.paths)
                log["step"].append(np.full(len(rnd.paths), k))
                log["time"].append(rnd.times)
                log["mark"].append(np.full(len(rnd.paths), rnd.mark_index))
                log["event_id"].append(rnd.event_ids)
                log["pre"].append(pre)
                log["post"].append(post)
            bad = ~np.all(np.isfinite(x) & (np.abs(x) <= DIVERGENCE_RADIUS), axis=-1) & (diverged < 0)
            if bad.any():
                diverged[bad] = k + 1
                x[bad] = np.nan
            states[:, k + 1] = x
            if with_jacobian:
                Js[:, k + 1] = J

    def cat(key, width=None):
        parts = log[key]
        if parts:
            return np.concatenate(parts)
        return np.zeros((0, n)) if width else np.zeros(0, dtype=float if key == "time" else int)

    jumps = JumpLog(cat("path"), cat("step"), cat("time"), cat("mark"), cat("event_id"),
                    cat("pre", n), cat("post", n))
    ens = Ensemble(s, grid, states, jumps, diverged, Js)
    if with_jacobian:
        dets = np.linalg.det(Js)
        weak = np.argwhere(np.abs(dets) < SINGULAR_DET)
        for p, k in weak:
            ens.warnings.append(f"degenerate Jacobian on path {p} at node {k}: det={dets[p, k]:.3e}")
    return ens


def simulate_ensemble(s: Scenario, x0, noises: Sequence[NoiseRealization]) -> Ensemble:
    return euler_ensemble(s, x0, noises)


def simulate_path(s: Scenario, x0, noise: NoiseRealization) -> Path:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (s.n,):
        raise InvalidArgumentError(f"x0 must have {s.n} components, got {x0.shape}")
    return euler_ensemble(s, x0, noise).path(0)


def _initial_values(z0, t0: float, pts) -> np.ndarray:
    if isinstance(z0, SmoothScalarField):
        return z0.value(t0, pts)
    if callable(z0):
        return np.broadcast_to(np.asarray(z0(t0, pts), dtype=float), pts.shape[:-1]).copy()
    return np.broadcast_to(np.asarray(z0, dtype=float), pts.shape[:-1]).copy()


def dot_noise(coeff, dW) -> np.ndarray:
    """sum_k coeff[..., k] dW[..., k]; shared by field and composite updates."""
    coeff = np.asarray(coeff, dtype=float)
    return np.einsum("...k,...k->...", coeff, np.broadcast_to(dW, coeff.shape))


def mark_value(mark_space, j: int):
    """Mark value for index j; without a mark space the index itself is the mark."""
    return float(j) if mark_space is None else mark_space.mark(j)


def evolve_field_ensemble(p: ScalarFieldProcess, z0, pts, noises, mark_space=None) -> np.ndarray:
    """Field values at fixed per-path points, shape (P, N+1, S).

    ``pts`` has shape (S, n) (shared) or (P, S, n) (one set per path).
    """
    batch = _as_batch(noises)
    if batch.m != p.m:
        raise InvalidArgumentError(f"noise has m={batch.m}, field process needs m={p.m}")
    grid, P, N, h = batch.grid, batch.size, batch.grid.n_steps, batch.grid.h
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 2:
        pts = np.broadcast_to(pts, (P,) + pts.shape)
    if pts.shape[0] != P or pts.shape[-1] != p.n:
        raise InvalidArgumentError(f"sample points of shape {pts.shape} do not match the batch")
    S = pts.shape[1]
    z = _initial_values(z0, grid.t0, pts)
    out = np.empty((P, N + 1, S))
    out[:, 0] = z
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(N):
            t = grid.time(k)
            inc = p.drift(t, pts) * h + dot_noise(p.noise_coeff(t, pts), batch.dW[:, k][:, None, :])
            for rnd in batch.jumps(k):
                gamma = mark_value(mark_space, rnd.mark_index)
                inc[rnd.paths] += p.jump(rnd.times[:, None], pts[rnd.paths], gamma)
            z = z + inc
            if not np.all(np.isfinite(z)):
                raise DivergedFieldError(f"field became non-finite at step {k}", step=k + 1)
            out[:, k + 1] = z
    return out


def evolve_scalar_field(p: ScalarFieldProcess, z0, pts, noise: NoiseRealization,
                        mark_space=None) -> FieldTrace:
    """Euler evolution of dz = Pi dt + D dw + G nu at fixed sample points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    values = evolve_field_ensemble(p, z0, pts, noise, mark_space)[0]
    return FieldTrace(noise.grid, pts.copy(), values)

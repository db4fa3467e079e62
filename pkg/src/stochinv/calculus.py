"""Pathwise chain rules: the generalized Ito formula and its Ito-Wentzell extension.

Both evaluators predict, step by step along an already simulated path, the
increment of a composite quantity and accumulate it.  Comparing the
accumulated value with a direct evaluation measures how well the formula
(plus the Euler discretization) reproduces the truth.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    DomainExitError,
    InvalidArgumentError,
    InversionError,
    SingularJumpError,
)
from .integrate import (
    Ensemble,
    JumpLog,
    Path,
    _as_batch,
    dot_noise,
    euler_ensemble,
    evolve_field_ensemble,
    mark_value,
)
from .noise import NoiseBatch, NoiseRealization, TimeGrid
from .system import ScalarFieldProcess, Scenario, SmoothScalarField

STENCIL_REL = 1e-3
NEWTON_MAX_ITER = 50
SINGULAR_DET = 1e-12


@dataclass(frozen=True, eq=False)
class IncrementSeries:
    grid: TimeGrid
    increments: np.ndarray  # (N,)
    cumulative: np.ndarray  # (N,)
    direct: Optional[np.ndarray] = None  # (N+1,) directly evaluated change, if known
    discrepancy: float = float("nan")

    @property
    def terminal(self) -> float:
        return float(self.cumulative[-1]) if len(self.cumulative) else 0.0


def _series(grid, increments, direct=None) -> IncrementSeries:
    cum = np.cumsum(increments)
    disc = float("nan")
    if direct is not None:
        disc = float(abs(cum[-1] - direct[-1]))
    return IncrementSeries(grid, increments, cum, direct, disc)


def _single_log(path: Path) -> JumpLog:
    ev = path.applied_events
    n = path.states.shape[-1]
    return JumpLog(
        path=np.zeros(len(ev), dtype=int),
        step=np.array([e.step for e in ev], dtype=int),
        time=np.array([e.time for e in ev], dtype=float),
        mark=np.array([e.mark_index for e in ev], dtype=int),
        event_id=np.arange(len(ev)),
        pre=np.array([e.pre for e in ev], dtype=float).reshape(-1, n),
        post=np.array([e.post for e in ev], dtype=float).reshape(-1, n),
    )


def _check_match(grid: TimeGrid, noise_grid: TimeGrid, states):
    if grid != noise_grid or states.shape[-2] != noise_grid.n_steps + 1:
        raise InvalidArgumentError("path and noise realization live on different grids")


def _ito_drift_terms(c, t, X, grad, hess):
    """(a . grad f, 1/2 b b^T : hess f, b^T grad f) evaluated at nodes."""
    a = c.drift(t, X)
    b = c.diffusion(t, X)
    a_grad = np.einsum("...i,...i->...", a, grad)
    second = 0.5 * np.einsum("...ik,...jk,...ij->...", b, b, hess)
    bg = np.einsum("...ik,...i->...k", b, grad)
    return a_grad, second, bg


# ------------------------------------------------------------------ Ito formula

def ito_increments(f: SmoothScalarField, s: Scenario, grid: TimeGrid, states: np.ndarray,
                   dW: np.ndarray, jumps: JumpLog) -> np.ndarray:
    """Per-step increments of f(t, x(t)) predicted by the generalized Ito formula.

    ``states`` (P, N+1, n), ``dW`` (P, N, m); returns (P, N).
    """
    h = grid.h
    t = grid.times[:-1]
    X = states[:, :-1]
    ft = f.time_derivative(t, X)
    a_grad, second, bg = _ito_drift_terms(s.coeffs, t, X, f.gradient(t, X), f.hessian(t, X))
    inc = (ft + a_grad + second) * h + dot_noise(bg, dW)
    if len(jumps):
        tj = jumps.time
        jump_inc = f.value(tj, jumps.post) - f.value(tj, jumps.pre)
        order = np.argsort(jumps.event_id, kind="stable")
        np.add.at(inc, (jumps.path[order], jumps.step[order]), jump_inc[order])
    return inc


def ito_series(f: SmoothScalarField, s: Scenario, path: Path, noise: NoiseRealization) -> IncrementSeries:
    _check_match(path.grid, noise.grid, path.states)
    states = path.states[None]
    inc = ito_increments(f, s, path.grid, states, noise.dW[None], _single_log(path))[0]
    t = path.grid.times
    values = f.value(t, path.states)
    return _series(path.grid, inc, values - values[0])


def ito_discrepancies(f: SmoothScalarField, s: Scenario, ens: Ensemble, noises) -> np.ndarray:
    """Terminal |sum of predicted increments - (f(T, x_T) - f(t0, x_0))| per path."""
    batch = _as_batch(noises)
    inc = ito_increments(f, s, ens.grid, ens.states, batch.dW, ens.jumps)
    t = ens.grid.times
    direct = f.value(t[-1], ens.states[:, -1]) - f.value(t[0], ens.states[:, 0])
    return np.abs(inc.sum(axis=1) - direct)


# ------------------------------------------------------------ inverse jump map

class Preimage(NamedTuple):
    y: np.ndarray
    det_inv: float
    iterations: int


def invert_jump(s: Scenario, t, x, gamma, tol: float = 1e-12, max_iter: int = NEWTON_MAX_ITER):
    """Vectorized Newton solve of y + g(t, y, gamma) = x.

    Returns (y, det_inv, iterations) with ``det_inv = 1 / det(I + dg/dy(y))``.
    """
    c = s.coeffs
    x = np.asarray(x, dtype=float)
    eye = np.eye(s.n)
    y = x - c.jump(t, x, gamma)
    for it in range(max_iter + 1):
        r = y + c.jump(t, y, gamma) - x
        if np.all(np.linalg.norm(r, axis=-1) <= tol):
            break
        if it == max_iter:
            raise InversionError(f"jump map inversion did not converge in {max_iter} iterations")
        Jm = eye + c.jump_jacobian(t, y, gamma)
        if np.any(np.abs(np.linalg.det(Jm)) < SINGULAR_DET):
            raise SingularJumpError("I + dg/dx is singular during inversion")
        y = y - np.linalg.solve(Jm, r[..., None])[..., 0]
    det = np.linalg.det(eye + c.jump_jacobian(t, y, gamma))
    if np.any(np.abs(det) < SINGULAR_DET):
        raise SingularJumpError("I + dg/dx is singular at the preimage")
    return y, 1.0 / det, it


def inverse_jump_map(s: Scenario, t: float, x, gamma, tol: float = 1e-12) -> Preimage:
    x = np.asarray(x, dtype=float).reshape(s.n)
    y, det_inv, it = invert_jump(s, t, x, gamma, tol)
    return Preimage(y, float(det_inv), int(it))


def jump_roundtrip_error(s: Scenario, z: SmoothScalarField, points, gamma, t: float = 0.0,
                         tol: float = 1e-12) -> float:
    """Max gap between the forward jump summand z(x+g(x)) - z(x) and the same
    summand rebuilt from the preimage of the post-jump point."""
    x = np.asarray(points, dtype=float)
    post = x + s.coeffs.jump(t, x, gamma)
    y, _, _ = invert_jump(s, t, post, gamma, tol)
    forward = z.value(t, post) - z.value(t, x)
    via_preimage = z.value(t, post) - z.value(t, post - s.coeffs.jump(t, y, gamma))
    return float(np.max(np.abs(forward - via_preimage)))


# ----------------------------------------------------------- Ito-Wentzell formula

def _stencil_offsets(n: int):
    """Unit offsets of the 5-point-per-axis stencil plus the mixed corners."""
    offs = [np.zeros(n)]
    for i in range(n):
        for step in (1, -1, 2, -2):
            e = np.zeros(n)
            e[i] = step
            offs.append(e)
    for i in range(n):
        for j in range(i + 1, n):
            for si in (1, -1):
                for sj in (1, -1):
                    e = np.zeros(n)
                    e[i], e[j] = si, sj
                    offs.append(e)
    return np.array(offs)


def _stencil_derivatives(H: np.ndarray, delta: np.ndarray, n: int):
    """Gradient and Hessian from stencil values H (..., S) and spacings (..., n)."""
    grad = np.empty(H.shape[:-1] + (n,))
    hess = np.empty(H.shape[:-1] + (n, n))
    c = H[..., 0]
    for i in range(n):
        p1, m1, p2, m2 = (H[..., 1 + 4 * i + q] for q in range(4))
        d = delta[..., i]
        grad[..., i] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * d)
        hess[..., i, i] = (-p2 + 16.0 * p1 - 30.0 * c + 16.0 * m1 - m2) / (12.0 * d * d)
    base = 1 + 4 * n
    for i in range(n):
        for j in range(i + 1, n):
            pp, pm, mp, mm = (H[..., base + q] for q in range(4))
            base += 4
            v = (pp - pm - mp + mm) / (4.0 * delta[..., i] * delta[..., j])
            hess[..., i, j] = v
            hess[..., j, i] = v
    return grad, hess


class _FieldHistory:
    """Accumulated field increments z(t, y) - z0(y) for one batch of realizations."""

    def __init__(self, proc: ScalarFieldProcess, batch: NoiseBatch, mark_space):
        self.proc = proc
        self.batch = batch
        self.ms = mark_space
        self.grid = batch.grid
        W = np.zeros((batch.size, self.grid.n_steps + 1, batch.m))
        np.cumsum(batch.dW, axis=1, out=W[:, 1:])
        self.W = W
        self.events = []  # (path, step, event_id, time, mark)
        for p, nz in enumerate(batch.noises):
            for i, (ev, k) in enumerate(zip(nz.events, nz.event_steps)):
                self.events.append((p, int(k), i, ev.time, ev.mark_index))

    def _G(self, tau, y, j):
        return self.proc.jump(tau, y, mark_value(self.ms, j))

    def at_nodes(self, Y: np.ndarray) -> np.ndarray:
        """Y (P, K, S, n) with node k = 0..K-1 -> history H_k(Y[p, k]) of shape (P, K, S)."""
        proc, grid = self.proc, self.grid
        P, K = Y.shape[:2]
        t0, h = grid.t0, grid.h
        if proc.time_homogeneous:
            elapsed = (np.arange(K) * h)[None, :, None]
            H = proc.drift(t0, Y) * elapsed + dot_noise(proc.noise_coeff(t0, Y), self.W[:, :K, None, :])
        else:
            H = np.zeros(Y.shape[:-1])
            times = grid.times
            for p in range(P):
                for k in range(1, K):
                    tj = times[:k][:, None]
                    yk = np.broadcast_to(Y[p, k], (k,) + Y.shape[2:])
                    H[p, k] = (proc.drift(tj, yk) * h
                               + dot_noise(proc.noise_coeff(tj, yk), self.batch.dW[p, :k, None, :])).sum(axis=0)
        for p, step, _, tau, j in self.events:
            if step + 1 < K:
                H[p, step + 1:] += self._G(tau, Y[p, step + 1:], j)
        return H

    def before_event(self, p: int, k: int, event_id: int, y: np.ndarray) -> np.ndarray:
        """History at points y (..., n) just before event ``event_id`` of path p (in step k)."""
        proc, grid = self.proc, self.grid
        h = grid.h
        dW = self.batch.dW[p]
        if proc.time_homogeneous:
            t0 = grid.t0
            H = proc.drift(t0, y) * (k * h) + dot_noise(proc.noise_coeff(t0, y), self.W[p, k])
            H = H + (proc.drift(t0, y) * h + dot_noise(proc.noise_coeff(t0, y), dW[k]))
        else:
            times = grid.times
            H = np.zeros(y.shape[:-1])
            for j in range(k + 1):
                H = H + proc.drift(times[j], y) * h + dot_noise(proc.noise_coeff(times[j], y), dW[j])
        for q, step, i, tau, j in self.events:
            if q == p and (step < k or (step == k and i < event_id)):
                H = H + self._G(tau, y, j)
        return H


@dataclass
class WentzellResult:
    increments: np.ndarray  # (P, N)
    composite: np.ndarray  # (P, N+1)  Z evolved by the Ito-Wentzell increments
    field_on_path: np.ndarray  # (P, N+1) z(t_k, x_k) from the field history


def _initial_field(proc: ScalarFieldProcess, z0):
    z0 = proc.initial if z0 is None else z0
    if z0 is None:
        raise InvalidArgumentError(f"field process {proc.name!r} has no initial field")
    if not isinstance(z0, SmoothScalarField):
        z0 = SmoothScalarField("z0", z0)
    return z0


def ito_wentzell_ensemble(proc: ScalarFieldProcess, s: Scenario, ens: Ensemble, noises,
                          z0: Optional[SmoothScalarField] = None) -> WentzellResult:
    """Evolve Z = z(t, x(t)) by the generalized Ito-Wentzell increments on every path."""
    batch = _as_batch(noises)
    if proc.n != s.n or proc.m != s.m:
        raise InvalidArgumentError("field process and scenario dimensions differ")
    z0 = _initial_field(proc, z0)
    grid, h, n = ens.grid, ens.grid.h, s.n
    t0 = grid.t0
    hist = _FieldHistory(proc, batch, s.mark_space)

    X_all = ens.states
    if not np.all(ens.ok):
        raise InvalidArgumentError("ensemble contains diverged paths")
    # moving stencil around x(t_k) for the random part of the field
    delta = STENCIL_REL * np.maximum(1.0, np.abs(X_all))
    offs = _stencil_offsets(n)
    Y = X_all[:, :, None, :] + offs[None, None] * delta[:, :, None, :]
    inside = s.contains(Y)
    if not np.all(inside):
        p, k, _ = np.argwhere(~inside)[0]
        raise DomainExitError(f"stencil around path {p} leaves the domain box at node {k}")
    H = hist.at_nodes(Y)
    gH, hH = _stencil_derivatives(H, delta, n)

    t = grid.times[:-1]
    X = X_all[:, :-1]
    grad = z0.gradient(t0, X) + gH[:, :-1]
    hess = z0.hessian(t0, X) + hH[:, :-1]
    Pi = proc.drift(t, X)
    D = proc.noise_coeff(t, X)
    dD = proc.noise_coeff_gradient(t, X)
    c = s.coeffs
    b = c.diffusion(t, X)
    a_grad, second, bg = _ito_drift_terms(c, t, X, grad, hess)
    cross = np.einsum("...ik,...ki->...", b, dD)
    inc = (Pi + a_grad + cross + second) * h + dot_noise(D + bg, batch.dW)

    jl = ens.jumps
    if len(jl):
        order = np.lexsort((jl.event_id, jl.path))
        jinc = np.empty(len(jl))
        for r in order:
            p, k, i = int(jl.path[r]), int(jl.step[r]), int(jl.event_id[r])
            pre, post = jl.pre[r], jl.post[r]
            zpre = z0.value(t0, pre) + hist.before_event(p, k, i, pre)
            zpost = z0.value(t0, post) + hist.before_event(p, k, i, post)
            G = proc.jump(jl.time[r], post, mark_value(s.mark_space, int(jl.mark[r])))
            jinc[r] = G + (zpost - zpre)
        np.add.at(inc, (jl.path[order], jl.step[order]), jinc[order])

    Z = np.empty(X_all.shape[:2])
    Z[:, 0] = z0.value(t0, X_all[:, 0])
    for k in range(grid.n_steps):
        Z[:, k + 1] = Z[:, k] + inc[:, k]
    on_path = z0.value(t0, X_all) + H[:, :, 0]
    return WentzellResult(inc, Z, on_path)


def ito_wentzell_series(proc: ScalarFieldProcess, s: Scenario, x0, noise: NoiseRealization,
                        z0: Optional[SmoothScalarField] = None) -> IncrementSeries:
    ens = euler_ensemble(s, x0, noise)
    res = ito_wentzell_ensemble(proc, s, ens, noise, z0)
    direct = res.field_on_path[0] - res.field_on_path[0, 0]
    return _series(noise.grid, res.increments[0], direct)


# the spelling used elsewhere in the literature
ito_wentzel_series = ito_wentzell_series


@dataclass
class ConsistencyReport:
    per_node: np.ndarray  # |Z_k - z(t_k, x_k)|
    terminal: float  # |Z_N - field evolved at x_N, evaluated at T|
    composite_terminal: float
    field_terminal: float


def composite_terminal_gaps(proc: ScalarFieldProcess, s: Scenario, x0, noises,
                            z0: Optional[SmoothScalarField] = None) -> np.ndarray:
    """|Z_T (composite route) - z(T, x_T) (field route)| for every realization."""
    batch = _as_batch(noises)
    ens = euler_ensemble(s, x0, batch)
    res = ito_wentzell_ensemble(proc, s, ens, batch, z0)
    zT = evolve_field_ensemble(proc, _initial_field(proc, z0), ens.states[:, -1][:, None, :],
                               batch, s.mark_space)[:, -1, 0]
    return np.abs(res.composite[:, -1] - zT)


def composite_consistency(proc: ScalarFieldProcess, s: Scenario, x0, noise: NoiseRealization,
                          z0: Optional[SmoothScalarField] = None) -> ConsistencyReport:
    ens = euler_ensemble(s, x0, noise)
    res = ito_wentzell_ensemble(proc, s, ens, noise, z0)
    zT = evolve_field_ensemble(proc, _initial_field(proc, z0), ens.states[:, -1][:, None, :],
                               noise, s.mark_space)[0, -1, 0]
    ZT = float(res.composite[0, -1])
    return ConsistencyReport(
        per_node=np.abs(res.composite[0] - res.field_on_path[0]),
        terminal=abs(ZT - float(zT)),
        composite_terminal=ZT,
        field_terminal=float(zT),
    )

"""Time grids and the frozen randomness (Wiener increments + Poisson atoms).

A :class:`NoiseRealization` is one sample of the pair (w, nu) on a uniform
grid.  Every coupled computation in the package (paths, Jacobians, fields,
kernels) consumes the same realization, which is what makes pathwise
comparisons meaningful.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "TimeGrid",
    "MarkSpace",
    "JumpEvent",
    "NoiseRealization",
    "NoiseBatch",
    "JumpRound",
    "build_grid",
    "sample_noise",
    "refine_noise",
]

# stream tags mixed into the seed sequence; keep stable for reproducibility
_WIENER_STREAM = 0
_POISSON_STREAM = 1
_BRIDGE_TAG = 0xB51D


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.T)) or self.T <= self.t0:
            raise InvalidArgumentError(f"need T > t0, got t0={self.t0}, T={self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidArgumentError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "T", float(self.T))

    @property
    def h(self) -> float:
        return (self.T - self.t0) / self.n_steps

    def time(self, k: int) -> float:
        """Time of node ``k``; computed directly, never accumulated."""
        if k == self.n_steps:
            return self.T
        return self.t0 + k * self.h

    @property
    def times(self) -> np.ndarray:
        t = self.t0 + np.arange(self.n_steps + 1) * self.h
        t[-1] = self.T
        return t

    def step_of(self, t) -> np.ndarray:
        """Index k of the step (t_k, t_{k+1}] containing each time."""
        t = np.asarray(t, dtype=float)
        k = np.clip(np.ceil((t - self.t0) / self.h).astype(int) - 1, 0, self.n_steps - 1)
        # the division can land one step off when t sits on a node; compare with the nodes
        nodes = self.times
        k = np.where((t <= nodes[k]) & (k > 0), k - 1, k)
        k = np.where((t > nodes[k + 1]) & (k < self.n_steps - 1), k + 1, k)
        return k

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.n_steps * factor)


def build_grid(t0: float, T: float, n_steps: int) -> TimeGrid:
    return TimeGrid(t0, T, n_steps)


@dataclass(frozen=True)
class MarkSpace:
    """Finite-support intensity measure: mark ``marks[j]`` fires at rate ``rates[j]``."""

    marks: tuple = ()
    rates: tuple = ()

    def __post_init__(self):
        marks = tuple(self.marks)
        rates = tuple(float(r) for r in self.rates)
        if len(marks) != len(rates):
            raise InvalidArgumentError("marks and rates must have the same length")
        if any(not (r > 0 and np.isfinite(r)) for r in rates):
            raise InvalidArgumentError(f"all rates must be positive and finite, got {rates}")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "rates", rates)

    def __len__(self):
        return len(self.marks)

    @property
    def total_rate(self) -> float:
        return float(sum(self.rates))

    def mark(self, j: int):
        m = self.marks[j]
        return float(m) if np.ndim(m) == 0 else np.asarray(m, dtype=float)


class JumpEvent(NamedTuple):
    time: float
    mark_index: int


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    grid: TimeGrid
    m: int
    dW: np.ndarray
    events: tuple = ()
    seed: int = 0
    _steps: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        dW = np.array(self.dW, dtype=float).reshape(self.grid.n_steps, self.m)
        dW.setflags(write=False)
        object.__setattr__(self, "dW", dW)
        events = tuple(JumpEvent(float(e[0]), int(e[1])) for e in self.events)
        times = np.array([e.time for e in events], dtype=float)
        if len(events):
            if np.any(np.diff(times) < 0):
                raise InvalidArgumentError("event times must be sorted")
            if times[0] <= self.grid.t0 or times[-1] > self.grid.T:
                raise InvalidArgumentError("event times must lie in (t0, T]")
        object.__setattr__(self, "events", events)
        steps = self.grid.step_of(times) if len(events) else np.zeros(0, dtype=int)
        steps.setflags(write=False)
        object.__setattr__(self, "_steps", steps)

    @classmethod
    def from_events(cls, grid: TimeGrid, m: int = 0, events=(), dW=None, seed: int = 0):
        """Hand-built realization, mainly for deterministic test cases."""
        if dW is None:
            dW = np.zeros((grid.n_steps, m))
        events = sorted((float(t), int(j)) for t, j in events)
        return cls(grid, m, dW, tuple(events), seed)

    @property
    def event_steps(self) -> np.ndarray:
        return self._steps

    def events_in_step(self, k: int) -> list[JumpEvent]:
        idx = np.flatnonzero(self._steps == k)
        return [self.events[i] for i in idx]

    @property
    def W(self) -> np.ndarray:
        """Wiener path at the nodes, shape (n_steps + 1, m), W[0] = 0."""
        out = np.zeros((self.grid.n_steps + 1, self.m))
        np.cumsum(self.dW, axis=0, out=out[1:])
        return out

    def __eq__(self, other):
        if not isinstance(other, NoiseRealization):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.m == other.m
            and self.seed == other.seed
            and self.events == other.events
            and np.array_equal(self.dW, other.dW)
        )

    __hash__ = None


def _generator(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def sample_noise(grid: TimeGrid, m: int, ms: MarkSpace, seed: int) -> NoiseRealization:
    """Draw Wiener increments and Poisson atoms from independent seeded streams."""
    if m < 0:
        raise InvalidArgumentError(f"Wiener dimension must be >= 0, got {m}")
    if seed < 0:
        raise InvalidArgumentError(f"seed must be non-negative, got {seed}")
    rng_w = _generator(seed, _WIENER_STREAM)
    dW = rng_w.standard_normal((grid.n_steps, m)) * np.sqrt(grid.h)

    rng_p = _generator(seed, _POISSON_STREAM)
    span = grid.T - grid.t0
    times, marks = [], []
    for j, lam in enumerate(ms.rates):
        count = rng_p.poisson(lam * span)
        # T - U*span lies in (t0, T] for U in [0, 1)
        times.append(grid.T - rng_p.random(count) * span)
        marks.append(np.full(count, j))
    if times:
        times = np.concatenate(times)
        marks = np.concatenate(marks)
        order = np.lexsort((marks, times))
        events = tuple(JumpEvent(float(times[i]), int(marks[i])) for i in order)
    else:
        events = ()
    return NoiseRealization(grid, m, dW, events, seed)


def refine_noise(noise: NoiseRealization, factor: int) -> NoiseRealization:
    """Brownian-bridge refinement: each coarse increment is split into ``factor``
    fine increments drawn from their law conditioned on the coarse sum."""
    if int(factor) != factor or factor < 2:
        raise InvalidArgumentError(f"factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    grid = noise.grid
    fine_grid = grid.refined(factor)
    n, m = noise.dW.shape
    rng = _generator(noise.seed, grid.n_steps, factor, _BRIDGE_TAG)
    xi = rng.standard_normal((n, factor, m)) * np.sqrt(fine_grid.h)
    fine = xi - xi.mean(axis=1, keepdims=True) + noise.dW[:, None, :] / factor
    fine[:, -1, :] = noise.dW - fine[:, :-1, :].sum(axis=1)
    return NoiseRealization(fine_grid, m, fine.reshape(n * factor, m), noise.events, noise.seed)


class JumpRound(NamedTuple):
    """Events of one step applied simultaneously across a batch: at most one
    event per path, all with the same mark."""

    paths: np.ndarray
    mark_index: int
    times: np.ndarray
    event_ids: np.ndarray  # position of each event inside its own realization


class NoiseBatch:
    """Several realizations on one grid, stacked for vectorized ensembles."""

    def __init__(self, noises: Sequence[NoiseRealization]):
        noises = list(noises)
        if not noises:
            raise InvalidArgumentError("empty noise batch")
        grid, m = noises[0].grid, noises[0].m
        for nz in noises:
            if nz.grid != grid or nz.m != m:
                raise InvalidArgumentError("all realizations in a batch must share grid and m")
        self.noises = noises
        self.grid = grid
        self.m = m
        self.size = len(noises)
        self.dW = np.stack([nz.dW for nz in noises])  # (P, N, m)
        self.rounds: dict[int, list[JumpRound]] = {}
        rows = []
        for p, nz in enumerate(noises):
            steps = nz.event_steps
            rank = np.zeros(len(steps), dtype=int)
            for i in range(1, len(steps)):
                rank[i] = rank[i - 1] + 1 if steps[i] == steps[i - 1] else 0
            for i, ev in enumerate(nz.events):
                rows.append((int(steps[i]), int(rank[i]), ev.mark_index, p, ev.time, i))
        rows.sort()
        groups: dict[tuple, list] = {}
        for step, rank, j, p, t, i in rows:
            groups.setdefault((step, rank, j), []).append((p, t, i))
        for (step, rank, j), members in sorted(groups.items()):
            paths = np.array([mm[0] for mm in members])
            times = np.array([mm[1] for mm in members])
            ids = np.array([mm[2] for mm in members])
            self.rounds.setdefault(step, []).append(JumpRound(paths, j, times, ids))

    def jumps(self, k: int) -> list[JumpRound]:
        return self.rounds.get(k, [])

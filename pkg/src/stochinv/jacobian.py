"""Variational (Jacobian) flow of the jump-diffusion and a bump-and-rerun oracle.

Per step the matrix J = dx(t)/dx(0) follows

    J <- J + [da/dx h + sum_k db_k/dx dW_k] J          (at the pre-step state)
    J <- (I + dg/dx(tau, x-, gamma)) J                  (at each jump, pre-jump state)

which is exactly the derivative of the discrete Euler map, so the bump oracle
agrees with it up to the central-difference truncation error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedPathError, InvalidArgumentError, OracleFailureError
from .integrate import Path, euler_ensemble
from .noise import NoiseRealization, TimeGrid
from .system import Scenario


@dataclass(frozen=True, eq=False)
class JacobianState:
    grid: TimeGrid
    matrices: np.ndarray  # (N+1, n, n)
    dets: np.ndarray  # (N+1,)
    warnings: tuple = field(default=())

    @property
    def terminal(self) -> np.ndarray:
        return self.matrices[-1]


def simulate_jacobian(s: Scenario, x0, noise: NoiseRealization) -> tuple[Path, JacobianState]:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (s.n,):
        raise InvalidArgumentError(f"x0 must have {s.n} components, got {x0.shape}")
    ens = euler_ensemble(s, x0, noise, with_jacobian=True)
    path = ens.path(0)
    # determinant by LU at every stored node
    dets = np.linalg.det(ens.jacobians[0])
    return path, JacobianState(noise.grid, ens.jacobians[0], dets, tuple(ens.warnings))


def jacobian_fd_oracle(s: Scenario, x0, noise: NoiseRealization, delta: float = 1e-4) -> np.ndarray:
    """Central bump-and-rerun estimate of dx(T)/dx(0) on one shared realization."""
    if not delta > 0:
        raise InvalidArgumentError(f"bump size must be positive, got {delta}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = s.n
    starts = []
    for j in range(n):
        for sign in (1.0, -1.0):
            y = x0.copy()
            y[j] += sign * delta
            starts.append(y)
    starts = np.array(starts)
    if not np.all(s.contains(starts)):
        raise OracleFailureError("bumped start points leave the domain box")
    ens = euler_ensemble(s, starts, [noise] * len(starts))
    if not np.all(ens.ok):
        raise OracleFailureError(f"bumped path(s) {np.flatnonzero(~ens.ok).tolist()} diverged")
    term = ens.states[:, -1]
    cols = [(term[2 * j] - term[2 * j + 1]) / (starts[2 * j, j] - starts[2 * j + 1, j]) for j in range(n)]
    return np.stack(cols, axis=-1)


def divergence_integral(s: Scenario, path: Path) -> float:
    """Trapezoid integral of div a along the computed path."""
    t = path.grid.times
    da = s.coeffs.drift_jacobian(t, path.states)
    div = np.trace(da, axis1=-2, axis2=-1)
    return float(np.sum(0.5 * (div[1:] + div[:-1]) * np.diff(t)))


def liouville_gap(s: Scenario, x0, noise: NoiseRealization) -> float:
    """|log det J(T) - int div a| for a deterministic (b=0, g=0) scenario."""
    path, js = simulate_jacobian(s, x0, noise)
    if js.dets[-1] <= 0:
        raise DivergedPathError("det J(T) is not positive", step=noise.grid.n_steps)
    return abs(float(np.log(js.dets[-1])) - divergence_integral(s, path))

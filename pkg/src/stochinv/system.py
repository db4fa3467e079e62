"""Coefficient fields, scalar fields and finite-difference derivative checks.

Evaluator conventions (all evaluators are vectorized):

* ``x`` has shape ``(..., n)``; ``t`` is a float or an array broadcastable
  against ``x[..., 0]``.
* ``a(t, x) -> (..., n)``, ``b(t, x) -> (..., n, m)``, ``g(t, x, gamma) -> (..., n)``
  where ``gamma`` is a single mark value.
* ``da -> (..., n, n)`` with ``da[..., i, j] = d a_i / d x_j``,
  ``db -> (..., n, m, n)`` with ``db[..., i, k, j] = d b_ik / d x_j``,
  ``dg -> (..., n, n)``.

Missing derivative evaluators fall back to central differences with step
``1e-5 * max(1, |x_j|)`` per component.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainExitError, InvalidArgumentError
from .noise import MarkSpace

FD_REL_STEP = 1e-5
HESS_REL_STEP = 1e-4


def _broadcast(value, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


def _fd_steps(x: np.ndarray, rel: float) -> np.ndarray:
    return rel * np.maximum(1.0, np.abs(x))


def fd_jacobian(func: Callable, x: np.ndarray, rel: float = FD_REL_STEP) -> np.ndarray:
    """Central-difference Jacobian of ``func(x)`` with the derivative axis last."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    steps = _fd_steps(x, rel)
    cols = []
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[..., j] += steps[..., j]
        xm[..., j] -= steps[..., j]
        span = xp[..., j] - xm[..., j]
        diff = np.asarray(func(xp), dtype=float) - np.asarray(func(xm), dtype=float)
        span = span.reshape(span.shape + (1,) * (diff.ndim - span.ndim))
        cols.append(diff / span)
    return np.stack(cols, axis=-1)


def fd_derivative(f: Callable, t: float, x, j: int, delta: float, box=None):
    """Central difference ``(f(t, x + delta e_j) - f(t, x - delta e_j)) / (2 delta)``."""
    if not delta > 0:
        raise InvalidArgumentError(f"step must be positive, got {delta}")
    x = np.asarray(x, dtype=float)
    e = np.zeros(x.shape[-1])
    e[j] = delta
    if box is not None:
        box = np.asarray(box, dtype=float)
        for pt in (x + e, x - e):
            if np.any(pt < box[:, 0]) or np.any(pt > box[:, 1]):
                raise DomainExitError(f"stencil point {pt} leaves the domain box")
    return (np.asarray(f(t, x + e)) - np.asarray(f(t, x - e))) / (2.0 * delta)


@dataclass(frozen=True)
class CoefficientField:
    """The triple (a, b, g) of a jump-diffusion with optional analytic derivatives."""

    n: int
    m: int
    a: Callable
    b: Callable
    g: Callable
    da: Optional[Callable] = None
    db: Optional[Callable] = None
    dg: Optional[Callable] = None

    @property
    def has_analytic_derivatives(self) -> bool:
        return self.da is not None and self.db is not None and self.dg is not None

    def drift(self, t, x):
        x = np.asarray(x, dtype=float)
        return _broadcast(self.a(t, x), x.shape)

    def diffusion(self, t, x):
        x = np.asarray(x, dtype=float)
        return _broadcast(self.b(t, x), x.shape + (self.m,))

    def jump(self, t, x, gamma):
        x = np.asarray(x, dtype=float)
        return _broadcast(self.g(t, x, gamma), x.shape)

    def drift_jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.da is not None:
            return _broadcast(self.da(t, x), x.shape + (self.n,))
        return fd_jacobian(lambda y: self.drift(t, y), x)

    def diffusion_jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.db is not None:
            return _broadcast(self.db(t, x), x.shape + (self.m, self.n))
        return fd_jacobian(lambda y: self.diffusion(t, y), x)

    def jump_jacobian(self, t, x, gamma):
        x = np.asarray(x, dtype=float)
        if self.dg is not None:
            return _broadcast(self.dg(t, x, gamma), x.shape + (self.n,))
        return fd_jacobian(lambda y: self.jump(t, y, gamma), x)


@dataclass(frozen=True)
class SmoothScalarField:
    """A scalar test function f(t, x) with first/second derivatives.

    ``f(t, x) -> (...)``, ``dt -> (...)``, ``grad -> (..., n)``,
    ``hess -> (..., n, n)``.  Missing derivatives are finite-differenced.
    """

    name: str
    f: Callable
    dt: Optional[Callable] = None
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        return _broadcast(self.f(t, x), x.shape[:-1])

    def time_derivative(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.dt is not None:
            return _broadcast(self.dt(t, x), x.shape[:-1])
        t = np.asarray(t, dtype=float)
        dt = FD_REL_STEP * np.maximum(1.0, np.abs(t))
        return (self.value(t + dt, x) - self.value(t - dt, x)) / (2 * dt)

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return _broadcast(self.grad(t, x), x.shape)
        return fd_jacobian(lambda y: self.value(t, y), x)

    def hessian(self, t, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        if self.hess is not None:
            return _broadcast(self.hess(t, x), x.shape + (n,))
        return fd_jacobian(lambda y: self.gradient(t, y), x, rel=HESS_REL_STEP)


@dataclass(frozen=True)
class ScalarFieldProcess:
    """Coefficients of a random scalar field dz = Pi dt + D_k dw_k + G nu(dt, dgamma).

    ``Pi(t, x) -> (...)``, ``D(t, x) -> (..., m)``, ``G(t, x, gamma) -> (...)``,
    optional ``dD -> (..., m, n)``.  ``time_homogeneous`` lets the field be
    summed in closed form instead of replaying its history.
    """

    name: str
    n: int
    m: int
    Pi: Callable
    D: Callable
    G: Callable
    dD: Optional[Callable] = None
    time_homogeneous: bool = True
    initial: Optional[SmoothScalarField] = None

    def drift(self, t, x):
        x = np.asarray(x, dtype=float)
        return _broadcast(self.Pi(t, x), x.shape[:-1])

    def noise_coeff(self, t, x):
        x = np.asarray(x, dtype=float)
        return _broadcast(self.D(t, x), x.shape[:-1] + (self.m,))

    def jump(self, t, x, gamma):
        x = np.asarray(x, dtype=float)
        return _broadcast(self.G(t, x, gamma), x.shape[:-1])

    def noise_coeff_gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.dD is not None:
            return _broadcast(self.dD(t, x), x.shape[:-1] + (self.m, self.n))
        return fd_jacobian(lambda y: self.noise_coeff(t, y), x)


@dataclass(frozen=True)
class Scenario:
    name: str
    coeffs: CoefficientField
    mark_space: MarkSpace
    domain_box: tuple
    known_integrals: tuple = ()
    notes: str = ""
    params: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.coeffs.n

    @property
    def m(self) -> int:
        return self.coeffs.m

    @property
    def box(self) -> np.ndarray:
        return np.asarray(self.domain_box, dtype=float).reshape(self.n, 2)

    def lattice(self, per_axis: int = 5, centered: bool = True) -> np.ndarray:
        """Tensor lattice of points in the domain box, shape (per_axis**n, n)."""
        axes = []
        for lo, hi in self.box:
            if centered:
                axes.append(lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis)
            else:
                axes.append(np.linspace(lo, hi, per_axis))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([mm.ravel() for mm in mesh], axis=-1)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        box = self.box
        return np.all((x >= box[:, 0]) & (x <= box[:, 1]), axis=-1)


@dataclass
class CoefficientCheck:
    coefficient: str
    max_error: float
    location: Optional[np.ndarray]


@dataclass
class ValidationReport:
    scenario: str
    tol: float
    delta: float
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.max_error <= self.tol for c in self.checks)

    @property
    def max_error(self) -> float:
        return max((c.max_error for c in self.checks), default=0.0)

    def failures(self) -> list:
        return [c for c in self.checks if not c.max_error <= self.tol]


def _compare(name, analytic, fd, points) -> CoefficientCheck:
    err = np.abs(np.asarray(analytic) - np.asarray(fd))
    per_point = err.reshape(len(points), -1).max(axis=1) if err.size else np.zeros(len(points))
    if not len(per_point):
        return CoefficientCheck(name, 0.0, None)
    i = int(np.nanargmax(per_point)) if np.all(np.isfinite(per_point)) else int(np.argmax(~np.isfinite(per_point)))
    worst = float(per_point[i]) if np.isfinite(per_point[i]) else float("inf")
    return CoefficientCheck(name, worst, points[i].copy())


def validate_scenario(s: Scenario, points=None, delta: float = 1e-5, tol: float = 1e-6,
                      t: float = 0.0) -> ValidationReport:
    """Compare analytic coefficient derivatives with central differences."""
    c = s.coeffs
    if not c.has_analytic_derivatives:
        raise InvalidArgumentError(f"scenario {s.name!r} lacks analytic derivatives")
    pts = s.lattice(5) if points is None else np.asarray(points, dtype=float).reshape(-1, s.n)

    def fd(func):
        return np.stack([fd_derivative(func, t, pts, j, delta) for j in range(s.n)], axis=-1)

    checks = [
        _compare("da/dx", c.drift_jacobian(t, pts), fd(c.drift), pts),
        _compare("db/dx", c.diffusion_jacobian(t, pts), fd(c.diffusion), pts),
    ]
    for j in range(len(s.mark_space)):
        gamma = s.mark_space.mark(j)
        checks.append(_compare(
            f"dg/dx[mark {j}]",
            c.jump_jacobian(t, pts, gamma),
            fd(lambda tt, y: c.jump(tt, y, gamma)),
            pts,
        ))
    return ValidationReport(s.name, tol, delta, checks)


def check_field_derivatives(u: SmoothScalarField, points, t: float = 0.0, tol: float = 1e-5) -> dict:
    """Max deviation of a field's declared derivatives from finite differences."""
    pts = np.asarray(points, dtype=float)
    plain = SmoothScalarField(u.name, u.f)
    errs = {
        "dt": float(np.max(np.abs(u.time_derivative(t, pts) - plain.time_derivative(t, pts)))),
        "grad": float(np.max(np.abs(u.gradient(t, pts) - plain.gradient(t, pts)))),
        "hess": float(np.max(np.abs(u.hessian(t, pts) - plain.hessian(t, pts)))),
    }
    errs["passed"] = all(v <= tol for k, v in errs.items())
    return errs

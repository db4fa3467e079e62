"""Registry of named scenarios, scalar fields and field processes.

Scenarios are code, not config: a name plus keyword overrides selects one.
"""
from __future__ import annotations

import inspect
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, NotFoundError
from .noise import MarkSpace
from .system import CoefficientField, ScalarFieldProcess, Scenario, SmoothScalarField

_SCENARIOS: dict[str, Callable[..., Scenario]] = {}
_FIELDS: dict[str, Callable[..., SmoothScalarField]] = {}
_PROCESSES: dict[str, Callable[..., ScalarFieldProcess]] = {}
_CACHE: dict = {}


def _register(table):
    def deco(fn):
        table[fn.__name__] = fn
        return fn
    return deco


def _lookup(table, kind, name, params):
    try:
        factory = table[name]
    except KeyError:
        raise NotFoundError(
            f"unknown {kind} {name!r}; available: {', '.join(sorted(table))}"
        ) from None
    allowed = inspect.signature(factory).parameters
    bad = sorted(set(params) - set(allowed))
    if bad:
        raise InvalidArgumentError(f"{kind} {name!r} has no parameter(s) {bad}; accepts {sorted(allowed)}")
    key = (kind, name, tuple(sorted((k, repr(v)) for k, v in params.items())))
    if key not in _CACHE:
        _CACHE[key] = factory(**params)
    return _CACHE[key]


def get_scenario(name: str, **params) -> Scenario:
    return _lookup(_SCENARIOS, "scenario", name, params)


def get_field(name: str, **params) -> SmoothScalarField:
    return _lookup(_FIELDS, "field", name, params)


def get_field_process(name: str, **params) -> ScalarFieldProcess:
    return _lookup(_PROCESSES, "field process", name, params)


def list_scenarios() -> list[str]:
    return sorted(_SCENARIOS)


def list_fields() -> list[str]:
    return sorted(_FIELDS)


def list_field_processes() -> list[str]:
    return sorted(_PROCESSES)


def scenario_parameters(name: str) -> dict:
    if name not in _SCENARIOS:
        get_scenario(name)
    sig = inspect.signature(_SCENARIOS[name])
    return {k: p.default for k, p in sig.parameters.items()}


def _zeros(x, *trailing):
    return np.zeros(np.shape(x)[:-1] + trailing)


def _marks(values, rates) -> MarkSpace:
    values, rates = tuple(values), tuple(rates)
    if len(rates) == 1 and len(values) > 1:
        rates = rates * len(values)
    return MarkSpace(values, rates)


# --------------------------------------------------------------------- scenarios

@_register(_SCENARIOS)
def freeze() -> Scenario:
    c = CoefficientField(
        n=1, m=1,
        a=lambda t, x: _zeros(x, 1),
        b=lambda t, x: _zeros(x, 1, 1),
        g=lambda t, x, gam: _zeros(x, 1),
        da=lambda t, x: _zeros(x, 1, 1),
        db=lambda t, x: _zeros(x, 1, 1, 1),
        dg=lambda t, x, gam: _zeros(x, 1, 1),
    )
    return Scenario("freeze", c, MarkSpace((0.0,), (1.0,)), ((-5.0, 5.0),),
                    notes="zero system; every path is constant")


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@_register(_SCENARIOS)
def rot2d(angles=(np.pi / 6,), rates=(1.0,), eps: float = 0.0) -> Scenario:
    """Rotational diffusion with rotation jumps; |x|^2 is a first integral when eps=0."""
    shift = np.array([eps, 0.0])

    def a(t, x):
        return -0.5 * x + shift

    def b(t, x):
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)[..., None]

    def db(t, x):
        out = np.zeros(np.shape(x)[:-1] + (2, 1, 2))
        out[..., 0, 0, 1] = -1.0
        out[..., 1, 0, 0] = 1.0
        return out

    def g(t, x, gam):
        return x @ (_rotation(gam) - np.eye(2)).T

    def dg(t, x, gam):
        return np.broadcast_to(_rotation(gam) - np.eye(2), np.shape(x)[:-1] + (2, 2))

    c = CoefficientField(
        n=2, m=1, a=a, b=b, g=g,
        da=lambda t, x: np.broadcast_to(-0.5 * np.eye(2), np.shape(x)[:-1] + (2, 2)),
        db=db, dg=dg,
    )
    return Scenario("rot2d", c, _marks(angles, rates), ((-2.0, 2.0), (-2.0, 2.0)),
                    known_integrals=("radius2",) if eps == 0 else (),
                    notes="a=-x/2+(eps,0), b=(-x2, x1), g=R(gamma)x-x",
                    params={"angles": tuple(angles), "rates": tuple(rates), "eps": eps})


@_register(_SCENARIOS)
def ou1d(sigma: float = 0.5, c: float = 1.0, rate: float = 1.0) -> Scenario:
    """Ornstein-Uhlenbeck with constant jumps of size c at rate ``rate``."""
    coeffs = CoefficientField(
        n=1, m=1,
        a=lambda t, x: -x,
        b=lambda t, x: np.full(np.shape(x) + (1,), float(sigma)),
        g=lambda t, x, gam: np.full(np.shape(x), float(gam)),
        da=lambda t, x: np.full(np.shape(x) + (1,), -1.0),
        db=lambda t, x: _zeros(x, 1, 1, 1),
        dg=lambda t, x, gam: _zeros(x, 1, 1),
    )
    ms = MarkSpace((float(c),), (float(rate),)) if rate > 0 else MarkSpace()
    return Scenario("ou1d", coeffs, ms, ((-6.0, 6.0),),
                    notes="x(t)=e^-t x0 + sigma int e^-(t-s) dw + sum c e^-(t-tau)",
                    params={"sigma": sigma, "c": c, "rate": rate})


@_register(_SCENARIOS)
def decay1d(rate_of_decay: float = 1.0) -> Scenario:
    k = float(rate_of_decay)
    coeffs = CoefficientField(
        n=1, m=1,
        a=lambda t, x: -k * x,
        b=lambda t, x: _zeros(x, 1, 1),
        g=lambda t, x, gam: _zeros(x, 1),
        da=lambda t, x: np.full(np.shape(x) + (1,), -k),
        db=lambda t, x: _zeros(x, 1, 1, 1),
        dg=lambda t, x, gam: _zeros(x, 1, 1),
    )
    return Scenario("decay1d", coeffs, MarkSpace(), ((-6.0, 6.0),),
                    notes="deterministic a=-kx; J(t)=e^-kt")


@_register(_SCENARIOS)
def bm1d(sigma: float = 1.0) -> Scenario:
    coeffs = CoefficientField(
        n=1, m=1,
        a=lambda t, x: _zeros(x, 1),
        b=lambda t, x: np.full(np.shape(x) + (1,), float(sigma)),
        g=lambda t, x, gam: _zeros(x, 1),
        da=lambda t, x: _zeros(x, 1, 1),
        db=lambda t, x: _zeros(x, 1, 1, 1),
        dg=lambda t, x, gam: _zeros(x, 1, 1),
    )
    return Scenario("bm1d", coeffs, MarkSpace(), ((-8.0, 8.0),), notes="dx = sigma dw")


@_register(_SCENARIOS)
def drift1d(speed: float = 1.0) -> Scenario:
    coeffs = CoefficientField(
        n=1, m=1,
        a=lambda t, x: np.full(np.shape(x), float(speed)),
        b=lambda t, x: _zeros(x, 1, 1),
        g=lambda t, x, gam: _zeros(x, 1),
        da=lambda t, x: _zeros(x, 1, 1),
        db=lambda t, x: _zeros(x, 1, 1, 1),
        dg=lambda t, x, gam: _zeros(x, 1, 1),
    )
    return Scenario("drift1d", coeffs, MarkSpace(), ((-5.0, 5.0),), notes="constant drift")


@_register(_SCENARIOS)
def shift1d(c: float = 1.0, rate: float = 1.0) -> Scenario:
    """Pure jumps x -> x + c."""
    coeffs = CoefficientField(
        n=1, m=0,
        a=lambda t, x: _zeros(x, 1),
        b=lambda t, x: _zeros(x, 1, 0),
        g=lambda t, x, gam: np.full(np.shape(x), float(gam)),
        da=lambda t, x: _zeros(x, 1, 1),
        db=lambda t, x: _zeros(x, 1, 0, 1),
        dg=lambda t, x, gam: _zeros(x, 1, 1),
    )
    return Scenario("shift1d", coeffs, MarkSpace((float(c),), (float(rate),)), ((-6.0, 6.0),),
                    notes="a=b=0, g=c")


@_register(_SCENARIOS)
def tanhjump1d(scale: float = 0.1, rate: float = 2.0) -> Scenario:
    """Pure jumps x -> x + scale*tanh(x); invertible for scale > -1."""
    s = float(scale)
    coeffs = CoefficientField(
        n=1, m=0,
        a=lambda t, x: _zeros(x, 1),
        b=lambda t, x: _zeros(x, 1, 0),
        g=lambda t, x, gam: gam * s * np.tanh(x),
        da=lambda t, x: _zeros(x, 1, 1),
        db=lambda t, x: _zeros(x, 1, 0, 1),
        dg=lambda t, x, gam: (gam * s / np.cosh(x) ** 2)[..., None],
    )
    return Scenario("tanhjump1d", coeffs, MarkSpace((1.0,), (float(rate),)), ((-5.0, 5.0),),
                    notes="a=b=0, g=scale*tanh(x)")


@_register(_SCENARIOS)
def rotflow2d() -> Scenario:
    """Deterministic rotation a = A x, A = [[0, 1], [-1, 0]]."""
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    coeffs = CoefficientField(
        n=2, m=1,
        a=lambda t, x: x @ A.T,
        b=lambda t, x: _zeros(x, 2, 1),
        g=lambda t, x, gam: _zeros(x, 2),
        da=lambda t, x: np.broadcast_to(A, np.shape(x)[:-1] + (2, 2)),
        db=lambda t, x: _zeros(x, 2, 1, 2),
        dg=lambda t, x, gam: _zeros(x, 2, 2),
    )
    return Scenario("rotflow2d", coeffs, MarkSpace(), ((-3.0, 3.0), (-3.0, 3.0)),
                    notes="J(t) = exp(At), det J = 1")


@_register(_SCENARIOS)
def pendulum2d(noise: float = 0.3, damping: float = 0.2, kick: float = 0.1, rate: float = 1.0) -> Scenario:
    """Nonlinear damped pendulum with multiplicative noise and shear kicks."""
    def a(t, x):
        return np.stack([x[..., 1], -np.sin(x[..., 0]) - damping * x[..., 1]], axis=-1)

    def da(t, x):
        out = np.zeros(np.shape(x)[:-1] + (2, 2))
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -np.cos(x[..., 0])
        out[..., 1, 1] = -damping
        return out

    def b(t, x):
        out = np.zeros(np.shape(x)[:-1] + (2, 1))
        out[..., 1, 0] = noise * np.cos(x[..., 0])
        return out

    def db(t, x):
        out = np.zeros(np.shape(x)[:-1] + (2, 1, 2))
        out[..., 1, 0, 0] = -noise * np.sin(x[..., 0])
        return out

    def g(t, x, gam):
        return np.stack([np.zeros(np.shape(x)[:-1]), gam * np.sin(x[..., 0])], axis=-1)

    def dg(t, x, gam):
        out = np.zeros(np.shape(x)[:-1] + (2, 2))
        out[..., 1, 0] = gam * np.cos(x[..., 0])
        return out

    coeffs = CoefficientField(n=2, m=1, a=a, b=b, g=g, da=da, db=db, dg=dg)
    return Scenario("pendulum2d", coeffs, MarkSpace((float(kick),), (float(rate),)),
                    ((-4.0, 4.0), (-4.0, 4.0)), notes="nonlinear test system")


# ------------------------------------------------------------------------ fields

@_register(_FIELDS)
def const(value: float = 1.0) -> SmoothScalarField:
    return SmoothScalarField(
        "const",
        f=lambda t, x: np.full(np.shape(x)[:-1], float(value)),
        dt=lambda t, x: _zeros(x),
        grad=lambda t, x: np.zeros(np.shape(x)),
        hess=lambda t, x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
    )


@_register(_FIELDS)
def identity(component: int = 0) -> SmoothScalarField:
    def grad(t, x):
        out = np.zeros(np.shape(x))
        out[..., component] = 1.0
        return out

    return SmoothScalarField(
        "identity",
        f=lambda t, x: np.asarray(x)[..., component],
        dt=lambda t, x: _zeros(x),
        grad=grad,
        hess=lambda t, x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
    )


@_register(_FIELDS)
def square(component: int = 0) -> SmoothScalarField:
    def grad(t, x):
        out = np.zeros(np.shape(x))
        out[..., component] = 2.0 * x[..., component]
        return out

    def hess(t, x):
        out = np.zeros(np.shape(x) + (np.shape(x)[-1],))
        out[..., component, component] = 2.0
        return out

    return SmoothScalarField("square", f=lambda t, x: x[..., component] ** 2,
                             dt=lambda t, x: _zeros(x), grad=grad, hess=hess)


@_register(_FIELDS)
def radius2() -> SmoothScalarField:
    n_of = lambda x: np.shape(x)[-1]  # noqa: E731
    return SmoothScalarField(
        "radius2",
        f=lambda t, x: np.sum(x * x, axis=-1),
        dt=lambda t, x: _zeros(x),
        grad=lambda t, x: 2.0 * x,
        hess=lambda t, x: np.broadcast_to(2.0 * np.eye(n_of(x)), np.shape(x) + (n_of(x),)),
    )


@_register(_FIELDS)
def wave() -> SmoothScalarField:
    """sum_i sin(x_i) + |x|^2/2 + 0.3 x_0 x_last: smooth, non-polynomial, coupled."""
    def f(t, x):
        return np.sin(x).sum(-1) + 0.5 * (x * x).sum(-1) + 0.3 * x[..., 0] * x[..., -1]

    def grad(t, x):
        out = np.cos(x) + x
        out[..., 0] += 0.3 * x[..., -1]
        out[..., -1] += 0.3 * x[..., 0]
        return out

    def hess(t, x):
        n = np.shape(x)[-1]
        out = np.zeros(np.shape(x) + (n,))
        idx = np.arange(n)
        out[..., idx, idx] = 1.0 - np.sin(x)
        out[..., 0, n - 1] += 0.3
        out[..., n - 1, 0] += 0.3
        return out

    return SmoothScalarField("wave", f=f, dt=lambda t, x: _zeros(x), grad=grad, hess=hess)


@_register(_FIELDS)
def travelling(speed: float = 1.0) -> SmoothScalarField:
    """u(t, x) = x_0 - speed * t."""
    def grad(t, x):
        out = np.zeros(np.shape(x))
        out[..., 0] = 1.0
        return out

    return SmoothScalarField(
        "travelling",
        f=lambda t, x: x[..., 0] - speed * np.asarray(t),
        dt=lambda t, x: np.full(np.shape(x)[:-1], -float(speed)),
        grad=grad,
        hess=lambda t, x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
    )


# ------------------------------------------------------------- field processes

@_register(_PROCESSES)
def null(n: int = 1, m: int = 1, initial: str = "wave") -> ScalarFieldProcess:
    """Pi = D = G = 0: the field stays equal to its initial value."""
    return ScalarFieldProcess(
        "null", n, m,
        Pi=lambda t, x: _zeros(x),
        D=lambda t, x: _zeros(x, m),
        G=lambda t, x, gam: _zeros(x),
        dD=lambda t, x: _zeros(x, m, n),
        initial=get_field(initial),
    )


@_register(_PROCESSES)
def rot2d_shift() -> ScalarFieldProcess:
    """Pi = 0, D_1 = 1, G = 0 with z0 = x1 (linear in x)."""
    return ScalarFieldProcess(
        "rot2d_shift", 2, 1,
        Pi=lambda t, x: _zeros(x),
        D=lambda t, x: np.ones(np.shape(x)[:-1] + (1,)),
        G=lambda t, x, gam: _zeros(x),
        dD=lambda t, x: _zeros(x, 1, 2),
        initial=get_field("identity"),
    )


@_register(_PROCESSES)
def rot2d_mixed() -> ScalarFieldProcess:
    """Pi = x2/2, D_1 = 1/2 + 3 x1/10, G = x2/5 with z0 = x1^2 + x2/2."""
    def dD(t, x):
        out = np.zeros(np.shape(x)[:-1] + (1, 2))
        out[..., 0, 0] = 0.3
        return out

    z0 = SmoothScalarField(
        "rot2d_mixed_z0",
        f=lambda t, x: x[..., 0] ** 2 + 0.5 * x[..., 1],
        dt=lambda t, x: _zeros(x),
        grad=lambda t, x: np.stack([2.0 * x[..., 0], np.full(np.shape(x)[:-1], 0.5)], axis=-1),
        hess=lambda t, x: np.broadcast_to(np.array([[2.0, 0.0], [0.0, 0.0]]), np.shape(x) + (2,)),
    )
    return ScalarFieldProcess(
        "rot2d_mixed", 2, 1,
        Pi=lambda t, x: 0.5 * x[..., 1],
        D=lambda t, x: (0.5 + 0.3 * x[..., 0])[..., None],
        G=lambda t, x, gam: 0.2 * x[..., 1],
        dD=dD,
        initial=z0,
    )


@_register(_PROCESSES)
def clocked1d() -> ScalarFieldProcess:
    """Time-dependent 1D field: Pi = cos(t) x, D_1 = sin(t) + x^2/10, G = t x / 4."""
    return ScalarFieldProcess(
        "clocked1d", 1, 1,
        Pi=lambda t, x: np.cos(t) * x[..., 0],
        D=lambda t, x: (np.sin(t) + 0.1 * x[..., 0] ** 2)[..., None],
        G=lambda t, x, gam: 0.25 * np.asarray(t) * x[..., 0],
        dD=lambda t, x: (0.2 * x[..., 0])[..., None, None],
        time_homogeneous=False,
        initial=get_field("wave"),
    )

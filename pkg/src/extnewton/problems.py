"""Benchmark systems and fit models.

Root-finding systems evaluate on arrays whose last axis holds the
coordinates, so the same callables serve single solves and whole grids.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .minimize import FitModel


@dataclass(frozen=True)
class ProblemSystem:
    name: str
    dim: int
    F: Callable
    jac: Callable
    known_roots: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    domain: Optional[Callable] = None   # x -> bool mask, None means everywhere
    domain_cause: str = "zero-division"  # reported when x leaves the domain

    def jacobian(self, x):
        return self.jac(x)

    def in_domain(self, x):
        if self.domain is None:
            return True
        return bool(np.all(self.domain(np.asarray(x, float))))


def _stack2(a, b):
    return np.stack([a, b], axis=-1)


def _jac2(j00, j01, j10, j11):
    return np.stack([_stack2(j00, j01), _stack2(j10, j11)], axis=-2)


def system_rf5():
    """x0^3 - 3 x0 x1^2 - 1 = 0,  3 x0^2 x1 - x1^3 = 0 (cube roots of unity)."""
    def F(x):
        a, b = x[..., 0], x[..., 1]
        return _stack2(a**3 - 3*a*b**2 - 1, 3*a**2*b - b**3)

    def J(x):
        a, b = x[..., 0], x[..., 1]
        return _jac2(3*a**2 - 3*b**2, -6*a*b, 6*a*b, 3*a**2 - 3*b**2)

    r = np.sqrt(3) / 2
    return ProblemSystem("rf5", 2, F, J, np.array([[-0.5, r], [1.0, 0.0], [-0.5, -r]]))


def system_exp():
    """e^x0 - x1 = 0,  x0 x1 - e^x0 = 0; root (1, e)."""
    def F(x):
        a, b = x[..., 0], x[..., 1]
        e = np.exp(a)
        return _stack2(e - b, a*b - e)

    def J(x):
        a, b = x[..., 0], x[..., 1]
        e = np.exp(a)
        return _jac2(e, -np.ones_like(a), b - e, a)

    return ProblemSystem("exp", 2, F, J, np.array([[1.0, np.e]]))


def system_negexp():
    """x0^2 - 1/x0 + x1 = 0,  1/x1 + x0 = 0; undefined on the axes."""
    def F(x):
        a, b = x[..., 0], x[..., 1]
        return _stack2(a**2 - 1/a + b, 1/b + a)

    def J(x):
        a, b = x[..., 0], x[..., 1]
        one = np.ones_like(a)
        return _jac2(2*a + 1/a**2, one, one, -1/b**2)

    dom = lambda x: (x[..., 0] != 0) & (x[..., 1] != 0)
    root = np.array([[2 ** (1/3), -2 ** (-1/3)]])
    return ProblemSystem("negexp", 2, F, J, root, dom)


def scalar_cubic():
    """x^3 + x^2 - 2x, roots -2, 0, 1."""
    def F(x):
        return x**3 + x**2 - 2*x

    def J(x):
        return (3*x**2 + 2*x - 2)[..., None]

    return ProblemSystem("cubic", 1, F, J, np.array([[-2.0], [0.0], [1.0]]))


SYSTEMS = {"rf5": system_rf5, "exp": system_exp, "negexp": system_negexp,
           "cubic": scalar_cubic}


# ----------------------------------------------------------------- fit models

@dataclass(frozen=True)
class ModelRegistryEntry:
    name: str
    model: FitModel
    sampling_range: tuple


def _gn1():
    def f(x, t):
        x = x[:, 0]
        return t[0]*x**3 + t[1]*x**2 + t[2]*x + t[3] + t[4]*np.sin(x)

    def g(x, t):
        x = x[:, 0]
        return np.stack([x**3, x**2, x, np.ones_like(x), np.sin(x)], axis=1)

    def h(x, t):
        return np.zeros((len(x), 5, 5))

    return FitModel("gn1", f, 5, 1, np.array([-0.001, 0.1, 0.1, 2, 15]), g, h)


def _gn2():
    def f(x, t):
        x = x[:, 0]
        return t[0]**3*x**3 + t[1]**2*x**2 + t[2]**2*x + t[3]**3 + t[4]*np.sin(x)

    def g(x, t):
        x = x[:, 0]
        return np.stack([3*t[0]**2*x**3, 2*t[1]*x**2, 2*t[2]*x,
                         3*t[3]**2*np.ones_like(x), np.sin(x)], axis=1)

    def h(x, t):
        x = x[:, 0]
        out = np.zeros((len(x), 5, 5))
        out[:, 0, 0] = 6*t[0]*x**3
        out[:, 1, 1] = 2*x**2
        out[:, 2, 2] = 2*x
        out[:, 3, 3] = 6*t[3]
        return out

    return FitModel("gn2", f, 5, 1, np.array([-0.001, 0.1, 0.1, 2, 15]), g, h)


def _cpow(x, p):
    # real part of the principal complex power, for negative bases
    return np.power(x.astype(complex), p)


def _gn3():
    def f(x, t):
        return np.real(t[0]*_cpow(x[:, 0], t[1]) + t[2]*_cpow(x[:, 1], t[3]))

    def g(x, t):
        p0, p1 = _cpow(x[:, 0], t[1]), _cpow(x[:, 1], t[3])
        l0, l1 = np.log(x[:, 0].astype(complex)), np.log(x[:, 1].astype(complex))
        return np.real(np.stack([p0, t[0]*p0*l0, p1, t[2]*p1*l1], axis=1))

    def h(x, t):
        p0, p1 = _cpow(x[:, 0], t[1]), _cpow(x[:, 1], t[3])
        l0, l1 = np.log(x[:, 0].astype(complex)), np.log(x[:, 1].astype(complex))
        out = np.zeros((len(x), 4, 4), dtype=complex)
        out[:, 0, 1] = out[:, 1, 0] = p0*l0
        out[:, 1, 1] = t[0]*p0*l0**2
        out[:, 2, 3] = out[:, 3, 2] = p1*l1
        out[:, 3, 3] = t[2]*p1*l1**2
        return np.real(out)

    return FitModel("gn3", f, 4, 2, np.array([0.1, 4, 0.1, 2]), g, h)


def _gn4():
    def f(x, t):
        return t[0]*np.exp(-x[:, 0]/t[1]) + t[2]*np.exp(-x[:, 1]/t[3])

    def g(x, t):
        e0, e1 = np.exp(-x[:, 0]/t[1]), np.exp(-x[:, 1]/t[3])
        return np.stack([e0, t[0]*e0*x[:, 0]/t[1]**2, e1, t[2]*e1*x[:, 1]/t[3]**2], axis=1)

    def h(x, t):
        a, b = x[:, 0], x[:, 1]
        e0, e1 = np.exp(-a/t[1]), np.exp(-b/t[3])
        out = np.zeros((len(x), 4, 4))
        out[:, 0, 1] = out[:, 1, 0] = e0*a/t[1]**2
        out[:, 1, 1] = t[0]*e0*(a**2/t[1]**4 - 2*a/t[1]**3)
        out[:, 2, 3] = out[:, 3, 2] = e1*b/t[3]**2
        out[:, 3, 3] = t[2]*e1*(b**2/t[3]**4 - 2*b/t[3]**3)
        return out

    return FitModel("gn4", f, 4, 2, np.array([4.0, 2.0, 1.0, 10.0]), g, h)


def models_gn():
    return [ModelRegistryEntry("gn1", _gn1(), (1.0, 10.0)),
            ModelRegistryEntry("gn2", _gn2(), (1.0, 10.0)),
            ModelRegistryEntry("gn3", _gn3(), (1.0, 10.0)),
            ModelRegistryEntry("gn4", _gn4(), (0.1, 10.0))]


# cantilever beam, point load at the free end
BEAM_E = 200e9      # Pa
BEAM_L = 2.0        # m
BEAM_P = 10e3       # N
BEAM_X = np.array([0.0, 0.5, 1.0, 1.5, 2.0])           # m
BEAM_Y = np.array([0.0, 0.490, 1.781, 3.606, 5.698])   # mm
CM4 = 1e-8          # m^4 per cm^4


class NonPositiveParameter(ValueError):
    pass


def beam_model():
    """Tip-loaded cantilever deflection y = P x^2 (3L - x) / (6 E I).

    theta = [I] in cm^4, x in m, y returned in mm.
    """
    def shape(x):
        return BEAM_P * x**2 * (3*BEAM_L - x) / (6*BEAM_E)

    def f(x, t):
        if t[0] <= 0:
            raise NonPositiveParameter("second moment of area must be positive")
        return 1e3 * shape(x[:, 0]) / (t[0]*CM4)

    def g(x, t):
        return (-1e3 * shape(x[:, 0]) / (t[0]**2*CM4))[:, None]

    def h(x, t):
        return (2e3 * shape(x[:, 0]) / (t[0]**3*CM4))[:, None, None]

    return FitModel("beam", f, 1, 1, None, g, h)


def beam_observations():
    from .minimize import Observations
    return Observations(BEAM_X[:, None], BEAM_Y.copy())


def get_model(name):
    if name == "beam":
        return ModelRegistryEntry("beam", beam_model(), (0.0, BEAM_L))
    for e in models_gn():
        if e.name == name:
            return e
    raise KeyError("unknown model %r" % name)


def get_system(name):
    try:
        return SYSTEMS[name]()
    except KeyError:
        raise KeyError("unknown system %r" % name) from None

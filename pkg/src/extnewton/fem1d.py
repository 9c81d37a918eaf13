"""Total-Lagrangian finite elements for a 1-D bar in uniaxial tension/compression.

Node 0 is fixed; the unknowns are the current positions of the other nodes.
Linear two-node elements give a constant stretch per element

    lambda_e = (x_2 - x_1) / (X_2 - X_1)

so the internal force of element e is P(lambda_e) * (-1, +1). The bar has a
unit cross-section and every load is given as a stress.
"""
from dataclasses import dataclass

import numpy as np

from .minimize import FitModel, Observations
from .problems import ProblemSystem
from .rootfind import AffineOfReference, Tolerances, enr_solve, newton_raphson


class NonPositiveStretch(ValueError):
    pass


# ------------------------------------------------------------------- mesh

@dataclass(frozen=True)
class Mesh1D:
    ref_nodes: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.ref_nodes, float)
        if X.ndim != 1 or X.size < 2 or np.any(np.diff(X) <= 0):
            raise ValueError("reference nodes must be strictly increasing")
        object.__setattr__(self, "ref_nodes", X)

    @property
    def n_elems(self):
        return self.ref_nodes.size - 1

    @property
    def connectivity(self):
        e = np.arange(self.n_elems)
        return np.stack([e, e + 1], axis=1)

    @property
    def l0(self):
        return np.diff(self.ref_nodes)


def uniform_mesh(length=2.0, n_elems=5):
    return Mesh1D(np.linspace(0.0, length, n_elems + 1))


# -------------------------------------------------------------- materials
# plain formulas, (P, dP/dlambda); the dataclasses add parameter checks

def linear_stress(lam, E):
    return E * (lam - 1.0), E * np.ones_like(lam)


def mooney_rivlin_stress(lam, mu, nu):
    P = mu*nu*(lam - lam**-2) + mu*(1 - nu)*(1 - lam**-3)
    dP = mu*nu*(1 + 2*lam**-3) + 3*mu*(1 - nu)*lam**-4
    return P, dP


def veronda_westmann_stress(lam, A, B):
    g = lam - lam**-2
    e = np.exp(B*(lam**2 + 2/lam - 3))
    P = 2*A*g*e - A*(1 - lam**-3)
    # d/dlam of the exponent is 2B(lam - lam^-2) = 2B g
    dP = 2*A*(1 + 2*lam**-3)*e + 2*A*g*e*2*B*g - 3*A*lam**-4
    return P, dP


@dataclass(frozen=True)
class LinearElastic:
    E: float

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("E must be positive")

    def stress(self, lam):
        return linear_stress(lam, self.E)

    @property
    def params(self):
        return np.array([self.E])


@dataclass(frozen=True)
class MooneyRivlin:
    """P = mu nu (lam - lam^-2) + mu (1 - nu)(1 - lam^-3)"""
    mu: float
    nu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError("nu must lie in [0, 1]")

    def stress(self, lam):
        return mooney_rivlin_stress(lam, self.mu, self.nu)

    @property
    def params(self):
        return np.array([self.mu, self.nu])


@dataclass(frozen=True)
class VerondaWestmann:
    """P = 2A (lam - lam^-2) exp(B (lam^2 + 2/lam - 3)) - A (1 - lam^-3)"""
    A: float
    B: float

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0):
            raise ValueError("A and B must be positive")

    def stress(self, lam):
        return veronda_westmann_stress(lam, self.A, self.B)

    @property
    def params(self):
        return np.array([self.A, self.B])


MATERIALS = {"linear": LinearElastic, "mooney_rivlin": MooneyRivlin,
             "veronda_westmann": VerondaWestmann}


def stress(material, lam):
    """First Piola-Kirchhoff stress and tangent dP/dlambda."""
    lam = np.asarray(lam, float)
    if np.any(~(lam > 0)):
        raise NonPositiveStretch("stretch must be positive")
    return material.stress(lam)


# -------------------------------------------------------- shape functions

def shape_functions(X1, X2, X):
    """Linear N on [X1, X2] evaluated at X."""
    l0 = X2 - X1
    return np.stack([(X2 - X) / l0, (X - X1) / l0], axis=-1)


def shape_derivatives(l0):
    return -1.0 / l0, 1.0 / l0


GAUSS_XI = np.array([-1.0, 1.0]) / np.sqrt(3.0)
GAUSS_W = np.array([1.0, 1.0])


# ---------------------------------------------------------------- problem

@dataclass(frozen=True)
class Loading:
    """Body force density rho0*b (Pa/m) and end traction (Pa).

    ``body_factor`` multiplies the consistent nodal body load. It is 1 for
    the standard weak form; the loaded presets in ``expcli`` use 2.
    """
    body: float = 0.0
    traction: float = 0.0
    body_factor: float = 1.0

    def __post_init__(self):
        if not all(np.isfinite([self.body, self.traction, self.body_factor])):
            raise ValueError("loads must be finite")


@dataclass(frozen=True)
class ForwardProblem:
    mesh: Mesh1D
    material: object
    loading: Loading


@dataclass
class DeformedState:
    cur_nodes: np.ndarray
    stretch: np.ndarray
    stress: np.ndarray

    @property
    def length(self):
        return self.cur_nodes[-1] - self.cur_nodes[0]


def _positions(problem, x_free):
    return np.concatenate([problem.mesh.ref_nodes[:1], np.asarray(x_free, float)])


def stretches(problem, x_free):
    return np.diff(_positions(problem, x_free)) / problem.mesh.l0


def state_from(problem, x_free):
    lam = stretches(problem, x_free)
    P, _ = stress(problem.material, lam)
    return DeformedState(_positions(problem, x_free), lam, P)


def _scatter(problem, fe):
    """Assemble element pairs fe (n_e, 2) into the global nodal vector."""
    f = np.zeros(problem.mesh.ref_nodes.size)
    conn = problem.mesh.connectivity
    np.add.at(f, conn[:, 0], fe[:, 0])
    np.add.at(f, conn[:, 1], fe[:, 1])
    return f


def internal_forces(problem, x_free):
    """f_int over the free nodes: element force P_e * (-1, +1), scattered."""
    lam = stretches(problem, x_free)
    P, _ = stress(problem.material, lam)
    dN1, dN2 = shape_derivatives(problem.mesh.l0)
    # integral of N_,X P over the element with constant P
    fe = np.stack([dN1, dN2], axis=1) * (P * problem.mesh.l0)[:, None]
    return _scatter(problem, fe)[1:]


def external_forces(problem):
    """f_ext over the free nodes from the body load and the end traction."""
    mesh, load = problem.mesh, problem.loading
    X1, X2 = mesh.ref_nodes[:-1], mesh.ref_nodes[1:]
    fe = np.zeros((mesh.n_elems, 2))
    for xi, wq in zip(GAUSS_XI, GAUSS_W):
        Xq = 0.5 * (X1 + X2) + 0.5 * xi * mesh.l0
        N = shape_functions(X1, X2, Xq)
        fe += wq * N * (load.body * load.body_factor * 0.5 * mesh.l0)[:, None]
    f = _scatter(problem, fe)
    f[-1] += load.traction
    return f[1:]


def stiffness(problem, x_free):
    """Tangent d f_int / d x over the free nodes (tridiagonal)."""
    mesh = problem.mesh
    lam = stretches(problem, x_free)
    _, dP = stress(problem.material, lam)
    k = dP / mesh.l0
    n = mesh.ref_nodes.size
    K = np.zeros((n, n))
    for e, (a, b) in enumerate(mesh.connectivity):
        K[a, a] += k[e]
        K[b, b] += k[e]
        K[a, b] -= k[e]
        K[b, a] -= k[e]
    return K[1:, 1:]


RESIDUAL_FORMS = ("element", "nodal")


def forward_residual(problem, form="element"):
    """Equilibrium residual as a ProblemSystem over the free nodal positions.

    form="nodal" returns f_ext - f_int node by node. form="element" returns
    the same equations summed from the free end inwards, so entry e is the
    balance of the part of the bar beyond element e (its stress against
    the load it carries). Both share every root and give identical NR steps.
    """
    if form not in RESIDUAL_FORMS:
        raise ValueError("form must be one of %s" % (RESIDUAL_FORMS,))
    fext = external_forces(problem)
    n = fext.size
    A = np.triu(np.ones((n, n))) if form == "element" else np.eye(n)

    def F(x):
        return A @ (fext - internal_forces(problem, x))

    def J(x):
        return -A @ stiffness(problem, x)

    def admissible(x):
        return np.all(np.isfinite(x)) and np.all(stretches(problem, x) > 0)

    return ProblemSystem("bar-%s" % form, n, F, J, np.zeros((0, n)), admissible,
                         "non-positive-stretch")


def fem_tolerances(abs_residual=0.001414, max_iters=100):
    """Force-residual stopping only; a tiny step alone does not mean equilibrium."""
    return Tolerances(rel_step=0.0, abs_residual=abs_residual, max_iters=max_iters)


def forward_solve(problem, method="nr", phi=None, tol=None, seed=0, form="element",
                  jitter_scale=1e-3):
    """Static equilibrium from the undeformed shape.

    Parameters
    ----------
    method : {"nr", "enr"}
    phi : float
        ENR only; c = phi * X + zeta with zeta ~ U[0.5, 1.5] * jitter_scale.

    Returns
    -------
    state : DeformedState or None when the run failed
    trace : SolveTrace
    """
    tol = tol or fem_tolerances()
    system = forward_residual(problem, form)
    x0 = problem.mesh.ref_nodes[1:].copy()
    if method == "nr":
        trace = newton_raphson(system, x0, tol)
    elif method == "enr":
        if phi is None:
            raise ValueError("ENR needs phi")
        policy = AffineOfReference(phi, x0, jitter_scale, seed)
        trace = enr_solve(system, x0, policy, tol)
    else:
        raise ValueError("unknown method %r" % method)
    state = state_from(problem, trace.x) if trace.status.ok else None
    return state, trace


def phi_sweep(problem, phis, tol=None, seed=0, form="element"):
    """ENR iterations per phi; None marks a failed run."""
    rows = []
    for phi in phis:
        _, tr = forward_solve(problem, "enr", float(phi), tol, seed, form)
        rows.append((float(phi), tr.iterations if tr.status.ok else None, str(tr.status)))
    return rows


# --------------------------------------------------------- inverse models
# parameter derivatives of each law: value, d/dtheta (m, p), d2/dtheta2 (m, p, p)

def _linear_dtheta(lam, E):
    return (lam - 1.0)[:, None], np.zeros((lam.size, 1, 1))


def _mr_dtheta(lam, mu, nu):
    a, b = lam - lam**-2, 1 - lam**-3
    g = np.stack([nu*a + (1 - nu)*b, mu*(a - b)], axis=1)
    h = np.zeros((lam.size, 2, 2))
    h[:, 0, 1] = h[:, 1, 0] = a - b
    return g, h


def _vw_dtheta(lam, A, B):
    g_, k = lam - lam**-2, 1 - lam**-3
    s = lam**2 + 2/lam - 3
    e = np.exp(B*s)
    g = np.stack([2*g_*e - k, 2*A*g_*s*e], axis=1)
    h = np.zeros((lam.size, 2, 2))
    h[:, 0, 1] = h[:, 1, 0] = 2*g_*s*e
    h[:, 1, 1] = 2*A*g_*s**2*e
    return g, h


_INV_FORMULAS = {"linear": (linear_stress, _linear_dtheta, 1),
                 "mooney_rivlin": (mooney_rivlin_stress, _mr_dtheta, 2),
                 "veronda_westmann": (veronda_westmann_stress, _vw_dtheta, 2)}


def inverse_model(family, true_params=None, derivatives="analytic"):
    """FitModel with the material constants as parameters and P(lambda) as output.

    ``derivatives="fd"`` leaves the parameter derivatives to the finite
    differences in :mod:`minimize`. The analytic default keeps a model that is
    linear in its parameters free of FD noise in the curvature term, so CGN
    reduces to GN exactly there. The constants are not range checked so an
    iterate may leave the physical range without aborting.
    """
    if family not in _INV_FORMULAS:
        raise KeyError("unknown material family %r" % family)
    if derivatives not in ("analytic", "fd"):
        raise ValueError("derivatives must be analytic or fd")
    law, dlaw, p = _INV_FORMULAS[family]

    def lam_of(x):
        lam = x[:, 0]
        if np.any(~(lam > 0)):
            raise NonPositiveStretch("stretch must be positive")
        return lam

    def f(x, t):
        return law(lam_of(x), *t)[0]

    grad = hess = None
    if derivatives == "analytic":
        grad = lambda x, t: dlaw(lam_of(x), *t)[0]
        hess = lambda x, t: dlaw(lam_of(x), *t)[1]
    tp = None if true_params is None else np.asarray(true_params, float)
    return FitModel("inverse-" + family, f, p, 1, tp, grad, hess)


def inverse_observations(lam_samples, observed_P):
    return Observations(np.asarray(lam_samples, float)[:, None], np.asarray(observed_P, float))

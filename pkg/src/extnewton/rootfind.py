"""Newton-Raphson, extended Newton-Raphson (ENR) and a diagonal secant method.

ENR replaces the system F(x) = 0 with the modified matrix function

    q_ij(x, c) = (x_i - c_i) * F_j(x) / (F_j(x) - F_j(c))      (no sum over j)

which vanishes wherever F does. Flattening (i, j) -> L = N*i + j gives an
N^2 x N derivative matrix

    w_Lk = delta_ik G_j + (x_i - c_i) F_jk H_j
    G_j  = F_j(x) / (F_j(x) - F_j(c)),   H_j = -F_j(c) / (F_j(x) - F_j(c))**2

and the step dx = pinv(w) @ (-q_flat). The point c comes from a c-policy.
Convergence is always judged on the original F.

The step kernels below take a leading batch axis so that the basin mapper
and the single-trace solvers share the same arithmetic.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numkit import lu_solve_batch, make_rng, moore_penrose_pinv, norm2


class SingularModification(ArithmeticError):
    """|F_j(x) - F_j(c)| fell below the denominator guard."""


class ImmediateFailure(ValueError):
    """Diagonal secant started from guesses sharing a coordinate."""


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class Tolerances:
    """Stopping rules.

    rel_step : stop when ||dx|| <= rel_step (0 disables the test)
    abs_residual : stop when ||F(x)|| <= abs_residual
    max_iters : iteration cap
    denom_guard : ENR denominators must satisfy
        |F_j(x) - F_j(c)| >= denom_guard * (1 + |F_j(x)|)
    """
    rel_step: float = 1e-6
    abs_residual: float = 0.001414
    max_iters: int = 100
    denom_guard: float = 1e-12

    def __post_init__(self):
        if self.rel_step < 0 or self.abs_residual < 0 or self.denom_guard <= 0:
            raise ValueError("tolerances must be non-negative (denom_guard positive)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class SolveStatus:
    kind: str                    # "converged" | "max_iters" | "diverged"
    cause: Optional[str] = None  # overflow | zero-division | singular-modification

    @classmethod
    def converged(cls):
        return cls("converged")

    @classmethod
    def max_iters(cls):
        return cls("max_iters")

    @classmethod
    def diverged(cls, cause):
        return cls("diverged", cause)

    @property
    def ok(self):
        return self.kind == "converged"

    def __str__(self):
        return self.kind if self.cause is None else "%s(%s)" % (self.kind, self.cause)


@dataclass
class SolveTrace:
    iterates: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    status: SolveStatus = None

    @property
    def x(self):
        return self.iterates[-1]

    @property
    def iterations(self):
        return len(self.steps)


# ---------------------------------------------------------------- c policies

@dataclass(frozen=True)
class Scalar:
    """c = phi * x"""
    phi: float

    def __call__(self, x):
        return self.phi * np.asarray(x, float)


@dataclass(frozen=True)
class PerAxis:
    """c_i = phi_i * x_i"""
    phi: tuple

    def __call__(self, x):
        return np.asarray(self.phi, float) * np.asarray(x, float)


@dataclass(frozen=True)
class Offset:
    """c_i = x_i + delta"""
    delta: float

    def __call__(self, x):
        return np.asarray(x, float) + self.delta


@dataclass(frozen=True)
class Constant:
    """c fixed."""
    c: tuple

    def __call__(self, x):
        return np.broadcast_to(np.asarray(self.c, float), np.shape(x)).copy()


class AffineOfReference:
    """c_i = phi * X_i + zeta_i with zeta_i ~ U[0.5, 1.5] * jitter_scale.

    ``reference`` is the undeformed geometry X. The jitter is drawn once from
    ``seed`` so the node-wise offsets |c_i - X_i| all differ.
    """

    def __init__(self, phi, reference, jitter_scale=1e-3, seed=0):
        self.phi = float(phi)
        self.reference = np.asarray(reference, float)
        self.jitter_scale = float(jitter_scale)
        self.seed = seed
        self.zeta = make_rng(seed).uniform(0.5, 1.5, self.reference.shape) * jitter_scale
        self.c = self.phi * self.reference + self.zeta

    def __call__(self, x):
        return np.broadcast_to(self.c, np.shape(x)).copy()

    def __repr__(self):
        return "AffineOfReference(phi=%g, jitter_scale=%g, seed=%s)" % (
            self.phi, self.jitter_scale, self.seed)


# ------------------------------------------------------------- step kernels

OK, SINGULAR_MOD, OVERFLOW, ZERO_DIV = 0, 1, 2, 3
_CAUSES = {SINGULAR_MOD: "singular-modification", OVERFLOW: "overflow",
           ZERO_DIV: "zero-division"}


def nr_step_batch(F, J):
    """Newton step for stacked systems: J dx = -F.

    Returns (dx, code) with code 0 on success, ZERO_DIV on a singular J.
    """
    dx, sing = lu_solve_batch(J, -F)
    code = np.where(sing, ZERO_DIV, OK)
    code = np.where((code == OK) & ~np.isfinite(dx).all(-1), OVERFLOW, code)
    return dx, code


def _enr_parts(F, Fc, d, J, guard):
    den = F - Fc
    bad = (np.abs(den) < guard * (1.0 + np.abs(F))).any(-1)
    den = np.where(np.abs(den) > 0, den, 1.0)
    G = F / den
    H = -Fc / den ** 2
    N = F.shape[-1]
    # q[.., i, j] = d_i G_j
    q = d[..., :, None] * G[..., None, :]
    w = None
    if J is not None:
        eye = np.eye(N)
        # w[.., i, j, k] = delta_ik G_j + d_i J_jk H_j
        w = (eye[:, None, :] * G[..., None, :, None]
             + d[..., :, None, None] * J[..., None, :, :] * H[..., None, :, None])
    return q, w, bad


def enr_step_batch(F, J, Fc, d, guard=1e-12):
    """ENR step for stacked systems.

    Parameters
    ----------
    F, Fc : (..., N) residual at x and at c
    J : (..., N, N) Jacobian at x
    d : (..., N) x - c

    Returns (dx, code).
    """
    N = F.shape[-1]
    with np.errstate(all="ignore"):
        q, w, bad = _enr_parts(F, Fc, d, J, guard)
        W = w.reshape(w.shape[:-3] + (N * N, N))
        qf = q.reshape(q.shape[:-2] + (N * N,))
        fin = np.isfinite(W).all((-1, -2)) & np.isfinite(qf).all(-1) & np.isfinite(Fc).all(-1)
        ok = fin & ~bad
        dx = np.full(F.shape, np.nan)
        if np.any(ok):
            dx[ok] = (moore_penrose_pinv(W[ok]) @ (-qf[ok])[..., None])[..., 0]
    code = np.where(bad & np.isfinite(Fc).all(-1), SINGULAR_MOD, OK)
    code = np.where((code == OK) & ~(ok & np.isfinite(dx).all(-1)), OVERFLOW, code)
    return dx, code


# -------------------------------------------------------- public operations

def _eval(system, x):
    """F and J at x; raises ZeroDivisionError outside the system's domain."""
    if not system.in_domain(x):
        raise ZeroDivisionError("%s undefined at %s" % (system.name, x))
    with np.errstate(all="ignore"):
        return np.asarray(system.F(x), float), np.asarray(system.jacobian(x), float)


def enr_build_q(system, x, c, guard=1e-12):
    """N x N modified function q_ij(x, c)."""
    x = np.asarray(x, float)
    c = np.asarray(c, float)
    with np.errstate(all="ignore"):
        q, _, bad = _enr_parts(system.F(x), system.F(c), x - c, None, guard)
    if bad:
        raise SingularModification("F(x) - F(c) too small")
    return q


def enr_build_w(system, x, c, guard=1e-12):
    """N^2 x N derivative of flattened q with respect to x (c held fixed)."""
    x = np.asarray(x, float)
    c = np.asarray(c, float)
    with np.errstate(all="ignore"):
        _, w, bad = _enr_parts(system.F(x), system.F(c), x - c, system.jacobian(x), guard)
    if bad:
        raise SingularModification("F(x) - F(c) too small")
    N = x.size
    return w.reshape(N * N, N)


def _iterate(system, x0, tol, step):
    """Shared driver. ``step(x, F, J) -> (dx, code)``."""
    tol = tol or Tolerances()
    x = np.atleast_1d(np.asarray(x0, float)).copy()
    tr = SolveTrace()
    tr.iterates.append(x.copy())
    try:
        F, J = _eval(system, x)
    except ZeroDivisionError:
        tr.residual_norms.append(np.inf)
        tr.status = SolveStatus.diverged(system.domain_cause)
        return tr
    nF = float(norm2(F))
    tr.residual_norms.append(nF)
    if not (np.isfinite(nF) and np.isfinite(J).all()):
        tr.status = SolveStatus.diverged("overflow")
        return tr
    for _ in range(tol.max_iters):
        if nF <= tol.abs_residual:
            tr.status = SolveStatus.converged()
            return tr
        dx, code = step(x, F, J)
        if code != OK:
            tr.status = SolveStatus.diverged(_CAUSES[int(code)])
            return tr
        x = x + dx
        tr.steps.append(dx)
        tr.iterates.append(x.copy())
        try:
            F, J = _eval(system, x)
        except ZeroDivisionError:
            tr.residual_norms.append(np.inf)
            tr.status = SolveStatus.diverged(system.domain_cause)
            return tr
        nF = float(norm2(F))
        tr.residual_norms.append(nF)
        if not (np.isfinite(nF) and np.isfinite(J).all() and np.isfinite(x).all()):
            tr.status = SolveStatus.diverged("overflow")
            return tr
        if norm2(dx) <= tol.rel_step:
            tr.status = SolveStatus.converged()
            return tr
    tr.status = SolveStatus.converged() if nF <= tol.abs_residual else SolveStatus.max_iters()
    return tr


def newton_raphson(system, x0, tol=None):
    """Multivariate Newton-Raphson, J dx = -F."""
    def step(x, F, J):
        dx, code = nr_step_batch(F[None], J[None])
        return dx[0], code[0]
    return _iterate(system, x0, tol, step)


def enr_solve(system, x0, policy, tol=None, c_update="initial"):
    """Extended Newton-Raphson.

    Parameters
    ----------
    policy : callable
        Maps x to c (one of the c-policy classes above).
    c_update : {"initial", "every"}
        "initial" evaluates the policy once at x0 and keeps that c for the
        whole run; "every" re-evaluates it at each iterate.
    """
    tol = tol or Tolerances()
    if c_update not in ("initial", "every"):
        raise ValueError("c_update must be 'initial' or 'every'")
    c0 = np.asarray(policy(np.atleast_1d(np.asarray(x0, float))), float)

    def step(x, F, J):
        c = c0 if c_update == "initial" else np.asarray(policy(x), float)
        if not system.in_domain(c):
            return None, ZERO_DIV
        with np.errstate(all="ignore"):
            Fc = np.asarray(system.F(c), float)
        dx, code = enr_step_batch(F[None], J[None], Fc[None], (x - c)[None], tol.denom_guard)
        return dx[0], code[0]
    return _iterate(system, x0, tol, step)


def diagonal_secant(system, x0, x1, tol=None, verbatim_sign=False):
    """Secant iteration on the diagonal of the Jacobian.

    Each component takes its own 1-d secant step

        ds_i = -F_i(x^{n+1}) / dH_i * dX_i,   dH = F(x^{n+1}) - F(x^n),  dX = x^{n+1} - x^n

    ``verbatim_sign=True`` uses the double-negative form (step reversed).
    """
    tol = tol or Tolerances()
    xa = np.atleast_1d(np.asarray(x0, float)).copy()
    xb = np.atleast_1d(np.asarray(x1, float)).copy()
    if np.any(xa == xb):
        raise ImmediateFailure("x0 and x1 share a coordinate")
    sgn = 1.0 if verbatim_sign else -1.0
    tr = SolveTrace()

    def ev(x):
        if not system.in_domain(x):
            raise ZeroDivisionError
        with np.errstate(all="ignore"):
            return np.asarray(system.F(x), float)

    try:
        Fa, Fb = ev(xa), ev(xb)
    except ZeroDivisionError:
        tr.iterates.append(xa)
        tr.residual_norms.append(np.inf)
        tr.status = SolveStatus.diverged("zero-division")
        return tr
    tr.iterates += [xa.copy(), xb.copy()]
    tr.steps.append(xb - xa)
    tr.residual_norms += [float(norm2(Fa)), float(norm2(Fb))]
    for _ in range(tol.max_iters):
        nF = tr.residual_norms[-1]
        if not np.isfinite(nF):
            tr.status = SolveStatus.diverged("overflow")
            return tr
        if nF <= tol.abs_residual:
            tr.status = SolveStatus.converged()
            return tr
        dH = Fb - Fa
        dX = xb - xa
        if np.any(dH == 0):
            tr.status = SolveStatus.diverged("zero-division")
            return tr
        with np.errstate(all="ignore"):
            ds = sgn * Fb / dH * dX
        xa, Fa = xb, Fb
        xb = xb + ds
        try:
            Fb = ev(xb)
        except ZeroDivisionError:
            tr.status = SolveStatus.diverged("zero-division")
            return tr
        tr.steps.append(ds)
        tr.iterates.append(xb.copy())
        tr.residual_norms.append(float(norm2(Fb)))
        if np.isfinite(tr.residual_norms[-1]) and norm2(ds) <= tol.rel_step:
            tr.status = SolveStatus.converged()
            return tr
    nF = tr.residual_norms[-1]
    tr.status = SolveStatus.converged() if nF <= tol.abs_residual else SolveStatus.max_iters()
    return tr


@dataclass
class RateOrderEstimate:
    order_q: np.ndarray
    rate_mu: np.ndarray


def estimate_rate_order(errors):
    """Order q_n = log(e_{n+1}/e_n) / log(e_n/e_{n-1}) and rate mu_n = e_{n+1} / e_n**q_n.

    One estimate per interior index n = 1 .. len(errors)-2.
    """
    e = np.asarray(errors, float)
    if e.size < 4:
        raise InsufficientData("need at least 4 error terms")
    if np.any(e <= 0):
        raise ValueError("errors must be strictly positive")
    with np.errstate(all="ignore"):
        q = np.log(e[2:] / e[1:-1]) / np.log(e[1:-1] / e[:-2])
        mu = e[2:] / e[1:-1] ** q
    return RateOrderEstimate(q, mu)


def error_sequence(trace, x_ref=None):
    """e_n = ||x_n - x_ref||; x_ref defaults to the final iterate (which is dropped)."""
    its = np.asarray(trace.iterates, float)
    if x_ref is None:
        x_ref, its = its[-1], its[:-1]
    return norm2(its - np.asarray(x_ref, float))

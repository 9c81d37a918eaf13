"""Nonlinear least squares: Gauss-Newton and the corrected variant (CGN).

Residuals follow r_i = y_i - f(x_i, theta). GN solves the normal equations
(J^T J) dtheta = -J^T r. CGN first takes that GN step as a provisional
dtheta_hat, bends the Jacobian with half the residual curvature along it

    s_ij = r_ij + 0.5 * r_ijk * dtheta_hat_k

and then solves (s^T s) dtheta = -s^T r for the step that is actually used.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .numkit import SingularMatrix, lhs_sample, lu_solve, make_rng, norm2
from .rootfind import SolveStatus, Tolerances

FD_JAC_STEP = 1e-6
FD_HESS_STEP = 1e-4


class NonFiniteModel(ArithmeticError):
    pass


@dataclass(frozen=True)
class FitModel:
    """Parameterised scalar model f(x, theta).

    ``eval(x, theta)`` takes inputs of shape (m, input_dims) and returns m
    values. ``grad`` and ``hess``, when given, return df/dtheta (m, p) and
    d2f/dtheta2 (m, p, p); otherwise finite differences are used.
    """
    name: str
    eval: Callable
    param_count: int
    input_dims: int = 1
    true_params: Optional[np.ndarray] = None
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None

    def __call__(self, x, theta):
        return np.asarray(self.eval(np.asarray(x, float), np.asarray(theta, float)), float)


@dataclass
class Observations:
    inputs: np.ndarray        # (m, input_dims)
    outputs: np.ndarray       # (m,)
    snr_db: Optional[float] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, float).reshape(len(self.outputs), -1)
        self.outputs = np.asarray(self.outputs, float)


@dataclass
class FitTrace:
    iterates: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    sse: list = field(default_factory=list)
    status: SolveStatus = None

    @property
    def iterations(self):
        return len(self.steps)

    @property
    def theta(self):
        return self.iterates[-1]


def _check(v):
    if not np.all(np.isfinite(v)):
        raise NonFiniteModel("model returned non-finite values")
    return v


def residuals(model, obs, theta):
    """r_i = y_i - f(x_i, theta)."""
    theta = np.asarray(theta, float)
    if theta.shape != (model.param_count,):
        raise ValueError("theta has %d entries, model expects %d" % (theta.size, model.param_count))
    with np.errstate(all="ignore"):
        return _check(obs.outputs - model(obs.inputs, theta))


def _fd_step(theta, h):
    return h * (1.0 + np.abs(theta))


def jacobian(model, obs, theta):
    """dr_i/dtheta_j, shape (m, p). Central differences unless ``model.grad`` is set."""
    theta = np.asarray(theta, float)
    if model.grad is not None:
        with np.errstate(all="ignore"):
            return _check(-np.asarray(model.grad(obs.inputs, theta), float))
    h = _fd_step(theta, FD_JAC_STEP)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h[j]
        cols.append((residuals(model, obs, theta + e) - residuals(model, obs, theta - e)) / (2 * h[j]))
    return np.stack(cols, axis=1)


def residual_second_derivative(model, obs, theta):
    """d2r_i/dtheta_j dtheta_k, shape (m, p, p).

    Nested central differences (step 1e-4 scaled) unless ``model.hess`` is set.
    """
    theta = np.asarray(theta, float)
    if model.hess is not None:
        with np.errstate(all="ignore"):
            return _check(-np.asarray(model.hess(obs.inputs, theta), float))
    p = theta.size
    h = _fd_step(theta, FD_HESS_STEP)
    out = np.empty((len(obs.outputs), p, p))
    r = lambda t: residuals(model, obs, t)
    r0 = r(theta)
    for j in range(p):
        ej = np.zeros(p)
        ej[j] = h[j]
        out[:, j, j] = (r(theta + ej) - 2 * r0 + r(theta - ej)) / h[j] ** 2
        for k in range(j + 1, p):
            ek = np.zeros(p)
            ek[k] = h[k]
            v = (r(theta + ej + ek) - r(theta + ej - ek)
                 - r(theta - ej + ek) + r(theta - ej - ek)) / (4 * h[j] * h[k])
            out[:, j, k] = out[:, k, j] = v
    return out


def gn_step(J, r):
    """Solve (J^T J) dtheta = -J^T r by LU."""
    return lu_solve(J.T @ J, -(J.T @ r))


def cgn_step(J, H, r):
    """Corrected step. Returns (dtheta_bar, s, dtheta_hat)."""
    dhat = gn_step(J, r)
    s = J + 0.5 * np.einsum("ijk,k->ij", H, dhat)
    return lu_solve(s.T @ s, -(s.T @ r)), s, dhat


def _fit(model, obs, theta0, tol, corrected):
    tol = tol or Tolerances()
    theta = np.asarray(theta0, float).copy()
    if len(obs.outputs) < model.param_count:
        raise ValueError("need at least as many observations as parameters")
    tr = FitTrace()
    tr.iterates.append(theta.copy())
    try:
        r = residuals(model, obs, theta)
        tr.sse.append(float(r @ r))
        for _ in range(tol.max_iters):
            J = jacobian(model, obs, theta)
            if corrected:
                d = cgn_step(J, residual_second_derivative(model, obs, theta), r)[0]
            else:
                d = gn_step(J, r)
            if not np.all(np.isfinite(d)):
                tr.status = SolveStatus.diverged("overflow")
                return tr
            theta = theta + d
            tr.steps.append(d)
            tr.iterates.append(theta.copy())
            r = residuals(model, obs, theta)
            tr.sse.append(float(r @ r))
            if norm2(d) <= tol.rel_step:
                tr.status = SolveStatus.converged()
                return tr
        tr.status = SolveStatus.max_iters()
    except SingularMatrix:
        tr.status = SolveStatus.diverged("zero-division")
    except NonFiniteModel:
        tr.status = SolveStatus.diverged("overflow")
    # drop a trailing iterate whose residual could not be evaluated
    if len(tr.sse) < len(tr.iterates):
        tr.iterates.pop()
        tr.steps.pop()
    return tr


def gauss_newton(model, obs, theta0, tol=None):
    """Plain Gauss-Newton; stops when ||dtheta|| <= tol.rel_step."""
    return _fit(model, obs, theta0, tol, corrected=False)


def corrected_gauss_newton(model, obs, theta0, tol=None):
    """Corrected Gauss-Newton; same termination as :func:`gauss_newton`."""
    return _fit(model, obs, theta0, tol, corrected=True)


def noise_sigma(signal, snr_db):
    """Noise std for an amplitude-ratio SNR in dB: RMS(signal) * 10**(-snr/20)."""
    return float(np.sqrt(np.mean(np.square(signal)))) * 10.0 ** (-snr_db / 20.0)


def generate_observations(model, sample_range, n, snr_db=None, seed=0):
    """Synthetic data: LHS inputs over ``sample_range``, outputs f(x, theta*) + noise.

    ``sample_range`` is a (lo, hi) pair applied to every input dimension or a
    list of pairs, one per dimension.
    """
    if model.true_params is None:
        raise ValueError("model has no true parameters")
    rng_lo_hi = np.asarray(sample_range, float).reshape(-1, 2)
    if len(rng_lo_hi) == 1:
        rng_lo_hi = np.repeat(rng_lo_hi, model.input_dims, axis=0)
    u = lhs_sample(model.input_dims, n, seed)
    x = rng_lo_hi[:, 0] + u * (rng_lo_hi[:, 1] - rng_lo_hi[:, 0])
    y = model(x, model.true_params)
    if snr_db is not None:
        # separate stream from the LHS draw
        noise = make_rng(int(seed) ^ 0x9E3779B97F4A7C15).standard_normal(n)
        y = y + noise_sigma(y, snr_db) * noise
    return Observations(x, y, snr_db)


def initial_guess_at_distance(theta_star, distance, seed=0):
    """theta0 at Euclidean ``distance`` from theta*, direction from one LHS draw."""
    theta_star = np.asarray(theta_star, float)
    if distance < 0:
        raise ValueError("distance must be non-negative")
    if distance == 0:
        return theta_star.copy()
    d = 2.0 * lhs_sample(theta_star.size, 1, seed)[0] - 1.0
    nd = norm2(d)
    if nd == 0:
        d, nd = np.ones_like(theta_star), np.sqrt(theta_star.size)
    return theta_star + distance * d / nd

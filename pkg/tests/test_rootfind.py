import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from extnewton import problems as pb
from extnewton import rootfind as rf
from extnewton.numkit import matrix_rank


def affine_1d(a, slope=1.0):
    return pb.ProblemSystem("affine", 1, lambda x: slope * (x - a),
                            lambda x: np.full(np.shape(x) + (1,), slope), np.array([[a]]))


def test_nr_cubic_table():
    tr = rf.newton_raphson(pb.scalar_cubic(), [2.0], rf.Tolerances(rel_step=1e-3))
    xs = [x[0] for x in tr.iterates]
    assert np.round(xs, 3).tolist() == [2.0, 1.429, 1.128, 1.017, 1.0]
    assert tr.status.ok and tr.iterations == 4


def test_nr_affine_one_step():
    tr = rf.newton_raphson(affine_1d(3.0, 2.0), [-7.0])
    assert tr.iterations == 1 and tr.x[0] == 3.0


def test_nr_rf5_reaches_a_listed_root():
    s = pb.system_rf5()
    tr = rf.newton_raphson(s, [2.0, 2.0], rf.Tolerances(rel_step=1e-12, abs_residual=1e-12))
    assert tr.status.ok
    assert np.min(np.linalg.norm(s.known_roots - tr.x, axis=1)) < 1e-9


def test_nr_singular_jacobian_diverges():
    s = pb.system_rf5()
    tr = rf.newton_raphson(s, [0.0, 0.0])   # J vanishes at the origin
    assert tr.status == rf.SolveStatus.diverged("zero-division")


def test_nr_overflow_detected():
    tr = rf.newton_raphson(pb.system_exp(), [800.0, 1.0])
    assert tr.status == rf.SolveStatus.diverged("overflow")


def test_domain_error_maps_to_divergence():
    tr = rf.newton_raphson(pb.system_negexp(), [0.0, 1.0])
    assert tr.status == rf.SolveStatus.diverged("zero-division")


def test_trace_lengths():
    tr = rf.enr_solve(pb.system_rf5(), [3.0, -2.0], rf.Scalar(2.0))
    assert len(tr.iterates) == len(tr.steps) + 1 == len(tr.residual_norms)


def test_q_zero_at_root():
    s = pb.system_rf5()
    assert not rf.enr_build_q(s, np.array([1.0, 0.0]), np.array([2.0, 3.0])).any()


def test_q_matches_scalar_evaluation():
    s = pb.system_rf5()
    x, c = np.array([2.0, 2.0]), np.array([4.0, 4.0])
    f1 = lambda a, b: a**3 - 3*a*b*b - 1
    f2 = lambda a, b: 3*a*a*b - b**3
    Fx = [f1(2, 2), f2(2, 2)]
    Fc = [f1(4, 4), f2(4, 4)]
    q = rf.enr_build_q(s, x, c)
    for i in range(2):
        for j in range(2):
            assert q[i, j] == pytest.approx((x[i] - c[i]) * Fx[j] / (Fx[j] - Fc[j]), rel=1e-14)


def test_q_univariate_reduces():
    s = pb.scalar_cubic()
    f = lambda v: v**3 + v**2 - 2*v
    q = rf.enr_build_q(s, np.array([0.7]), np.array([1.9]))
    assert q.shape == (1, 1)
    assert q[0, 0] == pytest.approx((0.7 - 1.9) * f(0.7) / (f(0.7) - f(1.9)))


def test_singular_modification_raised():
    s = pb.system_rf5()
    x = np.array([1.5, 0.5])
    with pytest.raises(rf.SingularModification):
        rf.enr_build_q(s, x, x)
    with pytest.raises(rf.SingularModification):
        rf.enr_build_w(s, x, x)


def fd_w(system, x, c):
    N = x.size
    cols = []
    for k in range(N):
        h = 1e-6 * (1 + abs(x[k]))
        e = np.zeros(N)
        e[k] = h
        cols.append((rf.enr_build_q(system, x + e, c).ravel()
                     - rf.enr_build_q(system, x - e, c).ravel()) / (2 * h))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("name", ["rf5", "exp", "negexp", "cubic"])
def test_w_matches_fd_of_q(name):
    s = pb.get_system(name)
    rng = np.random.default_rng(4)
    done = 0
    while done < 100:
        x = rng.uniform(0.3, 2.5, s.dim) * rng.choice([-1, 1], s.dim)
        c = rng.uniform(0.3, 2.5, s.dim) * rng.choice([-1, 1], s.dim)
        Fx, Fc = s.F(x), s.F(c)
        if np.any(np.abs(Fx - Fc) < 0.1 * (1 + np.abs(Fx))):
            continue   # keep away from the pole of q
        w = rf.enr_build_w(s, x, c)
        assert w.shape == (s.dim ** 2, s.dim)
        ref = fd_w(s, x, c)
        assert np.allclose(w, ref, rtol=1e-5, atol=1e-5 * (1 + np.abs(ref).max()))
        done += 1


def test_w_row_layout():
    # row L = N*i + j carries delta_ik G_j + d_i J_jk H_j
    s = pb.system_rf5()
    x, c = np.array([2.0, 1.0]), np.array([3.0, -1.5])
    Fx, Fc, J = s.F(x), s.F(c), s.jac(x)
    w = rf.enr_build_w(s, x, c)
    for i in range(2):
        for j in range(2):
            G = Fx[j] / (Fx[j] - Fc[j])
            H = -Fc[j] / (Fx[j] - Fc[j]) ** 2
            for k in range(2):
                assert w[2 * i + j, k] == pytest.approx((i == k) * G + (x[i] - c[i]) * J[j, k] * H)


def test_w_rank_generic_point():
    s = pb.system_rf5()
    assert matrix_rank(rf.enr_build_w(s, np.array([2.0, 1.0]), np.array([3.0, -1.5]))) == 2


def test_w_univariate_is_derivative_of_r():
    s = pb.scalar_cubic()
    f = lambda v: v**3 + v**2 - 2*v
    r = lambda v, c: (v - c) * f(v) / (f(v) - f(c))
    x, c, h = 0.7, 1.9, 1e-6
    w = rf.enr_build_w(s, np.array([x]), np.array([c]))
    assert w.shape == (1, 1)
    assert w[0, 0] == pytest.approx((r(x + h, c) - r(x - h, c)) / (2 * h), rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(0.1, 10), st.floats(-50, 50), st.floats(-50, 50))
def test_enr_affine_step_equals_nr(a, slope, x0, c):
    if abs(x0 - c) < 1e-3 or abs(x0 - a) < 1e-3:
        return
    s = affine_1d(a, slope)
    F, J = s.F(np.array([x0])), s.jac(np.array([x0]))
    dx_nr, _ = rf.nr_step_batch(F[None], J[None])
    Fc = s.F(np.array([c]))
    dx_enr, code = rf.enr_step_batch(F[None], J[None], Fc[None], np.array([[x0 - c]]))
    assert code[0] == rf.OK
    # F - F(c) cancels; round-off grows with |F| / |F - F(c)|
    cond = 1 + (abs(F[0]) + abs(Fc[0])) / abs(F[0] - Fc[0])
    assert abs(dx_enr[0, 0] - dx_nr[0, 0]) <= 1e-12 * cond * (1 + abs(dx_nr[0, 0]))


def test_enr_rf5_converges():
    s = pb.system_rf5()
    tr = rf.enr_solve(s, [20.0, -13.0], rf.Scalar(2.0))
    assert tr.status.ok
    assert np.linalg.norm(s.F(tr.x)) <= 0.001414 or np.linalg.norm(tr.steps[-1]) <= 1e-6


def test_enr_c_update_modes_differ_only_after_first_step():
    s = pb.system_exp()
    a = rf.enr_solve(s, [3.0, 4.0], rf.Scalar(0.5), c_update="initial")
    b = rf.enr_solve(s, [3.0, 4.0], rf.Scalar(0.5), c_update="every")
    assert np.allclose(a.steps[0], b.steps[0])
    with pytest.raises(ValueError):
        rf.enr_solve(s, [3.0, 4.0], rf.Scalar(0.5), c_update="sometimes")


def test_enr_constant_c_equal_to_x_is_singular():
    tr = rf.enr_solve(pb.system_rf5(), [2.0, 3.0], rf.Constant((2.0, 3.0)))
    assert tr.status == rf.SolveStatus.diverged("singular-modification")


@settings(max_examples=50, deadline=None)
@given(st.floats(-40, 40), st.floats(-40, 40), st.sampled_from(["nr", "2x", "x+1"]))
def test_converged_traces_are_finite_and_meet_a_tolerance(a, b, method):
    s = pb.system_rf5()
    tol = rf.Tolerances()
    if method == "nr":
        tr = rf.newton_raphson(s, [a, b], tol)
    else:
        tr = rf.enr_solve(s, [a, b], rf.Scalar(2.0) if method == "2x" else rf.Offset(1.0), tol)
    if tr.status.ok:
        assert np.isfinite(np.array(tr.iterates)).all()
        assert tr.residual_norms[-1] <= tol.abs_residual or np.linalg.norm(tr.steps[-1]) <= tol.rel_step


def test_policies():
    x = np.array([1.0, -2.0])
    assert np.allclose(rf.Scalar(2)(x), [2, -4])
    assert np.allclose(rf.PerAxis((3, 2))(x), [3, -4])
    assert np.allclose(rf.Offset(1e-5)(x), x + 1e-5)
    assert np.allclose(rf.Constant((1, 2))(x), [1, 2])
    p = rf.AffineOfReference(0.5, np.array([0.4, 0.8, 1.2]), 1e-3, seed=3)
    z = p.c - 0.5 * np.array([0.4, 0.8, 1.2])
    assert ((z >= 0.5e-3) & (z <= 1.5e-3)).all() and len(set(z)) == 3
    assert np.array_equal(p(np.zeros(3)), rf.AffineOfReference(0.5, [0.4, 0.8, 1.2], 1e-3, 3).c)


def test_diagonal_secant_affine_exact():
    tr = rf.diagonal_secant(affine_1d(2.5, 3.0), [0.0], [1.0])
    assert tr.iterates[2][0] == pytest.approx(2.5)
    assert tr.status.ok


def test_diagonal_secant_rf5_example_start():
    s = pb.system_rf5()
    tr = rf.diagonal_secant(s, [3.0, 2.0], [3.5, 1.0])
    assert tr.status.ok
    assert np.min(np.linalg.norm(s.known_roots - tr.x, axis=1)) < 1e-2


def test_diagonal_secant_verbatim_sign_runs_away():
    tr = rf.diagonal_secant(pb.system_rf5(), [3.0, 2.0], [3.5, 1.0], verbatim_sign=True)
    assert not tr.status.ok


def test_diagonal_secant_negexp_fails_from_generic_guesses():
    s = pb.system_negexp()
    rng = np.random.default_rng(5)
    ok = 0
    for _ in range(20):
        x0, x1 = rng.uniform(-50, 50, 2), rng.uniform(-50, 50, 2)
        ok += rf.diagonal_secant(s, x0, x1).status.ok
    assert ok == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([-1.0, 0.0, 2.0]), min_size=2, max_size=2),
       st.lists(st.sampled_from([-1.0, 0.0, 3.0]), min_size=2, max_size=2))
def test_diagonal_secant_immediate_failure_iff_shared_coordinate(x0, x1):
    shared = any(a == b for a, b in zip(x0, x1))
    if shared:
        with pytest.raises(rf.ImmediateFailure):
            rf.diagonal_secant(pb.system_rf5(), x0, x1)
    else:
        rf.diagonal_secant(pb.system_rf5(), x0, x1)


def test_rate_order_examples():
    est = rf.estimate_rate_order(0.5 ** np.arange(7))
    assert len(est.order_q) == 5
    assert np.allclose(est.order_q, 1.0) and np.allclose(est.rate_mu, 0.5)
    e = [0.1]
    for _ in range(4):
        e.append(e[-1] ** 2)
    est = rf.estimate_rate_order(e)
    assert np.allclose(est.order_q, 2.0) and np.allclose(est.rate_mu, 1.0)
    with pytest.raises(rf.InsufficientData):
        rf.estimate_rate_order([0.1, 0.01, 0.001])


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([1.0, 1.5, 2.0]), st.floats(0.05, 0.9), st.floats(0.01, 0.5))
def test_rate_order_recovers_synthetic(q, mu, e0):
    e = [e0]
    for _ in range(5):
        e.append(mu * e[-1] ** q)
    if e[-1] < 1e-250:
        return
    est = rf.estimate_rate_order(e)
    assert np.allclose(est.order_q, q, atol=1e-6)
    assert np.allclose(est.rate_mu, mu, rtol=1e-6)


def test_tolerance_validation():
    with pytest.raises(ValueError):
        rf.Tolerances(max_iters=0)
    with pytest.raises(ValueError):
        rf.Tolerances(abs_residual=-1)

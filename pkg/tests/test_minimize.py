import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from extnewton import minimize as mn
from extnewton import problems as pb
from extnewton.rootfind import Tolerances


def linear_model():
    return mn.FitModel("lin", lambda x, t: t[0] * x[:, 0] + t[1], 2, true_params=np.array([2.0, -1.0]))


def strip_derivs(model):
    return mn.FitModel(model.name, model.eval, model.param_count, model.input_dims, model.true_params)


def test_residual_example():
    obs = mn.Observations(np.array([[1.0], [2.0]]), np.array([3.0, 3.0]))
    assert np.allclose(mn.residuals(linear_model(), obs, [2.0, -1.0]), [2.0, 0.0])
    with pytest.raises(ValueError):
        mn.residuals(linear_model(), obs, [1.0])


def test_nonfinite_model_raises():
    m = mn.FitModel("log", lambda x, t: np.log(t[0] * x[:, 0]), 1)
    obs = mn.Observations(np.array([[1.0]]), np.array([0.0]))
    with pytest.raises(mn.NonFiniteModel):
        mn.residuals(m, obs, [-1.0])


def test_linear_jacobian_column_is_minus_x():
    x = np.linspace(0, 3, 7)[:, None]
    obs = mn.Observations(x, np.zeros(7))
    J = mn.jacobian(linear_model(), obs, [0.3, 0.4])
    assert np.allclose(J[:, 0], -x[:, 0], atol=1e-9) and np.allclose(J[:, 1], -1, atol=1e-9)


@pytest.mark.parametrize("entry", pb.models_gn(), ids=lambda e: e.name)
def test_fd_derivatives_match_analytic(entry):
    m = entry.model
    obs = mn.generate_observations(m, entry.sampling_range, 12, seed=1)
    theta = m.true_params * 1.05 + 0.01
    fd = strip_derivs(m)
    Ja, Jf = mn.jacobian(m, obs, theta), mn.jacobian(fd, obs, theta)
    assert np.allclose(Ja, Jf, rtol=1e-6, atol=1e-6 * np.abs(Ja).max())
    Ha, Hf = mn.residual_second_derivative(m, obs, theta), mn.residual_second_derivative(fd, obs, theta)
    assert np.allclose(Ha, Hf, rtol=1e-4, atol=1e-5 * (1 + np.abs(Ha).max()))


def test_second_derivative_of_quadratic():
    m = mn.FitModel("sq", lambda x, t: np.full(len(x), t[0] ** 2), 1)
    obs = mn.Observations(np.zeros((3, 1)), np.zeros(3))
    H = mn.residual_second_derivative(m, obs, [1.7])
    assert H.shape == (3, 1, 1) and np.allclose(H, -2.0, atol=1e-6)


def test_beam_first_gn_step():
    obs = pb.beam_observations()
    J = mn.jacobian(pb.beam_model(), obs, [2000.0])
    r = mn.residuals(pb.beam_model(), obs, [2000.0])
    assert mn.gn_step(J, r)[0] == pytest.approx(290.541, abs=1e-3)


def test_gn_linear_model_one_step():
    m = linear_model()
    obs = mn.generate_observations(m, (0, 5), 10, seed=2)
    tr = mn.gauss_newton(m, obs, [10.0, 10.0])
    assert np.allclose(tr.iterates[1], [2.0, -1.0], atol=1e-9)
    assert tr.status.ok and tr.iterations == 2   # second step is ~0


def test_gn_recovers_gn3_near_truth():
    e = pb.get_model("gn3")
    obs = mn.generate_observations(e.model, e.sampling_range, 30, seed=3)
    tr = mn.gauss_newton(e.model, obs, e.model.true_params * 1.01, Tolerances(rel_step=1e-10))
    assert tr.status.ok
    assert np.allclose(tr.theta, e.model.true_params, rtol=1e-6)


def test_cgn_toy_step():
    # f = -theta^2, y = 0: r = theta^2, J = 2 theta, H = 2; at theta = 1
    # dhat = -1/2, s = 2 + 0.5*2*(-1/2) = 3/2, dbar = -1/(3/2)
    m = mn.FitModel("toy", lambda x, t: np.full(len(x), -t[0] ** 2), 1)
    obs = mn.Observations(np.zeros((1, 1)), np.zeros(1))
    J = mn.jacobian(m, obs, [1.0])
    H = mn.residual_second_derivative(m, obs, [1.0])
    dbar, s, dhat = mn.cgn_step(J, H, mn.residuals(m, obs, [1.0]))
    assert dhat[0] == pytest.approx(-0.5, abs=1e-8)
    assert s[0, 0] == pytest.approx(1.5, abs=1e-6)
    assert dbar[0] == pytest.approx(-2 / 3, abs=1e-6)


def test_cgn_equals_gn_for_linear_in_parameters():
    e = pb.get_model("gn1")
    obs = mn.generate_observations(e.model, e.sampling_range, 25, snr_db=30, seed=4)
    theta0 = e.model.true_params + 3.0
    a = mn.gauss_newton(e.model, obs, theta0)
    b = mn.corrected_gauss_newton(e.model, obs, theta0)
    assert a.iterations == b.iterations
    for u, v in zip(a.iterates, b.iterates):
        assert np.allclose(u, v, rtol=1e-9, atol=1e-9)


def test_cgn_beam_converges():
    tr = mn.corrected_gauss_newton(pb.beam_model(), pb.beam_observations(), [2000.0], Tolerances(rel_step=1e-3))
    assert tr.status.ok and tr.theta[0] == pytest.approx(2339.92, abs=0.01)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 3.0))
def test_gn_step_is_descent_direction(seed, scale):
    e = pb.get_model("gn4")
    obs = mn.generate_observations(e.model, e.sampling_range, 15, seed=seed)
    theta = e.model.true_params * scale
    J = mn.jacobian(e.model, obs, theta)
    r = mn.residuals(e.model, obs, theta)
    if np.linalg.cond(J) > 1e10 or r @ r < 1e-12:
        return
    d = mn.gn_step(J, r)
    assert (J.T @ r) @ d < 0   # gradient of SSE/2 is J^T r


def test_singular_normal_equations_diverge():
    m = mn.FitModel("dup", lambda x, t: (t[0] + t[1]) * x[:, 0], 2, true_params=np.array([1.0, 1.0]))
    obs = mn.generate_observations(m, (0, 1), 5, seed=0)
    tr = mn.gauss_newton(m, obs, [0.0, 0.0])
    assert tr.status.kind == "diverged"


def test_noise_statistics():
    m = mn.FitModel("c", lambda x, t: np.full(len(x), t[0]), 1, true_params=np.array([3.0]))
    obs = mn.generate_observations(m, (0, 1), 10_000, snr_db=20, seed=5)
    assert np.std(obs.outputs - 3.0) == pytest.approx(0.3, rel=0.3)
    assert abs(np.mean(obs.outputs - 3.0)) < 0.02


def test_noise_sigma():
    assert mn.noise_sigma(np.array([3.0, -3.0]), 20) == pytest.approx(0.3)
    assert mn.noise_sigma(np.array([2.0]), 0) == pytest.approx(2.0)


def test_observations_in_range_and_reproducible():
    e = pb.get_model("gn4")
    a = mn.generate_observations(e.model, e.sampling_range, 40, snr_db=10, seed=9)
    b = mn.generate_observations(e.model, e.sampling_range, 40, snr_db=10, seed=9)
    assert a.inputs.shape == (40, 2)
    assert ((a.inputs >= 0.1) & (a.inputs <= 10)).all()
    assert np.array_equal(a.outputs, b.outputs)
    with pytest.raises(ValueError):
        mn.generate_observations(pb.beam_model(), (0, 1), 4)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 500), st.integers(0, 2**32))
def test_initial_guess_distance(dist, seed):
    ts = np.array([-0.001, 0.1, 0.1, 2, 15])
    t0 = mn.initial_guess_at_distance(ts, dist, seed)
    assert np.linalg.norm(t0 - ts) == pytest.approx(dist, rel=1e-12, abs=1e-12)

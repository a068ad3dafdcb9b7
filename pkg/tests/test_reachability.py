import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

from redpg.dynamics import double_integrator_model, fourwd_model, quadrotor_model, trim_control
from redpg.ellipsoid import is_spd
from redpg.errors import InputError, NumericalError
from redpg.reachability import (LITERAL, SHAPE_FLOOR, FrsConfig, calibrated_frs_sequence,
                                channel_shape, combine_channels, compute_frs_sequence,
                                containment_check, propagate, propagated_channel_shape,
                                solve_lyapunov)


def stable_matrix(rng, n):
    M = rng.normal(size=(n, n))
    return M - (np.max(np.linalg.eigvals(M).real) + rng.uniform(0.2, 2.0)) * np.eye(n)


# ------------------------------------------------------------- Lyapunov

def test_lyapunov_examples():
    np.testing.assert_allclose(solve_lyapunov(-np.eye(3), -2 * np.eye(3)), np.eye(3), atol=1e-14)
    C = np.random.default_rng(0).normal(size=(3, 3))
    C = C + C.T
    np.testing.assert_allclose(solve_lyapunov(-np.eye(3), C), -C / 2, atol=1e-14)


def test_lyapunov_residual_and_scipy_cross_check():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 13))
        A = stable_matrix(rng, n)
        C = rng.normal(size=(n, n))
        C = C + C.T
        X = solve_lyapunov(A, C)
        assert np.linalg.norm(A @ X + X @ A.T - C) <= 1e-9 * np.linalg.norm(C)
        np.testing.assert_allclose(X, scipy.linalg.solve_continuous_lyapunov(A, C),
                                   rtol=1e-8, atol=1e-10 * np.abs(X).max())


# --------------------------------------------------------- channel shapes

def test_channel_shape_zero_gramian_leaves_regularizer():
    Phi = stable_matrix(np.random.default_rng(2), 4)
    np.testing.assert_allclose(channel_shape(Phi, np.zeros((4, 4)), 0.7, 1e-3),
                               1e-3 * 0.49 * np.eye(4), atol=1e-15)


def test_channel_shape_zero_time():
    Phi = stable_matrix(np.random.default_rng(3), 4)
    N = np.outer([1.0, 0, 0, 0], [1.0, 0, 0, 0])
    assert np.max(np.abs(channel_shape(Phi, N, 0.0, 1e-3))) <= 1e-12


def test_channel_shape_scalar_closed_forms():
    # back-propagated frame: -2x = e^{2} - 1
    X = channel_shape(-np.eye(1), np.eye(1), 1.0, 0.0)
    assert abs(X[0, 0] - (np.e ** 2 - 1) / 2) <= 1e-12
    # forward frame: Gramian integral of e^{-2s} over [0, 1]
    W = propagated_channel_shape(-np.eye(1), np.eye(1), 1.0, 0.0)
    integral, _ = scipy.integrate.quad(lambda s: np.exp(-2 * s), 0.0, 1.0)
    assert abs(W[0, 0] - integral) <= 1e-12
    assert abs(W[0, 0] - 0.4323) <= 1e-4


def test_propagated_shape_equals_mapped_literal_shape():
    rng = np.random.default_rng(4)
    for _ in range(10):
        Phi = stable_matrix(rng, 3)
        d = rng.normal(size=3)
        N, t = np.outer(d, d), rng.uniform(0.1, 1.0)
        E = scipy.linalg.expm(t * Phi)
        lit = E @ channel_shape(Phi, N, t, 1e-3) @ E.T
        np.testing.assert_allclose(propagated_channel_shape(Phi, N, t, 1e-3), lit,
                                   rtol=1e-7, atol=1e-12)


def test_propagated_shape_is_gramian_integral():
    rng = np.random.default_rng(5)
    Phi = stable_matrix(rng, 3)
    d = rng.normal(size=3)
    N, t = np.outer(d, d), 0.8
    integrand = lambda s: (scipy.linalg.expm(s * Phi) @ N @ scipy.linalg.expm(s * Phi).T).ravel()
    ref, _ = scipy.integrate.quad_vec(integrand, 0.0, t, epsabs=1e-13)
    np.testing.assert_allclose(propagated_channel_shape(Phi, N, t, 0.0), ref.reshape(3, 3),
                               atol=1e-10)


def test_channel_shape_rejects_negative_time():
    with pytest.raises(InputError):
        channel_shape(-np.eye(2), np.eye(2), -1.0, 1e-3)


# ------------------------------------------------------ combine/propagate

def test_combine_channels_examples():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(3, 3))
    Q = A @ A.T + np.eye(3)
    np.testing.assert_allclose(combine_channels([Q]), Q, atol=1e-15)
    np.testing.assert_allclose(combine_channels([Q, Q]), 4 * Q, atol=1e-12)
    np.testing.assert_allclose(combine_channels([np.eye(2)] * 3), 9 * np.eye(2), atol=1e-12)
    np.testing.assert_array_equal(combine_channels([np.zeros((2, 2))] * 2), np.zeros((2, 2)))
    np.testing.assert_allclose(combine_channels([Q, np.zeros((3, 3))]), Q, atol=1e-15)
    with pytest.raises(InputError):
        combine_channels([])


def test_combine_channels_singular_summands():
    a, b = np.diag([1.0, 0.0]), np.diag([0.0, 4.0])
    S = combine_channels([a, b])
    # (1 + 2) * (a / 1 + b / 2)
    np.testing.assert_allclose(S, np.diag([3.0, 6.0]), atol=1e-14)


def test_propagate_examples():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(3, 3))
    Q0 = A @ A.T + np.eye(3)
    Z = np.zeros((3, 3))
    np.testing.assert_allclose(propagate(Q0, Z, stable_matrix(rng, 3), 0.0), Q0, atol=1e-14)
    for t in (0.5, 3.0, 10.0):
        np.testing.assert_allclose(propagate(Q0, Z, Z, t), Q0, atol=1e-14)
    np.testing.assert_allclose(propagate(Q0, Z, -np.eye(3), 1.0), np.exp(-2) * Q0, rtol=1e-10)


def test_propagate_with_disturbance_shape():
    Q0 = np.eye(2)
    np.testing.assert_allclose(propagate(Q0, 4 * np.eye(2), -np.eye(2), 1.0),
                               9 * np.exp(-2) * np.eye(2), rtol=1e-10)


def test_propagate_overflow_raises():
    with pytest.raises(NumericalError):
        propagate(np.eye(2), np.zeros((2, 2)), 1000 * np.eye(2), 10.0)


# ------------------------------------------------------------ sequences

def _frs(model, bound, Q0=None, dt=0.2, steps=50, **kw):
    Q0 = 1e-4 * np.eye(model.state_dim) if Q0 is None else Q0
    x = np.zeros(model.state_dim)
    u = np.zeros(model.control_dim)
    if model.tag == "fourwd":
        u = trim_control(model, x, np.array([5.0, 0.0, 0.0]), 10.0)
    return compute_frs_sequence(model, x, u, FrsConfig(Q0, bound, **kw), dt, steps)


MODELS = [double_integrator_model(2), double_integrator_model(3), quadrotor_model(), fourwd_model(0.2)]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.tag)
@pytest.mark.parametrize("bound", [0.0, 0.02, 0.15])
def test_shapes_spd_and_position_blocks(model, bound):
    frs = _frs(model, bound)
    assert len(frs.shapes) == 51
    np.testing.assert_array_equal(frs.shapes[0], frs.config.initial_shape)
    idx = list(model.position_indices)
    for Q, P in zip(frs.shapes, frs.position_shapes):
        assert is_spd(Q)
        np.testing.assert_array_equal(P, Q[np.ix_(idx, idx)])


@pytest.mark.parametrize("model", MODELS[:3], ids=lambda m: m.tag)
def test_zero_disturbance_is_pure_contraction(model):
    frs = _frs(model, 0.0)
    Q0 = frs.config.initial_shape
    for k in range(0, 51, 5):
        E = scipy.linalg.expm(k * 0.2 * frs.closed_loop)
        ref = E @ Q0 @ E.T
        np.testing.assert_allclose(frs.shapes[k], ref + (k > 0) * SHAPE_FLOOR * np.eye(len(Q0)),
                                   rtol=1e-9, atol=1e-14)


@pytest.mark.parametrize("model", MODELS[:3], ids=lambda m: m.tag)
def test_shapes_monotone_in_disturbance(model):
    prev = None
    for bound in (0.0, 0.02, 0.05, 0.10, 0.15):
        frs = _frs(model, bound)
        if prev is not None:
            for a, b in zip(prev.shapes, frs.shapes):
                assert np.linalg.eigvalsh(b - a)[0] >= -1e-9
        prev = frs


def test_literal_mode_matches_propagated_for_scalar_closed_loop():
    # with Phi a multiple of the identity the two combination orders coincide
    from redpg.dynamics import AgentModel

    M = -np.eye(2)
    model = AgentModel("toy", 2, 2, 2, lambda x, u, w: M @ x + u + w,
                       lambda x, u: (M, np.eye(2)), (0, 1), (), )
    Q0 = 0.01 * np.eye(2)
    lqr = dict(lqr_Q=np.eye(2) * 1e-12, lqr_R=np.eye(2) * 1e12)
    a = compute_frs_sequence(model, np.zeros(2), np.zeros(2), FrsConfig(Q0, 0.1, **lqr), 0.2, 10)
    b = compute_frs_sequence(model, np.zeros(2), np.zeros(2),
                             FrsConfig(Q0, 0.1, mode=LITERAL, **lqr), 0.2, 10)
    np.testing.assert_allclose(a.shapes, b.shapes, rtol=1e-6)


def test_frs_config_validation():
    with pytest.raises(InputError):
        FrsConfig(np.eye(2), -0.1)
    with pytest.raises(InputError):
        FrsConfig(np.eye(2), 0.1, eta=0.0)
    with pytest.raises(InputError):
        FrsConfig(-np.eye(2), 0.1)
    with pytest.raises(InputError):
        FrsConfig(np.eye(2), 0.1, mode="other")


# ----------------------------------------------------------- containment

@pytest.mark.parametrize("model", MODELS[:3], ids=lambda m: m.tag)
def test_containment_from_zero_error_without_disturbance(model):
    assert containment_check(_frs(model, 0.0), 200, 0, initial="zero") == 1.0


@pytest.mark.parametrize("model", MODELS[:3], ids=lambda m: m.tag)
def test_containment_from_boundary_without_disturbance(model):
    assert containment_check(_frs(model, 0.0), 200, 0, initial="boundary") == 1.0


def test_double_integrator_containment():
    m = double_integrator_model(2)
    cfg = FrsConfig(1e-4 * np.eye(4), 0.05)
    frs, ratio = calibrated_frs_sequence(m, np.zeros(4), np.zeros(2), cfg, 0.2, 50, 1000, 0)
    assert ratio >= 0.99
    assert frs.config.eta >= 1e-3


def test_containment_rejects_bad_samples():
    with pytest.raises(InputError):
        containment_check(_frs(double_integrator_model(2), 0.05), 0)


def test_calibration_stops_at_first_passing_eta():
    m = double_integrator_model(2)
    cfg = FrsConfig(1e-4 * np.eye(4), 0.05, eta=1e-3)
    frs, ratio = calibrated_frs_sequence(m, np.zeros(4), np.zeros(2), cfg, 0.2, 50, 500, 0)
    if frs.config.eta > cfg.eta:
        half = compute_frs_sequence(m, np.zeros(4), np.zeros(2),
                                    FrsConfig(cfg.initial_shape, 0.05, eta=frs.config.eta / 2), 0.2, 50)
        assert containment_check(half, 500, 0) < 0.99
    assert ratio >= 0.99

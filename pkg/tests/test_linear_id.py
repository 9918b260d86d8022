import numpy as np
import pytest

from alssnn.dataio import Dataset
from alssnn.errors import DataError, NumericalError
from alssnn.linear_id import (LinearSS, default_horizon, estimate_markov,
                              ho_kalman, linear_init)
from alssnn.models import simulate


def lin_data(lin, N, seed=0, dt=1.0):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(N, lin.n_inputs))
    traj = simulate(lin, u)
    return Dataset(u, traj.y, dt=dt)


def two_state():
    # stable, observable, controllable
    A = np.array([[0.6, 0.2], [-0.1, 0.5]])
    B = np.array([[1.0], [0.5]])
    C = np.array([[1.0, -1.0]])
    return LinearSS(A, B, C)


def test_linearss_validation():
    with pytest.raises(DataError):
        LinearSS(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros((1, 2)))
    with pytest.raises(DataError):
        LinearSS(np.eye(2), np.zeros((3, 1)), np.zeros((1, 2)))
    with pytest.raises(DataError):
        LinearSS(np.full((1, 1), np.nan), np.ones((1, 1)), np.ones((1, 1)))


def test_markov_analytic_scalar():
    lin = LinearSS([[0.5]], [[1.0]], [[1.0]])
    G = lin.markov(5)
    for i, Gi in enumerate(G):
        assert Gi.shape == (1, 1)
        assert abs(Gi[0, 0] - 0.5**i) < 1e-15


def test_estimate_markov_scalar_oracle():
    # G_i = C A^{i-1} B = 0.5^{i-1}; an impulse after the lag window makes
    # the normal equations decouple, so recovery is exact despite the
    # truncated IIR tail
    lin = LinearSS([[0.5]], [[1.0]], [[1.0]])
    u = np.zeros((40, 1))
    u[7, 0] = 1.0
    traj = simulate(lin, u)
    ds = Dataset(u, traj.y, dt=1.0)
    G = estimate_markov(ds, 4)
    for i, Gi in enumerate(G):
        assert abs(Gi[0, 0] - 0.5**i) < 1e-6


def test_estimate_markov_two_state_oracle():
    lin = two_state()
    ds = lin_data(lin, 2000, seed=2)
    # horizon long enough that truncation error is below tolerance
    G = estimate_markov(ds, 40)
    ref = lin.markov(40)
    worst = max(np.max(np.abs(g - r)) for g, r in zip(G, ref))
    assert worst < 1e-8


def test_estimate_markov_rank_deficient_error():
    t = np.arange(300.0)
    u = np.sin(0.3 * t)  # single sinusoid: lag space has rank 2
    ds = Dataset(u, np.sin(0.3 * t + 0.5), dt=1.0)
    with pytest.raises(NumericalError, match="rank deficient"):
        estimate_markov(ds, 8)


def test_estimate_markov_regularized_decays():
    t = np.arange(300.0)
    u = np.sin(0.3 * t)
    ds = Dataset(u, np.sin(0.3 * t + 0.5), dt=1.0)
    G = estimate_markov(ds, 12, on_deficient="regularize")
    assert len(G) == 12
    mags = np.array([np.linalg.norm(g) for g in G])
    # decay prior: the tail must not dominate
    assert mags[-1] < mags.max()
    assert np.all(np.isfinite(mags))


def test_estimate_markov_policy_validated():
    ds = lin_data(two_state(), 100)
    with pytest.raises(DataError):
        estimate_markov(ds, 4, on_deficient="ignore")


def test_estimate_markov_needs_enough_samples():
    ds = lin_data(two_state(), 20)
    with pytest.raises(DataError):
        estimate_markov(ds, 15)


def test_ho_kalman_scalar_realization():
    G = [np.array([[0.5**i]]) for i in range(8)]
    lin = ho_kalman(G, 1)
    back = lin.markov(8)
    for i, Gi in enumerate(back):
        assert abs(Gi[0, 0] - 0.5**i) < 1e-8


def test_ho_kalman_zero_markov_errors():
    G = [np.zeros((1, 1)) for _ in range(6)]
    with pytest.raises(NumericalError):
        ho_kalman(G, 1)


def test_ho_kalman_order_exceeds_rank():
    G = [np.array([[0.5**i]]) for i in range(8)]
    with pytest.raises(NumericalError, match="singular value"):
        ho_kalman(G, 3)


def test_ho_kalman_two_state_transfer_match():
    lin = two_state()
    G = [np.atleast_2d(g) for g in lin.markov(20)]
    real = ho_kalman(G, 2)
    ref = lin.markov(20)
    got = real.markov(20)
    worst = max(np.max(np.abs(a - b)) for a, b in zip(ref, got))
    assert worst < 1e-6


def test_ho_kalman_similarity_invariance():
    # raw matrices differ across similar realizations; Markov params agree
    lin = two_state()
    rng = np.random.default_rng(5)
    T = rng.normal(size=(2, 2)) + 3 * np.eye(2)
    sim = LinearSS(np.linalg.solve(T, lin.A @ T), np.linalg.solve(T, lin.B), lin.C @ T)
    G_a = [np.atleast_2d(g) for g in lin.markov(16)]
    G_b = [np.atleast_2d(g) for g in sim.markov(16)]
    ra = ho_kalman(G_a, 2)
    rb = ho_kalman(G_b, 2)
    worst = max(np.max(np.abs(a - b)) for a, b in zip(ra.markov(16), rb.markov(16)))
    assert worst < 1e-10


def test_default_horizon():
    assert default_horizon(1) == 20
    assert default_horizon(3) == 20
    assert default_horizon(10) == 50


def test_linear_init_recovery_held_out():
    lin = two_state()
    ds = lin_data(lin, 3000, seed=7)
    fit = linear_init(ds, 2, horizon=60)
    held = lin_data(lin, 800, seed=8)
    traj = simulate(fit, held.u)
    rel = np.linalg.norm(held.y - traj.y) / np.linalg.norm(held.y)
    assert rel < 1e-6


def test_linear_init_stabilizes_unstable_realization():
    unstable = LinearSS([[1.05]], [[1.0]], [[1.0]])
    rng = np.random.default_rng(3)
    u = rng.normal(size=(60, 1))
    traj = simulate(unstable, u)
    ds = Dataset(u, traj.y, dt=1.0)
    fit = linear_init(ds, 1, horizon=10)
    assert fit.spectral_radius() < 1.0


def test_linear_init_order_validated():
    ds = lin_data(two_state(), 200)
    with pytest.raises(DataError):
        linear_init(ds, 0)


def blind_data(N=4000, seed=0):
    # the output responds only to the square of a zero-mean input, so the
    # linear u -> y channel is empty and the FIR route learns nothing
    rng = np.random.default_rng(seed)
    k = np.arange(N)
    u = np.sin(0.3 * k) + 0.05 * rng.normal(size=N)
    x = 0.0
    y = np.empty(N)
    for i in range(N):
        y[i] = x
        x = 0.8 * x + u[i] ** 2
    return Dataset(u.reshape(-1, 1), y.reshape(-1, 1))


def test_linear_init_blind_record_uses_output_modes():
    from alssnn.linear_id import _OUTPUT_MODE_CAP

    ds = blind_data()
    lin = linear_init(ds, 2)
    assert lin.spectral_radius() <= _OUTPUT_MODE_CAP + 1e-9
    # u^2 of a sinusoid at 0.3 rad/sample oscillates at 0.6 rad/sample; the
    # realization built from output autocovariances must carry that mode
    angles = np.abs(np.angle(np.linalg.eigvals(lin.A)))
    assert np.min(np.abs(angles - 0.6)) < 0.05


def test_linear_init_blind_trigger_and_swap():
    # the FIR-route model (stabilized exactly as linear_init builds it) fails
    # the blindness check, and the returned realization is a different model
    from alssnn.linear_id import _is_output_blind

    ds = blind_data()
    markov = estimate_markov(ds, default_horizon(2), on_deficient="regularize")
    fir = ho_kalman(markov, 2)
    rho = fir.spectral_radius()
    if rho >= 1.0:
        fir = LinearSS(fir.A * (0.995 / rho), fir.B, fir.C)
    assert _is_output_blind(fir, ds)
    lin = linear_init(ds, 2)
    assert not np.allclose(lin.A, fir.A)


def test_linear_init_well_excited_record_keeps_fir_route():
    ds = lin_data(two_state(), 600, seed=4)
    lin = linear_init(ds, 2)
    markov = estimate_markov(ds, default_horizon(2), on_deficient="regularize")
    fir = ho_kalman(markov, 2)
    assert np.allclose(lin.A, fir.A) and np.allclose(lin.B, fir.B)
    assert np.allclose(lin.C, fir.C)


def test_input_matrix_refit_recovers_truth():
    from alssnn.linear_id import _fit_input_matrix

    lin = two_state()
    ds = lin_data(lin, 400, seed=7)
    B = _fit_input_matrix(lin.A, lin.C, ds)
    assert np.allclose(B, lin.B, atol=1e-8)


def test_autocovariance_oracle():
    from alssnn.linear_id import _autocovariances

    rng = np.random.default_rng(11)
    y = rng.normal(size=(50, 2))
    yc = y - y.mean(axis=0)
    lams = _autocovariances(y, 3)
    for tau in (1, 2, 3):
        ref = sum(np.outer(yc[k + tau], yc[k]) for k in range(50 - tau)) / 50
        assert np.allclose(lams[tau - 1], ref, atol=1e-12)

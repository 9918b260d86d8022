import numpy as np
import pytest

from alssnn.control import ClosedLoopRecord
from alssnn.errors import DataError, InfeasibleError, NumericalError
from alssnn.stability import (LMI_TOL, IssCertificate, SearchConfig,
                              certificate_to_json_dict, check_convergence,
                              invariant_radius, lmi_block, solve_certificate,
                              verify)


def stable_a(n=3, seed=0, rho=0.7):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    return A * (rho / np.max(np.abs(np.linalg.eigvals(A))))


def make_record(x, omega):
    x = np.asarray(x, dtype=float)
    omega = np.asarray(omega, dtype=float)
    N = omega.shape[0]
    return ClosedLoopRecord(
        x=x, y=np.zeros((N, 1)), v=np.zeros((N, 1)), omega=omega,
        lin_norm=np.ones(N), omega_ratio_mean=0.0, omega_ratio_max=0.0,
        n_excluded=0,
    )


def test_lmi_block_formula_and_symmetry():
    A = stable_a(2, seed=1)
    P = np.array([[2.0, 0.3], [0.3, 1.5]])
    phi, psi = 0.2, 5.0
    M = lmi_block(A, P, phi, psi)
    expected = np.block([
        [A.T @ P @ A + (phi - 1.0) * P, A.T @ P],
        [P @ A, P - psi * np.eye(2)],
    ])
    assert np.allclose(M, expected, atol=1e-14)
    assert np.max(np.abs(M - M.T)) < 1e-12
    with pytest.raises(DataError, match="symmetric"):
        lmi_block(A, np.array([[1.0, 0.5], [0.0, 1.0]]), phi, psi)


def test_certificate_radius_identity():
    cert = solve_certificate(stable_a(2, seed=2), epsilon=0.3)
    assert cert.radius == pytest.approx(cert.psi * 0.3**2 / cert.phi, rel=1e-15)
    assert invariant_radius(cert) == cert.radius


def test_certificate_verifies_and_is_deterministic():
    A = stable_a(3, seed=3)
    c1 = solve_certificate(A, epsilon=0.5)
    ok, diag = verify(c1, A)
    assert ok
    assert diag["p_min_eig"] > 0
    assert diag["lmi_max_eig"] < -LMI_TOL
    c2 = solve_certificate(A, epsilon=0.5)
    assert np.array_equal(c1.P, c2.P)
    assert c1.phi == c2.phi and c1.psi == c2.psi and c1.radius == c2.radius


def test_scalar_phi_below_analytic_boundary():
    # for x+ = a x the top-left block is p (a^2 + phi - 1): any feasible phi
    # must satisfy phi < 1 - a^2
    for a in (0.1, 0.3, 0.5, 0.7, 0.9):
        cert = solve_certificate(np.array([[a]]), epsilon=1.0)
        assert cert.phi < 1.0 - a * a
        # and psi must dominate P so the bottom-right block is negative
        assert cert.psi > cert.P[0, 0]


def test_decrement_quadratic_form_sampled():
    # z' M z < 0 is exactly V(Ax + w) - V(x) + phi V(x) - psi ||w||^2 < 0
    A = stable_a(3, seed=4, rho=0.8)
    cert = solve_certificate(A, epsilon=1.0)
    P, phi, psi = cert.P, cert.phi, cert.psi
    rng = np.random.default_rng(5)
    for _ in range(500):
        x = rng.normal(size=3) * rng.choice([0.01, 1.0, 100.0])
        w = rng.normal(size=3) * rng.choice([0.01, 1.0, 100.0])
        xn = A @ x + w
        lhs = xn @ P @ xn - x @ P @ x + phi * (x @ P @ x) - psi * (w @ w)
        z2 = x @ x + w @ w
        assert lhs <= -LMI_TOL * z2 + 1e-9 * z2


def test_zero_epsilon_gives_zero_radius():
    cert = solve_certificate(stable_a(2, seed=6), epsilon=0.0)
    assert cert.radius == 0.0
    assert cert.phi > 0 and cert.psi > 0


def test_epsilon_scale_covariance():
    A = stable_a(3, seed=7)
    base = solve_certificate(A, epsilon=0.4)
    for c in (0.5, 2.0, 10.0):
        scaled = solve_certificate(A, epsilon=0.4 * c)
        # the search never looks at epsilon, so the triple is unchanged and
        # the radius scales exactly quadratically
        assert scaled.phi == base.phi and scaled.psi == base.psi
        assert scaled.radius == pytest.approx(c**2 * base.radius, rel=1e-12)


def test_unstable_a_raises():
    with pytest.raises(NumericalError, match="not Schur stable"):
        solve_certificate(np.array([[1.01]]), epsilon=0.1)
    with pytest.raises(NumericalError, match="not Schur stable"):
        solve_certificate(np.array([[0.0, 1.1], [0.0, 0.0]]) + np.eye(2), 0.1)


def test_infeasible_grid_raises_with_diagnostics():
    # phi pinned above the scalar boundary 1 - 0.25: nothing can be feasible
    cfg = SearchConfig(n_phi=1, phi_min=0.99, phi_max=0.99)
    with pytest.raises(InfeasibleError) as exc_info:
        solve_certificate(np.array([[0.5]]), epsilon=0.1, search_config=cfg)
    diag = exc_info.value.diagnostics
    assert "lmi_max_eig" in diag and "spectral_radius" in diag


def test_psi_refinement_shrinks_radius():
    A = stable_a(2, seed=8)
    coarse = solve_certificate(A, 1.0, SearchConfig(refine_psi=False))
    fine = solve_certificate(A, 1.0, SearchConfig(refine_psi=True))
    assert fine.radius <= coarse.radius
    ok, _ = verify(fine, A)
    assert ok


def test_certificate_validation():
    P = np.eye(2)
    with pytest.raises(DataError, match="phi"):
        IssCertificate(P=P, phi=0.0, psi=1.0, epsilon=0.1, lmi_max_eig=-1.0)
    with pytest.raises(DataError, match="psi"):
        IssCertificate(P=P, phi=0.5, psi=0.0, epsilon=0.1, lmi_max_eig=-1.0)
    with pytest.raises(DataError, match="epsilon"):
        IssCertificate(P=P, phi=0.5, psi=1.0, epsilon=-0.1, lmi_max_eig=-1.0)
    with pytest.raises(DataError, match="symmetric"):
        IssCertificate(P=np.array([[1.0, 1.0], [0.0, 1.0]]), phi=0.5, psi=1.0,
                       epsilon=0.1, lmi_max_eig=-1.0)


def test_check_convergence_scalar_analytic():
    a, eps, w = 0.5, 0.1, 0.05
    cert = solve_certificate(np.array([[a]]), epsilon=eps)
    p = cert.P[0, 0]
    # x+ = a x + w from x0 = 3: monotone decay toward w/(1-a) = 0.1
    N = 60
    xs = np.empty(N + 1)
    xs[0] = 3.0
    for k in range(N):
        xs[k + 1] = a * xs[k] + w
    rec = make_record(xs.reshape(-1, 1), np.full((N, 1), w))
    out = check_convergence(cert, rec)
    assert out["radius"] == pytest.approx(cert.radius)
    assert out["v_first"] == pytest.approx(p * 9.0)
    assert out["v_final"] == pytest.approx(p * xs[-1] ** 2)
    # the fixed point lies inside the ball (psi > p guarantees it), so the
    # trajectory enters and never leaves
    expected_entry = next(
        k for k in range(N + 1) if p * xs[k] ** 2 <= cert.radius * (1 + 1e-12)
    )
    assert out["first_entry"] == expected_entry
    assert out["fraction_inside_after_entry"] == 1.0
    assert out["decrement_holds"]
    assert out["n_decrement_violations"] == 0
    assert out["epsilon_sound"]
    assert out["max_omega_norm"] == pytest.approx(w)


def test_check_convergence_flags_epsilon_violation():
    cert = solve_certificate(np.array([[0.5]]), epsilon=0.01)
    xs = np.zeros((4, 1))
    omega = np.array([[0.0], [0.5], [0.0]])
    out = check_convergence(cert, make_record(xs, omega))
    assert not out["epsilon_sound"]
    assert out["n_epsilon_violations"] == 1


def test_check_convergence_dim_mismatch():
    cert = solve_certificate(stable_a(2, seed=9), epsilon=0.1)
    with pytest.raises(DataError, match="certificate expects"):
        check_convergence(cert, make_record(np.zeros((5, 3)), np.zeros((4, 3))))


def test_certificate_json_dict():
    cert = solve_certificate(stable_a(2, seed=10), epsilon=0.25)
    d = certificate_to_json_dict(cert)
    assert set(d) == {"P", "phi", "psi", "epsilon", "radius", "lmi_max_eig", "search"}
    assert d["radius"] == cert.radius
    assert np.array_equal(np.array(d["P"]), cert.P)

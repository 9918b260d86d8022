"""Quadratic ISS certificates for the closed loop x+ = Ax + Bv + omega.

A certificate is (P, phi, psi) with P positive definite and

    [[A'PA + (phi-1)P,  A'P],
     [PA,               P - psi*I]]  negative definite,

which implies V(x) = x'Px satisfies dV < -phi*V + psi*||omega||^2 for every
(x, omega). With ||omega|| <= epsilon the state then enters and stays near
the ball {x : x'Px <= psi*epsilon^2/phi}.

Feasible triples come from a deterministic search: P solves the discrete
Lyapunov equation A'PA - P = -Q for a small family of Q's, (phi, psi) range
over log grids, every candidate is verified by eigendecomposition, and the
winning psi is tightened by bisection. The LMI is tiny (2n x 2n), so this
replaces a semidefinite-programming dependency without losing rigor: nothing
is reported that verify() does not independently confirm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .control import ClosedLoopRecord
from .errors import DataError, InfeasibleError, NumericalError

__all__ = [
    "IssCertificate",
    "SearchConfig",
    "lmi_block",
    "verify",
    "solve_certificate",
    "invariant_radius",
    "check_convergence",
    "certificate_to_json_dict",
]

LMI_TOL = 1e-9
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class IssCertificate:
    """Verified (P, phi, psi) triple with the disturbance bound it was built for.

    radius is derived in __post_init__, never passed in, so the identity
    radius = psi * epsilon^2 / phi holds by construction.
    """

    P: np.ndarray
    phi: float
    psi: float
    epsilon: float
    lmi_max_eig: float
    search: dict = field(default_factory=dict, compare=False)
    radius: float = field(init=False)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise DataError(f"P must be square, got shape {P.shape}")
        if np.max(np.abs(P - P.T)) > SYMMETRY_TOL:
            raise DataError("P must be symmetric")
        object.__setattr__(self, "P", P)
        if not (0 < self.phi <= 1):
            raise DataError(f"phi must lie in (0, 1], got {self.phi}")
        if not (self.psi > 0):
            raise DataError(f"psi must be positive, got {self.psi}")
        if self.epsilon < 0:
            raise DataError(f"epsilon must be non-negative, got {self.epsilon}")
        object.__setattr__(self, "radius", self.psi * self.epsilon**2 / self.phi)

    @property
    def n(self) -> int:
        return self.P.shape[0]


def lmi_block(A: np.ndarray, P: np.ndarray, phi: float, psi: float) -> np.ndarray:
    """The 2n x 2n block whose negative definiteness certifies the decrement."""
    A = np.asarray(A, dtype=float)
    P = np.asarray(P, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or P.shape != (n, n):
        raise DataError(f"A and P must both be {n} x {n}, got {A.shape}, {P.shape}")
    if np.max(np.abs(P - P.T)) > SYMMETRY_TOL:
        raise DataError("P must be symmetric")
    AtP = A.T @ P
    top = np.hstack([AtP @ A + (phi - 1.0) * P, AtP])
    bot = np.hstack([P @ A, P - psi * np.eye(n)])
    return np.vstack([top, bot])


def _eig_extremes(A, P, phi, psi) -> tuple[float, float]:
    """(min eig of P, max eig of the LMI block), both by symmetric solve."""
    p_min = float(np.linalg.eigvalsh(0.5 * (P + P.T))[0])
    m = lmi_block(A, P, phi, psi)
    lmi_max = float(np.linalg.eigvalsh(m)[-1])
    return p_min, lmi_max


def verify(cert: IssCertificate, A: np.ndarray) -> tuple[bool, dict]:
    """True iff P > 0 and the block < -tol*I; diagnostics carry both extremes."""
    A = np.asarray(A, dtype=float)
    if A.shape != (cert.n, cert.n):
        raise DataError(f"A has shape {A.shape}, certificate expects ({cert.n}, {cert.n})")
    p_min, lmi_max = _eig_extremes(A, cert.P, cert.phi, cert.psi)
    ok = p_min > 0 and lmi_max < -LMI_TOL
    return ok, {"p_min_eig": p_min, "lmi_max_eig": lmi_max, "tol": LMI_TOL}


@dataclass(frozen=True)
class SearchConfig:
    """Grid and refinement settings for the certificate search."""

    n_phi: int = 40
    phi_min: float = 1e-5
    phi_max: float = 0.9999
    # psi must dominate lambda_max(P)^2-scale terms, and P ~ 1/(1 - rho^2),
    # so near-unit spectral radii need psi far above O(1); the bisection pass
    # tightens whatever slack the wide grid leaves.
    n_psi: int = 60
    psi_min: float = 1e-3
    psi_max: float = 1e9
    q_entry_scale: float = 10.0
    refine_psi: bool = True
    refine_iters: int = 60

    def phi_grid(self) -> np.ndarray:
        return np.logspace(np.log10(self.phi_min), np.log10(self.phi_max), self.n_phi)

    def psi_grid(self) -> np.ndarray:
        return np.logspace(np.log10(self.psi_min), np.log10(self.psi_max), self.n_psi)


def _q_family(n: int, scale: float) -> list[np.ndarray]:
    out = [np.eye(n)]
    for i in range(n):
        q = np.eye(n)
        q[i, i] = scale
        out.append(q)
    return out


def solve_certificate(A: np.ndarray, epsilon: float,
                      search_config: SearchConfig | None = None) -> IssCertificate:
    """Smallest-radius feasible certificate over the deterministic search family.

    Candidates are ordered by (radius, phi, psi) so the result is independent
    of evaluation order. After the grid pass, psi is tightened by bisection at
    the winning (P, phi): feasibility is monotone in psi, so the bisection
    stays sound and every reported triple is re-verified.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DataError(f"A must be square, got shape {A.shape}")
    if epsilon < 0:
        raise DataError(f"epsilon must be non-negative, got {epsilon}")
    cfg = search_config or SearchConfig()
    n = A.shape[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    if rho >= 1.0:
        raise NumericalError(
            f"open-loop linear part not Schur stable (spectral radius {rho:.6g}); "
            "no quadratic ISS certificate of this form exists"
        )

    candidates = []
    for qi, Q in enumerate(_q_family(n, cfg.q_entry_scale)):
        try:
            P = solve_discrete_lyapunov(A.T, Q)
        except Exception as exc:  # pragma: no cover - scipy failure is exotic
            raise NumericalError(f"discrete Lyapunov solve failed: {exc}") from exc
        P = 0.5 * (P + P.T)
        candidates.append((qi, P))

    best = None           # (radius, phi, psi, qi, P, lmi_max)
    least_violating = None  # (lmi_max, diagnostics)
    for qi, P in candidates:
        for phi in cfg.phi_grid():
            for psi in cfg.psi_grid():
                p_min, lmi_max = _eig_extremes(A, P, phi, psi)
                feasible = p_min > 0 and lmi_max < -LMI_TOL
                if not feasible:
                    if least_violating is None or lmi_max < least_violating[0]:
                        least_violating = (lmi_max, {
                            "lmi_max_eig": lmi_max, "p_min_eig": p_min,
                            "phi": float(phi), "psi": float(psi), "q_index": qi,
                            "spectral_radius": rho,
                        })
                    continue
                radius = psi * epsilon**2 / phi
                key = (radius, phi, psi)
                if best is None or key < (best[0], best[1], best[2]):
                    best = (radius, float(phi), float(psi), qi, P, lmi_max)

    if best is None:
        diag = least_violating[1] if least_violating else {"spectral_radius": rho}
        raise InfeasibleError(
            "no feasible (P, phi, psi) in the search grid; closest candidate "
            f"had largest LMI eigenvalue {diag.get('lmi_max_eig', float('nan')):.3e}",
            diagnostics=diag,
        )

    _, phi, psi, qi, P, lmi_max = best
    refined = False
    if cfg.refine_psi:
        # Feasibility is monotone increasing in psi at fixed (P, phi): shrink
        # psi toward the boundary to shrink the reported radius.
        lo, hi = 0.0, psi
        for _ in range(cfg.refine_iters):
            mid = 0.5 * (lo + hi)
            if mid <= 0:
                break
            p_min, me = _eig_extremes(A, P, phi, mid)
            if p_min > 0 and me < -LMI_TOL:
                hi, lmi_max = mid, me
                refined = True
            else:
                lo = mid
        psi = hi

    cert = IssCertificate(
        P=P, phi=phi, psi=psi, epsilon=float(epsilon), lmi_max_eig=lmi_max,
        search={
            "q_index": qi,
            "n_phi": cfg.n_phi, "phi_min": cfg.phi_min, "phi_max": cfg.phi_max,
            "n_psi": cfg.n_psi, "psi_min": cfg.psi_min, "psi_max": cfg.psi_max,
            "q_entry_scale": cfg.q_entry_scale,
            "psi_refined": refined,
            "spectral_radius": rho,
        },
    )
    ok, diag = verify(cert, A)
    if not ok:  # pragma: no cover - the search only emits verified triples
        raise InfeasibleError("search produced an unverifiable certificate", diag)
    return cert


def invariant_radius(cert: IssCertificate) -> float:
    """The level psi*epsilon^2/phi of the invariant ball {x'Px <= radius}."""
    return cert.psi * cert.epsilon**2 / cert.phi


def check_convergence(cert: IssCertificate, record: ClosedLoopRecord) -> dict:
    """Empirical check of the certified decrement along a closed-loop record.

    The certificate describes the regulation loop x+ = A x + omega, so the
    record should be simulated with v = 0; under a nonzero reference the
    decrement inequality does not apply and violations say nothing. Reports
    V(x(k)) per step, ball membership, whether the per-step decrement
    dV < -phi*V + psi*||omega||^2 holds (up to eigensolver-level slack), the
    first entry time into the ball and the fraction of steps inside after
    entry. Steps where ||omega|| exceeds epsilon are flagged: the certificate
    promises nothing there.
    """
    X = record.x
    if X.ndim != 2 or X.shape[1] != cert.n:
        raise DataError(
            f"record states have shape {X.shape}, certificate expects (*, {cert.n})"
        )
    V = np.einsum("ki,ij,kj->k", X, cert.P, X)
    radius = cert.radius
    inside = V <= radius + 1e-12 * max(1.0, radius)
    omega_sq = np.sum(record.omega**2, axis=1)
    dV = V[1:] - V[:-1]
    bound = -cert.phi * V[:-1] + cert.psi * omega_sq
    slack = 1e-9 * (1.0 + V[:-1] + omega_sq)
    decrement_ok = dV <= bound + slack
    eps_violations = np.sqrt(omega_sq) > cert.epsilon + 1e-12

    entry = int(np.argmax(inside)) if np.any(inside) else None
    if entry is not None:
        post = inside[entry:]
        frac = float(np.mean(post))
        n_inside = int(np.sum(post))
    else:
        frac = 0.0
        n_inside = 0
    return {
        "radius": radius,
        "n_steps": int(record.n_steps),
        "v_first": float(V[0]) if V.size else None,
        "v_final": float(V[-1]) if V.size else None,
        "v_max": float(np.max(V)) if V.size else None,
        "first_entry": entry,
        "n_inside_after_entry": n_inside,
        "fraction_inside_after_entry": frac,
        "n_decrement_violations": int(np.sum(~decrement_ok)),
        "decrement_holds": bool(np.all(decrement_ok)),
        "n_epsilon_violations": int(np.sum(eps_violations)),
        "epsilon_sound": bool(not np.any(eps_violations)),
        "max_omega_norm": record.max_omega_norm,
    }


def certificate_to_json_dict(cert: IssCertificate) -> dict:
    return {
        "P": cert.P.tolist(),
        "phi": cert.phi,
        "psi": cert.psi,
        "epsilon": cert.epsilon,
        "radius": cert.radius,
        "lmi_max_eig": cert.lmi_max_eig,
        "search": cert.search,
    }
